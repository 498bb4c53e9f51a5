"""Exact binary labeling of grid energies by s-t minimum cut (Dinic's algorithm)."""

from dataclasses import dataclass

import numba
import numpy as np


@dataclass
class CutEnergy:
    """``E(L) = sum_p D_p(L_p) + lam * sum_{p~q} w_pq [L_p != L_q]`` on a 4-connected grid.

    ``unary[..., 0]`` is the cost of labeling a pixel foreground,
    ``unary[..., 1]`` the cost of background. ``horizontal[i, j]`` weights the
    edge (i, j)-(i, j+1) and ``vertical[i, j]`` the edge (i, j)-(i+1, j).
    """

    unary: np.ndarray  # (H, W, 2)
    horizontal: np.ndarray  # (H, W-1)
    vertical: np.ndarray  # (H-1, W)
    lam: float = 1.0

    def __post_init__(self):
        h, w = self.unary.shape[:2]
        if self.unary.shape != (h, w, 2):
            raise ValueError(f"unary must be (H, W, 2), got {self.unary.shape}")
        if self.horizontal.shape != (h, w - 1) or self.vertical.shape != (h - 1, w):
            raise ValueError("pairwise weight shapes do not match the grid")
        for arr in (self.unary, self.horizontal, self.vertical):
            if not np.all(np.isfinite(arr)) or np.any(arr < 0):
                raise ValueError("energy terms must be finite and non-negative")
        if not (np.isfinite(self.lam) and self.lam >= 0):
            raise ValueError("lambda must be finite and non-negative")

    @property
    def shape(self):
        return self.unary.shape[:2]


def energy(e: CutEnergy, labels: np.ndarray) -> float:
    labels = np.asarray(labels).astype(bool)
    data = np.where(labels, e.unary[..., 0], e.unary[..., 1]).sum()
    cut_h = (labels[:, 1:] != labels[:, :-1]) * e.horizontal
    cut_v = (labels[1:, :] != labels[:-1, :]) * e.vertical
    return float(data + e.lam * (cut_h.sum() + cut_v.sum()))


def boundary_length(labels: np.ndarray) -> int:
    labels = np.asarray(labels).astype(bool)
    return int((labels[:, 1:] != labels[:, :-1]).sum() + (labels[1:, :] != labels[:-1, :]).sum())


@numba.njit(cache=True)
def _bfs_levels(n, s, t, start, head, cap, level, queue):
    level[:] = -1
    level[s] = 0
    queue[0] = s
    lo, hi = 0, 1
    while lo < hi:
        u = queue[lo]
        lo += 1
        for e in range(start[u], start[u + 1]):
            v = head[e]
            if level[v] < 0 and cap[e] > 0:
                level[v] = level[u] + 1
                queue[hi] = v
                hi += 1
    return level[t] >= 0


@numba.njit(cache=True)
def _dinic(n, s, t, start, head, rev, cap):
    level = np.empty(n, np.int64)
    queue = np.empty(n, np.int64)
    it = np.empty(n, np.int64)
    path = np.empty(n, np.int64)
    total = 0.0
    while _bfs_levels(n, s, t, start, head, cap, level, queue):
        it[:] = start[:-1]
        depth = 0
        u = s
        while True:
            if u == t:
                f = cap[path[0]]
                for k in range(1, depth):
                    if cap[path[k]] < f:
                        f = cap[path[k]]
                total += f
                cut_at = -1
                for k in range(depth):
                    e = path[k]
                    cap[e] -= f
                    cap[rev[e]] += f
                    if cut_at < 0 and cap[e] <= 0:
                        cut_at = k
                depth = cut_at
                u = head[path[depth - 1]] if depth > 0 else s
                continue
            i = it[u]
            end = start[u + 1]
            while i < end:
                if cap[i] > 0 and level[head[i]] == level[u] + 1:
                    break
                i += 1
            it[u] = i
            if i < end:
                path[depth] = i
                depth += 1
                u = head[i]
                continue
            # dead end: prune the node from this phase
            level[u] = -1
            if depth == 0:
                break
            depth -= 1
            u = head[path[depth - 1]] if depth > 0 else s
            it[u] += 1
    return total


@numba.njit(cache=True)
def _source_side(n, s, start, head, cap):
    seen = np.zeros(n, np.bool_)
    queue = np.empty(n, np.int64)
    seen[s] = True
    queue[0] = s
    lo, hi = 0, 1
    while lo < hi:
        u = queue[lo]
        lo += 1
        for e in range(start[u], start[u + 1]):
            v = head[e]
            if not seen[v] and cap[e] > 0:
                seen[v] = True
                queue[hi] = v
                hi += 1
    return seen


class FlowGraph:
    """Residual network in compressed sparse row form.

    Arcs are given as parallel arrays; every arc gets a paired reverse arc
    carrying ``rev_cap``.
    """

    def __init__(self, n_nodes: int, tails, heads, caps, rev_caps=None):
        tails = np.asarray(tails, np.int64)
        heads = np.asarray(heads, np.int64)
        caps = np.asarray(caps, np.float64)
        rev_caps = np.zeros_like(caps) if rev_caps is None else np.asarray(rev_caps, np.float64)
        m = tails.size
        all_tail = np.empty(2 * m, np.int64)
        all_head = np.empty(2 * m, np.int64)
        all_cap = np.empty(2 * m, np.float64)
        all_tail[0::2], all_tail[1::2] = tails, heads
        all_head[0::2], all_head[1::2] = heads, tails
        all_cap[0::2], all_cap[1::2] = caps, rev_caps
        order = np.argsort(all_tail, kind="stable")
        position = np.empty(2 * m, np.int64)
        position[order] = np.arange(2 * m)
        self.n = n_nodes
        self.head = all_head[order]
        self.cap = all_cap[order]
        self.rev = position[order ^ 1]
        self.start = np.zeros(n_nodes + 1, np.int64)
        np.cumsum(np.bincount(all_tail, minlength=n_nodes), out=self.start[1:])

    def max_flow(self, s: int, t: int) -> float:
        return _dinic(self.n, s, t, self.start, self.head, self.rev, self.cap)

    def source_side(self, s: int) -> np.ndarray:
        return _source_side(self.n, s, self.start, self.head, self.cap)


def min_cut(e: CutEnergy):
    """Globally optimal labeling (1 = foreground) and its energy.

    Pixels on the source side of the minimum cut are foreground; the source
    side is the minimal one, so pixels indifferent between labels fall to
    background.
    """
    h, w = e.shape
    n = h * w
    s, t = n, n + 1
    fg = e.unary[..., 0].ravel()
    bg = e.unary[..., 1].ravel()
    base = np.minimum(fg, bg)
    ids = np.arange(n).reshape(h, w)
    # cutting s->p puts p in the background, cutting p->t puts it in the foreground
    src_cap = bg - base
    sink_cap = fg - base
    tails = [np.full(n, s), ids.ravel()]
    heads = [ids.ravel(), np.full(n, t)]
    caps = [src_cap, sink_cap]
    rev_caps = [np.zeros(n), np.zeros(n)]
    if e.lam > 0:
        for a, b, wgt in ((ids[:, :-1], ids[:, 1:], e.horizontal), (ids[:-1, :], ids[1:, :], e.vertical)):
            tails.append(a.ravel())
            heads.append(b.ravel())
            caps.append(e.lam * wgt.ravel())
            rev_caps.append(e.lam * wgt.ravel())
    caps_all = np.concatenate(caps)
    keep = (caps_all > 0) | (np.concatenate(rev_caps) > 0)
    g = FlowGraph(
        n + 2,
        np.concatenate(tails)[keep],
        np.concatenate(heads)[keep],
        caps_all[keep],
        np.concatenate(rev_caps)[keep],
    )
    flow = g.max_flow(s, t)
    labels = g.source_side(s)[:n].astype(np.uint8).reshape(h, w)
    return labels, float(flow + base.sum())
