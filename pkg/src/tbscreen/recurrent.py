"""LSTM cell, full-sequence LSTM with backpropagation through time, and the
bidirectional wrapper.

Gate blocks inside the 4H axis are ordered input, forget, cell, output
(``GATE_ORDER``). No peepholes; the initial hidden and cell states are zero.
"""

from dataclasses import dataclass

import numpy as np

from .tensor import DTYPE, ShapeError, concat_last

GATE_ORDER = "ifgo"


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


@dataclass
class LstmParams:
    W: np.ndarray  # (D_in, 4H)
    U: np.ndarray  # (H, 4H)
    b: np.ndarray  # (4H,)

    def __post_init__(self):
        h = self.U.shape[0]
        if self.U.shape != (h, 4 * h) or self.W.ndim != 2 or self.W.shape[1] != 4 * h or self.b.shape != (4 * h,):
            raise ShapeError(f"inconsistent LSTM shapes W {self.W.shape} U {self.U.shape} b {self.b.shape}")

    @property
    def hidden(self) -> int:
        return self.U.shape[0]

    @property
    def input_dim(self) -> int:
        return self.W.shape[0]

    @property
    def n_params(self) -> int:
        return self.W.size + self.U.size + self.b.size

    @classmethod
    def zeros(cls, d_in: int, hidden: int) -> "LstmParams":
        return cls(np.zeros((d_in, 4 * hidden), DTYPE), np.zeros((hidden, 4 * hidden), DTYPE), np.zeros(4 * hidden, DTYPE))

    @classmethod
    def init(cls, rng: np.random.Generator, d_in: int, hidden: int, forget_bias: float = 1.0) -> "LstmParams":
        """Uniform weights in [-1/sqrt(H), 1/sqrt(H)], zero biases, forget bias offset."""
        r = 1.0 / np.sqrt(hidden)
        W = rng.uniform(-r, r, (d_in, 4 * hidden))
        U = rng.uniform(-r, r, (hidden, 4 * hidden))
        b = np.zeros(4 * hidden, DTYPE)
        b[hidden:2 * hidden] = forget_bias
        return cls(W, U, b)


@dataclass
class BiLstmParams:
    forward: LstmParams
    backward: LstmParams

    def __post_init__(self):
        f, b = self.forward, self.backward
        if f.input_dim != b.input_dim or f.hidden != b.hidden:
            raise ShapeError("both directions must share D_in and H")

    @property
    def n_params(self) -> int:
        return self.forward.n_params + self.backward.n_params


# -- single step ------------------------------------------------------------

def _gates(z: np.ndarray, hidden: int):
    i = sigmoid(z[..., :hidden])
    f = sigmoid(z[..., hidden:2 * hidden])
    g = np.tanh(z[..., 2 * hidden:3 * hidden])
    o = sigmoid(z[..., 3 * hidden:])
    return i, f, g, o


def lstm_cell(p: LstmParams, x: np.ndarray, h: np.ndarray, c: np.ndarray):
    """One step; returns ``(h_next, c_next)``."""
    if x.shape != (p.input_dim,) or h.shape != (p.hidden,) or c.shape != (p.hidden,):
        raise ShapeError(f"cell shapes x {x.shape} h {h.shape} c {c.shape} vs params {p.input_dim}->{p.hidden}")
    i, f, g, o = _gates(x @ p.W + h @ p.U + p.b, p.hidden)
    c_next = f * c + i * g
    return o * np.tanh(c_next), c_next


def _step_backward(p, gates, c_prev, c_next, dh, dc):
    """Gradient w.r.t. the pre-activation z and the previous cell state."""
    i, f, g, o = gates
    tc = np.tanh(c_next)
    dc = dc + dh * o * (1.0 - tc * tc)
    dz = np.concatenate([
        dc * g * i * (1.0 - i),
        dc * c_prev * f * (1.0 - f),
        dc * i * (1.0 - g * g),
        dh * tc * o * (1.0 - o),
    ])
    return dz, dc * f


def lstm_cell_backward(p: LstmParams, x, h, c, dh_next, dc_next):
    """Gradients of a single step given upstream ``dh_next`` and ``dc_next``.

    Returns ``(dx, dh, dc, dW, dU, db)``.
    """
    gates = _gates(x @ p.W + h @ p.U + p.b, p.hidden)
    i, f, g, _ = gates
    c_next = f * c + i * g
    dz, dc = _step_backward(p, gates, c, c_next, dh_next, dc_next)
    return p.W @ dz, p.U @ dz, dc, np.outer(x, dz), np.outer(h, dz), dz


# -- sequences --------------------------------------------------------------

@dataclass
class SequenceCache:
    xs: np.ndarray
    hs: np.ndarray  # (T+1, H), row 0 is the zero initial state
    cs: np.ndarray  # (T+1, H)
    gates: tuple  # four (T, H) arrays


def lstm_sequence(p: LstmParams, xs: np.ndarray, return_cache: bool = False):
    """Run over ``xs`` (T, D_in) from zero state; returns all hidden states (T, H)."""
    if xs.ndim != 2 or xs.shape[1] != p.input_dim or xs.shape[0] < 1:
        raise ShapeError(f"sequence must be (T>=1, {p.input_dim}), got {xs.shape}")
    t_len, hid = xs.shape[0], p.hidden
    zx = xs @ p.W + p.b
    hs = np.zeros((t_len + 1, hid), DTYPE)
    cs = np.zeros((t_len + 1, hid), DTYPE)
    gi, gf, gg, go = (np.empty((t_len, hid), DTYPE) for _ in range(4))
    for t in range(t_len):
        i, f, g, o = _gates(zx[t] + hs[t] @ p.U, hid)
        cs[t + 1] = f * cs[t] + i * g
        hs[t + 1] = o * np.tanh(cs[t + 1])
        gi[t], gf[t], gg[t], go[t] = i, f, g, o
    out = hs[1:].copy()
    if return_cache:
        return out, SequenceCache(xs, hs, cs, (gi, gf, gg, go))
    return out


def lstm_sequence_backward(p: LstmParams, cache: SequenceCache, grad_hs: np.ndarray):
    """Backpropagation through time. Returns ``(grad_xs, LstmParams of gradients)``."""
    t_len, hid = grad_hs.shape
    gi, gf, gg, go = cache.gates
    dzs = np.empty((t_len, 4 * hid), DTYPE)
    dh_carry = np.zeros(hid, DTYPE)
    dc = np.zeros(hid, DTYPE)
    for t in reversed(range(t_len)):
        gates = (gi[t], gf[t], gg[t], go[t])
        dz, dc = _step_backward(p, gates, cache.cs[t], cache.cs[t + 1], grad_hs[t] + dh_carry, dc)
        dzs[t] = dz
        dh_carry = p.U @ dz
    grads = LstmParams(cache.xs.T @ dzs, cache.hs[:-1].T @ dzs, dzs.sum(axis=0))
    return dzs @ p.W.T, grads


def bilstm(p: BiLstmParams, xs: np.ndarray, return_cache: bool = False):
    """Forward-direction states concatenated with time-realigned backward-direction states."""
    fwd = lstm_sequence(p.forward, xs, return_cache)
    bwd = lstm_sequence(p.backward, xs[::-1].copy(), return_cache)
    if return_cache:
        (hf, cf), (hb, cb) = fwd, bwd
        return concat_last(hf, hb[::-1]), (cf, cb)
    return concat_last(fwd, bwd[::-1])


def bilstm_backward(p: BiLstmParams, cache, grad_out: np.ndarray):
    """Returns ``(grad_xs, BiLstmParams of gradients)``."""
    cf, cb = cache
    hid = p.forward.hidden
    dxf, gf = lstm_sequence_backward(p.forward, cf, grad_out[:, :hid])
    dxb, gb = lstm_sequence_backward(p.backward, cb, grad_out[::-1, hid:].copy())
    return dxf + dxb[::-1], BiLstmParams(gf, gb)
