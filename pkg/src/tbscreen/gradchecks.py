"""Finite-difference checks for every layer family, on small random instances."""

from typing import Dict

import numpy as np

from . import layers as L
from . import model as M
from .recurrent import (BiLstmParams, LstmParams, bilstm, bilstm_backward, lstm_cell, lstm_cell_backward,
                        lstm_sequence, lstm_sequence_backward)

TOLERANCE = 1e-4
STRICT_FAMILIES = {"dense": 1e-5, "softmax+cross-entropy": 1e-5}
# End-to-end gradients reach 1e-8, where small steps drown in round-off; probes
# that cross a ReLU or max-pool kink are skipped instead.
MODEL_EPSILON = 1e-4


def _away_from_zero(rng, shape, margin=1e-3):
    x = rng.standard_normal(shape)
    while np.any(np.abs(x) < margin):
        bad = np.abs(x) < margin
        x[bad] = rng.standard_normal(bad.sum())
    return x


def check_conv(rng, eps=1e-6, shape=(6, 6, 2), c_out=3):
    layer = L.ConvLayer(rng.standard_normal((3, 3, shape[2], c_out)), rng.standard_normal(c_out))
    x = rng.standard_normal(shape)
    r = rng.standard_normal(shape[:2] + (c_out,))
    gx, gw, gb = L.conv2d_backward(layer, x, r)
    params = {"x": x, "w": layer.weights, "b": layer.bias}
    return L.gradcheck(lambda: float((L.conv2d_forward(layer, x) * r).sum()), params,
                       {"x": gx, "w": gw, "b": gb}, eps)


def check_pool(rng, eps=1e-6):
    # distinct values so no window sits on a tie
    x = rng.permutation(32).reshape(4, 4, 2) * 0.1 + rng.uniform(0, 0.01, (4, 4, 2))
    r = rng.standard_normal((2, 2, 2))
    _, rec = L.maxpool_forward(x)
    gx = L.maxpool_backward(rec, r)
    return L.gradcheck(lambda: float((L.maxpool_forward(x)[0] * r).sum()), {"x": x}, {"x": gx}, eps)


def check_relu(rng, eps=1e-6):
    x = _away_from_zero(rng, (5, 4))
    r = rng.standard_normal(x.shape)
    return L.gradcheck(lambda: float((L.relu(x) * r).sum()), {"x": x}, {"x": L.relu_backward(x, r)}, eps)


def check_dense(rng, eps=1e-6, d_in=5, d_out=3):
    layer = L.DenseLayer(rng.standard_normal((d_in, d_out)), rng.standard_normal(d_out))
    x = rng.standard_normal(d_in)
    r = rng.standard_normal(d_out)
    gx, gw, gb = L.dense_backward(layer, x, r)
    return L.gradcheck(lambda: float(L.dense_forward(layer, x) @ r), {"x": x, "w": layer.weights, "b": layer.bias},
                       {"x": gx, "w": gw, "b": gb}, eps)


def check_softmax_ce(rng, eps=1e-6, k=3):
    z = rng.standard_normal(k)
    label = int(rng.integers(k))
    _, grad = L.cross_entropy(L.softmax(z), label)
    return L.gradcheck(lambda: L.cross_entropy(L.softmax(z), label)[0], {"z": z}, {"z": grad}, eps)


def _random_lstm(rng, d_in, hidden):
    return LstmParams(rng.standard_normal((d_in, 4 * hidden)) * 0.5, rng.standard_normal((hidden, 4 * hidden)) * 0.5,
                      rng.standard_normal(4 * hidden) * 0.5)


def check_lstm_cell(rng, eps=1e-6, d_in=3, hidden=2):
    p = _random_lstm(rng, d_in, hidden)
    x, h, c = rng.standard_normal(d_in), rng.standard_normal(hidden), rng.standard_normal(hidden)
    rh, rc = rng.standard_normal(hidden), rng.standard_normal(hidden)

    def f():
        h2, c2 = lstm_cell(p, x, h, c)
        return float(h2 @ rh + c2 @ rc)

    dx, dh, dc, dW, dU, db = lstm_cell_backward(p, x, h, c, rh, rc)
    return L.gradcheck(f, {"x": x, "h": h, "c": c, "W": p.W, "U": p.U, "b": p.b},
                       {"x": dx, "h": dh, "c": dc, "W": dW, "U": dU, "b": db}, eps)


def check_bptt(rng, eps=1e-6, t_len=5, d_in=3, hidden=4):
    p = _random_lstm(rng, d_in, hidden)
    xs = rng.standard_normal((t_len, d_in))
    r = rng.standard_normal((t_len, hidden))
    _, cache = lstm_sequence(p, xs, return_cache=True)
    dxs, g = lstm_sequence_backward(p, cache, r)
    seq_err = L.gradcheck(lambda: float((lstm_sequence(p, xs) * r).sum()), {"xs": xs, "W": p.W, "U": p.U, "b": p.b},
                          {"xs": dxs, "W": g.W, "U": g.U, "b": g.b}, eps)

    bp = BiLstmParams(_random_lstm(rng, d_in, hidden), _random_lstm(rng, d_in, hidden))
    rb = rng.standard_normal((t_len, 2 * hidden))
    _, bcache = bilstm(bp, xs, return_cache=True)
    bdx, bg = bilstm_backward(bp, bcache, rb)
    params = {"xs": xs}
    grads = {"xs": bdx}
    for tag, lp, gp in (("f", bp.forward, bg.forward), ("b", bp.backward, bg.backward)):
        for part in "WUb":
            params[tag + part] = getattr(lp, part)
            grads[tag + part] = getattr(gp, part)
    bi_err = L.gradcheck(lambda: float((bilstm(bp, xs) * rb).sum()), params, grads, eps)
    return max(seq_err, bi_err)


def check_model(rng, eps=MODEL_EPSILON, arch=None, max_checks=8, report=False):
    arch = arch or M.shrunken()
    m = M.build_model(int(rng.integers(2 ** 31)), arch)
    x = rng.random(arch.input_shape)
    label = int(rng.integers(2))
    _, _, grads = M.loss_and_grads(m, x, label, input_grad=True)
    params = dict(m.params)
    params["input"] = x
    result = L.gradcheck_report(
        lambda: L.cross_entropy(M.forward(m, x)[0], label)[0], params, grads, eps,
        max_checks=max_checks, seed=int(rng.integers(2 ** 31)), branch_fn=lambda: M.branch_signature(m, x),
    )
    return result if report else result.max_error


FAMILIES = {
    "conv": check_conv,
    "pool": check_pool,
    "relu": check_relu,
    "dense": check_dense,
    "softmax+cross-entropy": check_softmax_ce,
    "lstm-cell": check_lstm_cell,
    "bptt-sequence": check_bptt,
    "model": check_model,
}


def run_all(seed: int = 0, eps: float = 1e-6) -> Dict[str, float]:
    """Max relative error per layer family."""
    out = {}
    for i, (name, fn) in enumerate(FAMILIES.items()):
        step = max(eps, MODEL_EPSILON) if name == "model" else eps
        out[name] = fn(np.random.default_rng([seed, i]), step)
    return out


def tolerance(family: str) -> float:
    return STRICT_FAMILIES.get(family, TOLERANCE)
