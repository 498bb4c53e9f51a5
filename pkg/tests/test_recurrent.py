import numpy as np
import pytest

from tbscreen import layers as L
from tbscreen.recurrent import (GATE_ORDER, BiLstmParams, LstmParams, bilstm, bilstm_backward, lstm_cell,
                                lstm_cell_backward, lstm_sequence, lstm_sequence_backward)
from tbscreen.tensor import ShapeError


def oracle_cell(p, x, h, c):
    """Textbook LSTM step written gate by gate with the logistic function."""
    H = p.hidden
    sig = lambda z: 1.0 / (1.0 + np.exp(-z))  # noqa: E731
    blocks = {name: slice(k * H, (k + 1) * H) for k, name in enumerate(GATE_ORDER)}
    pre = {name: x @ p.W[:, s] + h @ p.U[:, s] + p.b[s] for name, s in blocks.items()}
    i, f, o = sig(pre["i"]), sig(pre["f"]), sig(pre["o"])
    g = np.tanh(pre["g"])
    c2 = f * c + i * g
    return o * np.tanh(c2), c2


def test_cell_matches_oracle(rng):
    p = LstmParams.init(rng, 4, 3)
    p.b[:] = rng.standard_normal(12)
    x, h, c = rng.standard_normal(4), rng.standard_normal(3), rng.standard_normal(3)
    for got, want in zip(lstm_cell(p, x, h, c), oracle_cell(p, x, h, c)):
        np.testing.assert_allclose(got, want, atol=1e-14)


def test_zero_params_give_zero_state():
    p = LstmParams.zeros(3, 2)
    h, c = lstm_cell(p, np.ones(3), np.zeros(2), np.zeros(2))
    # i = f = o = 0.5, g = 0
    np.testing.assert_array_equal(h, 0)
    np.testing.assert_array_equal(c, 0)


def test_sequence_equals_iterated_cell(rng):
    p = LstmParams.init(rng, 3, 4)
    xs = rng.standard_normal((6, 3))
    h = c = np.zeros(4)
    want = []
    for x in xs:
        h, c = oracle_cell(p, x, h, c)
        want.append(h)
    np.testing.assert_allclose(lstm_sequence(p, xs), np.array(want), atol=1e-14)


def test_bilstm_layout(rng):
    bp = BiLstmParams(LstmParams.init(rng, 3, 2), LstmParams.init(rng, 3, 2))
    xs = rng.standard_normal((5, 3))
    out = bilstm(bp, xs)
    assert out.shape == (5, 4)
    np.testing.assert_allclose(out[:, :2], lstm_sequence(bp.forward, xs))
    np.testing.assert_allclose(out[:, 2:], lstm_sequence(bp.backward, xs[::-1])[::-1])


def test_table_shapes_and_counts(rng):
    bp = BiLstmParams(LstmParams.init(rng, 512, 256), LstmParams.init(rng, 512, 256))
    assert bp.n_params == 1_574_912
    assert bilstm(bp, rng.standard_normal((49, 512))).shape == (49, 512)
    assert 2 * LstmParams.zeros(512, 128).n_params == 656_384


def test_forget_bias_init(rng):
    p = LstmParams.init(rng, 3, 4)
    np.testing.assert_array_equal(p.b[4:8], 1.0)
    np.testing.assert_array_equal(np.delete(p.b, range(4, 8)), 0.0)
    assert np.abs(p.W).max() <= 0.5 and np.abs(p.U).max() <= 0.5


def test_shape_validation(rng):
    with pytest.raises(ShapeError):
        LstmParams(np.zeros((3, 8)), np.zeros((2, 7)), np.zeros(8))
    with pytest.raises(ShapeError):
        lstm_sequence(LstmParams.zeros(3, 2), np.zeros((4, 5)))


def test_cell_backward_gradcheck(rng):
    p = LstmParams.init(rng, 3, 2)
    x, h, c = rng.standard_normal(3), rng.standard_normal(2), rng.standard_normal(2)
    rh, rc = rng.standard_normal(2), rng.standard_normal(2)
    dx, dh, dc, dW, dU, db = lstm_cell_backward(p, x, h, c, rh, rc)

    def f():
        h2, c2 = lstm_cell(p, x, h, c)
        return float(h2 @ rh + c2 @ rc)

    err = L.gradcheck(f, {"x": x, "h": h, "c": c, "W": p.W, "U": p.U, "b": p.b},
                      {"x": dx, "h": dh, "c": dc, "W": dW, "U": dU, "b": db})
    assert err < 1e-6


@pytest.mark.parametrize("t_len", [1, 2, 7])
def test_bptt_gradcheck(rng, t_len):
    p = LstmParams.init(rng, 3, 4)
    xs = rng.standard_normal((t_len, 3))
    r = rng.standard_normal((t_len, 4))
    _, cache = lstm_sequence(p, xs, return_cache=True)
    gx, g = lstm_sequence_backward(p, cache, r)
    err = L.gradcheck(lambda: float((lstm_sequence(p, xs) * r).sum()),
                      {"xs": xs, "W": p.W, "U": p.U, "b": p.b}, {"xs": gx, "W": g.W, "U": g.U, "b": g.b})
    assert err < 1e-5


def test_bilstm_backward_gradcheck(rng):
    bp = BiLstmParams(LstmParams.init(rng, 2, 3), LstmParams.init(rng, 2, 3))
    xs = rng.standard_normal((4, 2))
    r = rng.standard_normal((4, 6))
    _, cache = bilstm(bp, xs, return_cache=True)
    gx, g = bilstm_backward(bp, cache, r)
    params, grads = {"xs": xs}, {"xs": gx}
    for tag, lp, gp in (("f", bp.forward, g.forward), ("b", bp.backward, g.backward)):
        for part in "WUb":
            params[tag + part], grads[tag + part] = getattr(lp, part), getattr(gp, part)
    assert L.gradcheck(lambda: float((bilstm(bp, xs) * r).sum()), params, grads) < 1e-5
