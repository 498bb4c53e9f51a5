"""Forward/backward passes for the convolutional and classification layers.

Every layer works on a single sample in channels-last layout. Backward
functions return exact analytic gradients; :func:`gradcheck` compares them
against central differences.
"""

from dataclasses import dataclass
from typing import Callable, Dict, Optional

import numpy as np

from .tensor import DTYPE, ShapeError


@dataclass
class ConvLayer:
    """3x3 convolution, stride 1, one pixel of zero padding on every side."""

    weights: np.ndarray  # (3, 3, C_in, C_out)
    bias: np.ndarray  # (C_out,)

    def __post_init__(self):
        if self.weights.ndim != 4 or self.weights.shape[:2] != (3, 3):
            raise ShapeError(f"conv kernel must be (3, 3, C_in, C_out), got {self.weights.shape}")
        if self.bias.shape != (self.weights.shape[3],):
            raise ShapeError(f"bias {self.bias.shape} does not match {self.weights.shape[3]} filters")

    @property
    def in_channels(self) -> int:
        return self.weights.shape[2]

    @property
    def out_channels(self) -> int:
        return self.weights.shape[3]

    @property
    def n_params(self) -> int:
        return self.weights.size + self.bias.size


@dataclass
class DenseLayer:
    weights: np.ndarray  # (D_in, D_out)
    bias: np.ndarray  # (D_out,)

    def __post_init__(self):
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[1],):
            raise ShapeError(f"dense shapes disagree: W {self.weights.shape}, b {self.bias.shape}")

    @property
    def n_params(self) -> int:
        return self.weights.size + self.bias.size


# -- convolution ------------------------------------------------------------

def _im2col(x: np.ndarray) -> np.ndarray:
    """(H, W, C) -> (H, W, 9*C) patches ordered (di, dj, c)."""
    h, w, _ = x.shape
    xp = np.pad(x, ((1, 1), (1, 1), (0, 0)))
    return np.concatenate(
        [xp[di:di + h, dj:dj + w, :] for di in range(3) for dj in range(3)], axis=2
    )


def _check_conv_input(layer: ConvLayer, x: np.ndarray):
    if x.ndim != 3:
        raise ShapeError(f"conv input must be (H, W, C), got {x.shape}")
    if x.shape[2] != layer.in_channels:
        raise ShapeError(f"conv expects {layer.in_channels} channels, got {x.shape[2]}")


def conv2d_forward(layer: ConvLayer, x: np.ndarray) -> np.ndarray:
    _check_conv_input(layer, x)
    h, w, _ = x.shape
    cols = _im2col(x).reshape(h * w, -1)
    out = cols @ layer.weights.reshape(-1, layer.out_channels)
    out += layer.bias
    return out.reshape(h, w, layer.out_channels)


def conv2d_backward(layer: ConvLayer, x: np.ndarray, grad_out: np.ndarray, need_input_grad: bool = True):
    """Return ``(grad_x, grad_w, grad_b)``; ``grad_x`` is None when not requested."""
    _check_conv_input(layer, x)
    h, w, c_in = x.shape
    if grad_out.shape != (h, w, layer.out_channels):
        raise ShapeError(f"grad_out {grad_out.shape} != {(h, w, layer.out_channels)}")
    g = grad_out.reshape(h * w, -1)
    cols = _im2col(x).reshape(h * w, -1)
    grad_w = (cols.T @ g).reshape(layer.weights.shape)
    grad_b = g.sum(axis=0)
    del cols
    grad_x = None
    if need_input_grad:
        gcols = (g @ layer.weights.reshape(-1, layer.out_channels).T).reshape(h, w, 9, c_in)
        gp = np.zeros((h + 2, w + 2, c_in), dtype=grad_out.dtype)
        for k in range(9):
            di, dj = divmod(k, 3)
            gp[di:di + h, dj:dj + w, :] += gcols[:, :, k, :]
        grad_x = gp[1:-1, 1:-1, :].copy()
    return grad_x, grad_w, grad_b


# -- pooling ----------------------------------------------------------------

@dataclass
class PoolRecord:
    input_shape: tuple
    argmax: np.ndarray  # (H/2, W/2, C) index in 0..3, row-major within the window


def maxpool_forward(x: np.ndarray):
    """2x2 max pooling with stride 2; returns ``(out, record)``."""
    if x.ndim != 3:
        raise ShapeError(f"pool input must be (H, W, C), got {x.shape}")
    h, w, c = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"pooling needs even extents, got {h}x{w}")
    win = x.reshape(h // 2, 2, w // 2, 2, c).transpose(0, 2, 4, 1, 3).reshape(h // 2, w // 2, c, 4)
    idx = win.argmax(axis=3)  # first maximum wins ties
    out = np.take_along_axis(win, idx[..., None], axis=3)[..., 0]
    return out, PoolRecord(x.shape, idx)


def maxpool_backward(record: PoolRecord, grad_out: np.ndarray) -> np.ndarray:
    h, w, c = record.input_shape
    if grad_out.shape != record.argmax.shape:
        raise ShapeError(f"grad_out {grad_out.shape} does not match pool record {record.argmax.shape}")
    win = np.zeros((h // 2, w // 2, c, 4), dtype=grad_out.dtype)
    np.put_along_axis(win, record.argmax[..., None], grad_out[..., None], axis=3)
    return win.reshape(h // 2, w // 2, c, 2, 2).transpose(0, 3, 1, 4, 2).reshape(h, w, c)


# -- elementwise / dense / head ---------------------------------------------

def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_backward(x: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    # derivative at exactly 0 is taken as 0
    return np.where(x > 0, grad_out, 0.0)


def dense_forward(layer: DenseLayer, x: np.ndarray) -> np.ndarray:
    if x.shape != (layer.weights.shape[0],):
        raise ShapeError(f"dense expects length {layer.weights.shape[0]}, got {x.shape}")
    return x @ layer.weights + layer.bias


def dense_backward(layer: DenseLayer, x: np.ndarray, grad_out: np.ndarray):
    """Return ``(grad_x, grad_w, grad_b)``."""
    if x.shape != (layer.weights.shape[0],) or grad_out.shape != (layer.weights.shape[1],):
        raise ShapeError(f"dense backward shapes: x {x.shape}, grad {grad_out.shape}")
    return layer.weights @ grad_out, np.outer(x, grad_out), grad_out.copy()


def softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - np.max(z))
    return e / e.sum()


def cross_entropy(probs: np.ndarray, label: int):
    """Return ``(loss, d loss / d logits)`` for softmax outputs ``probs``."""
    k = probs.shape[0]
    if not 0 <= int(label) < k or int(label) != label:
        raise ValueError(f"label {label} outside [0, {k})")
    loss = -float(np.log(probs[label] + 1e-12))
    grad = probs.copy()
    grad[label] -= 1.0
    return loss, grad


# -- gradient checking ------------------------------------------------------

def relative_error(analytic, numeric) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)


@dataclass
class GradcheckResult:
    max_error: float
    checked: int
    # probes skipped because the perturbation changed the piecewise-linear branch
    skipped: int


def gradcheck_report(
    loss_fn: Callable[[], float],
    params: Dict[str, np.ndarray],
    analytic: Dict[str, np.ndarray],
    epsilon: float = 1e-6,
    max_checks: Optional[int] = None,
    seed: int = 0,
    branch_fn: Optional[Callable[[], bytes]] = None,
) -> GradcheckResult:
    """Compare ``analytic`` against central differences of ``loss_fn``.

    ``params`` are perturbed in place (and restored), so ``loss_fn`` must read
    them by reference. With ``max_checks`` set, at most that many entries per
    array are probed, chosen by a seeded generator. ``branch_fn`` identifies
    the active ReLU/max-pool branch; a probe whose two evaluations fall on a
    different branch than the unperturbed point straddles a kink and is
    skipped.
    """
    rng = np.random.default_rng(seed)
    base_branch = branch_fn() if branch_fn is not None else None
    worst, checked, skipped = 0.0, 0, 0
    for name, p in params.items():
        if p.dtype != np.float64:
            raise TypeError(f"gradcheck requires float64, {name} is {p.dtype}")
        flat = p.reshape(-1)
        grad = analytic[name].reshape(-1)
        idx = np.arange(flat.size)
        if max_checks is not None and flat.size > max_checks:
            idx = np.sort(rng.choice(flat.size, size=max_checks, replace=False))
        for i in idx:
            old = flat[i]
            flat[i] = old + epsilon
            up = loss_fn()
            kink = branch_fn is not None and branch_fn() != base_branch
            flat[i] = old - epsilon
            down = loss_fn()
            kink = kink or (branch_fn is not None and branch_fn() != base_branch)
            flat[i] = old
            if kink:
                skipped += 1
                continue
            numeric = (up - down) / (2 * epsilon)
            worst = max(worst, relative_error(grad[i], numeric))
            checked += 1
    return GradcheckResult(worst, checked, skipped)


def gradcheck(loss_fn, params, analytic, epsilon: float = 1e-6, max_checks=None, seed: int = 0, branch_fn=None) -> float:
    """Max relative error ``|a - n| / max(|a|, |n|, 1e-8)`` over the probed entries."""
    return gradcheck_report(loss_fn, params, analytic, epsilon, max_checks, seed, branch_fn).max_error


def zeros_like_layer(layer):
    return type(layer)(np.zeros_like(layer.weights), np.zeros_like(layer.bias))


def he_conv(rng: np.random.Generator, c_in: int, c_out: int) -> ConvLayer:
    std = np.sqrt(2.0 / (9 * c_in))
    return ConvLayer(rng.normal(0.0, std, (3, 3, c_in, c_out)).astype(DTYPE), np.zeros(c_out, DTYPE))


def he_dense(rng: np.random.Generator, d_in: int, d_out: int) -> DenseLayer:
    std = np.sqrt(2.0 / d_in)
    return DenseLayer(rng.normal(0.0, std, (d_in, d_out)).astype(DTYPE), np.zeros(d_out, DTYPE))
