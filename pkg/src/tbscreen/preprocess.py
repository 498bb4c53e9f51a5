"""Guided-filter denoising and conversion of a radiograph into model input.

Images are 2-D float64 arrays with intensities in [0, 1]; masks are 2-D
arrays of 0/1.
"""

from dataclasses import dataclass

import numpy as np

from .tensor import DTYPE, ShapeError

WINDOW = 3


class DegenerateMaskError(ValueError):
    """The lung mask has no foreground pixels."""


@dataclass(frozen=True)
class GuidedFilterConfig:
    epsilon: float = 1e-4
    window: int = WINDOW

    def __post_init__(self):
        if self.window != WINDOW:
            raise ValueError("the guided filter window is fixed at 3x3")
        if self.epsilon < 0:
            raise ValueError("epsilon must be non-negative")


def _neighbourhood(a: np.ndarray) -> np.ndarray:
    """Stack of the 3x3 neighbours of every pixel, NaN where outside the image."""
    h, w = a.shape
    p = np.pad(a, 1, constant_values=np.nan)
    return np.stack([p[di:di + h, dj:dj + w] for di in range(3) for dj in range(3)])


def _window_mean(a: np.ndarray, count: np.ndarray) -> np.ndarray:
    # referenced to the centre value so that constant windows average exactly
    return a + np.nansum(_neighbourhood(a) - a, axis=0) / count


def denoise(img: np.ndarray, cfg: GuidedFilterConfig = GuidedFilterConfig()) -> np.ndarray:
    """Self-guided filter over 3x3 windows, clipped at the borders.

    Each window k fits ``D = a_k * I + b_k`` with ``a_k = var_k / (var_k + eps)``
    and ``b_k = (1 - a_k) * mean_k``; a pixel's output averages the fits of all
    windows that contain it.
    """
    img = np.asarray(img, dtype=DTYPE)
    if img.ndim != 2:
        raise ShapeError(f"expected a 2-D image, got {img.shape}")
    if img.shape[0] < cfg.window or img.shape[1] < cfg.window:
        raise ValueError(f"image {img.shape} is smaller than the {cfg.window}x{cfg.window} window")
    count = np.sum(~np.isnan(_neighbourhood(np.zeros_like(img))), axis=0)
    mean = _window_mean(img, count)
    var = np.nansum((_neighbourhood(img) - mean) ** 2, axis=0) / count
    denom = var + cfg.epsilon
    a = np.divide(var, denom, out=np.zeros_like(var), where=denom > 0)
    b = (1.0 - a) * mean
    out = _window_mean(a, count) * img + _window_mean(b, count)
    return np.clip(out, 0.0, 1.0)


# -- resampling -------------------------------------------------------------

def _linear_weights(n_in: int, n_out: int):
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    i0 = np.floor(src).astype(np.int64)
    i1 = np.minimum(i0 + 1, n_in - 1)
    return i0, i1, src - i0


def resize_bilinear(img: np.ndarray, shape) -> np.ndarray:
    """Bilinear resampling with half-pixel centres and edge clamping."""
    out_h, out_w = shape
    r0, r1, fr = _linear_weights(img.shape[0], out_h)
    c0, c1, fc = _linear_weights(img.shape[1], out_w)
    rows = img[r0] * (1.0 - fr)[:, None] + img[r1] * fr[:, None]
    return rows[:, c0] * (1.0 - fc) + rows[:, c1] * fc


def resize_nearest(img: np.ndarray, shape) -> np.ndarray:
    out_h, out_w = shape
    r = np.minimum(((np.arange(out_h) + 0.5) * img.shape[0] / out_h).astype(np.int64), img.shape[0] - 1)
    c = np.minimum(((np.arange(out_w) + 0.5) * img.shape[1] / out_w).astype(np.int64), img.shape[1] - 1)
    return img[np.ix_(r, c)]


def bounding_box(mask: np.ndarray):
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    if rows.size == 0:
        raise DegenerateMaskError("mask has no foreground pixels")
    return rows[0], rows[-1] + 1, cols[0], cols[-1] + 1


def minmax_normalize(img: np.ndarray) -> np.ndarray:
    lo, hi = img.min(), img.max()
    if hi <= lo:
        return np.zeros_like(img)
    return (img - lo) / (hi - lo)


def to_model_input(img: np.ndarray, mask=None, size: int = 224) -> np.ndarray:
    """Mask, crop, normalize, resize to ``size`` and replicate to 3 channels."""
    img = np.asarray(img, dtype=DTYPE)
    if mask is not None:
        mask = np.asarray(mask)
        if mask.shape != img.shape:
            raise ShapeError(f"mask {mask.shape} and image {img.shape} differ")
        r0, r1, c0, c1 = bounding_box(mask)
        img = np.where(mask > 0, img, 0.0)[r0:r1, c0:c1]
    img = minmax_normalize(img)
    if img.shape != (size, size):
        img = resize_bilinear(img, (size, size))
    return np.repeat(img[:, :, None], 3, axis=2)
