"""Atlas-based lung segmentation.

Three stages: rank the atlas by similarity to the input, register the best
references onto it and average their masks into a lung prior, then label
pixels with an exact graph cut whose unaries come from the prior and whose
pairwise weights follow image contrast.

Registration is a similarity transform (per-axis scale plus translation)
fitted by maximizing normalized cross-correlation. It does not attempt
dense non-rigid alignment.
"""

from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np
from scipy import ndimage

from .maxflow import CutEnergy, min_cut
from .preprocess import resize_bilinear, resize_nearest
from .tensor import DTYPE, ShapeError

N_BINS = 64
PRIOR_DELTA = 1e-6


class RegistrationError(RuntimeError):
    pass


@dataclass
class AtlasEntry:
    image: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        if self.image.shape != self.mask.shape:
            raise ShapeError(f"atlas image {self.image.shape} and mask {self.mask.shape} differ")
        if not np.isin(self.mask, (0, 1)).all():
            raise ValueError("atlas mask values must be 0 or 1")

    def resized(self, shape) -> "AtlasEntry":
        if self.image.shape == tuple(shape):
            return self
        return AtlasEntry(resize_bilinear(self.image, shape), resize_nearest(self.mask, shape))


# -- similarity -------------------------------------------------------------

def histogram64(img: np.ndarray) -> np.ndarray:
    v = np.asarray(img, dtype=DTYPE).ravel()
    if v.size == 0:
        raise ValueError("empty image")
    bins = np.minimum(np.floor(v * N_BINS).astype(np.int64), N_BINS - 1)
    bins = np.maximum(bins, 0)
    return np.bincount(bins, minlength=N_BINS) / v.size


def bhattacharyya(p: np.ndarray, q: np.ndarray) -> float:
    p = np.asarray(p, dtype=DTYPE)
    q = np.asarray(q, dtype=DTYPE)
    if p.shape != q.shape:
        raise ValueError(f"length mismatch {p.shape} vs {q.shape}")
    for v in (p, q):
        if abs(v.sum() - 1.0) > 1e-9 or np.any(v < 0):
            raise ValueError("inputs must be probability vectors")
    return float(min(1.0, np.sqrt(p * q).sum()))


def projection_profiles(img: np.ndarray):
    """Row and column intensity sums, each normalized to sum 1."""
    img = np.asarray(img, dtype=DTYPE)
    total = img.sum()
    if img.size == 0 or total <= 0:
        raise ValueError("projection profiles need a non-zero image")
    return img.sum(axis=1) / total, img.sum(axis=0) / total


def _pearson(a: np.ndarray, b: np.ndarray) -> float:
    da, db = a - a.mean(), b - b.mean()
    na, nb = np.sqrt((da * da).sum()), np.sqrt((db * db).sum())
    if na == 0 or nb == 0:
        # undefined correlation: identical flat profiles agree, anything else is uninformative
        return 1.0 if np.allclose(a, b, rtol=0, atol=1e-15) else 0.0
    return float(np.clip((da * db).sum() / (na * nb), -1.0, 1.0))


def similarity(a: np.ndarray, b: np.ndarray) -> float:
    """Weighted blend of histogram overlap and projection-profile correlation, in [0, 1]."""
    hist = bhattacharyya(histogram64(a), histogram64(b))
    ra, ca = projection_profiles(a)
    rb, cb = projection_profiles(b)
    rows = (_pearson(ra, rb) + 1.0) / 2.0
    cols = (_pearson(ca, cb) + 1.0) / 2.0
    return 0.5 * hist + 0.25 * rows + 0.25 * cols


def rank_references(image: np.ndarray, atlas: Sequence[AtlasEntry], k: int) -> List[Tuple[int, float, AtlasEntry]]:
    """Top-``k`` atlas entries as ``(atlas index, score, entry resized to image)``."""
    if len(atlas) == 0:
        raise ValueError("atlas is empty")
    scored = []
    for idx, entry in enumerate(atlas):
        resized = entry.resized(image.shape)
        scored.append((idx, similarity(image, resized.image), resized))
    scored.sort(key=lambda s: (-s[1], s[0]))
    return scored[:max(0, min(k, len(scored)))]


# -- registration -----------------------------------------------------------

@dataclass(frozen=True)
class Similarity:
    """Maps a moving-image point p to ``centre + scale * (p - centre) + shift``."""

    tx: float = 0.0
    ty: float = 0.0
    sx: float = 1.0
    sy: float = 1.0

    def as_tuple(self):
        return (self.tx, self.ty, self.sx, self.sy)


IDENTITY = Similarity()
SCALE_BOUNDS = (0.7, 1.4)


def warp(img: np.ndarray, tf: Similarity, order: int = 1, downsample: int = 1) -> np.ndarray:
    """Resample ``img`` so that its content moves by ``tf``.

    ``downsample`` expresses the shift in units of a finer grid that is
    ``downsample`` times larger than ``img``.
    """
    h, w = img.shape
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    ty, tx = tf.ty / downsample, tf.tx / downsample
    matrix = np.diag([1.0 / tf.sy, 1.0 / tf.sx])
    offset = np.array([cy - (cy + ty) / tf.sy, cx - (cx + tx) / tf.sx])
    mode = "nearest" if order == 1 else "constant"
    return ndimage.affine_transform(img, matrix, offset=offset, order=order, mode=mode, cval=0.0)


def ncc(a: np.ndarray, b: np.ndarray) -> float:
    da, db = a - a.mean(), b - b.mean()
    denom = np.sqrt((da * da).sum() * (db * db).sum())
    if denom == 0:
        return 0.0
    return float((da * db).sum() / denom)


def _pyramid_level(img: np.ndarray, factor: int) -> np.ndarray:
    if factor == 1:
        return img
    h, w = (img.shape[0] // factor) * factor, (img.shape[1] // factor) * factor
    return img[:h, :w].reshape(h // factor, factor, w // factor, factor).mean(axis=(1, 3))


def _coordinate_descent(moving, fixed, tf, factor, t_step, s_step, t_min, max_sweeps=60):
    def score(t):
        return ncc(warp(moving, t, 1, factor), fixed)

    best = score(tf)
    params = list(tf.as_tuple())
    for _ in range(max_sweeps):
        improved = False
        for i in range(4):
            step = t_step if i < 2 else s_step
            for sign in (1.0, -1.0):
                trial = list(params)
                trial[i] += sign * step
                if i >= 2 and not SCALE_BOUNDS[0] <= trial[i] <= SCALE_BOUNDS[1]:
                    continue
                val = score(Similarity(*trial))
                if val > best + 1e-12:
                    best, params, improved = val, trial, True
                    break
        if not improved:
            t_step /= 2.0
            s_step /= 2.0
            if t_step < t_min:
                break
    return Similarity(*params), best


REGISTRATION_STARTS = (
    IDENTITY,
    Similarity(sx=1.05, sy=1.05),
    Similarity(sx=0.95, sy=0.95),
    Similarity(tx=5.0),
    Similarity(tx=-5.0),
    Similarity(ty=5.0),
    Similarity(ty=-5.0),
)
PYRAMID = (4, 2, 1)


def register(moving: AtlasEntry, fixed: np.ndarray):
    """Fit a similarity transform taking ``moving`` onto ``fixed``.

    Every start is optimized on the coarsest pyramid level; the best one is
    refined on the finer levels. The result never scores below the identity.
    Returns ``(transform, warped entry)``.
    """
    fixed = np.asarray(fixed, dtype=DTYPE)
    if moving.image.shape != fixed.shape:
        raise ShapeError(f"moving {moving.image.shape} and fixed {fixed.shape} differ")
    if np.ptp(fixed) == 0:
        raise RegistrationError("fixed image is constant")
    levels = [f for f in PYRAMID if min(fixed.shape) // f >= 8] or [1]

    coarse = levels[0]
    m0, f0 = _pyramid_level(moving.image, coarse), _pyramid_level(fixed, coarse)
    candidates = [
        _coordinate_descent(m0, f0, start, coarse, 2.0 * coarse, 0.04, coarse / 2.0)
        for start in REGISTRATION_STARTS
    ]
    tf = max(candidates, key=lambda c: c[1])[0]
    for factor in levels[1:]:
        mf, ff = _pyramid_level(moving.image, factor), _pyramid_level(fixed, factor)
        tf, _ = _coordinate_descent(mf, ff, tf, factor, float(factor), 0.01, factor / 4.0)
    if levels[-1] != 1:
        tf, _ = _coordinate_descent(moving.image, fixed, tf, 1, 1.0, 0.01, 0.25)

    if ncc(warp(moving.image, tf), fixed) < ncc(moving.image, fixed):
        tf = IDENTITY
    warped = AtlasEntry(warp(moving.image, tf), warp(moving.mask.astype(DTYPE), tf, order=0).round().astype(np.uint8))
    return tf, warped


# -- prior and cut ----------------------------------------------------------

def build_prior(warped: Sequence[AtlasEntry]) -> np.ndarray:
    if len(warped) == 0:
        raise ValueError("no registered references")
    shape = warped[0].mask.shape
    if any(w.mask.shape != shape for w in warped):
        raise ShapeError("registered masks differ in shape")
    return np.mean([w.mask.astype(DTYPE) for w in warped], axis=0)


def lung_energy(image: np.ndarray, prior: np.ndarray, lam: float = 2.0, sigma: float = 0.1) -> CutEnergy:
    """Log-prior unaries and contrast-sensitive 4-neighbour weights."""
    p = np.clip(prior, 0.0, 1.0) * (1.0 - 2 * PRIOR_DELTA) + PRIOR_DELTA
    unary = np.stack([-np.log(p), -np.log(1.0 - p)], axis=-1)
    unary = np.maximum(unary, 0.0)
    horizontal = np.exp(-np.diff(image, axis=1) ** 2 / (2 * sigma ** 2))
    vertical = np.exp(-np.diff(image, axis=0) ** 2 / (2 * sigma ** 2))
    return CutEnergy(unary, horizontal, vertical, lam)


def segment_lungs(image: np.ndarray, atlas: Sequence[AtlasEntry], k: int = 5, lam: float = 2.0, sigma: float = 0.1) -> np.ndarray:
    image = np.asarray(image, dtype=DTYPE)
    refs = rank_references(image, atlas, k)
    warped = [register(entry, image)[1] for _, _, entry in refs]
    prior = build_prior(warped)
    labels, _ = min_cut(lung_energy(image, prior, lam, sigma))
    return labels


def iou(a: np.ndarray, b: np.ndarray) -> float:
    a, b = np.asarray(a).astype(bool), np.asarray(b).astype(bool)
    union = np.logical_or(a, b).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(a, b).sum() / union)
