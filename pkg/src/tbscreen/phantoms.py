"""Synthetic data with known ground truth: chest phantoms for the segmenter and
small separable two-class image sets for the classifier."""

from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from .segmentation import AtlasEntry
from .tensor import DTYPE


@dataclass(frozen=True)
class ChestGeometry:
    cy: float
    cx: float
    body_ry: float
    body_rx: float
    lung_dx: float
    lung_ry: float
    lung_rx: float
    lung_dy: float = 0.0

    def jittered(self, rng: np.random.Generator, shift: float = 5.0, scale: float = 0.05) -> "ChestGeometry":
        s = rng.uniform(1 - scale, 1 + scale)
        dy, dx = rng.uniform(-shift, shift, 2)
        return ChestGeometry(
            self.cy + dy, self.cx + dx, self.body_ry * s, self.body_rx * s,
            self.lung_dx * s, self.lung_ry * s, self.lung_rx * s, self.lung_dy * s,
        )


def _ellipse(shape, cy, cx, ry, rx):
    yy, xx = np.mgrid[0:shape[0], 0:shape[1]]
    return ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0


def render_chest(geom: ChestGeometry, size: int, rng: np.random.Generator, noise: float = 0.02):
    """Image and lung mask: two dark ellipses inside a bright body on a dark field."""
    shape = (size, size)
    img = np.full(shape, 0.12, DTYPE)
    img[_ellipse(shape, geom.cy, geom.cx, geom.body_ry, geom.body_rx)] = 0.72
    mask = np.zeros(shape, np.uint8)
    for side in (-1, 1):
        mask |= _ellipse(shape, geom.cy + geom.lung_dy, geom.cx + side * geom.lung_dx, geom.lung_ry, geom.lung_rx)
    img[mask > 0] = 0.32
    if noise > 0:
        img = img + rng.normal(0.0, noise, shape)
    return np.clip(img, 0.0, 1.0), mask


def random_geometry(rng: np.random.Generator, size: int) -> ChestGeometry:
    u = size / 128.0
    return ChestGeometry(
        cy=size / 2 + rng.uniform(-4, 4) * u,
        cx=size / 2 + rng.uniform(-4, 4) * u,
        body_ry=rng.uniform(52, 58) * u,
        body_rx=rng.uniform(46, 54) * u,
        lung_dx=rng.uniform(19, 24) * u,
        lung_ry=rng.uniform(28, 36) * u,
        lung_rx=rng.uniform(12, 16) * u,
        lung_dy=rng.uniform(-4, 2) * u,
    )


def lung_phantom(seed: int, size: int = 128, n_atlas: int = 8, noise: float = 0.02):
    """Return ``(image, true mask, atlas)`` where the atlas holds jittered copies."""
    rng = np.random.default_rng(seed)
    geom = random_geometry(rng, size)
    image, mask = render_chest(geom, size, rng, noise)
    atlas = [AtlasEntry(*render_chest(geom.jittered(rng), size, rng, noise)) for _ in range(n_atlas)]
    return image, mask, atlas


def separable_images(n: int, size: int, seed: int = 0) -> List[Tuple[np.ndarray, int]]:
    """Two-class (H, W, 3) images: class 1 carries a bright Gaussian blob.

    Labels alternate 0, 1, 0, ... so every prefix is balanced.
    """
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size] / size
    data = []
    for i in range(n):
        label = i % 2
        img = 0.3 + 0.05 * rng.standard_normal((size, size))
        if label:
            cy, cx = rng.uniform(0.3, 0.7, 2)
            img += 0.4 * np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / 0.02)
        img = np.clip(img, 0.0, 1.0)
        data.append((np.repeat(img[:, :, None], 3, axis=2), label))
    return data
