"""End-to-end glue: raw radiograph -> denoise -> (optional) lung mask -> model input,
and the train/predict callables used by cross-validation."""

from dataclasses import dataclass, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np

from . import model as M
from .evaluation import CrossValResult, cross_validate
from .preprocess import GuidedFilterConfig, denoise, to_model_input
from .segmentation import AtlasEntry, segment_lungs


@dataclass(frozen=True)
class SegmentConfig:
    k: int = 5
    lam: float = 2.0
    sigma: float = 0.1


def prepare(
    img: np.ndarray,
    size: int,
    atlas: Optional[Sequence[AtlasEntry]] = None,
    epsilon: float = 1e-4,
    seg: SegmentConfig = SegmentConfig(),
) -> np.ndarray:
    """Denoise once, segment if an atlas is given, then build the model input."""
    clean = denoise(img, GuidedFilterConfig(epsilon))
    mask = segment_lungs(clean, atlas, seg.k, seg.lam, seg.sigma) if atlas else None
    return to_model_input(clean, mask, size)


def prepare_dataset(images: Sequence[Tuple[np.ndarray, int]], size: int, atlas=None, epsilon: float = 1e-4,
                    seg: SegmentConfig = SegmentConfig()) -> List[Tuple[np.ndarray, int]]:
    return [(prepare(img, size, atlas, epsilon, seg), y) for img, y in images]


def fit_model(train_set, cfg: M.TrainConfig, arch: M.Architecture, init: Optional[M.ModelParams] = None):
    start = init if init is not None else M.build_model(cfg.seed, arch, cfg.freeze_extractor)
    return M.train(start, train_set, cfg)


def run_crossval(dataset, cfg: M.TrainConfig, arch: M.Architecture, k: int = 10,
                 init: Optional[M.ModelParams] = None) -> CrossValResult:
    """Fold ``f`` trains from its own seed ``cfg.seed + f``."""

    def fit(train_set, fold):
        fold_cfg = replace(cfg, seed=cfg.seed + fold)
        return fit_model(train_set, fold_cfg, arch, init)[0]

    return cross_validate(dataset, fit, M.predict, k=k, seed=cfg.seed)
