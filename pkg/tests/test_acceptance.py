"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v`` (add ``-s`` to see the lines
interleaved with pytest's own output; they are printed either way).
"""

import time

import numpy as np
import pytest

from oracles import auc_pairwise, cut_energy_table, guided_filter_bruteforce, metrics_direct
from tbscreen import cli, gradchecks
from tbscreen import model as M
from tbscreen.evaluation import ConfusionMatrix, auc, cross_validate, metrics, stratified_kfold
from tbscreen.maxflow import CutEnergy, energy, min_cut
from tbscreen.phantoms import lung_phantom, separable_images
from tbscreen.preprocess import GuidedFilterConfig, denoise
from tbscreen.segmentation import iou, segment_lungs
from tbscreen.storage import load_checkpoint, save_checkpoint


@pytest.fixture
def verdict(capsys):
    def emit(number, title, ok, detail):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {number:>2}: {title} :: {detail}")
        assert ok, detail
    return emit


EXPECTED_SHAPES = [
    (224, 224, 3),
    (224, 224, 64), (224, 224, 64), (112, 112, 64),
    (112, 112, 128), (112, 112, 128), (56, 56, 128),
    (56, 56, 256), (56, 56, 256), (56, 56, 256), (28, 28, 256),
    (28, 28, 512), (28, 28, 512), (28, 28, 512), (14, 14, 512),
    (14, 14, 512), (14, 14, 512), (14, 14, 512), (7, 7, 512),
    (49, 512), (49, 512), (49, 256), (12544,), (2,),
]


def test_c01_shape_chain(verdict):
    m = M.build_model(0)
    t0 = time.perf_counter()
    probs, trace = M.forward(m, np.random.default_rng(0).random((224, 224, 3)))
    elapsed = time.perf_counter() - t0
    shapes = [row[2] for row in trace]
    ok = shapes == EXPECTED_SHAPES and elapsed < 60 and abs(probs.sum() - 1) < 1e-12
    verdict(1, "shape chain", ok, f"{len(shapes)} layers match={shapes == EXPECTED_SHAPES}, {elapsed:.1f}s")


def test_c02_parameter_census(verdict):
    m = M.build_model(0)
    # closed forms: conv 9*Cin*Cout + Cout, LSTM 4(DH + H^2 + H) per direction, dense D*2 + 2
    conv, c_in = 0, 3
    for c in (64, 64, 128, 128, 256, 256, 256, 512, 512, 512, 512, 512, 512):
        conv += 9 * c_in * c + c
        c_in = c
    bi1 = 2 * 4 * (512 * 256 + 256 * 256 + 256)
    bi2 = 2 * 4 * (512 * 128 + 128 * 128 + 128)
    dense = 12544 * 2 + 2
    assert (conv, bi1, bi2, dense) == (14_714_688, 1_574_912, 656_384, 25_090)
    got = (m.count("block"), m.count("bilstm1"), m.count("bilstm2"), m.count("dense"), m.count())
    ok = got == (conv, bi1, bi2, dense, 16_971_074)
    verdict(2, "parameter census", ok, f"conv/bilstm1/bilstm2/dense/total = {got}")


def test_c03_gradient_checks(verdict):
    t0 = time.perf_counter()
    worst = {}
    for seed in range(5):
        for family, err in gradchecks.run_all(seed).items():
            worst[family] = max(worst.get(family, 0.0), err)
    elapsed = time.perf_counter() - t0
    failing = [f for f, e in worst.items() if e >= gradchecks.tolerance(f)]
    ok = not failing and elapsed < 300 and set(worst) == set(gradchecks.FAMILIES)
    detail = ", ".join(f"{f}={e:.1e}" for f, e in worst.items()) + f" ({elapsed:.0f}s, 5 seeds)"
    verdict(3, "gradient checks", ok, detail)


def test_c04_overfit(verdict):
    data = separable_images(20, 224, seed=0)
    cfg = M.TrainConfig(learning_rate=1e-3, epochs=200, batch_size=8, seed=0, optimizer="adam",
                        freeze_extractor=True, stop_when_fit=True)
    t0 = time.perf_counter()
    runs = [M.train(M.build_model(0), data, cfg) for _ in range(2)]
    elapsed = time.perf_counter() - t0
    (m1, h1), (m2, h2) = runs
    same = h1.loss == h2.loss and all(np.array_equal(m1.params[k], m2.params[k]) for k in m1.params)
    fitted = h1.accuracy[-1] == 1.0 and M.training_accuracy(m1, data) == 1.0
    verdict(4, "overfit 20 images", fitted and same and h1.epochs_run <= 200,
            f"train acc {h1.accuracy[-1]:.2f} after {h1.epochs_run} epochs, reruns identical={same}, "
            f"{elapsed:.0f}s for two runs")


def test_c05_graph_cut_optimality(verdict):
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(200):
        e = CutEnergy(rng.random((3, 4, 2)) * 4, rng.random((3, 3)), rng.random((2, 4)), float(rng.uniform(0, 3)))
        labels, value = min_cut(e)
        best = cut_energy_table(e.unary, e.horizontal, e.vertical, e.lam)[0].min()
        worst = max(worst, abs(value - best), abs(energy(e, labels) - best))
    elapsed = time.perf_counter() - t0
    verdict(5, "graph-cut optimality", worst <= 1e-9 and elapsed < 60, f"max |E - E*| = {worst:.1e}, {elapsed:.2f}s")


def test_c06_guided_filter(verdict):
    rng = np.random.default_rng(6)
    worst = 0.0
    for _ in range(100):
        h, w = rng.integers(3, 10, 2)
        img = rng.random((h, w))
        eps = float(10.0 ** rng.uniform(-6, 0))
        worst = max(worst, np.abs(denoise(img, GuidedFilterConfig(eps)) - guided_filter_bruteforce(img, eps)).max())
    fixed = all(np.array_equal(denoise(np.full((h, w), v), GuidedFilterConfig(e)), np.full((h, w), v))
                for v in (0.0, 0.25, 1 / 3, 0.7, 1.0) for e in (0.0, 1e-4, 1.0) for h, w in ((3, 3), (5, 8)))
    verdict(6, "guided filter", worst <= 1e-12 and fixed, f"max deviation {worst:.1e}, constants fixed={fixed}")


def test_c07_metrics_oracles(verdict):
    rng = np.random.default_rng(7)
    exact = True
    for _ in range(1000):
        counts = rng.integers(0, 500, 4)
        if counts.sum() == 0:
            counts[0] = 1
        r = metrics(ConfusionMatrix(*(int(c) for c in counts)))
        exact &= all(getattr(r, k) == v for k, v in metrics_direct(*(int(c) for c in counts)).items())
    auc_ok, tested = True, 0
    while tested < 500:
        n = int(rng.integers(2, 51))
        truths = rng.integers(0, 2, n)
        if truths.min() == truths.max():
            continue
        scores = rng.integers(0, 8, n) / 7.0 if tested % 2 else rng.random(n)
        auc_ok &= auc(scores, truths) == auc_pairwise(scores, truths)
        tested += 1
    r = metrics(ConfusionMatrix(tp=326, tn=321, fp=5, fn=10))
    printed = {"accuracy": 97.76, "precision": 98.48, "recall": 97.01, "specificity": 98.50, "f1": 97.74}
    gaps = {k: abs(100 * getattr(r, k) - v) for k, v in printed.items()}
    table_ok = max(gaps.values()) <= 0.05
    verdict(7, "metrics oracles", exact and auc_ok and table_ok,
            f"1000 matrices exact={exact}, 500 AUC cases exact={auc_ok}, "
            f"largest gap to printed row {max(gaps, key=gaps.get)}={max(gaps.values()):.4f}pp")


def test_c08_cross_validation_protocol(verdict):
    truths = np.array([1] * 336 + [0] * 326)
    folds = stratified_kfold(truths, 10, seed=0)
    sizes = set(np.bincount(folds, minlength=10).tolist())
    positives = set(np.bincount(folds[truths == 1], minlength=10).tolist())
    data = [(np.array([i], float), int(y)) for i, y in enumerate(truths)]
    calls = np.zeros(len(data), int)

    def predict(_, x):
        calls[int(x[0])] += 1
        return int(truths[int(x[0])]), float(truths[int(x[0])])

    res = cross_validate(data, lambda train, f: None, predict, k=10, seed=0)
    ok = (sizes <= {66, 67} and positives <= {33, 34} and np.all(calls == 1)
          and res.pooled_confusion.total == 662 and sum(f.confusion.total for f in res.folds) == 662)
    verdict(8, "cross-validation protocol", ok,
            f"fold sizes {sorted(sizes)}, positives {sorted(positives)}, once each={bool(np.all(calls == 1))}, "
            f"pooled total {res.pooled_confusion.total}")


def test_c09_segmentation_phantoms(verdict):
    t0 = time.perf_counter()
    scores = []
    for seed in range(25):
        image, mask, atlas = lung_phantom(seed, size=128, n_atlas=8, noise=0.02)
        scores.append(iou(segment_lungs(denoise(image), atlas), mask))
    elapsed = time.perf_counter() - t0
    ok = np.mean(scores) >= 0.90 and min(scores) >= 0.85 and elapsed < 120
    verdict(9, "segmentation phantoms", ok,
            f"mean IoU {np.mean(scores):.4f}, min {min(scores):.4f}, {elapsed:.1f}s")


def test_c10_persistence_and_determinism(verdict, tmp_path):
    m = M.build_model(3, M.shrunken())
    m32 = M.ModelParams(m.arch, {k: v.astype(np.float32) for k, v in m.params.items()})
    exact = True
    for model, dtype in ((m, "f64"), (m32, "f32")):
        save_checkpoint(tmp_path / f"{dtype}.tbdx", model, dtype)
        back = load_checkpoint(tmp_path / f"{dtype}.tbdx")
        exact &= set(back.params) == set(model.params) and all(
            back.params[k].dtype == v.dtype and back.params[k].tobytes() == v.tobytes() for k, v in model.params.items())

    ph = tmp_path / "ph"
    assert cli.main(["phantoms", "--out", str(ph), "--n", "20", "--size", "32"]) == 0
    common = ["--manifest", str(ph / "manifest.csv"), "--seed", "5", "--no-timestamp"]
    train = ["--arch", "shrunken-16-32", "--epochs", "4", "--lr", "1e-3"]
    runs = []
    for r in ("a", "b"):
        out = tmp_path / r
        assert cli.main(["train", *common, *train, "--out", str(out / "tr")]) == 0
        assert cli.main(["evaluate", *common, "--checkpoint", str(out / "tr" / "model.tbdx"), "--out", str(out / "ev")]) == 0
        assert cli.main(["crossval", *common, *train, "--k", "5", "--out", str(out / "cv")]) == 0
        runs.append({p.relative_to(out).as_posix(): p.read_bytes() for p in sorted(out.rglob("*")) if p.is_file()})
    identical = runs[0] == runs[1] and len(runs[0]) == 8
    verdict(10, "persistence and determinism", exact and identical,
            f"checkpoint bit-exact f32/f64={exact}, {len(runs[0])} CLI outputs byte-identical={identical}")
