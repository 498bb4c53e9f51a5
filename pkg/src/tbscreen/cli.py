"""Command-line driver.

Exit codes: 0 success, 1 invalid input, 2 numerical failure (gradient check
breach or registration failure).
"""

import argparse
import csv
import datetime as _dt
import io
import logging
import sys
from pathlib import Path
from typing import List, Optional, Sequence

from . import gradchecks
from . import model as M
from .evaluation import ConfusionMatrix, MetricsReport, auc, confusion, metrics, roc_points
from .phantoms import lung_phantom, separable_images
from .pipeline import SegmentConfig, fit_model, prepare_dataset, run_crossval
from .preprocess import DegenerateMaskError, GuidedFilterConfig, denoise
from .segmentation import RegistrationError, segment_lungs
from .storage import (CheckpointError, DatasetError, load_atlas, load_checkpoint, load_dataset, read_manifest,
                      save_checkpoint, write_manifest, write_mask, write_png)
from .tensor import ShapeError

log = logging.getLogger("tbscreen")

METRICS_HEADER = ["Accuracy", "Precision", "Recall", "Specificity", "F1-score", "AUC", "NPV",
                  "TP", "TN", "FP", "FN", "Scope", "Undefined"]


class NumericalFailure(RuntimeError):
    pass


# -- output helpers ---------------------------------------------------------

def _write_csv(path: Path, header: Sequence[str], rows, timestamp: bool):
    buf = io.StringIO()
    if timestamp:
        buf.write(f"# generated {_dt.datetime.now().isoformat(timespec='seconds')}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    path.write_text(buf.getvalue())


def metrics_row(report: MetricsReport, cm: ConfusionMatrix, scope: str) -> List[str]:
    pct = lambda v: f"{100.0 * v:.4f}"  # noqa: E731
    return [
        pct(report.accuracy), pct(report.precision), pct(report.recall), pct(report.specificity), pct(report.f1),
        "" if report.auc is None else f"{report.auc:.4f}", pct(report.npv),
        cm.tp, cm.tn, cm.fp, cm.fn, scope, ";".join(report.undefined),
    ]


def _write_roc(path: Path, scores, truths, timestamp: bool):
    try:
        points = roc_points(scores, truths)
    except ValueError:
        return False
    _write_csv(path, ["fpr", "tpr"], [(f"{x:.6f}", f"{y:.6f}") for x, y in points], timestamp)
    return True


def _out_dir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _seg_config(args) -> SegmentConfig:
    return SegmentConfig(args.refs, args.lam, args.sigma)


def _train_config(args) -> M.TrainConfig:
    return M.TrainConfig(learning_rate=args.lr, epochs=args.epochs, batch_size=args.batch, seed=args.seed,
                         optimizer=args.optimizer, freeze_extractor=args.freeze_extractor)


def _model_inputs(args, arch: M.Architecture):
    images = load_dataset(args.manifest)
    atlas = load_atlas(args.atlas_dir) if args.atlas_dir else None
    return prepare_dataset(images, arch.input_size, atlas, args.epsilon, _seg_config(args))


# -- subcommands ------------------------------------------------------------

def cmd_denoise(args):
    out = _out_dir(args.out)
    rows = read_manifest(args.manifest)
    for (path, _), (img, _) in zip(rows, load_dataset(args.manifest)):
        write_png(out / f"{path.stem}_denoised.png", denoise(img, GuidedFilterConfig(args.epsilon)))
    log.info("denoised %d images into %s", len(rows), out)


def cmd_segment(args):
    out = _out_dir(args.out)
    atlas = load_atlas(args.atlas_dir)
    rows = read_manifest(args.manifest)
    for (path, _), (img, _) in zip(rows, load_dataset(args.manifest)):
        clean = denoise(img, GuidedFilterConfig(args.epsilon))
        write_mask(out / f"{path.stem}_mask.png", segment_lungs(clean, atlas, args.refs, args.lam, args.sigma))
    log.info("segmented %d images into %s", len(rows), out)


def cmd_train(args):
    out = _out_dir(args.out)
    init = load_checkpoint(args.checkpoint) if args.checkpoint else None
    arch = init.arch if init is not None else M.get_architecture(args.arch)
    data = _model_inputs(args, arch)
    cfg = _train_config(args)
    model, history = fit_model(data, cfg, arch, init)
    save_checkpoint(out / "model.tbdx", model, args.dtype)
    rows = [(e + 1, f"{loss:.10f}", f"{acc:.6f}") for e, (loss, acc) in enumerate(zip(history.loss, history.accuracy))]
    _write_csv(out / "loss.csv", ["epoch", "loss", "train_accuracy"], rows, not args.no_timestamp)
    log.info("trained %s for %d epochs; checkpoint in %s", arch.name, history.epochs_run, out)


def cmd_evaluate(args):
    out = _out_dir(args.out)
    model = load_checkpoint(args.checkpoint)
    rows = read_manifest(args.manifest)
    data = _model_inputs(args, model.arch)
    preds, scores, truths = [], [], []
    for x, y in data:
        label, score = M.predict(model, x)
        preds.append(label)
        scores.append(score)
        truths.append(y)
    _write_predictions(out / "predictions.csv", rows, preds, scores, None, not args.no_timestamp)
    cm = confusion(preds, truths)
    report = metrics(cm, _maybe_auc(scores, truths))
    _write_csv(out / "metrics.csv", METRICS_HEADER, [metrics_row(report, cm, "all")], not args.no_timestamp)
    _write_roc(out / "roc.csv", scores, truths, not args.no_timestamp)
    print(_summary(report))


def cmd_crossval(args):
    out = _out_dir(args.out)
    rows = read_manifest(args.manifest)
    arch = M.get_architecture(args.arch)
    data = _model_inputs(args, arch)
    result = run_crossval(data, _train_config(args), arch, k=args.k)
    table = [metrics_row(f.report, f.confusion, f"fold-{f.fold}") for f in result.folds]
    table.append(metrics_row(result.pooled, result.pooled_confusion, "pooled"))
    _write_csv(out / "metrics.csv", METRICS_HEADER, table, not args.no_timestamp)
    _write_predictions(out / "predictions.csv", rows, result.preds, result.scores, result.assignment,
                       not args.no_timestamp)
    _write_roc(out / "roc.csv", result.scores, [y for _, y in data], not args.no_timestamp)
    print(_summary(result.pooled))


def cmd_gradcheck(args):
    results = gradchecks.run_all(args.seed, args.epsilon)
    failed = []
    for family, err in results.items():
        limit = gradchecks.tolerance(family)
        status = "ok" if err < limit else "FAIL"
        print(f"{family:<24s} max relative error {err:.3e}  (limit {limit:.0e})  {status}")
        if err >= limit:
            failed.append(family)
    if failed:
        raise NumericalFailure(f"gradient check exceeded tolerance for: {', '.join(failed)}")


def cmd_report(args):
    out = _out_dir(args.out)
    scores = truths = None
    if args.counts:
        try:
            tp, tn, fp, fn = (int(v) for v in args.counts.split(","))
        except ValueError as exc:
            raise DatasetError(f"--counts must be TP,TN,FP,FN integers: {args.counts!r}") from exc
        cm = ConfusionMatrix(tp, tn, fp, fn)
    elif args.predictions:
        preds, scores, truths = _read_predictions(args.predictions)
        cm = confusion(preds, truths)
    else:
        raise DatasetError("report needs --counts or --predictions")
    report = metrics(cm, _maybe_auc(scores, truths) if scores is not None else None)
    _write_csv(out / "metrics.csv", METRICS_HEADER, [metrics_row(report, cm, args.scope)], not args.no_timestamp)
    if scores is not None:
        _write_roc(out / "roc.csv", scores, truths, not args.no_timestamp)
    print(_summary(report))


def cmd_phantoms(args):
    """Write a synthetic classification set and a lung atlas for trying the pipeline."""
    out = _out_dir(args.out)
    images = out / "images"
    images.mkdir(exist_ok=True)
    rows = []
    for i, (x, y) in enumerate(separable_images(args.n, args.size, args.seed)):
        name = f"case{i:03d}.png"
        write_png(images / name, x[:, :, 0])
        rows.append((Path("images") / name, y))
    write_manifest(out / "manifest.csv", rows)
    atlas_dir = out / "atlas"
    atlas_dir.mkdir(exist_ok=True)
    image, mask, atlas = lung_phantom(args.seed, size=args.atlas_size)
    for j, entry in enumerate(atlas):
        write_png(atlas_dir / f"ref{j:02d}.png", entry.image)
        write_mask(atlas_dir / f"ref{j:02d}_mask.png", entry.mask)
    chest = out / "chest"
    chest.mkdir(exist_ok=True)
    write_png(chest / "chest.png", image)
    write_mask(chest / "chest_truth.png", mask)
    write_manifest(chest / "manifest.csv", [("chest.png", 1)])
    log.info("wrote %d images, %d atlas pairs under %s", len(rows), len(atlas), out)


# -- predictions files ------------------------------------------------------

def _write_predictions(path, rows, preds, scores, folds, timestamp):
    header = ["path", "label", "pred", "score"] + (["fold"] if folds is not None else [])
    table = []
    for i, (img_path, label) in enumerate(rows):
        row = [img_path.name, label, int(preds[i]), f"{scores[i]:.10f}"]
        if folds is not None:
            row.append(int(folds[i]))
        table.append(row)
    _write_csv(path, header, table, timestamp)


def _read_predictions(path):
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"{path}: predictions file not found")
    lines = [ln for ln in path.read_text().splitlines() if not ln.startswith("#")]
    reader = csv.DictReader(lines)
    preds, scores, truths = [], [], []
    for lineno, row in enumerate(reader, start=2):
        try:
            truths.append(int(row["label"]))
            preds.append(int(row["pred"]))
            scores.append(float(row["score"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise DatasetError(f"{path}:{lineno}: malformed prediction row") from exc
    return preds, scores, truths


def _maybe_auc(scores, truths) -> Optional[float]:
    try:
        return auc(scores, truths)
    except ValueError:
        return None


def _summary(r: MetricsReport) -> str:
    auc_text = "n/a" if r.auc is None else f"{r.auc:.4f}"
    return (f"accuracy {100 * r.accuracy:.2f}  precision {100 * r.precision:.2f}  recall {100 * r.recall:.2f}  "
            f"specificity {100 * r.specificity:.2f}  F1 {100 * r.f1:.2f}  NPV {100 * r.npv:.2f}  AUC {auc_text}")


# -- argument parsing -------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tbscreen", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, manifest=True):
        if manifest:
            p.add_argument("--manifest", required=True, help="CSV with header 'path,label'")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--no-timestamp", action="store_true", help="omit the timestamp line in CSV outputs")

    def preprocessing(p, atlas_required=False):
        p.add_argument("--epsilon", type=float, default=1e-4, help="guided filter regularizer")
        p.add_argument("--atlas-dir", required=atlas_required, help="directory of name.png + name_mask.png pairs")
        p.add_argument("--refs", type=int, default=5, help="atlas references registered per image")
        p.add_argument("--lambda", dest="lam", type=float, default=2.0, help="graph-cut smoothness weight")
        p.add_argument("--sigma", type=float, default=0.1, help="graph-cut contrast scale")

    def training(p):
        p.add_argument("--arch", default="vgg16-bilstm", help="vgg16-bilstm, shrunken or shrunken-DIV-SIZE")
        p.add_argument("--epochs", type=int, default=10)
        p.add_argument("--lr", type=float, default=1e-4)
        p.add_argument("--batch", type=int, default=8)
        p.add_argument("--optimizer", choices=("adam", "sgd"), default="adam")
        p.add_argument("--freeze-extractor", action="store_true", help="keep conv weights fixed")

    p = sub.add_parser("denoise", help="guided-filter every manifest image")
    common(p)
    p.add_argument("--epsilon", type=float, default=1e-4)
    p.set_defaults(func=cmd_denoise)

    p = sub.add_parser("segment", help="write a lung mask for every manifest image")
    common(p)
    preprocessing(p, atlas_required=True)
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("train", help="train and write a checkpoint plus loss.csv")
    common(p)
    preprocessing(p)
    training(p)
    p.add_argument("--checkpoint", help="initial weights (e.g. converted ImageNet VGG16)")
    p.add_argument("--dtype", choices=("f32", "f64"), default="f64", help="checkpoint payload precision")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score a checkpoint on a manifest")
    common(p)
    preprocessing(p)
    p.add_argument("--checkpoint", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("crossval", help="stratified k-fold cross-validation")
    common(p)
    preprocessing(p)
    training(p)
    p.add_argument("--k", type=int, default=10, help="number of folds")
    p.set_defaults(func=cmd_crossval)

    p = sub.add_parser("gradcheck", help="finite-difference check of every layer family")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epsilon", type=float, default=1e-6)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("report", help="metrics CSV from confusion counts or a predictions file")
    p.add_argument("--out", required=True)
    p.add_argument("--counts", help="TP,TN,FP,FN")
    p.add_argument("--predictions", help="predictions.csv written by evaluate or crossval")
    p.add_argument("--scope", default="all", help="value of the Scope column")
    p.add_argument("--no-timestamp", action="store_true")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("phantoms", help="write synthetic images, a manifest and an atlas")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=40)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--atlas-size", type=int, default=128)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_phantoms)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        args.func(args)
    except (NumericalFailure, RegistrationError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (DatasetError, CheckpointError, DegenerateMaskError, ShapeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
