"""
UNO command-line interface.

  python uno_cli.py gen-data --spec spec.json --out data/
  python uno_cli.py train two-step --data data/ --config train.json --out runs/two_step
  python uno_cli.py eval --model runs/two_step/model --data data/ --score uno --out runs/two_step/eval.json
  python uno_cli.py diagnose --model runs/two_step/model --data data/ --out runs/two_step/diag

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""
from __future__ import annotations

import argparse
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

import metrics
from mask_seg import DenseModel, evaluate_dense, load_dense_model, save_dense_model, score_maps, train_dense
from nflow import save_flow
from openset_net import OpenSetModel, class_vector_cosines, load_model, save_model
from synthgen import DatasetBundle, SynthSpec, VOID, load_bundle, make_image_wide, outlier_union, save_bundle
from tensor_io import directory_digest, manifest_kind, save_tensor
from trainers import (
    MixedDataset,
    finetune_real,
    naive_joint_train,
    train_closed,
    train_ood_head,
    two_step_train,
)
from uno_config import DenseConfig, RuntimeSettings, TrainConfig, configure_logging, load_config, parse_overrides
from uno_errors import (
    ConfigurationError,
    MissingCheckpointError,
    UndefinedCorrelationError,
    UndefinedCosineError,
    UnoError,
)
from uno_score import SCORE_FIELDS, component_correlation, model_score_frame, model_scores

logger = logging.getLogger(__name__)

REGIMES = ("closed", "finetune-real", "two-step", "naive-joint", "dense", "ood-head")
NEEDS_PRETRAINED = ("finetune-real", "ood-head")
IMAGE_WIDE_KIND = "openset-model"
DENSE_KIND = "dense-model"


def print_step(n: int, text: str) -> None:
    print(f"\nStep {n}: {text}")


def print_success(text: str) -> None:
    print(f"✓ {text}")


def print_error(text: str) -> None:
    print(f"✗ {text}", file=sys.stderr)


# ----------------------------
# Library entry points shared with the commands
# ----------------------------

def outlier_sets(bundle: DatasetBundle) -> Dict[str, np.ndarray]:
    """Named outlier test sets in sorted order, plus their union when there is more than one."""
    sets = {name: bundle.outliers[name] for name in sorted(bundle.outliers)}
    if len(sets) > 1:
        sets["union"] = outlier_union(bundle)
    return sets


def _safe_correlation(a: np.ndarray, b: np.ndarray) -> Optional[float]:
    try:
        return component_correlation(a, b)
    except UndefinedCorrelationError as e:
        logger.warning("component correlation skipped: %s", e)
        return None


def _safe_cosines(model: OpenSetModel) -> Optional[List[List[float]]]:
    try:
        return class_vector_cosines(model.head).tolist()
    except UndefinedCosineError as e:
        logger.warning("cosine matrix skipped: %s", e)
        return None


def evaluate_image_wide(model: OpenSetModel, bundle: DatasetBundle, score: str, include_no_object: bool = True,
                        workers: int = 1) -> Tuple[dict, Dict[str, Tuple[np.ndarray, np.ndarray]]]:
    """Report per outlier set (test inliers are label 0, outliers label 1).

    Returns the JSON payload and, per set, the (scores, labels) pair behind it.
    """
    if score not in SCORE_FIELDS:
        raise ConfigurationError(f"unknown score '{score}' (choose from {', '.join(SCORE_FIELDS)})")
    inliers = model_scores(model, bundle.test.x, include_no_object)
    acc = model.accuracy(bundle.test.x, bundle.test.y)
    sets = outlier_sets(bundle)

    def _one(name: str) -> Tuple[dict, Tuple[np.ndarray, np.ndarray]]:
        out = model_scores(model, sets[name], include_no_object)
        s = np.concatenate([inliers.get(score), out.get(score)])
        y = np.concatenate([np.zeros(len(inliers.s_uno), dtype=np.int64), np.ones(len(out.s_uno), dtype=np.int64)])
        report = metrics.build_report(s, y, accuracy=acc, pearson=_safe_correlation(out.s_unc, out.s_no))
        return metrics.report_dict(report), (s, y)

    names = list(sets)
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        results = list(pool.map(_one, names))

    per_set = {name: r[0] for name, r in zip(names, results)}
    primary = "union" if "union" in per_set else names[0]
    payload = dict(per_set[primary])
    payload.update({
        "score": score,
        "model_kind": IMAGE_WIDE_KIND,
        "primary_set": primary,
        "sets": per_set,
        "cosine": _safe_cosines(model),
    })
    return payload, {name: r[1] for name, r in zip(names, results)}


def dense_pixel_frame(model: DenseModel, bundle: DatasetBundle, include_no_object: bool = True) -> pd.DataFrame:
    """One row per held-out pixel: scene, row, col, label, s_no, s_unc, s_uno."""
    frames = []
    for i, scene in enumerate(bundle.dense_test):
        maps = score_maps(scene, model, include_no_object)
        h, w = scene.shape
        rows, cols = np.divmod(np.arange(h * w), w)
        frames.append(pd.DataFrame({
            "scene": i, "row": rows, "col": cols, "label": scene.labels.ravel(),
            "s_no": maps["no"].ravel(), "s_unc": maps["unc"].ravel(), "s_uno": maps["uno"].ravel(),
        }))
    return pd.concat(frames, ignore_index=True)


def evaluate_dense_bundle(model: DenseModel, bundle: DatasetBundle, score: str,
                          include_no_object: bool = True) -> Tuple[dict, pd.DataFrame]:
    if not bundle.dense_test:
        raise ConfigurationError("bundle has no held-out dense scenes; generate it with a 'dense' section")
    results = evaluate_dense(model, bundle.dense_test, include_no_object)
    pixels = dense_pixel_frame(model, bundle, include_no_object)
    valid = pixels["label"] != VOID
    positive = pixels["label"] == model.num_inlier
    if f"{score}_auroc" not in results:
        raise ConfigurationError("held-out dense scenes contain no negative pixels")
    payload = {
        "auroc": results[f"{score}_auroc"],
        "ap": results[f"{score}_ap"],
        "fpr95": results[f"{score}_fpr95"],
        "accuracy": results["pixel_accuracy"],
        "miou": results["miou"],
        "pearson": results["pearson"],
        "n_pos": int((valid & positive).sum()),
        "n_neg": int((valid & ~positive).sum()),
        "score": score,
        "model_kind": DENSE_KIND,
        "dense": results,
    }
    return payload, pixels


# ----------------------------
# Commands
# ----------------------------

def cmd_gen_data(args: argparse.Namespace, settings: RuntimeSettings) -> int:
    print_step(1, "Validating dataset spec")
    spec = load_config(SynthSpec, args.spec, parse_overrides(args.set))
    print_success(f"K={spec.num_classes}, negatives={spec.negative_source}, seed={spec.seed}")

    print_step(2, "Sampling bundle")
    bundle = make_image_wide(spec)
    out = save_bundle(bundle, Path(args.out))
    print_success(f"train={len(bundle.train)} val={len(bundle.val)} test={len(bundle.test)} "
                  f"negatives={len(bundle.negatives)}")
    for name, x in sorted(bundle.outliers.items()):
        print_success(f"outliers.{name}={len(x)}")
    if bundle.dense_train:
        print_success(f"dense scenes train={len(bundle.dense_train)} test={len(bundle.dense_test)}")
    print_success(f"bundle written to {out} (digest {directory_digest(out)[:16]})")
    return 0


def _pretrained(path: Optional[str], regime: str) -> OpenSetModel:
    if path is None:
        raise MissingCheckpointError(f"train {regime} needs --model pointing at a closed-set checkpoint")
    kind = manifest_kind(Path(path))
    if kind != IMAGE_WIDE_KIND:
        raise ConfigurationError(f"train {regime} needs an image-wide checkpoint, got '{kind}'")
    return load_model(Path(path))


def _train_dense(args: argparse.Namespace, bundle: DatasetBundle, out: Path) -> int:
    overrides = parse_overrides(args.set)
    if args.negatives is not None:
        overrides["negatives"] = args.negatives
    cfg = load_config(DenseConfig, args.config, overrides)
    if not bundle.dense_train:
        raise ConfigurationError("bundle has no dense scenes; generate it with a 'dense' section")
    print_success(f"dense config: queries={cfg.num_queries} negatives={cfg.negatives} ood_head={cfg.ood_head}")

    print_step(3, "Training")
    result = train_dense(bundle.dense_train, bundle.num_classes, cfg)

    print_step(4, "Writing artifacts")
    metrics.write_json(out / "config.json", cfg.model_dump(mode="json"))
    save_dense_model(result.model, out / "model")
    result.log.to_csv(out / "loss_log.csv", index=False)
    if result.flow is not None:
        save_flow(result.flow, out / "flow")
    print_success(f"checkpoint and loss log written to {out}")
    return 0


def cmd_train(args: argparse.Namespace, settings: RuntimeSettings) -> int:
    regime = args.regime
    out = Path(args.out) if args.out else settings.run_dir(regime.replace("-", "_"))

    print_step(1, "Loading data")
    bundle = load_bundle(Path(args.data))
    k = bundle.num_classes
    print_success(f"bundle {args.data}: K={k}, train={len(bundle.train)}, negatives={len(bundle.negatives)}")

    print_step(2, "Resolving config")
    if regime == "dense":
        return _train_dense(args, bundle, out)
    if args.negatives is not None:
        raise ConfigurationError("--negatives only applies to 'train dense'")
    cfg = load_config(TrainConfig, args.config, parse_overrides(args.set))
    print_success(f"seed={cfg.seed} batch={cfg.batch_size} beta={cfg.beta}")
    checkpoints = out / "checkpoints"

    print_step(3, f"Training ({regime})")
    if regime == "closed":
        result = train_closed(bundle.train, cfg, k, checkpoints)
    elif regime in NEEDS_PRETRAINED:
        pretrained = _pretrained(args.model, regime)
        data = MixedDataset.from_splits(bundle.train, bundle.negatives, k)
        trainer = finetune_real if regime == "finetune-real" else train_ood_head
        result = trainer(pretrained, data, cfg, checkpoints)
    elif regime == "two-step":
        result = two_step_train(bundle.train, cfg, k, checkpoints)
    else:
        result = naive_joint_train(bundle.train, cfg, k, checkpoints)

    print_step(4, "Writing artifacts")
    metrics.write_json(out / "config.json", cfg.model_dump(mode="json"))
    save_model(result.model, out / "model")
    result.log.write(out / "loss_log.csv")
    if result.flow is not None:
        save_flow(result.flow, out / "flow")
    if result.collapse is not None:
        metrics.write_json(out / "collapse.json", asdict(result.collapse))
        print_success(f"flow-sample dispersion {result.collapse.dispersion:.4f}, "
                      f"confident negatives {result.collapse.confident_fraction:.3f}")
    print_success(f"validation accuracy {result.model.accuracy(bundle.val.x, bundle.val.y):.4f}")
    print_success(f"checkpoint and loss log written to {out}")
    return 0


def cmd_eval(args: argparse.Namespace, settings: RuntimeSettings) -> int:
    out = Path(args.out)
    curves_dir = out.parent / f"{out.stem}_curves"
    include_no_object = not args.exclude_no_object
    workers = args.workers or settings.workers

    print_step(1, "Loading checkpoint and data")
    kind = manifest_kind(Path(args.model))
    bundle = load_bundle(Path(args.data))
    print_success(f"{kind} checkpoint, bundle K={bundle.num_classes}")

    print_step(2, f"Scoring with s_{args.score}")
    if kind == DENSE_KIND:
        model = load_dense_model(Path(args.model))
        payload, pixels = evaluate_dense_bundle(model, bundle, args.score, include_no_object)
        curves_dir.mkdir(parents=True, exist_ok=True)
        pixels.to_csv(curves_dir / "pixels.csv", index=False)
        valid = pixels[pixels["label"] != VOID]
        s = valid[f"s_{args.score}"].to_numpy()
        y = (valid["label"] == model.num_inlier).to_numpy().astype(np.int64)
        metrics.write_curves(curves_dir, f"pixels_{args.score}", s, y)
        metrics.score_histogram(s, y).to_csv(curves_dir / f"pixels_{args.score}_hist.csv", index=False)
        for i, scene in enumerate(bundle.dense_test):
            for name, m in score_maps(scene, model, include_no_object).items():
                save_tensor(curves_dir / "maps" / f"scene_{i:04d}_{name}.unot", m)
    elif kind == IMAGE_WIDE_KIND:
        model = load_model(Path(args.model))
        payload, scored = evaluate_image_wide(model, bundle, args.score, include_no_object, workers)
        for name, (s, y) in scored.items():
            metrics.write_curves(curves_dir, f"{name}_{args.score}", s, y)
            metrics.score_histogram(s, y).to_csv(curves_dir / f"{name}_{args.score}_hist.csv", index=False)
    else:
        raise ConfigurationError(f"cannot evaluate a '{kind}' checkpoint")

    print_step(3, "Writing report")
    metrics.write_json(out, payload)
    print_success(f"AUROC {payload['auroc']:.4f}  AP {payload['ap']:.4f}  FPR95 {payload['fpr95']:.4f}")
    print_success(f"report written to {out}, curves to {curves_dir}")
    return 0


def cmd_diagnose(args: argparse.Namespace, settings: RuntimeSettings) -> int:
    print_step(1, "Loading checkpoint and data")
    kind = manifest_kind(Path(args.model))
    if kind != IMAGE_WIDE_KIND:
        raise ConfigurationError(f"diagnose works on image-wide checkpoints, got '{kind}'")
    model = load_model(Path(args.model))
    bundle = load_bundle(Path(args.data))
    k = bundle.num_classes

    print_step(2, "Scoring samples")
    frames = [model_score_frame(model, bundle.test.x, bundle.test.y, "test")]
    for name in sorted(bundle.outliers):
        x = bundle.outliers[name]
        frames.append(model_score_frame(model, x, np.full(len(x), k, dtype=np.int64), name))
    table = pd.concat(frames, ignore_index=True)
    for tag, group in table.groupby("dataset", sort=True):
        print_success(f"{tag}: n={len(group)} mean norm {group['norm'].mean():.4f} "
                      f"mean s_uno {group['s_uno'].mean():.4f}")

    print_step(3, "Writing diagnostics")
    out = Path(args.out) if args.out else settings.run_dir("diagnose")
    out.mkdir(parents=True, exist_ok=True)
    table.to_csv(out / "samples.csv", index=False)
    cos = class_vector_cosines(model.head)
    labels = [f"c{i}" for i in range(cos.shape[0])]
    pd.DataFrame(cos, index=labels, columns=labels).to_csv(out / "cosine_matrix.csv", index_label="class")
    print_success(f"samples.csv ({len(table)} rows) and cosine_matrix.csv written to {out}")
    return 0


# ----------------------------
# Parser
# ----------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="uno_cli.py", description="UNO open-set recognition toolkit")
    p.add_argument("--log-level", default=None, help="Logging level (default: UNO_LOG_LEVEL or INFO)")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="Sample a synthetic dataset bundle")
    g.add_argument("--spec", default=None, help="JSON dataset spec (SynthSpec keys)")
    g.add_argument("--out", required=True, help="Output bundle directory")
    g.add_argument("--set", action="append", metavar="KEY=VALUE", help="Override a spec key (repeatable)")
    g.set_defaults(handler=cmd_gen_data)

    t = sub.add_parser("train", help="Run a training regime")
    t.add_argument("regime", choices=REGIMES)
    t.add_argument("--data", required=True, help="Bundle directory written by gen-data")
    t.add_argument("--config", default=None, help="JSON training config")
    t.add_argument("--out", default=None, help="Run directory (default: UNO_OUTPUT_DIR/<regime>)")
    t.add_argument("--model", default=None, help="Closed-set checkpoint for finetune-real and ood-head")
    t.add_argument("--negatives", choices=("real", "flow"), default=None, help="Dense negatives source")
    t.add_argument("--set", action="append", metavar="KEY=VALUE", help="Override a config key (repeatable)")
    t.set_defaults(handler=cmd_train)

    e = sub.add_parser("eval", help="Score held-out data and write a metric report")
    e.add_argument("--model", required=True, help="Checkpoint directory")
    e.add_argument("--data", required=True, help="Bundle directory")
    e.add_argument("--score", choices=tuple(SCORE_FIELDS), default="uno", help="Outlier score")
    e.add_argument("--out", required=True, help="Report JSON path")
    e.add_argument("--exclude-no-object", action="store_true",
                   help="Drop the no-object logit from the scoring softmax (dense heads)")
    e.add_argument("--workers", type=int, default=None, help="Threads across outlier sets (default: UNO_WORKERS)")
    e.set_defaults(handler=cmd_eval)

    d = sub.add_parser("diagnose", help="Dump per-sample scores, norms, angles and the cosine matrix")
    d.add_argument("--model", required=True, help="Image-wide checkpoint directory")
    d.add_argument("--data", required=True, help="Bundle directory")
    d.add_argument("--out", default=None, help="Output directory (default: UNO_OUTPUT_DIR/diagnose)")
    d.set_defaults(handler=cmd_diagnose)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        settings = RuntimeSettings()
        configure_logging(args.log_level or settings.log_level)
        if getattr(args, "workers", None) is not None and args.workers < 1:
            raise ConfigurationError(f"--workers must be >= 1, got {args.workers}")
        return args.handler(args, settings)
    except (UnoError, OSError) as e:
        print_error(str(e))
        return 1


if __name__ == "__main__":
    sys.exit(main())
