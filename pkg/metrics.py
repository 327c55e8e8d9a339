"""
Evaluation metrics with outliers as the positive class.

- auroc: Mann-Whitney U with midranks (ties credit 0.5)
- average_precision: precision averaged at each positive, stable descending order
- fpr_at_tpr: "score >= t" is flagged; t is the largest score reaching the TPR target
- miou: mean IoU over inlier classes present in the ground truth
"""
from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Optional, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, field_validator
from scipy.stats import rankdata
from sklearn import metrics as skm

from uno_errors import DegenerateLabelsError, NonFiniteError, ShapeMismatchError, UndefinedCorrelationError

logger = logging.getLogger(__name__)

VOID = -1
REPORT_KEYS = ("auroc", "ap", "fpr95", "accuracy", "miou", "pearson", "n_pos", "n_neg")


def scored_set(scores, labels) -> Tuple[np.ndarray, np.ndarray]:
    """Validate a (scores, binary labels) pair; at least one positive and one negative."""
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel()
    if s.shape != y.shape:
        raise ShapeMismatchError(f"{s.size} scores vs {y.size} labels")
    if not np.all(np.isfinite(s)):
        raise NonFiniteError("scores contain NaN or inf")
    if not np.all((y == 0) | (y == 1)):
        raise DegenerateLabelsError("labels must be binary (1 = outlier)")
    y = y.astype(bool)
    n_pos = int(y.sum())
    if n_pos == 0 or n_pos == y.size:
        raise DegenerateLabelsError(f"need both classes, got {n_pos} positives out of {y.size}")
    return s, y


def auroc(scores, labels) -> float:
    s, y = scored_set(scores, labels)
    ranks = rankdata(s, method="average")
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    u = ranks[y].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def average_precision(scores, labels) -> float:
    s, y = scored_set(scores, labels)
    order = np.argsort(-s, kind="stable")
    hits = y[order]
    precision = np.cumsum(hits) / np.arange(1, hits.size + 1)
    return float(precision[hits].mean())


def fpr_at_tpr(scores, labels, tpr_target: float = 0.95) -> float:
    s, y = scored_set(scores, labels)
    fpr, tpr, _ = skm.roc_curve(y.astype(np.int64), s, drop_intermediate=False)
    # thresholds descend, so the first point reaching the target has the largest such threshold
    return float(fpr[int(np.argmax(tpr >= tpr_target))])


def roc_curve(scores, labels) -> pd.DataFrame:
    """ROC points at every distinct threshold, starting from (inf, 0, 0)."""
    s, y = scored_set(scores, labels)
    fpr, tpr, thresholds = skm.roc_curve(y.astype(np.int64), s, drop_intermediate=False)
    return pd.DataFrame({"threshold": thresholds, "tpr": tpr, "fpr": fpr})


def pr_curve(scores, labels) -> pd.DataFrame:
    """Precision and recall of ``score >= t``, thresholds descending."""
    s, y = scored_set(scores, labels)
    precision, recall, thresholds = skm.precision_recall_curve(y.astype(np.int64), s)
    frame = pd.DataFrame({"threshold": thresholds, "recall": recall[:-1], "precision": precision[:-1]})
    return frame.iloc[::-1].reset_index(drop=True)


def accuracy(pred, target) -> float:
    pred = np.asarray(pred)
    target = np.asarray(target)
    if pred.shape != target.shape:
        raise ShapeMismatchError(f"prediction {pred.shape} vs target {target.shape}")
    if pred.size == 0:
        raise DegenerateLabelsError("accuracy of an empty set")
    return float(np.mean(pred == target))


def miou(pred, gt, num_inlier: int) -> float:
    """Mean IoU over the classes present in the ground truth.

    Ground-truth pixels outside 0..K-1 (VOID, pasted outliers) are ignored.
    """
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ShapeMismatchError(f"prediction {pred.shape} vs ground truth {gt.shape}")
    valid = (gt >= 0) & (gt < num_inlier)
    if not valid.any():
        raise DegenerateLabelsError("no valid ground-truth pixels for mIoU")
    p = pred[valid]
    g = gt[valid]
    ious = []
    for k in np.unique(g):
        inter = np.sum((p == k) & (g == k))
        union = np.sum((p == k) | (g == k))
        ious.append(inter / union)
    return float(np.mean(ious))


def pearson(a, b) -> float:
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape or a.size < 2:
        raise ShapeMismatchError(f"pearson needs two equal-length series of >= 2 values, got {a.size} and {b.size}")
    da = a - a.mean()
    db = b - b.mean()
    na = np.sqrt(np.sum(da * da))
    nb = np.sqrt(np.sum(db * db))
    if na == 0.0 or nb == 0.0:
        raise UndefinedCorrelationError("pearson correlation is undefined for a constant series")
    return float(np.clip(np.sum(da * db) / (na * nb), -1.0, 1.0))


# ----------------------------
# Reports
# ----------------------------

class MetricReport(BaseModel):
    model_config = ConfigDict(extra="forbid")

    auroc: float
    ap: float
    fpr95: float
    accuracy: Optional[float] = None
    miou: Optional[float] = None
    pearson: Optional[float] = None
    n_pos: int
    n_neg: int

    @field_validator("auroc", "ap", "fpr95", "accuracy", "miou")
    @classmethod
    def _rate(cls, v: Optional[float]) -> Optional[float]:
        if v is not None and not 0.0 <= v <= 1.0:
            raise ValueError(f"rate {v} outside [0, 1]")
        return v


def build_report(scores, labels, accuracy: Optional[float] = None, miou: Optional[float] = None,
                 pearson: Optional[float] = None, tpr_target: float = 0.95) -> MetricReport:
    s, y = scored_set(scores, labels)
    report = MetricReport(
        auroc=auroc(s, y),
        ap=average_precision(s, y),
        fpr95=fpr_at_tpr(s, y, tpr_target),
        accuracy=accuracy,
        miou=miou,
        pearson=pearson,
        n_pos=int(y.sum()),
        n_neg=int((~y).sum()),
    )
    logger.debug("report auroc=%.4f ap=%.4f fpr95=%.4f", report.auroc, report.ap, report.fpr95)
    return report


def report_dict(report: MetricReport) -> dict:
    return {key: getattr(report, key) for key in REPORT_KEYS}


def write_json(path: Path, payload: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, ensure_ascii=False, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def write_curves(directory: Path, prefix: str, scores, labels) -> Tuple[Path, Path]:
    """<prefix>_roc.csv (threshold, tpr, fpr) and <prefix>_pr.csv (threshold, recall, precision)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    roc_path = directory / f"{prefix}_roc.csv"
    pr_path = directory / f"{prefix}_pr.csv"
    roc_curve(scores, labels).to_csv(roc_path, index=False)
    pr_curve(scores, labels).to_csv(pr_path, index=False)
    return roc_path, pr_path


def score_histogram(scores, labels, bins: int = 30) -> pd.DataFrame:
    """Inlier and outlier counts over shared bin edges."""
    s, y = scored_set(scores, labels)
    edges = np.histogram_bin_edges(s, bins=bins)
    inl, _ = np.histogram(s[~y], bins=edges)
    out, _ = np.histogram(s[y], bins=edges)
    return pd.DataFrame({"bin_left": edges[:-1], "bin_right": edges[1:], "inlier": inl, "outlier": out})
