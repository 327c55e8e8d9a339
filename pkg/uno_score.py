"""
UNO outlier scores over a K+1-way (image-wide) or K+2-way (dense) head.

  s_no  = P(negative | z)
  s_unc = -max_{k < K} P(k | z), the softmax denominator including the negative logit
  s_uno = s_unc + s_no

Higher means more outlier. Scores are evaluated with the head bias included.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Dict, Optional

import numpy as np
import pandas as pd
from scipy.special import softmax

from metrics import pearson
from openset_net import ClassifierHead, OpenSetModel
from uno_errors import ConfigurationError, ShapeMismatchError, UndefinedAngleError


@dataclass(frozen=True)
class ScoreTriple:
    s_no: float
    s_unc: float
    s_uno: float


@dataclass(frozen=True)
class ScoreArrays:
    s_no: np.ndarray
    s_unc: np.ndarray
    s_uno: np.ndarray

    def get(self, name: str) -> np.ndarray:
        return getattr(self, SCORE_FIELDS[name])


@dataclass(frozen=True)
class GeometryDiag:
    feature_norm: float
    angle_to_negative: float
    winning_inlier_class: int


SCORE_FIELDS: Dict[str, str] = {"uno": "s_uno", "unc": "s_unc", "no": "s_no"}


def _require_negative(head: ClassifierHead) -> int:
    idx = head.negative_index
    if idx is None or head.num_classes < head.num_inlier + 1:
        raise ConfigurationError(
            f"head with {head.num_classes} classes ({head.convention}) has no negative class at index {head.num_inlier}"
        )
    return idx


def head_probabilities(z: np.ndarray, head: ClassifierHead, include_no_object: bool = True) -> np.ndarray:
    """Softmax over the head; optionally drop the no-object logit from the denominator."""
    logits = head.logits(z)
    no_obj = head.no_object_index
    if not include_no_object and no_obj is not None and head.negative_index is not None:
        logits = np.delete(logits, no_obj, axis=-1)
    return softmax(logits, axis=-1)


def scores_from_probs(p: np.ndarray, num_inlier: int, negative_index: Optional[int] = None) -> ScoreArrays:
    neg = num_inlier if negative_index is None else negative_index
    s_no = np.asarray(p[..., neg], dtype=np.float64)
    s_unc = -np.max(p[..., :num_inlier], axis=-1)
    return ScoreArrays(s_no=s_no, s_unc=s_unc, s_uno=s_unc + s_no)


def scores_from_logits(logits: np.ndarray, num_inlier: int, negative_index: Optional[int] = None) -> ScoreArrays:
    """Scores from raw logits of any head with a negative column."""
    return scores_from_probs(softmax(np.asarray(logits, dtype=np.float64), axis=-1), num_inlier, negative_index)


def score_batch(z: np.ndarray, head: ClassifierHead, include_no_object: bool = True) -> ScoreArrays:
    _require_negative(head)
    return scores_from_probs(head_probabilities(z, head, include_no_object), head.num_inlier)


def s_uno(z: np.ndarray, head: ClassifierHead, include_no_object: bool = True) -> ScoreTriple:
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 1:
        raise ShapeMismatchError(f"s_uno scores one pre-logit vector, got shape {z.shape}")
    arr = score_batch(z[None, :], head, include_no_object)
    return ScoreTriple(s_no=float(arr.s_no[0]), s_unc=float(arr.s_unc[0]), s_uno=float(arr.s_uno[0]))


def s_no(z: np.ndarray, head: ClassifierHead, include_no_object: bool = True) -> float:
    return s_uno(z, head, include_no_object).s_no


def s_unc(z: np.ndarray, head: ClassifierHead, include_no_object: bool = True) -> float:
    return s_uno(z, head, include_no_object).s_unc


def mask_scores(mask_prelogits: np.ndarray, head: ClassifierHead, include_no_object: bool = True) -> ScoreArrays:
    if head.convention != "dense":
        raise ConfigurationError(f"mask-level scores need a K+2-way dense head, got {head.convention}")
    return score_batch(mask_prelogits, head, include_no_object)


def aggregate_masks(masks: np.ndarray, per_mask: np.ndarray) -> np.ndarray:
    """score[r, c] = sum_i masks[i, r, c] * per_mask[i], accumulated in mask order."""
    masks = np.asarray(masks, dtype=np.float64)
    per_mask = np.asarray(per_mask, dtype=np.float64)
    if masks.ndim != 3 or per_mask.shape != (masks.shape[0],):
        raise ShapeMismatchError(f"{masks.shape[0] if masks.ndim == 3 else '?'} masks vs {per_mask.shape} scores")
    out = np.zeros(masks.shape[1:])
    for i in range(masks.shape[0]):
        out += masks[i] * per_mask[i]
    return out


def dense_uno(masks: np.ndarray, mask_prelogits: np.ndarray, head: ClassifierHead,
              include_no_object: bool = True, score: str = "uno") -> np.ndarray:
    """Per-pixel score map weighted by the (unnormalized) soft masks."""
    masks = np.asarray(masks, dtype=np.float64)
    mask_prelogits = np.asarray(mask_prelogits, dtype=np.float64)
    if masks.ndim != 3 or mask_prelogits.ndim != 2 or masks.shape[0] != mask_prelogits.shape[0]:
        raise ShapeMismatchError(f"masks {masks.shape} and mask pre-logits {mask_prelogits.shape} do not match")
    per_mask = mask_scores(mask_prelogits, head, include_no_object).get(score)
    return aggregate_masks(masks, per_mask)


def geometry(z: np.ndarray, head: ClassifierHead) -> GeometryDiag:
    """Norm of z, angle between z and the negative class vector, winning inlier class.

    The angle of z = 0 is taken as pi/2.
    """
    neg = _require_negative(head)
    z = np.asarray(z, dtype=np.float64)
    w = head.W.data[neg]
    w_norm = float(np.linalg.norm(w))
    if w_norm == 0.0:
        raise UndefinedAngleError("negative class vector is zero")
    z_norm = float(np.linalg.norm(z))
    if z_norm == 0.0:
        angle = float(np.pi / 2)
    else:
        angle = float(np.arccos(np.clip(float(z @ w) / (z_norm * w_norm), -1.0, 1.0)))
    winner = int(np.argmax(head.logits(z)[: head.num_inlier]))
    return GeometryDiag(feature_norm=z_norm, angle_to_negative=angle, winning_inlier_class=winner)


def geometry_batch(z: np.ndarray, head: ClassifierHead) -> Dict[str, np.ndarray]:
    diags = [geometry(row, head) for row in np.asarray(z, dtype=np.float64)]
    return {
        "norm": np.array([d.feature_norm for d in diags]),
        "angle": np.array([d.angle_to_negative for d in diags]),
        "winner": np.array([d.winning_inlier_class for d in diags], dtype=np.int64),
    }


def component_correlation(scores_a, scores_b) -> float:
    return pearson(scores_a, scores_b)


# Alternative formulation: K-way classifier plus a separate OOD head.

def ood_head_scores(class_logits: np.ndarray, ood_logits: np.ndarray, num_inlier: int,
                    outlier_index: int = 1) -> ScoreArrays:
    """s_no from the OOD head's outlier posterior, s_unc from the classifier's inlier posteriors."""
    p_cls = softmax(np.asarray(class_logits, dtype=np.float64), axis=-1)
    p_ood = softmax(np.asarray(ood_logits, dtype=np.float64), axis=-1)
    s_no_ = p_ood[..., outlier_index]
    s_unc_ = -np.max(p_cls[..., :num_inlier], axis=-1)
    return ScoreArrays(s_no=s_no_, s_unc=s_unc_, s_uno=s_unc_ + s_no_)


ScoreFn = Callable[[np.ndarray, ClassifierHead], np.ndarray]


def score_by_name(name: str) -> ScoreFn:
    if name not in SCORE_FIELDS:
        raise ConfigurationError(f"unknown score '{name}' (choose from {', '.join(SCORE_FIELDS)})")
    return lambda z, head: score_batch(z, head).get(name)


def _frame(arr: ScoreArrays, norm: np.ndarray, angle: np.ndarray, labels: np.ndarray,
           tag: Optional[str]) -> pd.DataFrame:
    frame = pd.DataFrame({
        "sample_id": np.arange(len(arr.s_uno)),
        "s_no": arr.s_no,
        "s_unc": arr.s_unc,
        "s_uno": arr.s_uno,
        "norm": norm,
        "angle": angle,
        "label": np.asarray(labels, dtype=np.int64),
    })
    if tag is not None:
        frame["dataset"] = tag
    return frame


def score_frame(z: np.ndarray, head: ClassifierHead, labels: np.ndarray, tag: Optional[str] = None) -> pd.DataFrame:
    """Per-sample score dump: sample_id, s_no, s_unc, s_uno, norm, angle, label (and dataset)."""
    geo = geometry_batch(z, head)
    return _frame(score_batch(z, head), geo["norm"], geo["angle"], labels, tag)


def model_scores(model: OpenSetModel, x: np.ndarray, include_no_object: bool = True) -> ScoreArrays:
    """Scores of raw inputs under an image-wide model, with or without a separate OOD head."""
    z = model.prelogits(x)
    if model.ood_head is not None:
        return ood_head_scores(model.head.logits(z), model.ood_head.logits(z), model.num_inlier)
    return score_batch(z, model.head, include_no_object)


def model_score_frame(model: OpenSetModel, x: np.ndarray, labels: np.ndarray,
                      tag: Optional[str] = None) -> pd.DataFrame:
    """score_frame for raw inputs. OOD-head models have no negative class vector, so their angle is NaN."""
    z = model.prelogits(x)
    if model.ood_head is None:
        return score_frame(z, model.head, labels, tag)
    arr = ood_head_scores(model.head.logits(z), model.ood_head.logits(z), model.num_inlier)
    return _frame(arr, np.linalg.norm(z, axis=1), np.full(len(z), np.nan), labels, tag)
