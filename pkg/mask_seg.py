"""
Toy mask-level recognition.

A per-pixel MLP maps scene inputs to features E [P, F]. N learnable queries
give mask logits q . E and sigmoid masks; each mask's pre-logit z_i comes from
the mask-pooled features concatenated with its query. A linear head classifies
every mask:

- dense-closed: K inlier classes, no-object at K
- dense: K inlier classes, negative at K, no-object at K+1

Training matches queries to ground-truth regions (Hungarian on class NLL plus
mask BCE); unmatched queries target no-object. Negative pixels count as
background (target 0) for masks matched to inlier regions, VOID pixels carry
no weight.
"""
from __future__ import annotations

import copy
import itertools
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.optimize import linear_sum_assignment
from scipy.special import expit, log_softmax, softmax

import metrics
from gradcore import MLP, SGD, Tensor, as_tensor, backward, concat, load_named, no_grad, parameter
from nflow import FlowModel
from openset_net import ClassifierHead, extend_head
from synthgen import VOID, DenseScene, streams
from tensor_io import TensorManifest, load_manifest_dir, save_manifest_dir
from trainers import jsd_uniform
from uno_config import DenseConfig
from uno_errors import ConfigurationError, LabelRangeError, NonFiniteError, ShapeMismatchError
from uno_score import aggregate_masks, mask_scores, ood_head_scores as _ood_scores

logger = logging.getLogger(__name__)

OOD_INLIER, OOD_OUTLIER, OOD_NO_OBJECT = 0, 1, 2


@dataclass
class DenseFeatures:
    E: np.ndarray  # [F, H, W]

    def __post_init__(self):
        if not np.all(np.isfinite(self.E)):
            raise NonFiniteError("dense features must be finite")


@dataclass
class MaskSet:
    queries: np.ndarray       # [N, F]
    mask_logits: np.ndarray   # [N, H, W]
    masks: np.ndarray         # [N, H, W]
    prelogits: np.ndarray     # [N, d]
    posteriors: np.ndarray    # [N, C]
    ood_posteriors: Optional[np.ndarray] = None

    @property
    def num_masks(self) -> int:
        return self.masks.shape[0]


@dataclass
class DenseForward:
    features: Tensor       # [P, F]
    mask_logits: Tensor    # [N, P]
    z: Tensor              # [N, d]
    class_logits: Tensor   # [N, C]
    ood_logits: Optional[Tensor] = None


@dataclass
class Matching:
    """region j is matched to query ``rows[j]``; ``targets[i]`` is the class target of query i."""

    rows: np.ndarray
    cols: np.ndarray
    targets: np.ndarray
    cost: float


@dataclass
class DenseLosses:
    l_class: float
    l_mask: float
    mask_weight: float = 1.0
    l_ood: float = 0.0
    total: float = field(init=False)

    def __post_init__(self):
        self.total = self.l_class + self.mask_weight * self.l_mask + self.l_ood


# ----------------------------
# Model
# ----------------------------

class DenseModel:
    def __init__(self, in_dim: int, num_inlier: int, cfg: DenseConfig, rng: Optional[np.random.Generator] = None,
                 with_ood_head: bool = False):
        self.in_dim = in_dim
        self.num_inlier = num_inlier
        self.pixel_hidden = cfg.pixel_hidden
        self.embed_dim = cfg.embed_dim
        self.mask_dim = cfg.mask_dim
        self.num_queries = cfg.num_queries
        self.pixel_mlp = MLP([in_dim, cfg.pixel_hidden, cfg.embed_dim], rng)
        q = rng.normal(0.0, cfg.query_init_std, (cfg.num_queries, cfg.embed_dim)) if rng is not None \
            else np.zeros((cfg.num_queries, cfg.embed_dim))
        self.queries = parameter(q, name="queries")
        self.mask_mlp = MLP([2 * cfg.embed_dim, cfg.pixel_hidden, cfg.mask_dim], rng)
        if rng is not None:
            self.head = ClassifierHead.init(num_inlier + 1, cfg.mask_dim, num_inlier, rng, convention="dense-closed")
        else:
            self.head = ClassifierHead(np.zeros((num_inlier + 1, cfg.mask_dim)), np.zeros(num_inlier + 1),
                                       num_inlier, "dense-closed")
        self.ood_head: Optional[ClassifierHead] = None
        if with_ood_head:
            attach_ood_head(self, rng)

    def pixel_features(self, x_flat) -> Tensor:
        x = as_tensor(x_flat)
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ShapeMismatchError(f"pixel inputs must be [P, {self.in_dim}], got {x.shape}")
        return self.pixel_mlp(x)

    def embed(self, masks: Tensor, features: Tensor) -> Tensor:
        """z_i from mask-averaged features and the query embedding."""
        pooled = (masks @ features).T / masks.sum(axis=-1)
        return self.mask_mlp(concat([pooled.T, self.queries], axis=1))

    def forward(self, x_flat) -> DenseForward:
        e = self.pixel_features(x_flat)
        mask_logits = self.queries @ e.T
        z = self.embed(mask_logits.sigmoid(), e)
        ood = self.ood_head(z) if self.ood_head is not None else None
        return DenseForward(e, mask_logits, z, self.head(z), ood)

    def named_parameters(self) -> Dict[str, Tensor]:
        out = self.pixel_mlp.named_parameters("pixel.")
        out["queries"] = self.queries
        out.update(self.mask_mlp.named_parameters("mask."))
        out.update(self.head.named_parameters("head."))
        if self.ood_head is not None:
            out.update(self.ood_head.named_parameters("ood_head."))
        return out

    def parameters(self) -> List[Tensor]:
        return list(self.named_parameters().values())


def attach_ood_head(model: DenseModel, rng: Optional[np.random.Generator]) -> DenseModel:
    """Three outputs beside the mask classifier: inlier, outlier, no-object."""
    if rng is None:
        model.ood_head = ClassifierHead(np.zeros((3, model.mask_dim)), np.zeros(3), model.num_inlier)
    else:
        model.ood_head = ClassifierHead.init(3, model.mask_dim, model.num_inlier, rng)
    return model


def extend_dense_head(model: DenseModel) -> DenseModel:
    """Insert a zero-initialized negative class at K, ahead of no-object."""
    out = copy.deepcopy(model)
    out.head = extend_head(model.head, 1, insert_at=model.num_inlier, convention="dense")
    return out


def scene_pixels(scene: DenseScene) -> Tuple[np.ndarray, np.ndarray]:
    """Inputs as [P, F0] rows in row-major pixel order, labels as [P]."""
    f0 = scene.inputs.shape[0]
    return scene.inputs.reshape(f0, -1).T, scene.labels.reshape(-1)


def closed_view(scene: DenseScene, num_inlier: int) -> DenseScene:
    """Negative pixels become VOID."""
    labels = np.where(scene.labels >= num_inlier, VOID, scene.labels)
    return DenseScene(scene.inputs, labels, scene.patches)


# ----------------------------
# Inference
# ----------------------------

def mask_logit_map(queries: np.ndarray, E: np.ndarray) -> np.ndarray:
    """[N, H, W] inner products, accumulated feature by feature."""
    queries = np.asarray(queries, dtype=np.float64)
    E = np.asarray(E, dtype=np.float64)
    if queries.ndim != 2 or E.ndim != 3 or queries.shape[1] != E.shape[0]:
        raise ShapeMismatchError(f"queries {queries.shape} do not match features {E.shape}")
    acc = np.zeros((queries.shape[0],) + E.shape[1:])
    for f in range(E.shape[0]):
        acc += queries[:, f, None, None] * E[f]
    return acc


def dense_features(scene: DenseScene, model: DenseModel) -> DenseFeatures:
    x, _ = scene_pixels(scene)
    with no_grad():
        e = model.pixel_features(x).data
    h, w = scene.shape
    return DenseFeatures(e.T.reshape(-1, h, w))


def predict_masks(scene: DenseScene, model: DenseModel) -> MaskSet:
    feats = dense_features(scene, model)
    queries = model.queries.data
    logits = mask_logit_map(queries, feats.E)
    masks = expit(logits)
    n = masks.shape[0]
    with no_grad():
        e_flat = Tensor(feats.E.reshape(feats.E.shape[0], -1).T)
        z = model.embed(Tensor(masks.reshape(n, -1)), e_flat).data
    ood = softmax(model.ood_head.logits(z), axis=-1) if model.ood_head is not None else None
    return MaskSet(queries.copy(), logits, masks, z, softmax(model.head.logits(z), axis=-1), ood)


def semantic_segment(maskset: MaskSet, num_inlier: int) -> np.ndarray:
    """argmax_k sum_i m_i * P(k | z_i) over inlier classes; ties go to the lowest index."""
    masks = maskset.masks
    probs = maskset.posteriors[:, :num_inlier]
    acc = np.zeros((num_inlier,) + masks.shape[1:])
    for i in range(masks.shape[0]):
        acc += masks[i][None, :, :] * probs[i, :, None, None]
    return np.argmax(acc, axis=0)


def score_maps(scene: DenseScene, model: DenseModel, include_no_object: bool = True) -> Dict[str, np.ndarray]:
    """Per-pixel s_uno, s_unc and s_no maps."""
    maskset = predict_masks(scene, model)
    if model.ood_head is not None:
        per_mask = _ood_scores(model.head.logits(maskset.prelogits), model.ood_head.logits(maskset.prelogits),
                               model.num_inlier, OOD_OUTLIER)
    else:
        per_mask = mask_scores(maskset.prelogits, model.head, include_no_object)
    return {name: aggregate_masks(maskset.masks, per_mask.get(name)) for name in ("uno", "unc", "no")}


def ood_head_scores(scene: DenseScene, model: DenseModel) -> Dict[str, np.ndarray]:
    if model.ood_head is None:
        raise ConfigurationError("model has no OOD head attached")
    return score_maps(scene, model)


# ----------------------------
# Matching
# ----------------------------

def assign(cost: np.ndarray) -> Tuple[np.ndarray, np.ndarray, float]:
    """Minimum-cost assignment of every column (region) to a distinct row (query)."""
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2:
        raise ShapeMismatchError(f"cost matrix must be 2D, got {cost.shape}")
    if cost.shape[1] > cost.shape[0]:
        raise ConfigurationError(f"{cost.shape[1]} regions cannot be matched to {cost.shape[0]} queries")
    rows, cols = linear_sum_assignment(cost)
    order = np.argsort(cols)
    rows, cols = rows[order], cols[order]
    return rows, cols, float(cost[rows, cols].sum())


def brute_force_assign(cost: np.ndarray) -> float:
    """Exhaustive minimum over injective region -> query maps."""
    cost = np.asarray(cost, dtype=np.float64)
    n, r = cost.shape
    best = np.inf
    for perm in itertools.permutations(range(n), r):
        best = min(best, float(sum(cost[perm[j], j] for j in range(r))))
    return best


def mask_bce_np(mask_logits: np.ndarray, target: np.ndarray, valid: np.ndarray) -> np.ndarray:
    """Mean BCE over valid pixels for every (mask, target) pair -> [N, R]."""
    l = mask_logits[:, None, :]
    t = target[None, :, :]
    per = np.logaddexp(0.0, l) - t * l
    w = valid.astype(np.float64)
    return (per * w).sum(axis=-1) / max(w.sum(), 1.0)


def matching_cost(mask_logits: np.ndarray, class_logp: np.ndarray, region_labels: np.ndarray,
                  region_masks: np.ndarray, valid: np.ndarray) -> np.ndarray:
    """[N, R] classification NLL plus mask BCE."""
    nll = -class_logp[:, region_labels]
    return nll + mask_bce_np(mask_logits, region_masks.astype(np.float64), valid)


def match_masks(mask_logits: np.ndarray, class_logp: np.ndarray, region_labels: Sequence[int],
                region_masks: np.ndarray, valid: np.ndarray, no_object: int) -> Matching:
    region_labels = np.asarray(region_labels, dtype=np.int64)
    n = mask_logits.shape[0]
    targets = np.full(n, no_object, dtype=np.int64)
    if region_labels.size == 0:
        return Matching(np.empty(0, np.int64), np.empty(0, np.int64), targets, 0.0)
    cost = matching_cost(mask_logits, class_logp, region_labels, region_masks, valid)
    rows, cols, total = assign(cost)
    targets[rows] = region_labels[cols]
    return Matching(rows, cols, targets, total)


# ----------------------------
# Losses
# ----------------------------

def mask_bce(mask_logits: Tensor, target: np.ndarray, valid: np.ndarray) -> Tensor:
    """BCE of sigmoid(mask_logits) against 0/1 targets, averaged over rows and valid pixels.

    Uses log_softmax over the pair [0, l], whose entries are log(1 - sigmoid(l)) and log(sigmoid(l)).
    """
    m, p = mask_logits.shape
    w = np.tile(valid.astype(np.float64), m)
    if m == 0 or w.sum() == 0:
        return Tensor(0.0)
    flat = mask_logits.reshape(m * p, 1)
    logp = concat([Tensor(np.zeros((m * p, 1))), flat], axis=1).log_softmax()
    t = np.asarray(target, dtype=np.float64).reshape(-1)
    onehot = np.stack([1.0 - t, t], axis=1)
    per_pixel = -(logp * onehot).sum(axis=-1)
    return (per_pixel * w).sum() / float(w.sum())


def _class_nll(logits: Tensor, targets: np.ndarray) -> Tensor:
    if len(targets) == 0:
        return Tensor(0.0)
    logp = logits.log_softmax()
    return -logp[(np.arange(len(targets)), targets)].mean()


def _check_labels(region_labels: np.ndarray, allowed: int) -> None:
    if region_labels.size and (region_labels.min() < 0 or region_labels.max() >= allowed):
        raise LabelRangeError(f"region labels must lie in 0..{allowed - 1}, got {region_labels.tolist()}")


def dense_loss(scene: DenseScene, model: DenseModel, mask_weight: float = 1.0) -> Tuple[Tensor, DenseLosses]:
    """Matched set loss of one scene under the model's current head."""
    k = model.num_inlier
    closed = model.head.convention == "dense-closed"
    x, labels = scene_pixels(scene)
    regions = scene.regions()
    region_labels = np.array([r.label for r in regions], dtype=np.int64)
    region_masks = np.array([r.mask.reshape(-1) for r in regions]).reshape(len(regions), -1)
    allowed = k if closed and model.ood_head is None else k + 1
    _check_labels(region_labels, allowed)
    valid = labels != VOID

    fwd = model.forward(x)
    no_object = model.head.no_object_index
    logp = log_softmax(fwd.class_logits.data, axis=-1)
    if model.ood_head is not None:
        # negative regions are costed by the OOD head; the mask classifier never sees them
        ood_logp = log_softmax(fwd.ood_logits.data, axis=-1)
        logp = np.concatenate([logp[:, :k], ood_logp[:, OOD_OUTLIER:OOD_OUTLIER + 1], logp[:, k:]], axis=1)
        # targets live in the K+2 space here: negative K, no-object K+1
        match = match_masks(fwd.mask_logits.data, logp, region_labels, region_masks, valid, k + 1)
    else:
        match = match_masks(fwd.mask_logits.data, logp, region_labels, region_masks, valid, no_object)
    targets = match.targets
    if targets.max(initial=0) > k + 1:
        raise LabelRangeError(f"query targets {targets.tolist()} exceed the head")

    if model.ood_head is not None:
        keep = np.flatnonzero(targets != k)
        class_t = np.where(targets[keep] == k + 1, no_object, targets[keep])
        l_class = _class_nll(fwd.class_logits[keep], class_t)
        ood_t = np.where(targets < k, OOD_INLIER, np.where(targets == k, OOD_OUTLIER, OOD_NO_OBJECT))
        l_ood = _class_nll(fwd.ood_logits, ood_t)
    else:
        l_class = _class_nll(fwd.class_logits, targets)
        l_ood = None

    if match.rows.size:
        l_mask = mask_bce(fwd.mask_logits[match.rows], region_masks[match.cols], valid)
    else:
        l_mask = Tensor(0.0)
    total = l_class + l_mask * mask_weight
    if l_ood is not None:
        total = total + l_ood
    losses = DenseLosses(l_class.item(), l_mask.item(), mask_weight, l_ood.item() if l_ood is not None else 0.0)
    return total, losses


def dense_train_step(scenes: Sequence[DenseScene], model: DenseModel, opt: SGD,
                     mask_weight: float = 1.0) -> DenseLosses:
    """One SGD step on the scene-averaged set loss."""
    totals: List[Tensor] = []
    parts: List[DenseLosses] = []
    for scene in scenes:
        total, losses = dense_loss(scene, model, mask_weight)
        totals.append(total)
        parts.append(losses)
    loss = totals[0]
    for t in totals[1:]:
        loss = loss + t
    loss = loss * (1.0 / len(totals))
    opt.step(backward(loss))
    n = float(len(parts))
    return DenseLosses(sum(p.l_class for p in parts) / n, sum(p.l_mask for p in parts) / n, mask_weight,
                       sum(p.l_ood for p in parts) / n)


# ----------------------------
# Training
# ----------------------------

@dataclass
class DenseTrainResult:
    model: DenseModel
    log: pd.DataFrame
    flow: Optional[FlowModel] = None


def _opt(model: DenseModel, cfg: DenseConfig) -> SGD:
    return SGD(model.parameters(), lr=cfg.lr, momentum=cfg.momentum, weight_decay=cfg.weight_decay,
               max_grad_norm=cfg.max_grad_norm)


def _run(model: DenseModel, scenes: Sequence[DenseScene], steps: int, cfg: DenseConfig, rng: np.random.Generator,
         phase: str, rows: List[dict], prepare=None) -> DenseModel:
    opt = _opt(model, cfg)
    for step in range(steps):
        picked = [scenes[i] for i in rng.integers(0, len(scenes), size=cfg.scenes_per_step)]
        if prepare is not None:
            picked = [prepare(s) for s in picked]
        losses = dense_train_step(picked, model, opt, cfg.mask_weight)
        rows.append({"step": step, "phase": phase, "l_class": losses.l_class, "l_mask": losses.l_mask,
                     "l_ood": losses.l_ood, "total": losses.total})
        if cfg.log_every and step % cfg.log_every == 0:
            logger.info("%s step %d: total=%.4f class=%.4f mask=%.4f", phase, step, losses.total,
                        losses.l_class, losses.l_mask)
    return model


def pretrain_dense_closed(scenes: Sequence[DenseScene], num_inlier: int, cfg: DenseConfig,
                          rows: Optional[List[dict]] = None) -> DenseModel:
    """K inlier classes plus no-object; negative pixels are ignored."""
    if not scenes:
        raise ConfigurationError("dense training needs at least one scene")
    rngs = streams(cfg.seed, ("init", "scenes"))
    model = DenseModel(scenes[0].inputs.shape[0], num_inlier, cfg, rngs["init"])
    closed = [closed_view(s, num_inlier) for s in scenes]
    return _run(model, closed, cfg.closed_steps, cfg, rngs["scenes"], "dense-closed", rows if rows is not None else [])


def patch_selector(scene: DenseScene, box: Sequence[int]) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Inputs with the box zeroed, a [P, n] one-hot matrix placing n patch pixels, and their flat indices."""
    r, c, ph, pw = (int(v) for v in box)
    h, w = scene.shape
    x, _ = scene_pixels(scene)
    idx = np.array([(r + i) * w + (c + j) for i in range(ph) for j in range(pw)], dtype=np.int64)
    base = x.copy()
    base[idx] = 0.0
    sel = np.zeros((h * w, idx.size))
    sel[idx, np.arange(idx.size)] = 1.0
    return base, sel, idx


def pixel_inlier_posterior(model: DenseModel, x_flat: Tensor) -> Tensor:
    """Per-pixel ensemble posterior over the K inlier classes, renormalized."""
    fwd = model.forward(x_flat)
    probs = fwd.class_logits.softmax()[:, : model.num_inlier]
    ens = fwd.mask_logits.sigmoid().T @ probs
    return (ens.T / ens.sum(axis=-1)).T


def fit_dense_flow(model: DenseModel, scenes: Sequence[DenseScene], cfg: DenseConfig,
                   rng: np.random.Generator) -> FlowModel:
    """Flow on inlier pixel inputs: l_mle + beta * JSD(U, ensemble posterior inside a pasted flow patch).

    The closed-set dense model stays fixed while the flow is fitted.
    """
    k = model.num_inlier
    rows = []
    for s in scenes:
        x, labels = scene_pixels(s)
        rows.append(x[(labels >= 0) & (labels < k)])
    pixels = np.concatenate(rows)
    with_boxes = [s for s in scenes if len(s.patches)]
    if not with_boxes:
        raise ConfigurationError("flow negatives need scenes with patch boxes")
    flow = FlowModel(pixels.shape[1], cfg.flow_layers, cfg.flow_hidden, cfg.flow_clamp, rng)
    opt = SGD(flow.parameters(), lr=cfg.flow_lr, momentum=cfg.momentum, max_grad_norm=cfg.max_grad_norm)
    for step in range(cfg.flow_steps):
        batch = pixels[rng.integers(0, len(pixels), size=min(cfg.flow_batch_size, len(pixels)))]
        l_mle = -flow.log_prob(Tensor(batch)).mean()
        scene = closed_view(with_boxes[int(rng.integers(0, len(with_boxes)))], k)
        box = scene.patches[int(rng.integers(0, len(scene.patches)))]
        base, sel, idx = patch_selector(scene, box)
        samples = flow.sample(sel.shape[1], rng)
        x = Tensor(base) + Tensor(sel) @ samples
        l_jsd = jsd_uniform(pixel_inlier_posterior(model, x)[idx])
        loss = l_mle + l_jsd * cfg.beta
        opt.step(backward(loss))
        if cfg.log_every and step % cfg.log_every == 0:
            logger.info("dense flow step %d: l_mle=%.4f l_jsd=%.4f", step, l_mle.item(), l_jsd.item())
    return flow.freeze()


def flow_refill(flow: FlowModel, rng: np.random.Generator):
    """Scene transform replacing every patch with fresh flow samples."""
    def _refill(scene: DenseScene) -> DenseScene:
        inputs = scene.inputs.copy()
        for r, c, ph, pw in scene.patches:
            with no_grad():
                pixels = flow.sample(int(ph * pw), rng).data
            inputs[:, r:r + ph, c:c + pw] = pixels.T.reshape(-1, ph, pw)
        return DenseScene(inputs, scene.labels, scene.patches)
    return _refill


def train_dense(scenes: Sequence[DenseScene], num_inlier: int, cfg: DenseConfig) -> DenseTrainResult:
    """Closed pretraining, then fine-tuning on scenes with pasted negatives (real or flow)."""
    rows: List[dict] = []
    model = pretrain_dense_closed(scenes, num_inlier, cfg, rows)
    rngs = streams(cfg.seed, ("flow_init", "flow", "scenes", "refill", "ood"))
    flow = None
    prepare = None
    if cfg.negatives == "flow":
        flow = fit_dense_flow(model, scenes, cfg, rngs["flow_init"])
        prepare = flow_refill(flow, rngs["refill"])
    if cfg.ood_head:
        model = attach_ood_head(copy.deepcopy(model), rngs["ood"])
    else:
        model = extend_dense_head(model)
    _run(model, scenes, cfg.finetune_steps, cfg, rngs["scenes"], "dense-finetune", rows, prepare)
    return DenseTrainResult(model, pd.DataFrame(rows), flow)


# ----------------------------
# Evaluation
# ----------------------------

def evaluate_dense(model: DenseModel, scenes: Sequence[DenseScene], include_no_object: bool = True) -> Dict[str, float]:
    """Pixel accuracy and mIoU on inlier pixels; AUROC/AP/FPR95 of each score with negative pixels as positives."""
    k = model.num_inlier
    preds, gts = [], []
    maps: Dict[str, List[np.ndarray]] = {"uno": [], "unc": [], "no": []}
    for scene in scenes:
        preds.append(semantic_segment(predict_masks(scene, model), k).ravel())
        gts.append(scene.labels.ravel())
        for name, m in score_maps(scene, model, include_no_object).items():
            maps[name].append(m.ravel())
    pred = np.concatenate(preds)
    gt = np.concatenate(gts)
    inl = (gt >= 0) & (gt < k)
    out: Dict[str, float] = {
        "pixel_accuracy": metrics.accuracy(pred[inl], gt[inl]),
        "miou": metrics.miou(pred, gt, k),
    }
    valid = gt != VOID
    positive = (gt[valid] == k).astype(np.int64)
    if 0 < positive.sum() < positive.size:
        for name, parts in maps.items():
            s = np.concatenate(parts)[valid]
            out[f"{name}_auroc"] = metrics.auroc(s, positive)
            out[f"{name}_ap"] = metrics.average_precision(s, positive)
            out[f"{name}_fpr95"] = metrics.fpr_at_tpr(s, positive)
        out["pearson"] = metrics.pearson(np.concatenate(maps["unc"])[valid][positive == 1],
                                         np.concatenate(maps["no"])[valid][positive == 1])
    logger.info("dense evaluation: %s", ", ".join(f"{key}={value:.4f}" for key, value in out.items()))
    return out


# ----------------------------
# Checkpoints
# ----------------------------

class DenseManifest(TensorManifest):
    kind: str = "dense-model"
    in_dim: int
    num_inlier: int
    num_classes: int
    convention: str
    pixel_hidden: int
    embed_dim: int
    mask_dim: int
    num_queries: int
    ood_head: bool = False


def save_dense_model(model: DenseModel, directory: Path) -> Path:
    manifest = DenseManifest(
        in_dim=model.in_dim, num_inlier=model.num_inlier, num_classes=model.head.num_classes,
        convention=model.head.convention, pixel_hidden=model.pixel_hidden, embed_dim=model.embed_dim,
        mask_dim=model.mask_dim, num_queries=model.num_queries, ood_head=model.ood_head is not None,
    )
    return save_manifest_dir(directory, manifest, {n: p.data for n, p in model.named_parameters().items()})


def load_dense_model(directory: Path) -> DenseModel:
    manifest, tensors = load_manifest_dir(directory, DenseManifest)
    cfg = DenseConfig(seed=0, num_queries=manifest.num_queries, pixel_hidden=manifest.pixel_hidden,
                      embed_dim=manifest.embed_dim, mask_dim=manifest.mask_dim)
    model = DenseModel(manifest.in_dim, manifest.num_inlier, cfg, None, with_ood_head=manifest.ood_head)
    c = manifest.num_classes
    model.head = ClassifierHead(np.zeros((c, manifest.mask_dim)), np.zeros(c), manifest.num_inlier,
                                manifest.convention)
    load_named(model.named_parameters(), tensors)
    return model
