"""
Training procedures for the image-wide open-set model.

- train_closed: K-way cross-entropy pretraining
- finetune_real: append the negative class, fine-tune on inliers + real negatives
- two_step_train: (1) flow and K-way classifier trained jointly, (2) flow frozen,
  negative class appended, fine-tuning with fresh flow samples as negatives
- naive_joint_train: both objectives in a single phase (collapse baseline)
- train_ood_head: K-way classifier plus a binary outlier head

Step one alternates updates: a classifier step on the inlier cross-entropy, then
a flow step on l_mle + beta * l_jsd over flow parameters and classifier together.
"""
from __future__ import annotations

import copy
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.spatial.distance import pdist

from gradcore import SGD, ParamGroup, Tensor, as_tensor, backward, concat, constant_then_decay, no_grad
from nflow import FlowModel, train_flow_mle
from openset_net import ClassifierHead, OpenSetModel, extend_model, save_model
from synthgen import Split, streams
from uno_config import TrainConfig
from uno_errors import ConfigurationError, DomainError, LabelRangeError, ShapeMismatchError

logger = logging.getLogger(__name__)

TINY = float(np.finfo(np.float64).tiny)
LOSS_COLUMNS = ["step", "l_cls", "l_mle", "l_jsd", "l_flow", "accuracy", "phase"]
COLLAPSE_THRESHOLD = 0.99
# shared by two_step_train and naive_joint_train so both start from the same initialization
SYNTHETIC_STREAMS = ("init", "flow_init", "batches", "flow_data", "noise", "step2", "collapse", "log_collapse")


# ----------------------------
# Data
# ----------------------------

class MixedDataset:
    """Inliers labeled 0..K-1 and negatives labeled K."""

    def __init__(self, x: np.ndarray, y: np.ndarray, num_inlier: int):
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.int64)
        if x.ndim != 2 or y.shape != (x.shape[0],):
            raise ShapeMismatchError(f"dataset x {x.shape} and y {y.shape} do not conform")
        if y.size and (y.min() < 0 or y.max() > num_inlier):
            raise LabelRangeError(f"labels must lie in 0..{num_inlier}")
        self.x = x
        self.y = y
        self.num_inlier = num_inlier

    @classmethod
    def from_splits(cls, inliers: Split, negatives: Optional[Split], num_inlier: int) -> "MixedDataset":
        if negatives is None or len(negatives) == 0:
            return cls(inliers.x, inliers.y, num_inlier)
        if np.any(negatives.y != num_inlier):
            raise LabelRangeError(f"negative samples must carry label {num_inlier}")
        return cls(np.concatenate([inliers.x, negatives.x]), np.concatenate([inliers.y, negatives.y]), num_inlier)

    @property
    def num_classes(self) -> int:
        return self.num_inlier + 1

    @property
    def negative_label(self) -> int:
        return self.num_inlier

    @property
    def n_negatives(self) -> int:
        return int(np.sum(self.y == self.num_inlier))

    def __len__(self) -> int:
        return len(self.y)


def class_counts(batch_size: int, n_classes: int, remainder_rule: str = "error",
                 negative_fraction: Optional[float] = None) -> np.ndarray:
    """Per-class sample counts of one batch; with ``negative_fraction`` the last class is the negative one."""
    if negative_fraction is None:
        n_neg, rest, k = None, batch_size, n_classes
    else:
        n_neg = int(min(max(round(negative_fraction * batch_size), 1), batch_size - (n_classes - 1)))
        rest, k = batch_size - n_neg, n_classes - 1
    if rest % k:
        if remainder_rule == "error":
            raise ConfigurationError(f"batch size {rest} is not divisible by {k} classes")
        if remainder_rule != "truncate":
            raise ConfigurationError(f"unknown remainder rule '{remainder_rule}'")
    per = rest // k
    if per == 0:
        raise ConfigurationError(f"batch size {batch_size} gives no samples per class")
    counts = [per] * k
    if n_neg is not None:
        counts.append(n_neg)
    return np.asarray(counts, dtype=np.int64)


class BalancedSampler:
    """Each class is walked through a fresh permutation, reshuffled when exhausted."""

    def __init__(self, labels: np.ndarray, classes: Sequence[int], rng: np.random.Generator):
        self.rng = rng
        self.classes = list(classes)
        self.pools: Dict[int, np.ndarray] = {}
        for c in self.classes:
            pool = np.flatnonzero(labels == c)
            if pool.size == 0:
                raise ConfigurationError(f"class {c} has no samples")
            self.pools[c] = pool
        self.order: Dict[int, np.ndarray] = {c: np.empty(0, dtype=np.int64) for c in self.classes}
        self.cursor: Dict[int, int] = {c: 0 for c in self.classes}

    def take(self, c: int, n: int) -> np.ndarray:
        parts = []
        while n > 0:
            if self.cursor[c] >= len(self.order[c]):
                self.order[c] = self.rng.permutation(self.pools[c])
                self.cursor[c] = 0
            k = min(n, len(self.order[c]) - self.cursor[c])
            parts.append(self.order[c][self.cursor[c]: self.cursor[c] + k])
            self.cursor[c] += k
            n -= k
        return np.concatenate(parts) if parts else np.empty(0, dtype=np.int64)

    def draw(self, counts: Sequence[int]) -> np.ndarray:
        return np.concatenate([self.take(c, int(n)) for c, n in zip(self.classes, counts)])


def balanced_batches(data: MixedDataset, batch_size: int, rng: np.random.Generator, remainder_rule: str = "error",
                     negative_fraction: Optional[float] = None,
                     classes: Optional[Sequence[int]] = None) -> Iterator[Tuple[np.ndarray, np.ndarray]]:
    """Endless stream of batches with fixed per-class counts."""
    classes = list(range(data.num_classes)) if classes is None else sorted(classes)
    fraction = negative_fraction if data.negative_label in classes else None
    counts = class_counts(batch_size, len(classes), remainder_rule, fraction)
    sampler = BalancedSampler(data.y, classes, rng)
    while True:
        idx = sampler.draw(counts)
        yield data.x[idx], data.y[idx]


# ----------------------------
# Losses
# ----------------------------

def cls_loss(logits: Tensor, y: np.ndarray) -> Tensor:
    """Mean negative log posterior of the true class."""
    logits = as_tensor(logits)
    y = np.asarray(y, dtype=np.int64)
    if logits.ndim != 2 or y.shape != (logits.shape[0],):
        raise ShapeMismatchError(f"logits {logits.shape} and labels {y.shape} do not conform")
    c = logits.shape[1]
    if y.size and (y.min() < 0 or y.max() >= c):
        raise LabelRangeError(f"labels must lie in 0..{c - 1}, got {int(y.min())}..{int(y.max())}")
    logp = logits.log_softmax()
    return -logp[(np.arange(len(y)), y)].mean()


def jsd_uniform(p) -> Tensor:
    """JSD(U, p) with equal weights and natural log; rows of a batch are averaged. 0 * log 0 = 0."""
    p = as_tensor(p)
    data = p.data
    if data.ndim not in (1, 2) or data.shape[-1] == 0:
        raise ShapeMismatchError(f"jsd_uniform expects [K] or [batch, K], got {data.shape}")
    if np.any(data < 0) or np.any(np.abs(data.sum(axis=-1) - 1.0) > 1e-9):
        raise DomainError("jsd_uniform needs points on the probability simplex")
    k = data.shape[-1]
    u = np.full(k, 1.0 / k)
    log_u = np.log(u)
    log_m = ((p + u) * 0.5).log()
    kl_pm = (p * ((p + TINY).log() - log_m)).sum(axis=-1)
    kl_um = -((log_m - log_u) * u).sum(axis=-1)
    jsd = (kl_pm + kl_um) * 0.5
    return jsd.mean() if jsd.ndim else jsd


def batch_accuracy(logits: np.ndarray, y: np.ndarray, num_inlier: int) -> float:
    """Closed-set accuracy over the inlier rows of a batch."""
    inl = y < num_inlier
    if not inl.any():
        return float("nan")
    pred = np.argmax(logits[inl, :num_inlier], axis=-1)
    return float(np.mean(pred == y[inl]))


@dataclass
class LossBreakdown:
    l_cls: float
    l_mle: float = float("nan")
    l_jsd: float = float("nan")
    beta: float = 0.0
    accuracy: float = float("nan")
    l_flow: float = field(init=False)

    def __post_init__(self):
        self.l_flow = self.l_mle + self.beta * self.l_jsd


class LossLog:
    """Step-indexed loss rows; extra keys (e.g. collapse statistics) become extra columns."""

    def __init__(self):
        self.rows: List[Dict[str, float]] = []

    def add(self, step: int, phase: str, losses: LossBreakdown, **extra: float) -> None:
        row = {"step": step, "l_cls": losses.l_cls, "l_mle": losses.l_mle, "l_jsd": losses.l_jsd,
               "l_flow": losses.l_flow, "accuracy": losses.accuracy, "phase": phase}
        row.update(extra)
        self.rows.append(row)

    def frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(self.rows)
        extra = [c for c in frame.columns if c not in LOSS_COLUMNS]
        return frame.reindex(columns=LOSS_COLUMNS + extra)

    def write(self, path: Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.frame().to_csv(path, index=False)
        return path


@dataclass
class CollapseStats:
    dispersion: float
    confident_fraction: float


@dataclass
class TrainResult:
    model: OpenSetModel
    log: LossLog
    flow: Optional[FlowModel] = None
    collapse: Optional[CollapseStats] = None


def _log_step(step: int, every: int, phase: str, losses: LossBreakdown) -> None:
    if every and step % every == 0:
        logger.info("%s step %d: l_cls=%.4f l_mle=%.4f l_jsd=%.4f acc=%.3f",
                    phase, step, losses.l_cls, losses.l_mle, losses.l_jsd, losses.accuracy)
    else:
        logger.debug("%s step %d: l_cls=%.5f l_flow=%.5f", phase, step, losses.l_cls, losses.l_flow)


def _maybe_checkpoint(model: OpenSetModel, cfg: TrainConfig, step: int, phase: str,
                      checkpoint_dir: Optional[Path]) -> None:
    if checkpoint_dir is None or not cfg.checkpoint_every or step == 0 or step % cfg.checkpoint_every:
        return
    path = save_model(model, Path(checkpoint_dir) / f"{phase}_step_{step:06d}")
    logger.info("checkpoint written to %s", path)


def _classifier_opt(model: OpenSetModel, cfg: TrainConfig, lr: Optional[float] = None) -> SGD:
    return SGD(model.parameters(), lr=lr or cfg.lr, momentum=cfg.momentum, weight_decay=cfg.weight_decay,
               max_grad_norm=cfg.max_grad_norm)


def _finetune_opt(model: OpenSetModel, cfg: TrainConfig) -> SGD:
    groups = [ParamGroup(model.backbone_parameters(), cfg.backbone_lr),
              ParamGroup(model.head_parameters(), cfg.head_lr)]
    return SGD(groups, momentum=cfg.momentum, weight_decay=cfg.weight_decay, max_grad_norm=cfg.max_grad_norm)


def _new_flow(dim: int, cfg: TrainConfig, rng: np.random.Generator) -> FlowModel:
    return FlowModel(dim, cfg.flow_layers, cfg.flow_hidden, cfg.flow_clamp, rng)


# ----------------------------
# Closed set
# ----------------------------

def train_closed(train: Split, cfg: TrainConfig, num_inlier: int,
                 checkpoint_dir: Optional[Path] = None) -> TrainResult:
    rngs = streams(cfg.seed, ("init", "batches"))
    model = OpenSetModel.build(train.x.shape[1], num_inlier, rngs["init"], cfg.hidden, cfg.feature_dim)
    data = MixedDataset(train.x, train.y, num_inlier)
    batches = balanced_batches(data, cfg.batch_size, rngs["batches"], cfg.remainder_rule,
                               classes=range(num_inlier))
    opt = _classifier_opt(model, cfg)
    log = LossLog()
    for step in range(cfg.closed_steps):
        x, y = next(batches)
        logits = model.logits(x)
        loss = cls_loss(logits, y)
        opt.step(backward(loss), constant_then_decay(step, cfg.closed_steps, cfg.decay_fraction, cfg.final_lr_ratio))
        losses = LossBreakdown(loss.item(), accuracy=batch_accuracy(logits.data, y, num_inlier))
        log.add(step, "closed", losses)
        _log_step(step, cfg.log_every, "closed", losses)
        _maybe_checkpoint(model, cfg, step, "closed", checkpoint_dir)
    return TrainResult(model, log)


# ----------------------------
# Real negatives
# ----------------------------

def finetune_real(pretrained: OpenSetModel, data: MixedDataset, cfg: TrainConfig,
                  checkpoint_dir: Optional[Path] = None) -> TrainResult:
    """Append a zero-initialized negative class and fine-tune on balanced mixed batches."""
    if data.n_negatives == 0:
        raise ConfigurationError("finetune_real needs at least one real negative sample")
    if pretrained.head.num_classes != data.num_inlier:
        raise ConfigurationError(f"expected a {data.num_inlier}-way closed-set model, got {pretrained.head.num_classes}")
    model = extend_model(copy.deepcopy(pretrained))
    rngs = streams(cfg.seed, ("batches",))
    batches = balanced_batches(data, cfg.batch_size, rngs["batches"], cfg.remainder_rule, cfg.negative_fraction)
    opt = _finetune_opt(model, cfg)
    log = LossLog()
    for step in range(cfg.finetune_steps):
        x, y = next(batches)
        logits = model.logits(x)
        loss = cls_loss(logits, y)
        opt.step(backward(loss), constant_then_decay(step, cfg.finetune_steps, cfg.decay_fraction, cfg.final_lr_ratio))
        losses = LossBreakdown(loss.item(), accuracy=batch_accuracy(logits.data, y, data.num_inlier))
        log.add(step, "finetune-real", losses)
        _log_step(step, cfg.log_every, "finetune-real", losses)
        _maybe_checkpoint(model, cfg, step, "finetune_real", checkpoint_dir)
    return TrainResult(model, log)


# ----------------------------
# Synthetic negatives
# ----------------------------

def joint_step(model: OpenSetModel, flow: FlowModel, x: np.ndarray, y: np.ndarray, cfg: TrainConfig,
               cls_opt: SGD, flow_opt: SGD, rng: np.random.Generator, lr_scale: float = 1.0) -> LossBreakdown:
    """One classifier step on the inlier cross-entropy, then one step on l_mle + beta * JSD(U, p(x~))."""
    if model.head.num_classes != model.num_inlier:
        raise ConfigurationError("joint_step expects a classifier with exactly K logits")
    if flow.dim != model.features.in_dim:
        raise ShapeMismatchError(f"flow dim {flow.dim} != classifier input dim {model.features.in_dim}")

    logits = model.logits(x)
    loss_cls = cls_loss(logits, y)
    cls_opt.step(backward(loss_cls), lr_scale)

    l_mle = -flow.log_prob(Tensor(x)).mean()
    samples = flow.sample(len(x), rng)
    l_jsd = jsd_uniform(model.logits(samples).softmax())
    l_flow = l_mle + l_jsd * cfg.beta
    flow_opt.step(backward(l_flow), lr_scale)
    return LossBreakdown(loss_cls.item(), l_mle.item(), l_jsd.item(), cfg.beta,
                         batch_accuracy(logits.data, y, model.num_inlier))


def collapse_stats(model: OpenSetModel, flow: FlowModel, n: int, rng: np.random.Generator) -> CollapseStats:
    """Mean pairwise pre-logit distance of flow samples and the share classified negative with p > 0.99."""
    with no_grad():
        samples = flow.sample(n, rng).data
    z = model.prelogits(samples)
    dispersion = float(np.mean(pdist(z))) if n > 1 else 0.0
    neg = model.head.negative_index
    confident = float(np.mean(model.posterior(samples)[:, neg] > COLLAPSE_THRESHOLD)) if neg is not None else 0.0
    return CollapseStats(dispersion, confident)


def _pretrain_flow(flow: FlowModel, x: np.ndarray, cfg: TrainConfig, rng: np.random.Generator, log: LossLog) -> int:
    losses = train_flow_mle(flow, x, cfg.flow_pretrain_steps, rng, cfg.flow_lr, cfg.flow_batch_size,
                            cfg.momentum, cfg.max_grad_norm)
    for step, value in enumerate(losses):
        log.add(step, "flow-mle", LossBreakdown(float("nan"), value, float("nan"), 0.0))
    if losses:
        logger.info("flow pretraining: nll %.4f -> %.4f over %d steps", losses[0], losses[-1], len(losses))
    return len(losses)


def two_step_train(train: Split, cfg: TrainConfig, num_inlier: int,
                   checkpoint_dir: Optional[Path] = None) -> TrainResult:
    rngs = streams(cfg.seed, SYNTHETIC_STREAMS)
    in_dim = train.x.shape[1]
    model = OpenSetModel.build(in_dim, num_inlier, rngs["init"], cfg.hidden, cfg.feature_dim)
    flow = _new_flow(in_dim, cfg, rngs["flow_init"])
    log = LossLog()
    offset = _pretrain_flow(flow, train.x, cfg, rngs["flow_data"], log)

    # step one: flow and K-way classifier
    data = MixedDataset(train.x, train.y, num_inlier)
    batches = balanced_batches(data, cfg.batch_size, rngs["batches"], cfg.remainder_rule, classes=range(num_inlier))
    cls_opt = _classifier_opt(model, cfg)
    flow_opt = SGD([ParamGroup(flow.parameters(), cfg.flow_lr), ParamGroup(model.parameters(), cfg.lr)],
                   momentum=cfg.momentum, max_grad_norm=cfg.max_grad_norm)
    for step in range(cfg.joint_steps):
        x, y = next(batches)
        scale = constant_then_decay(step, cfg.joint_steps, cfg.decay_fraction, cfg.final_lr_ratio)
        losses = joint_step(model, flow, x, y, cfg, cls_opt, flow_opt, rngs["noise"], scale)
        log.add(offset + step, "joint", losses)
        _log_step(step, cfg.log_every, "joint", losses)
        _maybe_checkpoint(model, cfg, step, "joint", checkpoint_dir)
    offset += cfg.joint_steps

    # step two: frozen flow, negative class appended
    flow.freeze()
    model = extend_model(model)
    counts = class_counts(cfg.batch_size, num_inlier + 1, cfg.remainder_rule, cfg.negative_fraction)
    sampler = BalancedSampler(train.y, range(num_inlier), rngs["batches"])
    opt = _finetune_opt(model, cfg)
    for step in range(cfg.step2_steps):
        idx = sampler.draw(counts[:num_inlier])
        with no_grad():
            negatives = flow.sample(int(counts[num_inlier]), rngs["step2"]).data
        x = np.concatenate([train.x[idx], negatives])
        y = np.concatenate([train.y[idx], np.full(len(negatives), num_inlier, dtype=np.int64)])
        logits = model.logits(x)
        loss = cls_loss(logits, y)
        opt.step(backward(loss), constant_then_decay(step, cfg.step2_steps, cfg.decay_fraction, cfg.final_lr_ratio))
        losses = LossBreakdown(loss.item(), accuracy=batch_accuracy(logits.data, y, num_inlier))
        log.add(offset + step, "step2", losses)
        _log_step(step, cfg.log_every, "step2", losses)
        _maybe_checkpoint(model, cfg, step, "step2", checkpoint_dir)

    stats = collapse_stats(model, flow, cfg.collapse_samples, rngs["collapse"])
    logger.info("two-step: flow-sample dispersion %.4f, confident negatives %.3f",
                stats.dispersion, stats.confident_fraction)
    return TrainResult(model, log, flow, stats)


def naive_joint_train(train: Split, cfg: TrainConfig, num_inlier: int,
                      checkpoint_dir: Optional[Path] = None) -> TrainResult:
    """Single phase: K+1-way cross-entropy with flow samples as negatives, optimized together with the flow loss.

    The cross-entropy reaches the flow through the samples, so the flow is free to chase
    whatever region the classifier already calls negative.
    """
    rngs = streams(cfg.seed, SYNTHETIC_STREAMS)
    in_dim = train.x.shape[1]
    model = OpenSetModel.build(in_dim, num_inlier, rngs["init"], cfg.hidden, cfg.feature_dim)
    model = extend_model(model)
    flow = _new_flow(in_dim, cfg, rngs["flow_init"])
    log = LossLog()
    offset = _pretrain_flow(flow, train.x, cfg, rngs["flow_data"], log)

    counts = class_counts(cfg.batch_size, num_inlier + 1, cfg.remainder_rule, cfg.negative_fraction)
    sampler = BalancedSampler(train.y, range(num_inlier), rngs["batches"])
    # same optimizer settings as two_step_train: weight decay on the classifier only
    cls_opt = _classifier_opt(model, cfg)
    flow_opt = SGD([ParamGroup(flow.parameters(), cfg.naive_flow_lr)],
                   momentum=cfg.momentum, max_grad_norm=cfg.max_grad_norm)
    for step in range(cfg.naive_steps):
        idx = sampler.draw(counts[:num_inlier])
        x_in = train.x[idx]
        samples = flow.sample(int(counts[num_inlier]), rngs["noise"])
        y = np.concatenate([train.y[idx], np.full(samples.shape[0], num_inlier, dtype=np.int64)])
        logits = model.logits(concat([Tensor(x_in), samples], axis=0))
        l_cls = cls_loss(logits, y)
        l_mle = -flow.log_prob(Tensor(x_in)).mean()
        l_jsd = jsd_uniform(logits[len(x_in):, :num_inlier].softmax())
        l_flow = l_mle * cfg.naive_mle_weight + l_jsd * cfg.beta
        grads = backward(l_cls + l_flow)
        scale = constant_then_decay(step, cfg.naive_steps, cfg.decay_fraction, cfg.final_lr_ratio)
        cls_opt.step(grads, scale)
        flow_opt.step(grads, scale)
        losses = LossBreakdown(l_cls.item(), l_mle.item(), l_jsd.item(), cfg.beta,
                               batch_accuracy(logits.data, y, num_inlier))
        extra = {}
        if cfg.log_every and step % cfg.log_every == 0:
            stats = collapse_stats(model, flow, cfg.collapse_samples, rngs["log_collapse"])
            extra = {"dispersion": stats.dispersion, "confident_fraction": stats.confident_fraction}
            logger.info("naive-joint step %d: confident negatives %.3f dispersion %.4f",
                        step, stats.confident_fraction, stats.dispersion)
        log.add(offset + step, "naive-joint", losses, **extra)
        _log_step(step, cfg.log_every, "naive-joint", losses)
        _maybe_checkpoint(model, cfg, step, "naive_joint", checkpoint_dir)

    flow.freeze()
    stats = collapse_stats(model, flow, cfg.collapse_samples, rngs["collapse"])
    log.add(offset + cfg.naive_steps, "naive-joint-final", LossBreakdown(float("nan")),
            dispersion=stats.dispersion, confident_fraction=stats.confident_fraction)
    logger.info("naive-joint: flow-sample dispersion %.4f, confident negatives %.3f",
                stats.dispersion, stats.confident_fraction)
    return TrainResult(model, log, flow, stats)


# ----------------------------
# Alternative: separate OOD head
# ----------------------------

def binary_ood_head(dim: int, num_inlier: int, rng: np.random.Generator) -> ClassifierHead:
    """Two outputs: 0 inlier, 1 outlier."""
    return ClassifierHead.init(2, dim, num_inlier, rng)


def train_ood_head(pretrained: OpenSetModel, data: MixedDataset, cfg: TrainConfig,
                   checkpoint_dir: Optional[Path] = None) -> TrainResult:
    """K-way classifier plus binary outlier head; the K-way head never sees the negatives."""
    if data.n_negatives == 0:
        raise ConfigurationError("train_ood_head needs at least one real negative sample")
    rngs = streams(cfg.seed, ("head", "batches"))
    k = data.num_inlier
    model = copy.deepcopy(pretrained)
    model.ood_head = binary_ood_head(model.head.dim, k, rngs["head"])
    batches = balanced_batches(data, cfg.batch_size, rngs["batches"], cfg.remainder_rule, cfg.negative_fraction)
    opt = _finetune_opt(model, cfg)
    log = LossLog()
    for step in range(cfg.ood_head_steps):
        x, y = next(batches)
        z = model.features(x)
        inl = np.flatnonzero(y < k)
        class_logits = model.head(z[inl])
        l_cls = cls_loss(class_logits, y[inl])
        l_ood = cls_loss(model.ood_head(z), (y == k).astype(np.int64))
        opt.step(backward(l_cls + l_ood),
                 constant_then_decay(step, cfg.ood_head_steps, cfg.decay_fraction, cfg.final_lr_ratio))
        losses = LossBreakdown(l_cls.item(), accuracy=batch_accuracy(class_logits.data, y[inl], k))
        log.add(step, "ood-head", losses, l_ood=l_ood.item())
        _log_step(step, cfg.log_every, "ood-head", losses)
        _maybe_checkpoint(model, cfg, step, "ood_head", checkpoint_dir)
    return TrainResult(model, log)
