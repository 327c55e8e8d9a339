"""
Discriminative open-set model f = head o features: an MLP feature extractor
producing pre-logits z and a linear head over C classes.

Class indices are 0-based in code: inlier classes 0..K-1, the negative class
at K (the "K+1-th" class), and in the dense setting no-object at K+1.
"""
from __future__ import annotations

import logging
from pathlib import Path
from typing import Dict, List, Literal, Optional, Sequence

import numpy as np
from scipy.special import softmax

from gradcore import MLP, Tensor, as_tensor, load_named, no_grad, parameter
from tensor_io import TensorManifest, load_manifest_dir, save_manifest_dir
from uno_errors import ContractError, ShapeMismatchError, UndefinedCosineError

logger = logging.getLogger(__name__)

Convention = Literal["closed", "image-wide", "dense-closed", "dense"]


class FeatureExtractor:
    """MLP in_dim -> hidden... -> d with tanh between layers and a linear output."""

    def __init__(self, in_dim: int, hidden: Sequence[int] = (64, 64), out_dim: int = 16,
                 rng: Optional[np.random.Generator] = None):
        self.in_dim = in_dim
        self.hidden = list(hidden)
        self.out_dim = out_dim
        self.mlp = MLP([in_dim, *self.hidden, out_dim], rng)

    def __call__(self, x) -> Tensor:
        x = as_tensor(x)
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ShapeMismatchError(f"features expect [batch, {self.in_dim}], got {x.shape}")
        return self.mlp(x)

    def named_parameters(self, prefix: str = "features.") -> Dict[str, Tensor]:
        return self.mlp.named_parameters(prefix)


class ClassifierHead:
    """logits = z @ W.T + b; rows of W are class vectors."""

    def __init__(self, weight: np.ndarray, bias: np.ndarray, num_inlier: int, convention: Convention = "closed"):
        weight = np.asarray(weight, dtype=np.float64)
        bias = np.asarray(bias, dtype=np.float64)
        if weight.ndim != 2 or bias.shape != (weight.shape[0],):
            raise ShapeMismatchError(f"head weight {weight.shape} and bias {bias.shape} do not conform")
        self.W = parameter(weight, name="head.weight")
        self.b = parameter(bias, name="head.bias")
        self.num_inlier = num_inlier
        self.convention: Convention = convention

    @classmethod
    def init(cls, num_classes: int, dim: int, num_inlier: int, rng: np.random.Generator,
             scale: float = 0.1, convention: Convention = "closed") -> "ClassifierHead":
        """Orthogonal rows (when num_classes <= dim), scaled."""
        g = rng.standard_normal((dim, num_classes))
        if num_classes <= dim:
            q, r = np.linalg.qr(g)
            q = q * np.sign(np.diag(r))
            w = q.T * scale
        else:
            w = g.T * (scale / np.sqrt(dim))
        return cls(w, np.zeros(num_classes), num_inlier, convention)

    @property
    def num_classes(self) -> int:
        return self.W.shape[0]

    @property
    def dim(self) -> int:
        return self.W.shape[1]

    @property
    def negative_index(self) -> Optional[int]:
        if self.convention in ("image-wide", "dense"):
            return self.num_inlier
        return None

    @property
    def no_object_index(self) -> Optional[int]:
        if self.convention == "dense":
            return self.num_inlier + 1
        if self.convention == "dense-closed":
            return self.num_inlier
        return None

    def __call__(self, z) -> Tensor:
        z = as_tensor(z)
        if z.shape[-1] != self.dim:
            raise ShapeMismatchError(f"head expects pre-logits of size {self.dim}, got {z.shape}")
        return z @ self.W.T + self.b

    def logits(self, z: np.ndarray) -> np.ndarray:
        """Frozen numpy evaluation.

        Each logit is reduced over d on its own, so a logit's value does not depend
        on how many other rows the head has.
        """
        z = np.asarray(z, dtype=np.float64)
        if z.shape[-1] != self.dim:
            raise ShapeMismatchError(f"head expects pre-logits of size {self.dim}, got {z.shape}")
        return np.sum(z[..., None, :] * self.W.data, axis=-1) + self.b.data

    def named_parameters(self, prefix: str = "head.") -> Dict[str, Tensor]:
        return {f"{prefix}weight": self.W, f"{prefix}bias": self.b}


class OpenSetModel:
    """posterior(x) = softmax(head(features(x)))."""

    def __init__(self, features: FeatureExtractor, head: ClassifierHead, ood_head: Optional[ClassifierHead] = None):
        if features.out_dim != head.dim:
            raise ShapeMismatchError(f"feature dim {features.out_dim} != head dim {head.dim}")
        self.features = features
        self.head = head
        self.ood_head = ood_head

    @classmethod
    def build(cls, in_dim: int, num_inlier: int, rng: np.random.Generator, hidden: Sequence[int] = (64, 64),
              feature_dim: int = 16) -> "OpenSetModel":
        """Closed-set K-way model."""
        features = FeatureExtractor(in_dim, hidden, feature_dim, rng)
        head = ClassifierHead.init(num_inlier, feature_dim, num_inlier, rng)
        return cls(features, head)

    @property
    def num_inlier(self) -> int:
        return self.head.num_inlier

    def logits(self, x) -> Tensor:
        return self.head(self.features(x))

    def prelogits(self, x: np.ndarray) -> np.ndarray:
        with no_grad():
            return self.features(Tensor(x)).data

    def posterior(self, x: np.ndarray) -> np.ndarray:
        return softmax(self.head.logits(self.prelogits(x)), axis=-1)

    def predict(self, x: np.ndarray) -> np.ndarray:
        """Closed-set argmax over the inlier logits only."""
        logits = self.head.logits(self.prelogits(x))
        return np.argmax(logits[:, : self.num_inlier], axis=-1)

    def accuracy(self, x: np.ndarray, y: np.ndarray) -> float:
        return float(np.mean(self.predict(x) == np.asarray(y)))

    def backbone_parameters(self) -> List[Tensor]:
        return list(self.features.named_parameters().values())

    def head_parameters(self) -> List[Tensor]:
        params = list(self.head.named_parameters().values())
        if self.ood_head is not None:
            params += list(self.ood_head.named_parameters("ood_head.").values())
        return params

    def parameters(self) -> List[Tensor]:
        return self.backbone_parameters() + self.head_parameters()

    def named_parameters(self) -> Dict[str, Tensor]:
        out = self.features.named_parameters()
        out.update(self.head.named_parameters())
        if self.ood_head is not None:
            out.update(self.ood_head.named_parameters("ood_head."))
        return out


def features(model: OpenSetModel, x: np.ndarray) -> np.ndarray:
    return model.prelogits(x)


def posterior(z: np.ndarray, head: ClassifierHead) -> np.ndarray:
    """softmax(W z + b) over all C classes."""
    return softmax(head.logits(z), axis=-1)


def extend_head(head: ClassifierHead, n_new: int = 1, insert_at: Optional[int] = None,
                convention: Optional[Convention] = None) -> ClassifierHead:
    """Add ``n_new`` zero-initialized classes; existing rows keep their values bit for bit."""
    if n_new < 1:
        raise ContractError("extend_head needs n_new >= 1")
    at = head.num_classes if insert_at is None else insert_at
    if not 0 <= at <= head.num_classes:
        raise ContractError(f"insert_at={at} outside [0, {head.num_classes}]")
    w = np.insert(head.W.data, [at] * n_new, 0.0, axis=0)
    b = np.insert(head.b.data, [at] * n_new, 0.0)
    if convention is None:
        convention = {"closed": "image-wide", "dense-closed": "dense"}.get(head.convention, head.convention)
    logger.info("extended head %d -> %d classes (new rows at %d)", head.num_classes, head.num_classes + n_new, at)
    return ClassifierHead(w, b, head.num_inlier, convention)


def extend_model(model: OpenSetModel, n_new: int = 1) -> OpenSetModel:
    """Same feature extractor, head extended with zero-initialized negative class(es)."""
    return OpenSetModel(model.features, extend_head(model.head, n_new), model.ood_head)


def class_vector_cosines(head: ClassifierHead) -> np.ndarray:
    w = head.W.data
    norms = np.linalg.norm(w, axis=1)
    for i, n in enumerate(norms):
        if n == 0.0:
            raise UndefinedCosineError(f"class vector {i} has zero norm")
    cos = (w @ w.T) / np.outer(norms, norms)
    np.fill_diagonal(cos, 1.0)
    return cos


# ----------------------------
# Checkpoints
# ----------------------------

class ModelManifest(TensorManifest):
    kind: str = "openset-model"
    in_dim: int
    hidden: List[int]
    feature_dim: int
    num_inlier: int
    num_classes: int
    convention: Convention
    ood_head_classes: Optional[int] = None


def save_model(model: OpenSetModel, directory: Path) -> Path:
    manifest = ModelManifest(
        in_dim=model.features.in_dim,
        hidden=model.features.hidden,
        feature_dim=model.features.out_dim,
        num_inlier=model.num_inlier,
        num_classes=model.head.num_classes,
        convention=model.head.convention,
        ood_head_classes=model.ood_head.num_classes if model.ood_head is not None else None,
    )
    tensors = {name: p.data for name, p in model.named_parameters().items()}
    return save_manifest_dir(directory, manifest, tensors)


def load_model(directory: Path) -> OpenSetModel:
    manifest, tensors = load_manifest_dir(directory, ModelManifest)
    feats = FeatureExtractor(manifest.in_dim, manifest.hidden, manifest.feature_dim)
    head = ClassifierHead(np.zeros((manifest.num_classes, manifest.feature_dim)), np.zeros(manifest.num_classes),
                          manifest.num_inlier, manifest.convention)
    ood = None
    if manifest.ood_head_classes:
        ood = ClassifierHead(np.zeros((manifest.ood_head_classes, manifest.feature_dim)),
                             np.zeros(manifest.ood_head_classes), manifest.num_inlier, "closed")
    model = OpenSetModel(feats, head, ood)
    load_named(model.named_parameters(), tensors)
    return model
