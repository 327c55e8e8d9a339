"""
Deterministic toy data: 2D image-wide bundles and small dense scenes with
pasted negative patches, plus their manifest-directory I/O.

Stream-split rule: ``SeedSequence(seed).spawn(len(STREAMS))`` gives one PCG64
substream per entry of ``STREAMS``, in that order. Every split draws only from
its own stream, so splits are independent and adding a split never changes
the others.

Labels are 0-based: inliers 0..K-1, negatives K, dense VOID pixels -1.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Literal, Optional, Sequence, Tuple

import numpy as np
from pydantic import Field, field_validator, model_validator
from scipy import ndimage

from tensor_io import TensorManifest, load_manifest_dir, save_manifest_dir
from uno_config import StrictModel
from uno_errors import ConfigurationError, LabelRangeError, ManifestError

logger = logging.getLogger(__name__)

VOID = -1
PRNG_NAME = "PCG64"
STREAMS = ("train", "val", "test", "negatives", "near", "far", "dense_train", "dense_test")

NegativeSource = Literal["ring-segment", "uniform-box", "inlier-crop", "flow"]
PixelSampler = Callable[[int, np.random.Generator], np.ndarray]


class DenseSceneSpec(StrictModel):
    """Toy scene layout: vertical class strips, Gaussian pixel features, rectangular negative patches."""

    height: int = 16
    width: int = 16
    feature_dim: int = 4
    class_scale: float = 2.0
    sigma: float = 0.3
    strips: Tuple[int, int] = (2, 3)
    patches: Tuple[int, int] = (1, 3)
    patch_side: Tuple[int, int] = (3, 6)
    void_border: int = 0
    # training negatives and held-out test negatives come from different distributions
    negative_mean: float = -1.5
    test_negative_mean: float = 1.5
    n_train: int = 40
    n_test: int = 20

    @field_validator("height", "width", "feature_dim")
    @classmethod
    def _positive(cls, v: int) -> int:
        if v < 1:
            raise ValueError("must be >= 1")
        return v

    @field_validator("strips", "patches", "patch_side")
    @classmethod
    def _range(cls, v: Tuple[int, int]) -> Tuple[int, int]:
        if v[0] < 0 or v[0] > v[1]:
            raise ValueError(f"range {v} must satisfy 0 <= low <= high")
        return v


class SynthSpec(StrictModel):
    """Image-wide toy benchmark: K Gaussians on a circle, a negative source, near and far outliers."""

    seed: int
    num_classes: int = 3
    radius: float = 4.0
    sigma: float = 0.5
    means: Optional[List[List[float]]] = None

    n_train: int = 600
    n_val: int = 300
    n_test: int = 300

    negative_source: NegativeSource = "ring-segment"
    n_negatives: int = 600
    ring_inner: float = 7.0
    ring_outer: float = 11.0
    # leaves the 285-315 degree wedge uncovered
    ring_start: float = float(7.0 * np.pi / 4.0)
    ring_span: float = float(11.0 * np.pi / 6.0)
    box_half_width: float = 12.0
    crop_mix: Tuple[float, float] = (0.3, 0.7)

    n_near: int = 300
    near_jitter: float = 0.15
    n_far: int = 300
    far_inner: float = 8.0
    far_outer: float = 12.0

    dense: Optional[DenseSceneSpec] = None

    @field_validator("num_classes")
    @classmethod
    def _classes(cls, v: int) -> int:
        if v < 2:
            raise ValueError("need at least 2 inlier classes")
        return v

    @field_validator("sigma", "radius")
    @classmethod
    def _positive(cls, v: float) -> float:
        if v <= 0:
            raise ValueError("must be > 0")
        return v

    @field_validator("n_train", "n_val", "n_test", "n_negatives", "n_near", "n_far")
    @classmethod
    def _count(cls, v: int) -> int:
        if v < 0:
            raise ValueError("counts must be >= 0")
        return v

    @model_validator(mode="after")
    def _consistent(self) -> "SynthSpec":
        if self.means is not None:
            if len(self.means) != self.num_classes or any(len(m) != 2 for m in self.means):
                raise ValueError(f"means must list {self.num_classes} points in 2D")
        if not 0.0 <= self.ring_inner < self.ring_outer:
            raise ValueError("ring radii must satisfy 0 <= inner < outer")
        if not 0.0 <= self.far_inner < self.far_outer:
            raise ValueError("far radii must satisfy 0 <= inner < outer")
        if self.dense is not None and self.num_classes > self.dense.feature_dim:
            raise ValueError("dense scenes need num_classes <= dense.feature_dim")
        return self


@dataclass
class Split:
    x: np.ndarray
    y: np.ndarray

    def __len__(self) -> int:
        return len(self.y)


@dataclass
class Region:
    label: int
    mask: np.ndarray


@dataclass
class DenseScene:
    """inputs [F0, H, W]; labels [H, W] with VOID=-1, inliers 0..K-1 and negatives K."""

    inputs: np.ndarray
    labels: np.ndarray
    patches: np.ndarray = field(default_factory=lambda: np.zeros((0, 4), dtype=np.int64))

    def __post_init__(self):
        if self.labels.shape != self.inputs.shape[1:]:
            raise ConfigurationError(f"label map {self.labels.shape} does not match grid {self.inputs.shape[1:]}")

    @property
    def shape(self) -> Tuple[int, int]:
        return self.labels.shape

    def regions(self) -> List[Region]:
        """One semantic target region per label present (VOID excluded), ordered by label."""
        return [Region(int(k), self.labels == k) for k in np.unique(self.labels) if k != VOID]

    def components(self) -> List[Region]:
        """Connected components (4-connectivity) of every non-VOID label."""
        out: List[Region] = []
        for k in np.unique(self.labels):
            if k == VOID:
                continue
            comp, n = ndimage.label(self.labels == k)
            out.extend(Region(int(k), comp == i) for i in range(1, n + 1))
        return out


@dataclass
class DatasetBundle:
    spec: SynthSpec
    train: Split
    val: Split
    test: Split
    negatives: Split
    outliers: Dict[str, np.ndarray]
    dense_train: List[DenseScene] = field(default_factory=list)
    dense_test: List[DenseScene] = field(default_factory=list)

    @property
    def num_classes(self) -> int:
        return self.spec.num_classes

    @property
    def input_dim(self) -> int:
        return self.train.x.shape[1]


def streams(seed: int, names: Sequence[str] = STREAMS) -> Dict[str, np.random.Generator]:
    """One independent PCG64 generator per name, spawned in order from the seed."""
    children = np.random.SeedSequence(seed).spawn(len(names))
    return {name: np.random.Generator(np.random.PCG64(child)) for name, child in zip(names, children)}


def class_means(spec: SynthSpec) -> np.ndarray:
    if spec.means is not None:
        return np.asarray(spec.means, dtype=np.float64)
    angles = 2.0 * np.pi * np.arange(spec.num_classes) / spec.num_classes
    return spec.radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)


def stratified_counts(n: int, k: int) -> np.ndarray:
    """n split over k classes; the first n % k classes get one extra."""
    counts = np.full(k, n // k)
    counts[: n % k] += 1
    return counts


def sample_inliers(spec: SynthSpec, n: int, rng: np.random.Generator) -> Split:
    means = class_means(spec)
    counts = stratified_counts(n, spec.num_classes)
    y = np.repeat(np.arange(spec.num_classes), counts)
    x = means[y] + spec.sigma * rng.standard_normal((n, 2))
    return Split(x, y.astype(np.int64))


def _polar(radius: np.ndarray, angle: np.ndarray) -> np.ndarray:
    return np.stack([radius * np.cos(angle), radius * np.sin(angle)], axis=1)


def _annulus(n: int, inner: float, outer: float, start: float, span: float, rng: np.random.Generator) -> np.ndarray:
    # area-uniform radius
    r = np.sqrt(rng.uniform(inner**2, outer**2, size=n))
    a = start + span * rng.uniform(size=n)
    return _polar(r, a)


def sample_negatives(spec: SynthSpec, rng: np.random.Generator) -> Split:
    n = spec.n_negatives
    k = spec.num_classes
    if spec.negative_source == "ring-segment":
        x = _annulus(n, spec.ring_inner, spec.ring_outer, spec.ring_start, spec.ring_span, rng)
    elif spec.negative_source == "uniform-box":
        x = rng.uniform(-spec.box_half_width, spec.box_half_width, size=(n, 2))
    elif spec.negative_source == "inlier-crop":
        # mixtures of two inliers from different classes
        a = sample_inliers(spec, n, rng)
        shift = rng.integers(1, k, size=n)
        partner_y = (a.y + shift) % k
        partner = class_means(spec)[partner_y] + spec.sigma * rng.standard_normal((n, 2))
        lam = rng.uniform(*spec.crop_mix, size=n)[:, None]
        x = lam * a.x + (1.0 - lam) * partner
    else:
        # flow negatives are sampled during training
        x = np.zeros((0, 2))
    return Split(x, np.full(len(x), k, dtype=np.int64))


def sample_near(spec: SynthSpec, rng: np.random.Generator) -> np.ndarray:
    """Points in the angular gaps between neighbouring classes at the inlier radius."""
    k = spec.num_classes
    step = 2.0 * np.pi / k
    gap = rng.integers(0, k, size=spec.n_near)
    angle = step * (gap + 0.5) + spec.near_jitter * step * rng.uniform(-1.0, 1.0, size=spec.n_near)
    r = spec.radius + spec.sigma * rng.standard_normal(spec.n_near)
    return _polar(r, angle)


def sample_far(spec: SynthSpec, rng: np.random.Generator) -> np.ndarray:
    """Full-circle annulus beyond far_inner: overlaps the negative ring and the uncovered directions."""
    return _annulus(spec.n_far, spec.far_inner, spec.far_outer, 0.0, 2.0 * np.pi, rng)


def make_image_wide(spec: SynthSpec) -> DatasetBundle:
    rngs = streams(spec.seed)
    bundle = DatasetBundle(
        spec=spec,
        train=sample_inliers(spec, spec.n_train, rngs["train"]),
        val=sample_inliers(spec, spec.n_val, rngs["val"]),
        test=sample_inliers(spec, spec.n_test, rngs["test"]),
        negatives=sample_negatives(spec, rngs["negatives"]),
        outliers={"near": sample_near(spec, rngs["near"]), "far": sample_far(spec, rngs["far"])},
    )
    if spec.dense is not None:
        bundle.dense_train = make_dense_scenes(spec, spec.dense.n_train, rngs["dense_train"], held_out=False)
        bundle.dense_test = make_dense_scenes(spec, spec.dense.n_test, rngs["dense_test"], held_out=True)
    check_labels(bundle)
    logger.info(
        "generated bundle K=%d train=%d negatives=%d (%s) dense=%d/%d",
        spec.num_classes, len(bundle.train), len(bundle.negatives), spec.negative_source,
        len(bundle.dense_train), len(bundle.dense_test),
    )
    return bundle


def outlier_union(bundle: DatasetBundle) -> np.ndarray:
    return np.concatenate([bundle.outliers[name] for name in sorted(bundle.outliers)], axis=0)


def check_labels(bundle: DatasetBundle) -> None:
    k = bundle.num_classes
    for name in ("train", "val", "test"):
        y = getattr(bundle, name).y
        if y.size and (y.min() < 0 or y.max() >= k):
            raise LabelRangeError(f"{name} labels must lie in 0..{k - 1}")
    if np.any(bundle.negatives.y != k):
        raise LabelRangeError(f"negative samples must carry label {k}")
    for scene in bundle.dense_train + bundle.dense_test:
        lab = scene.labels
        if lab.min() < VOID or lab.max() > k:
            raise LabelRangeError(f"dense labels must lie in {{{VOID}}} u 0..{k}")


# ----------------------------
# Dense scenes
# ----------------------------

def dense_class_means(spec: SynthSpec) -> np.ndarray:
    """Inlier class k sits at class_scale * e_k in the per-pixel feature space."""
    d = spec.dense
    assert d is not None
    means = np.zeros((spec.num_classes, d.feature_dim))
    means[np.arange(spec.num_classes), np.arange(spec.num_classes)] = d.class_scale
    return means


def gaussian_pixels(mean: float, d: DenseSceneSpec) -> PixelSampler:
    center = np.full(d.feature_dim, mean)
    return lambda n, rng: center + d.sigma * rng.standard_normal((n, d.feature_dim))


def base_scene(spec: SynthSpec, rng: np.random.Generator) -> DenseScene:
    """Inlier-only scene: vertical strips with random classes and optional VOID border."""
    d = spec.dense
    assert d is not None
    h, w = d.height, d.width
    n_strips = int(rng.integers(d.strips[0], d.strips[1] + 1)) if d.strips[1] > 0 else 1
    n_strips = max(1, min(n_strips, w))
    cuts = np.sort(rng.choice(np.arange(1, w), size=n_strips - 1, replace=False)) if n_strips > 1 else np.array([], int)
    bounds = np.concatenate([[0], cuts, [w]])
    labels = np.empty((h, w), dtype=np.int64)
    for lo, hi in zip(bounds[:-1], bounds[1:]):
        labels[:, lo:hi] = rng.integers(0, spec.num_classes)
    means = dense_class_means(spec)
    inputs = means[labels].transpose(2, 0, 1) + d.sigma * rng.standard_normal((d.feature_dim, h, w))
    b = d.void_border
    if b > 0:
        labels[:b, :] = VOID
        labels[-b:, :] = VOID
        labels[:, :b] = VOID
        labels[:, -b:] = VOID
    return DenseScene(inputs, labels)


def draw_patches(spec: SynthSpec, rng: np.random.Generator, n_patches: Optional[int] = None) -> np.ndarray:
    """Patch boxes [n, 4] as (row, col, height, width)."""
    d = spec.dense
    assert d is not None
    lo, hi = d.patch_side
    if hi > d.height or hi > d.width:
        raise ConfigurationError(f"patch side up to {hi} is larger than the {d.height}x{d.width} scene")
    n = int(rng.integers(d.patches[0], d.patches[1] + 1)) if n_patches is None else n_patches
    boxes = np.zeros((n, 4), dtype=np.int64)
    for i in range(n):
        ph, pw = rng.integers(lo, hi + 1, size=2)
        r = rng.integers(0, d.height - ph + 1)
        c = rng.integers(0, d.width - pw + 1)
        boxes[i] = (r, c, ph, pw)
    return boxes


def paste_patches(scene: DenseScene, boxes: np.ndarray, sampler: PixelSampler, negative_label: int,
                  rng: np.random.Generator) -> DenseScene:
    """Return a copy with each box filled by sampler draws and labeled as negative."""
    h, w = scene.shape
    inputs = scene.inputs.copy()
    labels = scene.labels.copy()
    for r, c, ph, pw in np.asarray(boxes, dtype=np.int64):
        if ph > h or pw > w or r + ph > h or c + pw > w or r < 0 or c < 0:
            raise ConfigurationError(f"patch ({r}, {c}, {ph}, {pw}) does not fit a {h}x{w} scene")
        pixels = sampler(int(ph * pw), rng)
        inputs[:, r:r + ph, c:c + pw] = pixels.T.reshape(-1, ph, pw)
        labels[r:r + ph, c:c + pw] = negative_label
    boxes = np.asarray(boxes, dtype=np.int64).reshape(-1, 4)
    return DenseScene(inputs, labels, np.concatenate([scene.patches, boxes]).astype(np.int64))


def make_dense_scene(spec: SynthSpec, rng: np.random.Generator, held_out: bool = False,
                     sampler: Optional[PixelSampler] = None, n_patches: Optional[int] = None) -> DenseScene:
    """One scene with 1-3 pasted patches (or ``n_patches``) from the train or held-out negative distribution."""
    d = spec.dense
    if d is None:
        raise ConfigurationError("spec has no dense section")
    scene = base_scene(spec, rng)
    boxes = draw_patches(spec, rng, n_patches)
    if sampler is None:
        sampler = gaussian_pixels(d.test_negative_mean if held_out else d.negative_mean, d)
    return paste_patches(scene, boxes, sampler, spec.num_classes, rng)


def make_dense_scenes(spec: SynthSpec, n: int, rng: np.random.Generator, held_out: bool = False) -> List[DenseScene]:
    return [make_dense_scene(spec, rng, held_out=held_out) for _ in range(n)]


# ----------------------------
# Bundle I/O
# ----------------------------

class BundleManifest(TensorManifest):
    kind: str = "dataset-bundle"
    prng: str = PRNG_NAME
    stream_rule: str = "SeedSequence(seed).spawn(%d) in order %s" % (len(STREAMS), ",".join(STREAMS))
    num_classes: int
    input_dim: int
    spec: dict
    outlier_sets: List[str] = Field(default_factory=list)
    dense_train: int = 0
    dense_test: int = 0


def _scene_tensors(prefix: str, scenes: List[DenseScene]) -> Dict[str, np.ndarray]:
    out: Dict[str, np.ndarray] = {}
    for i, scene in enumerate(scenes):
        out[f"{prefix}.{i:04d}.inputs"] = scene.inputs
        out[f"{prefix}.{i:04d}.labels"] = scene.labels.astype(np.float64)
        out[f"{prefix}.{i:04d}.patches"] = scene.patches.astype(np.float64)
    return out


def save_bundle(bundle: DatasetBundle, directory: Path) -> Path:
    tensors: Dict[str, np.ndarray] = {}
    for name in ("train", "val", "test", "negatives"):
        split: Split = getattr(bundle, name)
        tensors[f"{name}.x"] = split.x
        tensors[f"{name}.y"] = split.y.astype(np.float64)
    for name, x in bundle.outliers.items():
        tensors[f"outliers.{name}.x"] = x
    tensors.update(_scene_tensors("dense_train", bundle.dense_train))
    tensors.update(_scene_tensors("dense_test", bundle.dense_test))
    manifest = BundleManifest(
        num_classes=bundle.num_classes,
        input_dim=bundle.input_dim,
        spec=bundle.spec.model_dump(mode="json"),
        outlier_sets=sorted(bundle.outliers),
        dense_train=len(bundle.dense_train),
        dense_test=len(bundle.dense_test),
    )
    return save_manifest_dir(directory, manifest, tensors)


def _labels(arr: np.ndarray) -> np.ndarray:
    return arr.astype(np.int64)


def _load_scenes(tensors: Dict[str, np.ndarray], prefix: str, n: int) -> List[DenseScene]:
    scenes = []
    for i in range(n):
        key = f"{prefix}.{i:04d}"
        try:
            scenes.append(DenseScene(tensors[f"{key}.inputs"], _labels(tensors[f"{key}.labels"]),
                                     _labels(tensors[f"{key}.patches"]).reshape(-1, 4)))
        except KeyError as e:
            raise ManifestError(f"bundle manifest is missing tensor {e.args[0]}") from e
    return scenes


def load_bundle(directory: Path) -> DatasetBundle:
    manifest, tensors = load_manifest_dir(directory, BundleManifest)
    try:
        spec = SynthSpec.model_validate(manifest.spec)
        splits = {
            name: Split(tensors[f"{name}.x"].reshape(-1, manifest.input_dim), _labels(tensors[f"{name}.y"]))
            for name in ("train", "val", "test", "negatives")
        }
        outliers = {name: tensors[f"outliers.{name}.x"].reshape(-1, manifest.input_dim)
                    for name in manifest.outlier_sets}
    except KeyError as e:
        raise ManifestError(f"bundle manifest is missing tensor {e.args[0]}") from e
    except ValueError as e:
        raise ManifestError(f"bundle spec is invalid: {e}") from e
    bundle = DatasetBundle(
        spec=spec,
        outliers=outliers,
        dense_train=_load_scenes(tensors, "dense_train", manifest.dense_train),
        dense_test=_load_scenes(tensors, "dense_test", manifest.dense_test),
        **splits,
    )
    check_labels(bundle)
    return bundle
