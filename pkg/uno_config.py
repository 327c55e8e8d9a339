"""
Runtime settings and training configuration for the UNO toolkit.
"""
from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Literal, Mapping, Optional, Type, TypeVar

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from uno_errors import ConfigurationError

load_dotenv()

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


@dataclass
class RuntimeSettings:
    """Process-wide defaults, read from the environment (.env supported)."""

    # Where CLI runs write when no --out is given
    output_dir: Path = field(default_factory=lambda: Path(os.getenv("UNO_OUTPUT_DIR", "uno_runs")))

    log_level: str = field(default_factory=lambda: os.getenv("UNO_LOG_LEVEL", "INFO"))

    # Worker threads for embarrassingly parallel evaluation loops
    workers: int = field(default_factory=lambda: int(os.getenv("UNO_WORKERS", "1")))

    def __post_init__(self):
        if self.workers < 1:
            raise ConfigurationError(f"UNO_WORKERS must be >= 1, got {self.workers}")

    def run_dir(self, name: str) -> Path:
        """Default output directory for a command, created on first use."""
        path = self.output_dir / name
        path.mkdir(parents=True, exist_ok=True)
        return path


def configure_logging(level: str = "INFO") -> None:
    """Install a single stream handler on the root logger."""
    root = logging.getLogger()
    for handler in list(root.handlers):
        root.removeHandler(handler)
    handler = logging.StreamHandler()
    handler.setFormatter(logging.Formatter(LOG_FORMAT))
    root.addHandler(handler)
    root.setLevel(level.upper())


class StrictModel(BaseModel):
    """Base for JSON-backed configs: unknown keys are rejected."""

    model_config = ConfigDict(extra="forbid", validate_assignment=True)


class TrainConfig(StrictModel):
    """Hyperparameters of every image-wide training regime."""

    seed: int

    # discriminative model
    hidden: List[int] = Field(default_factory=lambda: [64, 64])
    feature_dim: int = 16
    lr: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 5e-4
    batch_size: int = 60
    remainder_rule: Literal["error", "truncate"] = "error"
    negative_fraction: Optional[float] = None

    # step counts per regime
    closed_steps: int = 1500
    finetune_steps: int = 600
    joint_steps: int = 800
    step2_steps: int = 600
    naive_steps: int = 800
    ood_head_steps: int = 600

    # two-step fine-tuning learning rates
    backbone_lr: float = 0.005
    head_lr: float = 0.05

    # flow
    beta: float = 0.03
    jsd_reference: Literal["uniform"] = "uniform"
    flow_layers: int = 6
    flow_hidden: int = 64
    flow_clamp: float = 4.0
    flow_lr: float = 0.005
    flow_batch_size: int = 128
    flow_pretrain_steps: int = 300
    max_grad_norm: Optional[float] = 10.0

    # naive joint baseline: the flow chases the classifier, its likelihood only loosely held
    naive_flow_lr: float = 0.05
    naive_mle_weight: float = 0.05

    # schedule: constant, then linear decay over the last fraction of steps
    decay_fraction: float = 0.3
    final_lr_ratio: float = 0.1

    # bookkeeping
    log_every: int = 100
    checkpoint_every: Optional[int] = None
    collapse_samples: int = 512

    @field_validator("beta", "weight_decay", "naive_mle_weight")
    @classmethod
    def _non_negative(cls, v: float) -> float:
        if v < 0:
            raise ValueError("must be >= 0")
        return v

    @field_validator("momentum")
    @classmethod
    def _momentum_range(cls, v: float) -> float:
        if not 0.0 <= v < 1.0:
            raise ValueError("must lie in [0, 1)")
        return v

    @field_validator("lr", "backbone_lr", "head_lr", "flow_lr", "naive_flow_lr")
    @classmethod
    def _positive_lr(cls, v: float) -> float:
        if v <= 0:
            raise ValueError("must be > 0")
        return v

    @field_validator("negative_fraction")
    @classmethod
    def _fraction(cls, v: Optional[float]) -> Optional[float]:
        if v is not None and not 0.0 < v < 1.0:
            raise ValueError("must lie in (0, 1)")
        return v


class DenseConfig(StrictModel):
    """Hyperparameters of the toy mask-level pipeline."""

    seed: int
    num_queries: int = 8
    pixel_hidden: int = 32
    embed_dim: int = 16
    mask_dim: int = 16
    query_init_std: float = 0.1
    lr: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 1e-4
    closed_steps: int = 400
    finetune_steps: int = 300
    scenes_per_step: int = 2
    negatives: Literal["real", "flow"] = "real"
    include_no_object_in_score: bool = True
    ood_head: bool = False
    mask_weight: float = 1.0
    beta: float = 0.03
    flow_layers: int = 6
    flow_hidden: int = 64
    flow_clamp: float = 4.0
    flow_lr: float = 0.005
    flow_steps: int = 300
    flow_batch_size: int = 128
    max_grad_norm: Optional[float] = 10.0
    log_every: int = 50

    @field_validator("num_queries")
    @classmethod
    def _queries(cls, v: int) -> int:
        if not 1 <= v <= 32:
            raise ValueError("must lie in [1, 32]")
        return v


ModelT = TypeVar("ModelT", bound=StrictModel)


def _coerce_override(raw: str) -> Any:
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def parse_overrides(pairs: Optional[List[str]]) -> Dict[str, Any]:
    """Turn repeated ``key=value`` CLI flags into a dict; values are JSON when they parse."""
    out: Dict[str, Any] = {}
    for pair in pairs or []:
        if "=" not in pair:
            raise ConfigurationError(f"override '{pair}' is not of the form key=value")
        key, raw = pair.split("=", 1)
        out[key.strip()] = _coerce_override(raw.strip())
    return out


def build_config(
    model: Type[ModelT],
    file_values: Optional[Mapping[str, Any]] = None,
    overrides: Optional[Mapping[str, Any]] = None,
) -> ModelT:
    """Merge file values and CLI overrides (overrides win) and validate."""
    merged: Dict[str, Any] = dict(file_values or {})
    merged.update(overrides or {})
    unknown = sorted(set(merged) - set(model.model_fields))
    if unknown:
        raise ConfigurationError(f"unknown config key '{unknown[0]}' for {model.__name__}")
    if "seed" not in merged:
        raise ConfigurationError(f"config key 'seed' is mandatory for {model.__name__}")
    try:
        return model.model_validate(merged)
    except ValidationError as e:
        first = e.errors()[0]
        key = ".".join(str(p) for p in first["loc"])
        raise ConfigurationError(f"invalid value for config key '{key}': {first['msg']}") from e


def load_config(
    model: Type[ModelT],
    path: Optional[Path],
    overrides: Optional[Mapping[str, Any]] = None,
) -> ModelT:
    """Read a JSON config file (optional) and apply overrides."""
    values: Dict[str, Any] = {}
    if path is not None:
        try:
            values = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError as e:
            raise ConfigurationError(f"config file not found: {path}") from e
        except json.JSONDecodeError as e:
            raise ConfigurationError(f"config file {path} is not valid JSON: {e}") from e
        if not isinstance(values, dict):
            raise ConfigurationError(f"config file {path} must hold a JSON object")
    return build_config(model, values, overrides)
