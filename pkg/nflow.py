"""
Affine-coupling normalizing flow with a standard-normal base.

``forward`` maps data x to the base space u and returns log|det du/dx|;
``inverse`` maps base samples back to data space and is what sampling uses.
Scale outputs are clamped to [-clamp, clamp] through clamp * tanh(.).
"""
from __future__ import annotations

import logging
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from gradcore import MLP, SGD, Tensor, as_tensor, backward, load_named, no_grad
from tensor_io import TensorManifest, load_manifest_dir, save_manifest_dir
from uno_errors import ContractError, ShapeMismatchError

logger = logging.getLogger(__name__)

LOG_2PI = float(np.log(2.0 * np.pi))


class CouplingLayer:
    """Coordinates where ``mask`` is 1 pass through; the rest get an affine map conditioned on them."""

    def __init__(self, dim: int, mask: np.ndarray, hidden: int = 64, clamp: float = 4.0,
                 rng: Optional[np.random.Generator] = None):
        self.dim = dim
        self.mask = np.asarray(mask, dtype=np.float64)
        self.active = 1.0 - self.mask
        self.clamp = float(clamp)
        self.scale_net = MLP([dim, hidden, dim], rng, zero_last=True)
        self.shift_net = MLP([dim, hidden, dim], rng, zero_last=True)

    def scale_shift(self, x_pass: Tensor) -> Tuple[Tensor, Tensor]:
        s = self.scale_net(x_pass).tanh() * self.clamp * self.active
        t = self.shift_net(x_pass) * self.active
        return s, t

    def forward(self, x: Tensor) -> Tuple[Tensor, Tensor]:
        x_pass = x * self.mask
        s, t = self.scale_shift(x_pass)
        u = x_pass + (x * s.exp() + t) * self.active
        return u, s.sum(axis=-1)

    def inverse(self, u: Tensor) -> Tensor:
        u_pass = u * self.mask
        s, t = self.scale_shift(u_pass)
        return u_pass + ((u - t) * (-s).exp()) * self.active

    def named_parameters(self, prefix: str = "") -> Dict[str, Tensor]:
        out = self.scale_net.named_parameters(f"{prefix}scale.")
        out.update(self.shift_net.named_parameters(f"{prefix}shift."))
        return out


class FlowModel:
    """Stack of coupling layers with alternating coordinate masks."""

    def __init__(self, dim: int, n_layers: int = 6, hidden: int = 64, clamp: float = 4.0,
                 rng: Optional[np.random.Generator] = None):
        if dim < 1 or n_layers < 1:
            raise ContractError("flow needs dim >= 1 and n_layers >= 1")
        self.dim = dim
        self.n_layers = n_layers
        self.hidden = hidden
        self.clamp = clamp
        parity = np.arange(dim) % 2
        self.layers: List[CouplingLayer] = [
            CouplingLayer(dim, (parity == (i % 2)).astype(np.float64), hidden, clamp, rng)
            for i in range(n_layers)
        ]
        self.frozen = False

    def _check(self, x: Tensor) -> None:
        if x.ndim != 2 or x.shape[1] != self.dim:
            raise ShapeMismatchError(f"flow expects [batch, {self.dim}], got {x.shape}")

    def forward(self, x) -> Tuple[Tensor, Tensor]:
        x = as_tensor(x)
        self._check(x)
        logdet: Tensor = Tensor(np.zeros(x.shape[0]))
        u = x
        for layer in self.layers:
            u, ld = layer.forward(u)
            logdet = logdet + ld
        return u, logdet

    def inverse(self, u) -> Tensor:
        u = as_tensor(u)
        self._check(u)
        x = u
        for layer in reversed(self.layers):
            x = layer.inverse(x)
        return x

    def log_prob(self, x) -> Tensor:
        u, logdet = self.forward(x)
        return base_log_prob(u) + logdet

    def sample(self, n: int, rng: np.random.Generator) -> Tensor:
        """Inverse of fresh base noise; differentiable in the flow parameters unless frozen."""
        if n < 0:
            raise ContractError("sample count must be >= 0")
        noise = rng.standard_normal((n, self.dim))
        return self.inverse(Tensor(noise))

    def named_parameters(self) -> Dict[str, Tensor]:
        out: Dict[str, Tensor] = {}
        for i, layer in enumerate(self.layers):
            out.update(layer.named_parameters(f"coupling.{i}."))
        return out

    def parameters(self) -> List[Tensor]:
        return list(self.named_parameters().values())

    def freeze(self) -> "FlowModel":
        for p in self.parameters():
            p.requires_grad = False
        self.frozen = True
        return self


def base_log_prob(u: Tensor) -> Tensor:
    d = u.shape[-1]
    return (u * u).sum(axis=-1) * -0.5 - 0.5 * d * LOG_2PI


def flow_forward(flow: FlowModel, x) -> Tuple[Tensor, Tensor]:
    return flow.forward(x)


def flow_inverse(flow: FlowModel, u) -> Tensor:
    return flow.inverse(u)


def flow_log_prob(flow: FlowModel, x) -> Tensor:
    return flow.log_prob(x)


def flow_sample(flow: FlowModel, n: int, rng: np.random.Generator) -> Tensor:
    return flow.sample(n, rng)


def train_flow_mle(
    flow: FlowModel,
    data: np.ndarray,
    steps: int,
    rng: np.random.Generator,
    lr: float = 0.005,
    batch_size: Optional[int] = 128,
    momentum: float = 0.9,
    max_grad_norm: Optional[float] = 10.0,
) -> List[float]:
    """Maximum-likelihood fitting; ``batch_size=None`` uses the full data every step."""
    if flow.frozen:
        raise ContractError("cannot train a frozen flow")
    data = np.asarray(data, dtype=np.float64)
    opt = SGD(flow.parameters(), lr=lr, momentum=momentum, max_grad_norm=max_grad_norm)
    losses: List[float] = []
    for step in range(steps):
        if batch_size is None or batch_size >= len(data):
            batch = data
        else:
            batch = data[rng.integers(0, len(data), size=batch_size)]
        loss = -flow.log_prob(Tensor(batch)).mean()
        opt.step(backward(loss))
        losses.append(loss.item())
        if step % 100 == 0:
            logger.debug("flow mle step %d nll %.5f", step, losses[-1])
    return losses


def mean_log_likelihood(flow: FlowModel, data: np.ndarray) -> float:
    with no_grad():
        return flow.log_prob(Tensor(data)).mean().item()


# ----------------------------
# Checkpoints
# ----------------------------

class FlowManifest(TensorManifest):
    kind: str = "flow"
    dim: int
    n_layers: int
    hidden: int
    clamp: float


def save_flow(flow: FlowModel, directory: Path) -> Path:
    manifest = FlowManifest(dim=flow.dim, n_layers=flow.n_layers, hidden=flow.hidden, clamp=flow.clamp)
    tensors = {name: p.data for name, p in flow.named_parameters().items()}
    return save_manifest_dir(directory, manifest, tensors)


def load_flow(directory: Path) -> FlowModel:
    manifest, tensors = load_manifest_dir(directory, FlowManifest)
    flow = FlowModel(manifest.dim, manifest.n_layers, manifest.hidden, manifest.clamp)
    load_named(flow.named_parameters(), tensors)
    return flow
