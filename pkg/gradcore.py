"""
Minimal reverse-mode automatic differentiation over float64 numpy arrays.

The tape is rebuilt on every forward pass (define-by-run): each primitive
applied to an input that requires gradients attaches a ``TapeRecord`` to its
output. ``backward`` orders the reachable records topologically and walks them
in reverse, accumulating gradients additively across fan-out.
"""
from __future__ import annotations

import contextlib
import logging
import threading
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Iterator, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import expit

from uno_errors import ContractError, DomainError, NonFiniteError, ShapeMismatchError

logger = logging.getLogger(__name__)

ArrayLike = Union[np.ndarray, float, int, Sequence[float], Sequence[Sequence[float]]]

_state = threading.local()


def is_grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Disable tape recording in the current thread."""
    previous = is_grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = previous


@dataclass
class TapeRecord:
    """One primitive application: op id, input nodes, output node, saved intermediates."""

    op: str
    inputs: Tuple["Tensor", ...]
    output: "Tensor"
    params: Dict[str, Any] = field(default_factory=dict)
    saved: Dict[str, np.ndarray] = field(default_factory=dict)


@dataclass
class ComputationTape:
    """Records reachable from a loss, inputs always preceding their consumers."""

    records: List[TapeRecord]

    @classmethod
    def from_output(cls, output: "Tensor") -> "ComputationTape":
        order: List[TapeRecord] = []
        visited: set = set()
        # iterative post-order DFS; deep flows would overflow recursion
        stack: List[Tuple[Tensor, bool]] = [(output, False)]
        while stack:
            node, expanded = stack.pop()
            rec = node._record
            if rec is None:
                continue
            if expanded:
                order.append(rec)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for inp in rec.inputs:
                if inp._record is not None and id(inp) not in visited:
                    stack.append((inp, False))
        return cls(order)

    def __len__(self) -> int:
        return len(self.records)


class Tensor:
    """Dense float64 array with an optional link to the primitive that produced it."""

    # ndarray <op> Tensor dispatches to the reflected Tensor operator
    __array_ufunc__ = None

    def __init__(self, data: ArrayLike, requires_grad: bool = False, name: Optional[str] = None):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._record: Optional[TapeRecord] = None
        self._backward_done = False

    # ----------------------------
    # Introspection
    # ----------------------------
    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(self.data.shape)

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def node_id(self) -> int:
        return id(self)

    @property
    def is_leaf(self) -> bool:
        return self._record is None

    def item(self) -> float:
        if self.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def __repr__(self) -> str:
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    # ----------------------------
    # Operators
    # ----------------------------
    def __add__(self, other: Any) -> "Tensor":
        return apply_primitive("add", [self, other])

    def __radd__(self, other: Any) -> "Tensor":
        return apply_primitive("add", [other, self])

    def __sub__(self, other: Any) -> "Tensor":
        return apply_primitive("subtract", [self, other])

    def __rsub__(self, other: Any) -> "Tensor":
        return apply_primitive("subtract", [other, self])

    def __mul__(self, other: Any) -> "Tensor":
        return apply_primitive("multiply", [self, other])

    def __rmul__(self, other: Any) -> "Tensor":
        return apply_primitive("multiply", [other, self])

    def __truediv__(self, other: Any) -> "Tensor":
        return apply_primitive("divide", [self, other])

    def __rtruediv__(self, other: Any) -> "Tensor":
        return apply_primitive("divide", [other, self])

    def __neg__(self) -> "Tensor":
        return apply_primitive("negate", [self])

    def __matmul__(self, other: Any) -> "Tensor":
        return apply_primitive("matmul", [self, other])

    def __getitem__(self, key: Any) -> "Tensor":
        return apply_primitive("slice", [self], key=key)

    def exp(self) -> "Tensor":
        return apply_primitive("exp", [self])

    def log(self) -> "Tensor":
        return apply_primitive("log", [self])

    def tanh(self) -> "Tensor":
        return apply_primitive("tanh", [self])

    def relu(self) -> "Tensor":
        return apply_primitive("relu", [self])

    def sigmoid(self) -> "Tensor":
        return apply_primitive("sigmoid", [self])

    def sum(self, axis: Optional[int] = None, keepdims: bool = False) -> "Tensor":
        return apply_primitive("sum", [self], axis=axis, keepdims=keepdims)

    def mean(self, axis: Optional[int] = None, keepdims: bool = False) -> "Tensor":
        return apply_primitive("mean", [self], axis=axis, keepdims=keepdims)

    def max(self, axis: Optional[int] = None, keepdims: bool = False) -> "Tensor":
        return apply_primitive("max", [self], axis=axis, keepdims=keepdims)

    def log_softmax(self) -> "Tensor":
        return apply_primitive("log_softmax", [self])

    def softmax(self) -> "Tensor":
        return self.log_softmax().exp()

    @property
    def T(self) -> "Tensor":
        return apply_primitive("transpose", [self])

    def reshape(self, *shape: Any) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return apply_primitive("reshape", [self], shape=tuple(shape))


def as_tensor(value: Any) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def parameter(data: ArrayLike, name: Optional[str] = None) -> Tensor:
    """A trainable leaf."""
    return Tensor(data, requires_grad=True, name=name)


def concat(tensors: Sequence[Any], axis: int = 0) -> Tensor:
    return apply_primitive("concat", list(tensors), axis=axis)


# ----------------------------
# Primitives
# ----------------------------

def _broadcast_shape(a: Tuple[int, ...], b: Tuple[int, ...], op: str) -> Tuple[int, ...]:
    """Leading-dimension broadcast: the shorter shape must equal the trailing dims of the longer."""
    if a == b:
        return a
    long_, short = (a, b) if len(a) >= len(b) else (b, a)
    if long_[len(long_) - len(short):] != short:
        raise ShapeMismatchError(f"{op}: shapes {a} and {b} do not conform (leading-dimension broadcast only)")
    return long_


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    lead = grad.ndim - len(shape)
    return grad.sum(axis=tuple(range(lead))).reshape(shape)


class Primitive:
    """Forward/backward pair over raw arrays."""

    name = ""
    arity: Optional[int] = 1

    def forward(self, *xs: np.ndarray, **params: Any) -> np.ndarray:
        raise NotImplementedError

    def backward(self, g: np.ndarray, out: np.ndarray, *xs: np.ndarray, **params: Any) -> Sequence[Optional[np.ndarray]]:
        raise NotImplementedError


class _Binary(Primitive):
    arity = 2

    def check(self, a: np.ndarray, b: np.ndarray) -> None:
        _broadcast_shape(a.shape, b.shape, self.name)


class Add(_Binary):
    name = "add"

    def forward(self, a, b, **params):
        self.check(a, b)
        return a + b

    def backward(self, g, out, a, b, **params):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)


class Subtract(_Binary):
    name = "subtract"

    def forward(self, a, b, **params):
        self.check(a, b)
        return a - b

    def backward(self, g, out, a, b, **params):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)


class Multiply(_Binary):
    name = "multiply"

    def forward(self, a, b, **params):
        self.check(a, b)
        return a * b

    def backward(self, g, out, a, b, **params):
        return _unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)


class Divide(_Binary):
    name = "divide"

    def forward(self, a, b, **params):
        self.check(a, b)
        if np.any(b == 0.0):
            raise DomainError("divide: zero denominator")
        return a / b

    def backward(self, g, out, a, b, **params):
        return _unbroadcast(g / b, a.shape), _unbroadcast(-g * a / (b * b), b.shape)


class MatMul(Primitive):
    name = "matmul"
    arity = 2

    def forward(self, a, b, **params):
        if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
            raise ShapeMismatchError(f"matmul: shapes {a.shape} and {b.shape} do not conform")
        return a @ b

    def backward(self, g, out, a, b, **params):
        return g @ b.T, a.T @ g


class Negate(Primitive):
    name = "negate"

    def forward(self, x, **params):
        return -x

    def backward(self, g, out, x, **params):
        return (-g,)


class Exp(Primitive):
    name = "exp"

    def forward(self, x, **params):
        with np.errstate(over="ignore"):
            return np.exp(x)

    def backward(self, g, out, x, **params):
        return (g * out,)


class Log(Primitive):
    name = "log"

    def forward(self, x, **params):
        if np.any(x <= 0.0):
            raise DomainError("log: non-positive input")
        return np.log(x)

    def backward(self, g, out, x, **params):
        return (g / x,)


class Tanh(Primitive):
    name = "tanh"

    def forward(self, x, **params):
        return np.tanh(x)

    def backward(self, g, out, x, **params):
        return (g * (1.0 - out * out),)


class Relu(Primitive):
    """Subgradient at 0 is 0."""

    name = "relu"

    def forward(self, x, **params):
        return np.where(x > 0.0, x, 0.0)

    def backward(self, g, out, x, **params):
        return (g * (x > 0.0),)


class Sigmoid(Primitive):
    name = "sigmoid"

    def forward(self, x, **params):
        return expit(x)

    def backward(self, g, out, x, **params):
        return (g * out * (1.0 - out),)


def _expand_reduced(g: np.ndarray, shape: Tuple[int, ...], axis: Optional[int], keepdims: bool) -> np.ndarray:
    if axis is None:
        return np.broadcast_to(g, shape)
    if not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape)


class Sum(Primitive):
    name = "sum"

    def forward(self, x, axis=None, keepdims=False, **params):
        return np.sum(x, axis=axis, keepdims=keepdims)

    def backward(self, g, out, x, axis=None, keepdims=False, **params):
        return (np.array(_expand_reduced(g, x.shape, axis, keepdims)),)


class Mean(Primitive):
    name = "mean"

    def forward(self, x, axis=None, keepdims=False, **params):
        if x.size == 0:
            raise ShapeMismatchError("mean: empty input")
        return np.mean(x, axis=axis, keepdims=keepdims)

    def backward(self, g, out, x, axis=None, keepdims=False, **params):
        count = x.size if axis is None else x.shape[axis]
        return (np.array(_expand_reduced(g, x.shape, axis, keepdims)) / count,)


class Max(Primitive):
    """Gradient flows to the first maximal entry."""

    name = "max"

    def forward(self, x, axis=None, keepdims=False, **params):
        if x.size == 0:
            raise ShapeMismatchError("max: empty input")
        return np.max(x, axis=axis, keepdims=keepdims)

    def backward(self, g, out, x, axis=None, keepdims=False, **params):
        grad = np.zeros_like(x)
        if axis is None:
            grad.flat[int(np.argmax(x))] = float(np.reshape(g, ()))
            return (grad,)
        idx = np.expand_dims(np.argmax(x, axis=axis), axis)
        gk = g if keepdims else np.expand_dims(g, axis)
        np.put_along_axis(grad, idx, gk, axis=axis)
        return (grad,)


class LogSoftmax(Primitive):
    """Along the last axis, with max subtraction."""

    name = "log_softmax"

    def forward(self, x, **params):
        if x.ndim == 0 or x.shape[-1] == 0:
            raise ShapeMismatchError("log_softmax: needs a non-empty last axis")
        shifted = x - np.max(x, axis=-1, keepdims=True)
        return shifted - np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))

    def backward(self, g, out, x, **params):
        return (g - np.exp(out) * np.sum(g, axis=-1, keepdims=True),)


class Concat(Primitive):
    name = "concat"
    arity = None

    def forward(self, *xs, axis=0, **params):
        try:
            return np.concatenate(xs, axis=axis)
        except ValueError as e:
            raise ShapeMismatchError(f"concat: {e}") from e

    def backward(self, g, out, *xs, axis=0, **params):
        bounds = np.cumsum([x.shape[axis] for x in xs])[:-1]
        return tuple(np.split(g, bounds, axis=axis))


class Slice(Primitive):
    name = "slice"

    def forward(self, x, key=None, **params):
        try:
            return np.array(x[key])
        except IndexError as e:
            raise ShapeMismatchError(f"slice: {e}") from e

    def backward(self, g, out, x, key=None, **params):
        grad = np.zeros_like(x)
        np.add.at(grad, key, g)
        return (grad,)


class Transpose(Primitive):
    name = "transpose"

    def forward(self, x, **params):
        if x.ndim != 2:
            raise ShapeMismatchError(f"transpose: expects a matrix, got shape {x.shape}")
        return x.T

    def backward(self, g, out, x, **params):
        return (g.T,)


class Reshape(Primitive):
    name = "reshape"

    def forward(self, x, shape=(), **params):
        try:
            return x.reshape(shape)
        except ValueError as e:
            raise ShapeMismatchError(f"reshape: {e}") from e

    def backward(self, g, out, x, **params):
        return (g.reshape(x.shape),)


PRIMITIVES: Dict[str, Primitive] = {
    p.name: p
    for p in (
        MatMul(), Add(), Subtract(), Multiply(), Divide(), Exp(), Log(), Tanh(), Relu(),
        Sigmoid(), Negate(), Sum(), Mean(), Max(), LogSoftmax(), Concat(), Slice(),
        Transpose(), Reshape(),
    )
}


def apply_primitive(op: str, inputs: Sequence[Any], **params: Any) -> Tensor:
    """Evaluate a primitive; record it on the tape when any input requires gradients."""
    prim = PRIMITIVES.get(op)
    if prim is None:
        raise ContractError(f"unknown primitive '{op}'")
    tensors = tuple(as_tensor(t) for t in inputs)
    if prim.arity is not None and len(tensors) != prim.arity:
        raise ContractError(f"{op} takes {prim.arity} inputs, got {len(tensors)}")
    arrays = [t.data for t in tensors]
    out_data = np.asarray(prim.forward(*arrays, **params), dtype=np.float64)
    if not np.all(np.isfinite(out_data)):
        raise NonFiniteError(f"{op} produced non-finite values")

    track = is_grad_enabled() and any(t.requires_grad for t in tensors)
    out = Tensor(out_data, requires_grad=track)
    if track:
        out._record = TapeRecord(op=op, inputs=tensors, output=out, params=params, saved={"out": out_data})
    return out


# ----------------------------
# Backward
# ----------------------------

class GradientMap:
    """Parameter node id -> gradient tensor of the parameter's shape."""

    def __init__(self) -> None:
        self._grads: Dict[int, Tensor] = {}
        self._params: Dict[int, Tensor] = {}

    def _set(self, param: Tensor, grad: np.ndarray) -> None:
        if grad.shape != param.shape:
            raise ContractError(f"gradient shape {grad.shape} != parameter shape {param.shape}")
        self._grads[id(param)] = Tensor(grad)
        self._params[id(param)] = param

    def __getitem__(self, param: Tensor) -> Tensor:
        try:
            return self._grads[id(param)]
        except KeyError:
            raise ContractError(f"no gradient for parameter {param!r}") from None

    def get(self, param: Tensor) -> Optional[Tensor]:
        return self._grads.get(id(param))

    def __contains__(self, param: Tensor) -> bool:
        return id(param) in self._grads

    def __len__(self) -> int:
        return len(self._grads)

    def items(self) -> Iterator[Tuple[Tensor, Tensor]]:
        for key, grad in self._grads.items():
            yield self._params[key], grad

    def merged(self, other: "GradientMap") -> "GradientMap":
        """Sum of two maps (entries missing from one side count as zero)."""
        out = GradientMap()
        for param, grad in self.items():
            out._set(param, grad.data.copy())
        for param, grad in other.items():
            existing = out.get(param)
            out._set(param, grad.data + (existing.data if existing is not None else 0.0))
        return out


def backward(loss: Tensor) -> GradientMap:
    """Gradients of a scalar loss with respect to every reachable leaf that requires them."""
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._backward_done:
        raise ContractError("backward already ran on this tape; re-evaluate the forward pass")
    grads_out = GradientMap()
    if not loss.requires_grad:
        return grads_out

    tape = ComputationTape.from_output(loss)
    grads: Dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaves: Dict[int, Tensor] = {}
    for rec in reversed(tape.records):
        g = grads.pop(id(rec.output), None)
        if g is None:
            continue
        prim = PRIMITIVES[rec.op]
        in_grads = prim.backward(g, rec.saved["out"], *(t.data for t in rec.inputs), **rec.params)
        for inp, gi in zip(rec.inputs, in_grads):
            if gi is None or not inp.requires_grad:
                continue
            key = id(inp)
            grads[key] = grads[key] + gi if key in grads else np.array(gi, dtype=np.float64)
            if inp.is_leaf:
                leaves[key] = inp
    if loss.is_leaf:
        leaves[id(loss)] = loss
    for key, leaf in leaves.items():
        grads_out._set(leaf, grads[key])
    loss._backward_done = True
    logger.debug("backward: %d tape records, %d parameters", len(tape), len(grads_out))
    return grads_out


def grad_check(function: Callable[[Tensor], Tensor], point: ArrayLike, h: float = 1e-5) -> float:
    """Max over coordinates of |autodiff - central difference| / max(1, |central difference|)."""
    if h <= 0:
        raise ContractError("grad_check needs h > 0")
    base = np.array(point, dtype=np.float64)
    x = Tensor(base, requires_grad=True)
    grads = backward(function(x))
    auto = grads[x].data if x in grads else np.zeros_like(base)

    worst = 0.0
    with no_grad():
        for i in range(base.size):
            plus = base.copy()
            minus = base.copy()
            plus.flat[i] += h
            minus.flat[i] -= h
            fd = (function(Tensor(plus)).item() - function(Tensor(minus)).item()) / (2.0 * h)
            err = abs(auto.flat[i] - fd) / max(1.0, abs(fd))
            worst = max(worst, err)
    return worst


# ----------------------------
# Optimization
# ----------------------------

@dataclass
class ParamGroup:
    params: List[Tensor]
    lr: float


class SGD:
    """Momentum SGD with coupled weight decay: v = m*v + (g + wd*p); p -= lr*v."""

    def __init__(
        self,
        groups: Union[Sequence[ParamGroup], Sequence[Tensor]],
        lr: float = 0.1,
        momentum: float = 0.0,
        weight_decay: float = 0.0,
        max_grad_norm: Optional[float] = None,
    ):
        if lr <= 0:
            raise ContractError("SGD needs lr > 0")
        if not 0.0 <= momentum < 1.0:
            raise ContractError("SGD needs momentum in [0, 1)")
        if weight_decay < 0:
            raise ContractError("SGD needs weight_decay >= 0")
        if groups and isinstance(groups[0], Tensor):
            groups = [ParamGroup(list(groups), lr)]  # type: ignore[arg-type]
        self.groups: List[ParamGroup] = list(groups)  # type: ignore[arg-type]
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.max_grad_norm = max_grad_norm
        self.velocity: Dict[int, np.ndarray] = {}

    def params(self) -> List[Tensor]:
        return [p for group in self.groups for p in group.params]

    def step(self, grads: GradientMap, lr_scale: float = 1.0) -> None:
        missing = [p for p in self.params() if p not in grads]
        if missing:
            raise ContractError(f"missing gradient for parameter {missing[0]!r}")
        clip = 1.0
        if self.max_grad_norm is not None:
            total = float(np.sqrt(sum(float(np.sum(grads[p].data ** 2)) for p in self.params())))
            if total > self.max_grad_norm:
                clip = self.max_grad_norm / total
        for group in self.groups:
            for p in group.params:
                g = grads[p].data * clip
                self.velocity[id(p)] = sgd_update(p, g, group.lr * lr_scale, self.momentum, self.weight_decay,
                                                  self.velocity.get(id(p)))


def sgd_update(
    param: Tensor,
    grad: np.ndarray,
    lr: float,
    momentum: float,
    weight_decay: float,
    velocity: Optional[np.ndarray] = None,
) -> np.ndarray:
    d = grad + weight_decay * param.data if weight_decay else grad
    v = d.copy() if velocity is None or momentum == 0.0 else momentum * velocity + d
    param.data -= lr * v
    return v


def sgd_step(
    params: Sequence[Tensor],
    grads: GradientMap,
    lr: float,
    momentum: float = 0.0,
    weight_decay: float = 0.0,
    velocity: Optional[Dict[int, np.ndarray]] = None,
) -> Dict[int, np.ndarray]:
    """Functional momentum-SGD step; returns the velocity state to pass to the next call."""
    if lr <= 0 or not 0.0 <= momentum < 1.0 or weight_decay < 0:
        raise ContractError("sgd_step needs lr > 0, momentum in [0, 1), weight_decay >= 0")
    state: Dict[int, np.ndarray] = dict(velocity or {})
    for p in params:
        if p not in grads:
            raise ContractError(f"missing gradient for parameter {p!r}")
    for p in params:
        state[id(p)] = sgd_update(p, grads[p].data, lr, momentum, weight_decay, state.get(id(p)))
    return state


def constant_then_decay(step: int, total: int, decay_fraction: float = 0.3, final_ratio: float = 0.1) -> float:
    """Learning-rate multiplier: 1 until the last ``decay_fraction`` of steps, then linear to ``final_ratio``."""
    if total <= 0:
        return 1.0
    start = int(round(total * (1.0 - decay_fraction)))
    if step < start or total == start:
        return 1.0
    progress = min(1.0, (step - start) / float(total - start))
    return 1.0 - (1.0 - final_ratio) * progress


# ----------------------------
# Layers
# ----------------------------

class Linear:
    """y = x @ W + b with W of shape [in, out]."""

    def __init__(self, n_in: int, n_out: int, rng: Optional[np.random.Generator] = None, zero: bool = False):
        if zero or rng is None:
            w = np.zeros((n_in, n_out))
        else:
            w = rng.standard_normal((n_in, n_out)) / np.sqrt(n_in)
        self.weight = parameter(w, name="weight")
        self.bias = parameter(np.zeros(n_out), name="bias")

    def __call__(self, x: Tensor) -> Tensor:
        return x @ self.weight + self.bias

    def named_parameters(self, prefix: str = "") -> Dict[str, Tensor]:
        return {f"{prefix}weight": self.weight, f"{prefix}bias": self.bias}


class MLP:
    """Linear layers with tanh in between; the last layer stays linear."""

    def __init__(self, sizes: Sequence[int], rng: Optional[np.random.Generator] = None, zero_last: bool = False):
        if len(sizes) < 2:
            raise ContractError("MLP needs at least input and output sizes")
        self.sizes = list(sizes)
        n = len(sizes) - 1
        self.layers = [
            Linear(sizes[i], sizes[i + 1], rng, zero=(zero_last and i == n - 1))
            for i in range(n)
        ]

    def __call__(self, x: Tensor) -> Tensor:
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = x.tanh()
        return x

    def named_parameters(self, prefix: str = "") -> Dict[str, Tensor]:
        out: Dict[str, Tensor] = {}
        for i, layer in enumerate(self.layers):
            out.update(layer.named_parameters(f"{prefix}layers.{i}."))
        return out

    def parameters(self) -> List[Tensor]:
        return list(self.named_parameters().values())


def load_named(params: Mapping[str, Tensor], arrays: Mapping[str, np.ndarray]) -> None:
    """Copy arrays into parameters by name; every name must be present with a matching shape."""
    for name, p in params.items():
        if name not in arrays:
            raise ContractError(f"checkpoint lacks parameter '{name}'")
        arr = np.asarray(arrays[name], dtype=np.float64)
        if arr.shape != p.shape:
            raise ShapeMismatchError(f"parameter '{name}': checkpoint shape {arr.shape} != model shape {p.shape}")
        p.data = arr.copy()
