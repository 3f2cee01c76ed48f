"""
Dense float64 tensors with a recording tape for reverse-mode differentiation.

Ops record themselves on the active :class:`Tape` (entered with ``with Tape()``)
when at least one input requires a gradient. Outside a tape nothing is
recorded, which is how inference runs.
"""
import itertools
import logging
from contextvars import ContextVar
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .core import InvalidConfigError, NonFiniteError, NonScalarLossError, ShapeMismatchError

logger = logging.getLogger(__name__)

_node_ids = itertools.count()
_debug_checks = False


def set_debug(enabled: bool) -> None:
    """Check every op output for NaN/Inf."""
    global _debug_checks
    _debug_checks = bool(enabled)


class Tensor:
    """Shape plus a contiguous row-major float64 buffer. Treated as immutable once built."""

    __slots__ = ("data", "requires_grad", "node_id", "name")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        self.data = np.ascontiguousarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.node_id = next(_node_ids)
        self.name = name
        if _debug_checks and not np.all(np.isfinite(self.data)):
            raise NonFiniteError(f"Non-finite values in tensor {name or self.node_id}")

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label})"

    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return self.__mul__(other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return scale(self, -1.0)


def _as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


# -------------------------------
# Tape
# -------------------------------

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


@dataclass
class TapeRecord:
    op: str
    inputs: Tuple[Tensor, ...]
    output: Tensor
    backward: BackwardFn


_active_tape: ContextVar[Optional["Tape"]] = ContextVar("active_tape", default=None)


class Tape:
    """Ordered record of primitive ops. Execution order is a topological order."""

    def __init__(self):
        self.records: List[TapeRecord] = []
        self._token = None

    def __enter__(self) -> "Tape":
        self._token = _active_tape.set(self)
        return self

    def __exit__(self, *exc) -> None:
        _active_tape.reset(self._token)
        self._token = None

    def __len__(self) -> int:
        return len(self.records)


def _emit(op: str, inputs: Tuple[Tensor, ...], out: np.ndarray, backward: BackwardFn) -> Tensor:
    tape = _active_tape.get()
    tracked = tape is not None and any(t.requires_grad for t in inputs)
    result = Tensor(out, requires_grad=tracked)
    if tracked:
        tape.records.append(TapeRecord(op, inputs, result, backward))
    return result


class Gradients:
    """Gradients by tensor. Tensors the loss does not reach get zeros."""

    def __init__(self, by_node: Dict[int, np.ndarray]):
        self._by_node = by_node

    def __getitem__(self, tensor: Tensor) -> np.ndarray:
        grad = self._by_node.get(tensor.node_id)
        return np.zeros_like(tensor.data) if grad is None else grad

    def __contains__(self, tensor: Tensor) -> bool:
        return tensor.node_id in self._by_node

    def for_params(self, params: Dict[str, Tensor]) -> Dict[str, np.ndarray]:
        return {name: self[tensor] for name, tensor in params.items()}


def backward(tape: Tape, loss: Tensor) -> Gradients:
    """
    Reverse sweep over the tape from a scalar loss.

    Raises:
        NonScalarLossError: If the loss has more than one element
    """
    if loss.size != 1:
        raise NonScalarLossError(f"Loss must be a scalar, got shape {loss.shape}")
    grads: Dict[int, np.ndarray] = {loss.node_id: np.ones_like(loss.data)}
    for record in reversed(tape.records):
        upstream = grads.get(record.output.node_id)
        if upstream is None:
            continue
        for tensor, grad in zip(record.inputs, record.backward(upstream)):
            if grad is None or not tensor.requires_grad:
                continue
            if tensor.node_id in grads:
                grads[tensor.node_id] = grads[tensor.node_id] + grad
            else:
                grads[tensor.node_id] = grad
    return Gradients(grads)


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_broadcast(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeMismatchError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


# -------------------------------
# Elementwise and structural ops
# -------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast("add", a, b)
    return _emit("add", (a, b), a.data + b.data,
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast("sub", a, b)
    return _emit("sub", (a, b), a.data - b.data,
                 lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast("mul", a, b)
    return _emit("mul", (a, b), a.data * b.data,
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def scale(a: Tensor, factor: float) -> Tensor:
    factor = float(factor)
    return _emit("scale", (a,), a.data * factor, lambda g: (g * factor,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes, broadcasting leading (batch) axes."""
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeMismatchError(f"matmul: shapes {a.shape} and {b.shape} are not conformable")

    def grad_fn(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _emit("matmul", (a, b), np.matmul(a.data, b.data), grad_fn)


def transpose(a: Tensor, axes: Optional[Sequence[int]] = None) -> Tensor:
    """Permute axes; by default swap the last two."""
    if axes is None:
        axes = list(range(a.ndim))
        axes[-2], axes[-1] = axes[-1], axes[-2]
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _emit("transpose", (a,), np.transpose(a.data, axes),
                 lambda g: (np.transpose(g, inverse),))


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeMismatchError(f"reshape: cannot view {a.shape} as {tuple(shape)}") from None
    return _emit("reshape", (a,), out, lambda g: (g.reshape(a.shape),))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = tuple(tensors)
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as e:
        raise ShapeMismatchError(f"concat: {e}") from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _emit("concat", tensors, out, lambda g: tuple(np.split(g, bounds, axis=axis)))


def slice_tensor(a: Tensor, key) -> Tensor:
    """Basic (non-fancy) indexing, e.g. ``slice_tensor(x, (slice(None), 0))``."""
    out = a.data[key]

    def grad_fn(g):
        full = np.zeros_like(a.data)
        full[key] += g
        return (full,)

    return _emit("slice", (a,), np.array(out), grad_fn)


def sum_all(a: Tensor) -> Tensor:
    return _emit("sum", (a,), np.array(a.data.sum()), lambda g: (np.full_like(a.data, g),))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _emit("relu", (x,), np.where(mask, x.data, 0.0), lambda g: (g * mask,))


def softmax_rows(x: Tensor) -> Tensor:
    """Softmax over the last axis with max subtraction."""
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)

    def grad_fn(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _emit("softmax", (x,), y, grad_fn)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-10) -> Tensor:
    """Normalize the last axis to zero mean and unit (population) std, then scale and shift."""
    if gain.shape != (x.shape[-1],) or bias.shape != (x.shape[-1],):
        raise ShapeMismatchError(
            f"layer_norm: gain {gain.shape} / bias {bias.shape} do not match width {x.shape[-1]}"
        )
    n = x.shape[-1]
    mean = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mean
    inv_std = 1.0 / np.sqrt((centered ** 2).mean(axis=-1, keepdims=True) + eps)
    xhat = centered * inv_std

    def grad_fn(g):
        gxhat = g * gain.data
        gx = inv_std / n * (
            n * gxhat
            - gxhat.sum(axis=-1, keepdims=True)
            - xhat * (gxhat * xhat).sum(axis=-1, keepdims=True)
        )
        lead = tuple(range(g.ndim - 1))
        return gx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _emit("layer_norm", (x, gain, bias), xhat * gain.data + bias.data, grad_fn)


# -------------------------------
# Convolutions
# -------------------------------


def _window_index(length: int, kernel: int, stride: int) -> np.ndarray:
    out_len = (length - kernel) // stride + 1
    return stride * np.arange(out_len)[:, None] + np.arange(kernel)[None, :]


def conv1d(x: Tensor, kernels: Tensor, stride: int = 1) -> Tensor:
    """
    Valid-padding cross-correlation.

    Args:
        x: (batch, in_channels, length)
        kernels: (out_channels, in_channels, kernel_size)
        stride: Step between windows, >= 1

    Returns:
        (batch, out_channels, (length - kernel_size) // stride + 1)
    """
    if stride < 1:
        raise ShapeMismatchError(f"conv1d: stride must be >= 1, got {stride}")
    if x.ndim != 3 or kernels.ndim != 3 or x.shape[1] != kernels.shape[1] or kernels.shape[2] > x.shape[2]:
        raise ShapeMismatchError(f"conv1d: input {x.shape} and kernels {kernels.shape} do not fit")
    index = _window_index(x.shape[2], kernels.shape[2], stride)
    patches = x.data[:, :, index]  # (batch, in, out_len, kernel)
    out = np.einsum("bctk,ock->bot", patches, kernels.data)

    def grad_fn(g):
        gk = np.einsum("bot,bctk->ock", g, patches)
        gpatches = np.einsum("bot,ock->bctk", g, kernels.data)
        gx = np.zeros_like(x.data)
        np.add.at(gx, (slice(None), slice(None), index), gpatches)
        return gx, gk

    return _emit("conv1d", (x, kernels), out, grad_fn)


def conv_transpose1d(x: Tensor, kernels: Tensor, stride: int = 1) -> Tensor:
    """
    Transposed convolution, the adjoint of :func:`conv1d`.

    Args:
        x: (batch, in_channels, length)
        kernels: (in_channels, out_channels, kernel_size)

    Returns:
        (batch, out_channels, (length - 1) * stride + kernel_size)
    """
    if stride < 1:
        raise ShapeMismatchError(f"conv_transpose1d: stride must be >= 1, got {stride}")
    if x.ndim != 3 or kernels.ndim != 3 or x.shape[1] != kernels.shape[0]:
        raise ShapeMismatchError(
            f"conv_transpose1d: input {x.shape} and kernels {kernels.shape} do not fit"
        )
    batch, _, length = x.shape
    _, out_channels, kernel = kernels.shape
    out_len = (length - 1) * stride + kernel
    index = _window_index(out_len, kernel, stride)  # (length, kernel)
    contributions = np.einsum("bct,cok->botk", x.data, kernels.data)
    out = np.zeros((batch, out_channels, out_len))
    np.add.at(out, (slice(None), slice(None), index), contributions)

    def grad_fn(g):
        gcontrib = g[:, :, index]  # (batch, out, length, kernel)
        gx = np.einsum("botk,cok->bct", gcontrib, kernels.data)
        gk = np.einsum("botk,bct->cok", gcontrib, x.data)
        return gx, gk

    return _emit("conv_transpose1d", (x, kernels), out, grad_fn)


# -------------------------------
# Losses
# -------------------------------


def mse_loss(pred: Tensor, target: Union[Tensor, np.ndarray]) -> Tensor:
    """Mean of squared differences over every element."""
    target = target.data if isinstance(target, Tensor) else np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeMismatchError(f"mse_loss: shapes {pred.shape} and {target.shape} differ")
    diff = pred.data - target
    n = diff.size

    def grad_fn(g):
        return (g * 2.0 * diff / n,)

    return _emit("mse", (pred,), np.array((diff ** 2).mean()), grad_fn)


# -------------------------------
# Optimizer
# -------------------------------


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.lr <= 0:
            raise InvalidConfigError(f"Learning rate must be positive, got {self.lr}")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise InvalidConfigError("Adam betas must lie in [0, 1)")
        if self.step < 0:
            raise InvalidConfigError("Adam step count must be non-negative")


def adam_step(
    params: Dict[str, Tensor],
    grads: Dict[str, np.ndarray],
    state: AdamState,
) -> Dict[str, Tensor]:
    """
    One bias-corrected Adam update.

    Returns new parameter tensors; the moment buffers in ``state`` are updated in place.
    """
    state.step += 1
    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step
    updated = {}
    for name, param in params.items():
        g = grads[name]
        if g.shape != param.shape:
            raise ShapeMismatchError(f"Gradient of {name} has shape {g.shape}, expected {param.shape}")
        if name not in state.m:
            state.m[name] = np.zeros_like(param.data)
            state.v[name] = np.zeros_like(param.data)
        state.m[name] = state.beta1 * state.m[name] + (1.0 - state.beta1) * g
        state.v[name] = state.beta2 * state.v[name] + (1.0 - state.beta2) * (g * g)
        step = (state.lr / bc1) * state.m[name] / (np.sqrt(state.v[name] / bc2) + state.eps)
        updated[name] = Tensor(param.data - step, requires_grad=param.requires_grad, name=name)
    return updated


def parameter(data: np.ndarray, name: str) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


def numerical_gradient(
    loss_fn: Callable[[], float],
    tensor: Tensor,
    indices: Iterable[Tuple[int, ...]],
    h: float = 1e-5,
) -> Dict[Tuple[int, ...], float]:
    """Central finite differences of ``loss_fn`` w.r.t. selected entries of ``tensor``."""
    estimates = {}
    for index in indices:
        original = tensor.data[index]
        tensor.data[index] = original + h
        plus = loss_fn()
        tensor.data[index] = original - h
        minus = loss_fn()
        tensor.data[index] = original
        estimates[index] = (plus - minus) / (2.0 * h)
    return estimates
