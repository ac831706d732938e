"""Dense tensors with reverse-mode gradients.

Every operation records its parents and a gradient closure on the result.
``backward`` walks that tape in reverse topological order and accumulates
gradients into leaf tensors (``Parameter`` objects during training). The
tape is released after each backward pass unless ``retain_graph`` is set.
"""

import logging
import threading
from contextlib import contextmanager
from typing import (
    Callable, Dict, Iterable, Iterator, List, Optional, Sequence, Tuple, Union
)

import numpy as np

from .errors import ConfigError, ContractError, DimensionError


logger = logging.getLogger(__name__)

BCE_EPSILON = 1e-7

_grad_state = threading.local()


def is_grad_enabled() -> bool:
    """Whether operations currently record the tape (per thread)."""
    return getattr(_grad_state, "enabled", True)


@contextmanager
def no_grad() -> Iterator[None]:
    """Run operations without recording gradients.

    Example:
        with no_grad():
            probabilities = model.forward_batch(batch)
    """
    previous = is_grad_enabled()
    _grad_state.enabled = False
    try:
        yield
    finally:
        _grad_state.enabled = previous


class RowGrad:
    """Gradient that touches only some rows of a 2-D operand."""

    __slots__ = ("rows", "values")

    def __init__(self, rows: np.ndarray, values: np.ndarray):
        self.rows = rows
        self.values = values

    def dense(self, shape: Tuple[int, ...]) -> np.ndarray:
        out = np.zeros(shape)
        np.add.at(out, self.rows, self.values)
        return out


GradOut = Optional[Union[np.ndarray, RowGrad]]
GradFn = Callable[[np.ndarray], Sequence[GradOut]]


class Tensor:
    """Dense n-dimensional float64 array with an optional gradient buffer."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_grad_fn", "op")

    def __init__(self, data, requires_grad: bool = False):
        self.data: np.ndarray = np.array(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = np.zeros_like(self.data) if requires_grad else None
        self._parents: Tuple["Tensor", ...] = ()
        self._grad_fn: Optional[GradFn] = None
        self.op = ""

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad[...] = 0.0

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op!r}, requires_grad={self.requires_grad})"

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return sub(self, other)

    def __mul__(self, other: "Tensor") -> "Tensor":
        return mul(self, other)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def __neg__(self) -> "Tensor":
        return scale(self, -1.0)

    def __getitem__(self, key) -> "Tensor":
        return index(self, key)


class Parameter(Tensor):
    """Trainable leaf tensor with a model-unique name and optimizer state."""

    __slots__ = ("name", "state")

    def __init__(self, data, name: str):
        super().__init__(data, requires_grad=True)
        self.name = name
        self.state: Dict[str, np.ndarray] = {}

    def __repr__(self) -> str:
        return f"Parameter(name={self.name!r}, shape={self.shape})"


def _result(data: np.ndarray, parents: Tuple[Tensor, ...], grad_fn: GradFn, op: str) -> Tensor:
    """Wrap an op's output and record it on the tape when needed."""
    out = Tensor.__new__(Tensor)
    out.data = np.asarray(data, dtype=np.float64)
    out.grad = None
    out.op = op
    out._parents = ()
    out._grad_fn = None
    out.requires_grad = False
    if is_grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._grad_fn = grad_fn
    return out


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum a gradient back down to an operand's broadcast shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _binary_shape(a: Tensor, b: Tensor, op: str) -> Tuple[int, ...]:
    """Equal shapes, or one operand broadcast into the other (bias rows, weight columns)."""
    if a.shape == b.shape:
        return a.shape
    try:
        shape = np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        shape = None
    if shape is None or shape not in (a.shape, b.shape):
        raise DimensionError(f"{op}: incompatible shapes {a.shape} and {b.shape}")
    return shape


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _binary_shape(a, b, "add")

    def grad_fn(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _result(a.data + b.data, (a, b), grad_fn, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _binary_shape(a, b, "sub")

    def grad_fn(g):
        return _unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)

    return _result(a.data - b.data, (a, b), grad_fn, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _binary_shape(a, b, "mul")

    def grad_fn(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _result(a.data * b.data, (a, b), grad_fn, "mul")


def scale(a: Tensor, factor: float) -> Tensor:
    def grad_fn(g):
        return (g * factor,)

    return _result(a.data * factor, (a,), grad_fn, "scale")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of an m×k and a k×n tensor."""
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")

    def grad_fn(g):
        return g @ b.data.T, a.data.T @ g

    return _result(a.data @ b.data, (a, b), grad_fn, "matmul")


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)

    def grad_fn(g):
        return (g * (1.0 - out * out),)

    return _result(out, (a,), grad_fn, "tanh")


def sigmoid(a: Tensor) -> Tensor:
    # tanh form never overflows
    out = 0.5 * (1.0 + np.tanh(0.5 * a.data))

    def grad_fn(g):
        return (g * out * (1.0 - out),)

    return _result(out, (a,), grad_fn, "sigmoid")


def relu(a: Tensor) -> Tensor:
    positive = a.data > 0

    def grad_fn(g):
        return (g * positive,)

    return _result(np.where(positive, a.data, 0.0), (a,), grad_fn, "relu")


_ELEMENTWISE: Dict[str, Callable[..., Tensor]] = {
    "tanh": tanh,
    "sigmoid": sigmoid,
    "relu": relu,
    "add": add,
    "mul": mul,
}


def elementwise(op: str, *args: Tensor) -> Tensor:
    """Apply a named elementwise op (tanh, sigmoid, relu, add, mul)."""
    try:
        fn = _ELEMENTWISE[op]
    except KeyError:
        raise ConfigError(f"Unknown elementwise op: {op}. Use one of {sorted(_ELEMENTWISE)}")
    return fn(*args)


def tensor_sum(a: Tensor, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
    def grad_fn(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _result(np.asarray(a.data.sum(axis=axis, keepdims=keepdims)), (a,), grad_fn, "sum")


def mean(a: Tensor) -> Tensor:
    return scale(tensor_sum(a), 1.0 / max(a.data.size, 1))


def reshape(a: Tensor, shape: Tuple[int, ...]) -> Tensor:
    def grad_fn(g):
        return (g.reshape(a.shape),)

    return _result(a.data.reshape(shape), (a,), grad_fn, "reshape")


def transpose(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise DimensionError(f"transpose: expected a 2-D tensor, got {a.shape}")

    def grad_fn(g):
        return (g.T,)

    return _result(a.data.T, (a,), grad_fn, "transpose")


def _is_basic_index(key) -> bool:
    parts = key if isinstance(key, tuple) else (key,)
    return all(isinstance(p, (int, np.integer, slice)) or p is Ellipsis or p is None
               for p in parts)


def index(a: Tensor, key) -> Tensor:
    """Index or slice a tensor; fancy indices accumulate repeated positions."""
    basic = _is_basic_index(key)

    def grad_fn(g):
        grad = np.zeros_like(a.data)
        if basic:
            grad[key] += g
        else:
            np.add.at(grad, key, g)
        return (grad,)

    return _result(np.asarray(a.data[key]), (a,), grad_fn, "index")


def take_rows(table: Tensor, ids: np.ndarray) -> Tensor:
    """Gather rows of a 2-D table; output shape is ids.shape + (columns,)."""
    ids = np.asarray(ids, dtype=np.int64)
    if table.ndim != 2:
        raise DimensionError(f"take_rows: table must be 2-D, got {table.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise DimensionError(
            f"take_rows: index out of range [0, {table.shape[0]}) for table {table.shape}"
        )
    width = table.shape[1]

    def grad_fn(g):
        return (RowGrad(ids.reshape(-1), g.reshape(-1, width)),)

    return _result(table.data[ids], (table,), grad_fn, "take_rows")


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    if not tensors:
        raise DimensionError("concat: no tensors given")
    ndim = tensors[0].ndim
    ax = axis % ndim
    for t in tensors:
        if t.ndim != ndim or t.shape[:ax] + t.shape[ax + 1:] != \
                tensors[0].shape[:ax] + tensors[0].shape[ax + 1:]:
            raise DimensionError(
                f"concat: shapes {[x.shape for x in tensors]} disagree off axis {axis}"
            )
    bounds = np.cumsum([t.shape[ax] for t in tensors])[:-1]

    def grad_fn(g):
        return tuple(np.split(g, bounds, axis=ax))

    return _result(np.concatenate([t.data for t in tensors], axis=ax), tuple(tensors),
                   grad_fn, "concat")


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise DimensionError("stack: no tensors given")
    shape = tensors[0].shape
    for t in tensors:
        if t.shape != shape:
            raise DimensionError(f"stack: shapes {[x.shape for x in tensors]} differ")
    ax = axis % (len(shape) + 1)

    def grad_fn(g):
        return tuple(np.take(g, i, axis=ax) for i in range(len(tensors)))

    return _result(np.stack([t.data for t in tensors], axis=ax), tuple(tensors),
                   grad_fn, "stack")


def softmax(x: Tensor, mask: Optional[np.ndarray] = None) -> Tensor:
    """Softmax over the last axis of a 1-D or 2-D tensor.

    Positions where ``mask`` is False get exactly zero weight. Uses
    max-subtraction so large inputs never overflow.
    """
    if x.data.size == 0 or x.ndim not in (1, 2):
        raise DimensionError(f"softmax: expected a non-empty 1-D or 2-D tensor, got {x.shape}")
    if mask is None:
        mask = np.ones(x.shape, dtype=bool)
    else:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != x.shape:
            raise DimensionError(f"softmax: mask shape {mask.shape} != input shape {x.shape}")
    if not mask.any(axis=-1).all():
        raise ContractError("softmax: every position of a row is masked")

    shifted = np.where(mask, x.data, -np.inf)
    shifted = shifted - shifted.max(axis=-1, keepdims=True)
    exps = np.where(mask, np.exp(shifted), 0.0)
    out = exps / exps.sum(axis=-1, keepdims=True)

    def grad_fn(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return _result(out, (x,), grad_fn, "softmax")


def bce_loss(p: Tensor, y) -> Tensor:
    """Mean binary cross-entropy with probabilities clamped to [eps, 1-eps]."""
    targets = np.asarray(y.data if isinstance(y, Tensor) else y, dtype=np.float64)
    if p.shape != targets.shape:
        raise DimensionError(f"bce_loss: predictions {p.shape} vs targets {targets.shape}")
    if p.data.size == 0:
        raise DimensionError("bce_loss: empty input")
    if not np.isin(targets, (0.0, 1.0)).all():
        raise ContractError("bce_loss: targets must be 0 or 1")

    clamped = np.clip(p.data, BCE_EPSILON, 1.0 - BCE_EPSILON)
    inside = (p.data >= BCE_EPSILON) & (p.data <= 1.0 - BCE_EPSILON)
    n = p.data.size
    losses = -(targets * np.log(clamped) + (1.0 - targets) * np.log(1.0 - clamped))

    def grad_fn(g):
        local = (clamped - targets) / (clamped * (1.0 - clamped)) / n
        return (g * local * inside,)

    return _result(np.asarray(losses.mean()), (p,), grad_fn, "bce")


def _topological_order(root: Tensor) -> List[Tensor]:
    """Iterative DFS; unrolled LSTMs are too deep for recursion."""
    order: List[Tensor] = []
    visited = set()
    stack_: List[Tuple[Tensor, bool]] = [(root, False)]
    while stack_:
        node, expanded = stack_.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack_.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in visited:
                stack_.append((parent, False))
    return order


def _accumulate_leaf(leaf: Tensor, grad: Union[np.ndarray, RowGrad]) -> None:
    if leaf.grad is None:
        leaf.grad = np.zeros_like(leaf.data)
    if isinstance(grad, RowGrad):
        np.add.at(leaf.grad, grad.rows, grad.values)
    else:
        leaf.grad += grad


def backward(loss: Tensor, retain_graph: bool = False) -> None:
    """Accumulate d(loss)/d(leaf) into every participating leaf's grad.

    Gradients add up across calls until zeroed.

    Args:
        loss: Scalar tensor produced by recorded operations
        retain_graph: Keep the tape so backward can run again on it
    """
    if loss.data.size != 1:
        raise ContractError(f"backward: loss must be a scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        logger.debug("backward called on a tensor that records no gradients")
        return
    if loss._grad_fn is None:
        _accumulate_leaf(loss, np.ones_like(loss.data))
        return

    order = _topological_order(loss)
    grads: Dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}

    for node in reversed(order):
        if node._grad_fn is None:
            continue
        g = grads.pop(id(node), None)
        if g is None:
            continue
        for parent, pg in zip(node._parents, node._grad_fn(g)):
            if pg is None or not parent.requires_grad:
                continue
            if parent._grad_fn is None:
                _accumulate_leaf(parent, pg)
                continue
            if isinstance(pg, RowGrad):
                pg = pg.dense(parent.shape)
            existing = grads.get(id(parent))
            grads[id(parent)] = pg if existing is None else existing + pg

    if not retain_graph:
        for node in order:
            node._parents = ()
            node._grad_fn = None


def xavier_uniform(
    rng: np.random.Generator,
    shape: Tuple[int, ...],
    fan_in: Optional[int] = None,
    fan_out: Optional[int] = None
) -> np.ndarray:
    """Uniform in ±sqrt(6 / (fan_in + fan_out))."""
    fan_in = shape[0] if fan_in is None else fan_in
    fan_out = shape[-1] if fan_out is None else fan_out
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


def adam_step(
    params: Iterable[Parameter],
    lr: float = 1e-3,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8
) -> None:
    """In-place Adam update with bias correction, then zero the gradients.

    Moment buffers live in each parameter's ``state`` and persist across calls.
    """
    if lr <= 0:
        raise ConfigError(f"Adam learning rate must be positive, got {lr}")

    for param in params:
        if param.grad is None:
            continue
        g = param.grad
        state = param.state
        step = int(state.get("step", 0)) + 1
        m = beta1 * state.get("m", np.zeros_like(g)) + (1.0 - beta1) * g
        v = beta2 * state.get("v", np.zeros_like(g)) + (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1 ** step)
        v_hat = v / (1.0 - beta2 ** step)
        param.data -= lr * m_hat / (np.sqrt(v_hat) + eps)
        state["m"], state["v"], state["step"] = m, v, np.asarray(step)
        param.grad[...] = 0.0


def gradient_check(
    loss_fn: Callable[[], Tensor],
    params: Sequence[Tensor],
    h: float = 1e-4
) -> Dict[str, float]:
    """Compare analytic gradients with central finite differences.

    Args:
        loss_fn: Rebuilds the scalar loss from the current parameter values
        params: Leaf tensors to check
        h: Finite-difference step

    Returns:
        Relative error ||analytic - numeric|| / (||analytic|| + ||numeric||) per parameter
    """
    for p in params:
        p.zero_grad()
    backward(loss_fn())
    analytic = [p.grad.copy() if p.grad is not None else np.zeros_like(p.data) for p in params]

    errors: Dict[str, float] = {}
    with no_grad():
        for i, (param, a_grad) in enumerate(zip(params, analytic)):
            numeric = np.zeros_like(param.data)
            flat = param.data.reshape(-1)
            for j in range(flat.size):
                original = flat[j]
                flat[j] = original + h
                f_plus = loss_fn().item()
                flat[j] = original - h
                f_minus = loss_fn().item()
                flat[j] = original
                numeric.reshape(-1)[j] = (f_plus - f_minus) / (2.0 * h)

            denom = np.linalg.norm(a_grad) + np.linalg.norm(numeric)
            name = getattr(param, "name", f"param{i}")
            errors[name] = 0.0 if denom == 0 else float(np.linalg.norm(a_grad - numeric) / denom)
    return errors
