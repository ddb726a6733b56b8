"""Dense float64 tensors with reverse-mode automatic differentiation.

Every operation builds a node of a computation graph; ``backward`` walks the
graph in reverse topological order and accumulates gradients into every
tensor that requires them. All values are checked for finiteness at creation
and after every primitive, so NaN/Inf can never propagate silently.

The graph is single-use: ``backward`` consumes it. Tensors themselves are
treated as immutable after creation (the optimizer mutates parameter data
in place between graph builds, which is the one sanctioned exception).
"""

from __future__ import annotations

import hashlib
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractError, NumericError, ShapeError

Array = np.ndarray


def _as_f64(data) -> Array:
    return np.asarray(data, dtype=np.float64)


class Tensor:
    """A float64 array plus an optional position in a gradient graph."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_vjp", "_op", "_consumed")

    def __init__(self, data, requires_grad: bool = False):
        arr = _as_f64(data)
        if not np.all(np.isfinite(arr)):
            raise NumericError("non-finite value in tensor creation")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Array | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._vjp: Callable[[Array], Sequence[Array | None]] | None = None
        self._op: str | None = None
        self._consumed = False

    # -- construction of op results ------------------------------------

    @classmethod
    def _result(cls, data: Array, op: str, parents: tuple["Tensor", ...],
                vjp: Callable[[Array], Sequence[Array | None]]) -> "Tensor":
        if not np.all(np.isfinite(data)):
            raise NumericError(f"non-finite output of primitive '{op}'")
        out = cls.__new__(cls)
        out.data = data
        out.requires_grad = any(p.requires_grad for p in parents)
        out.grad = None
        out._consumed = False
        if out.requires_grad:
            out._parents = parents
            out._vjp = vjp
            out._op = op
        else:
            out._parents = ()
            out._vjp = None
            out._op = op
        return out

    # -- bookkeeping -----------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        """A graph-free view of the same values."""
        out = Tensor.__new__(Tensor)
        out.data = self.data
        out.requires_grad = False
        out.grad = None
        out._parents = ()
        out._vjp = None
        out._op = "detach"
        out._consumed = False
        return out

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # -- operator sugar ----------------------------------------------------

    def __add__(self, other):
        return add(self, _wrap(other))

    def __radd__(self, other):
        return add(_wrap(other), self)

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scalar_mul(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scalar_mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape) -> "Tensor":
        return reshape(self, shape if len(shape) > 1 or isinstance(shape[0], int) else shape[0])

    @property
    def T(self) -> "Tensor":
        return transpose(self)


def _wrap(value) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def _unbroadcast(grad: Array, shape: tuple[int, ...]) -> Array:
    """Reduce a broadcast gradient back to the operand's shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from exc


# -- elementwise binary primitives ------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "add")
    return Tensor._result(
        a.data + b.data, "add", (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "sub")
    return Tensor._result(
        a.data - b.data, "sub", (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "elementwise-mul")
    return Tensor._result(
        a.data * b.data, "elementwise-mul", (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def scalar_mul(a: Tensor, scalar: float) -> Tensor:
    c = float(scalar)
    if not np.isfinite(c):
        raise NumericError("scalar-mul: non-finite scalar")
    return Tensor._result(a.data * c, "scalar-mul", (a,), lambda g: (g * c,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"matmul: expected 2-d operands, got {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dims differ, {a.shape} @ {b.shape}")
    return Tensor._result(
        a.data @ b.data, "matmul", (a, b),
        lambda g: (g @ b.data.T, a.data.T @ g))


# -- elementwise unary primitives --------------------------------------------


def tanh(a: Tensor) -> Tensor:
    t = np.tanh(a.data)
    return Tensor._result(t, "tanh", (a,), lambda g: (g * (1.0 - t * t),))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return Tensor._result(np.where(mask, a.data, 0.0), "relu", (a,),
                          lambda g: (g * mask,))


def exp(a: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        e = np.exp(a.data)
    return Tensor._result(e, "exp", (a,), lambda g: (g * e,))


def log(a: Tensor) -> Tensor:
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(a.data)
    return Tensor._result(out, "log", (a,), lambda g: (g / a.data,))


def square(a: Tensor) -> Tensor:
    return Tensor._result(a.data * a.data, "square", (a,),
                          lambda g: (g * 2.0 * a.data,))


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    """Hard clamp; gradient passes through the interior, zero where saturated."""
    mask = (a.data > lo) & (a.data < hi)
    return Tensor._result(np.clip(a.data, lo, hi), "clip", (a,),
                          lambda g: (g * mask,))


# -- reductions ---------------------------------------------------------------


def tsum(a: Tensor, axis: int | None = None) -> Tensor:
    def vjp(g: Array):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), a.shape).copy(),)

    return Tensor._result(a.data.sum(axis=axis), "sum", (a,), vjp)


def tmean(a: Tensor, axis: int | None = None) -> Tensor:
    count = a.data.size if axis is None else a.shape[axis]

    def vjp(g: Array):
        if axis is None:
            return (np.broadcast_to(g / count, a.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis) / count, a.shape).copy(),)

    return Tensor._result(a.data.mean(axis=axis), "mean", (a,), vjp)


def logsumexp(a: Tensor, axis: int = -1) -> Tensor:
    m = a.data.max(axis=axis, keepdims=True)
    shifted = np.exp(a.data - m)
    total = shifted.sum(axis=axis, keepdims=True)
    out = np.squeeze(m + np.log(total), axis=axis)
    soft = shifted / total

    def vjp(g: Array):
        return (np.expand_dims(g, axis) * soft,)

    return Tensor._result(out, "log-sum-exp", (a,), vjp)


# -- structural ops -----------------------------------------------------------


def concat_last(tensors: Sequence[Tensor]) -> Tensor:
    if not tensors:
        raise ShapeError("concat-last-axis: empty input list")
    lead = tensors[0].shape[:-1]
    for t in tensors[1:]:
        if t.shape[:-1] != lead:
            raise ShapeError(
                f"concat-last-axis: leading dims differ, {tensors[0].shape} vs {t.shape}")
    widths = [t.shape[-1] for t in tensors]
    edges = np.cumsum([0] + widths)

    def vjp(g: Array):
        return tuple(g[..., edges[i]:edges[i + 1]] for i in range(len(tensors)))

    return Tensor._result(np.concatenate([t.data for t in tensors], axis=-1),
                          "concat-last-axis", tuple(tensors), vjp)


def slice_last(a: Tensor, start: int, stop: int) -> Tensor:
    width = a.shape[-1]
    if not (0 <= start <= stop <= width):
        raise ShapeError(f"slice: bounds [{start}:{stop}] outside last axis of width {width}")

    def vjp(g: Array):
        full = np.zeros(a.shape)
        full[..., start:stop] = g
        return (full,)

    return Tensor._result(a.data[..., start:stop].copy(), "slice", (a,), vjp)


def reshape(a: Tensor, shape) -> Tensor:
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"reshape: cannot view {a.shape} as {shape}") from exc
    return Tensor._result(out.copy(), "reshape", (a,),
                          lambda g: (g.reshape(a.shape),))


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError(f"transpose: expected 2-d operand, got {a.shape}")
    return Tensor._result(a.data.T.copy(), "transpose", (a,), lambda g: (g.T,))


def gather_rows(table: Tensor, indices) -> Tensor:
    """Row lookup (embedding): out[i] = table[indices[i]]."""
    idx = np.asarray(indices, dtype=np.int64)
    if idx.ndim != 1 or table.data.ndim != 2:
        raise ShapeError(f"gather: need 2-d table and 1-d indices, got {table.shape}, {idx.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise ContractError(f"gather: index out of range for table with {table.shape[0]} rows")

    def vjp(g: Array):
        full = np.zeros(table.shape)
        np.add.at(full, idx, g)
        return (full,)

    return Tensor._result(table.data[idx], "gather", (table,), vjp)


def softmax_cross_entropy_with_logits(logits: Tensor, labels) -> Tensor:
    """Per-sample negative log softmax probability of the true class.

    Log-sum-exp shifted for stability; returns a length-N vector.
    """
    y = np.asarray(labels, dtype=np.int64)
    if logits.data.ndim != 2:
        raise ShapeError(f"softmax-cross-entropy-with-logits: logits must be 2-d, got {logits.shape}")
    n, c = logits.shape
    if y.shape != (n,):
        raise ShapeError(f"softmax-cross-entropy-with-logits: labels shape {y.shape} != ({n},)")
    if y.size and (y.min() < 0 or y.max() >= c):
        raise ContractError(f"label out of range [0, {c})")
    m = logits.data.max(axis=1, keepdims=True)
    shifted = logits.data - m
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True)) + m
    losses = (lse.squeeze(1) - logits.data[np.arange(n), y])
    soft = np.exp(logits.data - lse)

    def vjp(g: Array):
        onehot = np.zeros((n, c))
        onehot[np.arange(n), y] = 1.0
        return ((soft - onehot) * g[:, None],)

    return Tensor._result(losses, "softmax-cross-entropy-with-logits", (logits,), vjp)


# -- primitive registry -------------------------------------------------------

PRIMITIVES: dict[str, Callable] = {
    "matmul": matmul,
    "add": add,
    "sub": sub,
    "elementwise-mul": mul,
    "scalar-mul": scalar_mul,
    "tanh": tanh,
    "relu": relu,
    "exp": exp,
    "log": log,
    "square": square,
    "sum": tsum,
    "mean": tmean,
    "concat-last-axis": lambda *ts: concat_last(ts),
    "slice": slice_last,
    "log-sum-exp": logsumexp,
    "softmax-cross-entropy-with-logits": softmax_cross_entropy_with_logits,
}


def apply_primitive(op: str, inputs: Sequence[Tensor], **kwargs) -> Tensor:
    """Dispatch one recorded primitive by id. Unknown ids are contract errors."""
    fn = PRIMITIVES.get(op)
    if fn is None:
        raise ContractError(f"unknown primitive '{op}'")
    return fn(*inputs, **kwargs)


# -- reverse pass -------------------------------------------------------------


def backward(loss: Tensor) -> dict[Tensor, Array]:
    """Accumulate gradients of a scalar loss into every reachable tensor.

    Returns a map from tensor to gradient array, and sets ``.grad`` on every
    tensor with ``requires_grad``. The graph is consumed: a second backward
    through the same loss is a contract error.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward: loss must be scalar, got shape {loss.shape}")
    if loss._consumed:
        raise ContractError("backward: graph already consumed")

    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))

    grads: dict[int, Array] = {id(loss): np.ones_like(loss.data)}
    by_id: dict[int, Tensor] = {id(loss): loss}
    for node in reversed(order):
        by_id[id(node)] = node
        g = grads.get(id(node))
        if g is None or node._vjp is None:
            continue
        parent_grads = node._vjp(g)
        for parent, pg in zip(node._parents, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            acc = grads.get(id(parent))
            grads[id(parent)] = pg if acc is None else acc + pg
            by_id[id(parent)] = parent

    result: dict[Tensor, Array] = {}
    for tid, g in grads.items():
        t = by_id[tid]
        if t.requires_grad:
            t.grad = g if t.grad is None else t.grad + g
            result[t] = t.grad
    for node in order:
        node._parents = ()
        node._vjp = None
    loss._consumed = True
    return result


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None


# -- gradient checking --------------------------------------------------------


def grad_check(f: Callable[[Tensor], Tensor], point: Tensor, eps: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f`` must be a deterministic scalar-valued function; the error per
    coordinate is |analytic - numeric| / max(1, |analytic|).
    """
    if eps <= 0:
        raise ContractError("grad_check: eps must be positive")
    x = Tensor(point.data.copy(), requires_grad=True)
    out = f(x)
    if out.data.size != 1:
        raise ContractError(f"grad_check: f returned shape {out.shape}, expected scalar")
    grads = backward(out)
    analytic = grads.get(x)
    analytic = np.zeros_like(x.data) if analytic is None else analytic

    flat = point.data.reshape(-1).copy()
    numeric = np.zeros_like(flat)
    for i in range(flat.size):
        bump = np.zeros_like(flat)
        bump[i] = eps
        hi = f(Tensor((flat + bump).reshape(point.shape))).item()
        lo = f(Tensor((flat - bump).reshape(point.shape))).item()
        numeric[i] = (hi - lo) / (2.0 * eps)
    a = analytic.reshape(-1)
    rel = np.abs(a - numeric) / np.maximum(1.0, np.abs(a))
    return float(rel.max()) if rel.size else 0.0


# -- optimizer ----------------------------------------------------------------


class OptState:
    """Adam accumulator state for a fixed parameter list."""

    def __init__(self, params: Sequence[Tensor], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self._index = {id(p): i for i, p in enumerate(self.params)}


def adam_step(params: Sequence[Tensor], grads: dict[Tensor, Array], state: OptState) -> OptState:
    """One bias-corrected Adam update, in place. Every param must have a gradient."""
    state.step += 1
    t = state.step
    for p in params:
        i = state._index.get(id(p))
        if i is None:
            raise ContractError("adam_step: parameter not registered in OptState")
        g = grads.get(p)
        if g is None:
            g = p.grad
        if g is None:
            raise ContractError("adam_step: missing gradient for a parameter")
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g
        m_hat = state.m[i] / (1.0 - state.beta1 ** t)
        v_hat = state.v[i] / (1.0 - state.beta2 ** t)
        p.data -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
        if not np.all(np.isfinite(p.data)):
            raise NumericError("non-finite parameter after adam_step")
    return state


# -- seeded randomness --------------------------------------------------------


def _label_entropy(label: str) -> int:
    digest = hashlib.blake2b(label.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


class RngStream:
    """Reproducible random stream with purpose-labeled substreams.

    ``split("noise")`` derives an independent stream; the derivation is a
    stable hash of the label, so the same (seed, label path) always yields
    the same draws regardless of call order.
    """

    def __init__(self, seed: int, _path: tuple[int, ...] = ()):
        self.seed = int(seed)
        self._path = _path
        self.gen = np.random.default_rng(np.random.SeedSequence([self.seed, *_path]))

    def split(self, purpose: str) -> "RngStream":
        return RngStream(self.seed, self._path + (_label_entropy(purpose),))

    def __getattr__(self, name):
        if name in ("gen", "seed", "_path") or name.startswith("__"):
            raise AttributeError(name)
        return getattr(self.gen, name)


def seeded_rng(seed: int) -> RngStream:
    return RngStream(seed)
