# autodiff.py

from __future__ import annotations

import logging
from typing import Any, Callable, Dict, Iterable, List, Sequence, Tuple

import numpy as np
import numpy.typing as npt

from .helper.errors import DomainError, NumericError, ParameterError, ShapeError

logger = logging.getLogger(__name__)

Tensor = npt.NDArray[np.float64]
Backward = Callable[[Tensor], Tensor]

# Guard for every norm / cosine denominator.
NORM_EPS = 1e-12
FD_ERROR_FLOOR = 1e-8


def as_tensor(values: Any) -> Tensor:
    """Copy ``values`` into a C-ordered float64 array."""
    return np.array(values, dtype=np.float64, order="C")


# ============================================================================
# Random streams
# ============================================================================


class Rng:
    """PCG64 generator addressed by a root seed and a key path.

    ``child(*keys)`` derives an independent stream through numpy's SeedSequence
    spawn keys, so adding a head or an epoch never shifts unrelated draws.
    """

    algorithm = "PCG64"

    def __init__(self, seed: int, path: Sequence[int] = ()):
        if not 0 <= int(seed) < 2**64:
            raise ParameterError(f"seed must be a 64-bit unsigned integer, got {seed}")
        self.seed = int(seed)
        self.path: Tuple[int, ...] = tuple(int(key) for key in path)
        sequence = np.random.SeedSequence(self.seed, spawn_key=self.path)
        self._generator = np.random.Generator(np.random.PCG64(sequence))

    def child(self, *keys: int) -> Rng:
        return Rng(self.seed, self.path + tuple(int(key) for key in keys))

    def normal(self, size: int | Tuple[int, ...], scale: float = 1.0) -> Tensor:
        return self._generator.normal(0.0, scale, size=size)

    def uniform(self, size: int | Tuple[int, ...]) -> Tensor:
        return self._generator.random(size=size)

    def integers(self, low: int, high: int, size: int | Tuple[int, ...] | None = None):
        return self._generator.integers(low, high, size=size)

    def permutation(self, n: int) -> npt.NDArray[np.int64]:
        return self._generator.permutation(n)

    def dirichlet(self, alpha: Sequence[float], size: int | None = None) -> Tensor:
        return self._generator.dirichlet(alpha, size=size)

    def state(self) -> Dict[str, Any]:
        return {"seed": self.seed, "path": list(self.path), "bit_generator": self._generator.bit_generator.state}

    def set_state(self, state: Dict[str, Any]) -> None:
        self._generator.bit_generator.state = state["bit_generator"]

    def __repr__(self) -> str:
        return f"Rng(seed={self.seed}, path={self.path})"


# ============================================================================
# Graph nodes
# ============================================================================


class DiffNode:
    """A value in the differentiation graph.

    Leaves created by :func:`parameter` collect gradients in ``grad``; interior
    nodes only keep the closures that map an upstream gradient onto each parent.
    """

    __slots__ = ("value", "grad", "parents", "requires_grad", "op", "name")

    def __init__(
        self,
        value: Tensor,
        *,
        parents: Iterable[Tuple[DiffNode, Backward]] = (),
        requires_grad: bool = False,
        op: str = "leaf",
        name: str | None = None,
    ):
        self.value = value
        self.grad: Tensor | None = None
        self.parents: Tuple[Tuple[DiffNode, Backward], ...] = tuple(parents)
        self.requires_grad = requires_grad
        self.op = op
        self.name = name

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    @property
    def size(self) -> int:
        return int(self.value.size)

    @property
    def T(self) -> DiffNode:
        return transpose(self)

    def item(self) -> float:
        if self.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.shape}")
        return float(self.value.reshape(-1)[0])

    def numpy(self) -> Tensor:
        return self.value.copy()

    def detach(self) -> DiffNode:
        return DiffNode(self.value.copy(), op="detach")

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.value)

    def accumulate(self, gradient: Tensor) -> None:
        if self.grad is None:
            self.grad = np.array(gradient, dtype=np.float64)
        else:
            self.grad += gradient

    def __add__(self, other: Any) -> DiffNode:
        return add(self, _coerce(other, self))

    def __radd__(self, other: Any) -> DiffNode:
        return add(_coerce(other, self), self)

    def __sub__(self, other: Any) -> DiffNode:
        return sub(self, _coerce(other, self))

    def __rsub__(self, other: Any) -> DiffNode:
        return sub(_coerce(other, self), self)

    def __mul__(self, other: Any) -> DiffNode:
        if _is_scalar(other):
            return scale(self, float(other))
        return mul(self, _coerce(other, self))

    __rmul__ = __mul__

    def __truediv__(self, other: Any) -> DiffNode:
        if _is_scalar(other):
            return scale(self, 1.0 / float(other))
        return div(self, _coerce(other, self))

    def __neg__(self) -> DiffNode:
        return scale(self, -1.0)

    def __matmul__(self, other: DiffNode) -> DiffNode:
        return matmul(self, other)

    def __repr__(self) -> str:
        label = self.name or self.op
        return f"DiffNode({label}, shape={self.shape}, requires_grad={self.requires_grad})"


def constant(values: Any, name: str | None = None) -> DiffNode:
    value = as_tensor(values)
    if not np.all(np.isfinite(value)):
        raise NumericError("constant holds non-finite values", details={"name": name})
    return DiffNode(value, name=name)


def parameter(values: Any, name: str | None = None) -> DiffNode:
    node = constant(values, name=name)
    node.requires_grad = True
    return node


def _is_scalar(value: Any) -> bool:
    return isinstance(value, (int, float, np.floating, np.integer))


def _coerce(other: Any, like: DiffNode) -> DiffNode:
    if isinstance(other, DiffNode):
        return other
    return constant(np.broadcast_to(as_tensor(other), like.shape))


def _node(op: str, value: Tensor, parents: Iterable[Tuple[DiffNode, Backward]]) -> DiffNode:
    if not np.all(np.isfinite(value)):
        raise NumericError(f"{op} produced non-finite values", details={"shape": list(value.shape)})
    tracked = tuple((parent, fn) for parent, fn in parents if parent.requires_grad)
    return DiffNode(value, parents=tracked, requires_grad=bool(tracked), op=op)


def _require_same_shape(op: str, a: DiffNode, b: DiffNode) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op} shape mismatch: {a.shape} vs {b.shape}")


# ============================================================================
# Linear algebra
# ============================================================================


def matmul(a: DiffNode, b: DiffNode) -> DiffNode:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} vs {b.shape}")
    av, bv = a.value, b.value
    return _node("matmul", av @ bv, ((a, lambda g: g @ bv.T), (b, lambda g: av.T @ g)))


def transpose(x: DiffNode) -> DiffNode:
    if x.ndim != 2:
        raise ShapeError(f"transpose needs a matrix, got shape {x.shape}")
    return _node("transpose", np.ascontiguousarray(x.value.T), ((x, lambda g: g.T),))


def reshape(x: DiffNode, shape: Tuple[int, ...]) -> DiffNode:
    original = x.shape
    try:
        value = x.value.reshape(shape).copy()
    except ValueError as exc:
        raise ShapeError(f"cannot reshape {original} into {shape}") from exc
    return _node("reshape", value, ((x, lambda g: g.reshape(original)),))


def diagonal(x: DiffNode) -> DiffNode:
    if x.ndim != 2 or x.shape[0] != x.shape[1]:
        raise ShapeError(f"diagonal needs a square matrix, got shape {x.shape}")
    return _node("diagonal", np.diagonal(x.value).copy(), ((x, np.diag),))


def _unbroadcast(gradient: Tensor, shape: Tuple[int, ...]) -> Tensor:
    while gradient.ndim > len(shape):
        gradient = gradient.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and gradient.shape[axis] != 1:
            gradient = gradient.sum(axis=axis, keepdims=True)
    return gradient


def broadcast_to(x: DiffNode, shape: Tuple[int, ...]) -> DiffNode:
    original = x.shape
    try:
        value = np.broadcast_to(x.value, shape).copy()
    except ValueError as exc:
        raise ShapeError(f"cannot broadcast {original} to {shape}") from exc
    return _node("broadcast", value, ((x, lambda g: _unbroadcast(g, original)),))


def stack(nodes: Sequence[DiffNode], axis: int = 0) -> DiffNode:
    if not nodes:
        raise ShapeError("stack needs at least one node")
    for node in nodes[1:]:
        _require_same_shape("stack", nodes[0], node)
    value = np.stack([node.value for node in nodes], axis=axis)

    def picker(index: int) -> Backward:
        return lambda g: np.take(g, index, axis=axis)

    return _node("stack", value, ((node, picker(i)) for i, node in enumerate(nodes)))


# ============================================================================
# Elementwise
# ============================================================================


def add(a: DiffNode, b: DiffNode) -> DiffNode:
    _require_same_shape("add", a, b)
    return _node("add", a.value + b.value, ((a, lambda g: g), (b, lambda g: g)))


def sub(a: DiffNode, b: DiffNode) -> DiffNode:
    _require_same_shape("sub", a, b)
    return _node("sub", a.value - b.value, ((a, lambda g: g), (b, lambda g: -g)))


def mul(a: DiffNode, b: DiffNode) -> DiffNode:
    _require_same_shape("mul", a, b)
    av, bv = a.value, b.value
    return _node("mul", av * bv, ((a, lambda g: g * bv), (b, lambda g: g * av)))


def div(a: DiffNode, b: DiffNode) -> DiffNode:
    _require_same_shape("div", a, b)
    av, bv = a.value, b.value
    if np.any(bv == 0.0):
        raise DomainError("division by zero", details={"shape": list(bv.shape)})
    return _node("div", av / bv, ((a, lambda g: g / bv), (b, lambda g: -g * av / (bv * bv))))


def scale(x: DiffNode, factor: float) -> DiffNode:
    factor = float(factor)
    return _node("scale", x.value * factor, ((x, lambda g: g * factor),))


def relu(x: DiffNode) -> DiffNode:
    # subgradient at 0 is 0
    active = x.value > 0.0
    return _node("relu", np.where(active, x.value, 0.0), ((x, lambda g: g * active),))


def log(x: DiffNode) -> DiffNode:
    xv = x.value
    if np.any(xv <= 0.0):
        raise DomainError("log of nonpositive value", details={"min": float(np.min(xv))})
    return _node("log", np.log(xv), ((x, lambda g: g / xv),))


def exp(x: DiffNode) -> DiffNode:
    with np.errstate(over="ignore"):
        out = np.exp(x.value)
    return _node("exp", out, ((x, lambda g: g * out),))


def sqrt(x: DiffNode) -> DiffNode:
    xv = x.value
    if np.any(xv < 0.0):
        raise DomainError("sqrt of negative value", details={"min": float(np.min(xv))})
    out = np.sqrt(xv)
    safe = np.where(out > 0.0, out, 1.0)
    return _node("sqrt", out, ((x, lambda g: np.where(out > 0.0, 0.5 * g / safe, 0.0)),))


def minimum(a: DiffNode, b: DiffNode) -> DiffNode:
    """Elementwise min; at ties the gradient follows ``a``."""
    _require_same_shape("minimum", a, b)
    take_a = a.value <= b.value
    value = np.where(take_a, a.value, b.value)
    return _node("minimum", value, ((a, lambda g: g * take_a), (b, lambda g: g * ~take_a)))


def clamp_min(x: DiffNode, floor: float) -> DiffNode:
    keep = x.value >= floor
    return _node("clamp_min", np.where(keep, x.value, floor), ((x, lambda g: g * keep),))


_ELEMENTWISE: Dict[str, Callable[..., DiffNode]] = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "div": div,
    "relu": relu,
    "log": log,
    "exp": exp,
    "sqrt": sqrt,
}


def elementwise(kind: str, *operands: DiffNode, factor: float | None = None) -> DiffNode:
    """Dispatch by name: add, sub, mul, div, scale, relu, log, exp, sqrt."""
    if kind == "scale":
        if factor is None or len(operands) != 1:
            raise ParameterError("scale takes one operand and a factor")
        return scale(operands[0], factor)
    fn = _ELEMENTWISE.get(kind)
    if fn is None:
        raise ParameterError(f"unknown elementwise kind: {kind}")
    try:
        return fn(*operands)
    except TypeError as exc:
        raise ParameterError(f"{kind} got {len(operands)} operand(s)") from exc


# ============================================================================
# Reductions
# ============================================================================


def _expand(gradient: Tensor, axis: int | None, keepdims: bool, shape: Tuple[int, ...]) -> Tensor:
    if axis is not None and not keepdims:
        gradient = np.expand_dims(gradient, axis)
    return np.broadcast_to(gradient, shape)


def reduce(kind: str, x: DiffNode, axis: int | None = None, keepdims: bool = False) -> DiffNode:
    if x.size == 0:
        raise ShapeError(f"cannot {kind}-reduce an empty tensor of shape {x.shape}")
    xv, shape = x.value, x.shape
    if kind == "sum":
        value = xv.sum(axis=axis, keepdims=keepdims)
        return _node("sum", np.asarray(value), ((x, lambda g: _expand(g, axis, keepdims, shape)),))
    if kind == "mean":
        count = xv.size if axis is None else shape[axis]
        value = xv.mean(axis=axis, keepdims=keepdims)
        return _node("mean", np.asarray(value), ((x, lambda g: _expand(g, axis, keepdims, shape) / count),))
    if kind == "l2norm":
        norm = np.sqrt((xv * xv).sum(axis=axis, keepdims=True))
        value = norm if keepdims else np.squeeze(norm, axis=axis)
        guarded = np.maximum(norm, NORM_EPS)
        return _node(
            "l2norm",
            np.asarray(value),
            ((x, lambda g: _expand(g, axis, keepdims, shape) * xv / guarded),),
        )
    raise ParameterError(f"unknown reduction: {kind}")


def reduce_sum(x: DiffNode, axis: int | None = None, keepdims: bool = False) -> DiffNode:
    return reduce("sum", x, axis=axis, keepdims=keepdims)


def reduce_mean(x: DiffNode, axis: int | None = None, keepdims: bool = False) -> DiffNode:
    return reduce("mean", x, axis=axis, keepdims=keepdims)


def l2norm(x: DiffNode, axis: int | None = None, keepdims: bool = False) -> DiffNode:
    return reduce("l2norm", x, axis=axis, keepdims=keepdims)


def logsumexp(x: DiffNode, axis: int = -1, keepdims: bool = False) -> DiffNode:
    if x.size == 0:
        raise ShapeError("logsumexp of an empty tensor")
    xv, shape = x.value, x.shape
    peak = np.max(xv, axis=axis, keepdims=True)
    shifted = np.exp(xv - peak)
    total = shifted.sum(axis=axis, keepdims=True)
    out = peak + np.log(total)
    weights = shifted / total
    value = out if keepdims else np.squeeze(out, axis=axis)
    return _node("logsumexp", value, ((x, lambda g: _expand(g, axis, keepdims, shape) * weights),))


# ============================================================================
# Probability and angle primitives
# ============================================================================


def _check_temperature(tau: float) -> float:
    if not tau > 0:
        raise ParameterError(f"temperature must be positive, got {tau}")
    return float(tau)


def softmax_with_temperature(logits: DiffNode, tau: float, axis: int = -1) -> DiffNode:
    tau = _check_temperature(tau)
    z = logits.value / tau
    shifted = np.exp(z - np.max(z, axis=axis, keepdims=True))
    probs = shifted / shifted.sum(axis=axis, keepdims=True)

    def backward_fn(g: Tensor) -> Tensor:
        return probs * (g - (g * probs).sum(axis=axis, keepdims=True)) / tau

    return _node("softmax", probs, ((logits, backward_fn),))


def log_softmax_with_temperature(logits: DiffNode, tau: float, axis: int = -1) -> DiffNode:
    tau = _check_temperature(tau)
    z = logits.value / tau
    peak = np.max(z, axis=axis, keepdims=True)
    lse = peak + np.log(np.exp(z - peak).sum(axis=axis, keepdims=True))
    out = z - lse
    probs = np.exp(out)

    def backward_fn(g: Tensor) -> Tensor:
        return (g - probs * g.sum(axis=axis, keepdims=True)) / tau

    return _node("log_softmax", out, ((logits, backward_fn),))


def cosine_similarity(u: DiffNode, v: DiffNode, eps: float = NORM_EPS) -> DiffNode:
    if u.ndim != 1 or u.shape != v.shape:
        raise ShapeError(f"cosine_similarity needs equal-length vectors: {u.shape} vs {v.shape}")
    dot = reduce_sum(mul(u, v))
    denominator = clamp_min(mul(l2norm(u), l2norm(v)), eps)
    return div(dot, denominator)


def row_cosine(a: DiffNode, b: DiffNode, eps: float = NORM_EPS) -> DiffNode:
    """Cosine between matching rows of two [B×d] matrices, shape [B]."""
    if a.ndim != 2:
        raise ShapeError(f"row_cosine needs matrices, got shape {a.shape}")
    _require_same_shape("row_cosine", a, b)
    dots = reduce_sum(mul(a, b), axis=1)
    denominator = clamp_min(mul(l2norm(a, axis=1), l2norm(b, axis=1)), eps)
    return div(dots, denominator)


def cosine_matrix(a: DiffNode, b: DiffNode, eps: float = NORM_EPS) -> DiffNode:
    """All-pairs cosine between rows of ``a`` [B×d] and rows of ``b`` [B'×d]."""
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ShapeError(f"cosine_matrix width mismatch: {a.shape} vs {b.shape}")
    dots = matmul(a, transpose(b))
    norms = matmul(l2norm(a, axis=1, keepdims=True), transpose(l2norm(b, axis=1, keepdims=True)))
    return div(dots, clamp_min(norms, eps))


# ============================================================================
# Backward pass
# ============================================================================


def _topological_order(root: DiffNode) -> List[DiffNode]:
    order: List[DiffNode] = []
    visited: set[int] = set()
    pending: List[Tuple[DiffNode, bool]] = [(root, False)]
    while pending:
        node, expanded = pending.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        pending.append((node, True))
        for parent, _ in node.parents:
            if id(parent) not in visited:
                pending.append((parent, False))
    return order


def backward(loss: DiffNode) -> Dict[DiffNode, Tensor]:
    """Accumulate d(loss)/d(leaf) into every trainable leaf and return them.

    Repeated calls add onto existing ``grad`` arrays; zero them between steps.
    """
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return {}

    pending: Dict[int, Tensor] = {id(loss): np.ones_like(loss.value)}
    leaves: Dict[DiffNode, Tensor] = {}
    for node in reversed(_topological_order(loss)):
        gradient = pending.pop(id(node), None)
        if gradient is None:
            continue
        if not node.parents:
            node.accumulate(gradient)
            leaves[node] = node.grad
            continue
        for parent, fn in node.parents:
            contribution = fn(gradient)
            prior = pending.get(id(parent))
            pending[id(parent)] = contribution if prior is None else prior + contribution
    return leaves


def zero_grad(params: Iterable[DiffNode]) -> None:
    for param in params:
        param.zero_grad()


def finite_difference_check(
    f: Callable[[], DiffNode],
    params: Sequence[DiffNode],
    h: float = 1e-5,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f`` rebuilds the scalar loss from the current parameter values on every call.
    Errors are relative to max(|analytic|, |numeric|, FD_ERROR_FLOOR).
    """
    if not h > 0:
        raise ParameterError(f"finite-difference step must be positive, got {h}")

    def evaluate() -> float:
        value = f().item()
        if not np.isfinite(value):
            raise NumericError("loss is not finite at a perturbed point")
        return value

    zero_grad(params)
    backward(f())
    analytic = [param.grad.copy() for param in params]

    worst = 0.0
    for param, gradient in zip(params, analytic):
        flat = param.value.reshape(-1)
        for index, exact in enumerate(gradient.reshape(-1)):
            original = flat[index]
            flat[index] = original + h
            upper = evaluate()
            flat[index] = original - h
            lower = evaluate()
            flat[index] = original
            numeric = (upper - lower) / (2.0 * h)
            error = abs(exact - numeric) / max(abs(exact), abs(numeric), FD_ERROR_FLOOR)
            worst = max(worst, error)
    zero_grad(params)
    logger.debug("[AUTODIFF] finite-difference check over %d tensors: max rel error %.3e", len(params), worst)
    return worst
