"""Minimal reverse-mode automatic differentiation over float64 numpy arrays.

Supports exactly the dense operations the toy encoder and the contrastive
objectives need: elementwise arithmetic with broadcasting, matmul, reductions,
indexing/stacking, and a handful of smooth nonlinearities. The computation
graph is built eagerly and traversed in reverse creation order, which keeps
gradient accumulation deterministic and runs bit-reproducible.
"""

from __future__ import annotations

import contextlib
from collections.abc import Callable, Iterator, Mapping, Sequence

import numpy as np

Array = np.ndarray


class DomainError(ValueError):
    """Input lies outside an operation's mathematical domain."""


class NonDeterministicFunctionError(RuntimeError):
    """A function handed to the finite-difference oracle is not deterministic."""


_grad_enabled: bool = True
_tracked_nodes_created: int = 0
_seq_counter: int = 0


def grad_enabled() -> bool:
    return _grad_enabled


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph construction; values are still computed identically."""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


def tracked_node_count() -> int:
    """Total tracked graph nodes created so far (instrumentation counter)."""
    return _tracked_nodes_created


def _next_seq() -> int:
    global _seq_counter
    _seq_counter += 1
    return _seq_counter


def _unbroadcast(grad: Array, shape: tuple[int, ...]) -> Array:
    """Reduce a gradient back to the shape it was broadcast from."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, size in enumerate(shape) if size == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    """A float64 array with an optional gradient and backward closure."""

    __slots__ = ("values", "grad", "requires_grad", "_parents", "_backward_fn", "_seq")

    def __init__(self, values, requires_grad: bool = False):
        self.values = np.asarray(values, dtype=np.float64)
        self.grad: Array | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward_fn: Callable[[Array], tuple[Array | None, ...]] | None = None
        self._seq = _next_seq()

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def size(self) -> int:
        return self.values.size

    def item(self) -> float:
        return float(self.values)

    def detach(self) -> "Tensor":
        return Tensor(self.values.copy())

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.values.shape}{flag})"

    # -- graph traversal ---------------------------------------------------

    def backward(self, seed: Array | None = None) -> None:
        """Accumulate gradients of this node into every reachable ancestor.

        Without an explicit seed the node must be scalar. Nodes are processed
        in strictly decreasing creation order, so every node has received all
        its downstream contributions before its own backward runs.
        """
        if not self.requires_grad:
            raise RuntimeError("backward() on a tensor that does not require grad")
        if seed is None:
            if self.values.size != 1:
                raise ValueError("backward() without a seed requires a scalar output")
            seed = np.ones_like(self.values)
        else:
            seed = np.asarray(seed, dtype=np.float64)
            if seed.shape != self.values.shape:
                raise ValueError("seed shape must match tensor shape")

        reachable: dict[int, Tensor] = {}
        stack: list[Tensor] = [self]
        while stack:
            node = stack.pop()
            if id(node) in reachable:
                continue
            reachable[id(node)] = node
            stack.extend(p for p in node._parents if p.requires_grad)

        self.grad = seed if self.grad is None else self.grad + seed
        for node in sorted(reachable.values(), key=lambda n: n._seq, reverse=True):
            if node._backward_fn is None or node.grad is None:
                continue
            contributions = node._backward_fn(node.grad)
            for parent, contrib in zip(node._parents, contributions):
                if contrib is None or not parent.requires_grad:
                    continue
                if parent.grad is None:
                    parent.grad = contrib
                else:
                    parent.grad = parent.grad + contrib

    # -- operator sugar ----------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return take(self, key)

    @property
    def T(self) -> "Tensor":
        return transpose(self)


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(values: Array, parents: Sequence[Tensor],
          backward_fn: Callable[[Array], tuple[Array | None, ...]]) -> Tensor:
    out = Tensor(values)
    if _grad_enabled and any(p.requires_grad for p in parents):
        global _tracked_nodes_created
        _tracked_nodes_created += 1
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward_fn = backward_fn
    return out


# -- elementwise arithmetic ----------------------------------------------


def add(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    return _node(
        a.values + b.values, (a, b),
        lambda g: (_unbroadcast(g, a.values.shape), _unbroadcast(g, b.values.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    return _node(
        a.values - b.values, (a, b),
        lambda g: (_unbroadcast(g, a.values.shape), _unbroadcast(-g, b.values.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    return _node(
        a.values * b.values, (a, b),
        lambda g: (
            _unbroadcast(g * b.values, a.values.shape),
            _unbroadcast(g * a.values, b.values.shape),
        ),
    )


def div(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    return _node(
        a.values / b.values, (a, b),
        lambda g: (
            _unbroadcast(g / b.values, a.values.shape),
            _unbroadcast(-g * a.values / (b.values * b.values), b.values.shape),
        ),
    )


def power(a, exponent: float) -> Tensor:
    """Elementwise power with a constant exponent."""
    a = _lift(a)
    exponent = float(exponent)
    values = a.values ** exponent
    return _node(
        values, (a,),
        lambda g: (g * exponent * a.values ** (exponent - 1.0),),
    )


def sqrt(a) -> Tensor:
    return power(a, 0.5)


def exp(a) -> Tensor:
    a = _lift(a)
    values = np.exp(a.values)
    return _node(values, (a,), lambda g: (g * values,))


def log(a) -> Tensor:
    a = _lift(a)
    if np.any(a.values <= 0.0):
        raise DomainError("log requires strictly positive input")
    return _node(np.log(a.values), (a,), lambda g: (g / a.values,))


def tanh(a) -> Tensor:
    a = _lift(a)
    values = np.tanh(a.values)
    return _node(values, (a,), lambda g: (g * (1.0 - values * values),))


def clip(a, lower: float, upper: float) -> Tensor:
    """Clamp values; gradient passes only strictly inside the interval."""
    a = _lift(a)
    values = np.clip(a.values, lower, upper)
    inside = (a.values > lower) & (a.values < upper)
    return _node(values, (a,), lambda g: (g * inside,))


# -- linear algebra and reductions ----------------------------------------


def matmul(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    av, bv = a.values, b.values
    if av.ndim not in (1, 2) or bv.ndim not in (1, 2):
        raise ValueError("matmul supports 1-D and 2-D operands only")
    values = av @ bv

    def backward(g: Array) -> tuple[Array, Array]:
        if av.ndim == 2 and bv.ndim == 2:
            return g @ bv.T, av.T @ g
        if av.ndim == 2 and bv.ndim == 1:
            return np.outer(g, bv), av.T @ g
        if av.ndim == 1 and bv.ndim == 2:
            return bv @ g, np.outer(av, g)
        return g * bv, g * av

    return _node(values, (a, b), backward)


def tensor_sum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _lift(a)
    values = a.values.sum(axis=axis, keepdims=keepdims)

    def backward(g: Array) -> tuple[Array]:
        if axis is None:
            return (np.broadcast_to(g, a.values.shape).copy(),)
        expanded = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(expanded, a.values.shape).copy(),)

    return _node(values, (a,), backward)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _lift(a)
    if axis is None:
        count = a.values.size
    else:
        count = a.values.shape[axis]
    return mul(tensor_sum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def transpose(a) -> Tensor:
    a = _lift(a)
    if a.values.ndim != 2:
        raise ValueError("transpose supports 2-D tensors only")
    return _node(a.values.T.copy(), (a,), lambda g: (g.T.copy(),))


def reshape(a, shape) -> Tensor:
    a = _lift(a)
    original = a.values.shape
    return _node(a.values.reshape(shape), (a,), lambda g: (g.reshape(original),))


def take(a, key) -> Tensor:
    """Basic and integer-array indexing with scatter-add backward."""
    a = _lift(a)
    values = a.values[key]

    def backward(g: Array) -> tuple[Array]:
        out = np.zeros_like(a.values)
        np.add.at(out, key, g)
        return (out,)

    return _node(np.array(values, dtype=np.float64), (a,), backward)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_lift(t) for t in tensors]
    values = np.stack([t.values for t in tensors], axis=axis)

    def backward(g: Array) -> tuple[Array, ...]:
        pieces = np.split(g, len(tensors), axis=axis)
        return tuple(np.squeeze(p, axis=axis) for p in pieces)

    return _node(values, tensors, backward)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_lift(t) for t in tensors]
    values = np.concatenate([t.values for t in tensors], axis=axis)
    offsets = np.cumsum([t.values.shape[axis] for t in tensors])[:-1]

    def backward(g: Array) -> tuple[Array, ...]:
        return tuple(np.split(g, offsets, axis=axis))

    return _node(values, tensors, backward)


def embedding(weight: Tensor, ids) -> Tensor:
    """Row lookup into an embedding matrix; backward scatter-adds rows."""
    ids = np.asarray(ids, dtype=np.intp)
    values = weight.values[ids]

    def backward(g: Array) -> tuple[Array]:
        out = np.zeros_like(weight.values)
        np.add.at(out, ids, g)
        return (out,)

    return _node(values, (weight,), backward)


# -- stable composites -----------------------------------------------------


def softmax(scores, axis: int = -1):
    """Probability-normalize scores along an axis with max-subtraction.

    Accepts a Tensor (differentiable result) or any array-like (plain
    ndarray result). The subtracted maximum is treated as a constant, which
    leaves gradients unchanged because softmax is shift invariant.
    """
    if isinstance(scores, Tensor):
        if scores.values.size == 0:
            raise DomainError("softmax requires a non-empty input")
        if not np.all(np.isfinite(scores.values)):
            raise DomainError("softmax requires finite input scores")
        shifted = sub(scores, scores.values.max(axis=axis, keepdims=True))
        exps = exp(shifted)
        return div(exps, tensor_sum(exps, axis=axis, keepdims=True))
    values = np.asarray(scores, dtype=np.float64)
    if values.size == 0:
        raise DomainError("softmax requires a non-empty input")
    if not np.all(np.isfinite(values)):
        raise DomainError("softmax requires finite input scores")
    exps = np.exp(values - values.max(axis=axis, keepdims=True))
    return exps / exps.sum(axis=axis, keepdims=True)


def logsumexp(a: Tensor, axis: int) -> Tensor:
    """log(sum(exp(a))) along an axis, stabilized with a constant shift."""
    shift = a.values.max(axis=axis, keepdims=True)
    total = tensor_sum(exp(sub(a, shift)), axis=axis, keepdims=True)
    return add(log(total), shift)


EPSILON_NORM = 1e-12


def cosine(u, v) -> float:
    """Cosine similarity of two equal-length vectors, clamped to [-1, 1]."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.ndim != 1 or v.ndim != 1 or u.shape != v.shape:
        raise DomainError("cosine requires two 1-D vectors of equal length")
    norm_u = float(np.linalg.norm(u))
    norm_v = float(np.linalg.norm(v))
    if norm_u < EPSILON_NORM:
        raise DomainError("cosine: first argument has (near-)zero norm")
    if norm_v < EPSILON_NORM:
        raise DomainError("cosine: second argument has (near-)zero norm")
    return float(np.clip(float(u @ v) / (norm_u * norm_v), -1.0, 1.0))


def gelu(a: Tensor) -> Tensor:
    """Gaussian error linear unit (tanh form), built from smooth primitives."""
    cubed = mul(mul(a, a), a)
    inner = mul(add(a, mul(cubed, 0.044715)), 0.7978845608028654)
    return mul(mul(a, 0.5), add(tanh(inner), 1.0))


def normalize_rows(a, eps: float = 1e-5) -> Tensor:
    """Zero-mean, unit-variance normalization along the last axis (fused).

    With y = (x - mu) / sigma the input gradient is
    (g - mean(g) - y * mean(g * y)) / sigma, row-wise.
    """
    a = _lift(a)
    values = a.values
    mu = values.mean(axis=-1, keepdims=True)
    centered = values - mu
    sigma = np.sqrt((centered * centered).mean(axis=-1, keepdims=True) + eps)
    normed = centered / sigma

    def backward(g: Array) -> tuple[Array]:
        g_mean = g.mean(axis=-1, keepdims=True)
        proj = (g * normed).mean(axis=-1, keepdims=True)
        return ((g - g_mean - normed * proj) / sigma,)

    return _node(normed, (a,), backward)


# -- parameters and the finite-difference oracle ---------------------------


class ParameterSet:
    """Ordered mapping of unique names to trainable tensors."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._mutations = 0

    @property
    def mutation_count(self) -> int:
        """Bumped on every bulk value change; lets caches detect staleness."""
        return self._mutations

    def mark_mutated(self) -> None:
        self._mutations += 1

    def add(self, name: str, values) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter name: {name!r}")
        tensor = values if isinstance(values, Tensor) else Tensor(values)
        tensor.requires_grad = True
        self._params[name] = tensor
        return tensor

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def items(self) -> list[tuple[str, Tensor]]:
        return list(self._params.items())

    def zero_grad(self) -> None:
        for tensor in self._params.values():
            tensor.grad = None

    def gradients(self) -> dict[str, Array]:
        """Current gradients, with zeros for parameters that received none."""
        return {
            name: (np.zeros_like(t.values) if t.grad is None else t.grad)
            for name, t in self._params.items()
        }

    def copy_values(self) -> dict[str, Array]:
        return {name: t.values.copy() for name, t in self._params.items()}

    def load_values(self, values: Mapping[str, Array]) -> None:
        if set(values) != set(self._params):
            raise ValueError("parameter names do not match")
        for name, tensor in self._params.items():
            incoming = np.asarray(values[name], dtype=np.float64)
            if incoming.shape != tensor.values.shape:
                raise ValueError(f"shape mismatch for parameter {name!r}")
            tensor.values = incoming.copy()
        self.mark_mutated()


def finite_difference_gradient(
    f: Callable[[ParameterSet], float],
    params: ParameterSet,
    epsilon: float = 1e-5,
) -> dict[str, Array]:
    """Central-difference gradient estimate of a scalar function, per parameter.

    The function is evaluated twice at the unperturbed point first; any
    disagreement means it is not deterministic and the estimate would be
    meaningless.
    """
    if not (1e-7 <= epsilon <= 1e-3):
        raise ValueError("epsilon must lie in [1e-7, 1e-3]")
    first = float(f(params))
    second = float(f(params))
    if first != second:
        raise NonDeterministicFunctionError(
            "function returned different values on repeated evaluation"
        )
    grads: dict[str, Array] = {}
    for name, tensor in params.items():
        flat = tensor.values.reshape(-1)
        estimate = np.zeros_like(flat)
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + epsilon
            upper = float(f(params))
            flat[i] = original - epsilon
            lower = float(f(params))
            flat[i] = original
            estimate[i] = (upper - lower) / (2.0 * epsilon)
        grads[name] = estimate.reshape(tensor.values.shape)
    return grads


def max_relative_error(
    analytic: Mapping[str, Array], numeric: Mapping[str, Array], floor: float = 1e-8
) -> float:
    """Worst relative disagreement, denominated by max(|a|, |n|, floor)."""
    worst = 0.0
    for name in analytic:
        a = np.asarray(analytic[name], dtype=np.float64)
        n = np.asarray(numeric[name], dtype=np.float64)
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst
