"""Dense reverse-mode autodiff on 2-D float64 arrays, plus Adam.

Every value is a 2-D ``numpy.ndarray`` (rows index samples, columns index
features).  Operations on :class:`Var` objects record themselves on an
implicit tape: each result keeps references to its inputs and a
vector-Jacobian function per input.  :func:`backward` walks that graph once
in reverse topological order.

Operands that are plain arrays (or ``Var`` objects created with
``requires_grad=False``) are constants; an operation whose inputs are all
constants records nothing, so inference code can reuse the same functions
without building a graph.
"""
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError, DimensionError, NumericError, StateError

COS_EPS = 1e-12
LOG_FLOOR = 1e-12


class Var:
    """A node in the recorded computation.

    ``value`` is never mutated after construction.  ``grad`` has the same
    shape as ``value`` and is filled by :func:`backward`.
    """

    __slots__ = ("value", "grad", "parents", "op", "requires_grad", "name")
    # make ndarray @ Var defer to Var.__rmatmul__
    __array_ufunc__ = None

    def __init__(self, value, requires_grad=False, name=None, op="leaf", parents=()):
        value = np.asarray(value, dtype=np.float64)
        if value.ndim == 0:
            value = value.reshape(1, 1)
        elif value.ndim == 1:
            value = value.reshape(1, -1)
        elif value.ndim != 2:
            raise DimensionError(f"expected a 2-D matrix, got shape {value.shape}")
        self.value = value
        self.grad = np.zeros_like(value) if requires_grad else None
        self.parents = parents
        self.op = op
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    @property
    def is_leaf(self):
        return not self.parents

    def __repr__(self):
        label = self.name or self.op
        return f"Var({label}, shape={self.shape})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __neg__(self):
        return scale(self, -1.0)

    @property
    def T(self):
        return transpose(self)


def as_var(x):
    return x if isinstance(x, Var) else Var(x)


def _check_finite(value, op):
    if not np.all(np.isfinite(value)):
        raise NumericError(f"{op} produced a non-finite value")
    return value


def _result(value, op, inputs):
    """Wrap ``value``; ``inputs`` is a sequence of (Var, vjp) pairs."""
    _check_finite(value, op)
    tracked = tuple((v, fn) for v, fn in inputs if v.requires_grad)
    if not tracked:
        return Var(value, op=op)
    return Var(value, requires_grad=True, op=op, parents=tracked)


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    if shape[0] == 1 and g.shape[0] != 1:
        g = g.sum(axis=0, keepdims=True)
    if shape[1] == 1 and g.shape[1] != 1:
        g = g.sum(axis=1, keepdims=True)
    return g


def _broadcast_shape(a, b, op):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: cannot broadcast {a.shape} with {b.shape}") from None


# ----------------------------------------------------------------------------
# elementwise arithmetic
# ----------------------------------------------------------------------------

def add(a, b):
    a, b = as_var(a), as_var(b)
    _broadcast_shape(a, b, "add")
    return _result(
        a.value + b.value,
        "add",
        [(a, lambda g: _unbroadcast(g, a.shape)), (b, lambda g: _unbroadcast(g, b.shape))],
    )


def sub(a, b):
    a, b = as_var(a), as_var(b)
    _broadcast_shape(a, b, "sub")
    return _result(
        a.value - b.value,
        "sub",
        [(a, lambda g: _unbroadcast(g, a.shape)), (b, lambda g: -_unbroadcast(g, b.shape))],
    )


def mul(a, b):
    """Elementwise (Hadamard) product with row/column broadcasting."""
    a, b = as_var(a), as_var(b)
    _broadcast_shape(a, b, "mul")
    return _result(
        a.value * b.value,
        "mul",
        [
            (a, lambda g: _unbroadcast(g * b.value, a.shape)),
            (b, lambda g: _unbroadcast(g * a.value, b.shape)),
        ],
    )


def scale(a, c):
    a = as_var(a)
    c = float(c)
    return _result(a.value * c, "scale", [(a, lambda g: g * c)])


def transpose(a):
    a = as_var(a)
    return _result(a.value.T.copy(), "transpose", [(a, lambda g: g.T)])


def matmul(a, b):
    a, b = as_var(a), as_var(b)
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: shapes {a.shape} and {b.shape} do not compose")
    with np.errstate(over="ignore", invalid="ignore"):
        value = a.value @ b.value
    return _result(
        value,
        "matmul",
        [(a, lambda g: g @ b.value.T), (b, lambda g: a.value.T @ g)],
    )


# ----------------------------------------------------------------------------
# activations
# ----------------------------------------------------------------------------

def _sigmoid(x):
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a):
    a = as_var(a)
    y = _sigmoid(a.value)
    return _result(y, "sigmoid", [(a, lambda g: g * y * (1.0 - y))])


def tanh(a):
    a = as_var(a)
    y = np.tanh(a.value)
    return _result(y, "tanh", [(a, lambda g: g * (1.0 - y * y))])


def relu(a):
    a = as_var(a)
    mask = a.value > 0
    return _result(np.where(mask, a.value, 0.0), "relu", [(a, lambda g: g * mask)])


def identity(a):
    return as_var(a)


ACTIVATIONS = {"relu": relu, "sigmoid": sigmoid, "tanh": tanh, "identity": identity}


def activation(name):
    try:
        return ACTIVATIONS[name]
    except KeyError:
        raise ConfigError(f"unknown activation {name!r}; choose from {sorted(ACTIVATIONS)}") from None


# ----------------------------------------------------------------------------
# reductions and normalizations
# ----------------------------------------------------------------------------

def row_softmax(a):
    """Softmax over each row, stabilized by subtracting the row maximum."""
    a = as_var(a)
    if a.value.size == 0:
        raise DimensionError("row_softmax: empty matrix")
    z = a.value - a.value.max(axis=1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=1, keepdims=True)

    def vjp(g):
        return y * (g - (g * y).sum(axis=1, keepdims=True))

    return _result(y, "row_softmax", [(a, vjp)])


def row_mean(a):
    """Mean over rows, giving a 1 x cols matrix."""
    a = as_var(a)
    n = a.shape[0]
    if n == 0:
        raise DataError("row_mean: cannot average an empty class group")
    return _result(a.value.mean(axis=0, keepdims=True), "row_mean", [(a, lambda g: np.repeat(g / n, n, axis=0))])


def total(a):
    """Sum of all entries as a 1 x 1 matrix."""
    a = as_var(a)
    return _result(np.array([[a.value.sum()]]), "sum", [(a, lambda g: np.full(a.shape, g[0, 0]))])


def mean(a):
    a = as_var(a)
    return scale(total(a), 1.0 / a.value.size)


def log(a):
    """Natural log with the argument clipped to [LOG_FLOOR, 1]."""
    a = as_var(a)
    x = np.clip(a.value, LOG_FLOOR, 1.0)
    inside = (a.value >= LOG_FLOOR) & (a.value <= 1.0)
    return _result(np.log(x), "log", [(a, lambda g: np.where(inside, g / x, 0.0))])


def cosine_matrix(a, b, eps=COS_EPS):
    """Pairwise cosine similarity between the rows of ``a`` and ``b``.

    Norms are floored at ``eps`` so zero rows give similarity 0.
    """
    a, b = as_var(a), as_var(b)
    if a.shape[1] != b.shape[1]:
        raise DimensionError(f"cosine: row widths differ, {a.shape} vs {b.shape}")
    A, B = a.value, b.value
    ra = np.sqrt((A * A).sum(axis=1))
    rb = np.sqrt((B * B).sum(axis=1))
    na = np.maximum(ra, eps)
    nb = np.maximum(rb, eps)
    denom = np.outer(na, nb)
    C = (A @ B.T) / denom

    def vjp_a(g):
        active = (ra > eps)[:, None]
        return (g / denom) @ B - np.where(active, (g * C).sum(axis=1)[:, None] * A / (na * na)[:, None], 0.0)

    def vjp_b(g):
        active = (rb > eps)[:, None]
        return (g / denom).T @ A - np.where(active, (g * C).sum(axis=0)[:, None] * B / (nb * nb)[:, None], 0.0)

    return _result(C, "cosine", [(a, vjp_a), (b, vjp_b)])


def cosine(u, v, eps=COS_EPS):
    """Cosine similarity of two row vectors, as a 1 x 1 matrix."""
    u, v = as_var(u), as_var(v)
    if u.shape[0] != 1 or v.shape[0] != 1:
        raise DimensionError(f"cosine expects row vectors, got {u.shape} and {v.shape}")
    return cosine_matrix(u, v, eps)


# ----------------------------------------------------------------------------
# structural
# ----------------------------------------------------------------------------

def take_rows(a, idx):
    a = as_var(a)
    idx = np.asarray(idx, dtype=np.intp)

    def vjp(g):
        out = np.zeros_like(a.value)
        np.add.at(out, idx, g)
        return out

    return _result(a.value[idx], "take_rows", [(a, vjp)])


def vstack(parts):
    parts = [as_var(p) for p in parts]
    widths = {p.shape[1] for p in parts}
    if len(widths) != 1:
        raise DimensionError(f"vstack: mismatched widths {sorted(widths)}")
    bounds = np.cumsum([0] + [p.shape[0] for p in parts])
    inputs = [(p, (lambda g, lo=lo, hi=hi: g[lo:hi])) for p, lo, hi in zip(parts, bounds[:-1], bounds[1:])]
    return _result(np.vstack([p.value for p in parts]), "vstack", inputs)


def detach(a):
    return Var(as_var(a).value)


# ----------------------------------------------------------------------------
# reverse pass
# ----------------------------------------------------------------------------

def _topological(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent, _ in reversed(node.parents):
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(root):
    """Fill ``grad`` on every node reachable from the scalar ``root``.

    Gradients are reset before the sweep, so calling this twice on the same
    graph gives the same result rather than doubling.  Returns the list of
    leaves that received a gradient.
    """
    if root.shape != (1, 1):
        raise StateError(f"backward needs a 1x1 root, got {root.shape}")
    if not root.requires_grad:
        raise StateError("root does not depend on any parameter")
    order = _topological(root)
    for node in order:
        node.grad = np.zeros_like(node.value)
    root.grad = np.ones((1, 1))
    for node in reversed(order):
        for parent, vjp in node.parents:
            parent.grad += vjp(node.grad)
    return [node for node in order if node.is_leaf]


# ----------------------------------------------------------------------------
# parameters and optimization
# ----------------------------------------------------------------------------

def glorot_uniform(rng, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params, grads, state, lr):
    """One bias-corrected Adam update, applied in place to ``params``.

    ``params`` and ``grads`` map names to arrays.  Names missing from
    ``grads`` are left untouched and their moments do not advance.
    """
    if not lr > 0:
        raise ConfigError(f"learning rate must be positive, got {lr}")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    for key, g in grads.items():
        p = params[key]
        if g.shape != p.shape:
            raise DimensionError(f"adam: gradient for {key!r} has shape {g.shape}, parameter {p.shape}")
        if key not in state.m:
            state.m[key] = np.zeros_like(p)
            state.v[key] = np.zeros_like(p)
        m = state.m[key] = b1 * state.m[key] + (1.0 - b1) * g
        v = state.v[key] = b2 * state.v[key] + (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1**t)
        v_hat = v / (1.0 - b2**t)
        p -= lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return params
