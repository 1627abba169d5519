"""Dense float64 arrays with define-by-run reverse-mode differentiation.

A :class:`Tensor` wraps a read-only ``numpy`` array and records the operation
that produced it.  Calling :func:`backward` on a scalar tensor walks the graph
in reverse topological order and accumulates adjoints into ``.grad`` of every
non-detached node.  :func:`sg` (stop-gradient) returns a detached copy whose
value participates in the forward pass but never receives a gradient.

The module also carries the extended-real softmax helpers used to build
target distributions from logits that may contain ``-inf`` / ``+inf``.
"""

from __future__ import annotations

from typing import Callable, Iterable

import numpy as np

__all__ = [
    "Tensor",
    "DegenerateDistributionError",
    "AmbiguousOneHotError",
    "sg",
    "backward",
    "softmax_ext",
    "log_softmax_ext",
    "finite_diff_check",
    "softmax",
    "log_softmax",
    "layer_norm",
    "embedding",
    "gelu",
    "dot",
    "stack_rows",
    "NaNLogitsError",
]


class DegenerateDistributionError(ValueError):
    """Every entry of a logit row is -inf, so no distribution exists."""


class AmbiguousOneHotError(ValueError):
    """More than one entry of a logit row is +inf."""


class NaNLogitsError(ValueError):
    """A logit row contains NaN, usually after a numerical blow-up."""


def _readonly(arr: np.ndarray) -> np.ndarray:
    view = arr.view()
    view.flags.writeable = False
    return view


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """A node of the differentiation graph.

    ``value`` is immutable after construction.  ``grad`` is filled in by
    :func:`backward`.  Tensors hash by identity, so they can key gradient maps.
    """

    __slots__ = ("value", "grad", "_parents", "_backward", "detached")

    def __init__(
        self,
        value,
        parents: tuple["Tensor", ...] = (),
        backward_fn: Callable[[np.ndarray], tuple] | None = None,
        detached: bool = False,
    ):
        arr = np.asarray(value, dtype=np.float64)
        self.value = _readonly(arr)
        self.grad: np.ndarray | None = None
        self._parents = parents
        self._backward = backward_fn
        self.detached = detached

    # -- introspection -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    @property
    def size(self) -> int:
        return self.value.size

    def item(self) -> float:
        return float(self.value.reshape(()))

    def numpy(self) -> np.ndarray:
        return np.array(self.value)

    def __repr__(self) -> str:
        tag = ", detached" if self.detached else ""
        return f"Tensor(shape={self.shape}{tag})"

    # -- elementwise arithmetic ---------------------------------------
    def __add__(self, other) -> "Tensor":
        other = _lift(other)
        a_shape, b_shape = self.shape, other.shape
        return Tensor(
            self.value + other.value,
            (self, other),
            lambda g: (_unbroadcast(g, a_shape), _unbroadcast(g, b_shape)),
        )

    __radd__ = __add__

    def __neg__(self) -> "Tensor":
        return Tensor(-self.value, (self,), lambda g: (-g,))

    def __sub__(self, other) -> "Tensor":
        other = _lift(other)
        a_shape, b_shape = self.shape, other.shape
        return Tensor(
            self.value - other.value,
            (self, other),
            lambda g: (_unbroadcast(g, a_shape), _unbroadcast(-g, b_shape)),
        )

    def __rsub__(self, other) -> "Tensor":
        return _lift(other) - self

    def __mul__(self, other) -> "Tensor":
        other = _lift(other)
        a, b = self.value, other.value
        return Tensor(
            a * b,
            (self, other),
            lambda g: (_unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)),
        )

    __rmul__ = __mul__

    def __truediv__(self, other) -> "Tensor":
        other = _lift(other)
        a, b = self.value, other.value
        return Tensor(
            a / b,
            (self, other),
            lambda g: (
                _unbroadcast(g / b, a.shape),
                _unbroadcast(-g * a / (b * b), b.shape),
            ),
        )

    def __rtruediv__(self, other) -> "Tensor":
        return _lift(other) / self

    def __pow__(self, exponent: float) -> "Tensor":
        a = self.value
        return Tensor(
            a**exponent, (self,), lambda g: (g * exponent * a ** (exponent - 1),)
        )

    def __matmul__(self, other) -> "Tensor":
        other = _lift(other)
        a, b = self.value, other.value
        if b.ndim == 2 and a.ndim >= 2:
            # weight-style product: fold leading dims for the weight gradient
            def _mm_back(g):
                ga = g @ b.T
                gb = a.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
                return ga, gb
        else:
            def _mm_back(g):
                ga = _unbroadcast(g @ np.swapaxes(b, -1, -2), a.shape)
                gb = _unbroadcast(np.swapaxes(a, -1, -2) @ g, b.shape)
                return ga, gb

        return Tensor(a @ b, (self, other), _mm_back)

    # -- reductions and shape ops -------------------------------------
    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        shape = self.shape

        def _back(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, shape).copy(),)

        return Tensor(self.value.sum(axis=axis, keepdims=keepdims), (self,), _back)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        count = self.size if axis is None else np.prod(
            [self.shape[i] for i in np.atleast_1d(axis)]
        )
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old = self.shape
        return Tensor(self.value.reshape(shape), (self,), lambda g: (g.reshape(old),))

    def transpose(self, *axes) -> "Tensor":
        if not axes:
            axes = tuple(reversed(range(self.ndim)))
        inverse = tuple(np.argsort(axes))
        return Tensor(
            self.value.transpose(axes), (self,), lambda g: (g.transpose(inverse),)
        )

    @property
    def T(self) -> "Tensor":
        return self.transpose()

    def __getitem__(self, index) -> "Tensor":
        shape = self.shape

        scatter = _has_int_array(index)

        def _back(g):
            out = np.zeros(shape)
            if scatter:
                np.add.at(out, index, g)
            else:
                out[index] += g
            return (out,)

        return Tensor(self.value[index], (self,), _back)

    # -- elementwise functions ----------------------------------------
    def exp(self) -> "Tensor":
        out = np.exp(self.value)
        return Tensor(out, (self,), lambda g: (g * out,))

    def log(self) -> "Tensor":
        a = self.value
        with np.errstate(divide="ignore"):
            out = np.log(a)
        return Tensor(out, (self,), lambda g: (g / a,))

    def tanh(self) -> "Tensor":
        out = np.tanh(self.value)
        return Tensor(out, (self,), lambda g: (g * (1.0 - out * out),))

    def relu(self) -> "Tensor":
        a = self.value
        return Tensor(np.maximum(a, 0.0), (self,), lambda g: (g * (a > 0),))


def _has_int_array(index) -> bool:
    """True when ``index`` can repeat a position (integer-array indexing)."""
    parts = index if isinstance(index, tuple) else (index,)
    for part in parts:
        arr = np.asarray(part) if isinstance(part, (list, np.ndarray)) else None
        if arr is not None and arr.dtype != bool:
            return True
    return False


def _lift(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, detached=True)


def sg(x: Tensor | np.ndarray) -> Tensor:
    """Stop-gradient: same value, no gradient flows back through it."""
    value = x.value if isinstance(x, Tensor) else x
    return Tensor(value, detached=True)


def _topological(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        if not node.detached:
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))
    return order


def backward(root: Tensor) -> dict[Tensor, np.ndarray]:
    """Reverse-mode sweep from a scalar ``root``.

    Returns a map from every non-detached node reachable from ``root`` to
    d(root)/d(node); the same arrays are stored on each node's ``.grad``.
    Detached nodes end the traversal and receive no gradient.
    """
    if root.size != 1:
        raise ValueError(f"backward needs a scalar root, got shape {root.shape}")
    order = _topological(root)
    grads: dict[int, np.ndarray] = {id(root): np.ones(root.shape)}
    result: dict[Tensor, np.ndarray] = {}
    for node in reversed(order):
        if node.detached:
            continue
        g = grads.pop(id(node), None)
        if g is None:
            g = np.zeros(node.shape)
        node.grad = g
        result[node] = g
        if node._backward is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if parent.detached or pg is None:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    return result


# ---------------------------------------------------------------------------
# extended-real softmax on plain arrays
# ---------------------------------------------------------------------------


def _check_rows(z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    if z.shape[-1] < 1:
        raise ValueError("softmax needs at least one logit")
    if np.isnan(z).any():
        raise NaNLogitsError("logits contain NaN")
    pos_inf = np.isposinf(z)
    n_pos = pos_inf.sum(axis=-1)
    if (n_pos > 1).any():
        raise AmbiguousOneHotError("two or more +inf logits in one row")
    if np.isneginf(z).all(axis=-1).any():
        raise DegenerateDistributionError("all logits are -inf")
    return pos_inf, n_pos == 1


def log_softmax_ext(logits) -> np.ndarray:
    """Log-softmax along the last axis, accepting -inf and a single +inf.

    Suppressed (-inf) entries come out as -inf.  A row holding one +inf yields
    0 at that index and -inf elsewhere.
    """
    z = np.array(logits, dtype=np.float64)
    pos_inf, has_pos = _check_rows(z)
    finite = np.isfinite(z)
    safe = np.where(finite, z, -np.inf)
    m = safe.max(axis=-1, keepdims=True)
    # rows with only +inf / -inf have no finite entry; they are fixed below
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        lse = m + np.log(np.exp(safe - m).sum(axis=-1, keepdims=True))
        out = z - lse
    out = np.where(np.isneginf(z), -np.inf, out)
    if has_pos.any():
        out[has_pos] = np.where(pos_inf[has_pos], 0.0, -np.inf)
    return out


def softmax_ext(logits) -> np.ndarray:
    """Softmax along the last axis with -inf entries mapped to exact zeros.

    The max over finite entries is subtracted before exponentiation.  A row
    with exactly one +inf is returned as the exact one-hot vector.
    """
    z = np.array(logits, dtype=np.float64)
    pos_inf, has_pos = _check_rows(z)
    safe = np.where(np.isfinite(z), z, -np.inf)
    m = safe.max(axis=-1, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    e = np.exp(safe - m)
    out = e / e.sum(axis=-1, keepdims=True)
    if has_pos.any():
        out[has_pos] = pos_inf[has_pos].astype(np.float64)
    return out


# ---------------------------------------------------------------------------
# differentiable composites used by the losses and the model
# ---------------------------------------------------------------------------


def log_softmax(x: Tensor) -> Tensor:
    """Log-softmax over the last axis of finite logits."""
    z = x.value
    m = z.max(axis=-1, keepdims=True)
    shifted = z - m
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    out = shifted - lse
    p = np.exp(out)
    return Tensor(out, (x,), lambda g: (g - p * g.sum(axis=-1, keepdims=True),))


def softmax(x: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Softmax over the last axis.  ``mask`` (broadcastable, bool) marks
    entries that are forced to probability zero."""
    z = x.value
    if mask is not None:
        z = np.where(mask, -np.inf, z)
    m = z.max(axis=-1, keepdims=True)
    e = np.exp(z - m)
    p = e / e.sum(axis=-1, keepdims=True)

    def _back(g):
        return (p * (g - (g * p).sum(axis=-1, keepdims=True)),)

    return Tensor(p, (x,), _back)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    a = x.value
    mu = a.mean(axis=-1, keepdims=True)
    xc = a - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gv = gain.value

    def _back(g):
        gx_hat = g * gv
        gx = inv * (
            gx_hat
            - gx_hat.mean(axis=-1, keepdims=True)
            - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True)
        )
        lead = tuple(range(g.ndim - 1))
        return gx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return Tensor(xhat * gv + bias.value, (x, gain, bias), _back)


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu(x: Tensor) -> Tensor:
    """tanh-approximated GELU."""
    a = x.value
    inner = _GELU_C * (a + 0.044715 * a**3)
    t = np.tanh(inner)
    out = 0.5 * a * (1.0 + t)

    def _back(g):
        d_inner = _GELU_C * (1.0 + 3 * 0.044715 * a * a)
        return (g * (0.5 * (1.0 + t) + 0.5 * a * (1.0 - t * t) * d_inner),)

    return Tensor(out, (x,), _back)


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    """Row lookup ``table[ids]`` with scatter-add backward."""
    ids = np.asarray(ids)
    n_rows = table.shape[0]

    def _back(g):
        out = np.zeros((n_rows, g.shape[-1]))
        np.add.at(out, ids.reshape(-1), g.reshape(-1, g.shape[-1]))
        return (out,)

    return Tensor(table.value[ids], (table,), _back)


def dot(a: Tensor, b: Tensor) -> Tensor:
    return (a * b).sum()


def stack_rows(rows: Iterable[Tensor]) -> Tensor:
    rows = list(rows)
    value = np.stack([r.value for r in rows])
    return Tensor(value, tuple(rows), lambda g: tuple(g[i] for i in range(len(rows))))


# ---------------------------------------------------------------------------
# gradient oracle
# ---------------------------------------------------------------------------


def finite_diff_check(
    f: Callable[[Tensor], Tensor], x: np.ndarray, step: float = 1e-5
) -> float:
    """Max relative error between backward-mode and central-difference gradients.

    ``f`` maps a tensor shaped like ``x`` to a scalar tensor.  The relative
    error per coordinate uses ``max(|analytic|, |numeric|, 1e-8)`` as the
    denominator.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    x = np.array(x, dtype=np.float64)
    leaf = Tensor(x)
    out = f(leaf)
    backward(out)
    analytic = leaf.grad if leaf.grad is not None else np.zeros_like(x)

    numeric = np.zeros_like(x)
    flat = x.reshape(-1)
    num_flat = numeric.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        f_plus = f(Tensor(x.copy())).item()
        flat[i] = orig - step
        f_minus = f(Tensor(x.copy())).item()
        flat[i] = orig
        num_flat[i] = (f_plus - f_minus) / (2.0 * step)

    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    if x.size == 0:
        return 0.0
    return float(np.max(np.abs(analytic - numeric) / denom))
