"""A small reverse-mode tape over numpy arrays.

Only the primitives the attention stack, the pose encoder and the loss
need are provided. Each primitive stores its forward function so a
recorded tape can be replayed from the leaf values, and a vector-Jacobian
product used by :func:`backward`.

Example::

    with Tape() as tape:
        x = Var(np.ones(3), requires_grad=True)
        y = tsum(x * x)
    backward(y)
    x.grad   # array([2., 2., 2.])
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

_ACTIVE: list["Tape"] = []


class Tape:
    """Records primitive applications in execution order."""

    def __init__(self) -> None:
        self.nodes: list[Var] = []

    def __enter__(self) -> "Tape":
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE.remove(self)

    def replay(self) -> list[np.ndarray]:
        """Recompute every recorded node from its parents' (recomputed) values."""
        fresh: dict[int, np.ndarray] = {}
        out = []
        for node in self.nodes:
            args = [fresh.get(id(p), p.value) for p in node.parents]
            val = node.fn(*args)
            fresh[id(node)] = val
            out.append(val)
        return out


class Var:
    __slots__ = ("value", "grad", "parents", "vjp", "fn", "requires_grad")
    __array_priority__ = 100.0

    def __init__(self, value, requires_grad: bool = False, parents=(), vjp=None, fn=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.parents: tuple[Var, ...] = tuple(parents)
        self.vjp = vjp
        self.fn = fn
        self.requires_grad = requires_grad or any(p.requires_grad for p in self.parents)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def __repr__(self) -> str:
        return f"Var(shape={self.shape}, requires_grad={self.requires_grad})"

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

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return index(self, key)


def lift(x) -> Var:
    return x if isinstance(x, Var) else Var(x)


def value_of(x) -> np.ndarray:
    return x.value if isinstance(x, Var) else np.asarray(x, dtype=np.float64)


def _record(fn: Callable, vjp: Callable, *parents: Var) -> Var:
    val = fn(*(p.value for p in parents))
    node = Var(val, parents=parents, vjp=vjp, fn=fn)
    if _ACTIVE:
        _ACTIVE[-1].nodes.append(node)
    return node


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# -- elementwise ---------------------------------------------------------------

def add(a, b) -> Var:
    a, b = lift(a), lift(b)
    sa, sb = a.shape, b.shape
    return _record(np.add, lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), a, b)


def sub(a, b) -> Var:
    a, b = lift(a), lift(b)
    sa, sb = a.shape, b.shape
    return _record(np.subtract, lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)), a, b)


def mul(a, b) -> Var:
    a, b = lift(a), lift(b)
    av, bv = a.value, b.value
    return _record(
        np.multiply,
        lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)),
        a,
        b,
    )


def scale(a, s: float) -> Var:
    a = lift(a)
    s = float(s)
    return _record(lambda x: x * s, lambda g: (g * s,), a)


def relu(a) -> Var:
    a = lift(a)
    on = a.value > 0
    return _record(lambda x: np.maximum(x, 0.0), lambda g: (g * on,), a)


def square(a) -> Var:
    a = lift(a)
    av = a.value
    return _record(np.square, lambda g: (2.0 * av * g,), a)


# -- reductions ----------------------------------------------------------------

def tsum(a, axis=None, keepdims: bool = False) -> Var:
    a = lift(a)
    shape = a.shape

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _record(lambda x: np.sum(x, axis=axis, keepdims=keepdims), vjp, a)


def mean(a, axis=None, keepdims: bool = False) -> Var:
    a = lift(a)
    n = a.value.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return scale(tsum(a, axis=axis, keepdims=keepdims), 1.0 / float(n))


# -- linear algebra ------------------------------------------------------------

def matmul(a, b) -> Var:
    a, b = lift(a), lift(b)
    av, bv = a.value, b.value

    def vjp(g):
        if av.ndim == 1 or bv.ndim == 1:
            raise ValueError("tape matmul requires operands with ndim >= 2")
        ga = g @ np.swapaxes(bv, -1, -2)
        gb = np.swapaxes(av, -1, -2) @ g
        return _unbroadcast(ga, av.shape), _unbroadcast(gb, bv.shape)

    return _record(np.matmul, vjp, a, b)


def softmax(a, scale_: float = 1.0) -> Var:
    """Softmax over the last axis of ``scale_ * a``."""
    a = lift(a)
    s = float(scale_)

    def fwd(x):
        z = s * x
        z = z - z.max(axis=-1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=-1, keepdims=True)

    p = fwd(a.value)

    def vjp(g):
        return (s * p * (g - (g * p).sum(axis=-1, keepdims=True)),)

    node = Var(p, parents=(a,), vjp=vjp, fn=fwd)
    if _ACTIVE:
        _ACTIVE[-1].nodes.append(node)
    return node


def layer_norm(a, eps: float = 1e-5) -> Var:
    """Per-token normalisation over the last axis (no affine parameters)."""
    a = lift(a)

    def stats(x):
        mu = x.mean(axis=-1, keepdims=True)
        inv = 1.0 / np.sqrt(((x - mu) ** 2).mean(axis=-1, keepdims=True) + eps)
        return (x - mu) * inv, inv

    def fwd(x):
        return stats(x)[0]

    xhat, inv = stats(a.value)

    def vjp(g):
        gm = g.mean(axis=-1, keepdims=True)
        gx = (g * xhat).mean(axis=-1, keepdims=True)
        return (inv * (g - gm - xhat * gx),)

    node = Var(xhat, parents=(a,), vjp=vjp, fn=fwd)
    if _ACTIVE:
        _ACTIVE[-1].nodes.append(node)
    return node


# -- shape manipulation --------------------------------------------------------

def reshape(a, shape: Sequence[int]) -> Var:
    a = lift(a)
    old = a.shape
    shape = tuple(shape)
    return _record(lambda x: np.reshape(x, shape), lambda g: (np.reshape(g, old),), a)


def transpose(a, axes: Sequence[int]) -> Var:
    a = lift(a)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _record(lambda x: np.transpose(x, axes), lambda g: (np.transpose(g, inv),), a)


def broadcast_to(a, shape: Sequence[int]) -> Var:
    a = lift(a)
    old = a.shape
    shape = tuple(shape)
    return _record(
        lambda x: np.broadcast_to(x, shape).copy(),
        lambda g: (_unbroadcast(g, old),),
        a,
    )


def concat(parts: Sequence, axis: int = 0) -> Var:
    parts = [lift(p) for p in parts]
    ax = axis
    sizes = [p.shape[ax] for p in parts]
    cuts = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, cuts, axis=ax))

    return _record(lambda *xs: np.concatenate(xs, axis=ax), vjp, *parts)


def index(a, key) -> Var:
    a = lift(a)
    shape = a.shape

    def vjp(g):
        out = np.zeros(shape)
        np.add.at(out, key, g)
        return (out,)

    return _record(lambda x: x[key].copy(), vjp, a)


# -- convolution ---------------------------------------------------------------

def _im2col(x: np.ndarray, k: int, stride: int, pad: int):
    n, c, h, w = x.shape
    ho = (h + 2 * pad - k) // stride + 1
    wo = (w + 2 * pad - k) // stride + 1
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    cols = np.empty((n, c, k, k, ho, wo))
    for i in range(k):
        for j in range(k):
            cols[:, :, i, j] = xp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride]
    # rows ordered (n, ho, wo); columns ordered (c, ki, kj)
    return cols.transpose(0, 4, 5, 1, 2, 3).reshape(n * ho * wo, c * k * k), ho, wo


def _col2im(cols: np.ndarray, xshape, k: int, stride: int, pad: int, ho: int, wo: int):
    n, c, h, w = xshape
    cols = cols.reshape(n, ho, wo, c, k, k).transpose(0, 3, 4, 5, 1, 2)
    xp = np.zeros((n, c, h + 2 * pad, w + 2 * pad))
    for i in range(k):
        for j in range(k):
            xp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += cols[:, :, i, j]
    return xp[:, :, pad : pad + h, pad : pad + w]


def conv2d(x, w, b, stride: int = 1, pad: int = 0) -> Var:
    """Cross-correlation of ``x`` [N, Cin, H, W] with ``w`` [Cout, Cin, k, k] plus bias [Cout]."""
    x, w, b = lift(x), lift(w), lift(b)
    cout, cin, k, k2 = w.shape
    if k != k2 or x.shape[1] != cin:
        raise ValueError(f"conv2d shape mismatch: x {x.shape}, w {w.shape}")

    def fwd(xv, wv, bv):
        cols, ho, wo = _im2col(xv, k, stride, pad)
        out = cols @ wv.reshape(cout, -1).T + bv
        return out.reshape(xv.shape[0], ho, wo, cout).transpose(0, 3, 1, 2)

    cols, ho, wo = _im2col(x.value, k, stride, pad)
    xshape, wv = x.shape, w.value

    def vjp(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(-1, cout)
        gw = (g2.T @ cols).reshape(wv.shape)
        gb = g2.sum(axis=0)
        gcols = g2 @ wv.reshape(cout, -1)
        gx = _col2im(gcols, xshape, k, stride, pad, ho, wo)
        return gx, gw, gb

    return _record(fwd, vjp, x, w, b)


# -- backward pass -------------------------------------------------------------

def backward(root: Var, seed: np.ndarray | None = None) -> None:
    """Accumulate d(root)/d(leaf) into ``.grad`` of every leaf with ``requires_grad``."""
    order: list[Var] = []
    seen: set[int] = set()
    stack: list[tuple[Var, bool]] = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))

    grads: dict[int, np.ndarray] = {id(root): np.ones_like(root.value) if seed is None else seed}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if not node.parents:
            node.grad = g if node.grad is None else node.grad + g
            continue
        for p, gp in zip(node.parents, node.vjp(g)):
            if not p.requires_grad:
                continue
            if id(p) in grads:
                grads[id(p)] = grads[id(p)] + gp
            else:
                grads[id(p)] = gp


def grad_check(
    f: Callable[[Var], Var],
    x: np.ndarray,
    eps: float = 1e-6,
    coords: Sequence[int] | None = None,
) -> float:
    """Max relative error between tape gradients and central differences.

    The error at coordinate i is ``|g_tape - g_fd| / max(1, |g_fd|)``.
    ``coords`` restricts the comparison to selected flat indices.
    """
    if not 1e-7 <= eps <= 1e-4:
        raise ValueError(f"eps must lie in [1e-7, 1e-4], got {eps}")
    x = np.array(x, dtype=np.float64)
    xv = Var(x, requires_grad=True)
    out = f(xv)
    if out.value.size != 1:
        raise ValueError("grad_check needs a scalar-valued function")
    if not np.isfinite(out.value).all():
        raise FloatingPointError("function value is not finite")
    backward(out)
    analytic = np.zeros_like(x) if xv.grad is None else xv.grad
    flat = x.reshape(-1)
    idx = range(flat.size) if coords is None else coords
    worst = 0.0
    for i in idx:
        orig = flat[i]
        flat[i] = orig + eps
        fp = float(f(Var(x)).value)
        flat[i] = orig - eps
        fm = float(f(Var(x)).value)
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise FloatingPointError("function value is not finite")
        g_fd = (fp - fm) / (2.0 * eps)
        err = abs(analytic.reshape(-1)[i] - g_fd) / max(1.0, abs(g_fd))
        worst = max(worst, err)
    return worst
