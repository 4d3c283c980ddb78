"""Minimal reverse-mode automatic differentiation over numpy arrays.

Every operation computes its result eagerly and records a hand-written
vector-Jacobian product; ``backward`` walks the tape in reverse topological
order. Only the subgraph reachable from tensors with ``needs_grad`` carries
closures, so constant inputs (positional encodings, coordinates) cost
nothing at backward time. Dtypes are preserved: float64 graphs stay float64,
which the gradient checks rely on.
"""

from __future__ import annotations

import numpy as np

_GELU_C = np.sqrt(2.0 / np.pi)

_GRAD_ENABLED = True
_MALLOC_TUNED = False


def tune_large_alloc() -> None:
    """Raise glibc's mmap threshold so multi-MB tensor churn reuses heap pages.

    Training graphs allocate and free hundreds of MB-sized arrays per step;
    with the default threshold each one round-trips through mmap and its
    zero-fill. Idempotent; silently does nothing off glibc.
    """
    global _MALLOC_TUNED
    if _MALLOC_TUNED:
        return
    _MALLOC_TUNED = True
    try:
        import ctypes

        libc = ctypes.CDLL("libc.so.6")
        libc.mallopt(-3, 512 * 1024 * 1024)  # M_MMAP_THRESHOLD
        libc.mallopt(-1, 2**31 - 1)  # M_TRIM_THRESHOLD
    except Exception:
        pass


class no_grad:
    """Context manager that skips tape recording (inference mode)."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


class Tensor:
    __slots__ = ("data", "grad", "parents", "vjp", "needs_grad")

    def __init__(self, data, parents=(), vjp=None, needs_grad=False):
        self.data = data if isinstance(data, np.ndarray) else np.asarray(data, dtype=np.float64)
        self.grad = None
        self.parents = parents
        self.vjp = vjp
        self.needs_grad = needs_grad or any(p.needs_grad for p in parents)

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, needs_grad={self.needs_grad})"


def param(data) -> Tensor:
    """Leaf tensor that accumulates gradients."""
    return Tensor(np.asarray(data), needs_grad=True)


def const(data, dtype=None) -> Tensor:
    data = np.asarray(data)
    if dtype is not None and data.dtype != dtype:
        data = data.astype(dtype)
    return Tensor(data)


def _coerce(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return const(x, dtype=like.dtype)


def _node(data, parents, vjp) -> Tensor:
    if not _GRAD_ENABLED or not any(p.needs_grad for p in parents):
        return Tensor(data)
    return Tensor(data, parents=parents, vjp=vjp)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    axes = tuple(i for i, (gs, ss) in enumerate(zip(g.shape, shape)) if ss == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# arithmetic


def add(a, b) -> Tensor:
    a = a if isinstance(a, Tensor) else Tensor(np.asarray(a))
    b = _coerce(b, a)
    out = a.data + b.data

    def vjp(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _node(out, (a, b), vjp)


def sub(a, b) -> Tensor:
    a = a if isinstance(a, Tensor) else Tensor(np.asarray(a))
    b = _coerce(b, a)
    out = a.data - b.data

    def vjp(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return _node(out, (a, b), vjp)


def mul(a, b) -> Tensor:
    """Elementwise product; b may be a Tensor, array, or python scalar."""
    if not isinstance(b, Tensor) and np.isscalar(b):
        out = a.data * b

        def vjp_scalar(g):
            return (g * b,)

        return _node(out, (a,), vjp_scalar)
    b = _coerce(b, a)
    out = a.data * b.data

    def vjp(g):
        return _unbroadcast(g * b.data, a.data.shape), _unbroadcast(g * a.data, b.data.shape)

    return _node(out, (a, b), vjp)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product with full stack broadcasting. Operands must be >= 2-D."""
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ValueError("matmul operands must have >= 2 dims")
    if b.data.ndim == 2 and a.data.ndim > 2:
        return linear(a, b)
    out = a.data @ b.data

    def vjp(g):
        ga = _unbroadcast(g @ b.data.swapaxes(-1, -2), a.data.shape)
        gb = _unbroadcast(a.data.swapaxes(-1, -2) @ g, b.data.shape)
        return ga, gb

    return _node(out, (a, b), vjp)


def linear(x: Tensor, w: Tensor) -> Tensor:
    """x @ w for stacked x (..., d_in) and a 2-D weight, as one flat GEMM.

    Equivalent to matmul but avoids per-slice BLAS dispatch on stacked
    inputs; the weight gradient also reduces to a single GEMM.
    """
    in_shape = x.data.shape
    d_in, d_out = w.data.shape
    flat = np.ascontiguousarray(x.data).reshape(-1, d_in)
    out = (flat @ w.data).reshape(*in_shape[:-1], d_out)

    def vjp(g):
        g2 = np.ascontiguousarray(g).reshape(-1, d_out)
        gx = (g2 @ w.data.T).reshape(in_shape)
        gw = flat.T @ g2
        return gx, gw

    return _node(out, (x, w), vjp)


# ---------------------------------------------------------------------------
# shape


def reshape(a: Tensor, shape) -> Tensor:
    old = a.data.shape
    return _node(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def swapaxes(a: Tensor, ax1: int, ax2: int) -> Tensor:
    return _node(a.data.swapaxes(ax1, ax2), (a,), lambda g: (g.swapaxes(ax1, ax2),))


def getitem(a: Tensor, idx) -> Tensor:
    """Basic (non-repeating) slicing."""
    out = a.data[idx]

    def vjp(g):
        buf = np.zeros_like(a.data)
        buf[idx] = g
        return (buf,)

    return _node(out, (a,), vjp)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = list(tensors)
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def vjp(g):
        return tuple(
            np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis)
            for i in range(len(tensors))
        )

    return _node(out, tuple(tensors), vjp)


# ---------------------------------------------------------------------------
# reductions


def sum_all(a: Tensor) -> Tensor:
    return _node(
        np.asarray(a.data.sum()), (a,), lambda g: (np.broadcast_to(g, a.data.shape).astype(a.data.dtype),)
    )


def mean_all(a: Tensor) -> Tensor:
    n = a.data.size

    def vjp(g):
        return (np.broadcast_to(g / n, a.data.shape).astype(a.data.dtype),)

    return _node(np.asarray(a.data.mean()), (a,), vjp)


def sum_axis(a: Tensor, axis: int, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.data.shape).astype(a.data.dtype),)

    return _node(out, (a,), vjp)


# ---------------------------------------------------------------------------
# nonlinearities


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        dot = (g * y).sum(axis=axis, keepdims=True)
        return ((g - dot) * y,)

    return _node(y, (a,), vjp)


def attention(q: Tensor, k: Tensor, v: Tensor, scale: float) -> Tensor:
    """Fused softmax(q k^T * scale) v over the last two axes.

    One tape node instead of four keeps the big (..., M, K) score array out
    of repeated elementwise passes; exp and the backward combination run
    in-place. Inputs are (..., M, d), (..., K, d), (..., K, dv) stacks.
    """
    qs = np.ascontiguousarray(q.data) * scale
    kc = np.ascontiguousarray(k.data)
    vc = np.ascontiguousarray(v.data)
    s = qs @ kc.swapaxes(-1, -2)
    s -= s.max(axis=-1, keepdims=True)
    np.exp(s, out=s)
    s /= s.sum(axis=-1, keepdims=True)
    w = s
    out = w @ vc

    def vjp(g):
        gv = _unbroadcast(w.swapaxes(-1, -2) @ g, v.data.shape)
        gw = g @ vc.swapaxes(-1, -2)
        dot = np.einsum("...ij,...ij->...i", gw, w)[..., None]
        np.subtract(gw, dot, out=gw)
        np.multiply(gw, w, out=gw)  # gw is now the score gradient
        gq = _unbroadcast((gw @ kc) * scale, q.data.shape)
        gk = _unbroadcast(gw.swapaxes(-1, -2) @ qs, k.data.shape)
        return gq, gk, gv

    return _node(out, (q, k, v), vjp)


def attention_weights(q: np.ndarray, k: np.ndarray, scale: float) -> np.ndarray:
    """Softmax attention matrix only (no values); plain numpy helper."""
    s = np.ascontiguousarray(q) * scale @ np.ascontiguousarray(k).swapaxes(-1, -2)
    s -= s.max(axis=-1, keepdims=True)
    np.exp(s, out=s)
    s /= s.sum(axis=-1, keepdims=True)
    return s


def gelu(a: Tensor) -> Tensor:
    """Gaussian-error linear unit, tanh formulation (SIMD-friendly).

    y = 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))); the analytic
    derivative uses the saved tanh value, so forward and backward agree to
    machine precision with finite differences of this same function.
    """
    x = a.data
    c = x.dtype.type(_GELU_C)
    aa = x.dtype.type(0.044715)
    x2 = x * x
    inner = x2 * x
    inner *= aa
    inner += x
    inner *= c
    th = np.tanh(inner)
    y = th + 1.0
    y *= x
    y *= 0.5

    def vjp(g):
        # dy/dx = 0.5 (1 + th) + 0.5 x (1 - th^2) c (1 + 3 a x^2)
        sech2 = th * th
        np.subtract(1.0, sech2, out=sech2)
        poly = x2 * (3.0 * aa)
        poly += 1.0
        poly *= sech2
        poly *= x
        poly *= c
        poly += th
        poly += 1.0
        poly *= 0.5
        poly *= g
        return (poly,)

    return _node(y, (a,), vjp)


def layer_norm(a: Tensor, scale: Tensor, eps: float = 1e-6) -> Tensor:
    """Normalize over the last axis and multiply by a learnable scale."""
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * scale.data

    def vjp(g):
        d = x.shape[-1]
        gh = g * scale.data
        gx = inv * (
            gh
            - gh.mean(axis=-1, keepdims=True)
            - xhat * (gh * xhat).mean(axis=-1, keepdims=True)
        )
        gs = _unbroadcast(g * xhat, scale.data.shape)
        # keep float32 graphs float32 after float64 accumulations
        return gx.astype(x.dtype, copy=False), gs.astype(scale.data.dtype, copy=False)

    return _node(out, (a, scale), vjp)


# ---------------------------------------------------------------------------
# backward


def backward(root: Tensor, seed: np.ndarray | None = None) -> None:
    """Accumulate gradients of `root` into every reachable needs_grad leaf."""
    if seed is None:
        if root.data.size != 1:
            raise ValueError("backward without a seed gradient requires a scalar root")
        seed = np.ones_like(root.data)
    topo: list[Tensor] = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in seen or not node.needs_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            stack.append((p, False))

    root.grad = np.asarray(seed, dtype=root.data.dtype)
    for node in reversed(topo):
        if node.vjp is None or node.grad is None:
            continue
        grads = node.vjp(node.grad)
        for parent, g in zip(node.parents, grads):
            if not parent.needs_grad or g is None:
                continue
            if parent.grad is None:
                parent.grad = np.asarray(g, dtype=parent.data.dtype)
            else:
                parent.grad = parent.grad + g
        if node.vjp is not None:
            node.grad = None  # free intermediate gradients


def zero_grads(tensors) -> None:
    for t in tensors:
        t.grad = None
