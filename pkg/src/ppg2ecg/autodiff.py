"""Reverse-mode autodiff over numpy arrays.

Float32 is the working precision for training and inference; every op also
runs in float64, which is what the finite-difference gradient checks use.
Ops never mutate their inputs, so identical inputs give bitwise-identical
outputs within one build.
"""

from __future__ import annotations

import contextlib
import math

import numpy as np
from scipy.special import erf

from .errors import DimensionError, NumericError, ParameterError

DEFAULT_DTYPE = np.float32

_SQRT1_2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block (inference fast path)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """Shape-tagged numeric array with an optional gradient accumulator."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def zero_grad(self):
        self.grad = None

    def _accum(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def detach(self):
        return Tensor(self.data.copy())

    def backward(self, seed=None):
        """Accumulate gradients into every reachable tensor with requires_grad."""
        if seed is None:
            if self.data.size != 1:
                raise DimensionError("backward without seed requires a scalar output")
            seed = np.ones_like(self.data)
        topo = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited:
                    stack.append((p, False))
        self._accum(np.asarray(seed, dtype=self.data.dtype))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}, grad={'set' if self.grad is not None else 'none'})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, scale(as_tensor(other), -1.0))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x, dtype=None):
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


def _from_op(data, parents, backward):
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    live = tuple(p for p in parents if p.requires_grad)
    if _grad_enabled and live:
        out.requires_grad = True
        out._parents = live
        out._backward = backward
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(g, shape):
    """Reduce gradient g down to `shape` by summing broadcast axes."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise / broadcast ops


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data + b.data
    except ValueError:
        raise DimensionError(f"add: shapes {a.shape} and {b.shape} do not broadcast") from None

    def backward(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g, b.shape))

    return _from_op(data, (a, b), backward)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data * b.data
    except ValueError:
        raise DimensionError(f"mul: shapes {a.shape} and {b.shape} do not broadcast") from None

    def backward(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g * a.data, b.shape))

    return _from_op(data, (a, b), backward)


def scale(a, s):
    a = as_tensor(a)
    s = float(s)
    data = a.data * s

    def backward(g):
        if a.requires_grad:
            a._accum(g * s)

    return _from_op(data, (a,), backward)


def relu(a):
    a = as_tensor(a)
    data = np.maximum(a.data, 0.0)

    def backward(g):
        if a.requires_grad:
            a._accum(g * (a.data > 0.0))

    return _from_op(data, (a,), backward)


def gelu(a):
    """Exact Gaussian-error-linear unit, x * Phi(x)."""
    a = as_tensor(a)
    x = a.data
    cdf = 0.5 * (1.0 + erf(x * _SQRT1_2))
    data = x * cdf

    def backward(g):
        pdf = np.exp(-0.5 * x * x) * _INV_SQRT_2PI
        a._accum(g * (cdf + x * pdf))

    return _from_op(data, (a,), backward)


def softmax(a, axis=-1):
    a = as_tensor(a)
    x = a.data
    m = x.max(axis=axis, keepdims=True)
    e = np.exp(x - m)
    data = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        if a.requires_grad:
            s = (g * data).sum(axis=axis, keepdims=True)
            a._accum(data * (g - s))

    return _from_op(data, (a,), backward)


# ---------------------------------------------------------------------------
# shape ops


def reshape(a, shape):
    a = as_tensor(a)
    data = a.data.reshape(shape)

    def backward(g):
        if a.requires_grad:
            a._accum(g.reshape(a.shape))

    return _from_op(data, (a,), backward)


def transpose(a, axes):
    a = as_tensor(a)
    data = np.transpose(a.data, axes)
    inv = np.argsort(axes)

    def backward(g):
        if a.requires_grad:
            a._accum(np.transpose(g, inv))

    return _from_op(data, (a,), backward)


def swap_last(a):
    """Transpose the trailing two axes (K -> K^T in batched matmul)."""
    a = as_tensor(a)
    data = np.swapaxes(a.data, -1, -2)

    def backward(g):
        if a.requires_grad:
            a._accum(np.swapaxes(g, -1, -2))

    return _from_op(data, (a,), backward)


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        shapes = [t.shape for t in tensors]
        raise DimensionError(f"concat: shapes {shapes} do not align on axis {axis}") from None
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.concatenate([[0], np.cumsum(sizes)])

    def backward(g):
        for t, s0, s1 in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(int(s0), int(s1))
                t._accum(g[tuple(idx)])

    return _from_op(data, tuple(tensors), backward)


def slice_axis(a, axis, start, stop):
    a = as_tensor(a)
    idx = [slice(None)] * a.ndim
    idx[axis] = slice(start, stop)
    idx = tuple(idx)
    data = a.data[idx].copy()

    def backward(g):
        if a.requires_grad:
            ga = np.zeros_like(a.data)
            ga[idx] = g
            a._accum(ga)

    return _from_op(data, (a,), backward)


def roll(a, shift, axis):
    a = as_tensor(a)
    data = np.roll(a.data, shift, axis=axis)

    def backward(g):
        if a.requires_grad:
            a._accum(np.roll(g, -shift, axis=axis))

    return _from_op(data, (a,), backward)


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul: operands must be at least 2-D, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(
            f"matmul: inner dimensions disagree, left {a.shape} vs right {b.shape}"
        )
    data = a.data @ b.data

    def backward(g):
        if a.requires_grad:
            ga = g @ np.swapaxes(b.data, -1, -2)
            a._accum(_unbroadcast(ga, a.shape))
        if b.requires_grad:
            gb = np.swapaxes(a.data, -1, -2) @ g
            b._accum(_unbroadcast(gb, b.shape))

    return _from_op(data, (a, b), backward)


def linear(x, w, b=None):
    """x @ w + b over the last axis; w is (in, out), b is (out,)."""
    x, w = as_tensor(x), as_tensor(w)
    if x.shape[-1] != w.shape[0]:
        raise DimensionError(f"linear: input width {x.shape} does not match weight {w.shape}")
    data = x.data @ w.data
    if b is not None:
        b = as_tensor(b)
        if b.shape != (w.shape[1],):
            raise DimensionError(f"linear: bias shape {b.shape} does not match weight {w.shape}")
        data = data + b.data

    def backward(g):
        if x.requires_grad:
            x._accum(g @ w.data.T)
        gf = g.reshape(-1, w.shape[1])
        if w.requires_grad:
            xf = x.data.reshape(-1, w.shape[0])
            w._accum(xf.T @ gf)
        if b is not None and b.requires_grad:
            b._accum(gf.sum(axis=0))

    parents = (x, w) if b is None else (x, w, b)
    return _from_op(data, parents, backward)


def layer_norm(x, gamma, beta, eps=1e-5):
    """Normalize over the last axis, then apply gain and bias."""
    if eps <= 0:
        raise ParameterError(f"layer_norm: eps must be positive, got {eps}")
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise DimensionError(
            f"layer_norm: gain/bias shapes {gamma.shape}/{beta.shape} do not match width {d}"
        )
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    centered = xd - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    data = xhat * gamma.data + beta.data

    def backward(g):
        if gamma.requires_grad:
            gamma._accum(_unbroadcast(g * xhat, gamma.shape))
        if beta.requires_grad:
            beta._accum(_unbroadcast(g, beta.shape))
        if x.requires_grad:
            gh = g * gamma.data
            term = gh - gh.mean(axis=-1, keepdims=True) - xhat * (gh * xhat).mean(axis=-1, keepdims=True)
            x._accum(inv * term)

    return _from_op(data, (x, gamma, beta), backward)


def conv1d(x, kernel, bias=None):
    """Same-padded 1-D convolution (true convolution: the kernel is flipped).

    Accepts x as (length,), (channels, length) or (batch, channels, length);
    kernel as (k,) for the 1-D case or (out_ch, in_ch, k). Kernel length must
    be odd so same padding is symmetric.
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    squeeze = x.ndim
    xv = x if x.ndim == 3 else reshape(x, (1,) * (3 - x.ndim) + x.shape)
    kv = kernel if kernel.ndim == 3 else reshape(kernel, (1, 1) + kernel.shape)
    k = kv.shape[-1]
    if k % 2 == 0:
        raise ParameterError(f"conv1d: same padding needs an odd kernel length, got {k}")
    if kv.shape[1] != xv.shape[1]:
        raise DimensionError(
            f"conv1d: kernel input channels {kv.shape} do not match signal {xv.shape}"
        )
    out = _conv1d_same(xv, kv, as_tensor(bias) if bias is not None else None)
    if squeeze == 1:
        return reshape(out, (out.shape[-1],))
    if squeeze == 2:
        return reshape(out, out.shape[1:])
    return out


def _conv1d_same(x, w, b):
    batch, _, length = x.shape
    out_ch, _, k = w.shape
    pad = k // 2
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad)))
    data = np.zeros((batch, out_ch, length), dtype=x.dtype)
    for j in range(k):
        s = k - 1 - j
        data += np.einsum("oc,bcl->bol", w.data[:, :, j], xp[:, :, s : s + length])
    if b is not None:
        if b.shape != (out_ch,):
            raise DimensionError(f"conv1d: bias shape {b.shape} does not match {out_ch} channels")
        data = data + b.data[:, None]

    def backward(g):
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for j in range(k):
                s = k - 1 - j
                gxp[:, :, s : s + length] += np.einsum("oc,bol->bcl", w.data[:, :, j], g)
            x._accum(gxp[:, :, pad : pad + length])
        if w.requires_grad:
            gw = np.zeros_like(w.data)
            for j in range(k):
                s = k - 1 - j
                gw[:, :, j] = np.einsum("bol,bcl->oc", g, xp[:, :, s : s + length])
            w._accum(gw)
        if b is not None and b.requires_grad:
            b._accum(g.sum(axis=(0, 2)))

    parents = (x, w) if b is None else (x, w, b)
    return _from_op(data, parents, backward)


def embedding_add(tokens, table):
    """Add a learned (positions, dim) table to (..., positions, dim) tokens."""
    tokens, table = as_tensor(tokens), as_tensor(table)
    if tokens.shape[-2:] != table.shape:
        raise DimensionError(
            f"embedding_add: table {table.shape} does not match token block {tokens.shape}"
        )
    return add(tokens, table)


# ---------------------------------------------------------------------------
# reductions and losses


def sum_all(a):
    a = as_tensor(a)
    data = np.asarray(a.data.sum(), dtype=a.dtype)

    def backward(g):
        if a.requires_grad:
            a._accum(np.broadcast_to(g, a.shape))

    return _from_op(data, (a,), backward)


def l1_loss(pred, target):
    """Sum of absolute deviations; the subgradient at exact ties is 0."""
    pred, target = as_tensor(pred), as_tensor(target)
    if pred.shape != target.shape:
        raise DimensionError(f"l1_loss: pred {pred.shape} vs target {target.shape}")
    diff = pred.data - target.data
    data = np.asarray(np.abs(diff).sum(), dtype=pred.dtype)

    def backward(g):
        s = np.sign(diff) * g
        if pred.requires_grad:
            pred._accum(s)
        if target.requires_grad:
            target._accum(-s)

    return _from_op(data, (pred, target), backward)


def cross_entropy(logits, labels, sample_weights=None):
    """Mean negative log-likelihood of integer labels under softmax(logits)."""
    logits = as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.ndim != 1 or logits.shape[0] != labels.shape[0]:
        raise DimensionError(
            f"cross_entropy: logits {logits.shape} do not pair with labels {labels.shape}"
        )
    n, _ = logits.shape
    z = logits.data
    m = z.max(axis=1, keepdims=True)
    e = np.exp(z - m)
    denom = e.sum(axis=1, keepdims=True)
    p = e / denom
    logp = (z - m) - np.log(denom)
    if sample_weights is None:
        w = np.ones(n, dtype=z.dtype)
    else:
        w = np.asarray(sample_weights, dtype=z.dtype)
    wsum = w.sum()
    data = np.asarray(-(w * logp[np.arange(n), labels]).sum() / wsum, dtype=z.dtype)

    def backward(g):
        if logits.requires_grad:
            gz = p.copy()
            gz[np.arange(n), labels] -= 1.0
            gz *= (w / wsum)[:, None] * g
            logits._accum(gz)

    return _from_op(data, (logits,), backward)


# ---------------------------------------------------------------------------
# attention


def scaled_dot_attention(q, k, v, return_weights=False):
    """Softmax(Q K^T / sqrt(d_k)) V over the trailing two axes."""
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    if q.shape[-1] != k.shape[-1]:
        raise DimensionError(f"attention: K width {k.shape} does not match Q width {q.shape}")
    if k.shape[-2] != v.shape[-2]:
        raise DimensionError(f"attention: V rows {v.shape} do not match K rows {k.shape}")
    d_k = q.shape[-1]
    if d_k < 1:
        raise DimensionError("attention: d_k must be at least 1")
    scores = scale(matmul(q, swap_last(k)), 1.0 / math.sqrt(d_k))
    weights = softmax(scores, axis=-1)
    out = matmul(weights, v)
    if return_weights:
        return out, weights
    return out


# ---------------------------------------------------------------------------
# gradient verification


def gradient_check(fn, wrt, h=1e-3, coords=None):
    """Compare analytic gradients of a scalar-valued fn against central differences.

    fn is called as fn(*wrt) and must return a scalar Tensor. `wrt` tensors are
    perturbed coordinate by coordinate; pass float64 tensors for tight checks.
    `coords` optionally restricts the check to [(tensor_index, flat_index), ...].
    Returns the worst relative error over all checked coordinates; the error
    denominator is floored at 1 so coordinates where the gradient crosses zero
    compare absolutely instead of dividing truncation noise by zero.
    """
    if h <= 0:
        raise ParameterError(f"gradient_check: step must be positive, got {h}")
    for t in wrt:
        t.requires_grad = True
        t.zero_grad()
    out = fn(*wrt)
    if out.data.size != 1:
        raise DimensionError("gradient_check: fn must return a scalar")
    if not np.isfinite(out.data):
        raise NumericError(f"gradient_check: non-finite output from {getattr(fn, '__name__', fn)}")
    out.backward()
    analytic = [t.grad.copy() if t.grad is not None else np.zeros_like(t.data) for t in wrt]
    for t in wrt:
        t.zero_grad()

    if coords is None:
        coords = [(i, j) for i, t in enumerate(wrt) for j in range(t.size)]

    worst = 0.0
    with no_grad():
        for ti, flat in coords:
            t = wrt[ti]
            view = t.data.reshape(-1)
            orig = view[flat]
            view[flat] = orig + h
            f_plus = float(fn(*wrt).data)
            view[flat] = orig - h
            f_minus = float(fn(*wrt).data)
            view[flat] = orig
            if not (math.isfinite(f_plus) and math.isfinite(f_minus)):
                raise NumericError(
                    f"gradient_check: non-finite value while perturbing input {ti}"
                )
            numeric = (f_plus - f_minus) / (2.0 * h)
            a = float(analytic[ti].reshape(-1)[flat])
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1.0)
            worst = max(worst, err)
    return worst
