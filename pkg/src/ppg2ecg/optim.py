"""Parameter store and Adam optimizer."""

from __future__ import annotations

import numpy as np
from scipy.special import ndtr, ndtri

from .autodiff import Tensor
from .errors import ParameterError, StateError

_TRUNC_LO = ndtr(-2.0)
_TRUNC_HI = ndtr(2.0)


def trunc_normal(rng, shape, std=0.02, dtype=np.float32):
    """Normal(0, std) truncated to two standard deviations, via inverse CDF."""
    u = rng.uniform(_TRUNC_LO, _TRUNC_HI, size=shape)
    return (ndtri(u) * std).astype(dtype)


class ParamStore:
    """Ordered name -> Tensor map with per-parameter Adam state."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}
        self._t: dict[str, int] = {}

    def add(self, name, value, dtype=None):
        if name in self._params:
            raise StateError(f"parameter '{name}' already registered")
        arr = np.asarray(value)
        if dtype is not None:
            arr = arr.astype(dtype)
        t = Tensor(arr, requires_grad=True)
        self._params[name] = t
        self._m[name] = np.zeros_like(t.data)
        self._v[name] = np.zeros_like(t.data)
        self._t[name] = 0
        return t

    def __getitem__(self, name) -> Tensor:
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __len__(self):
        return len(self._params)

    def names(self):
        return list(self._params.keys())

    def items(self):
        return self._params.items()

    def tensors(self):
        return list(self._params.values())

    def n_values(self):
        return sum(t.size for t in self._params.values())

    def zero_grad(self):
        for t in self._params.values():
            t.zero_grad()

    def adam_state(self, name):
        return self._m[name], self._v[name], self._t[name]

    def set_values(self, name, arr):
        """Overwrite a parameter's values in place (checkpoint load)."""
        t = self._params[name]
        arr = np.asarray(arr, dtype=t.dtype)
        if arr.shape != t.shape:
            raise StateError(f"parameter '{name}' has shape {t.shape}, got {arr.shape}")
        t.data[...] = arr

    def reset_optimizer_state(self):
        for name, t in self._params.items():
            self._m[name] = np.zeros_like(t.data)
            self._v[name] = np.zeros_like(t.data)
            self._t[name] = 0

    def copy(self, dtype=None):
        """Fresh store with copied parameter values and cleared Adam state."""
        out = ParamStore()
        for name, t in self._params.items():
            out.add(name, t.data.copy(), dtype=dtype)
        return out

    def global_norm(self):
        total = 0.0
        for t in self._params.values():
            total += float(np.square(t.data, dtype=np.float64).sum())
        return float(np.sqrt(total))


def adam_step(store: ParamStore, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update in place; gradients are cleared after."""
    if lr <= 0:
        raise ParameterError(f"adam_step: lr must be positive, got {lr}")
    for name, p in store.items():
        if p.grad is None:
            raise StateError(f"adam_step: parameter '{name}' has no gradient")
    for name, p in store.items():
        g = p.grad
        t = store._t[name] + 1
        store._t[name] = t
        m = store._m[name]
        v = store._v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        m_hat = m / (1.0 - beta1**t)
        v_hat = v / (1.0 - beta2**t)
        p.data -= lr * m_hat / (np.sqrt(v_hat) + eps)
        p.grad = None
    return store
