"""Named trainable tensors, weight initialization, and optimizer steps."""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor
from .errors import InputError, UsageError

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


class ParameterStore:
    """A flat map from parameter path to tensor, plus Adam moment buffers.

    Paths are unique. Moment buffers are created lazily on the first step
    and always match their parameter's shape. The step counter advances once
    per ``optimizer_step`` call.
    """

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self.adam_m: dict[str, np.ndarray] = {}
        self.adam_v: dict[str, np.ndarray] = {}
        self.step_count = 0

    def add(self, path, values):
        if path in self._params:
            raise UsageError(f"duplicate parameter path '{path}'")
        t = Tensor(np.array(values, dtype=np.float64), requires_grad=True)
        self._params[path] = t
        return t

    def __getitem__(self, path):
        try:
            return self._params[path]
        except KeyError:
            raise UsageError(f"unknown parameter path '{path}'") from None

    def __contains__(self, path):
        return path in self._params

    def __len__(self):
        return len(self._params)

    def paths(self):
        return list(self._params)

    def items(self):
        return self._params.items()

    def n_values(self, prefixes=None):
        """Total number of scalar parameters, optionally filtered by path prefix."""
        total = 0
        for path, t in self._params.items():
            if prefixes is None or path.startswith(tuple(prefixes)):
                total += t.data.size
        return total

    def arrays(self):
        """Copy of all parameter values, keyed by path."""
        return {path: t.data.copy() for path, t in self._params.items()}

    def replace(self, path, tensor):
        """Swap in a different leaf tensor (used by gradient-check probes)."""
        if path not in self._params:
            raise UsageError(f"unknown parameter path '{path}'")
        self._params[path] = tensor

    def zero_grads(self):
        for t in self._params.values():
            t.zero_grad()


def he_uniform(rng, shape, fan_in):
    """Fan-in scaled uniform init for layers feeding a relu."""
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape)


def xavier_uniform(rng, shape, fan_in, fan_out):
    """Fan-balanced uniform init for linear / sigmoid-feeding layers."""
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def _is_frozen(path, frozen):
    return any(path.startswith(prefix) for prefix in frozen)


def optimizer_step(store, lr, mode="adam", frozen=()):
    """Update every non-frozen parameter in place from its gradient.

    ``frozen`` is an iterable of path prefixes excluded from the step;
    frozen parameters are left bit-identical and their moment buffers are
    untouched. Gradients of updated parameters are zeroed afterwards.
    """
    if mode not in ("sgd", "adam"):
        raise InputError(f"unknown optimizer mode '{mode}'")
    frozen = tuple(frozen)
    selected = [
        (path, t) for path, t in store.items() if not _is_frozen(path, frozen)
    ]
    for path, t in selected:
        if t.grad is None:
            raise UsageError(f"no gradient for parameter '{path}'")

    t_step = store.step_count + 1
    for path, t in selected:
        g = t.grad
        if mode == "sgd":
            t.data -= lr * g
        else:
            m = store.adam_m.get(path)
            if m is None:
                m = store.adam_m[path] = np.zeros_like(t.data)
            v = store.adam_v.get(path)
            if v is None:
                v = store.adam_v[path] = np.zeros_like(t.data)
            m *= ADAM_BETA1
            m += (1.0 - ADAM_BETA1) * g
            v *= ADAM_BETA2
            v += (1.0 - ADAM_BETA2) * g * g
            m_hat = m / (1.0 - ADAM_BETA1**t_step)
            v_hat = v / (1.0 - ADAM_BETA2**t_step)
            t.data -= lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
        t.zero_grad()
    store.step_count = t_step
