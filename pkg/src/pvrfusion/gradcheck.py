"""Finite-difference verification of tape gradients.

The checker treats the analytic gradient as suspect and compares it, one
coordinate at a time, against central differences of the forward function.
It is the independent oracle for every backward rule in this package.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor, backward, no_grad
from .errors import UsageError


def grad_check(f, inputs, h=1e-5):
    """Max relative disagreement between tape gradients and central differences.

    ``f`` must be a pure function of its tensor arguments returning a scalar
    tensor. ``inputs`` are arrays (or tensors) that are treated as
    differentiable leaves. The returned value is

        max over coordinates of |analytic - numeric| / max(1e-8, |analytic| + |numeric|)

    with numeric = (f(x + h e_i) - f(x - h e_i)) / (2 h).
    """
    tensors = [Tensor(np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64),
                      requires_grad=True) for x in inputs]
    out = f(*tensors)
    if not isinstance(out, Tensor) or out.data.size != 1:
        raise UsageError("grad_check requires a scalar-valued function")
    backward(out)
    analytic = [
        t.grad.copy() if t.grad is not None else np.zeros_like(t.data) for t in tensors
    ]

    worst = 0.0
    with no_grad():
        for t, ga in zip(tensors, analytic):
            flat = t.data.ravel()
            grad_flat = ga.ravel()
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                f_plus = float(f(*tensors).data)
                flat[i] = orig - h
                f_minus = float(f(*tensors).data)
                flat[i] = orig
                numeric = (f_plus - f_minus) / (2.0 * h)
                a = float(grad_flat[i])
                err = abs(a - numeric) / max(1e-8, abs(a) + abs(numeric))
                worst = max(worst, err)
    return worst
