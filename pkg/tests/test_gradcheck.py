"""The finite-difference oracle itself, and the per-op gradient sweep."""

import numpy as np
import pytest

from pvrfusion import autodiff as ad
from pvrfusion.autodiff import Tensor, _node
from pvrfusion.errors import UsageError
from pvrfusion.gradcheck import grad_check


def test_quadratic_is_machine_precision():
    # f = sum(x^2) at x=[1,2]: analytic [2,4]; central differences are exact
    # for quadratics up to rounding
    err = grad_check(lambda x: ad.sum_all(ad.mul(x, x)), [np.array([1.0, 2.0])])
    assert err < 1e-8


def test_sigmoid_chain():
    def f(x):
        return ad.sum_all(ad.sigmoid(ad.sigmoid(x)))

    err = grad_check(f, [np.array([0.3, -1.2, 0.7])])
    assert err < 1e-6


def test_detects_sign_flipped_backward():
    def broken_mul(a, b):
        out = a.data * b.data

        def backward_fn(g):
            if a.requires_grad:
                a._accumulate(-(g * b.data))
            if b.requires_grad:
                b._accumulate(-(g * a.data))

        return _node(out, (a, b), backward_fn)

    err = grad_check(
        lambda a, b: ad.sum_all(broken_mul(a, b)),
        [np.array([1.0, 2.0]), np.array([3.0, 4.0])],
    )
    # a sign flip makes |analytic - numeric| == 2|numeric|, i.e. error 1 under
    # the |a| + |n| denominator; anything near the gradient tolerance fails loudly
    assert err > 0.5


def test_rejects_non_scalar_function():
    with pytest.raises(UsageError):
        grad_check(lambda x: ad.mul(x, 2.0), [np.array([1.0, 2.0])])


def _spread(rng, shape, gap=0.07):
    n = int(np.prod(shape))
    return ((rng.permutation(3 * n)[:n] - n + 0.5) * gap).reshape(shape)


def _op_cases(rng):
    """One scalar-valued probe per backward rule, with kink-safe inputs."""
    return [
        ("matmul", lambda a, b: ad.sum_all(ad.matmul(a, b)),
         [rng.normal(size=(3, 4)), rng.normal(size=(4, 2))]),
        ("add", lambda a, b: ad.sum_all(ad.mul(s := ad.add(a, b), s)),
         [rng.normal(size=(3, 2)), rng.normal(size=(3, 2))]),
        ("sub", lambda a, b: ad.sum_all(ad.mul(s := ad.sub(a, b), s)),
         [rng.normal(size=(3, 2)), rng.normal(size=(3, 2))]),
        ("mul", lambda a, b: ad.sum_all(ad.mul(a, b)),
         [rng.normal(size=(2, 3)), rng.normal(size=(2, 3))]),
        ("scale", lambda x: ad.sum_all(ad.mul(s := ad.scale(x, -1.7), s)),
         [rng.normal(size=(4,))]),
        ("relu", lambda x: ad.sum_all(ad.relu(x)), [_spread(rng, (4, 3))]),
        ("sigmoid", lambda x: ad.sum_all(ad.sigmoid(x)), [rng.normal(size=(3, 3))]),
        ("max_over_axis", lambda x: ad.sum_all(ad.max_over_axis(x, 1)),
         [_spread(rng, (4, 5))]),
        ("mean_over_axis", lambda x: ad.sum_all(ad.mean_over_axis(x, 0)),
         [rng.normal(size=(4, 3))]),
        ("concat", lambda a, b: ad.sum_all(ad.mul(c := ad.concat([a, b], 1), c)),
         [rng.normal(size=(2, 3)), rng.normal(size=(2, 2))]),
        ("linear", lambda x, w, b: ad.sum_all(ad.linear(x, w, b)),
         [rng.normal(size=(4, 3)), rng.normal(size=(3, 5)), rng.normal(size=5)]),
        ("take_rows",
         lambda x: ad.sum_all(ad.mul(t := ad.take_rows(x, np.array([1, 0, 1, 3])), t)),
         [rng.normal(size=(4, 2))]),
        ("repeat_rows", lambda x: ad.sum_all(ad.mul(t := ad.repeat_rows(x, 3), t)),
         [rng.normal(size=(3, 2))]),
        ("mul_colvec", lambda x, s: ad.sum_all(ad.mul_colvec(x, s)),
         [rng.normal(size=(4, 3)), rng.normal(size=(4, 1))]),
        ("segment_max", lambda x: ad.sum_all(ad.segment_max(x, np.array([0, 2, 6]))),
         [_spread(rng, (6, 3))]),
        ("reshape", lambda x: ad.sum_all(ad.mul(r := ad.reshape(x, (6,)), r)),
         [rng.normal(size=(2, 3))]),
        ("softmax_cross_entropy",
         lambda x: ad.softmax_cross_entropy(x, np.array([1, 0, 2])),
         [rng.normal(size=(3, 4))]),
        ("sum_all", lambda x: ad.sum_all(ad.mul(x, x)), [rng.normal(size=(2, 2))]),
    ]


def test_every_op_backward_rule_sweep():
    """100 seeded draws per operation, dims <= 6, max relative error < 1e-5."""
    worst = {}
    for seed in range(100):
        rng = np.random.default_rng(np.random.SeedSequence([404, seed]))
        for name, fn, inputs in _op_cases(rng):
            err = grad_check(fn, inputs)
            worst[name] = max(worst.get(name, 0.0), err)
    failing = {k: v for k, v in worst.items() if v >= 1e-5}
    assert not failing, f"ops over tolerance: {failing}"
