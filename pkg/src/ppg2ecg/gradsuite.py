"""Finite-difference verification suite covering every differentiable op and
the full reconstruction loss. Runs in float64 with central differences."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .model import ReconstructorModel, forward_waveform
from .patches import StageConfig

ELEMENTWISE_TOL = 1e-6
OP_TOL = 1e-4
MODEL_TOL = 1e-3

TINY_MODEL_CONFIG = StageConfig(d_model=8, heads=2, depths=(2, 2, 2, 2, 2), stem_channels=2)


def _t(rng, *shape, lo=-2.0, hi=2.0):
    return Tensor(rng.uniform(lo, hi, size=shape))


def _probe(rng, *shape):
    return Tensor(rng.normal(size=shape))


def _away_from(x, point=0.0, margin=0.05):
    x.data[np.abs(x.data - point) < margin] += 2 * margin
    return x


def run_op_suite(cases_per_op=100, seed=0, h=1e-3):
    """Worst relative error per op over random shapes and seeds."""
    master = np.random.default_rng(seed)
    results = {}

    def run(name, case):
        worst = 0.0
        for _ in range(cases_per_op):
            worst = max(worst, case(np.random.default_rng(master.integers(2**63))))
        results[name] = worst

    def elementwise(op):
        def case(rng):
            x = _t(rng, int(rng.integers(1, 5)), int(rng.integers(1, 8)))
            if op is ad.relu:
                _away_from(x)
            probe = _probe(rng, *x.shape)
            return ad.gradient_check(lambda a: ad.sum_all(ad.mul(op(a), probe)), [x], h=h)

        return case

    run("relu", elementwise(ad.relu))
    run("gelu", elementwise(ad.gelu))

    def scale_case(rng):
        x = _t(rng, 2, 6)
        factor = float(rng.uniform(-2, 2))
        probe = _probe(rng, 2, 6)
        return ad.gradient_check(lambda a: ad.sum_all(ad.mul(ad.scale(a, factor), probe)), [x], h=h)

    run("scale", scale_case)

    def add_case(rng):
        x, y = _t(rng, 3, 4), _t(rng, 3, 4)
        probe = _probe(rng, 3, 4)
        return ad.gradient_check(
            lambda a, b: ad.sum_all(ad.mul(ad.add(a, b), probe)), [x, y], h=h
        )

    run("add", add_case)

    def mul_case(rng):
        x, y = _t(rng, 3, 4), _t(rng, 3, 4)
        probe = _probe(rng, 3, 4)
        return ad.gradient_check(
            lambda a, b: ad.sum_all(ad.mul(ad.mul(a, b), probe)), [x, y], h=h
        )

    run("mul", mul_case)

    def matmul_case(rng):
        n, k, m = (int(rng.integers(1, 6)) for _ in range(3))
        a, b = _t(rng, n, k), _t(rng, k, m)
        probe = _probe(rng, n, m)
        return ad.gradient_check(
            lambda x, y: ad.sum_all(ad.mul(ad.matmul(x, y), probe)), [a, b], h=h
        )

    run("matmul", matmul_case)

    def linear_case(rng):
        n, k, m = int(rng.integers(1, 5)), int(rng.integers(1, 6)), int(rng.integers(1, 6))
        x, w, b = _t(rng, n, k), _t(rng, k, m), _t(rng, m)
        probe = _probe(rng, n, m)
        return ad.gradient_check(
            lambda xx, ww, bb: ad.sum_all(ad.mul(ad.linear(xx, ww, bb), probe)), [x, w, b], h=h
        )

    run("linear", linear_case)

    def conv_case(rng):
        length = int(rng.integers(5, 20))
        cin, cout = int(rng.integers(1, 3)), int(rng.integers(1, 3))
        k = int(rng.choice([1, 3, 5, 7]))
        x, w, b = _t(rng, 1, cin, length), _t(rng, cout, cin, k), _t(rng, cout)
        probe = _probe(rng, 1, cout, length)
        return ad.gradient_check(
            lambda xx, ww, bb: ad.sum_all(ad.mul(ad.conv1d(xx, ww, bb), probe)), [x, w, b], h=h
        )

    run("conv1d", conv_case)

    def layer_norm_case(rng):
        n, dim = int(rng.integers(1, 5)), int(rng.integers(2, 9))
        x = _t(rng, n, dim, lo=-3, hi=3)
        g = _t(rng, dim, lo=0.5, hi=2.0)
        b = _t(rng, dim)
        probe = _probe(rng, n, dim)
        return ad.gradient_check(
            lambda xx, gg, bb: ad.sum_all(ad.mul(ad.layer_norm(xx, gg, bb), probe)),
            [x, g, b],
            h=h,
        )

    run("layer_norm", layer_norm_case)

    def softmax_case(rng):
        x = _t(rng, int(rng.integers(1, 5)), int(rng.integers(2, 8)), lo=-5, hi=5)
        probe = _probe(rng, *x.shape)
        return ad.gradient_check(lambda a: ad.sum_all(ad.mul(ad.softmax(a), probe)), [x], h=h)

    run("softmax", softmax_case)

    def attention_case(rng):
        nq, nk, dk, dv = (int(rng.integers(1, 6)) for _ in range(4))
        q, k, v = _t(rng, nq, dk), _t(rng, nk, dk), _t(rng, nk, dv)
        probe = _probe(rng, nq, dv)
        return ad.gradient_check(
            lambda qq, kk, vv: ad.sum_all(ad.mul(ad.scaled_dot_attention(qq, kk, vv), probe)),
            [q, k, v],
            h=h,
        )

    run("scaled_dot_attention", attention_case)

    def l1_case(rng):
        n = int(rng.integers(1, 30))
        pred, target = _t(rng, n), _t(rng, n)
        # keep coordinates away from exact ties where the subgradient kinks
        close = np.abs(pred.data - target.data) < 0.05
        pred.data[close] += 0.1
        return ad.gradient_check(lambda p: ad.l1_loss(p, target), [pred], h=h)

    run("l1_loss", l1_case)

    def cross_entropy_case(rng):
        n, c = int(rng.integers(2, 6)), int(rng.integers(2, 5))
        logits = _t(rng, n, c, lo=-3, hi=3)
        labels = rng.integers(0, c, size=n)
        return ad.gradient_check(lambda z: ad.cross_entropy(z, labels), [logits], h=h)

    run("cross_entropy", cross_entropy_case)

    def structural_case(rng):
        x = _t(rng, 2, 4, 6)
        probe = _probe(rng, 2, 4, 6)

        def fn(a):
            y = ad.roll(a, 1, 1)
            y = ad.transpose(y, (0, 2, 1))
            y = ad.reshape(y, (2, 4, 6))
            left = ad.slice_axis(y, 2, 0, 3)
            right = ad.slice_axis(y, 2, 3, 6)
            y = ad.concat([right, left], axis=2)
            return ad.sum_all(ad.mul(y, probe))

        return ad.gradient_check(fn, [x], h=h)

    run("structural(roll/transpose/reshape/slice/concat)", structural_case)

    def embedding_case(rng):
        tokens, table = _t(rng, 2, 4, 3), _t(rng, 4, 3)
        probe = _probe(rng, 2, 4, 3)
        return ad.gradient_check(
            lambda t, e: ad.sum_all(ad.mul(ad.embedding_add(t, e), probe)), [tokens, table], h=h
        )

    run("embedding_add", embedding_case)

    return results


def run_model_check(seed=0, h=1e-3, n_params=10):
    """Full reconstruction-loss gradient vs finite differences on sampled
    parameter coordinates (tiny d_model=8 config, float64)."""
    model = ReconstructorModel.build(TINY_MODEL_CONFIG, seed=seed).copy(dtype=np.float64)
    rng = np.random.default_rng(seed + 1)
    x = rng.uniform(-1, 1, (1, 512))
    y = rng.uniform(-1, 1, (1, 512))
    names = model.params.names()
    picks = rng.choice(len(names), size=n_params, replace=False)
    tensors = [model.params[names[i]] for i in picks]
    coords = [(j, int(rng.integers(t.size))) for j, t in enumerate(tensors)]

    def loss_fn(*_):
        pred = forward_waveform(model, Tensor(x))
        return ad.l1_loss(pred, Tensor(y))

    return ad.gradient_check(loss_fn, tensors, h=h, coords=coords)


ELEMENTWISE_OPS = ("relu", "gelu", "scale", "add", "mul")


def tolerance_for(name):
    if name == "full_model":
        return MODEL_TOL
    return ELEMENTWISE_TOL if name in ELEMENTWISE_OPS else OP_TOL


def run_full_suite(cases_per_op=100, seed=0, h=1e-3):
    results = run_op_suite(cases_per_op=cases_per_op, seed=seed, h=h)
    results["full_model"] = run_model_check(seed=seed, h=h)
    return results


def suite_passes(results):
    return all(err < tolerance_for(name) for name, err in results.items())
