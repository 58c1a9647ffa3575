"""Central finite-difference gradient checking.

The numeric side never touches the autodiff machinery: it perturbs raw
parameter arrays and re-evaluates the forward function, so it stays an
independent oracle for every backward rule.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .model import ModelConfig, build
from .tensor import Tensor, backward
from .train import cross_entropy

LINEAR_TOL = 1e-6
NONLINEAR_TOL = 1e-4
DEFAULT_STEP = 1e-5


def finite_difference(f: Callable[[], float], arrays: Sequence[np.ndarray], step: float = DEFAULT_STEP):
    """Central differences of scalar f with respect to each array, in place."""
    grads = []
    for arr in arrays:
        g = np.zeros_like(arr)
        flat, gf = arr.ravel(), g.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            fp = f()
            flat[i] = orig - step
            fm = f()
            flat[i] = orig
            gf[i] = (fp - fm) / (2.0 * step)
        grads.append(g)
    return grads


def gradient_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Max elementwise |a-n| / max(1, |n|); absolute below unit magnitude."""
    denom = np.maximum(1.0, np.abs(numeric))
    return float(np.max(np.abs(analytic - numeric) / denom))


def check_gradients(
    loss_fn: Callable[[], Tensor], params: Sequence[Tensor], step: float = DEFAULT_STEP
) -> float:
    """Compare autodiff and finite-difference gradients; returns the max error."""
    for p in params:
        p.grad = None
    backward(loss_fn())
    analytic = [p.grad.copy() if p.grad is not None else np.zeros_like(p.data) for p in params]
    numeric = finite_difference(lambda: float(loss_fn().data), [p.data for p in params], step)
    return max(gradient_error(a, n) for a, n in zip(analytic, numeric))


def _weighted_sum(out: Tensor, rng: np.random.Generator) -> Tensor:
    # random projection so transposed/misrouted gradients cannot cancel
    if out.data.ndim == 0:
        return out
    return T.sum_all(T.mul(out, Tensor(rng.normal(size=out.shape))))


def _rand(rng, shape, margin: float = 0.0) -> Tensor:
    data = rng.normal(size=shape)
    if margin:
        data = data + margin * np.sign(data)  # keep clear of relu/max kinks
    return Tensor(data, requires_grad=True)


@dataclass
class SuiteResult:
    name: str
    max_error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_error < self.tolerance


def _op_cases(seed: int):
    rng = np.random.default_rng(seed)

    def case(name, tol, make):
        return name, tol, make

    def binary(op):
        def make(rng):
            a, b = _rand(rng, (2, 3)), _rand(rng, (2, 3))
            return lambda: _weighted_sum(op(a, b), np.random.default_rng(seed + 1)), [a, b]

        return make

    def chan_broadcast(op):
        def make(rng):
            a, b = _rand(rng, (1, 3, 2)), _rand(rng, (4, 3, 2))
            return lambda: _weighted_sum(op(a, b), np.random.default_rng(seed + 1)), [a, b]

        return make

    def unary(op, shape=(3, 4), margin=0.0):
        def make(rng):
            x = _rand(rng, shape, margin)
            return lambda: _weighted_sum(op(x), np.random.default_rng(seed + 1)), [x]

        return make

    cases = [
        ("add", LINEAR_TOL, binary(T.add)),
        ("sub", LINEAR_TOL, binary(T.sub)),
        ("mul", NONLINEAR_TOL, binary(T.mul)),
        ("add_channel_broadcast", LINEAR_TOL, chan_broadcast(T.add)),
        ("mul_channel_broadcast", NONLINEAR_TOL, chan_broadcast(T.mul)),
        ("scalar_mul", LINEAR_TOL, unary(lambda x: T.scalar_mul(x, -1.7))),
        ("matmul", LINEAR_TOL, None),  # custom below
        ("transpose", LINEAR_TOL, unary(T.transpose)),
        ("reshape", LINEAR_TOL, unary(lambda x: T.reshape(x, (12,)))),
        ("concat", LINEAR_TOL, None),
        ("pick", LINEAR_TOL, None),
        ("sum_all", LINEAR_TOL, unary(T.sum_all)),
        ("mean_axis0", LINEAR_TOL, unary(lambda x: T.mean_axis(x, 0))),
        ("mean_axis1", LINEAR_TOL, unary(lambda x: T.mean_axis(x, 1))),
        ("conv2d_same", LINEAR_TOL, None),
        ("conv2d_valid", LINEAR_TOL, None),
        ("conv2d_batched", LINEAR_TOL, None),
        ("channel_max_pool", NONLINEAR_TOL, None),
        ("channel_avg_pool", LINEAR_TOL, unary(T.channel_avg_pool, shape=(4, 3, 3))),
        ("channel_avg_pool_batched", LINEAR_TOL, unary(T.channel_avg_pool, shape=(2, 3, 2, 2))),
        ("avg_pool2x2", LINEAR_TOL, unary(T.avg_pool2x2, shape=(2, 4, 4))),
        ("avg_pool2x2_batched", LINEAR_TOL, unary(T.avg_pool2x2, shape=(2, 2, 4, 4))),
        ("frames_to_rows", LINEAR_TOL, unary(T.frames_to_rows, shape=(2, 3, 2, 2))),
        ("sigmoid", NONLINEAR_TOL, unary(T.sigmoid)),
        ("relu", NONLINEAR_TOL, unary(T.relu, margin=0.2)),
        ("softmax_rows", NONLINEAR_TOL, unary(T.softmax_rows)),
        ("log_softmax", NONLINEAR_TOL, unary(T.log_softmax, shape=(5,))),
        ("cross_entropy", NONLINEAR_TOL, None),
    ]
    resolved = []
    for name, tol, make in cases:
        if make is not None:
            resolved.append((name, tol, make))
            continue
        if name == "matmul":

            def make_matmul(rng):
                a, b = _rand(rng, (3, 4)), _rand(rng, (4, 2))
                return lambda: _weighted_sum(T.matmul(a, b), np.random.default_rng(seed + 1)), [a, b]

            resolved.append((name, tol, make_matmul))
        elif name == "concat":

            def make_concat(rng):
                xs = [_rand(rng, (2, 3)) for _ in range(3)]
                return lambda: _weighted_sum(T.concat(xs, axis=1), np.random.default_rng(seed + 1)), xs

            resolved.append((name, tol, make_concat))
        elif name == "pick":

            def make_pick(rng):
                x = _rand(rng, (6,))
                i = int(rng.integers(0, 6))
                return lambda: T.pick(x, i), [x]

            resolved.append((name, tol, make_pick))
        elif name == "conv2d_same":

            def make_conv_same(rng):
                x = _rand(rng, (2, 5, 5))
                k = _rand(rng, (3, 2, 3, 3))
                b = _rand(rng, (3,))
                return (
                    lambda: _weighted_sum(T.conv2d(x, k, b, "same"), np.random.default_rng(seed + 1)),
                    [x, k, b],
                )

            resolved.append((name, tol, make_conv_same))
        elif name == "conv2d_valid":

            def make_conv_valid(rng):
                x = _rand(rng, (1, 5, 5))
                k = _rand(rng, (2, 1, 3, 3))
                b = _rand(rng, (2,))
                return (
                    lambda: _weighted_sum(T.conv2d(x, k, b, "valid"), np.random.default_rng(seed + 1)),
                    [x, k, b],
                )

            resolved.append((name, tol, make_conv_valid))
        elif name == "conv2d_batched":

            def make_conv_batched(rng):
                x = _rand(rng, (3, 2, 4, 4))
                k = _rand(rng, (2, 2, 3, 3))
                b = _rand(rng, (2,))
                return (
                    lambda: _weighted_sum(T.conv2d(x, k, b, "same"), np.random.default_rng(seed + 1)),
                    [x, k, b],
                )

            resolved.append((name, tol, make_conv_batched))
        elif name == "channel_max_pool":

            def make_maxpool(rng):
                data = rng.normal(size=(4, 3, 3))
                # separate the top two channels at each position so the
                # finite-difference step cannot flip the argmax
                top = np.argsort(data, axis=0)
                data[top[-1], np.arange(3)[:, None], np.arange(3)[None, :]] += 0.05
                x = Tensor(data, requires_grad=True)
                return lambda: _weighted_sum(T.channel_max_pool(x), np.random.default_rng(seed + 1)), [x]

            resolved.append((name, tol, make_maxpool))
        elif name == "cross_entropy":

            def make_ce(rng):
                x = _rand(rng, (5,))
                label = int(rng.integers(0, 5))
                return lambda: cross_entropy(x, label), [x]

            resolved.append((name, tol, make_ce))
    return rng, resolved


def run_op_gradient_suite(seeds: Sequence[int] = range(20), step: float = DEFAULT_STEP) -> list[SuiteResult]:
    """Finite-difference check of every differentiable op over many seeds."""
    worst: dict[str, SuiteResult] = {}
    for seed in seeds:
        rng, cases = _op_cases(int(seed))
        for name, tol, make in cases:
            loss_fn, params = make(rng)
            err = check_gradients(loss_fn, params, step)
            prev = worst.get(name)
            if prev is None or err > prev.max_error:
                worst[name] = SuiteResult(name, err, tol)
    return list(worst.values())


def tiny_model_config(seed: int = 0) -> ModelConfig:
    """The end-to-end gradient-check model: 2 frames of 8x8 pixels."""
    return ModelConfig(
        variant="stam",
        input_hw=(8, 8),
        backbone_channels=(2, 3, 4),
        heads=2,
        num_classes=3,
        seed=seed,
    )


def run_model_gradient_suite(seeds: Sequence[int] = range(20), step: float = DEFAULT_STEP) -> SuiteResult:
    """End-to-end check: cross-entropy of a tiny two-frame forward pass."""
    worst = 0.0
    for seed in seeds:
        rng = np.random.default_rng(int(seed))
        model = build(tiny_model_config(int(seed)))
        # nudge initial parameters off zero bias init so relus are active
        for p in model.params.values():
            p.data = p.data + rng.uniform(-0.05, 0.05, size=p.data.shape)
        frames = [rng.uniform(0.1, 0.9, size=(8, 8)) for _ in range(2)]
        label = int(rng.integers(0, 3))
        params = list(model.params.values())
        err = check_gradients(
            lambda: cross_entropy(model.forward(frames), label), params, step
        )
        worst = max(worst, err)
    return SuiteResult("tiny_stam_end_to_end", worst, NONLINEAR_TOL)
