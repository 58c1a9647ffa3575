"""Built-in verification suite behind the `selfcheck` CLI subcommand.

Runs the finite-difference gradient checks plus the structural invariants
(normalization, ranges, determinism, metric identities) and prints one line
per property.
"""

from __future__ import annotations

import math
from typing import Callable

import numpy as np

from . import tensor as T
from .attention import (
    SpatialAttentionParams,
    TemporalAttentionHead,
    flatten_sequence,
    spatial_attention_map,
    temporal_attention,
    unflatten_sequence,
)
from .gradcheck import run_model_gradient_suite, run_op_gradient_suite
from .metrics import ColourSsimConfig, GanScoreBatch, colour_ssim, gan_value
from .model import ModelConfig, build
from .tensor import Tensor


def _random_head(rng, c: int) -> TemporalAttentionHead:
    return TemporalAttentionHead(
        w_q=Tensor(rng.normal(size=(c, c)) * 0.3),
        w_k=Tensor(rng.normal(size=(c, c)) * 0.3),
        w_v=Tensor(rng.normal(size=(c, c)) * 0.3),
    )


def _check_temporal_normalization() -> None:
    for seed in range(20):
        rng = np.random.default_rng(seed)
        m, c = int(rng.integers(2, 9)), int(rng.integers(2, 6))
        fsn = Tensor(rng.normal(size=(m, c)))
        _, attn = temporal_attention(fsn, _random_head(rng, c))
        sums = attn.weights.data.sum(axis=1)
        assert np.all(np.abs(sums - 1.0) <= 1e-9), f"row sums off by {np.abs(sums - 1).max()}"
        assert attn.weights.data.min() >= 0 and attn.weights.data.max() <= 1


def _check_spatial_gate_range() -> None:
    for seed in range(20):
        rng = np.random.default_rng(seed)
        c = int(rng.integers(1, 5))
        f = Tensor(rng.normal(size=(c, 6, 6)))
        params = SpatialAttentionParams(
            conv_kernel=Tensor(rng.normal(size=(1, 2, 7, 7)) * 0.2),
            conv_bias=Tensor(rng.normal(size=(1,)) * 0.2),
        )
        gate = spatial_attention_map(f, params).weights.data
        assert gate.min() > 0 and gate.max() < 1, "gate left the open interval (0,1)"


def _check_softmax_stabilization() -> None:
    out = T.softmax_rows(Tensor([[1000.0, 1000.0]])).data
    assert np.all(np.isfinite(out)) and np.allclose(out, 0.5, atol=1e-12)
    out = T.softmax_rows(Tensor([[-1000.0, 0.0, 1000.0]])).data
    assert np.all(np.isfinite(out)) and abs(out.sum() - 1.0) <= 1e-12


def _check_conv_same_padding() -> None:
    rng = np.random.default_rng(0)
    x = Tensor(rng.normal(size=(2, 9, 7)))
    for k in (1, 3, 5, 7):
        kernel = Tensor(rng.normal(size=(3, 2, k, k)))
        out = T.conv2d(x, kernel, Tensor(np.zeros(3)), "same")
        assert out.shape == (3, 9, 7), f"k={k} broke same-padding: {out.shape}"


def _check_forward_determinism() -> None:
    cfg = ModelConfig(variant="stam", input_hw=(16, 16), backbone_channels=(2, 3, 4), heads=2, num_classes=4, seed=9)
    rng = np.random.default_rng(9)
    frames = [rng.uniform(0, 1, size=(16, 16)) for _ in range(3)]
    a = build(cfg).forward(frames).data
    b = build(cfg).forward(frames).data
    assert np.array_equal(a, b), "same seed and input produced different logits"


def _check_residual_guarantee() -> None:
    rng = np.random.default_rng(3)
    fsn = Tensor(rng.normal(size=(5, 3)))
    head = TemporalAttentionHead(
        w_q=Tensor(rng.normal(size=(3, 3))),
        w_k=Tensor(rng.normal(size=(3, 3))),
        w_v=Tensor(np.zeros((3, 3))),
    )
    out, _ = temporal_attention(fsn, head)
    assert np.array_equal(out.data, fsn.data), "zero value projection must be the identity"


def _check_flatten_roundtrip() -> None:
    rng = np.random.default_rng(4)
    frames = [Tensor(rng.normal(size=(3, 2, 4))) for _ in range(3)]
    fsn = flatten_sequence(frames)
    back = unflatten_sequence(fsn, 3, 2, 4)
    for orig, rec in zip(frames, back):
        assert np.array_equal(orig.data, rec)


def _check_metric_identities() -> None:
    rng = np.random.default_rng(5)
    x = rng.uniform(0, 1, size=(3, 8, 8))
    y = rng.uniform(0, 1, size=(3, 8, 8))
    assert abs(colour_ssim(x, x) - 1.0) <= 1e-12
    assert colour_ssim(x, y) == colour_ssim(y, x)
    value = gan_value(GanScoreBatch(real_scores=[0.5, 0.5], fake_scores=[0.5]))
    assert abs(value - (-2.0 * math.log(2.0))) <= 1e-12
    cfg = ColourSsimConfig(c1=1e-4, c2=9e-4)
    flat = colour_ssim(np.zeros((1, 4, 4)), np.ones((1, 4, 4)), cfg)
    assert abs(flat - 1e-4 / 1.0001) <= 1e-12


CHECKS: list[tuple[str, Callable[[], None]]] = [
    ("temporal attention rows sum to 1 (20 seeds)", _check_temporal_normalization),
    ("spatial gates lie strictly in (0,1) (20 seeds)", _check_spatial_gate_range),
    ("softmax survives +-1000 logits", _check_softmax_stabilization),
    ("conv2d same-padding preserves spatial dims", _check_conv_same_padding),
    ("forward pass is deterministic per seed", _check_forward_determinism),
    ("zero value projection is a pure residual", _check_residual_guarantee),
    ("flatten/unflatten round-trips frames", _check_flatten_roundtrip),
    ("metric identities (ssim self/symmetry, value function)", _check_metric_identities),
]


def run_selfcheck(gradient_seeds: int = 20, out=print) -> int:
    """Run everything; returns the number of failed properties."""
    failures = 0
    for result in run_op_gradient_suite(seeds=range(gradient_seeds)):
        if result.passed:
            out(f"[ok]   gradient: {result.name} (max rel err {result.max_error:.2e})")
        else:
            failures += 1
            out(
                f"[FAIL] gradient: {result.name} "
                f"(max rel err {result.max_error:.2e} >= {result.tolerance:.0e})"
            )
    model_result = run_model_gradient_suite(seeds=range(gradient_seeds))
    if model_result.passed:
        out(f"[ok]   gradient: {model_result.name} (max rel err {model_result.max_error:.2e})")
    else:
        failures += 1
        out(f"[FAIL] gradient: {model_result.name} (max rel err {model_result.max_error:.2e})")

    for name, fn in CHECKS:
        try:
            fn()
        except AssertionError as exc:
            failures += 1
            out(f"[FAIL] {name}: {exc}")
        except Exception as exc:  # noqa: BLE001 - report, keep checking
            failures += 1
            out(f"[FAIL] {name}: {type(exc).__name__}: {exc}")
        else:
            out(f"[ok]   {name}")
    return failures
