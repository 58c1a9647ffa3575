"""Grad-CAM contracts and temporal attention export."""

import numpy as np
import pytest
from PIL import Image

from stam.attention import AttentionMap
from stam.data import TactileSequence
from stam.errors import ConfigError, UsageError
from stam.model import ModelConfig, build
from stam.tensor import Tensor
from stam.viz import (
    SaliencyMap,
    average_attention,
    export_temporal_attention,
    grad_cam,
    save_heatmap,
    write_attention_frames,
    write_ranked_csv,
)


def _model(variant="stam", seed=5):
    return build(
        ModelConfig(
            variant=variant,
            input_hw=(16, 16),
            backbone_channels=(2, 3, 4),
            heads=2,
            num_classes=4,
            seed=seed,
        )
    )


def _seq(rng, n=3):
    frames = [rng.uniform(0, 1, size=(16, 16)) for _ in range(n)]
    return TactileSequence(frames=frames, label=1, interaction="press")


class TestGradCam:
    def test_maps_nonnegative_and_jointly_normalized(self, rng):
        maps = grad_cam(_model(), _seq(rng), target_class=1)
        assert len(maps) == 3
        peak = max(m.values.max() for m in maps)
        assert peak == pytest.approx(1.0)
        for m in maps:
            assert m.values.min() >= 0.0
            assert m.values.shape == (16, 16)

    def test_zero_fc_weights_give_zero_maps(self, rng):
        model = _model()
        model.params["fc.weight"].data = np.zeros_like(model.params["fc.weight"].data)
        maps = grad_cam(model, _seq(rng), target_class=0)
        for m in maps:
            assert m.values.max() == 0.0

    def test_matches_hand_composed_weights_times_activations(self, rng):
        """Recompute one frame's map from the traced gradients directly."""
        model = _model("cnn")
        seq = _seq(rng, n=2)
        maps = grad_cam(model, seq, target_class=2)

        from stam.tensor import backward, pick

        for p in model.params.values():
            p.grad = None
        logits, trace = model.forward(seq, trace=True)
        backward(pick(logits, 2))
        feats = trace["features"]
        raws = []
        for feat_t, grad_t in zip(feats.data, feats.grad):
            w = grad_t.mean(axis=(1, 2))
            cam = np.maximum(0.0, np.einsum("c,chw->hw", w, feat_t))
            raws.append(np.repeat(np.repeat(cam, 8, 0), 8, 1))
        peak = max(r.max() for r in raws)
        for got, raw in zip(maps, raws):
            np.testing.assert_allclose(got.values, raw / peak, atol=1e-12)

    def test_single_channel_map_is_rectified_feature(self, rng):
        """With one feature channel and a positive channel weight, the map is
        relu(feature) up to the joint normalization."""
        model = build(
            ModelConfig(
                variant="cnn",
                input_hw=(16, 16),
                backbone_channels=(2, 2, 1),
                num_classes=3,
                seed=2,
            )
        )
        seq = _seq(rng, n=1)
        from stam.tensor import backward, pick

        for p in model.params.values():
            p.grad = None
        logits, trace = model.forward(seq, trace=True)
        backward(pick(logits, 0))
        feats = trace["features"]
        weight = feats.grad[0].mean(axis=(1, 2))[0]
        expected = np.maximum(0.0, weight * feats.data[0, 0])
        expected = np.repeat(np.repeat(expected, 8, 0), 8, 1)
        if expected.max() > 0:
            expected = expected / expected.max()
        maps = grad_cam(model, seq, target_class=0)
        np.testing.assert_allclose(maps[0].values, expected, atol=1e-12)

    def test_invalid_layer_rejected(self, rng):
        with pytest.raises(ConfigError):
            grad_cam(_model(), _seq(rng), target_class=0, layer="fc")

    def test_invalid_class_rejected(self, rng):
        with pytest.raises(UsageError):
            grad_cam(_model(), _seq(rng), target_class=9)

    def test_saliency_map_invariants(self):
        with pytest.raises(ConfigError):
            SaliencyMap(values=np.array([[-0.1, 0.5]]))


class TestExportTemporalAttention:
    def test_uniform_map_breaks_ties_by_flat_index(self):
        weights = np.full((8, 8), 0.125)
        out = export_temporal_attention(weights, query=3, k=3, frame_hw=(2, 2))
        assert [decode[:3] for decode in out] == [(0, 0, 0), (0, 0, 1), (0, 1, 0)]

    def test_one_hot_row_ranks_the_hot_position_first(self):
        weights = np.full((8, 8), 1e-9)
        weights[2, 6] = 1.0
        out = export_temporal_attention(weights, query=2, k=1, frame_hw=(2, 2))
        frame, y, x, weight = out[0]
        assert (frame, y, x) == (1, 1, 0)
        assert weight == pytest.approx(1.0)

    def test_ranking_matches_full_sort(self, rng):
        weights = rng.uniform(size=(12, 12))
        weights /= weights.sum(axis=1, keepdims=True)
        out = export_temporal_attention(weights, query=5, k=12, frame_hw=(2, 2))
        got = [w for *_pos, w in out]
        assert got == sorted(weights[5], reverse=True)

    def test_query_out_of_range(self, rng):
        weights = np.full((4, 4), 0.25)
        with pytest.raises(UsageError):
            export_temporal_attention(weights, query=4, k=1, frame_hw=(2, 2))
        with pytest.raises(UsageError):
            export_temporal_attention(weights, query=0, k=5, frame_hw=(2, 2))

    def test_accepts_attention_map_and_list(self, rng):
        w = np.full((4, 4), 0.25)
        amap = AttentionMap(kind="temporal", weights=Tensor(w))
        single = export_temporal_attention(amap, query=0, k=2, frame_hw=(2, 2))
        averaged = export_temporal_attention([amap, amap], query=0, k=2, frame_hw=(2, 2))
        assert single == averaged

    def test_multi_head_average(self):
        a = AttentionMap(kind="temporal", weights=Tensor(np.eye(3)))
        b = AttentionMap(kind="temporal", weights=Tensor(np.full((3, 3), 1 / 3)))
        avg = average_attention([a, b])
        np.testing.assert_allclose(avg, (np.eye(3) + np.full((3, 3), 1 / 3)) / 2)


class TestFileOutputs:
    def test_heatmap_png_roundtrip(self, tmp_path, rng):
        values = rng.uniform(size=(8, 8))
        values /= values.max()
        path = tmp_path / "map.png"
        save_heatmap(SaliencyMap(values=values), path)
        back = np.asarray(Image.open(path), dtype=np.float64) / 255.0
        np.testing.assert_allclose(back, np.round(values * 255) / 255, atol=1e-12)

    def test_ranked_csv(self, tmp_path):
        write_ranked_csv([(0, 1, 2, 0.5), (1, 0, 0, 0.25)], tmp_path / "rank.csv")
        lines = (tmp_path / "rank.csv").read_text().strip().splitlines()
        assert lines[0] == "rank,frame,y,x,weight"
        assert lines[1].startswith("0,0,1,2,0.5")

    def test_attention_frames_written(self, tmp_path, rng):
        weights = rng.uniform(size=(8, 8))
        paths = write_attention_frames(weights, query=1, frame_hw=(2, 2), out_dir=tmp_path)
        assert len(paths) == 2
        assert all(p.exists() for p in paths)
