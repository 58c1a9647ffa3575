"""Saliency and attention visualization: Grad-CAM maps and top-k exports."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image

from .attention import AttentionMap, decode_flat_index
from .errors import ConfigError, ShapeError, UsageError
from .model import Model
from .tensor import backward, pick


@dataclass
class SaliencyMap:
    """Nonnegative (h,w) saliency values, normalized so the peak is 1."""

    values: np.ndarray

    def __post_init__(self):
        v = self.values
        if v.ndim != 2:
            raise ShapeError(f"saliency maps are 2-d, got {v.shape}")
        if v.min() < 0:
            raise ConfigError("saliency values must be nonnegative")

    def mass(self) -> float:
        return float(self.values.mean())


def _nearest_upsample(m: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    ys = (np.arange(out_h) * m.shape[0]) // out_h
    xs = (np.arange(out_w) * m.shape[1]) // out_w
    return m[np.ix_(ys, xs)]


def grad_cam(model: Model, seq, target_class: int, layer: str = "backbone") -> list[SaliencyMap]:
    """Per-frame class saliency from gradients at the backbone output.

    Backward runs from the target-class logit; each channel is weighted by
    the spatial mean of its gradient and the rectified weighted sum is the
    map. Maps are normalized jointly by the sequence-wide peak so saliency
    is comparable across frames; the peak frame reaches exactly 1 and an
    all-zero response stays 0.
    """
    if layer != "backbone":
        raise ConfigError(f"unknown saliency layer {layer!r} (only 'backbone')")
    k = model.config.num_classes
    if not 0 <= target_class < k:
        raise UsageError(f"target class {target_class} out of range for {k} classes")

    for p in model.params.values():
        p.grad = None
    logits, trace = model.forward(seq, trace=True)
    backward(pick(logits, target_class))

    h, w = model.config.input_hw
    feats = trace["features"]  # (n, c, h', w')
    grads = feats.grad if feats.grad is not None else np.zeros_like(feats.data)
    raw = []
    for feat_t, grad_t in zip(feats.data, grads):
        weights = grad_t.mean(axis=(1, 2))
        cam = np.maximum(0.0, np.tensordot(weights, feat_t, axes=([0], [0])))
        raw.append(_nearest_upsample(cam, h, w))
    peak = max(cam.max() for cam in raw)
    if peak > 0:
        raw = [cam / peak for cam in raw]
    return [SaliencyMap(values=cam) for cam in raw]


def save_heatmap(map_or_values, path) -> None:
    values = map_or_values.values if isinstance(map_or_values, SaliencyMap) else map_or_values
    img = np.clip(np.round(np.asarray(values) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(img, mode="L").save(path)


def average_attention(maps: Sequence[AttentionMap]) -> np.ndarray:
    """Mean the weight matrices of several temporal heads."""
    if not maps:
        raise ConfigError("no attention maps to average")
    for m in maps:
        if m.kind != "temporal":
            raise ConfigError(f"expected temporal maps, got {m.kind!r}")
    return np.mean([m.weights.data for m in maps], axis=0)


def export_temporal_attention(
    attn,
    query: int,
    k: int,
    frame_hw: tuple[int, int],
) -> list[tuple[int, int, int, float]]:
    """Top-k source positions for one output position, as (frame, y, x, weight).

    `attn` is a temporal AttentionMap, a list of them (averaged first), or a
    raw (m,m) array. Ties rank the lower flattened index first.
    """
    if isinstance(attn, AttentionMap):
        weights = attn.weights.data
    elif isinstance(attn, np.ndarray):
        weights = attn
    else:
        weights = average_attention(list(attn))
    m = weights.shape[0]
    if weights.shape != (m, m):
        raise ShapeError(f"temporal attention must be square, got {weights.shape}")
    if not 0 <= query < m:
        raise UsageError(f"query position {query} out of range for m={m}")
    if not 1 <= k <= m:
        raise UsageError(f"k={k} out of range for m={m}")
    h, w = frame_hw
    if m % (h * w):
        raise ShapeError(f"{m} positions do not tile {h}x{w} frames")

    row = weights[query]
    order = np.argsort(-row, kind="stable")  # stable: ties keep the lower index
    out = []
    for flat in order[:k]:
        t, y, x = decode_flat_index(int(flat), h, w)
        out.append((t, y, x, float(row[flat])))
    return out


def write_ranked_csv(entries, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["rank", "frame", "y", "x", "weight"])
        for rank, (t, y, x, weight) in enumerate(entries):
            writer.writerow([rank, t, y, x, f"{weight:.8f}"])


def write_attention_frames(weights: np.ndarray, query: int, frame_hw: tuple[int, int], out_dir) -> list[Path]:
    """Dump the query row as one heatmap PNG per frame, jointly normalized."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    h, w = frame_hw
    row = weights[query]
    n = row.size // (h * w)
    peak = row.max()
    scaled = row / peak if peak > 0 else row
    paths = []
    for t in range(n):
        frame = scaled[t * h * w : (t + 1) * h * w].reshape(h, w)
        p = out_dir / f"attention_frame_{t:03d}.png"
        save_heatmap(frame, p)
        paths.append(p)
    return paths
