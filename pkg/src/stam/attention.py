"""Spatial and temporal attention blocks over feature maps.

The spatial block gates each frame's feature map through a sigmoid map
computed from channel-pooled statistics. The temporal block mixes all
m = n*h*w positions of a flattened sequence with softmax weights, one
(w_q, w_k, w_v) triple per head, heads concatenated on the channel axis.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigError, ShapeError
from .tensor import (
    Tensor,
    add,
    channel_avg_pool,
    channel_max_pool,
    concat,
    conv2d,
    matmul,
    mul,
    reshape,
    sigmoid,
    softmax_rows,
    transpose,
)


@dataclass
class SpatialAttentionParams:
    """7x7 convolution over the stacked [max-pool; avg-pool] channel pair."""

    conv_kernel: Tensor  # (1, 2, 7, 7)
    conv_bias: Tensor  # (1,)

    def __post_init__(self):
        if self.conv_kernel.shape != (1, 2, 7, 7):
            raise ConfigError(
                f"spatial attention kernel must be (1,2,7,7), got {self.conv_kernel.shape}"
            )
        if self.conv_bias.shape != (1,):
            raise ConfigError(
                f"spatial attention bias must be (1,), got {self.conv_bias.shape}"
            )


@dataclass
class TemporalAttentionHead:
    """One query/key/value projection triple; all square c x c."""

    w_q: Tensor
    w_k: Tensor
    w_v: Tensor

    def __post_init__(self):
        shapes = {self.w_q.shape, self.w_k.shape, self.w_v.shape}
        if len(shapes) != 1:
            raise ConfigError(f"head projections disagree in shape: {shapes}")
        (s,) = shapes
        if len(s) != 2 or s[0] != s[1]:
            raise ConfigError(f"head projections must be square, got {s}")

    @property
    def channels(self) -> int:
        return self.w_q.shape[0]


@dataclass
class AttentionMap:
    """Normalized attention weights.

    spatial: a (1,h,w) sigmoid gate, every entry strictly inside (0,1).
    temporal: an (m,m) matrix whose row j holds the source weights for output
    position j and sums to 1.
    """

    kind: str  # "spatial" | "temporal"
    weights: Tensor


def spatial_attention_map(f: Tensor, params: SpatialAttentionParams) -> AttentionMap:
    """Channel max/avg pool -> 7x7 same-padded conv -> sigmoid gate.

    Accepts one (c,h,w) frame or a (n,c,h,w) stack; frames are gated
    independently either way.
    """
    pooled = concat([channel_max_pool(f), channel_avg_pool(f)], axis=f.data.ndim - 3)
    gate = sigmoid(conv2d(pooled, params.conv_kernel, params.conv_bias, padding="same"))
    return AttentionMap(kind="spatial", weights=gate)


def apply_spatial(f: Tensor, attn: AttentionMap) -> Tensor:
    """Multiply every channel of f positionwise by the single-channel gate."""
    if attn.kind != "spatial":
        raise ConfigError(f"apply_spatial needs a spatial map, got {attn.kind!r}")
    gw = attn.weights
    if gw.data.ndim != f.data.ndim or gw.shape[-2:] != f.shape[-2:]:
        raise ShapeError(
            f"spatial map {attn.weights.shape} does not match feature map {f.shape}"
        )
    return mul(f, gw)


def flatten_sequence(frames: Sequence[Tensor]) -> Tensor:
    """Stack n (c,h,w) frames into an (n*h*w, c) matrix.

    Row order is frame-major, then row-major within a frame: position
    (t, y, x) lands on row t*h*w + y*w + x. `unflatten_sequence` inverts it.
    """
    if not frames:
        raise ConfigError("flatten_sequence needs at least one frame")
    shape = frames[0].shape
    if len(shape) != 3:
        raise ShapeError(f"frames must be (c,h,w), got {shape}")
    for fr in frames:
        if fr.shape != shape:
            raise ShapeError(f"heterogeneous frame shapes: {shape} vs {fr.shape}")
    c, h, w = shape
    rows = [transpose(reshape(fr, (c, h * w))) for fr in frames]
    return concat(rows, axis=0)


def unflatten_sequence(fsn, n: int, h: int, w: int) -> list[np.ndarray]:
    """Inverse of flatten_sequence on raw values; returns (c,h,w) arrays."""
    data = fsn.data if isinstance(fsn, Tensor) else np.asarray(fsn)
    m, c = data.shape
    if m != n * h * w:
        raise ShapeError(f"{m} rows cannot unflatten to {n}x{h}x{w}")
    out = []
    for t in range(n):
        block = data[t * h * w : (t + 1) * h * w]  # (h*w, c)
        out.append(block.T.reshape(c, h, w))
    return out


def decode_flat_index(flat: int, h: int, w: int) -> tuple[int, int, int]:
    """Map a flattened row index back to (frame, y, x)."""
    t, rest = divmod(flat, h * w)
    y, x = divmod(rest, w)
    return t, y, x


def temporal_attention(
    fsn: Tensor, head: TemporalAttentionHead
) -> tuple[Tensor, AttentionMap]:
    """Softmax-weighted mixing over all positions, plus a residual.

    With q_i, k_j the projected rows, the score for the pair is their dot
    product and the map row for output j is softmax over the source index i.
    Output row j is the weighted sum of projected values plus the unscaled
    residual fsn_j.
    """
    if fsn.data.ndim != 2:
        raise ShapeError(f"temporal attention needs (m,c) input, got {fsn.shape}")
    c = fsn.shape[1]
    if head.channels != c:
        raise ShapeError(
            f"head dimension {head.channels} does not match feature channels {c}"
        )
    q = matmul(fsn, transpose(head.w_q))
    k = matmul(fsn, transpose(head.w_k))
    v = matmul(fsn, transpose(head.w_v))
    # scores[j, i] = <q_i, k_j>; each row j is normalized over the sources i
    attn = softmax_rows(matmul(k, transpose(q)))
    out = add(matmul(attn, v), fsn)
    return out, AttentionMap(kind="temporal", weights=attn)


def multi_head_temporal(
    fsn: Tensor,
    heads: Sequence[TemporalAttentionHead],
    return_maps: bool = False,
):
    """Run every head and concatenate their outputs on the channel axis."""
    if not heads:
        raise ConfigError("multi_head_temporal needs at least one head")
    outs = []
    maps = []
    for head in heads:
        out, attn = temporal_attention(fsn, head)
        outs.append(out)
        maps.append(attn)
    combined = outs[0] if len(outs) == 1 else concat(outs, axis=1)
    if return_maps:
        return combined, maps
    return combined
