"""The three ablation variants behind one interface.

All variants share a small 3-block CNN backbone (3x3 same-padded conv, relu,
2x2 average downsample). `cnn` pools each frame globally and averages over
frames; `cnn_spatial` gates each frame with spatial attention first; `stam`
additionally flattens the gated sequence, runs multi-head temporal attention
over all positions, and averages those before the classifier.
"""

from __future__ import annotations

import json
import math
import struct
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .attention import (
    AttentionMap,
    SpatialAttentionParams,
    TemporalAttentionHead,
    apply_spatial,
    multi_head_temporal,
    spatial_attention_map,
)
from .errors import CheckpointError, ConfigError, ShapeError
from .tensor import (
    Tensor,
    add,
    avg_pool2x2,
    conv2d,
    frames_to_rows,
    matmul,
    mean_axis,
    relu,
    reshape,
)

VARIANTS = ("cnn", "cnn_spatial", "stam")

CHECKPOINT_MAGIC = b"STAM"
CHECKPOINT_VERSION = 1


@dataclass
class ModelConfig:
    variant: str = "stam"
    input_hw: tuple[int, int] = (32, 32)
    backbone_channels: tuple[int, ...] = (8, 16, 32)
    feature_hw: tuple[int, int] | None = None  # derived from input when None
    heads: int = 4
    num_classes: int = 10
    seed: int = 0

    def __post_init__(self):
        self.input_hw = tuple(int(v) for v in self.input_hw)
        self.backbone_channels = tuple(int(v) for v in self.backbone_channels)
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}, expected one of {VARIANTS}")
        if self.num_classes < 2:
            raise ConfigError(f"need at least 2 classes, got {self.num_classes}")
        if self.heads < 1:
            raise ConfigError(f"need at least 1 head, got {self.heads}")
        if not self.backbone_channels:
            raise ConfigError("backbone_channels must be nonempty")
        h, w = self.input_hw
        stride = 2 ** len(self.backbone_channels)
        if h % stride or w % stride:
            raise ConfigError(
                f"input {h}x{w} is not divisible by the backbone stride {stride}"
            )
        derived = (h // stride, w // stride)
        if self.feature_hw is None:
            self.feature_hw = derived
        else:
            self.feature_hw = tuple(int(v) for v in self.feature_hw)
            if self.feature_hw != derived:
                raise ConfigError(
                    f"feature_hw {self.feature_hw} inconsistent with backbone "
                    f"stride (expected {derived})"
                )


def _param_rng(seed: int, name: str) -> np.random.Generator:
    # one stream per parameter name so shared names match across variants
    return np.random.default_rng([seed, zlib.crc32(name.encode("ascii"))])


def _uniform_init(
    seed: int, name: str, shape: tuple[int, ...], fan_in: int, gain: float = 3.0
) -> Tensor:
    # U(+-sqrt(gain/fan_in)); gain 6 keeps variance through relu layers
    bound = math.sqrt(gain / fan_in)
    data = _param_rng(seed, name).uniform(-bound, bound, size=shape)
    return Tensor(data, requires_grad=True)


def _zeros_param(shape) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


class Model:
    """A built variant: config plus named parameter tensors."""

    def __init__(self, config: ModelConfig, params: dict[str, Tensor]):
        self.config = config
        self.params = params

    # -- construction ------------------------------------------------------

    @property
    def feature_channels(self) -> int:
        return self.config.backbone_channels[-1]

    def parameter_count(self) -> int:
        return sum(p.data.size for p in self.params.values())

    def spatial_params(self) -> SpatialAttentionParams:
        return SpatialAttentionParams(
            conv_kernel=self.params["spatial.kernel"],
            conv_bias=self.params["spatial.bias"],
        )

    def temporal_heads(self) -> list[TemporalAttentionHead]:
        return [
            TemporalAttentionHead(
                w_q=self.params[f"temporal.head{i}.w_q"],
                w_k=self.params[f"temporal.head{i}.w_k"],
                w_v=self.params[f"temporal.head{i}.w_v"],
            )
            for i in range(self.config.heads)
        ]

    # -- inference ---------------------------------------------------------

    def _frames_of(self, seq) -> list[np.ndarray]:
        frames = seq.frames if hasattr(seq, "frames") else list(seq)
        if not frames:
            raise ShapeError("forward needs at least one frame")
        h, w = self.config.input_hw
        for fr in frames:
            if np.shape(fr) != (h, w):
                raise ShapeError(
                    f"frame shape {np.shape(fr)} does not match configured input {(h, w)}"
                )
        return frames

    def _backbone(self, x: Tensor) -> Tensor:
        for i in range(len(self.config.backbone_channels)):
            w = self.params[f"backbone.conv{i}.weight"]
            b = self.params[f"backbone.conv{i}.bias"]
            x = avg_pool2x2(relu(conv2d(x, w, b, padding="same")))
        return x

    def _classify(self, feat: Tensor) -> Tensor:
        w, b = self.params["fc.weight"], self.params["fc.bias"]
        k, d = w.shape
        return add(reshape(matmul(w, reshape(feat, (d, 1))), (k,)), b)

    def forward(self, seq, trace: bool = False, gate_override: np.ndarray | None = None):
        """Run one sequence to class logits.

        Frames batch along the leading axis through the backbone. With
        `trace=True` the batched backbone features (n,c,h',w'), the spatial
        gate and the temporal attention maps are returned as well
        (diagnostics and Grad-CAM). `gate_override` replaces the spatial gate
        with a fixed map; used to test that the gated variants nest the
        plain CNN.
        """
        frames = self._frames_of(seq)
        n = len(frames)
        variant = self.config.variant
        # center pixels on the flat-gel level so contact signal is zero-mean
        stack = Tensor(np.stack([np.asarray(fr) for fr in frames])[:, None, :, :] - 0.5)
        feats = self._backbone(stack)  # (n, c, h', w')

        gate: AttentionMap | None = None
        attention_maps: list[AttentionMap] = []
        if variant in ("cnn_spatial", "stam"):
            if gate_override is not None:
                fixed = np.broadcast_to(gate_override, (n, 1) + feats.shape[2:]).copy()
                gate = AttentionMap(kind="spatial", weights=Tensor(fixed))
            else:
                gate = spatial_attention_map(feats, self.spatial_params())
            gated = apply_spatial(feats, gate)
        else:
            gated = feats

        if variant == "stam":
            fsn = frames_to_rows(gated)  # (n*h'*w', c)
            mixed, attention_maps = multi_head_temporal(
                fsn, self.temporal_heads(), return_maps=True
            )
            pooled = mean_axis(mixed, axis=0)  # (c*H,)
        else:
            c = gated.shape[1]
            hw = gated.shape[2] * gated.shape[3]
            per_frame = mean_axis(reshape(gated, (n * c, hw)), axis=1)  # (n*c,)
            pooled = mean_axis(reshape(per_frame, (n, c)), axis=0)  # (c,)

        logits = self._classify(pooled)
        if trace:
            return logits, {
                "features": feats,
                "gate": gate,
                "attention": attention_maps,
            }
        return logits


def build(config: ModelConfig) -> Model:
    """Create a variant with seeded fan-in-scaled uniform initialization."""
    params: dict[str, Tensor] = {}
    seed = config.seed
    cin = 1
    for i, cout in enumerate(config.backbone_channels):
        name = f"backbone.conv{i}"
        params[f"{name}.weight"] = _uniform_init(
            seed, f"{name}.weight", (cout, cin, 3, 3), fan_in=cin * 9, gain=6.0
        )
        params[f"{name}.bias"] = _zeros_param((cout,))
        cin = cout
    c = config.backbone_channels[-1]

    if config.variant in ("cnn_spatial", "stam"):
        params["spatial.kernel"] = _uniform_init(
            seed, "spatial.kernel", (1, 2, 7, 7), fan_in=2 * 49
        )
        params["spatial.bias"] = _zeros_param((1,))

    fc_in = c
    if config.variant == "stam":
        for i in range(config.heads):
            for proj in ("w_q", "w_k", "w_v"):
                name = f"temporal.head{i}.{proj}"
                # value projections start small so each head opens as a
                # near-residual; query/key start small too, keeping the
                # unscaled dot-product scores out of softmax saturation
                gain = 0.03 if proj == "w_v" else 0.3
                params[name] = _uniform_init(seed, name, (c, c), fan_in=c, gain=gain)
        fc_in = c * config.heads

    params["fc.weight"] = _uniform_init(
        seed, "fc.weight", (config.num_classes, fc_in), fan_in=fc_in
    )
    params["fc.bias"] = _zeros_param((config.num_classes,))
    return Model(config, params)


# ---------------------------------------------------------------------------
# checkpoint io
#
# layout: b"STAM" | u32 version | u64 header length | UTF-8 JSON header |
# one record per parameter: u64 name length | name | u64 rank | u64 dims... |
# little-endian f64 payload. The header carries the config, the training
# metadata and the parameter count.


@dataclass
class Checkpoint:
    config: ModelConfig
    params: dict[str, np.ndarray]
    metadata: dict = field(default_factory=dict)


def save_checkpoint(model: Model, path, metadata: dict | None = None) -> None:
    path = Path(path)
    header = {
        "config": {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(model.config).items()},
        "metadata": metadata or {},
        "param_count": len(model.params),
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for name, p in model.params.items():
            nb = name.encode("utf-8")
            arr = np.ascontiguousarray(p.data, dtype="<f8")
            fh.write(struct.pack("<Q", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<Q", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            fh.write(arr.tobytes())


def _read_exact(fh, n: int, what: str) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise CheckpointError(f"truncated checkpoint while reading {what}")
    return buf


def load_checkpoint(path) -> Model:
    """Rebuild a model from disk; forward outputs match the saved model bit-for-bit."""
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint file not found: {path}")
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise CheckpointError(f"{path} is not a checkpoint file (bad magic {magic!r})")
        (version,) = struct.unpack("<I", _read_exact(fh, 4, "version"))
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(
                f"unsupported checkpoint version {version} (expected {CHECKPOINT_VERSION})"
            )
        (hlen,) = struct.unpack("<Q", _read_exact(fh, 8, "header length"))
        try:
            header = json.loads(_read_exact(fh, hlen, "header").decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CheckpointError(f"corrupt checkpoint header: {exc}") from exc
        try:
            cfg_raw = dict(header["config"])
            count = int(header["param_count"])
            metadata = header.get("metadata", {})
        except (KeyError, TypeError, ValueError) as exc:
            raise CheckpointError(f"incomplete checkpoint header: {exc}") from exc
        try:
            config = ModelConfig(**cfg_raw)
        except (ConfigError, TypeError) as exc:
            raise CheckpointError(f"checkpoint config rejected: {exc}") from exc

        arrays: dict[str, np.ndarray] = {}
        for _ in range(count):
            (nlen,) = struct.unpack("<Q", _read_exact(fh, 8, "name length"))
            name = _read_exact(fh, nlen, "name").decode("utf-8")
            (rank,) = struct.unpack("<Q", _read_exact(fh, 8, "rank"))
            dims = struct.unpack(f"<{rank}Q", _read_exact(fh, 8 * rank, "dims"))
            nbytes = 8 * int(np.prod(dims)) if dims else 8
            payload = _read_exact(fh, nbytes, f"payload of {name}")
            arrays[name] = np.frombuffer(payload, dtype="<f8").reshape(dims).copy()

    model = build(config)
    if set(arrays) != set(model.params):
        missing = set(model.params) - set(arrays)
        extra = set(arrays) - set(model.params)
        raise CheckpointError(
            f"checkpoint parameters do not match config (missing {sorted(missing)}, "
            f"unexpected {sorted(extra)})"
        )
    for name, arr in arrays.items():
        expected = model.params[name].data.shape
        if arr.shape != expected:
            raise CheckpointError(
                f"parameter {name} has shape {arr.shape}, config expects {expected}"
            )
        model.params[name].data = arr
    model.checkpoint_metadata = metadata  # type: ignore[attr-defined]
    return model
