"""Spatio-temporal attention for tactile texture recognition.

A minimal reverse-mode autodiff engine, spatial and temporal attention
blocks, three classifier variants, a procedural synthetic tactile dataset,
training, evaluation metrics, attention visualization and an ablation
harness, all runnable from the `stam` command line.
"""

from .attention import (
    AttentionMap,
    SpatialAttentionParams,
    TemporalAttentionHead,
    apply_spatial,
    flatten_sequence,
    multi_head_temporal,
    spatial_attention_map,
    temporal_attention,
    unflatten_sequence,
)
from .data import (
    TactileSequence,
    TextureClass,
    generate_dataset,
    generate_sequence,
    load_dataset,
    split_dataset,
    truncate_sequence,
)
from .errors import (
    CheckpointError,
    ConfigError,
    DataError,
    DomainError,
    ShapeError,
    StamError,
    TrainingDiverged,
    UsageError,
)
from .harness import AblationReport, GridConfig, render_report, run_ablation
from .metrics import ColourSsimConfig, GanScoreBatch, colour_ssim, gan_value
from .model import Checkpoint, Model, ModelConfig, build, load_checkpoint, save_checkpoint
from .tensor import Tensor, backward
from .train import TrainConfig, cross_entropy, evaluate, fit
from .viz import SaliencyMap, export_temporal_attention, grad_cam

__version__ = "0.1.0"
