#!/usr/bin/env python3
"""Train a small model on noisy data and dump its attention visualizations.

Produces per-frame Grad-CAM heatmaps plus the averaged temporal attention
top-k export for a handful of test sequences, mirroring the figures the
recognition model is usually inspected with.
"""

import argparse
import sys
from pathlib import Path

from stam.data import generate_dataset, split_dataset, truncate_sequence
from stam.harness import GridConfig
from stam.model import ModelConfig, build, save_checkpoint
from stam.train import TrainConfig, fit
from stam.viz import (
    average_attention,
    export_temporal_attention,
    grad_cam,
    save_heatmap,
    write_attention_frames,
    write_ranked_csv,
)


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out-dir", default="attention-out")
    parser.add_argument("--seed", type=int, default=42)
    parser.add_argument("--sequences", type=int, default=4)
    parser.add_argument("--topk", type=int, default=3)
    args = parser.parse_args()

    grid = GridConfig()
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    generate_dataset(out / "dataset", num_classes=10, per_class=30, n=7, h=32, w=32,
                     noise_mode="noisy", seed=args.seed)
    train, test = split_dataset(out / "dataset")

    model = build(ModelConfig(variant="stam", input_hw=(32, 32), num_classes=10, seed=0,
                              backbone_channels=grid.backbone_channels, heads=grid.heads))
    print("training ...")
    fit(model, [truncate_sequence(s, 7) for s in train],
        TrainConfig(learning_rate=grid.learning_rate, epochs=grid.epochs,
                    batch_size=grid.batch_size, seed=0))
    save_checkpoint(model, out / "checkpoint.stam")

    fh, fw = model.config.feature_hw
    for i, seq in enumerate(test[: args.sequences]):
        seq_dir = out / f"sequence_{i:02d}"
        seq_dir.mkdir(exist_ok=True)
        for t, frame in enumerate(seq.frames):
            save_heatmap(frame, seq_dir / f"input_{t:03d}.png")
        maps = grad_cam(model, seq, target_class=seq.label)
        for t, sal in enumerate(maps):
            save_heatmap(sal, seq_dir / f"cam_{t:03d}.png")
        _, trace = model.forward(seq, trace=True)
        averaged = average_attention(trace["attention"])
        query = (len(seq.frames) - 1) * fh * fw  # first position of the last frame
        entries = export_temporal_attention(averaged, query=query, k=args.topk,
                                            frame_hw=(fh, fw))
        write_ranked_csv(entries, seq_dir / "attention_topk.csv")
        write_attention_frames(averaged, query, (fh, fw), seq_dir)
        print(f"sequence {i}: label {seq.label}, prefix {seq.noisy_prefix}, "
              f"top sources {[(t, y, x) for t, y, x, _ in entries]}")
    print(f"outputs under {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
