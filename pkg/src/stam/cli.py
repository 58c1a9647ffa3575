"""Batch command-line entry point.

Every run echoes its fully resolved configuration to out-dir/config.txt so a
result can be reproduced from that file alone. Exit codes: 0 success, 1
operational failure (missing files, diverged training, failed cells), 2
usage error (bad flags or arguments).
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np
from PIL import Image

from . import data as D
from . import harness as H
from .errors import (
    CheckpointError,
    ConfigError,
    DataError,
    DomainError,
    ShapeError,
    TrainingDiverged,
    UsageError,
)
from .metrics import ColourSsimConfig, colour_ssim
from .model import ModelConfig, build, load_checkpoint, save_checkpoint
from .selfcheck import run_selfcheck
from .train import TrainConfig, evaluate, fit
from .viz import (
    average_attention,
    export_temporal_attention,
    grad_cam,
    save_heatmap,
    write_attention_frames,
    write_ranked_csv,
)


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=0, help="master random seed")
    p.add_argument("--out-dir", default="stam-out", help="directory for outputs and config echo")
    p.add_argument("--threads", type=int, default=1, help="parallel cell runs in ablate")


def _echo_config(args: argparse.Namespace) -> Path:
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "config.txt", "w") as fh:
        for key in sorted(vars(args)):
            if key == "func":
                continue
            fh.write(f"{key} = {getattr(args, key)!r}\n")
    return out_dir


def _parse_ints(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(v) for v in text.split(",") if v != "")
    except ValueError as exc:
        raise UsageError(f"expected a comma-separated list of integers, got {text!r}") from exc


def _load_image_chw(path: str) -> np.ndarray:
    p = Path(path)
    if not p.exists():
        raise DataError(f"image file not found: {p}")
    with Image.open(p) as img:
        arr = np.asarray(img, dtype=np.float64) / 255.0
    if arr.ndim == 2:
        return arr[None]
    return arr.transpose(2, 0, 1)


def _find_sequence(root, sequence_id: int) -> D.TactileSequence:
    manifest = D.read_manifest(root)
    for i, row in enumerate(manifest.rows):
        if row.sequence_id == sequence_id:
            return D.load_dataset(root)[i]
    raise UsageError(f"sequence id {sequence_id} not present in {root}")


# --------------------------------------------------------------------------- handlers


def _cmd_gen_data(args) -> int:
    out_dir = _echo_config(args)
    manifest = D.generate_dataset(
        out_dir,
        num_classes=args.classes,
        per_class=args.per_class,
        n=args.frames,
        h=args.height,
        w=args.width,
        noise_mode=args.noise_mode,
        split=(args.train_frac, 1.0 - args.train_frac),
        seed=args.seed,
    )
    print(f"wrote {len(manifest.rows)} sequences under {manifest.root}")
    return 0


def _cmd_train(args) -> int:
    out_dir = _echo_config(args)
    train_seqs, _ = D.split_dataset(args.dataset)
    h, w = train_seqs[0].frames[0].shape
    num_classes = max(s.label for s in train_seqs) + 1
    model = build(
        ModelConfig(
            variant=args.variant,
            input_hw=(h, w),
            backbone_channels=_parse_ints(args.backbone_channels),
            heads=args.heads,
            num_classes=num_classes,
            seed=args.seed,
        )
    )
    tcfg = TrainConfig(
        learning_rate=args.lr,
        epochs=args.epochs,
        batch_size=args.batch_size,
        optimizer=args.optimizer,
        seed=args.seed,
        sequence_length=args.length,
    )
    _, losses = fit(model, train_seqs, tcfg, log_path=out_dir / "train_log.csv")
    ckpt = out_dir / "checkpoint.stam"
    save_checkpoint(
        model,
        ckpt,
        metadata={
            "epoch": tcfg.epochs,
            "loss": losses[-1],
            "seed": tcfg.seed,
            "sequence_length": tcfg.sequence_length,
        },
    )
    print(f"final mean loss {losses[-1]:.6f}; checkpoint at {ckpt}")
    return 0


def _cmd_eval(args) -> int:
    _echo_config(args)
    model = load_checkpoint(args.checkpoint)
    train_seqs, test_seqs = D.split_dataset(args.dataset)
    seqs = {"train": train_seqs, "test": test_seqs, "all": train_seqs + test_seqs}[args.split]
    length = args.length
    if length is None:
        length = getattr(model, "checkpoint_metadata", {}).get("sequence_length")
    if length is not None:
        seqs = [D.truncate_sequence(s, length) for s in seqs]
    acc = evaluate(model, seqs)
    print(f"{acc:.6f}")
    return 0


def _cmd_ablate(args) -> int:
    out_dir = _echo_config(args)
    grid = H.GridConfig(
        variants=tuple(args.variants.split(",")),
        lengths=_parse_ints(args.lengths),
        modes=tuple(args.modes.split(",")),
        seeds=_parse_ints(args.seeds),
        epochs=args.epochs,
        learning_rate=args.lr,
        batch_size=args.batch_size,
        optimizer=args.optimizer,
        heads=args.heads,
        backbone_channels=_parse_ints(args.backbone_channels),
    )
    report = H.run_ablation(
        args.dataset_clean, args.dataset_noisy, grid, out_dir=out_dir, threads=args.threads
    )
    csv_path, txt_path = H.render_report(report, out_dir)
    print(Path(txt_path).read_text())
    print(f"report written to {csv_path} and {txt_path}")
    if report.failures:
        for failure in report.failures:
            print(failure, file=sys.stderr)
        return 1
    return 0


def _cmd_gradcam(args) -> int:
    out_dir = _echo_config(args)
    model = load_checkpoint(args.checkpoint)
    seq = _find_sequence(args.dataset, args.sequence_id)
    target = args.target_class if args.target_class is not None else seq.label
    maps = grad_cam(model, seq, target_class=target)
    for t, sal in enumerate(maps):
        save_heatmap(sal, out_dir / f"cam_frame_{t:03d}.png")
    with open(out_dir / "cam_masses.csv", "w") as fh:
        fh.write("frame,mass\n")
        for t, sal in enumerate(maps):
            fh.write(f"{t},{sal.mass():.8f}\n")
    print(f"wrote {len(maps)} saliency frames under {out_dir}")
    return 0


def _cmd_attnmap(args) -> int:
    out_dir = _echo_config(args)
    model = load_checkpoint(args.checkpoint)
    if model.config.variant != "stam":
        raise ConfigError("temporal attention maps require a stam checkpoint")
    seq = _find_sequence(args.dataset, args.sequence_id)
    _, trace = model.forward(seq, trace=True)
    averaged = average_attention(trace["attention"])
    fh_hw = model.config.feature_hw
    entries = export_temporal_attention(averaged, query=args.query, k=args.topk, frame_hw=fh_hw)
    write_ranked_csv(entries, out_dir / "attention_topk.csv")
    write_attention_frames(averaged, args.query, fh_hw, out_dir)
    for rank, (t, y, x, weight) in enumerate(entries):
        print(f"rank {rank}: frame {t} position ({y},{x}) weight {weight:.6f}")
    return 0


def _cmd_ssim(args) -> int:
    _echo_config(args)
    cfg = ColourSsimConfig(
        c1=args.c1,
        c2=args.c2,
        mode="windowed" if args.window else "global",
        window=args.window or 7,
    )
    value = colour_ssim(_load_image_chw(args.image_a), _load_image_chw(args.image_b), cfg)
    print(f"{value:.6f}")
    return 0


def _cmd_selfcheck(args) -> int:
    _echo_config(args)
    failures = run_selfcheck(gradient_seeds=args.gradient_seeds)
    print("selfcheck: all properties hold" if failures == 0 else f"selfcheck: {failures} failure(s)")
    return 0 if failures == 0 else 1


# --------------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stam",
        description="Tactile texture recognition with spatio-temporal attention.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic tactile dataset")
    p.add_argument("--classes", type=int, default=10)
    p.add_argument("--per-class", type=int, default=30)
    p.add_argument("--frames", type=int, default=7)
    p.add_argument("--height", type=int, default=32)
    p.add_argument("--width", type=int, default=32)
    p.add_argument("--noise-mode", choices=("clean", "noisy"), default="clean")
    p.add_argument("--train-frac", type=float, default=0.8)
    _add_common(p)
    p.set_defaults(func=_cmd_gen_data)

    bench = H.GridConfig()  # published benchmark defaults

    p = sub.add_parser("train", help="train one variant on a dataset's train split")
    p.add_argument("--variant", choices=("cnn", "cnn_spatial", "stam"), required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--epochs", type=int, default=bench.epochs)
    p.add_argument("--lr", type=float, default=bench.learning_rate)
    p.add_argument("--batch-size", type=int, default=bench.batch_size)
    p.add_argument("--optimizer", choices=("sgd", "adam"), default="adam")
    p.add_argument("--length", type=int, default=None, help="truncate to the last n frames")
    p.add_argument("--heads", type=int, default=bench.heads)
    p.add_argument("--backbone-channels", default=",".join(map(str, bench.backbone_channels)))
    _add_common(p)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--split", choices=("train", "test", "all"), default="test")
    p.add_argument("--length", type=int, default=None)
    _add_common(p)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("ablate", help="run the variant x length x noise grid")
    p.add_argument("--dataset-clean", required=True)
    p.add_argument("--dataset-noisy", default=None)
    p.add_argument("--variants", default=",".join(bench.variants))
    p.add_argument("--lengths", default=",".join(map(str, bench.lengths)))
    p.add_argument("--modes", default=",".join(bench.modes))
    p.add_argument("--seeds", default=",".join(map(str, bench.seeds)))
    p.add_argument("--epochs", type=int, default=bench.epochs)
    p.add_argument("--lr", type=float, default=bench.learning_rate)
    p.add_argument("--batch-size", type=int, default=bench.batch_size)
    p.add_argument("--optimizer", choices=("sgd", "adam"), default="adam")
    p.add_argument("--heads", type=int, default=bench.heads)
    p.add_argument("--backbone-channels", default=",".join(map(str, bench.backbone_channels)))
    _add_common(p)
    p.set_defaults(func=_cmd_ablate)

    p = sub.add_parser("gradcam", help="write per-frame saliency heatmaps")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--sequence-id", type=int, required=True)
    p.add_argument("--target-class", type=int, default=None)
    _add_common(p)
    p.set_defaults(func=_cmd_gradcam)

    p = sub.add_parser("attnmap", help="export top-k temporal attention positions")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--sequence-id", type=int, required=True)
    p.add_argument("--query", type=int, default=0)
    p.add_argument("--topk", type=int, default=3)
    _add_common(p)
    p.set_defaults(func=_cmd_attnmap)

    p = sub.add_parser("ssim", help="print the structural similarity of two images")
    p.add_argument("image_a")
    p.add_argument("image_b")
    p.add_argument("--window", type=int, default=None, help="odd window size; default global stats")
    p.add_argument("--c1", type=float, default=1e-4)
    p.add_argument("--c2", type=float, default=9e-4)
    _add_common(p)
    p.set_defaults(func=_cmd_ssim)

    p = sub.add_parser("selfcheck", help="run the gradient and invariant suite")
    p.add_argument("--gradient-seeds", type=int, default=20)
    _add_common(p)
    p.set_defaults(func=_cmd_selfcheck)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse uses 2 for usage errors
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (UsageError, ConfigError, ShapeError, DomainError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (DataError, CheckpointError, TrainingDiverged, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
