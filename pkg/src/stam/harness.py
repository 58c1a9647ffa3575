"""Ablation grid: variants x sequence lengths x {clean, noisy} datasets.

Every cell trains its model from scratch on sequences truncated to the last
n frames and reports held-out accuracy. Cells run one seed at a time; with
several seeds per cell the reported accuracy is the median run (lower-middle
for even counts), which stays reproducible from that run's recorded seed.
"""

from __future__ import annotations

import csv
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .data import split_dataset, truncate_sequence
from .errors import ConfigError
from .model import ModelConfig, build
from .train import TrainConfig, evaluate, fit

MODES = ("clean", "noisy")


@dataclass(frozen=True)
class GridConfig:
    variants: tuple[str, ...] = ("cnn", "cnn_spatial", "stam")
    lengths: tuple[int, ...] = (2, 3, 4, 5, 6, 7)
    modes: tuple[str, ...] = MODES
    seeds: tuple[int, ...] = (0, 1, 2)
    epochs: int = 14
    learning_rate: float = 1e-3
    batch_size: int = 8
    optimizer: str = "adam"
    heads: int = 4
    backbone_channels: tuple[int, ...] = (8, 16, 32)

    def __post_init__(self):
        if not self.seeds:
            raise ConfigError("the ablation grid needs at least one seed")
        if not self.variants or not self.lengths or not self.modes:
            raise ConfigError("the ablation grid must be nonempty")
        for mode in self.modes:
            if mode not in MODES:
                raise ConfigError(f"unknown noise mode {mode!r}")


@dataclass
class RunRecord:
    variant: str
    n: int
    noise_mode: str
    seed: int
    accuracy: float
    train_seconds: float


@dataclass
class CellResult:
    variant: str
    n: int
    noise_mode: str
    runs: list[RunRecord]

    @property
    def median_run(self) -> RunRecord:
        ordered = sorted(self.runs, key=lambda r: (r.accuracy, r.seed))
        return ordered[(len(ordered) - 1) // 2]

    @property
    def accuracy(self) -> float:
        return self.median_run.accuracy


@dataclass
class AblationReport:
    cells: list[CellResult]
    failures: list[str] = field(default_factory=list)

    def cell(self, variant: str, n: int, mode: str) -> CellResult:
        for c in self.cells:
            if (c.variant, c.n, c.noise_mode) == (variant, n, mode):
                return c
        raise KeyError(f"no cell for ({variant}, n={n}, {mode})")

    def accuracies(self, variant: str, mode: str) -> list[float]:
        cells = sorted(
            (c for c in self.cells if c.variant == variant and c.noise_mode == mode),
            key=lambda c: c.n,
        )
        return [c.accuracy for c in cells]

    def mean_accuracy(self, variant: str, mode: str) -> float:
        accs = self.accuracies(variant, mode)
        return sum(accs) / len(accs)

    def gap(self, mode: str, better: str = "stam", baseline: str = "cnn") -> float:
        return self.mean_accuracy(better, mode) - self.mean_accuracy(baseline, mode)


# module-level cache so worker processes load each dataset once
_SEQ_CACHE: dict[str, tuple[list, list]] = {}


def _cached_split(root: str):
    if root not in _SEQ_CACHE:
        _SEQ_CACHE[root] = split_dataset(root)
    return _SEQ_CACHE[root]


def run_cell(
    dataset_root,
    variant: str,
    n: int,
    noise_mode: str,
    seed: int,
    grid: GridConfig,
    log_path=None,
) -> RunRecord:
    """Train one grid cell from scratch and evaluate on the held-out split."""
    train_seqs, test_seqs = _cached_split(str(dataset_root))
    train_n = [truncate_sequence(s, n) for s in train_seqs]
    test_n = [truncate_sequence(s, n) for s in test_seqs]
    num_classes = max(s.label for s in train_seqs) + 1
    h, w = train_seqs[0].frames[0].shape

    model = build(
        ModelConfig(
            variant=variant,
            input_hw=(h, w),
            backbone_channels=grid.backbone_channels,
            heads=grid.heads,
            num_classes=num_classes,
            seed=seed,
        )
    )
    tcfg = TrainConfig(
        learning_rate=grid.learning_rate,
        epochs=grid.epochs,
        batch_size=grid.batch_size,
        optimizer=grid.optimizer,
        seed=seed,
    )
    t0 = time.perf_counter()
    fit(model, train_n, tcfg, log_path=log_path)
    elapsed = time.perf_counter() - t0
    return RunRecord(variant, n, noise_mode, seed, evaluate(model, test_n), elapsed)


def _run_spec(spec):
    root, variant, n, mode, seed, grid, log_path = spec
    return run_cell(root, variant, n, mode, seed, grid, log_path)


def run_ablation(
    clean_root,
    noisy_root,
    grid: GridConfig,
    out_dir=None,
    threads: int = 1,
) -> AblationReport:
    """Run the full grid; failed runs are recorded and the rest continue."""
    roots = {"clean": clean_root, "noisy": noisy_root}
    for mode in grid.modes:
        if roots.get(mode) is None:
            raise ConfigError(f"grid includes {mode!r} cells but no {mode} dataset was given")

    log_dir = None
    if out_dir is not None:
        log_dir = Path(out_dir) / "logs"
        log_dir.mkdir(parents=True, exist_ok=True)

    specs = []
    for mode in grid.modes:
        for variant in grid.variants:
            for n in grid.lengths:
                for seed in grid.seeds:
                    log_path = (
                        log_dir / f"{variant}_n{n}_{mode}_seed{seed}.csv" if log_dir else None
                    )
                    specs.append((str(roots[mode]), variant, n, mode, seed, grid, log_path))

    results: dict[tuple, RunRecord] = {}
    failures: list[str] = []
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            for spec, outcome in zip(specs, pool.map(_run_spec_safe, specs)):
                record, err = outcome
                if err is not None:
                    failures.append(err)
                else:
                    results[(record.variant, record.n, record.noise_mode, record.seed)] = record
    else:
        for spec in specs:
            record, err = _run_spec_safe(spec)
            if err is not None:
                failures.append(err)
            else:
                results[(record.variant, record.n, record.noise_mode, record.seed)] = record

    cells: list[CellResult] = []
    for mode in grid.modes:
        for variant in grid.variants:
            for n in grid.lengths:
                runs = [
                    results[key]
                    for seed in grid.seeds
                    if (key := (variant, n, mode, seed)) in results
                ]
                if runs:
                    cells.append(CellResult(variant, n, mode, runs))
    return AblationReport(cells=cells, failures=failures)


def _run_spec_safe(spec):
    try:
        return _run_spec(spec), None
    except Exception:
        root, variant, n, mode, seed, _, _ = spec
        return None, (
            f"cell ({variant}, n={n}, {mode}, seed={seed}) failed:\n{traceback.format_exc()}"
        )


def format_percent(acc: float) -> str:
    return f"{acc * 100:.2f}%"


def render_report(report: AblationReport, out_dir) -> tuple[Path, Path]:
    """Write report.csv (median per cell), runs.csv (every run) and report.txt."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    csv_path = out_dir / "report.csv"
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["variant", "n", "noise_mode", "seed", "accuracy", "train_seconds"])
        for cell in report.cells:
            r = cell.median_run
            writer.writerow([r.variant, r.n, r.noise_mode, r.seed, f"{r.accuracy:.6f}", f"{r.train_seconds:.3f}"])

    with open(out_dir / "runs.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["variant", "n", "noise_mode", "seed", "accuracy", "train_seconds"])
        for cell in report.cells:
            for r in cell.runs:
                writer.writerow([r.variant, r.n, r.noise_mode, r.seed, f"{r.accuracy:.6f}", f"{r.train_seconds:.3f}"])

    txt_path = out_dir / "report.txt"
    modes = sorted({c.noise_mode for c in report.cells}, key=MODES.index)
    with open(txt_path, "w") as fh:
        for mode in modes:
            mode_cells = [c for c in report.cells if c.noise_mode == mode]
            lengths = sorted({c.n for c in mode_cells})
            variants = []
            for c in mode_cells:
                if c.variant not in variants:
                    variants.append(c.variant)
            fh.write(f"[{mode}]\n")
            header = f"{'model':<14}" + "".join(f"{f'n={n}':>10}" for n in lengths)
            fh.write(header + "\n")
            for variant in variants:
                row = f"{variant:<14}"
                for n in lengths:
                    try:
                        row += f"{format_percent(report.cell(variant, n, mode).accuracy):>10}"
                    except KeyError:
                        row += f"{'-':>10}"
                fh.write(row + "\n")
            fh.write("\n")
        if report.failures:
            fh.write(f"{len(report.failures)} failed cell run(s); see stderr/log.\n")
    return csv_path, txt_path
