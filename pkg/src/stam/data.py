"""Procedural synthetic tactile sequences and dataset file io.

Each texture class is a crossed sinusoidal weave (two gratings at a class
orientation with class periods) scaled by a class amplitude. An interaction
renders it into frames the way an elastomer-camera sensor would see it:
pressing grows a circular contact patch, slipping translates the weave with
wraparound under a fixed circular contact, twisting rotates it under the
same patch. Pre-contact frames are flat gel plus faint sensor noise.

On disk a dataset is root/manifest.csv plus one directory of 8-bit grayscale
PNG frames per sequence; splits.csv records the train/test assignment.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ConfigError, DataError, UsageError

INTERACTIONS = ("press", "slip", "twist")

# flat-gel appearance of frames captured before contact
PRE_CONTACT_MEAN = 0.5
PRE_CONTACT_STD = 0.02

# every interaction presses the same circular patch so contact area carries
# no class or interaction signal once the patch has settled
CONTACT_RADIUS_FRAC = 0.46

MANIFEST_COLUMNS = ("sequence_id", "label", "interaction", "n_frames", "noisy_prefix", "path")


@dataclass(frozen=True)
class TextureClass:
    id: int
    weave_period: tuple[float, float]  # pixels along the two grating axes
    orientation: float  # radians
    amplitude: float  # peak-to-mid contrast, in (0, 1]
    micro_noise: float  # per-pixel sensor noise std

    def __post_init__(self):
        px, py = self.weave_period
        if px < 2 or py < 2:
            raise ConfigError(f"weave periods must be >= 2 px, got {self.weave_period}")
        if not 0 < self.amplitude <= 1:
            raise ConfigError(f"amplitude must be in (0,1], got {self.amplitude}")
        if self.micro_noise < 0:
            raise ConfigError(f"micro_noise must be >= 0, got {self.micro_noise}")


@dataclass
class TactileSequence:
    frames: list[np.ndarray]  # n arrays (h,w), values in [0,1]
    label: int
    interaction: str
    noisy_prefix: int = 0

    def __post_init__(self):
        if not self.frames:
            raise ConfigError("a sequence needs at least one frame")
        if not 0 <= self.noisy_prefix < len(self.frames):
            raise ConfigError(
                f"noisy_prefix {self.noisy_prefix} out of range for {len(self.frames)} frames"
            )

    def __len__(self) -> int:
        return len(self.frames)


@dataclass(frozen=True)
class ManifestRow:
    sequence_id: int
    label: int
    interaction: str
    n_frames: int
    noisy_prefix: int
    path: str


@dataclass
class DatasetManifest:
    root: Path
    rows: list[ManifestRow]


def derive_class_params(class_id: int, num_classes: int, seed: int) -> TextureClass:
    """Deterministic class parameters.

    Classes come in pairs sharing orientation and periods but differing in
    contact amplitude, so recognizing a texture takes both its weave
    geometry and how strongly it imprints; orientations spread over [0, pi)
    across pairs.
    """
    if not 0 <= class_id < num_classes:
        raise ConfigError(f"class id {class_id} out of range for {num_classes} classes")
    rng = np.random.default_rng([seed, 0xC1A55, class_id])
    pair = class_id // 2
    n_pairs = (num_classes + 1) // 2
    orientation = np.pi * pair / n_pairs + rng.uniform(-0.04, 0.04)
    px = 3.0 + (pair % 3) + rng.uniform(-0.2, 0.2)
    py = 4.0 + ((pair // 3) % 3) + rng.uniform(-0.2, 0.2)
    amplitude = (0.62 if class_id % 2 == 0 else 0.78) + rng.uniform(-0.01, 0.01)
    return TextureClass(
        id=class_id,
        weave_period=(px, py),
        orientation=float(orientation),
        amplitude=float(amplitude),
        micro_noise=0.07,
    )


def weave_texture(
    cls: TextureClass, h: int, w: int, phase: tuple[float, float] = (0.0, 0.0)
) -> np.ndarray:
    """Crossed-grating base texture in [0,1], mid-gray at zero amplitude."""
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    ct, st = np.cos(cls.orientation), np.sin(cls.orientation)
    u = ct * xs + st * ys + phase[0]
    v = -st * xs + ct * ys + phase[1]
    px, py = cls.weave_period
    g = 0.5 * (np.sin(2 * np.pi * u / px) + np.sin(2 * np.pi * v / py))
    return 0.5 + 0.5 * cls.amplitude * g


def contact_mask(h: int, w: int, radius: float, center: tuple[float, float] | None = None) -> np.ndarray:
    """Soft-edged disc in [0,1]; radius 0 gives an all-zero mask."""
    if radius <= 0:
        return np.zeros((h, w))
    cy, cx = center if center is not None else ((h - 1) / 2.0, (w - 1) / 2.0)
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    dist = np.hypot(ys - cy, xs - cx)
    return np.clip((radius - dist) / 1.5 + 0.5, 0.0, 1.0)


def _rotate_bilinear(img: np.ndarray, angle: float) -> np.ndarray:
    """Rotate about the image center, sampling bilinearly with wraparound."""
    h, w = img.shape
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    ca, sa = np.cos(angle), np.sin(angle)
    # inverse map: source coordinates for each output pixel
    sy = sa * (xs - cx) + ca * (ys - cy) + cy
    sx = ca * (xs - cx) - sa * (ys - cy) + cx
    y0 = np.floor(sy).astype(int)
    x0 = np.floor(sx).astype(int)
    fy, fx = sy - y0, sx - x0
    y0m, y1m = y0 % h, (y0 + 1) % h
    x0m, x1m = x0 % w, (x0 + 1) % w
    return (
        img[y0m, x0m] * (1 - fy) * (1 - fx)
        + img[y0m, x1m] * (1 - fy) * fx
        + img[y1m, x0m] * fy * (1 - fx)
        + img[y1m, x1m] * fy * fx
    )


def render_contact_frame(
    texture: np.ndarray, mask: np.ndarray, noise: np.ndarray | None = None
) -> np.ndarray:
    """Blend a texture into flat gel through a contact mask, then clamp."""
    frame = PRE_CONTACT_MEAN + mask * (texture - PRE_CONTACT_MEAN)
    if noise is not None:
        frame = frame + noise
    return np.clip(frame, 0.0, 1.0)


def generate_sequence(
    cls: TextureClass,
    interaction: str,
    n: int,
    h: int,
    w: int,
    noisy_prefix: int = 0,
    seed=0,
) -> TactileSequence:
    """Render one seeded interaction with a texture class.

    The first `noisy_prefix` frames are flat gel with faint noise; the
    remaining frames carry the texture under the interaction's motion model.
    Deterministic in all arguments.
    """
    if n < 1:
        raise ConfigError(f"need at least one frame, got n={n}")
    if not 0 <= noisy_prefix < n:
        raise ConfigError(f"noisy_prefix {noisy_prefix} out of range for n={n}")
    if h < 4 or w < 4:
        raise ConfigError(f"frames must be at least 4x4, got {h}x{w}")
    if interaction not in INTERACTIONS:
        raise ConfigError(f"unknown interaction {interaction!r}")

    rng = np.random.default_rng(seed)
    phase = tuple(rng.uniform(-0.6, 0.6, size=2))
    texture = weave_texture(cls, h, w, phase=phase)

    r_full = CONTACT_RADIUS_FRAC * min(h, w)
    disc = contact_mask(h, w, radius=r_full)
    if interaction == "press":
        center = ((h - 1) / 2.0 + rng.uniform(-2, 2), (w - 1) / 2.0 + rng.uniform(-2, 2))
    elif interaction == "slip":
        step = int(rng.integers(2, 4)) * (1 if rng.integers(0, 2) else -1)
        axis = int(rng.integers(0, 2))
    else:  # twist
        # fixed total rotation so truncated recordings are no easier
        total_twist = float(rng.uniform(0.25, 0.35)) * (1 if rng.integers(0, 2) else -1)

    frames: list[np.ndarray] = []
    for _ in range(noisy_prefix):
        flat = PRE_CONTACT_MEAN + rng.normal(0.0, PRE_CONTACT_STD, size=(h, w))
        frames.append(np.clip(flat, 0.0, 1.0))

    n_contact = n - noisy_prefix
    for t in range(n_contact):
        noise = rng.normal(0.0, cls.micro_noise, size=(h, w)) if cls.micro_noise else None
        if interaction == "press":
            # the patch grows radially, saturating on the second contact frame
            radius = r_full * min(1.0, 0.8 + 0.2 * t)
            frames.append(render_contact_frame(texture, contact_mask(h, w, radius, center), noise))
        elif interaction == "slip":
            frames.append(render_contact_frame(np.roll(texture, t * step, axis=axis), disc, noise))
        else:
            angle = total_twist * (t / max(1, n_contact - 1))
            frames.append(render_contact_frame(_rotate_bilinear(texture, angle), disc, noise))

    return TactileSequence(
        frames=frames, label=cls.id, interaction=interaction, noisy_prefix=noisy_prefix
    )


def truncate_sequence(seq: TactileSequence, n: int) -> TactileSequence:
    """Keep the last n frames; the remaining noisy prefix shrinks accordingly."""
    if not 1 <= n <= len(seq.frames):
        raise UsageError(f"cannot truncate a {len(seq.frames)}-frame sequence to n={n}")
    dropped = len(seq.frames) - n
    return TactileSequence(
        frames=seq.frames[-n:],
        label=seq.label,
        interaction=seq.interaction,
        noisy_prefix=max(0, seq.noisy_prefix - dropped),
    )


def _save_frame(path: Path, frame: np.ndarray) -> None:
    img = np.clip(np.round(frame * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(img, mode="L").save(path)


def generate_dataset(
    root,
    num_classes: int,
    per_class: int,
    n: int,
    h: int,
    w: int,
    noise_mode: str = "clean",
    split: tuple[float, float] = (0.8, 0.2),
    seed: int = 0,
) -> DatasetManifest:
    """Write a seeded dataset to disk and return its manifest.

    Interactions cycle press/slip/twist within each class. Noisy mode draws a
    per-sequence pre-contact prefix uniformly from {1, 2}; clean mode has
    none. The split is stratified: the first round(per_class*train) sequences
    of each class are train, the rest test.
    """
    if num_classes < 2:
        raise ConfigError(f"need at least 2 classes, got {num_classes}")
    if per_class < 1:
        raise ConfigError(f"need at least one sequence per class, got {per_class}")
    if noise_mode not in ("clean", "noisy"):
        raise ConfigError(f"unknown noise mode {noise_mode!r}")
    if abs(sum(split) - 1.0) > 1e-9:
        raise ConfigError(f"split fractions must sum to 1, got {split}")

    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    classes = [derive_class_params(c, num_classes, seed) for c in range(num_classes)]
    n_train = int(round(per_class * split[0]))

    rows: list[ManifestRow] = []
    split_rows: list[tuple[int, str]] = []
    for cls in classes:
        for j in range(per_class):
            sid = cls.id * per_class + j
            interaction = INTERACTIONS[j % len(INTERACTIONS)]
            if noise_mode == "noisy":
                prefix = int(np.random.default_rng([seed, 0x9015E, sid]).integers(1, 3))
            else:
                prefix = 0
            seq = generate_sequence(
                cls, interaction, n, h, w, noisy_prefix=prefix, seed=[seed, 0xDA7A, sid]
            )
            rel = f"seq_{sid:04d}"
            seq_dir = root / rel
            seq_dir.mkdir(exist_ok=True)
            for t, frame in enumerate(seq.frames):
                _save_frame(seq_dir / f"frame_{t:03d}.png", frame)
            rows.append(ManifestRow(sid, cls.id, interaction, n, prefix, rel))
            split_rows.append((sid, "train" if j < n_train else "test"))

    with open(root / "manifest.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(MANIFEST_COLUMNS)
        for r in rows:
            writer.writerow(
                [r.sequence_id, r.label, r.interaction, r.n_frames, r.noisy_prefix, r.path]
            )
    with open(root / "splits.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sequence_id", "split"])
        writer.writerows(split_rows)
    return DatasetManifest(root=root, rows=rows)


def read_manifest(root) -> DatasetManifest:
    root = Path(root)
    path = root / "manifest.csv"
    if not path.exists():
        raise DataError(f"manifest not found: {path}")
    rows: list[ManifestRow] = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(MANIFEST_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise DataError(f"manifest {path} lacks columns {sorted(missing)}")
        for rec in reader:
            rows.append(
                ManifestRow(
                    sequence_id=int(rec["sequence_id"]),
                    label=int(rec["label"]),
                    interaction=rec["interaction"],
                    n_frames=int(rec["n_frames"]),
                    noisy_prefix=int(rec["noisy_prefix"]),
                    path=rec["path"],
                )
            )
    if not rows:
        raise DataError(f"manifest {path} has no rows")
    labels = sorted({r.label for r in rows})
    if labels != list(range(len(labels))):
        raise DataError(f"labels are not a contiguous 0..K-1 set: {labels}")
    return DatasetManifest(root=root, rows=rows)


def load_dataset(root) -> list[TactileSequence]:
    """Load every sequence in manifest order, pixels decoded to f64 in [0,1]."""
    manifest = read_manifest(root)
    sequences = []
    for row in manifest.rows:
        frames = []
        for t in range(row.n_frames):
            fpath = manifest.root / row.path / f"frame_{t:03d}.png"
            if not fpath.exists():
                raise DataError(f"missing frame file: {fpath}")
            try:
                with Image.open(fpath) as img:
                    arr = np.asarray(img.convert("L"), dtype=np.float64) / 255.0
            except OSError as exc:
                raise DataError(f"corrupt image file {fpath}: {exc}") from exc
            frames.append(arr)
        sequences.append(
            TactileSequence(
                frames=frames,
                label=row.label,
                interaction=row.interaction,
                noisy_prefix=row.noisy_prefix,
            )
        )
    return sequences


def load_splits(root) -> dict[int, str]:
    path = Path(root) / "splits.csv"
    if not path.exists():
        raise DataError(f"splits file not found: {path}")
    out: dict[int, str] = {}
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            out[int(rec["sequence_id"])] = rec["split"]
    if not out:
        raise DataError(f"splits file {path} is empty")
    return out


def split_dataset(root) -> tuple[list[TactileSequence], list[TactileSequence]]:
    """Load a dataset and partition it by the recorded train/test split."""
    manifest = read_manifest(root)
    splits = load_splits(root)
    sequences = load_dataset(root)
    train, test = [], []
    for row, seq in zip(manifest.rows, sequences):
        part = splits.get(row.sequence_id)
        if part == "train":
            train.append(seq)
        elif part == "test":
            test.append(seq)
        else:
            raise DataError(f"sequence {row.sequence_id} has no split assignment")
    return train, test
