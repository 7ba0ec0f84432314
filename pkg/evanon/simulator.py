"""
Event Anonymization - Event Simulator and Toy ReId Corpus

This module converts intensity-frame sequences into event streams with a
contrast-threshold model and synthesizes a small labeled person-ReId corpus.

Classes:
- FrameSequence - Frames + timestamps of one identity seen by one camera
- ToyCorpus - Train/test splits with disjoint identity rosters

Functions:
- simulate_log_frames() - Threshold crossings of linearly interpolated log-intensity
- simulate_events() - Events of a FrameSequence (L = log(I + eps))
- generate_toy_corpus() - Deterministic sprite-on-background corpus
- write_corpus() / read_corpus() - Directory tree + manifest.json
- write_sequence_events() - Simulate and store events.csv for every sequence
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np

from .errors import DataError
from .events import EventStream, GrayImage, read_gray, write_events, write_gray

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

LOG_EPS = 1e-3
DEFAULT_CONTRAST_THRESHOLD = 0.2
FRAME_INTERVAL_US = 40_000
SPRITE_HEIGHT = 32
SPRITE_WIDTH = 16
MANIFEST_NAME = "manifest.json"
EVENTS_NAME = "events.csv"
TIMESTAMPS_NAME = "timestamps.txt"
SPLITS = ("train", "test")


@dataclass(frozen=True, eq=False)
class FrameSequence:
    frames: List[GrayImage]
    timestamps: np.ndarray
    camera: str
    identity: int
    sequence: str = "s00"

    def __post_init__(self) -> None:
        ts = np.asarray(self.timestamps, dtype=np.int64).reshape(-1)
        object.__setattr__(self, "timestamps", ts)
        if len(self.frames) != ts.shape[0]:
            raise DataError(f"{len(self.frames)} frames but {ts.shape[0]} timestamps")
        if self.frames:
            shape = self.frames[0].pixels.shape
            if any(f.pixels.shape != shape for f in self.frames):
                raise DataError("all frames of a sequence must share H x W")
        if np.any(np.diff(ts) <= 0):
            raise DataError("frame timestamps must be strictly increasing")

    @property
    def height(self) -> int:
        return self.frames[0].height

    @property
    def width(self) -> int:
        return self.frames[0].width

    def key(self) -> str:
        return f"id{self.identity:03d}/{self.camera}/{self.sequence}"


@dataclass(frozen=True, eq=False)
class ToyCorpus:
    train: List[FrameSequence]
    test: List[FrameSequence]
    cameras: List[str]
    height: int
    width: int
    seed: Optional[int] = None
    metadata: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        overlap = set(self.train_ids) & set(self.test_ids)
        if overlap:
            raise DataError(f"train and test identities overlap: {sorted(overlap)}")

    @property
    def train_ids(self) -> List[int]:
        return sorted({s.identity for s in self.train})

    @property
    def test_ids(self) -> List[int]:
        return sorted({s.identity for s in self.test})

    def split(self, name: str) -> List[FrameSequence]:
        if name not in SPLITS:
            raise ValueError(f"unknown split '{name}'")
        return self.train if name == "train" else self.test


# Quotients this close to an integer count as lying on that level.
LEVEL_TOLERANCE = 1e-9


def _level_quotient(values: np.ndarray, C: float) -> np.ndarray:
    q = values / C
    nearest = np.rint(q)
    return np.where(np.abs(q - nearest) <= LEVEL_TOLERANCE, nearest, q)


def simulate_log_frames(
    log_frames: np.ndarray, timestamps: Sequence[int], C: float
) -> EventStream:
    """Emit one event per multiple of C crossed between consecutive log frames.

    Log-intensity is linearly interpolated in time between frames; a level
    equal to the starting value is not a crossing, one equal to the end
    value is. Output is sorted by (t, y, x).
    """
    if not C > 0:
        raise ValueError(f"contrast threshold must be > 0, got {C}")
    log_frames = np.asarray(log_frames, dtype=np.float64)
    if log_frames.ndim != 3:
        raise DataError(f"log frames must be F x H x W, got {log_frames.shape}")
    n_frames, height, width = log_frames.shape
    ts = np.asarray(timestamps, dtype=np.int64)
    if n_frames < 2:
        return EventStream(width, height)

    chunks_t, chunks_i, chunks_p = [], [], []
    for k in range(n_frames - 1):
        la = log_frames[k].reshape(-1)
        lb = log_frames[k + 1].reshape(-1)
        ta, tb = float(ts[k]), float(ts[k + 1])
        rising = lb > la
        falling = lb < la

        qa, qb = _level_quotient(la, C), _level_quotient(lb, C)
        start = np.where(rising, np.floor(qa) + 1, np.ceil(qa) - 1)
        stop = np.where(rising, np.floor(qb), np.ceil(qb))
        count = np.zeros(la.shape, dtype=np.int64)
        count[rising] = np.maximum(0, stop[rising] - start[rising] + 1).astype(np.int64)
        count[falling] = np.maximum(0, start[falling] - stop[falling] + 1).astype(np.int64)
        total = int(count.sum())
        if total == 0:
            continue

        pixel = np.repeat(np.arange(la.shape[0]), count)
        offset = np.arange(total) - np.repeat(np.cumsum(count) - count, count)
        sign = np.where(rising, 1, -1)[pixel]
        level = (start[pixel] + sign * offset) * C
        frac = (level - la[pixel]) / (lb[pixel] - la[pixel])
        t = np.clip(np.rint(ta + frac * (tb - ta)), ta, tb).astype(np.int64)
        chunks_t.append(t)
        chunks_i.append(pixel)
        chunks_p.append(sign)

    if not chunks_t:
        return EventStream(width, height)
    t = np.concatenate(chunks_t)
    pixel = np.concatenate(chunks_i)
    p = np.concatenate(chunks_p)
    y, x = np.divmod(pixel, width)
    order = np.lexsort((x, y, t))
    return EventStream(width, height, t[order], x[order], y[order], p[order])


def simulate_events(seq: FrameSequence, C: float = DEFAULT_CONTRAST_THRESHOLD) -> EventStream:
    """Contrast-threshold events of a frame sequence (empty for a single frame)."""
    if not C > 0:
        raise ValueError(f"contrast threshold must be > 0, got {C}")
    if len(seq.frames) < 2:
        if seq.frames:
            return EventStream(seq.width, seq.height)
        raise DataError("cannot simulate an empty frame sequence")
    log_frames = np.log(np.stack([f.pixels for f in seq.frames]) + LOG_EPS)
    return simulate_log_frames(log_frames, seq.timestamps, C)


def _identity_texture(seed: int, identity: int) -> np.ndarray:
    """Per-identity sprite: head, 4x2 torso cells, 2 leg cells."""
    rng = np.random.default_rng([seed, 1, identity])
    sprite = np.zeros((SPRITE_HEIGHT, SPRITE_WIDTH), dtype=np.float64)
    sprite[:8, 4:12] = rng.uniform(0.55, 0.85)
    torso = rng.uniform(0.1, 0.95, size=(4, 2))
    sprite[8:24, :] = np.kron(torso, np.ones((4, 8)))
    stripe = rng.integers(2, 5)
    sprite[8:24:stripe, :] *= rng.uniform(0.6, 1.0)
    legs = rng.uniform(0.1, 0.7, size=2)
    sprite[24:, 2:7] = legs[0]
    sprite[24:, 9:14] = legs[1]
    mask = sprite > 0
    return np.where(mask, sprite, np.nan)


def _camera_setup(seed: int, camera: int, height: int, width: int) -> Dict[str, Any]:
    rng = np.random.default_rng([seed, 2, camera])
    rows = np.linspace(0.0, 1.0, height)[:, None]
    base = rng.uniform(0.25, 0.45)
    slope = rng.uniform(-0.1, 0.1)
    background = np.broadcast_to(base + slope * rows, (height, width)).copy()
    return {
        "background": background,
        "gain": float(rng.uniform(0.8, 1.2)),
        "direction": 1 if camera % 2 == 0 else -1,
        "row": int(rng.integers(0, height - SPRITE_HEIGHT + 1)),
    }


def _render_sequence(
    texture: np.ndarray,
    camera: Dict[str, Any],
    frames_per_seq: int,
    height: int,
    width: int,
    row_jitter: int,
) -> List[GrayImage]:
    travel = width - SPRITE_WIDTH
    speed = max(1, min(3, travel // max(frames_per_seq - 1, 1)))
    start = 0 if camera["direction"] > 0 else travel
    row = int(np.clip(camera["row"] + row_jitter, 0, height - SPRITE_HEIGHT))
    frames = []
    for i in range(frames_per_seq):
        col = int(np.clip(start + camera["direction"] * speed * i, 0, travel))
        canvas = camera["background"].copy()
        patch = canvas[row : row + SPRITE_HEIGHT, col : col + SPRITE_WIDTH]
        canvas[row : row + SPRITE_HEIGHT, col : col + SPRITE_WIDTH] = np.where(
            np.isnan(texture), patch, texture
        )
        frames.append(GrayImage(np.clip(camera["gain"] * canvas, 0.0, 1.0)))
    return frames


def generate_toy_corpus(
    num_ids: int,
    cams: int,
    frames_per_seq: int = 8,
    height: int = 48,
    width: int = 64,
    seed: int = 7,
    num_test_ids: Optional[int] = None,
    seqs_per_cam: int = 1,
    frame_interval_us: int = FRAME_INTERVAL_US,
) -> ToyCorpus:
    """Synthesize a toy ReId corpus; identical arguments give identical corpora.

    The last `num_test_ids` identities (default num_ids // 3) form the test
    split. Each (identity, camera, sequence) yields one FrameSequence.

    Raises:
        ValueError: If num_ids < 4, cams < 2, or the geometry cannot hold
            the 32 x 16 sprite
    """
    if num_ids < 4:
        raise ValueError(f"num_ids must be >= 4, got {num_ids}")
    if cams < 2:
        raise ValueError(f"cams must be >= 2, got {cams}")
    if frames_per_seq < 2:
        raise ValueError(f"frames_per_seq must be >= 2, got {frames_per_seq}")
    if seqs_per_cam < 1:
        raise ValueError(f"seqs_per_cam must be >= 1, got {seqs_per_cam}")
    if height < SPRITE_HEIGHT or width < SPRITE_WIDTH + 2:
        raise ValueError(
            f"geometry {height}x{width} too small for a {SPRITE_HEIGHT}x{SPRITE_WIDTH} sprite"
        )
    if num_test_ids is None:
        num_test_ids = num_ids // 3
    if not 1 <= num_test_ids < num_ids:
        raise ValueError(f"num_test_ids must be in [1, {num_ids}), got {num_test_ids}")

    timestamps = np.arange(frames_per_seq, dtype=np.int64) * int(frame_interval_us)
    cameras = [f"c{c}" for c in range(cams)]
    setups = [_camera_setup(seed, c, height, width) for c in range(cams)]
    first_test = num_ids - num_test_ids
    train: List[FrameSequence] = []
    test: List[FrameSequence] = []
    for identity in range(num_ids):
        texture = _identity_texture(seed, identity)
        jitter_rng = np.random.default_rng([seed, 3, identity])
        for c, setup in enumerate(setups):
            for s in range(seqs_per_cam):
                jitter = int(jitter_rng.integers(-2, 3))
                frames = _render_sequence(texture, setup, frames_per_seq, height, width, jitter)
                seq = FrameSequence(frames, timestamps, cameras[c], identity, f"s{s:02d}")
                (test if identity >= first_test else train).append(seq)

    logger.info(
        f"Generated toy corpus: {num_ids - num_test_ids} train ids, {num_test_ids} test ids, "
        f"{cams} cameras, {len(train) + len(test)} sequences"
    )
    return ToyCorpus(
        train=train,
        test=test,
        cameras=cameras,
        height=height,
        width=width,
        seed=seed,
        metadata={"frames_per_seq": frames_per_seq, "frame_interval_us": int(frame_interval_us)},
    )


def _sequence_dir(root: Path, split: str, seq: FrameSequence) -> Path:
    return root / split / f"id{seq.identity:03d}" / seq.camera / seq.sequence


def write_corpus(corpus: ToyCorpus, root: PathLike) -> Path:
    """Write frames, timestamps and manifest.json under `root`."""
    root = Path(root)
    entries: Dict[str, List[Dict[str, Any]]] = {}
    for split in SPLITS:
        entries[split] = []
        for seq in corpus.split(split):
            seq_dir = _sequence_dir(root, split, seq)
            seq_dir.mkdir(parents=True, exist_ok=True)
            for i, frame in enumerate(seq.frames):
                write_gray(frame, seq_dir / f"frame_{i:04d}.pgm")
            (seq_dir / TIMESTAMPS_NAME).write_text(
                "".join(f"{int(t)}\n" for t in seq.timestamps), encoding="ascii"
            )
            entries[split].append(
                {
                    "identity": seq.identity,
                    "camera": seq.camera,
                    "sequence": seq.sequence,
                    "path": seq_dir.relative_to(root).as_posix(),
                    "frames": len(seq.frames),
                }
            )
    manifest = {
        "format": "evanon-corpus-1",
        "height": corpus.height,
        "width": corpus.width,
        "seed": corpus.seed,
        "cameras": corpus.cameras,
        "train_ids": corpus.train_ids,
        "test_ids": corpus.test_ids,
        "metadata": corpus.metadata,
        "splits": entries,
    }
    (root / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    logger.info(f"Wrote corpus with {sum(len(v) for v in entries.values())} sequences to {root}")
    return root


def load_manifest(root: PathLike) -> Dict[str, Any]:
    path = Path(root) / MANIFEST_NAME
    if not path.is_file():
        raise DataError(f"corpus manifest not found: {path}")
    try:
        manifest = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise DataError(f"corpus manifest {path} is not valid JSON: {e}") from e
    for key in ("height", "width", "cameras", "splits"):
        if key not in manifest:
            raise DataError(f"corpus manifest {path} lacks '{key}'")
    return manifest


def _read_sequence(root: Path, entry: Dict[str, Any]) -> FrameSequence:
    seq_dir = root / entry["path"]
    ts_path = seq_dir / TIMESTAMPS_NAME
    if not ts_path.is_file():
        raise DataError(f"missing {ts_path}")
    timestamps = [int(line) for line in ts_path.read_text(encoding="ascii").split()]
    frames = [read_gray(seq_dir / f"frame_{i:04d}.pgm") for i in range(len(timestamps))]
    return FrameSequence(frames, timestamps, entry["camera"], int(entry["identity"]), entry["sequence"])


def read_corpus(root: PathLike) -> ToyCorpus:
    root = Path(root)
    manifest = load_manifest(root)
    splits = {
        split: [_read_sequence(root, e) for e in manifest["splits"].get(split, [])]
        for split in SPLITS
    }
    return ToyCorpus(
        train=splits["train"],
        test=splits["test"],
        cameras=list(manifest["cameras"]),
        height=int(manifest["height"]),
        width=int(manifest["width"]),
        seed=manifest.get("seed"),
        metadata=dict(manifest.get("metadata", {})),
    )


def write_sequence_events(root: PathLike, C: float = DEFAULT_CONTRAST_THRESHOLD) -> int:
    """Simulate every sequence of a stored corpus into its events.csv.

    Returns the total number of events written. The contrast threshold is
    recorded in the manifest.
    """
    root = Path(root)
    manifest = load_manifest(root)
    total = 0
    for split in SPLITS:
        for entry in manifest["splits"].get(split, []):
            seq = _read_sequence(root, entry)
            stream = simulate_events(seq, C)
            write_events(stream, root / entry["path"] / EVENTS_NAME)
            total += len(stream)
    manifest["contrast_threshold"] = C
    (root / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    logger.info(f"Simulated {total} events at C={C} under {root}")
    return total
