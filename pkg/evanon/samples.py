"""
Event Anonymization - Training Windows

This module turns a corpus of frame sequences into aligned training samples:
one normalized voxel grid per frame interval paired with the frame closing
that interval, plus identity, camera and sequence labels. It also provides
the identity-balanced (P identities x K samples) batch sampler.

Classes:
- WindowSet - Stacked voxels, frames and labels of one split
- CorpusWindows - Train and test WindowSets plus the training-id roster

Functions:
- sequence_windows() - (voxel, frame) pairs of one sequence
- build_windows() - WindowSet of a list of sequences
- prepare_windows() - Both splits of a corpus, reading events.csv when present
- class_labels() - Identity -> contiguous class index
- pk_batches() - Identity-balanced batch indices for one epoch
- corpus_summary() - Identity/camera/sequence/window counts
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import DataError
from .events import EventStream, GrayImage, VoxelGrid, build_voxel_grid, normalize_voxel, read_events
from .simulator import (
    DEFAULT_CONTRAST_THRESHOLD,
    EVENTS_NAME,
    FrameSequence,
    ToyCorpus,
    simulate_events,
)

logger = logging.getLogger(__name__)

StreamTransform = Callable[[EventStream], EventStream]


@dataclass(frozen=True, eq=False)
class WindowSet:
    voxels: np.ndarray  # N x B x H x W, each window normalized to [-1, 1]
    frames: np.ndarray  # N x 1 x H x W
    identities: np.ndarray
    cameras: np.ndarray
    sequences: np.ndarray

    def __post_init__(self) -> None:
        n = self.voxels.shape[0]
        if self.voxels.ndim != 4 or self.frames.ndim != 4:
            raise DataError("window voxels and frames must be 4-D arrays")
        for name in ("frames", "identities", "cameras", "sequences"):
            if getattr(self, name).shape[0] != n:
                raise DataError(f"window {name} length differs from {n} voxels")

    def __len__(self) -> int:
        return int(self.voxels.shape[0])

    @property
    def bins(self) -> int:
        return int(self.voxels.shape[1])

    def subset(self, index: Union[np.ndarray, Sequence[int]]) -> "WindowSet":
        index = np.asarray(index)
        return WindowSet(
            self.voxels[index],
            self.frames[index],
            self.identities[index],
            self.cameras[index],
            self.sequences[index],
        )

    def with_voxels(self, voxels: np.ndarray) -> "WindowSet":
        return WindowSet(voxels, self.frames, self.identities, self.cameras, self.sequences)


@dataclass(frozen=True, eq=False)
class CorpusWindows:
    train: WindowSet
    test: WindowSet
    train_ids: List[int]


def sequence_windows(
    seq: FrameSequence, stream: EventStream, bins: int, window_us: int
) -> List[Tuple[VoxelGrid, GrayImage]]:
    """One voxel grid of [t_i - T, t_i) per frame i >= 1, paired with frame i.

    An event exactly at t_i belongs to the next window; the window of the
    last frame is closed.
    """
    stream.validate()
    last = len(seq.frames) - 1
    pairs = []
    for i in range(1, last + 1):
        t_end = int(seq.timestamps[i])
        window = stream
        if i < last:
            window = stream.select(slice(0, int(np.searchsorted(stream.t, t_end, side="left"))))
        grid = build_voxel_grid(window, t_end - window_us, window_us, bins)
        pairs.append((normalize_voxel(grid), seq.frames[i]))
    return pairs


def build_windows(
    sequences: Sequence[FrameSequence],
    bins: int = 5,
    window_us: int = 40_000,
    contrast_threshold: float = DEFAULT_CONTRAST_THRESHOLD,
    streams: Optional[Dict[str, EventStream]] = None,
    transform: Optional[StreamTransform] = None,
) -> WindowSet:
    """Stack the windows of all sequences.

    `streams` maps sequence keys to precomputed event streams; missing ones
    are simulated at `contrast_threshold`. `transform` (for example an
    encryption baseline) is applied to each sequence stream before voxelization.
    """
    if not sequences:
        raise DataError("cannot build windows from an empty split")
    voxels, frames, identities, cameras, keys = [], [], [], [], []
    for seq in sequences:
        stream = (streams or {}).get(seq.key())
        if stream is None:
            stream = simulate_events(seq, contrast_threshold)
        if transform is not None:
            stream = transform(stream)
        for grid, frame in sequence_windows(seq, stream, bins, window_us):
            voxels.append(grid.data)
            frames.append(frame.pixels[None])
            identities.append(seq.identity)
            cameras.append(seq.camera)
            keys.append(seq.key())
    if not voxels:
        raise DataError("sequences need at least two frames to form a window")
    return WindowSet(
        np.stack(voxels),
        np.stack(frames),
        np.asarray(identities, dtype=np.int64),
        np.asarray(cameras),
        np.asarray(keys),
    )


def load_streams(root: Union[str, Path], corpus: ToyCorpus) -> Dict[str, EventStream]:
    """Read the events.csv stored beside each sequence, when present."""
    root = Path(root)
    streams: Dict[str, EventStream] = {}
    for split in ("train", "test"):
        for seq in corpus.split(split):
            path = root / split / f"id{seq.identity:03d}" / seq.camera / seq.sequence / EVENTS_NAME
            if path.is_file():
                streams[seq.key()] = read_events(path)
    logger.info(f"Loaded {len(streams)} stored event streams from {root}")
    return streams


def prepare_windows(
    corpus: ToyCorpus,
    bins: int = 5,
    window_us: int = 40_000,
    contrast_threshold: float = DEFAULT_CONTRAST_THRESHOLD,
    streams: Optional[Dict[str, EventStream]] = None,
    transform: Optional[StreamTransform] = None,
) -> CorpusWindows:
    kwargs: Dict[str, Any] = dict(
        bins=bins,
        window_us=window_us,
        contrast_threshold=contrast_threshold,
        streams=streams,
        transform=transform,
    )
    windows = CorpusWindows(
        train=build_windows(corpus.train, **kwargs),
        test=build_windows(corpus.test, **kwargs),
        train_ids=corpus.train_ids,
    )
    logger.info(f"Prepared {len(windows.train)} train and {len(windows.test)} test windows")
    return windows


def class_labels(identities: np.ndarray, roster: Sequence[int]) -> np.ndarray:
    roster_arr = np.asarray(sorted(roster), dtype=np.int64)
    index = np.searchsorted(roster_arr, identities)
    if np.any(index >= roster_arr.size) or np.any(roster_arr[np.minimum(index, roster_arr.size - 1)] != identities):
        raise DataError("window identity missing from the training roster")
    return index.astype(np.int64)


def pk_batches(
    identities: np.ndarray,
    ids_per_batch: int,
    samples_per_id: int,
    rng: np.random.Generator,
) -> Iterator[np.ndarray]:
    """Yield ceil(N / (P*K)) batches of P distinct identities with K samples each.

    Identities with fewer than K windows are sampled with replacement.
    """
    unique = np.unique(identities)
    if unique.size < 2:
        raise DataError("identity-balanced batches need at least two identities")
    p = min(ids_per_batch, unique.size)
    members = {int(i): np.flatnonzero(identities == i) for i in unique}
    n_batches = -(-len(identities) // (p * samples_per_id))
    for _ in range(n_batches):
        chosen = rng.choice(unique, size=p, replace=False)
        yield np.concatenate(
            [
                rng.choice(
                    members[int(i)],
                    size=samples_per_id,
                    replace=members[int(i)].size < samples_per_id,
                )
                for i in chosen
            ]
        )


def shuffled_batches(n: int, batch_size: int, rng: np.random.Generator) -> Iterator[np.ndarray]:
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


def corpus_summary(corpus: ToyCorpus) -> Dict[str, int]:
    frames = [len(s.frames) for split in ("train", "test") for s in corpus.split(split)]
    return {
        "identities_train": len(corpus.train_ids),
        "identities_test": len(corpus.test_ids),
        "cameras": len(corpus.cameras),
        "sequences_train": len(corpus.train),
        "sequences_test": len(corpus.test),
        "frames": int(sum(frames)),
        "windows": int(sum(max(f - 1, 0) for f in frames)),
        "height": corpus.height,
        "width": corpus.width,
    }
