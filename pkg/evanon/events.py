"""
Event Anonymization - Event Core

This module holds the event-stream data model, time windowing, voxel-grid
encoding and the event/image file formats.

Classes:
- Event - One (t, x, y, p) sensor event
- EventStream - Sorted, bounds-checked event arrays for a W x H sensor
- VoxelGrid - B x H x W spatiotemporal histogram of a time window
- GrayImage - H x W intensity image with values in [0, 1]

Functions:
- build_voxel_grid() - Accumulate events into temporal bins (bilinear in time)
- normalize_voxel() - Scale a grid by its max absolute value
- window_partition() - Split a stream into contiguous windows of length T
- read_events() / write_events() - Text event files (`# W H` header, `t,x,y,p`)
- read_gray() / write_gray() - 8-bit binary graymaps (P5)
- render_voxel() - Bin-sum + min-max render of a grid for inspection
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, List, NamedTuple, Tuple, Union

import numpy as np
from PIL import Image

from .errors import DataError, EventParseError

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

# Integers are canonical: no leading zeros and no "-0".
_INT = r"(0|[1-9]\d*)"
_SIGNED = r"(0|-?[1-9]\d*)"
_HEADER_RE = re.compile(rf"^# {_INT} {_INT}$")
_EVENT_RE = re.compile(rf"^{_INT},{_SIGNED},{_SIGNED},{_SIGNED}$")


class Event(NamedTuple):
    t: int
    x: int
    y: int
    p: int


@dataclass(frozen=True, eq=False)
class EventStream:
    """Events of a W x H sensor held as parallel arrays.

    Timestamps are integer microseconds. Construction only coerces dtypes;
    call validate() (done by every consumer) to enforce ordering and bounds.
    """

    width: int
    height: int
    t: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    x: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    y: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    p: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int8))

    def __post_init__(self) -> None:
        object.__setattr__(self, "t", np.asarray(self.t, dtype=np.int64).reshape(-1))
        object.__setattr__(self, "x", np.asarray(self.x, dtype=np.int64).reshape(-1))
        object.__setattr__(self, "y", np.asarray(self.y, dtype=np.int64).reshape(-1))
        object.__setattr__(self, "p", np.asarray(self.p, dtype=np.int8).reshape(-1))
        n = self.t.shape[0]
        if not (self.x.shape[0] == self.y.shape[0] == self.p.shape[0] == n):
            raise DataError("event arrays t, x, y, p must have equal length")

    @classmethod
    def from_events(cls, width: int, height: int, events: Iterable[Event]) -> "EventStream":
        rows = list(events)
        if not rows:
            return cls(width, height)
        t, x, y, p = zip(*rows)
        return cls(width, height, t, x, y, p)

    def __len__(self) -> int:
        return int(self.t.shape[0])

    def __iter__(self) -> Iterator[Event]:
        for i in range(len(self)):
            yield Event(int(self.t[i]), int(self.x[i]), int(self.y[i]), int(self.p[i]))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, EventStream):
            return NotImplemented
        return (
            self.width == other.width
            and self.height == other.height
            and np.array_equal(self.t, other.t)
            and np.array_equal(self.x, other.x)
            and np.array_equal(self.y, other.y)
            and np.array_equal(self.p, other.p)
        )

    def validate(self) -> None:
        """Raise DataError if ordering, bounds or polarity invariants fail."""
        if self.width < 1 or self.height < 1:
            raise DataError(f"invalid sensor geometry {self.width}x{self.height}")
        if len(self) == 0:
            return
        if np.any(self.t < 0):
            raise DataError("negative timestamp in event stream")
        if np.any(np.diff(self.t) < 0):
            raise DataError("event timestamps are not sorted")
        if np.any((self.x < 0) | (self.x >= self.width)):
            raise DataError(f"event x outside [0, {self.width})")
        if np.any((self.y < 0) | (self.y >= self.height)):
            raise DataError(f"event y outside [0, {self.height})")
        if np.any((self.p != 1) & (self.p != -1)):
            raise DataError("event polarity must be -1 or +1")

    def select(self, index: np.ndarray) -> "EventStream":
        """Sub-stream by boolean mask or index array (order preserved)."""
        return EventStream(
            self.width, self.height, self.t[index], self.x[index], self.y[index], self.p[index]
        )

    @staticmethod
    def concatenate(streams: List["EventStream"]) -> "EventStream":
        if not streams:
            raise ValueError("cannot concatenate an empty list of streams")
        w, h = streams[0].width, streams[0].height
        return EventStream(
            w,
            h,
            np.concatenate([s.t for s in streams]),
            np.concatenate([s.x for s in streams]),
            np.concatenate([s.y for s in streams]),
            np.concatenate([s.p for s in streams]),
        )


@dataclass(frozen=True, eq=False)
class VoxelGrid:
    """B x H x W event histogram of the window [t0, t0 + T]."""

    data: np.ndarray
    t0: float = 0.0
    T: float = 1.0

    def __post_init__(self) -> None:
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 3 or data.shape[0] < 1:
            raise DataError(f"voxel grid must be B x H x W with B >= 1, got {data.shape}")
        if not np.all(np.isfinite(data)):
            raise DataError("voxel grid contains non-finite values")
        object.__setattr__(self, "data", data)

    @property
    def bins(self) -> int:
        return int(self.data.shape[0])

    @property
    def height(self) -> int:
        return int(self.data.shape[1])

    @property
    def width(self) -> int:
        return int(self.data.shape[2])


@dataclass(frozen=True, eq=False)
class GrayImage:
    pixels: np.ndarray

    def __post_init__(self) -> None:
        pixels = np.asarray(self.pixels, dtype=np.float64)
        if pixels.ndim != 2:
            raise DataError(f"gray image must be H x W, got {pixels.shape}")
        if not np.all(np.isfinite(pixels)) or pixels.min(initial=0.0) < 0.0 or pixels.max(initial=0.0) > 1.0:
            raise DataError("gray image pixels must lie in [0, 1]")
        object.__setattr__(self, "pixels", pixels)

    @property
    def height(self) -> int:
        return int(self.pixels.shape[0])

    @property
    def width(self) -> int:
        return int(self.pixels.shape[1])


def build_voxel_grid(stream: EventStream, t0: float, T: float, B: int) -> VoxelGrid:
    """Accumulate the events of [t0, t0 + T] into a B-bin voxel grid.

    Each event adds its polarity to the two temporal bins nearest to
    t* = (B - 1) * (t - t0) / T with weights max(0, 1 - |b - t*|).

    Raises:
        ValueError: If B < 1 or T <= 0
        DataError: If the stream violates its invariants
    """
    if B < 1:
        raise ValueError(f"bin count must be >= 1, got {B}")
    if not T > 0:
        raise ValueError(f"window duration must be > 0, got {T}")
    stream.validate()

    grid = np.zeros((B, stream.height, stream.width), dtype=np.float64)
    inside = (stream.t >= t0) & (stream.t <= t0 + T)
    if not np.any(inside):
        return VoxelGrid(grid, t0, T)

    t = stream.t[inside].astype(np.float64)
    x = stream.x[inside]
    y = stream.y[inside]
    p = stream.p[inside].astype(np.float64)

    t_star = (B - 1) * (t - t0) / T
    lower = np.minimum(np.floor(t_star).astype(np.int64), B - 1)
    frac = t_star - lower
    np.add.at(grid, (lower, y, x), p * (1.0 - frac))
    upper = frac > 0.0
    np.add.at(grid, (lower[upper] + 1, y[upper], x[upper]), p[upper] * frac[upper])
    return VoxelGrid(grid, t0, T)


def normalize_voxel(grid: VoxelGrid) -> VoxelGrid:
    peak = float(np.max(np.abs(grid.data)))
    if peak == 0.0:
        return grid
    return VoxelGrid(grid.data / peak, grid.t0, grid.T)


def window_partition(stream: EventStream, T: float) -> List[Tuple[int, EventStream]]:
    """Split a stream into contiguous non-overlapping windows of length T.

    Windows start at the first timestamp. An event exactly at a window end
    opens the next window, except in the final window, which is closed: when
    the span is a whole number of windows, events at t_last stay in the last
    one. Empty intermediate windows are kept so the sequence covers
    [t_first, t_last] without gaps.
    """
    if not T > 0:
        raise ValueError(f"window duration must be > 0, got {T}")
    stream.validate()
    if len(stream) == 0:
        return []

    t_first = int(stream.t[0])
    index = np.floor_divide(stream.t - t_first, T).astype(np.int64)
    span = int(stream.t[-1]) - t_first
    if span > 0 and span % T == 0:
        index[stream.t == stream.t[-1]] -= 1
    count = int(index[-1]) + 1
    bounds = np.searchsorted(index, np.arange(count + 1), side="left")
    windows: List[Tuple[int, EventStream]] = []
    for k in range(count):
        start = t_first + k * T
        start = int(start) if float(start).is_integer() else start
        windows.append((start, stream.select(slice(bounds[k], bounds[k + 1]))))
    return windows


def write_events(stream: EventStream, path: PathLike) -> None:
    stream.validate()
    lines = [f"# {stream.width} {stream.height}\n"]
    lines.extend(
        f"{t},{x},{y},{p}\n"
        for t, x, y, p in zip(stream.t.tolist(), stream.x.tolist(), stream.y.tolist(), stream.p.tolist())
    )
    Path(path).write_text("".join(lines), encoding="ascii")
    logger.debug(f"Wrote {len(stream)} events to {path}")


def read_events(path: PathLike) -> EventStream:
    """Parse an event file, rejecting the first offending line.

    Raises:
        EventParseError: On malformed lines, out-of-bounds coordinates,
            bad polarity or decreasing timestamps (1-based line numbers)
    """
    text = Path(path).read_text(encoding="ascii")
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise EventParseError(1, "missing '# <W> <H>' header")
    header = _HEADER_RE.match(lines[0])
    if header is None:
        raise EventParseError(1, f"malformed header {lines[0]!r}")
    width, height = int(header.group(1)), int(header.group(2))
    if width < 1 or height < 1:
        raise EventParseError(1, f"invalid sensor geometry {width}x{height}")

    n = len(lines) - 1
    t = np.empty(n, dtype=np.int64)
    x = np.empty(n, dtype=np.int64)
    y = np.empty(n, dtype=np.int64)
    p = np.empty(n, dtype=np.int8)
    last_t = 0
    for i, line in enumerate(lines[1:]):
        lineno = i + 2
        match = _EVENT_RE.match(line)
        if match is None:
            raise EventParseError(lineno, f"malformed event {line!r}")
        ti, xi, yi, pi = (int(g) for g in match.groups())
        if not 0 <= xi < width:
            raise EventParseError(lineno, f"x={xi} outside [0, {width})")
        if not 0 <= yi < height:
            raise EventParseError(lineno, f"y={yi} outside [0, {height})")
        if pi not in (-1, 1):
            raise EventParseError(lineno, f"polarity {pi} not in {{-1, 1}}")
        if ti < last_t:
            raise EventParseError(lineno, f"timestamp {ti} precedes {last_t}")
        last_t = ti
        t[i], x[i], y[i], p[i] = ti, xi, yi, pi
    return EventStream(width, height, t, x, y, p)


def write_gray(image: GrayImage, path: PathLike) -> None:
    quantized = np.round(image.pixels * 255.0).astype(np.uint8)
    Image.fromarray(quantized).save(str(path), format="PPM")


def read_gray(path: PathLike) -> GrayImage:
    with Image.open(str(path)) as img:
        if img.format != "PPM" or img.mode != "L":
            raise DataError(f"{path}: expected an 8-bit P5 graymap, got {img.format}/{img.mode}")
        pixels = np.asarray(img, dtype=np.float64) / 255.0
    return GrayImage(pixels)


def render_voxel(grid: VoxelGrid) -> GrayImage:
    """Sum the bins and min-max normalize to [0, 1] (constant maps render 0)."""
    summed = grid.data.sum(axis=0)
    lo, hi = float(summed.min()), float(summed.max())
    if hi == lo:
        return GrayImage(np.zeros_like(summed))
    return GrayImage((summed - lo) / (hi - lo))
