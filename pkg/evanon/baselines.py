"""
Event Anonymization - Encryption Baselines

Keyed event encryption used as the comparison point for learned
anonymization: chaotic position scrambling with polarity flipping (exactly
invertible) and event discarding. Both act on a key-selected subset of
round(ratio * N) events.

Classes:
- EncryptionKey - Logistic-map seed, map parameter, subset selection seed

Functions:
- logistic_sequence() - Logistic-map orbit after burn-in
- keyed_permutation() - Bijection on the W*H pixel indices
- select_events() - Key-deterministic subset of event indices
- scramble_events() / descramble_events() - Position scramble + polarity flip
- discard_events() - Drop the selected subset
- encrypt_stream() - Dispatch by method name
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Dict

import numpy as np

from .events import EventStream

logger = logging.getLogger(__name__)

BURN_IN = 100
DEFAULT_R = 3.99


@dataclass(frozen=True)
class EncryptionKey:
    x0: float = 0.3141
    r: float = DEFAULT_R
    selection_seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 < self.x0 < 1.0:
            raise ValueError(f"Invalid chaotic seed x0: {self.x0}. Must be in (0, 1).")
        if not 3.57 < self.r <= 4.0:
            raise ValueError(f"Invalid logistic parameter r: {self.r}. Must be in (3.57, 4].")
        if self.selection_seed < 0:
            raise ValueError(f"Invalid selection seed: {self.selection_seed}. Must be >= 0.")


def logistic_sequence(x0: float, r: float, size: int, burn_in: int = BURN_IN) -> np.ndarray:
    x = x0
    for _ in range(burn_in):
        x = r * x * (1.0 - x)
    seq = np.empty(size, dtype=np.float64)
    for i in range(size):
        x = r * x * (1.0 - x)
        seq[i] = x
    return seq


@lru_cache(maxsize=32)
def _permutation(width: int, height: int, x0: float, r: float) -> np.ndarray:
    perm = np.argsort(logistic_sequence(x0, r, width * height), kind="stable")
    perm.setflags(write=False)
    return perm


def keyed_permutation(width: int, height: int, key: EncryptionKey) -> np.ndarray:
    """Pixel index i = y * W + x is sent to perm[i]; argsort makes it a bijection."""
    if width < 1 or height < 1:
        raise ValueError(f"invalid sensor geometry {width}x{height}")
    return _permutation(width, height, key.x0, key.r)


def inverse_permutation(perm: np.ndarray) -> np.ndarray:
    return np.argsort(perm, kind="stable")


def _check_ratio(ratio: float) -> None:
    if not 0.0 <= ratio <= 1.0:
        raise ValueError(f"Invalid encryption ratio: {ratio}. Must be in [0, 1].")


def select_events(n: int, key: EncryptionKey, ratio: float) -> np.ndarray:
    """Sorted indices of exactly round(ratio * n) events (half rounds up)."""
    _check_ratio(ratio)
    k = int(np.floor(ratio * n + 0.5))
    order = np.random.default_rng(key.selection_seed).permutation(n)
    return np.sort(order[:k])


def _remap(stream: EventStream, key: EncryptionKey, ratio: float, inverse: bool) -> EventStream:
    stream.validate()
    chosen = select_events(len(stream), key, ratio)
    if chosen.size == 0:
        return stream
    perm = keyed_permutation(stream.width, stream.height, key)
    if inverse:
        perm = inverse_permutation(perm)
    x, y, p = stream.x.copy(), stream.y.copy(), stream.p.copy()
    moved = perm[y[chosen] * stream.width + x[chosen]]
    x[chosen] = moved % stream.width
    y[chosen] = moved // stream.width
    p[chosen] = -p[chosen]
    return EventStream(stream.width, stream.height, stream.t.copy(), x, y, p)


def scramble_events(stream: EventStream, key: EncryptionKey, ratio: float) -> EventStream:
    """Move the selected events through the keyed permutation and flip their polarity."""
    return _remap(stream, key, ratio, inverse=False)


def descramble_events(stream: EventStream, key: EncryptionKey, ratio: float) -> EventStream:
    return _remap(stream, key, ratio, inverse=True)


def discard_events(stream: EventStream, key: EncryptionKey, ratio: float) -> EventStream:
    stream.validate()
    keep = np.ones(len(stream), dtype=bool)
    keep[select_events(len(stream), key, ratio)] = False
    return stream.select(keep)


ENCRYPTION_METHODS: Dict[str, Callable[[EventStream, EncryptionKey, float], EventStream]] = {
    "scramble": scramble_events,
    "discard": discard_events,
}


def encrypt_stream(stream: EventStream, method: str, key: EncryptionKey, ratio: float) -> EventStream:
    if method not in ENCRYPTION_METHODS:
        raise ValueError(f"Unknown encryption method '{method}'. Choose from {sorted(ENCRYPTION_METHODS)}.")
    return ENCRYPTION_METHODS[method](stream, key, ratio)
