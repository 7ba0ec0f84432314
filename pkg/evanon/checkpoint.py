"""
Event Anonymization - Checkpoint Files

Binary `EANN1` checkpoints: a JSON architecture manifest followed by named
little-endian float64 arrays. The manifest is validated with a Draft-07
JSON schema before any weight is read.

Layout:
    b"EANN1"
    u32 manifest length, manifest JSON (UTF-8, sorted keys)
    u32 parameter count
    per parameter: u32 name length, name, u32 rank, rank x u64 dims,
                   prod(dims) x f64 (little-endian)

Functions:
- save_checkpoint() - Write manifest + parameters
- load_checkpoint() - Read and validate manifest + parameters
"""

from __future__ import annotations

import json
import logging
import struct
from pathlib import Path
from typing import Any, Dict, Mapping, Tuple, Union

import numpy as np
from jsonschema import Draft7Validator

from .errors import CheckpointError

logger = logging.getLogger(__name__)

MAGIC = b"EANN1"

MANIFEST_SCHEMA: Dict[str, Any] = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "type": "object",
    "required": ["model", "config", "networks"],
    "properties": {
        "model": {"type": "string"},
        "config": {"type": "object"},
        "networks": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["name", "frozen", "layers"],
                "properties": {
                    "name": {"type": "string"},
                    "frozen": {"type": "boolean"},
                    "layers": {
                        "type": "array",
                        "items": {
                            "type": "object",
                            "required": ["name", "type"],
                            "properties": {
                                "name": {"type": "string"},
                                "type": {"type": "string"},
                            },
                        },
                    },
                },
            },
        },
    },
}

_MANIFEST_VALIDATOR = Draft7Validator(MANIFEST_SCHEMA)


def validate_manifest(manifest: Mapping[str, Any]) -> None:
    errors = sorted(_MANIFEST_VALIDATOR.iter_errors(manifest), key=lambda e: list(e.path))
    if errors:
        first = errors[0]
        where = "/".join(str(p) for p in first.path) or "<root>"
        raise CheckpointError(f"invalid architecture manifest at {where}: {first.message}")


def save_checkpoint(
    path: Union[str, Path], manifest: Mapping[str, Any], arrays: Mapping[str, np.ndarray]
) -> None:
    validate_manifest(manifest)
    blob = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [MAGIC, struct.pack("<I", len(blob)), blob, struct.pack("<I", len(arrays))]
    for name, value in arrays.items():
        encoded = name.encode("utf-8")
        value = np.asarray(value, dtype=np.float64)
        parts.append(struct.pack("<I", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<I", value.ndim))
        parts.append(struct.pack(f"<{value.ndim}Q", *value.shape))
        parts.append(value.astype("<f8").tobytes(order="C"))
    Path(path).write_bytes(b"".join(parts))
    logger.debug(f"Saved checkpoint {path} ({len(arrays)} arrays)")


class _Reader:
    def __init__(self, data: bytes, path: str):
        self.data = data
        self.offset = 0
        self.path = path

    def take(self, size: int) -> bytes:
        end = self.offset + size
        if end > len(self.data):
            raise CheckpointError(f"{self.path}: truncated checkpoint")
        chunk = self.data[self.offset : end]
        self.offset = end
        return chunk

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def load_checkpoint(path: Union[str, Path]) -> Tuple[Dict[str, Any], Dict[str, np.ndarray]]:
    """Read a checkpoint; raises CheckpointError on any format violation."""
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    reader = _Reader(path.read_bytes(), str(path))
    if reader.take(len(MAGIC)) != MAGIC:
        raise CheckpointError(f"{path}: not an EANN1 checkpoint")
    try:
        manifest = json.loads(reader.take(reader.u32()).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{path}: unreadable manifest: {e}") from e
    validate_manifest(manifest)

    arrays: Dict[str, np.ndarray] = {}
    for _ in range(reader.u32()):
        name = reader.take(reader.u32()).decode("utf-8")
        rank = reader.u32()
        dims = struct.unpack(f"<{rank}Q", reader.take(8 * rank))
        count = int(np.prod(dims, dtype=np.int64)) if rank else 1
        values = np.frombuffer(reader.take(8 * count), dtype="<f8").astype(np.float64)
        arrays[name] = values.reshape(dims)
    if reader.offset != len(reader.data):
        raise CheckpointError(f"{path}: trailing bytes after last parameter")
    logger.debug(f"Loaded checkpoint {path} ({len(arrays)} arrays)")
    return manifest, arrays
