"""
Event Anonymization - Configuration Management

This module merges the configuration of a command run from its sources and
echoes the result for reproducibility. Supports optional .env file loading.

Precedence (lowest first): RunConfig defaults < `key = value` config file <
`--set key=value` overrides < dedicated command-line flags. The seed falls
back to the EVANON_SEED environment variable when no file or flag sets it.

Functions:
- parse_config_file() - Read a `key = value` file (# comments, blank lines)
- parse_overrides() - Turn `key=value` strings into a dict
- resolve_run_config() - Merge all sources into a validated RunConfig
- write_resolved_config() - Write `<reports>/<command>.resolved-config`
- log_level() - LOG_LEVEL environment variable (default INFO)
"""

from __future__ import annotations

import logging
import os
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Sequence, Tuple, Union

from pydantic import ValidationError

from .errors import UsageError
from .models import RunConfig
from .report import write_key_values

try:
    # Optional: load .env if present; harmless if missing
    from dotenv import load_dotenv  # type: ignore

    load_dotenv()
except (ImportError, ModuleNotFoundError):
    pass
except Exception as e:
    logging.getLogger(__name__).debug(f"Failed to load .env file: {e}")

logger = logging.getLogger(__name__)

SEED_ENV = "EVANON_SEED"
RESOLVED_SUFFIX = ".resolved-config"


def log_level() -> str:
    return os.getenv("LOG_LEVEL", "INFO").upper()


def _split_assignment(text: str, where: str) -> Tuple[str, str]:
    key, sep, value = text.partition("=")
    key, value = key.strip(), value.strip()
    if not sep or not key:
        raise UsageError(f"{where}: expected 'key = value', got {text.strip()!r}")
    if key not in RunConfig.model_fields or key == "command":
        raise UsageError(f"{where}: unknown configuration key '{key}'")
    return key, value


def parse_config_file(path: Union[str, Path]) -> Dict[str, str]:
    """Parse a `key = value` file.

    Raises:
        UsageError: On a missing file, a malformed line or an unknown key,
            naming the 1-based line number
    """
    path = Path(path)
    if not path.is_file():
        raise UsageError(f"config file not found: {path}")
    values: Dict[str, str] = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        key, value = _split_assignment(stripped, f"{path}: line {lineno}")
        values[key] = value
    return values


def parse_overrides(overrides: Optional[Sequence[str]]) -> Dict[str, str]:
    values: Dict[str, str] = {}
    for item in overrides or []:
        key, value = _split_assignment(item, "--set")
        values[key] = value
    return values


def resolve_run_config(
    command: str,
    config_file: Optional[Union[str, Path]] = None,
    overrides: Optional[Sequence[str]] = None,
    flags: Optional[Mapping[str, Any]] = None,
) -> RunConfig:
    """Merge defaults, config file, overrides and flags into a RunConfig.

    Flags whose value is None are treated as not given.

    Raises:
        UsageError: If any source is malformed or a value fails validation
    """
    merged: Dict[str, Any] = {}
    if config_file is not None:
        merged.update(parse_config_file(config_file))
    merged.update(parse_overrides(overrides))
    for key, value in (flags or {}).items():
        if value is None:
            continue
        if key not in RunConfig.model_fields:
            raise UsageError(f"unknown configuration key '{key}'")
        merged[key] = value
    if "seed" not in merged and os.getenv(SEED_ENV):
        merged["seed"] = os.environ[SEED_ENV]
    merged["command"] = command
    try:
        config = RunConfig(**merged)
    except ValidationError as e:
        first = e.errors()[0]
        where = ".".join(str(p) for p in first["loc"]) or "<config>"
        raise UsageError(f"invalid configuration value for '{where}': {first['msg']}") from e
    logger.debug(f"Resolved configuration for {command}: {config.model_dump()}")
    return config


def write_resolved_config(config: RunConfig) -> Path:
    path = config.report_path / f"{config.command}{RESOLVED_SUFFIX}"
    return write_key_values(config.flat(), path, f"evanon resolved config: {config.command}")
