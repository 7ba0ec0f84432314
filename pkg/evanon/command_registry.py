"""
Command Registry for the evanon CLI

This module provides a centralized registry for command metadata and routing,
so that the argument parser, the dispatcher and the tests share one source of
truth for command definitions.

Key Components:
- CommandRegistration: Dataclass holding command metadata (name, description, handler)
- COMMAND_REGISTRY: Global dictionary mapping command names to CommandRegistration objects
- register_command(): Decorator for registering commands with duplicate detection
- validate_registry(): Start-up check that every expected command is present

Usage:
    @register_command(
        name=CMD_GRADCHECK,
        description="Finite-difference audit of every network and loss",
    )
    def handle_gradcheck(config):
        ...
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional

logger = logging.getLogger(__name__)


@dataclass
class CommandRegistration:
    """Metadata for a registered CLI command.

    Attributes:
        name: Command name (e.g., "train-joint")
        description: One-line help text shown by the argument parser
        handler: Function taking a RunConfig and returning a result dict
        needs_corpus: Whether the corpus manifest must exist before running
        needs_checkpoints: Checkpoint files (relative to the checkpoint
            directory) that must exist before running
    """

    name: str
    description: str
    handler: Callable
    needs_corpus: bool = False
    needs_checkpoints: tuple = ()


# Global registry: maps command name -> CommandRegistration
COMMAND_REGISTRY: Dict[str, CommandRegistration] = {}


def register_command(
    name: str,
    description: str,
    needs_corpus: bool = False,
    needs_checkpoints: tuple = (),
) -> Callable:
    """Decorator to register a command handler.

    Raises:
        ValueError: If a command with the same name is already registered
    """

    def decorator(handler: Callable) -> Callable:
        if name in COMMAND_REGISTRY:
            existing = COMMAND_REGISTRY[name]
            raise ValueError(
                f"Command '{name}' is already registered by handler "
                f"'{existing.handler.__name__}' in module '{existing.handler.__module__}'. "
                f"Cannot register duplicate handler '{handler.__name__}' "
                f"in module '{handler.__module__}'."
            )
        COMMAND_REGISTRY[name] = CommandRegistration(
            name=name,
            description=description,
            handler=handler,
            needs_corpus=needs_corpus,
            needs_checkpoints=tuple(needs_checkpoints),
        )
        logger.debug(f"Registered command: {name} -> {handler.__name__}")
        return handler

    return decorator


def validate_registry(expected_commands: Optional[List[str]] = None) -> None:
    """Validate that all expected commands are registered.

    Raises:
        RuntimeError: If the registry is empty or commands are missing
    """
    if not COMMAND_REGISTRY:
        raise RuntimeError(
            "Command registry is empty. No commands have been registered. "
            "Ensure evanon.handlers is imported before dispatching."
        )
    if expected_commands is not None:
        missing = sorted(set(expected_commands) - set(COMMAND_REGISTRY))
        if missing:
            raise RuntimeError(f"Command registry validation failed. Missing commands: {missing}")
    logger.debug(f"Command registry validated: {len(COMMAND_REGISTRY)} commands registered")
