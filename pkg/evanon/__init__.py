"""
Event Anonymization - Package Initialization

This module defines the public API for the evanon package: event streams and
voxel grids, the learnable anonymizer and its adversaries, and the
training/evaluation harness behind the `evanon` command line.

Exported Classes:
- EventStream, VoxelGrid, GrayImage - Event-camera data types
- AnonymizerNet, AttackerNet, ReIdNet, InverterNet - Networks
- TrainConfig - Training hyper-parameters
- RunConfig - Validated command configuration

Exported Functions:
- build_voxel_grid() - Bilinear-in-time voxelization of an event window
- generate_toy_corpus() - Synthetic multi-camera person corpus
- train_attacker(), train_joint() - Training entry points
- load_model(), save_model() - EANN1 checkpoints
"""

__all__ = [
    "EventStream",
    "VoxelGrid",
    "GrayImage",
    "AnonymizerNet",
    "AttackerNet",
    "ReIdNet",
    "InverterNet",
    "TrainConfig",
    "RunConfig",
    "build_voxel_grid",
    "generate_toy_corpus",
    "train_attacker",
    "train_joint",
    "load_model",
    "save_model",
]

from .events import EventStream, GrayImage, VoxelGrid, build_voxel_grid
from .models import RunConfig
from .networks import AnonymizerNet, AttackerNet, InverterNet, ReIdNet, load_model, save_model
from .simulator import generate_toy_corpus
from .training import TrainConfig, train_attacker, train_joint
