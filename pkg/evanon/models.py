"""
Event Anonymization - Run Configuration Model

Purpose:
    Defines the pydantic model that validates the merged configuration of a
    command run (defaults, config file, flags). Unknown keys are rejected;
    every key documents itself through its Field description, which is also
    what `evanon <command> --help` shows for `--set`.

Classes:
    - RunConfig

Methods of RunConfig convert the flat keys into the typed configuration
objects consumed by the library: TrainConfig, SsimConfig, EncryptionKey.
"""

from __future__ import annotations

from pathlib import Path
from typing import Any, Dict, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field

from .baselines import EncryptionKey
from .quality import SsimConfig
from .training import TrainConfig

_TRAIN_KEYS = tuple(TrainConfig.__dataclass_fields__)


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    command: str = Field(description="Command being run")

    # Paths
    corpus: str = Field(default="corpus", description="Corpus directory (frames, timestamps, events, manifest)")
    checkpoints: str = Field(default="checkpoints", description="Directory for EANN1 model checkpoints")
    reports: str = Field(default="reports", description="Directory for report files")
    events_in: Optional[str] = Field(default=None, description="Input event file (encrypt-baseline, render)")
    events_out: Optional[str] = Field(default=None, description="Output event file (encrypt-baseline)")

    seed: int = Field(default=7, ge=0, description="Seed of every random generator")

    # Corpus
    num_ids: int = Field(default=24, ge=4, description="Identities in the toy corpus")
    num_test_ids: int = Field(default=8, ge=1, description="Identities held out for testing")
    cams: int = Field(default=2, ge=2, description="Cameras in the toy corpus")
    frames: int = Field(default=8, ge=2, description="Frames per sequence")
    height: int = Field(default=48, ge=1, description="Frame height in pixels")
    width: int = Field(default=64, ge=1, description="Frame width in pixels")
    contrast_threshold: float = Field(default=0.2, gt=0, description="Simulator log-intensity contrast threshold C")

    # Training
    alpha: float = Field(default=1.0, ge=0, description="Weight of L_struct")
    beta: float = Field(default=1.0, ge=0, description="Weight of L_rec")
    gamma: float = Field(default=1.0, ge=0, description="Weight of L_reid")
    lr: float = Field(default=0.001, gt=0, description="Joint-training learning rate")
    momentum: float = Field(default=0.9, ge=0, lt=1, description="SGD momentum")
    weight_decay: float = Field(default=5e-4, ge=0, description="SGD weight decay")
    epochs: int = Field(default=60, ge=1, description="Joint-training epochs")
    ids_per_batch: int = Field(default=6, ge=2, description="Identities per batch (P)")
    samples_per_id: int = Field(default=4, ge=2, description="Windows per identity per batch (K)")
    window_us: int = Field(default=40_000, ge=1, description="Voxel window duration T in microseconds")
    bins: int = Field(default=5, ge=1, description="Temporal bins B of a voxel grid")
    embedding_dim: int = Field(default=64, ge=1, description="ReId embedding dimension D")
    triplet_margin: float = Field(default=0.3, ge=0, description="Batch-hard triplet margin")
    attacker_epochs: int = Field(default=40, ge=1, description="Attacker surrogate epochs")
    attacker_lr: float = Field(default=0.01, gt=0, description="Attacker surrogate learning rate")
    inversion_epochs: int = Field(default=40, ge=1, description="Inversion adversary epochs")
    inversion_lr: float = Field(default=0.01, gt=0, description="Inversion adversary learning rate")
    inversion_voxel_weight: float = Field(default=1.0, ge=0, description="Weight of the inversion voxel SSIM term")
    retrieval_epochs: int = Field(default=40, ge=1, description="Retrieval embedder epochs")
    retrieval_lr: float = Field(default=0.01, gt=0, description="Retrieval embedder learning rate")
    checkpoint_every: int = Field(default=0, ge=0, description="Intermediate checkpoint period in epochs (0 = off)")
    raw_baseline: bool = Field(default=True, description="Also train the no-privacy ReId baseline in train-joint")

    # SSIM
    ssim_window: int = Field(default=11, ge=1, description="SSIM Gaussian window size (odd)")
    ssim_sigma: float = Field(default=1.5, gt=0, description="SSIM Gaussian sigma")
    ssim_k1: float = Field(default=0.01, gt=0, description="SSIM stabilizer k1 (C1 = (k1 L)^2)")
    ssim_k2: float = Field(default=0.03, gt=0, description="SSIM stabilizer k2 (C2 = (k2 L)^2)")

    # Encryption baselines
    method: Literal["scramble", "discard"] = Field(default="scramble", description="Encryption baseline")
    ratio: float = Field(default=0.75, ge=0, le=1, description="Fraction of events encrypted")
    key_x0: float = Field(default=0.3141, gt=0, lt=1, description="Logistic-map seed x0")
    key_r: float = Field(default=3.99, gt=3.57, le=4, description="Logistic-map parameter r")
    key_selection_seed: int = Field(default=0, ge=0, description="Seed of the encrypted-subset selection")
    decrypt: bool = Field(default=False, description="Invert scrambling instead of applying it")

    # Diagnostics
    gradcheck_entries: int = Field(default=20, ge=1, description="Entries sampled per parameter in gradcheck")
    gradcheck_seeds: int = Field(default=1, ge=1, description="Seeds run by gradcheck")
    window_index: int = Field(default=0, ge=0, description="Window rendered by render")
    split: Literal["train", "test"] = Field(default="test", description="Corpus split used by render")

    def train_config(self) -> TrainConfig:
        data = self.model_dump()
        return TrainConfig(**{key: data[key] for key in _TRAIN_KEYS})

    def ssim_config(self) -> SsimConfig:
        return SsimConfig(self.ssim_window, self.ssim_sigma, self.ssim_k1, self.ssim_k2)

    def encryption_key(self) -> EncryptionKey:
        return EncryptionKey(self.key_x0, self.key_r, self.key_selection_seed)

    @property
    def corpus_path(self) -> Path:
        return Path(self.corpus)

    @property
    def checkpoint_path(self) -> Path:
        return Path(self.checkpoints)

    @property
    def report_path(self) -> Path:
        return Path(self.reports)

    def flat(self) -> Dict[str, Any]:
        return self.model_dump()
