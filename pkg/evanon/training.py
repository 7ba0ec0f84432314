"""
Event Anonymization - Training Loops

This module trains the four networks:

- train_attacker(): reconstruction surrogate on raw (voxel, frame) pairs,
  returned frozen
- joint_step() / train_joint(): anonymizer + ReId embedder against the frozen
  attacker, L_Total = alpha*L_struct + beta*L_rec + gamma*L_reid
- train_reid_baseline() / train_embedder(): ReId without anonymization,
  on voxels or on gray images
- train_inverter(): inversion adversary against a frozen anonymizer

Classes:
- TrainConfig - Loss weights, optimizer and schedule settings
- LossBreakdown - Loss terms of one joint step
- TrainingLog - Per-epoch mean loss terms
- JointResult - Trained anonymizer, ReId embedder and their log
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np

from .diffnet import OptimConfig, Tensor, sgd_step
from .errors import NumericalError, UsageError
from .networks import AnonymizerNet, AttackerNet, InverterNet, ReIdNet, predict, save_model
from .quality import DEFAULT_SSIM, SsimConfig, ssim, ssim_loss_rec, ssim_loss_struct
from .samples import WindowSet, class_labels, pk_batches, shuffled_batches

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 1.0
    lr: float = 0.001
    momentum: float = 0.9
    weight_decay: float = 5e-4
    epochs: int = 60
    ids_per_batch: int = 6
    samples_per_id: int = 4
    seed: int = 7
    window_us: int = 40_000
    bins: int = 5
    embedding_dim: int = 64
    triplet_margin: float = 0.3
    attacker_epochs: int = 40
    attacker_lr: float = 0.01
    inversion_epochs: int = 40
    inversion_lr: float = 0.01
    inversion_voxel_weight: float = 1.0
    retrieval_epochs: int = 40
    retrieval_lr: float = 0.01
    checkpoint_every: int = 0

    def __post_init__(self) -> None:
        for name in ("alpha", "beta", "gamma", "inversion_voxel_weight"):
            if not getattr(self, name) >= 0:
                raise ValueError(f"Invalid {name}: {getattr(self, name)}. Must be >= 0.")
        for name in ("epochs", "attacker_epochs", "inversion_epochs", "retrieval_epochs", "bins", "embedding_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"Invalid {name}: {getattr(self, name)}. Must be >= 1.")
        if self.ids_per_batch < 2:
            raise ValueError(f"Invalid ids_per_batch: {self.ids_per_batch}. Must be >= 2.")
        if self.samples_per_id < 2:
            raise ValueError(f"Invalid samples_per_id: {self.samples_per_id}. Must be >= 2.")
        if self.window_us < 1:
            raise ValueError(f"Invalid window_us: {self.window_us}. Must be >= 1.")
        if not self.triplet_margin >= 0:
            raise ValueError(f"Invalid triplet_margin: {self.triplet_margin}. Must be >= 0.")
        if self.checkpoint_every < 0:
            raise ValueError(f"Invalid checkpoint_every: {self.checkpoint_every}. Must be >= 0.")
        OptimConfig(self.lr, self.momentum, self.weight_decay)
        OptimConfig(self.attacker_lr, self.momentum, self.weight_decay)
        OptimConfig(self.inversion_lr, self.momentum, self.weight_decay)
        OptimConfig(self.retrieval_lr, self.momentum, self.weight_decay)

    @property
    def batch_size(self) -> int:
        return self.ids_per_batch * self.samples_per_id

    @property
    def optim(self) -> OptimConfig:
        return OptimConfig(self.lr, self.momentum, self.weight_decay)

    def with_weights(self, alpha: float, beta: float, gamma: float) -> "TrainConfig":
        return replace(self, alpha=alpha, beta=beta, gamma=gamma)


@dataclass(frozen=True)
class LossBreakdown:
    struct: float
    rec: float
    reid: float
    total: float
    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 1.0

    @classmethod
    def combine(cls, struct: float, rec: float, reid: float, alpha: float, beta: float, gamma: float) -> "LossBreakdown":
        return cls(struct, rec, reid, alpha * struct + beta * rec + gamma * reid, alpha, beta, gamma)

    def as_dict(self) -> Dict[str, float]:
        return {"struct": self.struct, "rec": self.rec, "reid": self.reid, "total": self.total}


@dataclass
class TrainingLog:
    name: str
    epochs: List[Dict[str, float]] = field(default_factory=list)

    def record(self, epoch: int, terms: Dict[str, List[float]]) -> Dict[str, float]:
        row = {"epoch": float(epoch)}
        row.update({k: float(np.mean(v)) for k, v in terms.items()})
        self.epochs.append(row)
        logger.info(
            f"{self.name} epoch {epoch}: "
            + ", ".join(f"{k}={v:.5f}" for k, v in row.items() if k != "epoch")
        )
        return row

    def column(self, key: str) -> List[float]:
        return [row[key] for row in self.epochs]

    @property
    def first(self) -> Dict[str, float]:
        return self.epochs[0]

    @property
    def final(self) -> Dict[str, float]:
        return self.epochs[-1]


@dataclass
class JointResult:
    anonymizer: AnonymizerNet
    reid: ReIdNet
    log: TrainingLog


def _finite(value: float, what: str) -> float:
    if not np.isfinite(value):
        raise NumericalError(f"non-finite {what}: {value}")
    return value


# ---------------------------------------------------------------------------
# Attacker
# ---------------------------------------------------------------------------


def train_attacker(
    windows: WindowSet, config: TrainConfig, ssim_config: SsimConfig = DEFAULT_SSIM
) -> Tuple[AttackerNet, TrainingLog]:
    """Fit the reconstruction surrogate on raw windows; returns (frozen attacker, log)."""
    attacker = AttackerNet(windows.bins, seed=config.seed)
    optim = OptimConfig(config.attacker_lr, config.momentum, config.weight_decay)
    rng = np.random.default_rng([config.seed, 11])
    log = TrainingLog("attacker")
    for epoch in range(1, config.attacker_epochs + 1):
        losses: List[float] = []
        for index in shuffled_batches(len(windows), config.batch_size, rng):
            attacker.zero_grad()
            out = attacker.forward(windows.voxels[index])
            result = ssim(out, windows.frames[index], ssim_config)
            losses.append(_finite(1.0 - result.value, "attacker loss"))
            attacker.backward(-result.grad)
            sgd_step(attacker.parameters(), optim)
        log.record(epoch, {"loss": losses})
    attacker.freeze()
    return attacker, log


# ---------------------------------------------------------------------------
# Joint anonymization
# ---------------------------------------------------------------------------


def joint_step(
    anonymizer: AnonymizerNet,
    attacker: AttackerNet,
    reid: ReIdNet,
    voxels: Tensor,
    frames: Tensor,
    labels: np.ndarray,
    config: TrainConfig,
    ssim_config: SsimConfig = DEFAULT_SSIM,
) -> LossBreakdown:
    """One SGD step of anonymizer + ReId embedder against the frozen attacker.

    Raises:
        UsageError: If the attacker is not frozen
        NumericalError: If L_Total is not finite
    """
    if not attacker.frozen:
        raise UsageError("joint training requires a frozen attacker")
    anonymizer.zero_grad()
    reid.zero_grad()

    anonymized = anonymizer.forward(voxels)
    struct = ssim_loss_struct(anonymized, voxels, ssim_config)
    rec = ssim_loss_rec(attacker.forward(anonymized), frames, ssim_config)
    embeddings, logits = reid.forward(anonymized)
    reid_value, d_embeddings, d_logits = reid.identity_loss(embeddings, logits, labels, config.triplet_margin)

    losses = LossBreakdown.combine(struct.value, rec.value, reid_value, config.alpha, config.beta, config.gamma)
    _finite(losses.total, "L_Total")

    grad = config.alpha * struct.grad
    if config.beta:
        grad = grad + attacker.backward(config.beta * rec.grad)
    grad = grad + reid.backward(config.gamma * d_embeddings, config.gamma * d_logits)
    anonymizer.backward(grad)
    sgd_step(anonymizer.parameters() + reid.parameters(), config.optim)
    return losses


def train_joint(
    windows: WindowSet,
    train_ids: List[int],
    attacker: AttackerNet,
    config: TrainConfig,
    ssim_config: SsimConfig = DEFAULT_SSIM,
    checkpoint_dir: Optional[Union[str, Path]] = None,
) -> JointResult:
    """Full joint schedule; deterministic under `config.seed`.

    With `checkpoint_every` > 0 and a checkpoint directory, intermediate
    anonymizer/ReId checkpoints are written every that many epochs.
    """
    anonymizer = AnonymizerNet(windows.bins, seed=config.seed)
    reid = ReIdNet(windows.bins, config.embedding_dim, len(train_ids), seed=config.seed + 1)
    labels = class_labels(windows.identities, train_ids)
    rng = np.random.default_rng([config.seed, 12])
    log = TrainingLog("joint")
    for epoch in range(1, config.epochs + 1):
        terms: Dict[str, List[float]] = {"struct": [], "rec": [], "reid": [], "total": []}
        for index in pk_batches(windows.identities, config.ids_per_batch, config.samples_per_id, rng):
            step = joint_step(
                anonymizer,
                attacker,
                reid,
                windows.voxels[index],
                windows.frames[index],
                labels[index],
                config,
                ssim_config,
            )
            for key, value in step.as_dict().items():
                terms[key].append(value)
        log.record(epoch, terms)
        if checkpoint_dir is not None and config.checkpoint_every and epoch % config.checkpoint_every == 0:
            directory = Path(checkpoint_dir)
            directory.mkdir(parents=True, exist_ok=True)
            save_model(anonymizer, directory / f"anonymizer-epoch{epoch:03d}.eann")
            save_model(reid, directory / f"reid-epoch{epoch:03d}.eann")
    return JointResult(anonymizer, reid, log)


# ---------------------------------------------------------------------------
# ReId without anonymization
# ---------------------------------------------------------------------------


def train_embedder(
    inputs: Tensor,
    identities: np.ndarray,
    train_ids: List[int],
    config: TrainConfig,
    epochs: int,
    optim: OptimConfig,
    seed: int,
    name: str = "reid",
) -> Tuple[ReIdNet, TrainingLog]:
    """Fit a fresh ReIdNet (CE + batch-hard triplet) on `inputs`; returns (net, log)."""
    reid = ReIdNet(inputs.shape[1], config.embedding_dim, len(train_ids), seed=seed)
    labels = class_labels(identities, train_ids)
    rng = np.random.default_rng([seed, 13])
    log = TrainingLog(name)
    for epoch in range(1, epochs + 1):
        losses: List[float] = []
        for index in pk_batches(identities, config.ids_per_batch, config.samples_per_id, rng):
            reid.zero_grad()
            embeddings, logits = reid.forward(inputs[index])
            value, d_embeddings, d_logits = reid.identity_loss(
                embeddings, logits, labels[index], config.triplet_margin
            )
            losses.append(_finite(value, f"{name} loss"))
            reid.backward(d_embeddings, d_logits)
            sgd_step(reid.parameters(), optim)
        log.record(epoch, {"loss": losses})
    return reid, log


def train_reid_baseline(windows: WindowSet, train_ids: List[int], config: TrainConfig) -> Tuple[ReIdNet, TrainingLog]:
    """No-privacy ReId: the same embedder and schedule on raw voxels."""
    return train_embedder(
        windows.voxels,
        windows.identities,
        train_ids,
        config,
        config.epochs,
        config.optim,
        seed=config.seed + 1,
        name="reid_raw",
    )


# ---------------------------------------------------------------------------
# Inversion adversary
# ---------------------------------------------------------------------------


def train_inverter(
    anonymizer: AnonymizerNet,
    attacker: AttackerNet,
    windows: WindowSet,
    config: TrainConfig,
    ssim_config: SsimConfig = DEFAULT_SSIM,
) -> Tuple[InverterNet, TrainingLog]:
    """Fit E_inv so that E_rec(E_inv(E_an(X))) reconstructs the frame.

    Loss per batch: (1 - SSIM(E_rec(E_inv(X_an)), I))
    + inversion_voxel_weight * (1 - voxel SSIM(E_inv(X_an), X)).
    The anonymizer and attacker are frozen first and never updated.
    """
    anonymizer.freeze()
    attacker.freeze()
    anonymized = predict(anonymizer.forward, windows.voxels)
    inverter = InverterNet(windows.bins, seed=config.seed + 2)
    optim = OptimConfig(config.inversion_lr, config.momentum, config.weight_decay)
    rng = np.random.default_rng([config.seed, 14])
    weight = config.inversion_voxel_weight
    log = TrainingLog("inverter")
    for epoch in range(1, config.inversion_epochs + 1):
        terms: Dict[str, List[float]] = {"rec": [], "voxel": [], "loss": []}
        for index in shuffled_batches(len(windows), config.batch_size, rng):
            inverter.zero_grad()
            restored = inverter.forward(anonymized[index])
            rec = ssim(attacker.forward(restored), windows.frames[index], ssim_config)
            grad = attacker.backward(-rec.grad)
            rec_loss = 1.0 - rec.value
            voxel_loss = 0.0
            if weight:
                raw = windows.voxels[index]
                vox = ssim((restored + 1.0) / 2.0, (raw + 1.0) / 2.0, ssim_config)
                voxel_loss = 1.0 - vox.value
                grad = grad - 0.5 * weight * vox.grad
            total = _finite(rec_loss + weight * voxel_loss, "inversion loss")
            inverter.backward(grad)
            sgd_step(inverter.parameters(), optim)
            terms["rec"].append(rec_loss)
            terms["voxel"].append(voxel_loss)
            terms["loss"].append(total)
        log.record(epoch, terms)
    return inverter, log
