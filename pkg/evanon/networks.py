"""
Event Anonymization - Network Blocks

This module builds the four networks of the anonymization pipeline on top of
the diffnet layers and wires their single-sample operations:

- AnonymizerNet (E_an): voxel grid -> anonymized voxel grid, shape-preserving
- AttackerNet (E_rec): voxel grid -> gray image in [0, 1]
- ReIdNet (E_reid): voxel grid (or gray image) -> embedding + identity logits
- InverterNet (E_inv): anonymized voxel grid -> estimate of the raw grid

Every model exposes forward/backward on N x C x H x W batches, a parameter
registry, freeze/unfreeze, and a JSON-able manifest used by EANN1
checkpoints.

Classes:
- Model - Common base: named networks, config, freeze state, manifest
- AnonymizerNet, AttackerNet, ReIdNet, InverterNet - The four blocks
- GradCheckCase - One gradient-check composite with its tolerance

Functions:
- anonymize(), reconstruct(), integrate_reconstruct(), embed(), classify()
- l2_normalize() - Row-wise unit-norm embeddings
- save_model() / load_model() - EANN1 checkpoint round trip
- gradcheck_suite() - Finite-difference audit of every network and loss
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Type, Union

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .diffnet import (
    Conv2d,
    GlobalAvgPool,
    GradCheckReport,
    LeakyReLU,
    Linear,
    Network,
    Parameter,
    Sigmoid,
    Tensor,
    Upsample2x,
    batch_hard_triplet,
    grad_check,
    softmax_cross_entropy,
)
from .errors import CheckpointError, NumericalError, ShapeMismatchError
from .events import GrayImage, VoxelGrid
from .quality import SsimConfig, ssim

logger = logging.getLogger(__name__)

DEFAULT_BINS = 5
DEFAULT_EMBEDDING_DIM = 64


class Model:
    """Named collection of diffnet networks sharing one config."""

    kind = "model"

    def __init__(self, config: Dict[str, Any], networks: List[Network]):
        self.config = dict(config)
        self.networks = networks

    @classmethod
    def from_config(cls, config: Dict[str, Any], seed: int = 0) -> "Model":
        return cls(seed=seed, **config)

    def parameters(self) -> List[Parameter]:
        return [p for net in self.networks for p in net.parameters()]

    def named_parameters(self) -> Dict[str, Parameter]:
        named: Dict[str, Parameter] = {}
        for net in self.networks:
            named.update(net.named_parameters())
        return named

    def zero_grad(self) -> None:
        for net in self.networks:
            net.zero_grad()

    def freeze(self) -> "Model":
        for net in self.networks:
            net.freeze()
        return self

    def unfreeze(self) -> "Model":
        for net in self.networks:
            net.unfreeze()
        return self

    @property
    def frozen(self) -> bool:
        return all(net.frozen for net in self.networks)

    def manifest(self) -> Dict[str, Any]:
        return {
            "model": self.kind,
            "config": dict(self.config),
            "networks": [
                {"name": net.name, "frozen": net.frozen, "layers": net.architecture()}
                for net in self.networks
            ],
        }

    def _check_input(self, x: Tensor, channels: int) -> Tensor:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 4 or x.shape[1] != channels:
            raise ShapeMismatchError(f"{self.kind} input", ("N", channels, "H", "W"), x.shape)
        return x


def _voxel_to_voxel(name: str, bins: int, rng: np.random.Generator) -> Network:
    """4 conv layers, kernel 3, stride 1, pad 1; B -> 16 -> 32 -> 16 -> B."""
    plan = [bins, 16, 32, 16, bins]
    layers: List[Tuple[str, Any]] = []
    for i in range(4):
        layers.append((f"conv{i + 1}", Conv2d(plan[i], plan[i + 1], 3, 1, 1, rng=rng, name=f"conv{i + 1}")))
        if i < 3:
            layers.append((f"act{i + 1}", LeakyReLU()))
    return Network(name, layers)


class AnonymizerNet(Model):
    kind = "anonymizer"

    def __init__(self, bins: int = DEFAULT_BINS, seed: int = 0):
        if bins < 1:
            raise ValueError(f"Invalid bin count: {bins}. Must be >= 1.")
        rng = np.random.default_rng(seed)
        self.net = _voxel_to_voxel(self.kind, bins, rng)
        super().__init__({"bins": bins}, [self.net])

    @property
    def bins(self) -> int:
        return int(self.config["bins"])

    def forward(self, x: Tensor) -> Tensor:
        return self.net.forward(self._check_input(x, self.bins))

    __call__ = forward

    def backward(self, grad_out: Tensor) -> Tensor:
        return self.net.backward(grad_out)


class InverterNet(AnonymizerNet):
    """Same architecture family as the anonymizer, trained to undo it."""

    kind = "inverter"


class AttackerNet(Model):
    """Conv encoder-decoder surrogate of an event-to-image reconstructor.

    One stride-2 encoder stage and a nearest-neighbour decoder stage; the
    sigmoid output keeps reconstructions inside [0, 1]. H and W must be even.
    """

    kind = "attacker"

    def __init__(self, bins: int = DEFAULT_BINS, seed: int = 0):
        if bins < 1:
            raise ValueError(f"Invalid bin count: {bins}. Must be >= 1.")
        rng = np.random.default_rng(seed)
        self.net = Network(
            self.kind,
            [
                ("enc1", Conv2d(bins, 16, 3, 1, 1, rng=rng, name="enc1")),
                ("act1", LeakyReLU()),
                ("enc2", Conv2d(16, 32, 3, 2, 1, rng=rng, name="enc2")),
                ("act2", LeakyReLU()),
                ("up", Upsample2x()),
                ("dec1", Conv2d(32, 16, 3, 1, 1, rng=rng, name="dec1")),
                ("act3", LeakyReLU()),
                ("dec2", Conv2d(16, 1, 3, 1, 1, rng=rng, name="dec2")),
                ("out", Sigmoid()),
            ],
        )
        super().__init__({"bins": bins}, [self.net])

    @property
    def bins(self) -> int:
        return int(self.config["bins"])

    def forward(self, x: Tensor) -> Tensor:
        x = self._check_input(x, self.bins)
        if x.shape[2] % 2 or x.shape[3] % 2:
            raise ShapeMismatchError("attacker input", ("N", self.bins, "even H", "even W"), x.shape)
        return self.net.forward(x)

    __call__ = forward

    def backward(self, grad_out: Tensor) -> Tensor:
        return self.net.backward(grad_out)


class ReIdNet(Model):
    """Conv trunk + global average pool + embedding, and an identity classifier.

    `in_channels` is the voxel bin count for event ReId or 1 for the
    image-domain retrieval embedder.
    """

    kind = "reid"

    def __init__(
        self,
        in_channels: int = DEFAULT_BINS,
        embedding_dim: int = DEFAULT_EMBEDDING_DIM,
        num_classes: int = 2,
        seed: int = 0,
    ):
        if in_channels < 1:
            raise ValueError(f"Invalid input channels: {in_channels}. Must be >= 1.")
        if embedding_dim < 1:
            raise ValueError(f"Invalid embedding dimension: {embedding_dim}. Must be >= 1.")
        if num_classes < 2:
            raise ValueError(f"Invalid class count: {num_classes}. Must be >= 2.")
        rng = np.random.default_rng(seed)
        self.trunk = Network(
            "reid_trunk",
            [
                ("conv1", Conv2d(in_channels, 16, 3, 1, 1, rng=rng, name="conv1")),
                ("act1", LeakyReLU()),
                ("conv2", Conv2d(16, 32, 3, 2, 1, rng=rng, name="conv2")),
                ("act2", LeakyReLU()),
                ("conv3", Conv2d(32, 64, 3, 2, 1, rng=rng, name="conv3")),
                ("act3", LeakyReLU()),
                ("pool", GlobalAvgPool()),
                ("embed", Linear(64, embedding_dim, rng=rng, name="embed")),
            ],
        )
        self.classifier = Network(
            "reid_classifier", [("fc", Linear(embedding_dim, num_classes, rng=rng, name="fc"))]
        )
        super().__init__(
            {"in_channels": in_channels, "embedding_dim": embedding_dim, "num_classes": num_classes},
            [self.trunk, self.classifier],
        )

    @property
    def in_channels(self) -> int:
        return int(self.config["in_channels"])

    @property
    def embedding_dim(self) -> int:
        return int(self.config["embedding_dim"])

    @property
    def num_classes(self) -> int:
        return int(self.config["num_classes"])

    def embed_batch(self, x: Tensor) -> Tensor:
        return self.trunk.forward(self._check_input(x, self.in_channels))

    def forward(self, x: Tensor) -> Tuple[Tensor, Tensor]:
        """Return (embeddings N x D, logits N x num_classes)."""
        embeddings = self.embed_batch(x)
        return embeddings, self.classifier.forward(embeddings)

    __call__ = forward

    def backward(self, grad_embeddings: Tensor, grad_logits: Optional[Tensor] = None) -> Tensor:
        grad = np.array(grad_embeddings, dtype=np.float64)
        if grad_logits is not None:
            grad = grad + self.classifier.backward(grad_logits)
        return self.trunk.backward(grad)

    def identity_loss(
        self, embeddings: Tensor, logits: Tensor, labels: np.ndarray, margin: float
    ) -> Tuple[float, Tensor, Tensor]:
        """Cross-entropy + batch-hard triplet; returns (loss, d_embeddings, d_logits)."""
        ce = softmax_cross_entropy(logits, labels)
        triplet = batch_hard_triplet(embeddings, labels, margin)
        return ce.value + triplet.value, triplet.grad, ce.grad


MODEL_TYPES: Dict[str, Type[Model]] = {
    cls.kind: cls for cls in (AnonymizerNet, AttackerNet, ReIdNet, InverterNet)
}


# ---------------------------------------------------------------------------
# Single-sample operations
# ---------------------------------------------------------------------------


def anonymize(model: AnonymizerNet, grid: VoxelGrid) -> VoxelGrid:
    out = model.forward(grid.data[None])[0]
    if not np.all(np.isfinite(out)):
        raise NumericalError("anonymizer produced non-finite values")
    return VoxelGrid(out, grid.t0, grid.T)


def reconstruct(model: AttackerNet, grid: VoxelGrid) -> GrayImage:
    return GrayImage(model.forward(grid.data[None])[0, 0])


def integrate_batch(x: Tensor) -> Tensor:
    """Non-learned attacker on N x B x H x W: |bin sum|, min-max per sample."""
    summed = np.abs(np.asarray(x, dtype=np.float64).sum(axis=1))
    lo = summed.min(axis=(1, 2), keepdims=True)
    hi = summed.max(axis=(1, 2), keepdims=True)
    span = hi - lo
    out = np.where(span > 0, (summed - lo) / np.where(span > 0, span, 1.0), 0.0)
    return out[:, None]


def integrate_reconstruct(grid: VoxelGrid) -> GrayImage:
    return GrayImage(integrate_batch(grid.data[None])[0, 0])


def l2_normalize(embeddings: Tensor) -> Tensor:
    e = np.atleast_2d(np.asarray(embeddings, dtype=np.float64))
    norms = np.linalg.norm(e, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise NumericalError("zero embedding cannot be L2-normalized")
    return e / norms


def embed(model: ReIdNet, grid: Union[VoxelGrid, GrayImage], normalize: bool = True) -> Tensor:
    x = grid.data[None] if isinstance(grid, VoxelGrid) else grid.pixels[None, None]
    e = model.embed_batch(x)
    return (l2_normalize(e) if normalize else e)[0]


def classify(model: ReIdNet, grid: VoxelGrid) -> Tensor:
    return model.forward(grid.data[None])[1][0]


def predict(fn: Any, x: Tensor, batch_size: int = 32) -> Tensor:
    """Apply a batch function in fixed-size chunks and stack the results."""
    if len(x) == 0:
        raise ValueError("cannot predict on an empty batch")
    return np.concatenate([fn(x[i : i + batch_size]) for i in range(0, len(x), batch_size)])


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def save_model(model: Model, path: Union[str, Path]) -> None:
    arrays = {name: p.value for name, p in model.named_parameters().items()}
    save_checkpoint(path, model.manifest(), arrays)
    logger.info(f"Saved {model.kind} checkpoint to {path}")


def _assign_weights(model: Model, manifest: Dict[str, Any], arrays: Dict[str, np.ndarray]) -> None:
    expected = model.named_parameters()
    for name, param in expected.items():
        if name not in arrays:
            raise CheckpointError("missing from checkpoint", parameter=name)
        value = arrays[name]
        if value.shape != param.shape:
            raise CheckpointError(
                f"shape mismatch: network expects {param.shape}, checkpoint has {value.shape}",
                parameter=name,
            )
    extra = sorted(set(arrays) - set(expected))
    if extra:
        raise CheckpointError("not part of the network definition", parameter=extra[0])

    for name, param in expected.items():
        param.value = arrays[name].copy()
        param.grad = np.zeros_like(param.value)
        param.momentum = np.zeros_like(param.value)

    frozen = {entry["name"]: entry["frozen"] for entry in manifest["networks"]}
    for net in model.networks:
        if frozen.get(net.name, False):
            net.freeze()
        else:
            net.unfreeze()


def load_model(path: Union[str, Path], into: Optional[Model] = None) -> Model:
    """Load a checkpoint into a fresh model, or into `into` after validation.

    Raises:
        CheckpointError: On format errors, unknown model kinds, architecture
            mismatch, or a parameter whose shape differs from the definition
    """
    manifest, arrays = load_checkpoint(path)
    kind = manifest["model"]
    if into is None:
        if kind not in MODEL_TYPES:
            raise CheckpointError(f"unknown model kind '{kind}' in {path}")
        try:
            model = MODEL_TYPES[kind].from_config(manifest["config"])
        except (TypeError, ValueError) as e:
            raise CheckpointError(f"invalid model config in {path}: {e}") from e
    else:
        if into.kind != kind:
            raise CheckpointError(f"{path} holds a '{kind}' model, expected '{into.kind}'")
        model = into
    _assign_weights(model, manifest, arrays)
    logger.info(f"Loaded {kind} checkpoint from {path}")
    return model


# ---------------------------------------------------------------------------
# Gradient-check suite
# ---------------------------------------------------------------------------


@dataclass
class GradCheckCase:
    name: str
    report: GradCheckReport
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.report.passed(self.tolerance)


PLAIN_TOLERANCE = 1e-4
SSIM_TOLERANCE = 1e-3


def _model_objective(forward_loss: Any, model: Model) -> Any:
    def objective(with_grad: bool) -> float:
        model.zero_grad()
        value, backward = forward_loss()
        if with_grad:
            backward()
        return value

    return objective


def gradcheck_suite(
    seed: int = 0,
    bins: int = DEFAULT_BINS,
    size: int = 16,
    embedding_dim: int = 8,
    max_entries: Optional[int] = 20,
) -> List[GradCheckCase]:
    """Finite-difference audit of every network through its training loss."""
    rng = np.random.default_rng(seed)
    cfg = SsimConfig(window_size=7)
    cases: List[GradCheckCase] = []

    # Two-layer conv net on a 1 x B x 8 x 8 input, sum-of-squares loss.
    pair = Network(
        "conv_pair",
        [
            ("conv1", Conv2d(bins, 4, 3, 1, 1, rng=rng, name="conv1")),
            ("act1", LeakyReLU()),
            ("conv2", Conv2d(4, 3, 3, 1, 1, rng=rng, name="conv2")),
        ],
    )
    x_small = rng.standard_normal((1, bins, 8, 8))

    def pair_loss() -> Tuple[float, Any]:
        y = pair.forward(x_small)
        return 0.5 * float(np.sum(y**2)), lambda: pair.backward(y)

    cases.append(
        GradCheckCase(
            "conv_pair",
            grad_check(_model_objective(pair_loss, Model({}, [pair])), pair.parameters(), rng=rng),
            PLAIN_TOLERANCE,
        )
    )

    voxels = np.tanh(rng.standard_normal((2, bins, size, size)))
    frames = rng.uniform(0.0, 1.0, (2, 1, size, size))

    anonymizer = AnonymizerNet(bins, seed=seed + 1)

    def struct_loss() -> Tuple[float, Any]:
        out = anonymizer.forward(voxels)
        result = ssim((out + 1.0) / 2.0, (voxels + 1.0) / 2.0, cfg)
        return 1.0 - result.value, lambda: anonymizer.backward(-0.5 * result.grad)

    cases.append(
        GradCheckCase(
            "anonymizer_struct",
            grad_check(_model_objective(struct_loss, anonymizer), anonymizer.parameters(), max_entries=max_entries, rng=rng),
            SSIM_TOLERANCE,
        )
    )

    attacker = AttackerNet(bins, seed=seed + 2)

    def rec_loss() -> Tuple[float, Any]:
        out = attacker.forward(voxels)
        result = ssim(out, frames, cfg)
        return result.value, lambda: attacker.backward(result.grad)

    cases.append(
        GradCheckCase(
            "attacker_rec",
            grad_check(_model_objective(rec_loss, attacker), attacker.parameters(), max_entries=max_entries, rng=rng),
            SSIM_TOLERANCE,
        )
    )

    reid = ReIdNet(bins, embedding_dim, num_classes=3, seed=seed + 3)
    reid_x = rng.standard_normal((4, bins, 8, 8))
    labels = np.array([0, 0, 1, 1])

    def reid_loss() -> Tuple[float, Any]:
        emb, logits = reid.forward(reid_x)
        value, d_emb, d_logits = reid.identity_loss(emb, logits, labels, margin=0.3)
        return value, lambda: reid.backward(d_emb, d_logits)

    cases.append(
        GradCheckCase(
            "reid_identity",
            grad_check(_model_objective(reid_loss, reid), reid.parameters(), max_entries=max_entries, rng=rng),
            PLAIN_TOLERANCE,
        )
    )

    inverter = InverterNet(bins, seed=seed + 4)
    attacker.freeze()

    def inversion_loss() -> Tuple[float, Any]:
        restored = inverter.forward(voxels)
        out = attacker.forward(restored)
        result = ssim(out, frames, cfg)

        def backward() -> None:
            inverter.backward(attacker.backward(-result.grad))

        return 1.0 - result.value, backward

    cases.append(
        GradCheckCase(
            "inverter_chain",
            grad_check(_model_objective(inversion_loss, inverter), inverter.parameters(), max_entries=max_entries, rng=rng),
            SSIM_TOLERANCE,
        )
    )

    image = Parameter("image", rng.uniform(0.0, 1.0, (size, size)))
    target = np.clip(image.value + 0.2 * rng.standard_normal((size, size)), 0.0, 1.0)

    def ssim_objective(with_grad: bool) -> float:
        image.zero_grad()
        result = ssim(image.value, target, cfg)
        if with_grad:
            image.accumulate(result.grad)
        return result.value

    cases.append(GradCheckCase("ssim_input", grad_check(ssim_objective, [image], rng=rng), SSIM_TOLERANCE))

    for case in cases:
        logger.info(
            f"gradcheck {case.name}: worst {case.report.worst:.3e} over "
            f"{case.report.entries_checked} entries (tolerance {case.tolerance:g})"
        )
    return cases
