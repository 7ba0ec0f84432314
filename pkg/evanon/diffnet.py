"""
Event Anonymization - Differentiable Compute Core

This module is the small numpy substrate the four networks are built on:
layers with explicit forward/backward passes, the identity losses, SGD with
momentum and weight decay, and a central finite-difference gradient checker.
All arrays are float64 and laid out (batch, channel, height, width).

Classes:
- Parameter - Value, gradient and momentum buffer of one trainable array
- Conv2d, LeakyReLU, Linear, GlobalAvgPool, Sigmoid, Upsample2x - Layers
- Network - Ordered, named layer list with a parameter registry
- OptimConfig - Learning rate, momentum, weight decay
- LossResult / TripletResult - Scalar loss plus gradient w.r.t. its input
- GradCheckReport - Per-parameter max relative error

Functions:
- conv2d_forward() / conv2d_backward() - Strided, zero-padded cross-correlation
- leaky_relu(), linear(), global_avg_pool() and their *_backward()
- softmax_cross_entropy() - Mean identity cross-entropy
- batch_hard_triplet() - Batch-hard triplet loss on L2-normalized embeddings
- sgd_step() - One momentum/weight-decay update of trainable parameters
- grad_check() / network_objective() - Finite-difference gradient audit
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import NumericalError, ShapeMismatchError

logger = logging.getLogger(__name__)

Tensor = np.ndarray

DEFAULT_SLOPE = 0.1


@dataclass(eq=False)
class Parameter:
    name: str
    value: Tensor
    trainable: bool = True
    grad: Tensor = field(init=False)
    momentum: Tensor = field(init=False)

    def __post_init__(self) -> None:
        self.value = np.ascontiguousarray(self.value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)
        self.momentum = np.zeros_like(self.value)

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(self.value.shape)

    def accumulate(self, grad: Tensor) -> None:
        """Add to the gradient; frozen parameters ignore the contribution."""
        if self.trainable:
            self.grad += grad

    def zero_grad(self) -> None:
        self.grad.fill(0.0)


def _kaiming(rng: np.random.Generator, shape: Tuple[int, ...], fan_in: int) -> Tensor:
    return rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)


# ---------------------------------------------------------------------------
# Functional ops
# ---------------------------------------------------------------------------


def _conv_windows(x: Tensor, k: int, stride: int, pad: int) -> Tensor:
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    return sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]


def _check_conv(x: Tensor, kernel: Tensor, bias: Tensor, stride: int, pad: int) -> None:
    if x.ndim != 4:
        raise ShapeMismatchError("conv2d input", ("N", "C", "H", "W"), x.shape)
    if kernel.ndim != 4 or kernel.shape[2] != kernel.shape[3]:
        raise ShapeMismatchError("conv2d kernel", ("O", "C", "k", "k"), kernel.shape)
    if x.shape[1] != kernel.shape[1]:
        raise ShapeMismatchError(
            "conv2d input", (x.shape[0], kernel.shape[1], "H", "W"), x.shape
        )
    if bias.shape != (kernel.shape[0],):
        raise ShapeMismatchError("conv2d bias", (kernel.shape[0],), bias.shape)
    if stride < 1 or pad < 0:
        raise ValueError(f"invalid conv2d stride={stride} pad={pad}")
    k = kernel.shape[2]
    if x.shape[2] + 2 * pad < k or x.shape[3] + 2 * pad < k:
        raise ShapeMismatchError(
            "conv2d input", (x.shape[0], x.shape[1], f">={k - 2 * pad}", f">={k - 2 * pad}"), x.shape
        )


def conv2d_forward(x: Tensor, kernel: Tensor, bias: Tensor, stride: int = 1, pad: int = 1) -> Tensor:
    _check_conv(x, kernel, bias, stride, pad)
    windows = _conv_windows(x, kernel.shape[2], stride, pad)
    out = np.tensordot(windows, kernel, axes=([1, 4, 5], [1, 2, 3]))
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2)) + bias[None, :, None, None]


def conv2d_backward(
    grad_out: Tensor, x: Tensor, kernel: Tensor, stride: int = 1, pad: int = 1
) -> Tuple[Tensor, Tensor, Tensor]:
    """Return (grad_input, grad_kernel, grad_bias) of conv2d_forward."""
    k = kernel.shape[2]
    windows = _conv_windows(x, k, stride, pad)
    n, _, ho, wo = grad_out.shape
    if windows.shape[2:4] != (ho, wo):
        raise ShapeMismatchError("conv2d grad_out", (n, kernel.shape[0]) + windows.shape[2:4], grad_out.shape)
    grad_bias = grad_out.sum(axis=(0, 2, 3))
    grad_kernel = np.tensordot(grad_out, windows, axes=([0, 2, 3], [0, 2, 3]))
    cols = np.tensordot(grad_out, kernel, axes=([1], [0]))  # N, Ho, Wo, C, k, k
    h, w = x.shape[2], x.shape[3]
    grad_padded = np.zeros((n, x.shape[1], h + 2 * pad, w + 2 * pad), dtype=np.float64)
    row_end = stride * (ho - 1) + 1
    col_end = stride * (wo - 1) + 1
    for i in range(k):
        for j in range(k):
            grad_padded[:, :, i : i + row_end : stride, j : j + col_end : stride] += cols[
                :, :, :, :, i, j
            ].transpose(0, 3, 1, 2)
    grad_input = grad_padded[:, :, pad : pad + h, pad : pad + w]
    return np.ascontiguousarray(grad_input), grad_kernel, grad_bias


def leaky_relu(x: Tensor, slope: float = DEFAULT_SLOPE) -> Tensor:
    return np.where(x > 0, x, slope * x)


def leaky_relu_backward(grad_out: Tensor, x: Tensor, slope: float = DEFAULT_SLOPE) -> Tensor:
    return np.where(x > 0, grad_out, slope * grad_out)


def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    if x.ndim != 2 or x.shape[1] != weight.shape[0]:
        raise ShapeMismatchError("linear input", ("N", weight.shape[0]), x.shape)
    return x @ weight + bias


def linear_backward(grad_out: Tensor, x: Tensor, weight: Tensor) -> Tuple[Tensor, Tensor, Tensor]:
    return grad_out @ weight.T, x.T @ grad_out, grad_out.sum(axis=0)


def global_avg_pool(x: Tensor) -> Tensor:
    if x.ndim != 4:
        raise ShapeMismatchError("global_avg_pool input", ("N", "C", "H", "W"), x.shape)
    return x.mean(axis=(2, 3))


def global_avg_pool_backward(grad_out: Tensor, input_shape: Tuple[int, ...]) -> Tensor:
    h, w = input_shape[2], input_shape[3]
    return np.broadcast_to(grad_out[:, :, None, None] / (h * w), input_shape).copy()


# ---------------------------------------------------------------------------
# Layers
# ---------------------------------------------------------------------------


class Layer:
    kind = "layer"

    def forward(self, x: Tensor) -> Tensor:
        raise NotImplementedError

    def backward(self, grad_out: Tensor) -> Tensor:
        raise NotImplementedError

    def parameters(self) -> List[Parameter]:
        return []

    def describe(self) -> Dict[str, Any]:
        return {"type": self.kind}


class Conv2d(Layer):
    kind = "conv2d"

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel: int = 3,
        stride: int = 1,
        pad: int = 1,
        rng: Optional[np.random.Generator] = None,
        name: str = "conv",
    ):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel = kernel
        self.stride = stride
        self.pad = pad
        fan_in = in_channels * kernel * kernel
        self.weight = Parameter(f"{name}.weight", _kaiming(rng, (out_channels, in_channels, kernel, kernel), fan_in))
        self.bias = Parameter(f"{name}.bias", np.zeros(out_channels))
        self._x: Optional[Tensor] = None

    def forward(self, x: Tensor) -> Tensor:
        self._x = x
        return conv2d_forward(x, self.weight.value, self.bias.value, self.stride, self.pad)

    def backward(self, grad_out: Tensor) -> Tensor:
        grad_in, grad_w, grad_b = conv2d_backward(grad_out, self._x, self.weight.value, self.stride, self.pad)
        self.weight.accumulate(grad_w)
        self.bias.accumulate(grad_b)
        return grad_in

    def parameters(self) -> List[Parameter]:
        return [self.weight, self.bias]

    def describe(self) -> Dict[str, Any]:
        return {
            "type": self.kind,
            "in_channels": self.in_channels,
            "out_channels": self.out_channels,
            "kernel": self.kernel,
            "stride": self.stride,
            "pad": self.pad,
        }


class LeakyReLU(Layer):
    kind = "leaky_relu"

    def __init__(self, slope: float = DEFAULT_SLOPE):
        self.slope = slope
        self._x: Optional[Tensor] = None

    def forward(self, x: Tensor) -> Tensor:
        self._x = x
        return leaky_relu(x, self.slope)

    def backward(self, grad_out: Tensor) -> Tensor:
        return leaky_relu_backward(grad_out, self._x, self.slope)

    def describe(self) -> Dict[str, Any]:
        return {"type": self.kind, "slope": self.slope}


class Linear(Layer):
    kind = "linear"

    def __init__(
        self,
        in_features: int,
        out_features: int,
        rng: Optional[np.random.Generator] = None,
        name: str = "linear",
    ):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.in_features = in_features
        self.out_features = out_features
        self.weight = Parameter(f"{name}.weight", _kaiming(rng, (in_features, out_features), in_features))
        self.bias = Parameter(f"{name}.bias", np.zeros(out_features))
        self._x: Optional[Tensor] = None

    def forward(self, x: Tensor) -> Tensor:
        self._x = x
        return linear(x, self.weight.value, self.bias.value)

    def backward(self, grad_out: Tensor) -> Tensor:
        grad_in, grad_w, grad_b = linear_backward(grad_out, self._x, self.weight.value)
        self.weight.accumulate(grad_w)
        self.bias.accumulate(grad_b)
        return grad_in

    def parameters(self) -> List[Parameter]:
        return [self.weight, self.bias]

    def describe(self) -> Dict[str, Any]:
        return {"type": self.kind, "in_features": self.in_features, "out_features": self.out_features}


class GlobalAvgPool(Layer):
    kind = "global_avg_pool"

    def __init__(self) -> None:
        self._shape: Tuple[int, ...] = ()

    def forward(self, x: Tensor) -> Tensor:
        self._shape = x.shape
        return global_avg_pool(x)

    def backward(self, grad_out: Tensor) -> Tensor:
        return global_avg_pool_backward(grad_out, self._shape)


class Sigmoid(Layer):
    """Smooth squashing onto [0, 1]."""

    kind = "sigmoid"

    def __init__(self) -> None:
        self._y: Optional[Tensor] = None

    def forward(self, x: Tensor) -> Tensor:
        self._y = 0.5 * (1.0 + np.tanh(0.5 * x))
        return self._y

    def backward(self, grad_out: Tensor) -> Tensor:
        return grad_out * self._y * (1.0 - self._y)


class Upsample2x(Layer):
    """Nearest-neighbour 2x spatial upsampling."""

    kind = "upsample2x"

    def forward(self, x: Tensor) -> Tensor:
        return x.repeat(2, axis=2).repeat(2, axis=3)

    def backward(self, grad_out: Tensor) -> Tensor:
        n, c, h, w = grad_out.shape
        return grad_out.reshape(n, c, h // 2, 2, w // 2, 2).sum(axis=(3, 5))


class Network:
    """Ordered list of named layers sharing one parameter registry."""

    def __init__(self, name: str, layers: Sequence[Tuple[str, Layer]]):
        names = [n for n, _ in layers]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate layer names in network '{name}': {names}")
        self.name = name
        self.layers: List[Tuple[str, Layer]] = list(layers)

    def forward(self, x: Tensor) -> Tensor:
        for _, layer in self.layers:
            x = layer.forward(x)
        return x

    __call__ = forward

    def backward(self, grad_out: Tensor) -> Tensor:
        for _, layer in reversed(self.layers):
            grad_out = layer.backward(grad_out)
        return grad_out

    def parameters(self) -> List[Parameter]:
        return [p for _, layer in self.layers for p in layer.parameters()]

    def named_parameters(self) -> Dict[str, Parameter]:
        return {f"{self.name}.{p.name}": p for p in self.parameters()}

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def freeze(self) -> "Network":
        for p in self.parameters():
            p.trainable = False
            p.zero_grad()
        return self

    def unfreeze(self) -> "Network":
        for p in self.parameters():
            p.trainable = True
        return self

    @property
    def frozen(self) -> bool:
        params = self.parameters()
        return bool(params) and not any(p.trainable for p in params)

    def architecture(self) -> List[Dict[str, Any]]:
        return [{"name": n, **layer.describe()} for n, layer in self.layers]


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------


@dataclass
class LossResult:
    value: float
    grad: Tensor


@dataclass
class TripletResult(LossResult):
    per_anchor: Tensor = field(default_factory=lambda: np.zeros(0))


def softmax_cross_entropy(logits: Tensor, labels: Iterable[int]) -> LossResult:
    """Mean of -log softmax(logits)[label]; gradient is (softmax - onehot) / N."""
    logits = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    n, classes = logits.shape
    if labels.shape != (n,):
        raise ShapeMismatchError("cross-entropy labels", (n,), labels.shape)
    if np.any(labels < 0) or np.any(labels >= classes):
        raise ValueError(f"labels must lie in [0, {classes})")
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_norm
    rows = np.arange(n)
    value = float(-log_probs[rows, labels].mean())
    grad = np.exp(log_probs)
    grad[rows, labels] -= 1.0
    return LossResult(value, grad / n)


def batch_hard_triplet(
    embeddings: Tensor, labels: Iterable[int], margin: float = 0.3, normalize: bool = True
) -> TripletResult:
    """Batch-hard triplet loss averaged over anchors that have a positive.

    Per anchor: max(0, d(hardest positive) - d(hardest negative) + margin)
    on Euclidean distances, after L2 normalization when `normalize` is set.
    Anchors without a positive report NaN in `per_anchor`.

    Raises:
        ValueError: If the batch holds a single identity or no identity
            with two samples
    """
    e = np.asarray(embeddings, dtype=np.float64)
    labels = np.asarray(labels)
    n = e.shape[0]
    if labels.shape != (n,):
        raise ShapeMismatchError("triplet labels", (n,), labels.shape)
    if np.unique(labels).size < 2:
        raise ValueError("batch-hard triplet needs at least two identities (no negatives)")

    if normalize:
        norms = np.linalg.norm(e, axis=1, keepdims=True)
        if np.any(norms == 0):
            raise NumericalError("zero embedding cannot be L2-normalized")
        f = e / norms
    else:
        f = e

    diff = f[:, None, :] - f[None, :, :]
    dist = np.sqrt(np.maximum((diff**2).sum(axis=-1), 1e-24))
    same = labels[:, None] == labels[None, :]
    positive = same & ~np.eye(n, dtype=bool)
    negative = ~same
    anchors = np.flatnonzero(positive.any(axis=1))
    if anchors.size == 0:
        raise ValueError("batch-hard triplet needs an identity with at least two samples")

    hardest_pos = np.argmax(np.where(positive, dist, -np.inf), axis=1)
    hardest_neg = np.argmin(np.where(negative, dist, np.inf), axis=1)
    rows = np.arange(n)
    hinge = dist[rows, hardest_pos] - dist[rows, hardest_neg] + margin
    per_anchor = np.full(n, np.nan)
    per_anchor[anchors] = np.maximum(hinge[anchors], 0.0)
    value = float(per_anchor[anchors].mean())

    grad_f = np.zeros_like(f)
    active = anchors[hinge[anchors] > 0]
    scale = 1.0 / anchors.size
    for j_of, sign in ((hardest_pos, 1.0), (hardest_neg, -1.0)):
        j = j_of[active]
        unit = (f[active] - f[j]) / dist[active, j][:, None]
        np.add.at(grad_f, active, sign * scale * unit)
        np.add.at(grad_f, j, -sign * scale * unit)

    if normalize:
        radial = (f * grad_f).sum(axis=1, keepdims=True)
        grad = (grad_f - f * radial) / norms
    else:
        grad = grad_f
    return TripletResult(value, grad, per_anchor)


# ---------------------------------------------------------------------------
# Optimizer
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class OptimConfig:
    lr: float = 0.001
    momentum: float = 0.9
    weight_decay: float = 5e-4

    def __post_init__(self) -> None:
        if not self.lr > 0:
            raise ValueError(f"Invalid learning rate: {self.lr}. Must be > 0.")
        if not 0 <= self.momentum < 1:
            raise ValueError(f"Invalid momentum: {self.momentum}. Must be in [0, 1).")
        if not self.weight_decay >= 0:
            raise ValueError(f"Invalid weight decay: {self.weight_decay}. Must be >= 0.")


def sgd_step(params: Iterable[Parameter], config: OptimConfig) -> None:
    """v <- mu*v + (g + wd*w); w <- w - lr*v; then zero all gradients."""
    for p in params:
        if not p.trainable:
            p.zero_grad()
            continue
        g = p.grad + config.weight_decay * p.value
        p.momentum *= config.momentum
        p.momentum += g
        p.value -= config.lr * p.momentum
        p.zero_grad()


# ---------------------------------------------------------------------------
# Gradient check
# ---------------------------------------------------------------------------


# Above this share of kink-classified entries a check fails outright.
MAX_SKIPPED_FRACTION = 0.1


@dataclass
class GradCheckReport:
    max_rel_error: Dict[str, float] = field(default_factory=dict)
    max_abs_grad: Dict[str, float] = field(default_factory=dict)
    entries_checked: int = 0
    entries_skipped: int = 0

    @property
    def worst(self) -> float:
        return max(self.max_rel_error.values(), default=0.0)

    @property
    def skipped_fraction(self) -> float:
        total = self.entries_checked + self.entries_skipped
        return self.entries_skipped / total if total else 0.0

    def passed(self, tolerance: float, max_skipped_fraction: float = MAX_SKIPPED_FRACTION) -> bool:
        return self.worst < tolerance and self.skipped_fraction <= max_skipped_fraction

    def merge(self, other: "GradCheckReport", prefix: str = "") -> "GradCheckReport":
        for k, v in other.max_rel_error.items():
            self.max_rel_error[prefix + k] = v
        for k, v in other.max_abs_grad.items():
            self.max_abs_grad[prefix + k] = v
        self.entries_checked += other.entries_checked
        self.entries_skipped += other.entries_skipped
        return self


Objective = Callable[[bool], float]


def _rel(a: float, b: float, floor: float) -> float:
    return abs(a - b) / max(abs(a), abs(b), floor)


def grad_check(
    objective: Objective,
    params: Sequence[Parameter],
    h: float = 1e-5,
    max_entries: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
    floor: float = 1e-6,
    kink_floor: float = 1e-7,
) -> GradCheckReport:
    """Compare analytic gradients with central differences.

    `objective(True)` must zero gradients, run forward + backward and return
    the loss; `objective(False)` only returns the loss. Relative error is
    |a - n| / max(|a|, |n|, floor). Frozen parameters are skipped.

    An entry whose one-sided differences disagree by more than its central
    error (when that error exceeds `kink_floor`) straddles a kink such as a
    leaky-relu corner or a hinge. It is counted in `entries_skipped`
    instead of the error statistics. `passed` fails a report whose skipped
    share exceeds MAX_SKIPPED_FRACTION.
    """
    trainable = [p for p in params if p.trainable]
    f0 = objective(True)
    analytic = {p.name: p.grad.copy() for p in trainable}
    report = GradCheckReport()
    rng = rng if rng is not None else np.random.default_rng(0)
    for p in trainable:
        flat = p.value.reshape(-1)
        indices = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            indices = np.sort(rng.choice(flat.size, size=max_entries, replace=False))
        a_flat = analytic[p.name].reshape(-1)
        worst = 0.0
        checked = 0
        for idx in indices:
            orig = flat[idx]
            flat[idx] = orig + h
            f_plus = objective(False)
            flat[idx] = orig - h
            f_minus = objective(False)
            flat[idx] = orig
            numeric = (f_plus - f_minus) / (2.0 * h)
            a = a_flat[idx]
            err = _rel(a, numeric, floor)
            one_sided = _rel((f_plus - f0) / h, (f0 - f_minus) / h, floor)
            if err > kink_floor and one_sided > err:
                report.entries_skipped += 1
                continue
            worst = max(worst, err)
            checked += 1
        report.max_rel_error[p.name] = float(worst)
        report.max_abs_grad[p.name] = float(np.max(np.abs(a_flat), initial=0.0))
        report.entries_checked += checked
    logger.debug(
        f"Gradient check over {report.entries_checked} entries "
        f"({report.entries_skipped} at kinks), worst {report.worst:.3e}"
    )
    return report


def network_objective(
    network: Network, x: Tensor, loss_fn: Callable[[Tensor], LossResult]
) -> Objective:
    def objective(with_grad: bool) -> float:
        if not with_grad:
            return loss_fn(network.forward(x)).value
        network.zero_grad()
        result = loss_fn(network.forward(x))
        network.backward(result.grad)
        return result.value

    return objective
