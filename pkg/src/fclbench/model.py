"""Minimal dense classifier with exact analytic gradients.

The model is a fully connected ReLU network ending in a linear layer whose
logits feed a masked softmax cross-entropy. Parameters live in one flat
float64 vector so that optimizer steps, aggregation, and regularizers can
treat the model as a plain vector. All functions here are pure: they never
mutate their inputs and are bit-deterministic for identical arguments.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, NumericError, WorkloadError

# Added to inactive logits before softmax. Large enough that exp() underflows
# to zero, finite enough that gradients stay well defined.
MASK_FILL = -1e9

DEFAULT_HIDDEN = (32, 32)


@dataclass
class ModelParams:
    """Flat parameter vector plus the layer shapes needed to interpret it.

    ``shapes`` alternates weight matrices ``(rows, cols)`` and bias vectors
    ``(cols,)``; consecutive layers must chain (cols of one weight equals rows
    of the next).
    """

    values: np.ndarray
    shapes: tuple[tuple[int, ...], ...]
    num_classes: int
    input_dim: int

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.float64)
        self.shapes = tuple(tuple(s) for s in self.shapes)
        if len(self.shapes) == 0 or len(self.shapes) % 2 != 0:
            raise ConfigurationError("shapes must alternate weight and bias entries")
        expect_in = self.input_dim
        for w_shape, b_shape in zip(self.shapes[0::2], self.shapes[1::2]):
            if len(w_shape) != 2 or len(b_shape) != 1 or w_shape[1] != b_shape[0]:
                raise ConfigurationError(f"incompatible layer shapes {w_shape} / {b_shape}")
            if w_shape[0] != expect_in:
                raise ConfigurationError(
                    f"layer input dimension {w_shape[0]} does not chain from {expect_in}"
                )
            expect_in = w_shape[1]
        if expect_in != self.num_classes:
            raise ConfigurationError(
                f"last layer width {expect_in} does not match num_classes {self.num_classes}"
            )
        total = sum(int(np.prod(s)) for s in self.shapes)
        if self.values.size != total:
            raise ConfigurationError(
                f"parameter vector has {self.values.size} entries, shapes require {total}"
            )

    def layer_views(self) -> list[tuple[np.ndarray, np.ndarray]]:
        """Per-layer (weight, bias) views into the flat vector."""
        out = []
        offset = 0
        for w_shape, b_shape in zip(self.shapes[0::2], self.shapes[1::2]):
            w_size = w_shape[0] * w_shape[1]
            w = self.values[offset : offset + w_size].reshape(w_shape)
            offset += w_size
            b = self.values[offset : offset + b_shape[0]]
            offset += b_shape[0]
            out.append((w, b))
        return out


@dataclass
class Batch:
    """A minibatch of training rows: inputs ``(n, input_dim)`` and integer labels."""

    inputs: np.ndarray
    labels: np.ndarray

    def __post_init__(self) -> None:
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.inputs.ndim != 2:
            raise ConfigurationError("batch inputs must be a 2-d matrix")
        if self.inputs.shape[0] != self.labels.shape[0]:
            raise ConfigurationError("batch inputs and labels disagree on row count")
        if self.inputs.shape[0] < 1:
            raise ConfigurationError("batch must contain at least one example")

    def __len__(self) -> int:
        return self.inputs.shape[0]


@dataclass
class ClassMask:
    """Boolean vector marking which output classes may receive probability mass."""

    active: np.ndarray = field()

    def __post_init__(self) -> None:
        self.active = np.asarray(self.active, dtype=bool)
        if self.active.ndim != 1 or not self.active.any():
            raise ConfigurationError("class mask must be 1-d with at least one active class")

    @classmethod
    def all_active(cls, num_classes: int) -> "ClassMask":
        return cls(np.ones(num_classes, dtype=bool))


def init_params(
    input_dim: int,
    num_classes: int,
    hidden_sizes: tuple[int, ...] = DEFAULT_HIDDEN,
    rng: np.random.Generator | None = None,
) -> ModelParams:
    """Create Glorot-uniform weights and zero biases from a seeded generator."""
    if input_dim < 1 or num_classes < 1:
        raise ConfigurationError("input_dim and num_classes must be positive")
    if rng is None:
        rng = np.random.default_rng(0)
    widths = (input_dim, *hidden_sizes, num_classes)
    shapes: list[tuple[int, ...]] = []
    chunks: list[np.ndarray] = []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        chunks.append(rng.uniform(-bound, bound, size=fan_in * fan_out))
        chunks.append(np.zeros(fan_out))
        shapes.append((fan_in, fan_out))
        shapes.append((fan_out,))
    return ModelParams(np.concatenate(chunks), tuple(shapes), num_classes, input_dim)


def _forward_cached(params: ModelParams, inputs: np.ndarray):
    """Forward pass keeping pre-activations and activations for backprop."""
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.ndim != 2 or inputs.shape[1] != params.input_dim:
        raise ConfigurationError(
            f"inputs have {inputs.shape[-1] if inputs.ndim == 2 else '?'} columns, "
            f"model expects {params.input_dim}"
        )
    layers = params.layer_views()
    activations = [inputs]
    pre_acts = []
    a = inputs
    for i, (w, b) in enumerate(layers):
        z = a @ w + b
        pre_acts.append(z)
        a = z if i == len(layers) - 1 else np.maximum(z, 0.0)
        activations.append(a)
    return activations, pre_acts


def forward(params: ModelParams, inputs: np.ndarray) -> np.ndarray:
    """Logits ``(n, num_classes)`` for a batch of inputs."""
    activations, _ = _forward_cached(params, inputs)
    return activations[-1]


def _masked_log_softmax(logits: np.ndarray, mask: ClassMask) -> np.ndarray:
    if mask.active.shape[0] != logits.shape[1]:
        raise ConfigurationError("mask length does not match number of classes")
    z = np.where(mask.active, logits, MASK_FILL)
    z_max = z.max(axis=1, keepdims=True)
    shifted = z - z_max
    log_norm = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    return shifted - log_norm


def loss_and_grad(params: ModelParams, batch: Batch, mask: ClassMask) -> tuple[float, np.ndarray]:
    """Mean masked softmax cross-entropy and its gradient w.r.t. ``params.values``.

    Inactive classes have their logits replaced by a large negative constant,
    so they carry zero probability and zero gradient. Labels must belong to
    the active set; anything else signals a schedule/window inconsistency.
    """
    if not np.all(mask.active[batch.labels]):
        bad = batch.labels[~mask.active[batch.labels]][0]
        raise WorkloadError(f"label {int(bad)} is outside the active class mask")
    activations, pre_acts = _forward_cached(params, batch.inputs)
    logits = activations[-1]
    log_probs = _masked_log_softmax(logits, mask)
    n = len(batch)
    rows = np.arange(n)
    loss = float(-log_probs[rows, batch.labels].mean())

    # Backward pass. Inactive classes end with probability exactly zero, so
    # d_logits vanishes there without special handling.
    probs = np.exp(log_probs)
    d_logits = probs
    d_logits[rows, batch.labels] -= 1.0
    d_logits /= n

    layers = params.layer_views()
    grads: list[np.ndarray | None] = [None] * (2 * len(layers))
    delta = d_logits
    for i in range(len(layers) - 1, -1, -1):
        w, _ = layers[i]
        a_prev = activations[i]
        grads[2 * i] = (a_prev.T @ delta).ravel()
        grads[2 * i + 1] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ w.T) * (pre_acts[i - 1] > 0.0)
    return loss, np.concatenate(grads)


def per_example_grads(params: ModelParams, batch: Batch, mask: ClassMask) -> np.ndarray:
    """Matrix ``(n, num_params)`` of single-example loss gradients.

    Uses einsum outer products instead of the batch-mean matmul path, which
    keeps it an independent route for estimators built on squared gradients.
    """
    if not np.all(mask.active[batch.labels]):
        raise WorkloadError("label outside the active class mask")
    activations, pre_acts = _forward_cached(params, batch.inputs)
    log_probs = _masked_log_softmax(activations[-1], mask)
    n = len(batch)
    d_logits = np.exp(log_probs)
    d_logits[np.arange(n), batch.labels] -= 1.0

    layers = params.layer_views()
    grads: list[np.ndarray | None] = [None] * (2 * len(layers))
    delta = d_logits
    for i in range(len(layers) - 1, -1, -1):
        w, _ = layers[i]
        a_prev = activations[i]
        grads[2 * i] = np.einsum("nr,nc->nrc", a_prev, delta).reshape(n, -1)
        grads[2 * i + 1] = delta
        if i > 0:
            delta = (delta @ w.T) * (pre_acts[i - 1] > 0.0)
    return np.concatenate(grads, axis=1)


def predict(params: ModelParams, inputs: np.ndarray, mask: ClassMask) -> np.ndarray:
    """Argmax class per row, restricted to the active classes."""
    logits = forward(params, inputs)
    if mask.active.shape[0] != logits.shape[1]:
        raise ConfigurationError("mask length does not match number of classes")
    return np.where(mask.active, logits, MASK_FILL).argmax(axis=1)


def sgd_step(params: ModelParams, grad: np.ndarray, lr: float) -> ModelParams:
    """One plain SGD step: ``values - lr * grad``."""
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != params.values.shape:
        raise ConfigurationError("gradient length does not match parameter vector")
    if lr <= 0.0:
        raise ConfigurationError("learning rate must be positive")
    if not np.all(np.isfinite(grad)):
        raise NumericError("non-finite gradient entries; aborting round")
    return ModelParams(params.values - lr * grad, params.shapes, params.num_classes, params.input_dim)
