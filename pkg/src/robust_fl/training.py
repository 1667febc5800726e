"""
training.py
Date: 07/10/2026
--------------------------------------------------------#
Description: The client-side model: a fully connected network with leaky-ReLU
hidden layers and softmax cross-entropy, trained by plain mini-batch SGD.

- init_model / forward / backward: the network itself
- local_train: what one client does in one round
- flatten / unflatten: parameters <-> the flat update vector the server sees
- evaluate: accuracy and loss of the global model

Notes:
Weights are stored (fan_in, fan_out) so a layer is X @ W + b. The flat order is
layer by layer, each layer's weight matrix row-major followed by its bias.
--------------------------------------------------------#
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np
from scipy.special import log_softmax, softmax

from .data import Dataset

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ModelLayout:
    layer_sizes: Tuple[int, ...]
    leaky_slope: float = 0.2

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        if len(sizes) < 2:
            raise ValueError(f"layer_sizes needs at least 2 entries, got {list(sizes)}")
        if min(sizes) < 1:
            raise ValueError(f"layer sizes must be >= 1, got {list(sizes)}")
        object.__setattr__(self, "layer_sizes", sizes)

    @property
    def shapes(self) -> List[Tuple[int, int]]:
        return list(zip(self.layer_sizes[:-1], self.layer_sizes[1:]))

    @property
    def n_params(self) -> int:
        return sum(fan_in * fan_out + fan_out for fan_in, fan_out in self.shapes)


@dataclass
class ModelParams:
    """
    Weights and biases of every layer. Gradients reuse the same structure.
    """

    layout: ModelLayout
    weights: List[np.ndarray] = field(default_factory=list)
    biases: List[np.ndarray] = field(default_factory=list)

    def copy(self) -> "ModelParams":
        return ModelParams(self.layout, [w.copy() for w in self.weights], [b.copy() for b in self.biases])


@dataclass(frozen=True)
class TrainConfig:
    local_epochs: int = 5
    batch_size: int = 32
    learning_rate: float = 0.01

    def __post_init__(self):
        if self.local_epochs < 1:
            raise ValueError(f"local_epochs must be >= 1, got {self.local_epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.learning_rate < 0:
            raise ValueError(f"learning_rate must be >= 0, got {self.learning_rate}")


def init_model(layout: ModelLayout, rng: np.random.Generator) -> ModelParams:
    """
    Glorot-uniform weights, zero biases.
    """
    weights, biases = [], []
    for fan_in, fan_out in layout.shapes:
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return ModelParams(layout, weights, biases)


def leaky_relu(x: np.ndarray, slope: float) -> np.ndarray:
    return np.where(x > 0, x, slope * x)


def forward(params: ModelParams, features: np.ndarray) -> Tuple[np.ndarray, List[np.ndarray]]:
    """
    Run a batch through the network.

    Returns:
        (logits, cache) where cache[l] is the input to layer l and the last
        entry holds the pre-activations of every hidden layer.
    """
    x = np.atleast_2d(np.asarray(features, dtype=float))
    expected = params.layout.layer_sizes[0]
    if x.shape[1] != expected:
        raise ValueError(f"Feature dimension {x.shape[1]} does not match input layer size {expected}")

    slope = params.layout.leaky_slope
    inputs = [x]
    pre_activations = []
    n_layers = len(params.weights)
    for layer, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = inputs[-1] @ w + b
        if layer == n_layers - 1:
            return z, inputs + [pre_activations]
        pre_activations.append(z)
        inputs.append(leaky_relu(z, slope))
    raise ValueError("Model has no layers")


def backward(params: ModelParams, features: np.ndarray, labels: np.ndarray) -> ModelParams:
    """
    Gradient of the mean softmax cross-entropy over the batch.
    """
    logits, cache = forward(params, features)
    inputs, pre_activations = cache[:-1], cache[-1]
    labels = np.asarray(labels, dtype=np.int64)
    batch = logits.shape[0]

    delta = softmax(logits, axis=1)
    delta[np.arange(batch), labels] -= 1.0
    delta /= batch

    slope = params.layout.leaky_slope
    grad_w = [np.empty(0)] * len(params.weights)
    grad_b = [np.empty(0)] * len(params.biases)
    for layer in range(len(params.weights) - 1, -1, -1):
        grad_w[layer] = inputs[layer].T @ delta
        grad_b[layer] = delta.sum(axis=0)
        if layer > 0:
            delta = delta @ params.weights[layer].T
            delta = delta * np.where(pre_activations[layer - 1] > 0, 1.0, slope)
    return ModelParams(params.layout, grad_w, grad_b)


def cross_entropy(logits: np.ndarray, labels: np.ndarray) -> float:
    log_probs = log_softmax(logits, axis=1)
    return float(-log_probs[np.arange(labels.shape[0]), labels].mean())


def sgd_epochs(params: ModelParams, dataset: Dataset, cfg: TrainConfig,
               rng: np.random.Generator) -> Tuple[ModelParams, List[float]]:
    """
    Train a private copy of `params` for cfg.local_epochs epochs.

    Returns:
        (trained params, mean batch loss of each epoch)
    """
    if len(dataset) == 0:
        raise ValueError("Cannot train on an empty shard")
    local = params.copy()
    epoch_losses = []
    for _ in range(cfg.local_epochs):
        order = rng.permutation(len(dataset))
        losses = []
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            x, y = dataset.features[batch], dataset.labels[batch]
            logits, _ = forward(local, x)
            losses.append(cross_entropy(logits, y))
            grads = backward(local, x, y)
            for layer in range(len(local.weights)):
                local.weights[layer] -= cfg.learning_rate * grads.weights[layer]
                local.biases[layer] -= cfg.learning_rate * grads.biases[layer]
        epoch_losses.append(float(np.mean(losses)))
    return local, epoch_losses


def local_train(global_params: ModelParams, shard: Dataset, cfg: TrainConfig,
                rng: np.random.Generator) -> np.ndarray:
    """
    One client's round: SGD from the global model, returning the full flattened
    parameter vector (not a delta).
    """
    trained, _ = sgd_epochs(global_params, shard, cfg, rng)
    return flatten(trained)


def flatten(params: ModelParams) -> np.ndarray:
    parts = []
    for w, b in zip(params.weights, params.biases):
        parts.append(w.ravel())
        parts.append(b.ravel())
    return np.concatenate(parts)


def unflatten(vector: Sequence[float], layout: ModelLayout) -> ModelParams:
    """
    Inverse of flatten for the given layout.

    Raises:
        ValueError: if the vector length does not match layout.n_params.
    """
    vector = np.asarray(vector, dtype=float).ravel()
    if vector.size != layout.n_params:
        raise ValueError(f"Vector has {vector.size} entries, layout {list(layout.layer_sizes)} needs {layout.n_params}")
    weights, biases = [], []
    offset = 0
    for fan_in, fan_out in layout.shapes:
        weights.append(vector[offset:offset + fan_in * fan_out].reshape(fan_in, fan_out).copy())
        offset += fan_in * fan_out
        biases.append(vector[offset:offset + fan_out].copy())
        offset += fan_out
    return ModelParams(layout, weights, biases)


def evaluate(params: ModelParams, dataset: Dataset) -> Tuple[float, float]:
    """
    Returns:
        (accuracy, mean cross-entropy loss); argmax ties go to the lower class.
    """
    logits, _ = forward(params, dataset.features)
    predictions = np.argmax(logits, axis=1)
    accuracy = float(np.mean(predictions == dataset.labels))
    return accuracy, cross_entropy(logits, dataset.labels)
