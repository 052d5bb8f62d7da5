"""Minimal feed-forward network on a flat parameter vector.

The whole model lives in a single float64 vector so that clients can chunk
it onto subcarriers and aggregate it coordinate-wise. Layout is fixed:
for each layer, the weight matrix (in x out, row-major) followed by the
bias vector. Forward, loss, gradient and the sampled-label diagonal
curvature estimate are all pure functions of (params, arch, data).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class MlpArch:
    """Layer sizes (input dim, hidden dims..., class count) plus activation."""

    layer_sizes: tuple[int, ...]
    activation: str = "tanh"

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        object.__setattr__(self, "layer_sizes", sizes)
        if len(sizes) < 2:
            raise ValueError("arch needs at least input and output layers")
        if any(s < 1 for s in sizes):
            raise ValueError(f"layer sizes must be >= 1, got {sizes}")
        if self.activation not in ("tanh", "relu"):
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def input_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def class_count(self) -> int:
        return self.layer_sizes[-1]

    @property
    def param_count(self) -> int:
        sizes = self.layer_sizes
        return sum(i * o + o for i, o in zip(sizes[:-1], sizes[1:]))


@dataclass
class Batch:
    """A mini-batch of inputs with integer class labels."""

    inputs: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.inputs.ndim != 2 or self.inputs.shape[0] < 1:
            raise ValueError("batch inputs must be a nonempty 2-D matrix")
        if self.labels.shape != (self.inputs.shape[0],):
            raise ValueError("labels must be one index per batch row")

    @property
    def size(self) -> int:
        return self.inputs.shape[0]


def _check_params(params: np.ndarray, arch: MlpArch) -> np.ndarray:
    params = np.asarray(params, dtype=np.float64)
    if params.shape != (arch.param_count,):
        raise ValueError(
            f"param vector has length {params.shape}, arch needs {arch.param_count}"
        )
    return params


def split_layers(params: np.ndarray, arch: MlpArch) -> list[tuple[np.ndarray, np.ndarray]]:
    """Views of the flat vector as per-layer (weights, bias) pairs."""
    params = _check_params(params, arch)
    out = []
    offset = 0
    sizes = arch.layer_sizes
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        w = params[offset : offset + fan_in * fan_out].reshape(fan_in, fan_out)
        offset += fan_in * fan_out
        b = params[offset : offset + fan_out]
        offset += fan_out
        out.append((w, b))
    return out


def init_params(arch: MlpArch, seed: int) -> np.ndarray:
    """Fresh parameter vector: weights ~ N(0, 1/fan_in), biases zero."""
    rng = np.random.default_rng(seed)
    params = np.zeros(arch.param_count)
    for w, _ in split_layers(params, arch):
        fan_in = w.shape[0]
        w[...] = rng.standard_normal(w.shape) / np.sqrt(fan_in)
    return params


def _activate(z: np.ndarray, activation: str) -> np.ndarray:
    if activation == "tanh":
        return np.tanh(z)
    return np.maximum(z, 0.0)


def forward(params: np.ndarray, arch: MlpArch, inputs: np.ndarray) -> np.ndarray:
    """Logits for a batch of inputs; the last layer stays linear."""
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.ndim != 2 or inputs.shape[1] != arch.input_dim:
        raise ValueError(
            f"inputs have shape {inputs.shape}, arch expects (*, {arch.input_dim})"
        )
    layers = split_layers(params, arch)
    a = inputs
    for w, b in layers[:-1]:
        a = _activate(a @ w + b, arch.activation)
    w, b = layers[-1]
    return a @ w + b


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max subtraction."""
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def cross_entropy(logits: np.ndarray, labels: np.ndarray) -> float:
    """Mean negative log-likelihood of the labelled class."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n, c = logits.shape
    if labels.shape != (n,):
        raise ValueError("labels length must match logit rows")
    if labels.min() < 0 or labels.max() >= c:
        raise ValueError(f"label out of range for {c} classes")
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    return float(np.mean(log_z - shifted[np.arange(n), labels]))


def loss_and_grad(
    params: np.ndarray, arch: MlpArch, batch: Batch
) -> tuple[float, np.ndarray]:
    """Mini-batch loss and the exact gradient of the mean loss.

    Plain backpropagation over the flat layout; returns a vector the same
    length as ``params``.
    """
    params = _check_params(params, arch)
    if batch.inputs.shape[1] != arch.input_dim:
        raise ValueError("batch input dim does not match arch")
    layers = split_layers(params, arch)
    n = batch.size

    # forward, keeping activations per layer
    acts = [batch.inputs]
    for w, b in layers[:-1]:
        acts.append(_activate(acts[-1] @ w + b, arch.activation))
    w, b = layers[-1]
    logits = acts[-1] @ w + b

    probs = softmax(logits)
    loss = cross_entropy(logits, batch.labels)

    grad = np.zeros_like(params)
    grad_layers = split_layers(grad, arch)

    delta = probs.copy()
    delta[np.arange(n), batch.labels] -= 1.0
    delta /= n
    for li in range(len(layers) - 1, -1, -1):
        w, _ = layers[li]
        gw, gb = grad_layers[li]
        gw[...] = acts[li].T @ delta
        gb[...] = delta.sum(axis=0)
        if li > 0:
            delta = delta @ w.T
            if arch.activation == "tanh":
                delta = delta * (1.0 - acts[li] ** 2)
            else:
                delta = delta * (acts[li] > 0)
    return loss, grad


def sample_labels(logits: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One class index per row, drawn from the softmax of that row."""
    probs = softmax(np.asarray(logits, dtype=np.float64))
    cdf = np.cumsum(probs, axis=1)
    u = rng.random(probs.shape[0])
    # searchsorted per row; clip guards the u ~ 1.0 edge
    labels = (u[:, None] >= cdf).sum(axis=1)
    return np.minimum(labels, probs.shape[1] - 1).astype(np.int64)


def scaled_squared_gradient(g_hat: np.ndarray, batch_size: int) -> np.ndarray:
    """Diagonal curvature estimate from a sampled-label gradient: B * g ** 2."""
    return batch_size * g_hat * g_hat


def gnb_diag_hessian(
    params: np.ndarray, arch: MlpArch, inputs: np.ndarray, rng: np.random.Generator
) -> np.ndarray:
    """Sampled-label diagonal curvature estimate for a mini-batch.

    Labels are drawn from the model's own logits, so the resulting
    gradient has zero mean and B * g * g is an unbiased estimate of the
    diagonal of the Gauss-Newton matrix of the mean batch loss. Every
    coordinate is >= 0 by construction.
    """
    inputs = np.asarray(inputs, dtype=np.float64)
    logits = forward(params, arch, inputs)
    labels = sample_labels(logits, rng)
    _, g_hat = loss_and_grad(params, arch, Batch(inputs, labels))
    return scaled_squared_gradient(g_hat, inputs.shape[0])
