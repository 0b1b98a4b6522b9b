"""Minimal dense feed-forward networks over flat parameter vectors.

Two heads are supported: a softmax cross-entropy classifier and a
mean-squared-error reconstruction head (autoencoder). Gradients are
analytic; the test suite checks them against central finite differences.

Everything here is a pure function of its arguments. Parameters live in a
single flat float64 vector laid out layer by layer (weights row-major,
then biases), which is the fixed draw order for initialization and the
unit that aggregation and divergence operate on.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .params import sha256_hex, validate_params

ACTIVATIONS = ("relu", "sigmoid", "identity")
HEAD_SOFTMAX = "softmax"
HEAD_MSE = "mse"
HEADS = (HEAD_SOFTMAX, HEAD_MSE)


@dataclass(frozen=True)
class NetSpec:
    """Architecture description: layer widths, activations, and head.

    ``activations`` has one entry per affine layer (``len(layer_sizes)-1``).
    The softmax head consumes raw logits, so the final activation must be
    ``identity`` for classifiers. The mse head reconstructs the input, so
    the output width must equal the input width.
    """

    layer_sizes: tuple[int, ...]
    activations: tuple[str, ...]
    head: str

    def __post_init__(self):
        if len(self.layer_sizes) < 2:
            raise ValueError("network needs at least an input and an output layer")
        if any(int(s) <= 0 for s in self.layer_sizes):
            raise ValueError(f"layer sizes must be positive, got {self.layer_sizes}")
        if len(self.activations) != len(self.layer_sizes) - 1:
            raise ValueError(
                f"expected {len(self.layer_sizes) - 1} activations, "
                f"got {len(self.activations)}"
            )
        for act in self.activations:
            if act not in ACTIVATIONS:
                raise ValueError(f"unknown activation {act!r}")
        if self.head not in HEADS:
            raise ValueError(f"unknown head {self.head!r}")
        if self.head == HEAD_SOFTMAX and self.activations[-1] != "identity":
            raise ValueError("softmax head requires an identity final activation")
        if self.head == HEAD_MSE and self.layer_sizes[-1] != self.layer_sizes[0]:
            raise ValueError("mse head requires output size == input size")

    @property
    def input_size(self) -> int:
        return self.layer_sizes[0]

    @property
    def output_size(self) -> int:
        return self.layer_sizes[-1]

    def param_count(self) -> int:
        sizes = self.layer_sizes
        return sum(sizes[i] * sizes[i + 1] + sizes[i + 1] for i in range(len(sizes) - 1))

    def digest(self) -> str:
        """Content hash of the architecture, used in the genesis model id."""
        text = "net:{};{};{}".format(
            ",".join(str(s) for s in self.layer_sizes),
            ",".join(self.activations),
            self.head,
        )
        return sha256_hex(text.encode("utf-8"))


def make_net_spec(layer_sizes, head: str, activations=None) -> NetSpec:
    """Build a NetSpec with the usual default activations.

    Defaults to relu on hidden layers. The final activation defaults to
    identity for the softmax head and sigmoid for the mse head (keeps
    reconstructions in [0, 1], matching the feature range).
    """
    sizes = tuple(int(s) for s in layer_sizes)
    if activations is None:
        if len(sizes) < 2:
            raise ValueError("network needs at least an input and an output layer")
        final = "identity" if head == HEAD_SOFTMAX else "sigmoid"
        activations = ("relu",) * (len(sizes) - 2) + (final,)
    return NetSpec(sizes, tuple(activations), head)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int
    learning_rate: float
    batch_size: int
    rng_seed: int

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not (self.learning_rate >= 0 and math.isfinite(self.learning_rate)):
            raise ValueError("learning_rate must be finite and >= 0")


def init_params(spec: NetSpec, seed: int) -> np.ndarray:
    """Deterministic initialization for (spec, seed).

    Per layer, weights are uniform in [-s, s] with s = sqrt(6/(fan_in +
    fan_out)) and biases are zero. Layers are drawn in order from a single
    seeded generator, so the flat vector is reproducible byte for byte.
    """
    rng = np.random.default_rng(seed)
    chunks = []
    sizes = spec.layer_sizes
    for i in range(len(sizes) - 1):
        fan_in, fan_out = sizes[i], sizes[i + 1]
        scale = math.sqrt(6.0 / (fan_in + fan_out))
        chunks.append(rng.uniform(-scale, scale, size=fan_in * fan_out))
        chunks.append(np.zeros(fan_out))
    return np.concatenate(chunks)


def unflatten(spec: NetSpec, params: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    """Split the flat vector into per-layer (W, b) views."""
    params = validate_params(params)
    if params.size != spec.param_count():
        raise ValueError(
            f"parameter vector has {params.size} values, "
            f"spec expects {spec.param_count()}"
        )
    layers = []
    offset = 0
    sizes = spec.layer_sizes
    for i in range(len(sizes) - 1):
        n_in, n_out = sizes[i], sizes[i + 1]
        w = params[offset : offset + n_in * n_out].reshape(n_in, n_out)
        offset += n_in * n_out
        b = params[offset : offset + n_out]
        offset += n_out
        layers.append((w, b))
    return layers


def _apply_activation(name: str, z: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "sigmoid":
        # split by sign for numerical stability
        out = np.empty_like(z)
        pos = z >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
        ez = np.exp(z[~pos])
        out[~pos] = ez / (1.0 + ez)
        return out
    return z


def _activation_backward(name: str, z: np.ndarray, a: np.ndarray, grad: np.ndarray) -> np.ndarray:
    if name == "relu":
        return grad * (z > 0)
    if name == "sigmoid":
        return grad * a * (1.0 - a)
    return grad


def _check_batch(spec: NetSpec, batch: np.ndarray) -> np.ndarray:
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 2:
        raise ValueError(f"batch must be 2-D, got shape {batch.shape}")
    if batch.shape[1] != spec.input_size:
        raise ValueError(
            f"batch has {batch.shape[1]} features, spec input size is {spec.input_size}"
        )
    if batch.shape[0] == 0:
        raise ValueError("batch must contain at least one sample")
    return batch


def _forward_cached(spec, params, batch):
    layers = unflatten(spec, params)
    pre, post = [], [batch]
    a = batch
    for (w, b), act in zip(layers, spec.activations):
        z = a @ w + b
        a = _apply_activation(act, z)
        pre.append(z)
        post.append(a)
    return layers, pre, post


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    ez = np.exp(shifted)
    return ez / ez.sum(axis=1, keepdims=True)


def forward(spec: NetSpec, params: np.ndarray, batch: np.ndarray) -> np.ndarray:
    """Run the network; returns class probabilities or reconstructions."""
    batch = _check_batch(spec, batch)
    _, _, post = _forward_cached(spec, params, batch)
    out = post[-1]
    if spec.head == HEAD_SOFTMAX:
        return _softmax(out)
    return out


def loss_and_grad(
    spec: NetSpec, params: np.ndarray, batch: np.ndarray, targets
) -> tuple[float, np.ndarray]:
    """Mean loss over the batch and its gradient w.r.t. the flat vector.

    For the softmax head, ``targets`` is an integer label vector. For the
    mse head, ``targets`` is a float matrix with the output shape (pass
    the batch itself for plain reconstruction).
    """
    batch = _check_batch(spec, batch)
    n = batch.shape[0]
    # overflow surfaces as the explicit non-finite error below
    with np.errstate(over="ignore", invalid="ignore"):
        return _loss_and_grad_inner(spec, params, batch, targets, n)


def _loss_and_grad_inner(spec, params, batch, targets, n):
    layers, pre, post = _forward_cached(spec, params, batch)

    if spec.head == HEAD_SOFTMAX:
        labels = np.asarray(targets)
        if labels.shape != (n,):
            raise ValueError(f"expected {n} labels, got shape {labels.shape}")
        logits = post[-1]
        # exact log-softmax keeps the loss/gradient pair consistent
        shifted = logits - logits.max(axis=1, keepdims=True)
        log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
        loss = -float(log_probs[np.arange(n), labels].mean())
        grad_out = _softmax(logits)
        grad_out[np.arange(n), labels] -= 1.0
        grad_out /= n
    else:
        target = np.asarray(targets, dtype=np.float64)
        out = post[-1]
        if target.shape != out.shape:
            raise ValueError(f"target shape {target.shape} != output shape {out.shape}")
        diff = out - target
        loss = float(np.mean(diff * diff))
        grad_out = 2.0 * diff / diff.size

    grad_chunks: list[np.ndarray] = []
    grad = grad_out
    for i in reversed(range(len(layers))):
        w, _ = layers[i]
        grad = _activation_backward(spec.activations[i], pre[i], post[i + 1], grad)
        grad_w = post[i].T @ grad
        grad_b = grad.sum(axis=0)
        grad_chunks.append(grad_b)
        grad_chunks.append(grad_w.ravel())
        grad = grad @ w.T

    flat_grad = np.concatenate(grad_chunks[::-1])
    if not (math.isfinite(loss) and np.all(np.isfinite(flat_grad))):
        raise ValueError("non-finite loss or gradient (diverging parameters?)")
    return loss, flat_grad


def train(
    spec: NetSpec,
    params: np.ndarray,
    features: np.ndarray,
    targets,
    config: TrainConfig,
) -> np.ndarray:
    """Mini-batch SGD for ``config.epochs`` passes over the data.

    ``targets`` is the label vector for classifiers or None for
    autoencoders (the batch reconstructs itself). Deterministic for fixed
    inputs and seed; the batch order is the only randomness.
    """
    features = _check_batch(spec, features)
    n = features.shape[0]
    labels = None if targets is None else np.asarray(targets)
    rng = np.random.default_rng(config.rng_seed)
    current = validate_params(params).copy()
    for _ in range(config.epochs):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            batch = features[idx]
            batch_targets = batch if labels is None else labels[idx]
            _, grad = loss_and_grad(spec, current, batch, batch_targets)
            current -= config.learning_rate * grad
    return validate_params(current)


def evaluate_accuracy(spec: NetSpec, params: np.ndarray, features, labels) -> float:
    """Top-1 accuracy: correct argmax predictions / total samples."""
    if spec.head != HEAD_SOFTMAX:
        raise ValueError("accuracy is only defined for the softmax head")
    labels = np.asarray(labels)
    probs = forward(spec, params, features)
    if labels.shape != (probs.shape[0],):
        raise ValueError(f"expected {probs.shape[0]} labels, got shape {labels.shape}")
    return float(np.mean(probs.argmax(axis=1) == labels))


def evaluate_mse(spec: NetSpec, params: np.ndarray, features) -> float:
    """Reconstruction error: mean over samples and components."""
    if spec.head != HEAD_MSE:
        raise ValueError("mse is only defined for the reconstruction head")
    features = _check_batch(spec, features)
    out = forward(spec, params, features)
    diff = out - features
    return float(np.mean(diff * diff))
