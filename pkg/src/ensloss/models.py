"""Dense feed-forward scorers with manual backprop.

The backward pass takes externally supplied per-sample derivative factors
instead of differentiating a loss function, so the same machinery serves
fixed losses and randomly generated derivative vectors. Plain SGD only.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .numerics import Rng
from .derivgen import DerivativeBatch

_ACTIVATIONS = ("relu", "tanh")


class DivergenceError(RuntimeError):
    """Raised when gradients or parameters stop being finite."""


@dataclass
class MlpModel:
    """Weights and biases for a scalar-output dense network.

    layer_dims is [d_in, h_1, ..., h_L, 1]; an empty hidden list gives a
    linear scorer. Mutated in place by sgd_step.
    """

    layer_dims: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activation: str = "relu"
    dropout_rate: float = 0.0
    weight_decay: float = 0.0

    @property
    def n_layers(self) -> int:
        return len(self.weights)


@dataclass
class GradAccumulator:
    d_weights: list[np.ndarray]
    d_biases: list[np.ndarray]


@dataclass
class ForwardCache:
    inputs: list[np.ndarray]        # what each layer consumed; inputs[0] is X
    acts: list[np.ndarray]          # pre-dropout activations per hidden layer
    masks: list[np.ndarray | None]  # dropout masks per hidden layer
    train_mode: bool
    batch_size: int


def init_mlp(
    layer_dims: list[int],
    rng: Rng,
    activation: str = "relu",
    dropout_rate: float = 0.0,
    weight_decay: float = 0.0,
) -> MlpModel:
    """He-uniform fan-in initialization; biases start at zero."""
    if len(layer_dims) < 2 or layer_dims[-1] != 1:
        raise ValueError("layer_dims must be [d_in, ..., 1]")
    if activation not in _ACTIVATIONS:
        raise ValueError(f"unknown activation {activation!r}; choose from {_ACTIVATIONS}")
    if not 0.0 <= dropout_rate < 1.0:
        raise ValueError("dropout_rate must lie in [0, 1)")
    if weight_decay < 0.0:
        raise ValueError("weight_decay must be >= 0")
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_dims[:-1], layer_dims[1:]):
        limit = np.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MlpModel(
        layer_dims=list(layer_dims),
        weights=weights,
        biases=biases,
        activation=activation,
        dropout_rate=dropout_rate,
        weight_decay=weight_decay,
    )


def _act(model: MlpModel, pre: np.ndarray) -> np.ndarray:
    if model.activation == "relu":
        return np.maximum(pre, 0.0)
    return np.tanh(pre)


def forward(
    model: MlpModel, X: np.ndarray, train_mode: bool = False, rng: Rng | None = None
) -> tuple[np.ndarray, ForwardCache]:
    """Score a batch; returns (scores, cache for backward).

    In train mode with dropout enabled, inverted-dropout masks are drawn
    from ``rng`` on every hidden activation and kept in the cache, so the
    eval path is the identity.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != model.layer_dims[0]:
        raise ValueError(
            f"expected input with {model.layer_dims[0]} columns, got shape {X.shape}"
        )
    use_dropout = train_mode and model.dropout_rate > 0.0
    if use_dropout and rng is None:
        raise ValueError("dropout in train mode needs an rng")
    keep = 1.0 - model.dropout_rate
    inputs: list[np.ndarray] = [X]
    acts: list[np.ndarray] = []
    masks: list[np.ndarray | None] = []
    h = X
    for i in range(model.n_layers - 1):
        pre = h @ model.weights[i] + model.biases[i]
        a = _act(model, pre)
        acts.append(a)
        if use_dropout:
            mask = (rng.random(a.shape) < keep).astype(float) / keep
            h = a * mask
            masks.append(mask)
        else:
            h = a
            masks.append(None)
        inputs.append(h)
    scores = (h @ model.weights[-1] + model.biases[-1]).ravel()
    return scores, ForwardCache(
        inputs=inputs, acts=acts, masks=masks, train_mode=train_mode, batch_size=X.shape[0]
    )


def backward_with_derivs(
    model: MlpModel, cache: ForwardCache, y: np.ndarray, g: DerivativeBatch
) -> GradAccumulator:
    """Gradient of (1/B) * sum_b y_b * g_b * f(x_b) plus the weight-decay term.

    y are labels in {-1, +1}; g supplies the per-sample derivative factors.
    Weight decay adds wd * W to weight gradients only, never biases.
    """
    y = np.asarray(y, dtype=float)
    derivs = np.asarray(g.derivs, dtype=float)
    B = cache.batch_size
    if y.shape != (B,) or derivs.shape != (B,):
        raise ValueError("labels and derivatives must align with the cached batch")
    if len(cache.inputs) != model.n_layers:
        raise ValueError("cache does not match this model")

    delta = (y * derivs / B)[:, None]
    d_weights = [np.empty(0)] * model.n_layers
    d_biases = [np.empty(0)] * model.n_layers
    for i in range(model.n_layers - 1, -1, -1):
        d_weights[i] = cache.inputs[i].T @ delta
        d_biases[i] = delta.sum(axis=0)
        if model.weight_decay > 0.0:
            d_weights[i] = d_weights[i] + model.weight_decay * model.weights[i]
        if i > 0:
            back = delta @ model.weights[i].T
            mask = cache.masks[i - 1]
            if mask is not None:
                back = back * mask
            a = cache.acts[i - 1]
            if model.activation == "relu":
                delta = back * (a > 0.0)
            else:
                delta = back * (1.0 - a**2)
    return GradAccumulator(d_weights=d_weights, d_biases=d_biases)


def sgd_step(model: MlpModel, grads: GradAccumulator, lr: float) -> MlpModel:
    """In-place parameter update theta <- theta - lr * grad. lr = 0 is a no-op."""
    if lr < 0.0:
        raise ValueError("learning rate must be nonnegative")
    if lr == 0.0:
        return model
    for i in range(model.n_layers):
        if not (np.all(np.isfinite(grads.d_weights[i])) and np.all(np.isfinite(grads.d_biases[i]))):
            raise DivergenceError(f"non-finite gradient in layer {i}")
        model.weights[i] -= lr * grads.d_weights[i]
        model.biases[i] -= lr * grads.d_biases[i]
        if not np.all(np.isfinite(model.weights[i])):
            raise DivergenceError(f"non-finite parameters in layer {i}")
    return model


def save_checkpoint(model: MlpModel, path: str | Path) -> None:
    """Write the model as an npz archive with a layer_dims header."""
    arrays = {
        "format_version": np.array([1]),
        "layer_dims": np.asarray(model.layer_dims, dtype=np.int64),
        "activation": np.array(model.activation),
        "dropout_rate": np.array(model.dropout_rate),
        "weight_decay": np.array(model.weight_decay),
    }
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        arrays[f"W{i}"] = w
        arrays[f"b{i}"] = b
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path: str | Path) -> MlpModel:
    with np.load(path, allow_pickle=False) as data:
        if int(data["format_version"][0]) != 1:
            raise ValueError("unsupported checkpoint version")
        layer_dims = [int(v) for v in data["layer_dims"]]
        n = len(layer_dims) - 1
        return MlpModel(
            layer_dims=layer_dims,
            weights=[data[f"W{i}"] for i in range(n)],
            biases=[data[f"b{i}"] for i in range(n)],
            activation=str(data["activation"]),
            dropout_rate=float(data["dropout_rate"]),
            weight_decay=float(data["weight_decay"]),
        )
