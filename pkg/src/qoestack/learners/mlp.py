"""Fully-connected regression network trained with Adam.

Architecture: input -> 32 -> 64 -> 1, ReLU on the hidden layers, linear
output. Inputs are z-score normalized with statistics frozen from the
training set; labels are scaled to 0..1 during training and rescaled at
prediction. Inverted dropout (default rate 0.3) is applied to hidden
activations during training only.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..dataset import Dataset, FeatureSchema
from ..errors import TrainingDivergenceError, ValidationError

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


def he_uniform_init(layer_sizes: tuple[int, ...], rng: np.random.Generator):
    """He-uniform weights (limit sqrt(6/fan_in)) and zero biases."""
    weights = []
    biases = []
    for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        limit = np.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return weights, biases


@dataclass
class MlpModel:
    """Trained network plus the normalization statistics it was fit with."""

    layer_sizes: tuple[int, ...]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    input_mean: np.ndarray
    input_std: np.ndarray
    feature_schema: FeatureSchema
    label_scale: float = 100.0
    hyperparameters: dict = field(default_factory=dict)
    seed: int = 0
    train_group: str = ""

    algorithm = "mlp"

    def forward(self, X_norm: np.ndarray) -> np.ndarray:
        a = X_norm
        last = len(self.weights) - 1
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            a = a @ W + b
            if i < last:
                a = np.maximum(a, 0.0)
        return a[:, 0]

    def predict_matrix(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        return self.forward((X - self.input_mean) / self.input_std) * self.label_scale


def loss_and_gradients(
    model: MlpModel,
    X_norm: np.ndarray,
    y_scaled: np.ndarray,
    dropout_masks: list[np.ndarray] | None = None,
):
    """Batch MSE and its gradients w.r.t. every weight and bias.

    dropout_masks, when given, hold one pre-scaled mask per hidden layer
    (entries 0 or 1/(1-p)); gradients flow through the same masks. This is
    the exact function trained by train_epoch, exposed so the backward pass
    can be checked against finite differences (with masks=None).
    """
    n = X_norm.shape[0]
    last = len(model.weights) - 1
    pre = []
    acts = [X_norm]
    a = X_norm
    for i, (W, b) in enumerate(zip(model.weights, model.biases)):
        z = a @ W + b
        pre.append(z)
        if i < last:
            a = np.maximum(z, 0.0)
            if dropout_masks is not None:
                a = a * dropout_masks[i]
        else:
            a = z
        acts.append(a)

    out = acts[-1][:, 0]
    err = out - y_scaled
    loss = float(np.mean(err**2))

    d_weights = [np.empty(0)] * len(model.weights)
    d_biases = [np.empty(0)] * len(model.biases)
    delta = (2.0 / n) * err[:, None]
    for i in range(last, -1, -1):
        d_weights[i] = acts[i].T @ delta
        d_biases[i] = delta.sum(axis=0)
        if i > 0:
            delta = delta @ model.weights[i].T
            if dropout_masks is not None:
                delta = delta * dropout_masks[i - 1]
            delta = delta * (pre[i - 1] > 0.0)
    return loss, d_weights, d_biases


@dataclass
class AdamState:
    m_w: list[np.ndarray]
    v_w: list[np.ndarray]
    m_b: list[np.ndarray]
    v_b: list[np.ndarray]
    t: int = 0

    @classmethod
    def for_model(cls, model: MlpModel) -> "AdamState":
        return cls(
            m_w=[np.zeros_like(w) for w in model.weights],
            v_w=[np.zeros_like(w) for w in model.weights],
            m_b=[np.zeros_like(b) for b in model.biases],
            v_b=[np.zeros_like(b) for b in model.biases],
        )


def _adam_update(param, grad, m, v, t, lr):
    m *= ADAM_BETA1
    m += (1 - ADAM_BETA1) * grad
    v *= ADAM_BETA2
    v += (1 - ADAM_BETA2) * grad**2
    m_hat = m / (1 - ADAM_BETA1**t)
    v_hat = v / (1 - ADAM_BETA2**t)
    param -= lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)


def train_epoch(
    model: MlpModel,
    state: AdamState,
    X_norm: np.ndarray,
    y_scaled: np.ndarray,
    *,
    learning_rate: float,
    dropout_rate: float,
    batch_size: int,
    rng: np.random.Generator,
    epoch: int = 0,
) -> float:
    """One pass of shuffled mini-batch Adam; returns the post-epoch full-set MSE.

    Raises TrainingDivergenceError when a batch loss goes non-finite.
    """
    n = X_norm.shape[0]
    order = rng.permutation(n)
    keep = 1.0 - dropout_rate
    for start in range(0, n, batch_size):
        batch = order[start : start + batch_size]
        masks = None
        if dropout_rate > 0.0:
            masks = [
                (rng.random((batch.shape[0], size)) < keep) / keep
                for size in model.layer_sizes[1:-1]
            ]
        loss, d_w, d_b = loss_and_gradients(model, X_norm[batch], y_scaled[batch], masks)
        if not np.isfinite(loss):
            raise TrainingDivergenceError(
                f"non-finite loss at epoch {epoch} (learning_rate={learning_rate})",
                epoch=epoch,
                learning_rate=learning_rate,
            )
        state.t += 1
        for i in range(len(model.weights)):
            _adam_update(model.weights[i], d_w[i], state.m_w[i], state.v_w[i], state.t, learning_rate)
            _adam_update(model.biases[i], d_b[i], state.m_b[i], state.v_b[i], state.t, learning_rate)
    return float(np.mean((model.forward(X_norm) - y_scaled) ** 2))


def fit_mlp(
    train: Dataset,
    *,
    learning_rate: float = 0.001,
    epochs: int = 500,
    batch_size: int = 32,
    dropout: float = 0.3,
    hidden_sizes: tuple[int, ...] = (32, 64),
    label_scale: float = 100.0,
    seed: int = 0,
) -> MlpModel:
    if train.n_rows < 1:
        raise ValidationError("cannot fit on an empty dataset")
    rng = np.random.default_rng(seed)
    X = np.asarray(train.X, dtype=np.float64)
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    std = np.where(std > 0.0, std, 1.0)
    X_norm = (X - mean) / std
    y_scaled = train.y / label_scale

    layer_sizes = (X.shape[1], *hidden_sizes, 1)
    weights, biases = he_uniform_init(layer_sizes, rng)
    model = MlpModel(
        layer_sizes=layer_sizes,
        weights=weights,
        biases=biases,
        input_mean=mean,
        input_std=std,
        feature_schema=train.schema,
        label_scale=label_scale,
        hyperparameters={
            "learning_rate": learning_rate,
            "epochs": epochs,
            "batch_size": batch_size,
            "dropout": dropout,
            "hidden_sizes": tuple(hidden_sizes),
        },
        seed=seed,
        train_group=train.provenance,
    )
    state = AdamState.for_model(model)
    for epoch in range(epochs):
        train_epoch(
            model,
            state,
            X_norm,
            y_scaled,
            learning_rate=learning_rate,
            dropout_rate=dropout,
            batch_size=batch_size,
            rng=rng,
            epoch=epoch,
        )
    return model
