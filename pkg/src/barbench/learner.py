"""A desk-scale pixel regressor: flatten, one rectified hidden layer, scalar out.

Training follows the same recipe as the full-size networks: mini-batch SGD
with Nesterov momentum on a mean-squared-error loss, inverted dropout on
the hidden layer, and early stopping once validation loss stops improving
for a fixed number of epochs. Everything is seeded (init, shuffling,
dropout) so a run is exactly repeatable.

The backward pass is hand-rolled; gradient_check validates it against
central finite differences and should be kept passing whenever the math
here changes.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .seeds import stable_seed

MODEL_MAGIC = b"BBMLP"
MODEL_VERSION = 1


class TrainingError(RuntimeError):
    """Raised when the optimizer produces a non-finite loss."""


class GradientCheckError(AssertionError):
    """Raised when analytic and numerical gradients disagree."""


@dataclass(frozen=True)
class LearnerConfig:
    hidden_units: int = 256
    activation: str = "relu"       # "relu", or "linear" for closed-form checks
    dropout_rate: float = 0.5
    batch_size: int = 32
    learning_rate: float = 1e-4
    nesterov_momentum: float = 0.9
    max_epochs: int = 100
    early_stop_patience: int = 10
    seed: int = 0
    dtype: str = "float32"         # float64 for the numerical checks

    def __post_init__(self):
        if self.hidden_units <= 0 or self.batch_size <= 0 or self.max_epochs <= 0:
            raise ValueError("hidden_units, batch_size and max_epochs must be positive")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")
        if self.learning_rate < 0 or self.nesterov_momentum < 0:
            raise ValueError("learning_rate and momentum must be non-negative")
        if self.activation not in ("relu", "linear"):
            raise ValueError(f"unknown activation {self.activation!r}")


@dataclass
class TrainedModel:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    config: LearnerConfig
    history: list[tuple[float, float]] = field(default_factory=list)  # (train, val) loss
    stopped_epoch: int = 0
    best_epoch: int = 0
    best_val_loss: float = float("inf")

    @property
    def input_dim(self) -> int:
        return self.w1.shape[0]


def featurize(image: np.ndarray) -> np.ndarray:
    """Row-major flatten of a 100x100 grayscale image, scaled to [0, 1]."""
    arr = np.asarray(image)
    if arr.shape != (100, 100):
        raise ValueError(f"expected a 100x100 grayscale image, got shape {arr.shape}")
    return arr.reshape(-1).astype(np.float64) / 255.0


def featurize_dataset(dataset_dir, role: str, dtype: str = "float32"):
    """Load one split of a rendered dataset into (X, y, labels) arrays."""
    from .stimulus import load_image, read_labels

    rows = [r for r in read_labels(dataset_dir) if r["image_id"].startswith(f"{role}-")]
    if not rows:
        raise ValueError(f"no {role!r} images listed in {dataset_dir}")
    x = np.empty((len(rows), 10000), dtype=dtype)
    y = np.empty(len(rows), dtype=dtype)
    for i, row in enumerate(rows):
        img = load_image(Path(dataset_dir) / role / f"{row['image_id']}.png")
        x[i] = featurize(img).astype(dtype)
        y[i] = float(row["truth"])
    return x, y, rows


def _init_weights(config: LearnerConfig, input_dim: int):
    # symmetric uniform scaled by fan-in; biases start at zero
    rng = np.random.Generator(np.random.PCG64(stable_seed(config.seed, "init")))
    dtype = np.dtype(config.dtype)
    lim1 = 1.0 / np.sqrt(input_dim)
    lim2 = 1.0 / np.sqrt(config.hidden_units)
    w1 = rng.uniform(-lim1, lim1, size=(input_dim, config.hidden_units)).astype(dtype)
    b1 = np.zeros(config.hidden_units, dtype=dtype)
    w2 = rng.uniform(-lim2, lim2, size=(config.hidden_units, 1)).astype(dtype)
    b2 = np.zeros(1, dtype=dtype)
    return w1, b1, w2, b2


def _forward(params, x, activation):
    w1, b1, w2, b2 = params
    z1 = x @ w1 + b1
    a1 = np.maximum(z1, 0) if activation == "relu" else z1
    out = (a1 @ w2 + b2).reshape(-1)
    return z1, a1, out


def _loss_and_grads(params, x, y, activation, dropout_mask=None, keep_scale=1.0):
    """MSE loss and analytic gradients for one batch."""
    w1, b1, w2, b2 = params
    z1, a1, _ = _forward(params, x, activation)
    ad = a1 * dropout_mask * keep_scale if dropout_mask is not None else a1
    out = (ad @ w2 + b2).reshape(-1)
    err = out - y
    n = x.shape[0]
    loss = float(np.mean(err ** 2))
    g_out = (2.0 / n) * err.reshape(-1, 1)
    g_w2 = ad.T @ g_out
    g_b2 = g_out.sum(axis=0)
    g_ad = g_out @ w2.T
    g_a1 = g_ad * dropout_mask * keep_scale if dropout_mask is not None else g_ad
    g_z1 = g_a1 * (z1 > 0) if activation == "relu" else g_a1
    g_w1 = x.T @ g_z1
    g_b1 = g_z1.sum(axis=0)
    return loss, (g_w1, g_b1, g_w2, g_b2)


def _mse(params, x, y, activation) -> float:
    _, _, out = _forward(params, x, activation)
    return float(np.mean((out - y) ** 2))


def train(config: LearnerConfig, train_set, validation_set) -> TrainedModel:
    """Seed-deterministic SGD with Nesterov momentum and early stopping.

    train_set and validation_set are (X, y) pairs with labels in (0, 1).
    """
    x_train, y_train = train_set
    x_val, y_val = validation_set
    if len(x_train) == 0 or len(x_val) == 0:
        raise ValueError("training and validation sets must be non-empty")
    dtype = np.dtype(config.dtype)
    x_train = np.ascontiguousarray(x_train, dtype=dtype)
    y_train = np.asarray(y_train, dtype=dtype).reshape(-1)
    x_val = np.ascontiguousarray(x_val, dtype=dtype)
    y_val = np.asarray(y_val, dtype=dtype).reshape(-1)

    params = list(_init_weights(config, x_train.shape[1]))
    velocity = [np.zeros_like(p) for p in params]
    shuffle_rng = np.random.Generator(np.random.PCG64(stable_seed(config.seed, "shuffle")))
    dropout_rng = np.random.Generator(np.random.PCG64(stable_seed(config.seed, "dropout")))
    keep = 1.0 - config.dropout_rate
    mu, lr = config.nesterov_momentum, config.learning_rate

    history: list[tuple[float, float]] = []
    best_val = float("inf")
    best_epoch = 0
    epochs_run = 0
    for epoch in range(1, config.max_epochs + 1):
        perm = shuffle_rng.permutation(len(x_train))
        epoch_loss = 0.0
        for start in range(0, len(perm), config.batch_size):
            batch = perm[start:start + config.batch_size]
            xb, yb = x_train[batch], y_train[batch]
            mask = None
            if config.dropout_rate > 0:
                mask = (dropout_rng.random((len(batch), config.hidden_units)) < keep).astype(dtype)
            loss, grads = _loss_and_grads(tuple(params), xb, yb, config.activation,
                                          mask, 1.0 / keep if mask is not None else 1.0)
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {start // config.batch_size}")
            for i, g in enumerate(grads):
                velocity[i] = mu * velocity[i] + g
                params[i] = params[i] - lr * (g + mu * velocity[i])
            epoch_loss += loss * len(batch)
        train_loss = epoch_loss / len(x_train)
        val_loss = _mse(tuple(params), x_val, y_val, config.activation)
        if not np.isfinite(val_loss):
            raise TrainingError(f"non-finite validation loss at epoch {epoch}")
        history.append((train_loss, val_loss))
        epochs_run = epoch
        if val_loss < best_val:
            best_val = val_loss
            best_epoch = epoch
        elif epoch - best_epoch >= config.early_stop_patience:
            break

    return TrainedModel(
        w1=params[0], b1=params[1], w2=params[2], b2=params[3],
        config=config, history=history, stopped_epoch=epochs_run,
        best_epoch=best_epoch, best_val_loss=best_val,
    )


def predict(model: TrainedModel, images) -> np.ndarray:
    """Inference with dropout off; outputs clamped to [0, 1]."""
    x = np.asarray(images, dtype=model.w1.dtype)
    single = x.ndim == 1
    if single:
        x = x.reshape(1, -1)
    if x.shape[1] != model.input_dim:
        raise ValueError(f"expected {model.input_dim} features, got {x.shape[1]}")
    _, _, out = _forward((model.w1, model.b1, model.w2, model.b2), x, model.config.activation)
    out = np.clip(out.astype(np.float64), 0.0, 1.0)
    return out[0] if single else out


def gradient_check(config: LearnerConfig, tiny_batch, epsilon: float = 1e-5,
                   tolerance: float = 1e-4) -> float:
    """Compare analytic gradients to central finite differences.

    Dropout is disabled; float64 arithmetic is forced. Returns the maximum
    relative deviation over all parameters, raising GradientCheckError
    (naming the worst parameter) when it exceeds the tolerance.
    """
    cfg = replace(config, dropout_rate=0.0, dtype="float64")
    x, y = tiny_batch
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    params = list(_init_weights(cfg, x.shape[1]))
    _, grads = _loss_and_grads(tuple(params), x, y, cfg.activation)

    names = ("w1", "b1", "w2", "b2")
    worst = 0.0
    worst_name = ""
    for name, p, g in zip(names, params, grads):
        flat_p = p.reshape(-1)
        flat_g = g.reshape(-1)
        for j in range(flat_p.size):
            orig = flat_p[j]
            flat_p[j] = orig + epsilon
            up = _mse(tuple(params), x, y, cfg.activation)
            flat_p[j] = orig - epsilon
            down = _mse(tuple(params), x, y, cfg.activation)
            flat_p[j] = orig
            numeric = (up - down) / (2 * epsilon)
            denom = max(abs(numeric) + abs(flat_g[j]), 1e-8)
            deviation = abs(numeric - flat_g[j]) / denom
            if deviation > worst:
                worst = deviation
                worst_name = f"{name}[{j}]"
    if worst > tolerance:
        raise GradientCheckError(
            f"gradient check failed: max relative deviation {worst:.3e} at {worst_name}")
    return worst


def save_model(model: TrainedModel, path) -> None:
    """Versioned flat binary: magic, dims, then the four float64 arrays."""
    arrays = [model.w1, model.b1, model.w2, model.b2]
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(struct.pack("<BII", MODEL_VERSION, model.w1.shape[0], model.w1.shape[1]))
        fh.write(struct.pack("<B", 1 if model.config.activation == "relu" else 0))
        for arr in arrays:
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_model(path) -> TrainedModel:
    with open(path, "rb") as fh:
        magic = fh.read(len(MODEL_MAGIC))
        if magic != MODEL_MAGIC:
            raise ValueError(f"{path}: not a model file")
        version, input_dim, hidden = struct.unpack("<BII", fh.read(9))
        if version != MODEL_VERSION:
            raise ValueError(f"{path}: unsupported model version {version}")
        (act_code,) = struct.unpack("<B", fh.read(1))
        def read_arr(shape):
            count = int(np.prod(shape))
            buf = fh.read(count * 8)
            return np.frombuffer(buf, dtype="<f8").reshape(shape).copy()
        w1 = read_arr((input_dim, hidden))
        b1 = read_arr((hidden,))
        w2 = read_arr((hidden, 1))
        b2 = read_arr((1,))
    config = LearnerConfig(hidden_units=hidden, dtype="float64",
                           activation="relu" if act_code else "linear")
    return TrainedModel(w1=w1, b1=b1, w2=w2, b2=b2, config=config)
