"""Small differentiable classifiers with hand-derived gradients.

Two architectures: plain softmax regression and a one-hidden-layer MLP.
Everything is float64 numpy, single-threaded and fully seeded, so repeated
training runs are bit-identical. The teacher side of the package only ever
touches a model through the query functions here (predictions, losses,
parameter gradients, input gradients).

Flat weight layout:
  softmax:  W (D x C) row-major, then b (C)
  mlp1h:    W1 (D x H), b1 (H), W2 (H x C), b2 (C), each row-major
where D = M x N is the flattened input dimension.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .data import Dataset, Instance, TargetSpec
from .errors import (
    ConfigError,
    DatasetParseError,
    DivergenceError,
    LabelError,
    SchemaMismatchError,
    TrainingError,
)

TANH = "tanh"
RELU = "relu"

# rows-per-block cap for dataset-wide forward passes; keeps the BLAS calls
# small enough to stay single-threaded on any core count
_CHUNK = 128


@dataclass(frozen=True)
class Architecture:
    kind: str = "softmax"  # "softmax" or "mlp1h"
    hidden: int = 32
    activation: str = TANH

    def __post_init__(self):
        if self.kind not in ("softmax", "mlp1h"):
            raise ConfigError(f"unknown architecture {self.kind!r}")
        if self.kind == "mlp1h" and self.hidden < 1:
            raise ConfigError("mlp1h needs hidden >= 1")
        if self.activation not in (TANH, RELU):
            raise ConfigError(f"unknown activation {self.activation!r}")

    def param_count(self, input_dim: int, num_classes: int) -> int:
        if self.kind == "softmax":
            return input_dim * num_classes + num_classes
        h = self.hidden
        return input_dim * h + h + h * num_classes + num_classes


@dataclass(frozen=True, eq=False)
class ModelParams:
    """Immutable trained parameters plus enough shape info to use them."""

    arch: Architecture
    input_dim: int
    num_classes: int
    weights: np.ndarray  # flat float64, layout per module docstring

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        want = self.arch.param_count(self.input_dim, self.num_classes)
        if w.shape != (want,):
            raise ConfigError(f"weight vector length {w.shape}, expected ({want},)")
        if not np.isfinite(w).all():
            raise ConfigError("weights must be finite")
        w = w.copy()
        w.flags.writeable = False
        object.__setattr__(self, "weights", w)

    def unpack(self) -> tuple[np.ndarray, ...]:
        return _unpack(self.arch, self.input_dim, self.num_classes, self.weights)

    def l2_mask(self) -> np.ndarray:
        """1 for weight-matrix entries, 0 for biases."""
        d, c = self.input_dim, self.num_classes
        mask = np.zeros_like(self.weights)
        if self.arch.kind == "softmax":
            mask[: d * c] = 1.0
        else:
            h = self.arch.hidden
            mask[: d * h] = 1.0
            mask[d * h + h : d * h + h + h * c] = 1.0
        return mask


def _unpack(arch: Architecture, d: int, c: int, w: np.ndarray) -> tuple[np.ndarray, ...]:
    if arch.kind == "softmax":
        return w[: d * c].reshape(d, c), w[d * c :]
    h = arch.hidden
    o = 0
    w1 = w[o : o + d * h].reshape(d, h)
    o += d * h
    b1 = w[o : o + h]
    o += h
    w2 = w[o : o + h * c].reshape(h, c)
    o += h * c
    b2 = w[o : o + c]
    return w1, b1, w2, b2


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 32
    learning_rate: float = 0.1
    l2_penalty: float = 1e-4
    init_scale: float = 0.01
    optimizer: str = "sgd"
    shuffle_seed: int = 0
    init_seed: int = 0
    warm_start: bool = False

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.l2_penalty < 0:
            raise ConfigError("l2_penalty must be non-negative")
        if self.init_scale <= 0:
            raise ConfigError("init_scale must be positive")
        if self.optimizer != "sgd":
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")


@dataclass(frozen=True)
class LogitTrace:
    """Per monitored target, the logit vectors of the final <= 5 epochs."""

    per_target: tuple[np.ndarray, ...]  # each (kept_epochs, C)

    def mean_logits(self, target_index: int) -> np.ndarray:
        return self.per_target[target_index].mean(axis=0)

    def num_targets(self) -> int:
        return len(self.per_target)


def last5_logit_decision(trace: LogitTrace, target_label: int, target_index: int = 0) -> bool:
    """True iff the mean last-5-epoch logit vector argmaxes to target_label.

    Ties break toward the lower class index.
    """
    mean = trace.mean_logits(target_index)
    return int(np.argmax(mean)) == int(target_label)


def _as_input(x, input_dim: int) -> np.ndarray:
    if isinstance(x, Instance):
        flat = x.flat_float()
    else:
        flat = np.asarray(x, dtype=np.float64).reshape(-1)
    if flat.shape != (input_dim,):
        raise SchemaMismatchError(f"input has {flat.shape[0]} dims, model wants {input_dim}")
    return flat


def forward_logits(theta: ModelParams, x) -> np.ndarray:
    flat = _as_input(x, theta.input_dim)
    return _batch_logits(theta, flat[None, :])[0]


def _hidden(theta: ModelParams, X: np.ndarray) -> np.ndarray:
    w1, b1, _, _ = theta.unpack()
    pre = X @ w1 + b1
    return np.tanh(pre) if theta.arch.activation == TANH else np.maximum(pre, 0.0)


def _batch_logits(theta: ModelParams, X: np.ndarray) -> np.ndarray:
    if theta.arch.kind == "softmax":
        w, b = theta.unpack()
        return X @ w + b
    _, _, w2, b2 = theta.unpack()
    return _hidden(theta, X) @ w2 + b2


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def predict_probs(theta: ModelParams, x) -> np.ndarray:
    """Softmax class probabilities; non-negative, summing to 1."""
    return _softmax(forward_logits(theta, x))


def predict_label(theta: ModelParams, x) -> int:
    return int(np.argmax(forward_logits(theta, x)))


def dataset_logits(theta: ModelParams, d: Dataset) -> np.ndarray:
    X = d.stacked_bits.reshape(len(d), -1).astype(np.float64)
    out = np.empty((len(d), theta.num_classes), dtype=np.float64)
    for lo in range(0, len(d), _CHUNK):
        out[lo : lo + _CHUNK] = _batch_logits(theta, X[lo : lo + _CHUNK])
    return out

def accuracy(theta: ModelParams, d: Dataset) -> float:
    if len(d) == 0:
        raise TrainingError("accuracy over an empty dataset")
    pred = dataset_logits(theta, d).argmax(axis=1)
    return float((pred == d.labels).mean())


def loss(theta: ModelParams, x, y: int) -> float:
    """Cross entropy -log p_y (no regularization term)."""
    _check_label(theta, y)
    z = forward_logits(theta, x)
    return float(_logsumexp(z) - z[y])


def _check_label(theta: ModelParams, y: int) -> None:
    if not 0 <= int(y) < theta.num_classes:
        raise LabelError(f"label {y} out of range for {theta.num_classes} classes")


def _logsumexp(z: np.ndarray) -> float:
    m = z.max()
    return float(m + np.log(np.exp(z - m).sum()))


def grad_theta(theta: ModelParams, x, y: int) -> np.ndarray:
    """Analytic d loss / d weights, flat vector in layout order."""
    _check_label(theta, y)
    flat = _as_input(x, theta.input_dim)
    c = theta.num_classes
    if theta.arch.kind == "softmax":
        z = _batch_logits(theta, flat[None, :])[0]
        delta = _softmax(z)
        delta[y] -= 1.0
        gw = np.outer(flat, delta)
        return np.concatenate([gw.reshape(-1), delta])
    w1, b1, w2, b2 = theta.unpack()
    pre = flat @ w1 + b1
    h = np.tanh(pre) if theta.arch.activation == TANH else np.maximum(pre, 0.0)
    z = h @ w2 + b2
    delta = _softmax(z)
    delta[y] -= 1.0
    gw2 = np.outer(h, delta)
    gb2 = delta
    dh = w2 @ delta
    dact = (1.0 - h * h) if theta.arch.activation == TANH else (pre > 0).astype(np.float64)
    dpre = dh * dact
    gw1 = np.outer(flat, dpre)
    gb1 = dpre
    return np.concatenate([gw1.reshape(-1), gb1, gw2.reshape(-1), gb2])


def grad_input(theta: ModelParams, x, y: int) -> np.ndarray:
    """Analytic d loss / d input over the continuous relaxation, as M x N.

    For raw arrays the shape is inferred from len 2 input or returned flat.
    """
    _check_label(theta, y)
    flat = _as_input(x, theta.input_dim)
    g = _grad_input_flat(theta, flat, y)
    if isinstance(x, Instance):
        return g.reshape(x.schema.shape)
    arr = np.asarray(x)
    return g.reshape(arr.shape)


def _grad_input_flat(theta: ModelParams, flat: np.ndarray, y: int) -> np.ndarray:
    if theta.arch.kind == "softmax":
        w, _ = theta.unpack()
        z = _batch_logits(theta, flat[None, :])[0]
        delta = _softmax(z)
        delta[y] -= 1.0
        return w @ delta
    w1, b1, w2, b2 = theta.unpack()
    pre = flat @ w1 + b1
    h = np.tanh(pre) if theta.arch.activation == TANH else np.maximum(pre, 0.0)
    delta = _softmax(h @ w2 + b2)
    delta[y] -= 1.0
    dh = w2 @ delta
    dact = (1.0 - h * h) if theta.arch.activation == TANH else (pre > 0).astype(np.float64)
    return w1 @ (dh * dact)


def grad_input_logit(theta: ModelParams, x, class_index: int) -> np.ndarray:
    """d logit[class_index] / d input; the alternative greedy-search signal."""
    _check_label(theta, class_index)
    flat = _as_input(x, theta.input_dim)
    if theta.arch.kind == "softmax":
        w, _ = theta.unpack()
        g = w[:, class_index].copy()
    else:
        w1, b1, w2, _ = theta.unpack()
        pre = flat @ w1 + b1
        h = np.tanh(pre) if theta.arch.activation == TANH else np.maximum(pre, 0.0)
        dact = (1.0 - h * h) if theta.arch.activation == TANH else (pre > 0).astype(np.float64)
        g = w1 @ (w2[:, class_index] * dact)
    if isinstance(x, Instance):
        return g.reshape(x.schema.shape)
    return g.reshape(np.asarray(x).shape)


def init_params(
    arch: Architecture, input_dim: int, num_classes: int, init_seed: int, init_scale: float
) -> ModelParams:
    """Seeded Gaussian weight matrices, zero biases."""
    rng = np.random.Generator(np.random.PCG64(init_seed))
    n = arch.param_count(input_dim, num_classes)
    w = rng.standard_normal(n) * init_scale
    theta = ModelParams(arch, input_dim, num_classes, w)
    w = w * theta.l2_mask()  # zero the biases
    return ModelParams(arch, input_dim, num_classes, w)


def train(
    d: Dataset,
    cfg: TrainConfig,
    monitored: TargetSpec | None = None,
    arch: Architecture = Architecture(),
    warm_from: ModelParams | None = None,
) -> tuple[ModelParams, LogitTrace]:
    """Mini-batch SGD on mean cross entropy plus an L2 weight penalty.

    Deterministic for fixed seeds: fixed init, fixed per-epoch shuffle.
    Records each monitored target's logits every epoch, keeping the final
    min(5, epochs) entries.
    """
    if len(d) == 0:
        raise TrainingError("cannot train on an empty dataset")
    input_dim = d.schema.input_dim
    c = d.schema.num_classes
    if cfg.warm_start:
        if warm_from is None:
            raise TrainingError("warm_start requires initial parameters")
        if warm_from.input_dim != input_dim or warm_from.num_classes != c:
            raise SchemaMismatchError("warm-start parameters do not fit this dataset")
        w = warm_from.weights.copy()
        arch = warm_from.arch
    else:
        w = init_params(arch, input_dim, c, cfg.init_seed, cfg.init_scale).weights.copy()

    X = d.stacked_bits.reshape(len(d), -1).astype(np.float64)
    y = d.labels
    mask = ModelParams(arch, input_dim, c, w).l2_mask()
    targets_X = None
    if monitored is not None and len(monitored) > 0:
        targets_X = np.stack([t.instance.flat_float() for t in monitored.targets])

    keep = min(5, cfg.epochs)
    kept_logits: list[np.ndarray] = []
    shuffle_rng = np.random.Generator(np.random.PCG64(cfg.shuffle_seed))
    n = len(d)

    for epoch in range(cfg.epochs):
        order = shuffle_rng.permutation(n)
        epoch_loss = 0.0
        for lo in range(0, n, cfg.batch_size):
            idx = order[lo : lo + cfg.batch_size]
            batch_loss, g = _batch_grad(arch, input_dim, c, w, X[idx], y[idx])
            epoch_loss += batch_loss * len(idx)
            g += cfg.l2_penalty * mask * w
            w = w - cfg.learning_rate * g
        if not np.isfinite(epoch_loss) or not np.isfinite(w).all():
            raise DivergenceError(epoch)
        if targets_X is not None:
            kept_logits.append(_raw_logits(arch, input_dim, c, w, targets_X))
            if len(kept_logits) > keep:
                kept_logits.pop(0)

    theta = ModelParams(arch, input_dim, c, w)
    if targets_X is None:
        trace = LogitTrace(())
    else:
        stacked = np.stack(kept_logits)  # (kept, T, C)
        trace = LogitTrace(tuple(stacked[:, t, :].copy() for t in range(stacked.shape[1])))
    return theta, trace


def _raw_logits(arch: Architecture, d: int, c: int, w: np.ndarray, X: np.ndarray) -> np.ndarray:
    if arch.kind == "softmax":
        wm, b = _unpack(arch, d, c, w)
        return X @ wm + b
    w1, b1, w2, b2 = _unpack(arch, d, c, w)
    pre = X @ w1 + b1
    h = np.tanh(pre) if arch.activation == TANH else np.maximum(pre, 0.0)
    return h @ w2 + b2


def _batch_grad(
    arch: Architecture, d: int, c: int, w: np.ndarray, X: np.ndarray, y: np.ndarray
) -> tuple[float, np.ndarray]:
    """Mean cross entropy over the batch and its flat parameter gradient."""
    b = X.shape[0]
    if arch.kind == "softmax":
        wm, bias = _unpack(arch, d, c, w)
        z = X @ wm + bias
        p = _softmax(z)
        nll = float(np.mean(_row_nll(z, y)))
        delta = p
        delta[np.arange(b), y] -= 1.0
        delta /= b
        gw = X.T @ delta
        gb = delta.sum(axis=0)
        return nll, np.concatenate([gw.reshape(-1), gb])
    w1, b1, w2, b2 = _unpack(arch, d, c, w)
    pre = X @ w1 + b1
    h = np.tanh(pre) if arch.activation == TANH else np.maximum(pre, 0.0)
    z = h @ w2 + b2
    p = _softmax(z)
    nll = float(np.mean(_row_nll(z, y)))
    delta = p
    delta[np.arange(b), y] -= 1.0
    delta /= b
    gw2 = h.T @ delta
    gb2 = delta.sum(axis=0)
    dh = delta @ w2.T
    dact = (1.0 - h * h) if arch.activation == TANH else (pre > 0).astype(np.float64)
    dpre = dh * dact
    gw1 = X.T @ dpre
    gb1 = dpre.sum(axis=0)
    return nll, np.concatenate([gw1.reshape(-1), gb1, gw2.reshape(-1), gb2])


def _row_nll(z: np.ndarray, y: np.ndarray) -> np.ndarray:
    m = z.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(z - m).sum(axis=1))
    return lse - z[np.arange(z.shape[0]), y]


def mean_loss(theta: ModelParams, d: Dataset) -> float:
    """Mean cross entropy over a dataset (no penalty term)."""
    if len(d) == 0:
        raise TrainingError("mean_loss over an empty dataset")
    z = dataset_logits(theta, d)
    return float(np.mean(_row_nll(z, d.labels)))


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def model_to_json(theta: ModelParams) -> dict:
    return {
        "arch": theta.arch.kind,
        "hidden": theta.arch.hidden,
        "activation": theta.arch.activation,
        "input_dim": theta.input_dim,
        "num_classes": theta.num_classes,
        "weights": theta.weights.tolist(),
    }


def model_from_json(doc: dict) -> ModelParams:
    try:
        arch = Architecture(doc["arch"], int(doc.get("hidden", 32)), doc.get("activation", TANH))
        return ModelParams(
            arch,
            int(doc["input_dim"]),
            int(doc["num_classes"]),
            np.asarray(doc["weights"], dtype=np.float64),
        )
    except (KeyError, TypeError, ValueError, ConfigError) as exc:
        raise DatasetParseError(f"bad model checkpoint: {exc}") from exc


def save_model(theta: ModelParams, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model_to_json(theta), fh)
        fh.write("\n")


def load_model(path) -> ModelParams:
    with open(path, "r", encoding="utf-8") as fh:
        return model_from_json(json.load(fh))
