"""Two-hidden-layer dropout network with a softmax head, trained by RMSProp.

The eight tunables are the two dropout rates, the two layer widths, the learning
rate, the number of epochs, the batch size and RMSProp's decay factor ``rho``.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, fields
from typing import Any, Mapping

import numpy as np

from .data import Dataset, HoldoutSet
from .errors import DomainError, TrainingFailed
from .evaluation import EvalRecord, SplitSpec, accuracy, cce_per_sample, split_train_val

RMSPROP_EPS = 1e-8
_EVAL_CHUNK = 2048


@dataclass(frozen=True)
class MLPConfig:
    dropout1: float = 0.4
    dropout2: float = 0.3
    units1: int = 256
    units2: int = 128
    lr: float = 0.001
    epochs: int = 20
    batch_size: int = 64
    rho: float = 0.9

    def __post_init__(self):
        for name in ("units1", "units2", "epochs", "batch_size"):
            value = getattr(self, name)
            if value != int(value):
                raise DomainError(f"{name} must be an integer, got {value!r}")
            object.__setattr__(self, name, int(value))
        problems = []
        if not (0 <= self.dropout1 < 1 and 0 <= self.dropout2 < 1):
            problems.append("dropout rates must lie in [0, 1)")
        if self.units1 < 1 or self.units2 < 1:
            problems.append("units must be >= 1")
        if not self.lr > 0:
            problems.append("lr must be positive")
        if self.epochs < 1 or self.batch_size < 1:
            problems.append("epochs and batch_size must be >= 1")
        if not 0 < self.rho < 1:
            problems.append("rho must lie in (0, 1)")
        if problems:
            raise DomainError("; ".join(problems))

    @classmethod
    def from_mapping(cls, values: Mapping[str, Any]) -> "MLPConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in values.items() if k in known})


class Network:
    """Dense 64 -> units1 -> units2 -> C stack; parameters are ``[W1, b1, W2, b2, W3, b3]``."""

    def __init__(self, in_dim: int, units1: int, units2: int, n_classes: int,
                 dropout=(0.0, 0.0), seed: int = 0):
        rng = np.random.default_rng(seed)
        sizes = [(in_dim, units1), (units1, units2), (units2, n_classes)]
        self.params = []
        for fan_in, fan_out in sizes:
            self.params.append(rng.normal(0.0, math.sqrt(2.0 / fan_in), size=(fan_in, fan_out)))
            self.params.append(np.zeros(fan_out))
        self.accum = [np.zeros_like(p) for p in self.params]
        self.dropout = tuple(float(r) for r in dropout)
        self.steps = 0

    @property
    def in_dim(self) -> int:
        return self.params[0].shape[0]

    @property
    def n_classes(self) -> int:
        return self.params[-1].shape[0]

    def predict_proba(self, features: np.ndarray) -> np.ndarray:
        out = [forward(self, features[i:i + _EVAL_CHUNK], "infer")[0]
               for i in range(0, features.shape[0], _EVAL_CHUNK)]
        return np.concatenate(out) if out else np.zeros((0, self.n_classes))


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _dropout_mask(rng, shape, rate: float) -> np.ndarray | None:
    if rate <= 0:
        return None
    return (rng.random(shape) >= rate) / (1.0 - rate)


def forward(net: Network, batch: np.ndarray, mode: str = "infer", dropout_seed=None):
    """Return class probabilities and the activations ``backward`` needs.

    ``dropout_seed`` may be an int or a ``numpy.random.Generator``; it is only
    consulted in train mode. Dropout is inverted: kept units are scaled by 1/(1-rate).
    """
    if mode not in ("train", "infer"):
        raise DomainError(f"mode must be 'train' or 'infer', got {mode!r}")
    batch = np.asarray(batch, dtype=float)
    if batch.ndim != 2 or batch.shape[1] != net.in_dim:
        raise DomainError(f"batch width {batch.shape[-1]} does not match input size {net.in_dim}")
    W1, b1, W2, b2, W3, b3 = net.params
    rng = np.random.default_rng(dropout_seed) if mode == "train" else None

    z1 = batch @ W1 + b1
    a1 = np.maximum(z1, 0.0)
    m1 = _dropout_mask(rng, a1.shape, net.dropout[0]) if rng is not None else None
    h1 = a1 * m1 if m1 is not None else a1

    z2 = h1 @ W2 + b2
    a2 = np.maximum(z2, 0.0)
    m2 = _dropout_mask(rng, a2.shape, net.dropout[1]) if rng is not None else None
    h2 = a2 * m2 if m2 is not None else a2

    probs = softmax(h2 @ W3 + b3)
    cache = {"x": batch, "z1": z1, "m1": m1, "h1": h1, "z2": z2, "m2": m2, "h2": h2, "p": probs}
    return probs, cache


def loss_cce(probs: np.ndarray, labels: np.ndarray) -> float:
    """Mean categorical cross-entropy with probabilities clipped to [1e-7, 1 - 1e-7]."""
    return float(np.mean(cce_per_sample(probs, labels)))


def backward(net: Network, cache: dict, labels: np.ndarray) -> list[np.ndarray]:
    """Gradients of the mean cross-entropy, in the order of ``net.params``.

    Uses the unclipped softmax/cross-entropy derivative ``(p - y) / N``.
    """
    W1, b1, W2, b2, W3, b3 = net.params
    n = labels.shape[0]
    dlogits = (cache["p"] - labels) / n
    gW3 = cache["h2"].T @ dlogits
    gb3 = dlogits.sum(axis=0)

    dh2 = dlogits @ W3.T
    da2 = dh2 * cache["m2"] if cache["m2"] is not None else dh2
    dz2 = da2 * (cache["z2"] > 0)
    gW2 = cache["h1"].T @ dz2
    gb2 = dz2.sum(axis=0)

    dh1 = dz2 @ W2.T
    da1 = dh1 * cache["m1"] if cache["m1"] is not None else dh1
    dz1 = da1 * (cache["z1"] > 0)
    gW1 = cache["x"].T @ dz1
    gb1 = dz1.sum(axis=0)
    return [gW1, gb1, gW2, gb2, gW3, gb3]


def rmsprop_step(net: Network, grads, lr: float, rho: float, eps: float = RMSPROP_EPS) -> Network:
    for w, v, g in zip(net.params, net.accum, grads):
        v *= rho
        v += (1.0 - rho) * g * g
        w -= lr * g / (np.sqrt(v) + eps)
    net.steps += 1
    return net


def evaluate(net: Network, data: Dataset) -> tuple[float, float]:
    probs = net.predict_proba(data.features)
    return loss_cce(probs, data.labels), accuracy(probs, data.labels)


def train(config: MLPConfig, train_set: Dataset, val_set: Dataset | None = None, seed: int = 0):
    """Fit a fresh network; returns ``(net, history)``.

    The history holds one entry per epoch for ``loss``, ``acc``, ``val_loss`` and
    ``val_acc``; the training metrics are measured in inference mode over the whole
    training set at the end of each epoch.
    """
    if len(train_set) == 0:
        raise DomainError("empty training set")
    init_seed, shuffle_seed, drop_seed = np.random.SeedSequence(seed).spawn(3)
    net = Network(train_set.n_features, config.units1, config.units2, train_set.n_classes,
                  (config.dropout1, config.dropout2), seed=init_seed)
    shuffle_rng = np.random.default_rng(shuffle_seed)
    drop_rng = np.random.default_rng(drop_seed)
    history = {"loss": [], "acc": [], "val_loss": [], "val_acc": []}
    n = len(train_set)
    with np.errstate(over="ignore", invalid="ignore"):   # divergence is caught below
        _fit_epochs(net, config, train_set, val_set, shuffle_rng, drop_rng, history)
    return net, history


def _fit_epochs(net, config, train_set, val_set, shuffle_rng, drop_rng, history) -> None:
    n = len(train_set)
    for _ in range(config.epochs):
        order = shuffle_rng.permutation(n)
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            labels = train_set.labels[idx]
            _, cache = forward(net, train_set.features[idx], "train", drop_rng)
            rmsprop_step(net, backward(net, cache, labels), config.lr, config.rho)
        loss, acc = evaluate(net, train_set)
        if not math.isfinite(loss) or not all(np.isfinite(p).all() for p in net.params):
            raise TrainingFailed("non-finite training loss")
        history["loss"].append(loss)
        history["acc"].append(acc)
        if val_set is not None and len(val_set):
            vl, va = evaluate(net, val_set)
            history["val_loss"].append(vl)
            history["val_acc"].append(va)


class MLPTrainer:
    """Adapter to the evaluation protocols: ``trainer(config, data) -> fitted net``."""

    def __init__(self, seed: int = 0):
        self.seed = seed

    def __call__(self, config, data: Dataset) -> Network:
        cfg = config if isinstance(config, MLPConfig) else MLPConfig.from_mapping(config)
        return train(cfg, data, None, self.seed)[0]


class MLPObjective:
    """Built-in tuning objective: validation loss of the network on a fixed split.

    A test fraction is held out first and wrapped in a :class:`HoldoutSet`; the tuner
    never reads it.
    """

    def __init__(self, dataset: Dataset, validation_split: float = 0.2,
                 test_fraction: float = 0.2, split_seed: int = 0):
        rest, test = split_train_val(dataset, SplitSpec(test_fraction, split_seed))
        self.train_set, self.val_set = split_train_val(rest, SplitSpec(validation_split, split_seed + 1))
        self.test_set = HoldoutSet(test)

    def __call__(self, config: Mapping[str, Any], seed: int = 0) -> EvalRecord:
        start = time.perf_counter()
        try:
            cfg = MLPConfig.from_mapping(config)
            _, hist = train(cfg, self.train_set, self.val_set, seed)
        except (DomainError, TrainingFailed, FloatingPointError) as exc:
            return EvalRecord.failure("failed", str(exc), time.perf_counter() - start, seed)
        return EvalRecord(val_loss=hist["val_loss"][-1], val_acc=hist["val_acc"][-1],
                          train_loss=hist["loss"][-1], train_acc=hist["acc"][-1],
                          runtime=time.perf_counter() - start, seed=seed, history=hist)
