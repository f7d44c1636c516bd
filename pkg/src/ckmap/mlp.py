"""Fully connected ReLU regression network trained with backpropagation.

Inputs and targets are z-scored with statistics taken from the training
data; the network itself, its loss and its gradients all live in that
normalised space, and :func:`forward` maps predictions back to raw units.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional

import numpy as np

# hidden widths of the default channel-gain-map network
CGM_HIDDEN = (64, 128, 256, 512, 256, 128, 64)
GAIN_FLOOR_DB = -200.0


@dataclass(frozen=True)
class MlpPlan:
    layer_dims: tuple

    def __post_init__(self):
        dims = tuple(int(d) for d in self.layer_dims)
        if len(dims) < 2 or min(dims) < 1:
            raise ValueError(f"invalid layer plan {self.layer_dims}")
        object.__setattr__(self, "layer_dims", dims)

    @classmethod
    def layered(cls, n_out: int, n_in: int = 4) -> "MlpPlan":
        return cls((n_in,) + CGM_HIDDEN + (n_out,))


@dataclass
class Mlp:
    plan: MlpPlan
    weights: List[np.ndarray]
    biases: List[np.ndarray]
    x_mean: np.ndarray
    x_std: np.ndarray
    y_mean: np.ndarray
    y_std: np.ndarray

    @property
    def n_in(self) -> int:
        return self.plan.layer_dims[0]

    @property
    def n_out(self) -> int:
        return self.plan.layer_dims[-1]

    def copy(self) -> "Mlp":
        return Mlp(
            self.plan,
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.x_mean.copy(),
            self.x_std.copy(),
            self.y_mean.copy(),
            self.y_std.copy(),
        )


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 64
    epochs: int = 200
    seed: int = 0
    optimizer: str = "adam"  # or "sgd"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    gain_floor_db: float = GAIN_FLOOR_DB

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


def init(plan: MlpPlan, seed: int = 0) -> Mlp:
    """He-uniform weights (bound sqrt(6/fan_in)), zero biases, identity normalisation."""
    rng = np.random.default_rng(seed)
    dims = plan.layer_dims
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = np.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return Mlp(
        plan, weights, biases,
        np.zeros(dims[0]), np.ones(dims[0]), np.zeros(dims[-1]), np.ones(dims[-1]),
    )


def _check_x(mlp: Mlp, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != mlp.n_in:
        raise ValueError(f"expected {mlp.n_in} input features, got {x.shape[-1]}")
    return x


def _forward_norm(mlp: Mlp, z: np.ndarray):
    """Normalised-space forward pass; returns (output, activations, pre-activations)."""
    acts = [z]
    pres = []
    a = z
    last = len(mlp.weights) - 1
    for i, (w, b) in enumerate(zip(mlp.weights, mlp.biases)):
        pre = a @ w + b
        pres.append(pre)
        a = pre if i == last else np.maximum(pre, 0.0)
        acts.append(a)
    return a, acts, pres


def forward(mlp: Mlp, x) -> np.ndarray:
    x = _check_x(mlp, x)
    z = (x - mlp.x_mean) / mlp.x_std
    out, _, _ = _forward_norm(mlp, z)
    return out * mlp.y_std + mlp.y_mean


def _normalise_targets(mlp: Mlp, y) -> np.ndarray:
    return (np.asarray(y, dtype=np.float64) - mlp.y_mean) / mlp.y_std


def loss_and_grad(mlp: Mlp, x, y):
    """Mean squared error over batch and outputs, and its gradients.

    Returns ``(mse, [(dW, db), ...])`` per layer. The ReLU subgradient at 0
    is taken as 0.
    """
    x = np.atleast_2d(_check_x(mlp, x))
    t = np.atleast_2d(_normalise_targets(mlp, y))
    if x.shape[0] == 0:
        raise ValueError("empty batch")
    z = (x - mlp.x_mean) / mlp.x_std
    out, acts, pres = _forward_norm(mlp, z)
    err = out - t
    mse = float(np.mean(err * err))

    delta = 2.0 * err / err.size
    grads = [None] * len(mlp.weights)
    for i in range(len(mlp.weights) - 1, -1, -1):
        grads[i] = (acts[i].T @ delta, delta.sum(axis=0))
        if i > 0:
            delta = (delta @ mlp.weights[i].T) * (pres[i - 1] > 0.0)
    return mse, grads


def mse(mlp: Mlp, x, y) -> float:
    """Normalised-space MSE of ``mlp`` on a dataset (no gradients)."""
    x = np.atleast_2d(_check_x(mlp, x))
    t = np.atleast_2d(_normalise_targets(mlp, y))
    out, _, _ = _forward_norm(mlp, (x - mlp.x_mean) / mlp.x_std)
    return float(np.mean((out - t) ** 2))


def clamp_targets(y, floor_db: float = GAIN_FLOOR_DB) -> np.ndarray:
    """Replace ``-inf`` (no link) gains by a finite floor."""
    y = np.asarray(y, dtype=np.float64)
    return np.where(np.isneginf(y) | (y < floor_db), floor_db, y)


def _stats(a: np.ndarray):
    mean = a.mean(axis=0)
    std = a.std(axis=0)
    return mean, np.where(std > 0, std, 1.0)


def train(mlp: Mlp, x, y, cfg: Optional[TrainConfig] = None):
    """Mini-batch training on ``(x, y)``.

    Normalisation statistics are recomputed from the data first. Returns
    ``(trained_mlp, history)`` where ``history[0]`` is the MSE before the
    first update and ``history[e]`` the full-data MSE after epoch ``e``.
    """
    cfg = cfg or TrainConfig()
    x = np.atleast_2d(_check_x(mlp, x))
    y = clamp_targets(np.atleast_2d(y), cfg.gain_floor_db)
    n = x.shape[0]
    if n == 0:
        raise ValueError("empty training set")
    if y.shape != (n, mlp.n_out):
        raise ValueError(f"targets must have shape {(n, mlp.n_out)}, got {y.shape}")

    net = mlp.copy()
    net.x_mean, net.x_std = _stats(x)
    net.y_mean, net.y_std = _stats(y)

    rng = np.random.default_rng(cfg.seed)
    params = [p for wb in zip(net.weights, net.biases) for p in wb]
    m = [np.zeros_like(p) for p in params]
    v = [np.zeros_like(p) for p in params]
    step = 0
    history = [mse(net, x, y)]
    for _ in range(cfg.epochs):
        perm = rng.permutation(n)
        for s in range(0, n, cfg.batch_size):
            idx = perm[s : s + cfg.batch_size]
            _, grads = loss_and_grad(net, x[idx], y[idx])
            flat = [g for wb in grads for g in wb]
            step += 1
            if cfg.optimizer == "sgd":
                for p, g in zip(params, flat):
                    p -= cfg.learning_rate * g
                continue
            c1 = 1.0 - cfg.beta1 ** step
            c2 = 1.0 - cfg.beta2 ** step
            for p, g, mi, vi in zip(params, flat, m, v):
                mi *= cfg.beta1
                mi += (1.0 - cfg.beta1) * g
                vi *= cfg.beta2
                vi += (1.0 - cfg.beta2) * g * g
                p -= cfg.learning_rate * (mi / c1) / (np.sqrt(vi / c2) + cfg.eps)
        history.append(mse(net, x, y))
    return net, history


def split_train_test(n: int, test_fraction: float = 0.2, seed: int = 0):
    """Seeded index split; returns ``(train_idx, test_idx)``."""
    if not 0.0 <= test_fraction < 1.0:
        raise ValueError("test_fraction must be in [0, 1)")
    perm = np.random.default_rng(seed).permutation(n)
    n_test = int(round(n * test_fraction))
    return np.sort(perm[n_test:]), np.sort(perm[:n_test])


def to_dict(mlp: Mlp) -> dict:
    return {
        "layer_dims": list(mlp.plan.layer_dims),
        "activation": "relu hidden, identity output",
        "x_mean": mlp.x_mean.tolist(),
        "x_std": mlp.x_std.tolist(),
        "y_mean": mlp.y_mean.tolist(),
        "y_std": mlp.y_std.tolist(),
        "weights": [w.tolist() for w in mlp.weights],
        "biases": [b.tolist() for b in mlp.biases],
    }


def from_dict(doc: dict) -> Mlp:
    plan = MlpPlan(tuple(doc["layer_dims"]))
    net = Mlp(
        plan,
        [np.array(w, dtype=np.float64).reshape(a, b)
         for w, a, b in zip(doc["weights"], plan.layer_dims[:-1], plan.layer_dims[1:])],
        [np.array(b, dtype=np.float64) for b in doc["biases"]],
        np.array(doc["x_mean"], float), np.array(doc["x_std"], float),
        np.array(doc["y_mean"], float), np.array(doc["y_std"], float),
    )
    if np.any(net.x_std <= 0) or np.any(net.y_std <= 0):
        raise ValueError("normalisation std must be positive")
    return net
