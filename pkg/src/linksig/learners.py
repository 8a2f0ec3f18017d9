"""Small regression models mapping link features to CIR tap vectors."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np


class ModelKind(str, Enum):
    RIDGE = "ridge"
    KNN = "knn"
    MLP = "mlp"


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class Standardizer:
    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, x: np.ndarray) -> "Standardizer":
        mean = x.mean(axis=0)
        scale = x.std(axis=0)
        scale = np.where(scale > 0, scale, 1.0)
        return cls(mean, scale)

    def __call__(self, x):
        return (np.asarray(x, dtype=float) - self.mean) / self.scale


def _as_2d(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return x[:, None] if x.ndim == 1 else x


class RidgeRegression:
    def __init__(self, alpha: float = 1.0):
        if alpha < 0:
            raise ValueError("alpha must be >= 0")
        self.alpha = float(alpha)

    def fit(self, x, y):
        x, y = _as_2d(x), _as_2d(y)
        self.norm = Standardizer.fit(x)
        z = self.norm(x)
        self.y_mean = y.mean(axis=0)
        gram = z.T @ z + self.alpha * np.eye(z.shape[1])
        if self.alpha == 0 and np.linalg.matrix_rank(gram) < gram.shape[0]:
            raise TrainingError("singular normal equations with alpha = 0; use alpha > 0")
        self.coef = np.linalg.solve(gram, z.T @ (y - self.y_mean))
        return self

    def predict(self, x):
        return self.norm(_as_2d(x)) @ self.coef + self.y_mean


class KNearestAverage:
    def __init__(self, k: int = 5):
        if k < 1:
            raise ValueError("k must be >= 1")
        self.k = int(k)

    def fit(self, x, y):
        x, y = _as_2d(x), _as_2d(y)
        self.norm = Standardizer.fit(x)
        self.z = self.norm(x)
        self.y = y.copy()
        return self

    def predict(self, x):
        q = self.norm(_as_2d(x))
        d2 = ((q[:, None, :] - self.z[None, :, :]) ** 2).sum(axis=2)
        k = min(self.k, len(self.z))
        idx = np.argsort(d2, axis=1, kind="stable")[:, :k]
        return self.y[idx].mean(axis=1)


class MultiLayerPerceptron:
    """One tanh hidden layer, linear output, full-batch gradient descent (Adam steps).

    Targets are standardized per output; duplicate feature rows are merged by
    averaging their labels, which leaves the squared-error minimizer unchanged.
    """

    def __init__(
        self,
        width: int = 64,
        learning_rate: float = 0.01,
        epochs: int = 1000,
        weight_decay: float = 1e-2,
        seed: int = 0,
        betas: tuple = (0.9, 0.999),
    ):
        self.width = int(width)
        self.learning_rate = float(learning_rate)
        self.epochs = int(epochs)
        self.betas = tuple(betas)
        self.weight_decay = float(weight_decay)
        self.seed = seed

    def init_params(self, n_in: int, n_out: int):
        rng = np.random.default_rng(self.seed)
        return {
            "w1": rng.normal(0.0, 1.0 / math.sqrt(n_in), (n_in, self.width)),
            "b1": np.zeros(self.width),
            "w2": rng.normal(0.0, 1.0 / math.sqrt(self.width), (self.width, n_out)),
            "b2": np.zeros(n_out),
        }

    @staticmethod
    def forward(params, z):
        h = np.tanh(z @ params["w1"] + params["b1"])
        return h, h @ params["w2"] + params["b2"]

    def loss_and_grad(self, params, z, t, weights=None):
        """Weighted mean squared error (halved) plus L2 penalty, and its gradient."""
        n = len(z)
        w = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
        w = w / w.sum()
        h, out = self.forward(params, z)
        resid = out - t
        loss = 0.5 * float(np.sum(w[:, None] * resid**2))
        loss += 0.5 * self.weight_decay * float(np.sum(params["w1"] ** 2) + np.sum(params["w2"] ** 2))
        g_out = w[:, None] * resid
        grads = {
            "w2": h.T @ g_out + self.weight_decay * params["w2"],
            "b2": g_out.sum(axis=0),
        }
        g_h = (g_out @ params["w2"].T) * (1.0 - h**2)
        grads["w1"] = z.T @ g_h + self.weight_decay * params["w1"]
        grads["b1"] = g_h.sum(axis=0)
        return loss, grads

    def fit(self, x, y):
        x, y = _as_2d(x), _as_2d(y)
        uniq, inverse, counts = np.unique(x, axis=0, return_inverse=True, return_counts=True)
        inverse = inverse.reshape(-1)
        y_sum = np.zeros((len(uniq), y.shape[1]))
        np.add.at(y_sum, inverse, y)
        y_avg = y_sum / counts[:, None]

        self.norm = Standardizer.fit(x)
        self.out_norm = Standardizer.fit(y)
        z = self.norm(uniq)
        t = self.out_norm(y_avg)
        params = self.init_params(z.shape[1], t.shape[1])
        b1, b2 = self.betas
        m1 = {k: np.zeros_like(v) for k, v in params.items()}
        m2 = {k: np.zeros_like(v) for k, v in params.items()}
        loss = float("inf")
        for step in range(1, self.epochs + 1):
            loss, grads = self.loss_and_grad(params, z, t, counts)
            if not math.isfinite(loss):
                raise TrainingError("MLP training diverged (non-finite loss)")
            for k in params:
                m1[k] = b1 * m1[k] + (1 - b1) * grads[k]
                m2[k] = b2 * m2[k] + (1 - b2) * grads[k] ** 2
                update = (m1[k] / (1 - b1**step)) / (np.sqrt(m2[k] / (1 - b2**step)) + 1e-8)
                params[k] = params[k] - self.learning_rate * update
        self.params = params
        self.final_loss = loss
        return self

    def predict(self, x):
        _, out = self.forward(self.params, self.norm(_as_2d(x)))
        return out * self.out_norm.scale + self.out_norm.mean


DEFAULT_HYPERPARAMS = {
    ModelKind.RIDGE: {"alpha": 1.0},
    ModelKind.KNN: {"k": 5},
    ModelKind.MLP: {"width": 64, "learning_rate": 0.01, "epochs": 1000, "weight_decay": 1e-2},
}


def make_model(kind, hyperparams: dict | None = None, seed: int = 0):
    kind = ModelKind(kind)
    params = dict(DEFAULT_HYPERPARAMS[kind])
    params.update(hyperparams or {})
    if kind is ModelKind.RIDGE:
        return RidgeRegression(**params)
    if kind is ModelKind.KNN:
        return KNearestAverage(**params)
    return MultiLayerPerceptron(seed=seed, **params)
