from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

N_CLASSES = 13


class LearnerError(ValueError):
    pass


@dataclass(frozen=True)
class ModelSpec:
    """What to train: learner kind, hyperparameters and seed."""

    kind: str
    params: dict = field(default_factory=dict)
    seed: int = 0
    name: str = ""

    KINDS = ("forest", "gbt", "mlp", "logreg")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise LearnerError(f"unknown model kind {self.kind!r}")
        for key, val in self.params.items():
            if isinstance(val, (int, float)) and not isinstance(val, bool) and val < 0:
                raise LearnerError(f"hyperparameter {key} must be non-negative")
        if not self.name:
            object.__setattr__(self, "name", self.kind)

    def get(self, key):
        return self.params.get(key, DEFAULTS[self.kind][key])

    def to_dict(self):
        return {"kind": self.kind, "params": dict(self.params), "seed": self.seed, "name": self.name}

    @classmethod
    def from_dict(cls, d):
        return cls(kind=d["kind"], params=dict(d.get("params", {})), seed=d.get("seed", 0),
                   name=d.get("name", ""))


DEFAULTS = {
    "forest": {"n_trees": 200, "max_depth": None, "min_leaf": 1, "max_features": "sqrt"},
    "gbt": {"n_rounds": 100, "max_depth": 6, "learning_rate": 0.1, "reg_lambda": 1.0,
            "min_child_weight": 1.0, "gamma": 0.0},
    "mlp": {"hidden": (64, 32, 8), "learning_rate": 1e-3, "batch_size": 256, "max_epochs": 200,
            "patience": 20},
    "logreg": {"l2": 1e-4, "gtol": 1e-6, "max_iter": 20000},
}


def default_member_specs(seed=0):
    """The four base learners: forest, the two boosting configurations and the MLP."""
    return [
        ModelSpec("forest", {"n_trees": 200}, seed, "forest"),
        ModelSpec("gbt", {"n_rounds": 100, "max_depth": 6, "learning_rate": 0.1}, seed, "gbt_a"),
        ModelSpec("gbt", {"n_rounds": 500, "max_depth": 6, "learning_rate": 0.05}, seed, "gbt_b"),
        ModelSpec("mlp", {"hidden": [64, 32, 8], "learning_rate": 1e-3, "batch_size": 256,
                          "max_epochs": 200, "patience": 20}, seed, "mlp"),
    ]


def check_xy(X, y=None, n_classes=N_CLASSES):
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise LearnerError(f"X must be 2-D, got shape {X.shape}")
    if X.shape[0] == 0:
        raise LearnerError("empty training set")
    if not np.all(np.isfinite(X)):
        raise LearnerError("non-finite feature values")
    if y is None:
        return X, None
    y = np.asarray(y)
    if y.shape != (X.shape[0],):
        raise LearnerError("labels must be a vector matching the rows of X")
    if not np.issubdtype(y.dtype, np.integer):
        if np.any(y != np.round(y)):
            raise LearnerError("labels must be integers")
    y = y.astype(np.int64)
    if y.min() < 0 or y.max() >= n_classes:
        raise LearnerError(f"labels must lie in 0..{n_classes - 1}")
    return X, y


def softmax(Z):
    Z = Z - Z.max(axis=1, keepdims=True)
    E = np.exp(Z)
    return E / E.sum(axis=1, keepdims=True)


def one_hot(y, n_classes=N_CLASSES):
    Y = np.zeros((y.shape[0], n_classes))
    Y[np.arange(y.shape[0]), y] = 1.0
    return Y


class Standardizer:
    def __init__(self, mean, scale):
        self.mean = np.asarray(mean, dtype=float)
        self.scale = np.asarray(scale, dtype=float)

    @classmethod
    def fit(cls, X):
        mean = X.mean(axis=0)
        scale = X.std(axis=0)
        scale[scale == 0] = 1.0
        return cls(mean, scale)

    def __call__(self, X):
        return (X - self.mean) / self.scale


class TrainedModel:
    """Probability-emitting classifier over ``n_classes`` labels.

    Subclasses implement ``_scores`` returning an (n, K) probability matrix
    and ``state``/``from_state`` for serialization.
    """

    kind = ""

    def __init__(self, spec, n_features, n_classes=N_CLASSES, preset="", meta=None):
        self.spec = spec
        self.n_features = int(n_features)
        self.n_classes = int(n_classes)
        self.preset = preset
        self.meta = dict(meta or {})

    def predict_proba(self, X):
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise LearnerError(f"expected {self.n_features} features, got shape {X.shape}")
        P = self._scores(X)
        P = np.clip(P, 0.0, None)
        return P / P.sum(axis=1, keepdims=True)

    def predict(self, X):
        return np.argmax(self.predict_proba(X), axis=1)

    def _scores(self, X):
        raise NotImplementedError

    def state(self):
        raise NotImplementedError

    def __repr__(self):
        return f"{type(self).__name__}({self.spec.name}, n_features={self.n_features}, preset={self.preset!r})"


def mtry_for(max_features, p):
    if max_features == "sqrt":
        return max(1, int(math.sqrt(p)))
    if max_features is None:
        return p
    if isinstance(max_features, float):
        return max(1, int(max_features * p))
    return max(1, min(p, int(max_features)))
