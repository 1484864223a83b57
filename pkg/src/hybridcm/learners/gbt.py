"""Gradient-boosted trees on the softmax cross-entropy, one tree per class per round.

Leaves take Newton steps -G/(H + lambda) and splits maximise the matching
second-order gain, with shrinkage by the learning rate.
"""
import numpy as np

from . import _trees
from .base import N_CLASSES, TrainedModel, one_hot, softmax


class GBTModel(TrainedModel):
    kind = "gbt"

    def __init__(self, spec, n_features, trees, base_score, train_loss=(), **kw):
        super().__init__(spec, n_features, **kw)
        self.trees = trees
        self.base_score = np.asarray(base_score, dtype=float)
        self.train_loss = list(train_loss)

    def decision_function(self, X):
        t = self.trees
        return _trees.boosted_scores(np.ascontiguousarray(X, dtype=float), t["offsets"],
                                     t["tree_class"], t["feature"], t["threshold"], t["left"],
                                     t["right"], t["value"], self.n_classes,
                                     float(self.spec.get("learning_rate")), self.base_score)

    def _scores(self, X):
        return softmax(self.decision_function(X))

    def state(self):
        arrays = dict(self.trees)
        arrays["base_score"] = self.base_score
        return {"train_loss": self.train_loss}, arrays

    @classmethod
    def from_state(cls, spec, n_features, meta, scalars, arrays, **kw):
        arrays = dict(arrays)
        base = arrays.pop("base_score")
        return cls(spec, n_features, arrays, base, scalars.get("train_loss", ()), meta=meta, **kw)


def cross_entropy(P, y):
    return float(-np.mean(np.log(np.clip(P[np.arange(len(y)), y], 1e-300, None))))


def train_gbt(spec, X, y, n_classes=N_CLASSES, **kw):
    n, p = X.shape
    rounds = int(spec.get("n_rounds"))
    depth = int(spec.get("max_depth"))
    lr = float(spec.get("learning_rate"))
    lam = float(spec.get("reg_lambda"))
    mcw = float(spec.get("min_child_weight"))
    gamma = float(spec.get("gamma"))
    edges = _trees.make_bin_edges(X)
    Xb = np.ascontiguousarray(_trees.apply_bins(X, edges))
    nbins = np.array([len(e) + 1 for e in edges], dtype=np.int64)
    tab = _trees.edges_table(edges)

    prior = np.bincount(y, minlength=n_classes) / n
    base = np.log(np.clip(prior, 1e-12, None))
    base -= base.mean()
    F = np.tile(base, (n, 1))
    Y = one_hot(y, n_classes)
    parts = {k: [] for k in ("feature", "split_bin", "left", "right", "value")}
    sizes, tree_class = [], []
    losses = []
    for _ in range(rounds):
        P = softmax(F)
        losses.append(cross_entropy(P, y))
        for c in range(n_classes):
            g = P[:, c] - Y[:, c]
            h = np.maximum(P[:, c] * (1.0 - P[:, c]), 1e-16)
            f, b, l, r, v, leaf = _trees.grow_newton_tree(Xb, g, h, nbins, _trees.MAX_BINS + 1,
                                                          depth, lam, mcw, gamma)
            F[:, c] += lr * v[leaf]
            for key, arr in zip(parts, (f, b, l, r, v)):
                parts[key].append(arr)
            sizes.append(len(f))
            tree_class.append(c)
    losses.append(cross_entropy(softmax(F), y))

    offsets = np.zeros(len(sizes) + 1, dtype=np.int64)
    offsets[1:] = np.cumsum(sizes)
    feature = np.concatenate(parts["feature"]) if sizes else np.zeros(0, np.int32)
    split_bin = np.concatenate(parts["split_bin"]) if sizes else np.zeros(0, np.int32)
    trees = {
        "offsets": offsets,
        "tree_class": np.array(tree_class, dtype=np.int64),
        "feature": feature,
        "threshold": np.where(feature >= 0, tab[np.maximum(feature, 0), split_bin], 0.0),
        "left": np.concatenate(parts["left"]) if sizes else np.zeros(0, np.int32),
        "right": np.concatenate(parts["right"]) if sizes else np.zeros(0, np.int32),
        "value": np.concatenate(parts["value"]) if sizes else np.zeros(0),
    }
    return GBTModel(spec, p, trees, base, losses, n_classes=n_classes, **kw)
