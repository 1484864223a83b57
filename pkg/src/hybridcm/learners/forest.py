"""Random forest: bootstrap samples, random feature subsets, Gini splits."""
import numpy as np

from . import _trees
from .base import N_CLASSES, TrainedModel, mtry_for


class ForestModel(TrainedModel):
    kind = "forest"

    def __init__(self, spec, n_features, trees, oob_masks=None, n_train=0, **kw):
        super().__init__(spec, n_features, **kw)
        self.trees = trees
        self.oob_masks = oob_masks
        self.n_train = n_train

    @property
    def n_trees(self):
        return len(self.trees["offsets"]) - 1

    def vote_counts(self, X):
        t = self.trees
        return _trees.forest_votes(np.ascontiguousarray(X, dtype=float), t["offsets"], t["feature"],
                                   t["threshold"], t["left"], t["right"], t["leaf_class"],
                                   self.n_classes)

    def _scores(self, X):
        return self.vote_counts(X) / float(self.n_trees)

    def oob_rows(self, tree):
        """Training row indices that tree ``tree`` never saw."""
        mask = np.unpackbits(self.oob_masks[tree], count=self.n_train).astype(bool)
        return np.flatnonzero(mask)

    def state(self):
        arrays = dict(self.trees)
        if self.oob_masks is not None:
            arrays["oob_masks"] = np.stack(self.oob_masks)
        return {"n_train": self.n_train}, arrays

    @classmethod
    def from_state(cls, spec, n_features, meta, scalars, arrays, **kw):
        arrays = dict(arrays)
        oob = arrays.pop("oob_masks", None)
        return cls(spec, n_features, arrays, list(oob) if oob is not None else None,
                   scalars.get("n_train", 0), meta=meta, **kw)


def _pack_trees(trees, edges_tab):
    offsets = np.zeros(len(trees) + 1, dtype=np.int64)
    offsets[1:] = np.cumsum([len(t[0]) for t in trees])
    feature = np.concatenate([t[0] for t in trees])
    split_bin = np.concatenate([t[1] for t in trees])
    left = np.concatenate([t[2] for t in trees])
    right = np.concatenate([t[3] for t in trees])
    threshold = np.where(feature >= 0, edges_tab[np.maximum(feature, 0), split_bin], 0.0)
    return {"offsets": offsets, "feature": feature, "threshold": threshold,
            "left": left, "right": right, "leaf_class": np.concatenate([t[4] for t in trees])}


def train_forest(spec, X, y, n_classes=N_CLASSES, **kw):
    n, p = X.shape
    n_trees = int(spec.get("n_trees"))
    max_depth = spec.get("max_depth")
    min_leaf = int(spec.get("min_leaf"))
    mtry = mtry_for(spec.get("max_features"), p)
    edges = _trees.make_bin_edges(X)
    Xb = _trees.apply_bins(X, edges)
    tab = _trees.edges_table(edges)
    seeds = np.random.SeedSequence(spec.seed).spawn(n_trees)
    trees, oob = [], []
    for ss in seeds:
        rng = np.random.default_rng(ss)
        rows = rng.integers(0, n, size=n)
        inbag = np.zeros(n, dtype=bool)
        inbag[rows] = True
        oob.append(np.packbits(~inbag))
        tree_seed = int(rng.integers(2**31 - 1))
        out = _trees.grow_classification_tree(
            Xb, y, np.sort(rows), n_classes, _trees.MAX_BINS + 1, mtry,
            -1 if max_depth is None else int(max_depth), min_leaf, tree_seed)
        trees.append(out)
    return ForestModel(spec, p, _pack_trees(trees, tab), oob, n, n_classes=n_classes, **kw)
