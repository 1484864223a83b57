"""Decision-level fusion of member classifiers and the two hybrid strategies.

Members are TrainedModels.  Each member reads its own feature matrix, so
fusion helpers accept either one matrix shared by all members or a list
aligned with the members (the parallel strategy feeds different streams).
"""
from __future__ import annotations

import zlib
from dataclasses import dataclass, field

import numpy as np

from . import learners
from .learners import ModelSpec
from .metrics import classification_metrics

METHODS = ("soft", "wsoft", "hard", "stack_logreg", "stack_rf")
PARALLEL_STREAMS = ("base", "base_lag", "res_only")
# hard-vote probability surrogate: vote share plus a tiny mean-probability tiebreak
HARD_TIE_EPS = 1e-6


class EnsembleError(ValueError):
    pass


def _as_list(X, n):
    if isinstance(X, (list, tuple)):
        if len(X) != n:
            raise EnsembleError(f"expected {n} feature matrices, got {len(X)}")
        return list(X)
    return [X] * n


def member_probas(members, X):
    return [m.predict_proba(x) for m, x in zip(members, _as_list(X, len(members)))]


def soft_vote(P_list, weights=None):
    P_list = [np.asarray(P, dtype=float) for P in P_list]
    if not P_list:
        raise EnsembleError("no member probabilities")
    shape = P_list[0].shape
    if any(P.shape != shape for P in P_list):
        raise EnsembleError("member probability matrices differ in shape")
    if weights is None:
        weights = np.full(len(P_list), 1.0 / len(P_list))
    weights = _check_weights(weights, len(P_list))
    out = np.zeros(shape)
    for w, P in zip(weights, P_list):
        if w:
            out += w * P
    return out / out.sum(axis=-1, keepdims=True)


def _check_weights(weights, n):
    w = np.asarray(weights, dtype=float)
    if w.shape != (n,) or np.any(w < 0) or not np.isclose(w.sum(), 1.0):
        raise EnsembleError("weights must be non-negative, one per member, summing to 1")
    return w


def vote_counts(label_lists, n_classes=learners.N_CLASSES):
    lengths = {len(row) for row in label_lists}
    if len(lengths) != 1:
        raise EnsembleError("label lists must have equal lengths")
    L = np.asarray(label_lists, dtype=np.int64)
    if L.ndim != 2:
        raise EnsembleError("label lists must have equal lengths")
    counts = np.zeros((L.shape[1], n_classes))
    for row in L:
        counts[np.arange(L.shape[1]), row] += 1
    return counts


def hard_vote(label_lists, P_list=None, n_classes=learners.N_CLASSES):
    """Modal label per row.

    Ties go to the tied class with the highest mean member probability
    (when ``P_list`` is given), then to the lowest class index.
    """
    return np.argmax(hard_vote_scores(label_lists, P_list, n_classes), axis=1)


def hard_vote_scores(label_lists, P_list=None, n_classes=learners.N_CLASSES):
    counts = vote_counts(label_lists, n_classes)
    share = counts / counts.sum(axis=1, keepdims=True)
    if P_list is None:
        return share
    mean_p = soft_vote(P_list)
    if mean_p.shape != share.shape:
        raise EnsembleError("probabilities do not match the votes")
    # a vote difference is >= 1/m, which dominates eps * (difference in mean p <= 1)
    S = (1.0 - HARD_TIE_EPS) * share + HARD_TIE_EPS * mean_p
    return S / S.sum(axis=1, keepdims=True)


def fit_weights(members, X_val, y_val):
    """Weights proportional to each member's validation accuracy."""
    y_val = np.asarray(y_val)
    if y_val.size == 0:
        raise EnsembleError("empty validation set")
    acc = np.array([np.mean(m.predict(x) == y_val)
                    for m, x in zip(members, _as_list(X_val, len(members)))])
    return weights_from_accuracy(acc)


def weights_from_accuracy(acc):
    acc = np.asarray(acc, dtype=float)
    if acc.sum() == 0:
        return np.full(acc.size, 1.0 / acc.size)
    return acc / acc.sum()


def meta_features(P_list):
    return np.hstack(P_list)


def default_meta_spec(meta, seed=0):
    if meta in ("logreg", "stack_logreg"):
        return ModelSpec("logreg", {"l2": 1e-4}, seed, "meta_logreg")
    if meta in ("rf", "forest", "stack_rf"):
        return ModelSpec("forest", {"n_trees": 100}, seed, "meta_forest")
    raise EnsembleError(f"unknown meta-learner {meta!r}")


def stack_fit(members, X_val, y_val, meta="logreg", seed=0):
    """Train a meta-learner on the members' validation-run probabilities."""
    y_val = np.asarray(y_val)
    if y_val.size == 0:
        raise EnsembleError("empty validation set")
    spec = meta if isinstance(meta, ModelSpec) else default_meta_spec(meta, seed)
    Z = meta_features(member_probas(members, X_val))
    return learners.train(spec, Z, y_val)


@dataclass
class EnsembleSpec:
    method: str
    members: list
    weights: np.ndarray | None = None
    meta_spec: ModelSpec | None = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise EnsembleError(f"unknown ensemble method {self.method!r}")
        if len(self.members) < 2:
            raise EnsembleError("an ensemble needs at least two members")
        if self.weights is not None:
            self.weights = _check_weights(self.weights, len(self.members))


class Ensemble:
    """A fitted fusion rule over fixed members."""

    def __init__(self, spec, meta_model=None):
        self.spec = spec
        self.meta_model = meta_model

    @property
    def method(self):
        return self.spec.method

    @classmethod
    def fit(cls, method, members, X_val, y_val, seed=0):
        weights, meta_model = None, None
        if method == "wsoft":
            weights = fit_weights(members, X_val, y_val)
        elif method.startswith("stack"):
            meta_model = stack_fit(members, X_val, y_val, method, seed)
        return cls(EnsembleSpec(method, list(members), weights,
                                meta_model.spec if meta_model else None), meta_model)

    def predict_proba_from(self, P_list):
        """Fused probabilities from precomputed member probabilities."""
        m = self.spec.method
        if m == "soft":
            return soft_vote(P_list)
        if m == "wsoft":
            return soft_vote(P_list, self.spec.weights)
        if m == "hard":
            return hard_vote_scores([np.argmax(P, axis=1) for P in P_list], P_list)
        return self.meta_model.predict_proba(meta_features(P_list))

    def predict_proba(self, X):
        return self.predict_proba_from(member_probas(self.spec.members, X))

    def predict(self, X):
        return np.argmax(self.predict_proba(X), axis=1)


@dataclass
class HybridPlan:
    strategy: str
    presets: tuple
    member_specs: list
    methods: tuple = METHODS
    seed: int = 0

    def __post_init__(self):
        if self.strategy not in ("feature_level", "parallel"):
            raise EnsembleError(f"unknown strategy {self.strategy!r}")
        if self.strategy == "parallel" and tuple(self.presets) != PARALLEL_STREAMS:
            raise EnsembleError(f"parallel plan streams must be {PARALLEL_STREAMS}")


@dataclass
class HybridResult:
    members: dict
    ensembles: dict
    member_proba: dict = field(default_factory=dict)   # role -> list of matrices
    proba: dict = field(default_factory=dict)          # method -> role -> matrix
    labels: dict = field(default_factory=dict)         # role -> y
    report: dict = field(default_factory=dict)


def derive_seed(master, *keys):
    tags = [zlib.crc32(str(k).encode()) for k in keys]
    return int(np.random.SeedSequence([int(master)] + tags).generate_state(1)[0] & 0x7FFFFFFF)


def train_members(specs, fm_train, fm_val, preset, seed=0):
    out = {}
    for spec in specs:
        s = ModelSpec(spec.kind, dict(spec.params), derive_seed(seed, preset, spec.name), spec.name)
        out[spec.name] = learners.train(s, fm_train.X, fm_train.labels, fm_val.X, fm_val.labels,
                                        preset=preset)
    return out


def _fuse(members, feats, labels, methods, seed):
    """members: list of models; feats: role -> list of matrices aligned with members."""
    P = {role: member_probas(members, feats[role]) for role in feats}
    ensembles, proba = {}, {}
    for method in methods:
        ens = Ensemble.fit(method, members, feats["val"], labels["val"], seed=derive_seed(seed, method))
        ensembles[method] = ens
        proba[method] = {role: ens.predict_proba_from(P[role]) for role in P}
    return P, ensembles, proba


def _report(names, P, proba, labels, extra=None):
    y = labels["test"]
    rep = {"members": {n: classification_metrics(y, np.argmax(P["test"][i], axis=1))
                       for i, n in enumerate(names)},
           "ensembles": {m: classification_metrics(y, np.argmax(proba[m]["test"], axis=1))
                         for m in proba}}
    if extra:
        rep.update(extra)
    return rep


def run_feature_level(plan, data, preset, members=None):
    """Train the member kinds on one preset and fuse them with every method.

    ``data`` maps preset -> role -> FeatureMatrix.  Pre-trained ``members``
    (name -> model) may be passed to skip training.
    """
    fms = data[preset]
    if members is None:
        members = train_members(plan.member_specs, fms["train"], fms["val"], preset, plan.seed)
    names = list(members)
    models = [members[n] for n in names]
    roles = [r for r in ("val", "calib", "test") if r in fms]
    labels = {r: fms[r].labels for r in roles}
    feats = {r: [fms[r].X] * len(models) for r in roles}
    P, ens, proba = _fuse(models, feats, labels, plan.methods, derive_seed(plan.seed, preset))
    report = _report(names, P, proba, labels, {"strategy": "feature_level", "preset": preset,
                                               "member_names": names})
    return HybridResult(members, ens, P, proba, labels, report)


def run_parallel(plan, data, members=None):
    """Fuse the members of all three streams (12 members by default) at decision level.

    ``members`` maps stream preset -> name -> model; missing streams are trained.
    """
    members = dict(members or {})
    for stream in plan.presets:
        if stream not in members:
            fms = data[stream]
            members[stream] = train_members(plan.member_specs, fms["train"], fms["val"], stream,
                                            plan.seed)
    flat, models, streams = {}, [], []
    for stream in plan.presets:
        for name, m in members[stream].items():
            flat[f"{stream}/{name}"] = m
            models.append(m)
            streams.append(stream)
    ref = data[plan.presets[0]]
    roles = [r for r in ("val", "calib", "test") if r in ref]
    labels = {}
    for r in roles:
        labels[r] = ref[r].labels
        for stream in plan.presets[1:]:
            fm = data[stream][r]
            if not (np.array_equal(fm.labels, labels[r]) and np.array_equal(fm.run_ids, ref[r].run_ids)
                    and np.array_equal(fm.time_index, ref[r].time_index)):
                raise EnsembleError("stream feature rows are not aligned")
    feats = {r: [data[s][r].X for s in streams] for r in roles}
    P, ens, proba = _fuse(models, feats, labels, plan.methods, derive_seed(plan.seed, "parallel"))
    report = _report(list(flat), P, proba, labels, {"strategy": "parallel",
                                                    "streams": list(plan.presets),
                                                    "member_names": list(flat)})
    return HybridResult(flat, ens, P, proba, labels, report)
