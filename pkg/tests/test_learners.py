import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hybridcm import learners
from hybridcm.learners import LearnerError, ModelSpec, load_model, save_model, train
from hybridcm.learners import _trees
from hybridcm.learners.forest import ForestModel
from hybridcm.learners.logreg import zero_model
from hybridcm.learners.mlp import init_params, loss_and_grad

SMALL = {
    "forest": ModelSpec("forest", {"n_trees": 15}, seed=1),
    "gbt": ModelSpec("gbt", {"n_rounds": 10, "max_depth": 3}, seed=1),
    "mlp": ModelSpec("mlp", {"hidden": [16, 8], "max_epochs": 60, "patience": 10, "batch_size": 32}, seed=1),
    "logreg": ModelSpec("logreg", seed=1),
}


def multiclass(n=600, k=5, seed=0):
    rng = np.random.default_rng(seed)
    centers = rng.normal(0, 4, (k, 4))
    y = rng.integers(0, k, n)
    X = centers[y] + rng.normal(0, 1, (n, 4))
    return X, y


@pytest.mark.parametrize("kind", sorted(SMALL))
def test_separable_toy(kind, blobs):
    X, y = blobs
    m = train(SMALL[kind], X, y, X, y)
    assert np.mean(m.predict(X) == y) == 1.0


@pytest.mark.parametrize("kind", sorted(SMALL))
def test_deterministic(kind):
    X, y = multiclass()
    probe = np.random.default_rng(9).normal(0, 4, (50, 4))
    a = train(SMALL[kind], X[:400], y[:400], X[400:], y[400:]).predict_proba(probe)
    b = train(SMALL[kind], X[:400], y[:400], X[400:], y[400:]).predict_proba(probe)
    assert a.tobytes() == b.tobytes()


@pytest.mark.parametrize("kind", sorted(SMALL))
def test_simplex_and_argmax(kind):
    X, y = multiclass()
    m = train(SMALL[kind], X[:400], y[:400], X[400:], y[400:])
    probe = np.random.default_rng(3).normal(0, 6, (1000, 4))
    P = m.predict_proba(probe)
    assert P.shape == (1000, 13)
    assert np.all(P >= 0)
    assert np.abs(P.sum(axis=1) - 1).max() < 1e-9
    np.testing.assert_array_equal(m.predict(probe), np.argmax(P, axis=1))


@pytest.mark.parametrize("kind", sorted(SMALL))
def test_serialization_roundtrip(kind, tmp_path):
    X, y = multiclass()
    m = train(SMALL[kind], X[:400], y[:400], X[400:], y[400:], preset="base")
    save_model(m, tmp_path / "m.npz")
    back = load_model(tmp_path / "m.npz", preset="base")
    np.testing.assert_array_equal(back.predict_proba(X), m.predict_proba(X))
    assert back.spec == m.spec
    with pytest.raises(LearnerError, match="preset"):
        load_model(tmp_path / "m.npz", preset="base_lag")


class TestValidation:
    def test_empty(self):
        with pytest.raises(LearnerError):
            train(SMALL["forest"], np.zeros((0, 3)), np.zeros(0, int))

    @pytest.mark.parametrize("bad", [-1, 13])
    def test_label_range(self, bad):
        X, y = multiclass(50)
        y[3] = bad
        with pytest.raises(LearnerError):
            train(SMALL["logreg"], X, y)

    def test_non_finite(self):
        X, y = multiclass(50)
        X[2, 1] = np.nan
        with pytest.raises(LearnerError):
            train(SMALL["gbt"], X, y)

    def test_length_mismatch(self):
        X, y = multiclass(50)
        with pytest.raises(LearnerError):
            train(SMALL["gbt"], X, y[:-1])

    def test_width_mismatch(self):
        X, y = multiclass(80)
        m = train(SMALL["logreg"], X, y)
        with pytest.raises(LearnerError):
            m.predict_proba(X[:, :3])

    def test_mlp_needs_validation(self):
        X, y = multiclass(80)
        with pytest.raises(LearnerError):
            train(SMALL["mlp"], X, y)

    def test_spec_validation(self):
        with pytest.raises(LearnerError):
            ModelSpec("svm")
        with pytest.raises(LearnerError):
            ModelSpec("gbt", {"learning_rate": -0.1})


class TestForest:
    def test_unanimous_trees_give_one_hot(self):
        X = np.zeros((20, 2))
        y = np.full(20, 6)
        m = train(ModelSpec("forest", {"n_trees": 7}), X, y)
        P = m.predict_proba(np.random.default_rng(0).normal(size=(5, 2)))
        np.testing.assert_array_equal(P, np.tile(np.eye(13)[6], (5, 1)))

    def test_votes_match_brute_force(self):
        X, y = multiclass(300)
        m = train(ModelSpec("forest", {"n_trees": 5}, seed=4), X, y)
        t = m.trees
        counts = np.zeros((len(X), 13))
        for k in range(5):
            o, e = t["offsets"][k], t["offsets"][k + 1]
            for i, x in enumerate(X):
                node = 0
                while t["feature"][o + node] >= 0:
                    f = t["feature"][o + node]
                    node = t["left"][o + node] if x[f] <= t["threshold"][o + node] else t["right"][o + node]
                counts[i, t["leaf_class"][o + node]] += 1
        np.testing.assert_array_equal(m.predict_proba(X), counts / 5)

    def test_oob_bookkeeping(self):
        X, y = multiclass(200)
        spec = ModelSpec("forest", {"n_trees": 6}, seed=2)
        m = train(spec, X, y)
        seeds = np.random.SeedSequence(spec.seed).spawn(6)
        for k, ss in enumerate(seeds):
            rows = np.random.default_rng(ss).integers(0, 200, size=200)
            oob = m.oob_rows(k)
            assert len(oob) > 0
            assert np.intersect1d(oob, rows).size == 0
            assert np.union1d(oob, rows).size == 200

    def test_pure_leaves_when_unlimited(self):
        X, y = multiclass(300, seed=5)
        m = train(ModelSpec("forest", {"n_trees": 1, "max_features": None}, seed=0), X, y)
        # a single fully grown tree fits its own bootstrap sample perfectly
        seeds = np.random.SeedSequence(0).spawn(1)
        rows = np.random.default_rng(seeds[0]).integers(0, 300, size=300)
        assert np.all(m.predict(X[rows]) == y[rows])

    def test_bins(self):
        X = np.column_stack([np.arange(1000.0), np.repeat([1.0, 2.0], 500)])
        edges = _trees.make_bin_edges(X)
        assert len(edges[0]) <= 254 and len(edges[1]) == 1
        codes = _trees.apply_bins(X, edges)
        for j in range(2):
            for b in range(len(edges[j])):
                np.testing.assert_array_equal(codes[:, j] <= b, X[:, j] <= edges[j][b])


class TestGBT:
    def test_loss_non_increasing(self):
        X, y = multiclass(500)
        m = train(ModelSpec("gbt", {"n_rounds": 30, "max_depth": 4, "learning_rate": 0.1}), X, y)
        loss = np.array(m.train_loss)
        assert len(loss) == 31
        assert np.all(np.diff(loss) <= 1e-12)

    def test_stump_leaf_values_are_newton_steps(self):
        rng = np.random.default_rng(0)
        Xb = rng.integers(0, 4, (50, 1)).astype(np.uint8)
        g = rng.normal(size=50)
        h = rng.uniform(0.1, 0.3, 50)
        f, b, l, r, v, leaf = _trees.grow_newton_tree(Xb, g, h, np.array([4]), 4, 1, 1.0, 0.0, 0.0)
        for node in np.unique(leaf):
            sel = leaf == node
            assert v[node] == pytest.approx(-g[sel].sum() / (h[sel].sum() + 1.0), rel=1e-12)

    def test_exhaustive_best_split(self):
        rng = np.random.default_rng(1)
        Xb = rng.integers(0, 6, (80, 3)).astype(np.uint8)
        g = rng.normal(size=80)
        h = rng.uniform(0.05, 0.25, 80)
        lam = 1.0
        f, b, *_ = _trees.grow_newton_tree(Xb, g, h, np.array([6, 6, 6]), 6, 1, lam, 0.0, 0.0)

        def score(G, H):
            return G * G / (H + lam)

        best = max(((score(g[Xb[:, j] <= c].sum(), h[Xb[:, j] <= c].sum())
                     + score(g[Xb[:, j] > c].sum(), h[Xb[:, j] > c].sum()), j, c)
                    for j in range(3) for c in range(5)
                    if 0 < np.sum(Xb[:, j] <= c) < 80), key=lambda t: t[0])
        assert (f[0], b[0]) == (best[1], best[2])

    def test_configs(self):
        specs = {s.name: s for s in learners.default_member_specs()}
        assert specs["gbt_a"].get("n_rounds") == 100 and specs["gbt_a"].get("learning_rate") == 0.1
        assert specs["gbt_b"].get("n_rounds") == 500 and specs["gbt_b"].get("learning_rate") == 0.05
        assert specs["gbt_b"].get("max_depth") == 6
        assert specs["forest"].get("n_trees") == 200
        assert list(specs["mlp"].get("hidden")) == [64, 32, 8]


class TestMLP:
    def test_gradient_check(self):
        # 1 input -> 2 hidden -> 2 classes: 4 + 6 = 10 parameters
        rng = np.random.default_rng(0)
        params = init_params([1, 2, 2], rng)
        assert sum(p.size for p in params) == 10
        X = rng.normal(size=(7, 1))
        Y = np.eye(2)[rng.integers(0, 2, 7)]
        _, grads = loss_and_grad(params, X, Y)
        eps = 1e-6
        for i, p in enumerate(params):
            for idx in np.ndindex(p.shape):
                old = p[idx]
                p[idx] = old + eps
                up, _ = loss_and_grad(params, X, Y)
                p[idx] = old - eps
                down, _ = loss_and_grad(params, X, Y)
                p[idx] = old
                num = (up - down) / (2 * eps)
                assert abs(num - grads[i][idx]) <= 1e-4 * max(abs(num), abs(grads[i][idx]), 1e-8)

    def test_early_stopping_history(self):
        X, y = multiclass(400)
        m = train(ModelSpec("mlp", {"hidden": [8], "max_epochs": 200, "patience": 3}, seed=0),
                  X[:300], y[:300], X[300:], y[300:])
        accs = [h["val_acc"] for h in m.history]
        best = int(np.argmax(accs))
        assert len(accs) <= 200
        assert len(accs) == 200 or len(accs) - 1 - best == 3


class TestLogReg:
    def test_zero_weights_uniform(self):
        m = zero_model(ModelSpec("logreg"), 4)
        np.testing.assert_allclose(m.predict_proba(np.ones((3, 4))), 1 / 13, rtol=1e-15)

    def test_gradient_norm(self):
        X, y = multiclass(400)
        m = train(ModelSpec("logreg", {"l2": 1e-3}), X, y)
        assert m.grad_norm < 1e-6


class TestPredict:
    def test_one_hot_and_ties(self):
        m = zero_model(ModelSpec("logreg"), 1)
        m.b = np.log(np.eye(13)[4] + 1e-300)
        assert m.predict(np.zeros((1, 1)))[0] == 4
        b = np.full(13, -50.0)
        b[[2, 9]] = 0.0
        m.b = b
        assert m.predict(np.zeros((1, 1)))[0] == 2


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000))
def test_forest_simplex_property(seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(60, 3))
    y = rng.integers(0, 13, 60)
    m = train(ModelSpec("forest", {"n_trees": 4}, seed=seed), X, y)
    P = m.predict_proba(rng.normal(0, 3, (40, 3)))
    assert np.all(P >= 0) and np.abs(P.sum(axis=1) - 1).max() < 1e-9


def test_forest_state_roundtrip_keeps_oob():
    X, y = multiclass(100)
    m = train(ModelSpec("forest", {"n_trees": 3}), X, y)
    scalars, arrays = m.state()
    back = ForestModel.from_state(m.spec, m.n_features, m.meta, scalars, arrays)
    np.testing.assert_array_equal(back.oob_rows(1), m.oob_rows(1))
