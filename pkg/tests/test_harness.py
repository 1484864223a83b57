import json
from pathlib import Path

import numpy as np
import pytest
import yaml
from hypothesis import given, settings
from hypothesis import strategies as st

from hybridcm import cli, conformal, experiment
from hybridcm import learners as L
from hybridcm.config import DEFAULTS, ROOT_ENV, ConfigError, ExperimentConfig, deep_merge, load_config
from hybridcm.metrics import classification_metrics, confusion_matrix

TINY = {
    "seed": 5,
    "simulation": {"runs_per_class": 4, "n_samples": 200},
    "models": {"gbt_a": None, "gbt_b": None, "mlp": None,
               "forest": {"kind": "forest", "params": {"n_trees": 8}},
               "lr": {"kind": "logreg", "params": {}}},
}


def toy_labels():
    cm = np.array([[2, 1, 0], [0, 3, 0], [1, 0, 3]])
    yt, yp = [], []
    for i in range(3):
        for j in range(3):
            yt += [i] * cm[i, j]
            yp += [j] * cm[i, j]
    return np.array(yt), np.array(yp)


class TestMetrics:
    def test_toy_confusion(self):
        yt, yp = toy_labels()
        m = classification_metrics(yt, yp, 3)
        assert m["confusion"] == [[2, 1, 0], [0, 3, 0], [1, 0, 3]]
        assert m["accuracy"] == pytest.approx(0.8)
        np.testing.assert_allclose(m["per_class"]["precision"], [2 / 3, 3 / 4, 1.0])
        np.testing.assert_allclose(m["per_class"]["recall"], [2 / 3, 1.0, 3 / 4])
        w = np.array([3, 3, 4]) / 10
        assert m["precision"] == pytest.approx(np.dot(w, [2 / 3, 3 / 4, 1.0]))

    def test_zero_division(self):
        m = classification_metrics([0, 0, 1], [0, 0, 0], 3)
        assert m["per_class"]["precision"][1] == 0.0
        assert m["per_class"]["f1"][2] == 0.0

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.integers(0, 12), min_size=13, max_size=13), st.integers(0, 10_000))
    def test_weighted_recall_is_accuracy(self, preds, seed):
        # holds for any label distribution; balanced support is the stated case
        rng = np.random.default_rng(seed)
        yt = np.repeat(np.arange(13), 5)
        yp = rng.integers(0, 13, yt.size)
        yp[:13] = preds
        m = classification_metrics(yt, yp)
        assert m["recall"] == pytest.approx(m["accuracy"], abs=1e-12)

    def test_confusion_range(self):
        with pytest.raises(ValueError):
            confusion_matrix([0, 13], [0, 0])


class TestConfig:
    def test_defaults_valid(self):
        cfg = ExperimentConfig()
        assert cfg.data["simulation"]["runs_per_class"] == 10
        assert [s.name for s in cfg.member_specs()] == ["forest", "gbt_a", "gbt_b", "mlp"]

    def test_merge_is_nested(self):
        out = deep_merge(DEFAULTS, {"simulation": {"n_samples": 300}})
        assert out["simulation"]["runs_per_class"] == 10 and out["simulation"]["n_samples"] == 300
        assert DEFAULTS["simulation"]["n_samples"] == 1000

    def test_null_drops_member(self):
        cfg = ExperimentConfig({"models": {"gbt_b": None}})
        assert [s.name for s in cfg.member_specs()] == ["forest", "gbt_a", "mlp"]

    @pytest.mark.parametrize("bad", [
        {"bogus": 1},
        {"simulation": {"runs_per_class": 3}},
        {"features": {"presets": ["base", "nope"]}},
        {"ensembles": {"methods": ["median"]}},
        {"conformal": {"alphas": [0.2, 0.1]}},
        {"models": {"gbt_a": None, "gbt_b": None, "mlp": None}},
        {"simulation": {"params": {"no_such_param": 1.0}}},
    ])
    def test_rejects(self, bad):
        with pytest.raises(ConfigError):
            ExperimentConfig(bad)

    def test_hash_stable_and_sensitive(self):
        a, b = ExperimentConfig(), ExperimentConfig()
        assert a.digest() == b.digest()
        assert a.with_seed(1).digest() != a.digest()
        assert ExperimentConfig({"models": {"mlp": {"params": {"learning_rate": 0.01}}}}).digest() != a.digest()

    def test_root_not_hashed(self, monkeypatch):
        monkeypatch.delenv(ROOT_ENV, raising=False)
        a = ExperimentConfig({"root": "/x"})
        assert a.digest() == ExperimentConfig({"root": "/y"}).digest()
        monkeypatch.setenv(ROOT_ENV, "/from-env")
        assert str(a.root) == "/from-env"

    def test_explicit_default_hashes_like_omitted(self):
        explicit = ExperimentConfig({"simulation": {"params": {"Kp": 8.0}}, "features": {"eta": 1.0e4}})
        assert explicit.digest() == ExperimentConfig().digest()

    def test_dataset_hash_ignores_models(self):
        a = ExperimentConfig()
        b = ExperimentConfig({"models": {"gbt_b": None}})
        assert a.dataset_digest() == b.dataset_digest() and a.digest() != b.digest()

    def test_file_and_reduced(self, tmp_path):
        p = tmp_path / "c.yaml"
        p.write_text(yaml.safe_dump({"seed": 9, "conformal": {"alphas": [0.1]}}))
        cfg = load_config(p, reduced=True)
        assert cfg.seed == 9 and cfg.alphas == [0.1]
        assert cfg.data["simulation"]["runs_per_class"] == 6


class TestCLI:
    def test_show_config(self, capsys):
        assert cli.main(["report", "--show-config", "--seed", "4"]) == 0
        shown = yaml.safe_load(capsys.readouterr().out)
        assert shown["seed"] == 4 and shown["simulation"]["runs_per_class"] == 10

    def test_bad_config(self, tmp_path, capsys):
        p = tmp_path / "bad.yaml"
        p.write_text("bogus: 1\n")
        assert cli.main(["simulate", "--config", str(p)]) == 2
        assert "config error" in capsys.readouterr().err

    def test_simulate_verb_root_precedence(self, tmp_path, monkeypatch, capsys):
        cfgp = tmp_path / "tiny.yaml"
        cfgp.write_text(yaml.safe_dump(TINY))
        monkeypatch.setenv(ROOT_ENV, str(tmp_path / "env"))
        assert cli.main(["simulate", "-q", "--config", str(cfgp), "--root", str(tmp_path / "flag")]) == 0
        assert "52 runs" in capsys.readouterr().out
        assert (tmp_path / "flag" / "data").is_dir() and not (tmp_path / "env").exists()


@pytest.fixture(scope="module")
def tiny_runs(tmp_path_factory):
    cfg = ExperimentConfig(TINY)
    root_a = tmp_path_factory.mktemp("a")
    root_b = tmp_path_factory.mktemp("b")
    a = experiment.run_experiment(cfg, root=root_a)
    b = experiment.run_experiment(cfg, root=root_b)
    return cfg, a, b


def test_byte_identical_reruns(tiny_runs):
    cfg, a, b = tiny_runs
    A, B = Path(a["out_dir"]), Path(b["out_dir"])
    assert A.name == B.name == cfg.digest()
    for rel in ["metrics.json", "tables/conformal.csv", "tables/conformal_parallel.csv",
                "tables/ensembles.csv", "tables/members.csv", "charts/accuracy.csv",
                "charts/set_size.csv", "charts/accuracy.svg", "charts/set_size.svg"]:
        assert (A / rel).read_bytes() == (B / rel).read_bytes(), rel
    before = (A / "metrics.json").read_bytes()
    again = experiment.run_experiment(cfg, root=A.parent.parent)
    assert Path(again["out_dir"], "metrics.json").read_bytes() == before
    # cached models are loaded, not retrained
    assert not any(k.startswith("train/") for k in again["timing"])


def test_metrics_contents(tiny_runs):
    cfg, a, _ = tiny_runs
    m = json.loads(open(f"{a['out_dir']}/metrics.json").read())
    assert m["config_hash"] == cfg.digest()
    assert set(m["representations"]) == set(cfg.presets) | {"parallel"}
    assert len(m["conformal"]) == 6 * 5 * 5
    for rep in m["representations"].values():
        for met in rep["ensembles"].values():
            assert 0 <= met["accuracy"] <= 1
    assert "seconds" not in m and "timing" not in m


def test_csv_roundtrip(tiny_runs):
    _, a, _ = tiny_runs
    rows = conformal.read_table(f"{a['out_dir']}/tables/conformal.csv")
    assert len(rows) == 5 * 5 * 5
    metrics = a["metrics"]
    by_key = {(r["representation"], r["method"], r["alpha"]): r for r in metrics["conformal"]}
    for r in rows:
        ref = by_key[(r["representation"], r["method"], r["alpha"])]
        assert r["coverage"] == ref["coverage"] and r["avg_size"] == ref["avg_size"]
    ens = experiment.read_csv(f"{a['out_dir']}/tables/ensembles.csv")
    rep = metrics["representations"][ens[0]["representation"]]["ensembles"][ens[0]["method"]]
    assert float(ens[0]["accuracy"]) == rep["accuracy"]


def test_chart_rows(tiny_runs):
    cfg, a, _ = tiny_runs
    size = experiment.read_csv(f"{a['out_dir']}/charts/set_size.csv")
    assert len(size) == (len(cfg.presets) + 1) * len(cfg.alphas)
    acc = experiment.read_csv(f"{a['out_dir']}/charts/accuracy.csv")
    assert len(acc) == 6 * len(cfg.methods)
    svg = open(f"{a['out_dir']}/charts/accuracy.svg").read()
    assert svg.lstrip().startswith("<?xml") and "<svg" in svg


def test_role_discipline(tiny_runs):
    cfg, a, _ = tiny_runs
    pipe = a["pipeline"]
    for preset in cfg.presets:
        fms = pipe.features(preset)
        for role, fm in fms.items():
            assert set(fm.run_ids) <= pipe.role_ids(role)
    # roles partition the runs and every class appears once in each held-out role
    ids = [pipe.role_ids(r) for r in ("train", "val", "calib", "test")]
    assert sum(map(len, ids)) == len(set().union(*ids)) == 52


def test_leak_canary(tmp_path, monkeypatch):
    cfg = ExperimentConfig(TINY)
    pipe = experiment.Pipeline(cfg, root=tmp_path)
    real = pipe.features

    def leaky(preset):
        fms = dict(real(preset))
        fms["train"] = type(fms["train"]).concat([fms["train"], fms["test"]])
        return fms

    monkeypatch.setattr(pipe, "features", leaky)
    with pytest.raises(experiment.ExperimentError, match="leaked"):
        pipe.members("base")


def test_stale_marker(tmp_path, monkeypatch):
    cfg = ExperimentConfig(TINY)
    pipe = experiment.Pipeline(cfg, root=tmp_path)

    def boom(*a, **k):
        raise RuntimeError("injected")

    monkeypatch.setattr(L, "train", boom)
    with pytest.raises(experiment.ExperimentError) as err:
        pipe.report()
    assert err.value.stage == "train"
    assert "injected" in (pipe.out / "STALE").read_text()
    monkeypatch.undo()
    experiment.Pipeline(cfg, root=tmp_path).report()
    assert not (pipe.out / "STALE").exists()
