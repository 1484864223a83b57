"""Staged, cached experiment pipeline.

Layout under the configured root::

    data/<dataset-hash>/            simulated runs + manifest
    artifacts/<config-hash>/
        surrogates.json
        models/<preset>/<member>.npz
        probas/<representation>.npz member and fused probabilities
        ensembles/<representation>.json
        tables/*.csv  charts/*.svg  metrics.json  run_info.json

Every stage loads its outputs from disk when present, so CLI verbs can be
run one at a time or all together.  ``metrics.json`` holds only
deterministic content; timings and timestamps go to ``run_info.json``.
"""
from __future__ import annotations

import csv
import json
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import charts, conformal, ensembles, features, learners, sim
from .metrics import classification_metrics

STAGES = ("simulate", "features", "train", "ensemble", "conformal", "report")
PARALLEL = "parallel"


class ExperimentError(RuntimeError):
    def __init__(self, stage, message):
        super().__init__(f"stage {stage!r} failed: {message}")
        self.stage = stage


def _dump(obj, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=1, sort_keys=True))


class Pipeline:
    def __init__(self, config, log=None, root=None):
        self.config = config
        self.log = log or (lambda msg: None)
        self.root = Path(root) if root else config.root
        self.out = self.root / "artifacts" / config.digest()
        self.data_dir = self.root / "data" / config.dataset_digest()
        self.timing = {}
        self._dataset = None
        self._surrogates = None
        self._features = {}
        self._members = {}
        self._results = {}

    # helpers
    def _stage(self, name, fn):
        t0 = time.perf_counter()
        try:
            out = fn()
        except ExperimentError:
            raise
        except Exception as exc:
            self.out.mkdir(parents=True, exist_ok=True)
            (self.out / "STALE").write_text(f"{name}: {type(exc).__name__}: {exc}\n")
            raise ExperimentError(name, f"{type(exc).__name__}: {exc}") from exc
        self.timing[name] = self.timing.get(name, 0.0) + time.perf_counter() - t0
        return out

    @property
    def sg(self):
        f = self.config.data["features"]
        return features.SGConfig(int(f["sg_window"]), int(f["sg_order"]), float(self.dataset.runs[0].dt))

    @property
    def lags(self):
        return features.LagSet(tuple(self.config.data["features"]["lags"]))

    def all_presets(self):
        out = list(self.config.presets)
        for s in self.config.streams:
            if s not in out:
                out.append(s)
        return out

    def representations(self):
        return list(self.config.presets) + [PARALLEL]

    # stages
    @property
    def dataset(self):
        if self._dataset is None:
            self._dataset = self._stage("simulate", self._simulate)
        return self._dataset

    def _simulate(self):
        if (self.data_dir / "manifest.json").exists():
            self.log(f"loading dataset {self.data_dir}")
            return sim.load_dataset(self.data_dir)
        s = self.config.data["simulation"]
        self.log(f"simulating {13 * s['runs_per_class']} runs -> {self.data_dir}")
        return sim.generate_dataset(self.config.sim_params(), int(s["runs_per_class"]),
                                    self.config.seed, self.data_dir, int(s["n_samples"]))

    def role_ids(self, role):
        return {e["run_id"] for e in self.dataset.manifest["runs"] if e["role"] == role}

    @property
    def surrogates(self):
        if self._surrogates is None:
            self._surrogates = self._stage("features", self._fit_surrogates)
        return self._surrogates

    def _fit_surrogates(self):
        path = self.out / "surrogates.json"
        if path.exists():
            return features.SurrogateParams.from_dict(json.loads(path.read_text()))
        normal = [r for r in self.dataset.by_role("train") if r.class_label == 0][0]
        params = features.fit_surrogates(normal, self.sg, self.config.eta())
        _dump({**params.to_dict(), "fitted_on": normal.run_id}, path)
        return params

    def features(self, preset):
        """role -> FeatureMatrix for ``preset`` (kept in memory, not persisted)."""
        if preset not in self._features:
            def build():
                kinds = features.PRESETS[preset]
                wants = any(k in ("residual", "lagged-residual") for k in kinds)
                params = self.surrogates if wants else None
                return {role: features.assemble_features(self.dataset.by_role(role), preset,
                                                         self.lags, params, self.sg)
                        for role in ("train", "val", "calib", "test")}
            self._features[preset] = self._stage("features", build)
        return self._features[preset]

    def write_features(self, presets=None):
        out = []
        for preset in presets or self.all_presets():
            for role, fm in self.features(preset).items():
                path = self.out / "features" / f"{preset}_{role}.csv"
                fm.save(path)
                out.append(path)
        return out

    def members(self, preset):
        if preset not in self._members:
            self._members[preset] = self._stage("train", lambda: self._train(preset))
        return self._members[preset]

    def _train(self, preset):
        d = self.out / "models" / preset
        specs = self.config.member_specs()
        paths = {s.name: d / f"{s.name}.npz" for s in specs}
        if all(p.exists() for p in paths.values()):
            return {n: learners.load_model(p, preset) for n, p in paths.items()}
        fms = self.features(preset)
        train_ids = self.role_ids("train")
        val_ids = self.role_ids("val")
        # role discipline: training sees train rows only, early stopping sees val rows only
        if not set(fms["train"].run_ids) <= train_ids or not set(fms["val"].run_ids) <= val_ids:
            raise ExperimentError("train", "feature rows leaked across roles")
        out = {}
        for spec in specs:
            p = paths[spec.name]
            if p.exists():
                out[spec.name] = learners.load_model(p, preset)
                continue
            self.log(f"training {preset}/{spec.name}")
            s = learners.ModelSpec(spec.kind, spec.params,
                                   ensembles.derive_seed(self.config.seed, preset, spec.name), spec.name)
            m = learners.train(s, fms["train"].X, fms["train"].labels, fms["val"].X,
                               fms["val"].labels, preset=preset)
            d.mkdir(parents=True, exist_ok=True)
            learners.save_model(m, p)
            self.timing[f"train/{preset}/{spec.name}"] = m.meta["train_seconds"]
            out[spec.name] = m
        return out

    def result(self, rep):
        """Fused probabilities and report for a representation (preset or ``parallel``)."""
        if rep not in self._results:
            self._results[rep] = self._stage("ensemble", lambda: self._ensemble(rep))
        return self._results[rep]

    def _ensemble(self, rep):
        path = self.out / "probas" / f"{rep}.npz"
        rpath = self.out / "ensembles" / f"{rep}.json"
        if path.exists() and rpath.exists():
            with np.load(path) as z:
                arrays = {k: z[k] for k in z.files}
            return {"report": json.loads(rpath.read_text()), "arrays": arrays}
        methods = tuple(self.config.methods)
        if rep == PARALLEL:
            streams = tuple(self.config.streams)
            plan = ensembles.HybridPlan("parallel", streams, self.config.member_specs(), methods,
                                        self.config.seed)
            data = {s: self.features(s) for s in streams}
            res = ensembles.run_parallel(plan, data, {s: self.members(s) for s in streams})
        else:
            plan = ensembles.HybridPlan("feature_level", (rep,), self.config.member_specs(), methods,
                                        self.config.seed)
            res = ensembles.run_feature_level(plan, {rep: self.features(rep)}, rep, self.members(rep))
        arrays = {}
        for role in ("calib", "test"):
            arrays[f"y_{role}"] = res.labels[role]
            for m in methods:
                arrays[f"{m}__{role}"] = res.proba[m][role]
            for name, P in zip(res.report["member_names"], res.member_proba[role]):
                arrays[f"member:{name}__{role}"] = P
        path.parent.mkdir(parents=True, exist_ok=True)
        np.savez_compressed(path, **arrays)
        report = res.report
        ens_meta = {}
        for m, ens in res.ensembles.items():
            info = {"method": m}
            if ens.spec.weights is not None:
                info["weights"] = [float(w) for w in ens.spec.weights]
            if ens.meta_model is not None:
                info["meta_spec"] = ens.meta_model.spec.to_dict()
            ens_meta[m] = info
        report["fusion"] = ens_meta
        _dump(report, rpath)
        return {"report": json.loads(rpath.read_text()), "arrays": arrays}

    def conformal_rows(self):
        return self._stage("conformal", self._conformal)

    def _conformal(self):
        rows = []
        for rep in self.representations():
            arr = self.result(rep)["arrays"]
            for m in self.config.methods:
                rows += conformal.sweep(arr[f"{m}__test"], arr["y_test"], arr[f"{m}__calib"],
                                        arr["y_calib"], self.config.alphas, rep, m)
        tables = self.out / "tables"
        tables.mkdir(parents=True, exist_ok=True)
        fl = [r for r in rows if r["representation"] != PARALLEL]
        conformal.write_table(fl, tables / "conformal.csv")
        conformal.write_table([r for r in rows if r["representation"] == PARALLEL],
                              tables / "conformal_parallel.csv")
        return rows

    def report(self):
        return self._stage("report", self._report)

    def _report(self):
        reps = self.representations()
        results = {rep: self.result(rep)["report"] for rep in reps}
        conf = self.conformal_rows()
        tables = self.out / "tables"
        acc_rows, member_rows = [], []
        for rep in reps:
            for m in self.config.methods:
                met = results[rep]["ensembles"][m]
                acc_rows.append({"representation": rep, "method": m, "accuracy": met["accuracy"],
                                 "precision": met["precision"], "recall": met["recall"],
                                 "f1": met["f1"]})
            for name, met in results[rep]["members"].items():
                member_rows.append({"representation": rep, "member": name, "accuracy": met["accuracy"],
                                    "precision": met["precision"], "recall": met["recall"],
                                    "f1": met["f1"]})
        write_csv(acc_rows, tables / "ensembles.csv")
        write_csv(member_rows, tables / "members.csv")
        chart_files = charts.emit_charts(acc_rows, [r for r in conf if r["method"] == "stack_logreg"],
                                         self.out / "charts")
        metrics = {
            "config_hash": self.config.digest(),
            "dataset_hash": self.config.dataset_digest(),
            "config": self.config.hashed_payload(),
            "surrogates": self.surrogates.to_dict(),
            "representations": results,
            "conformal": [{k: r[k] for k in conformal.TABLE_COLUMNS + ("q_hat",)} for r in conf],
        }
        _dump(metrics, self.out / "metrics.json")
        stale = self.out / "STALE"
        if stale.exists():
            stale.unlink()
        return {"metrics": metrics, "charts": [str(p) for p in chart_files]}

    def write_run_info(self, started):
        """Timings live here, not in metrics.json; every invocation is appended to ``history``."""
        finished = datetime.now(timezone.utc).isoformat()
        path = self.out / "run_info.json"
        history = []
        if path.exists():
            try:
                old = json.loads(path.read_text())
                history = old.get("history") or [{"started": old["started"], "finished": old["finished"]}]
            except (ValueError, KeyError):
                history = []
        history.append({"started": started, "finished": finished, "seconds": dict(self.timing)})
        wall = sum((datetime.fromisoformat(h["finished"]) - datetime.fromisoformat(h["started"])).total_seconds()
                   for h in history)
        info = {"started": started, "finished": finished, "seconds": self.timing, "history": history,
                "total_wall_seconds": wall}
        _dump(info, path)
        return info


def write_csv(rows, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]) if rows else [])
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def run_experiment(config, log=None, root=None):
    """Run every stage; returns the metrics dict plus timing and output location."""
    started = datetime.now(timezone.utc).isoformat()
    pipe = Pipeline(config, log, root)
    t0 = time.perf_counter()
    out = pipe.report()
    pipe.timing["total"] = time.perf_counter() - t0
    info = pipe.write_run_info(started)
    return {**out, "timing": info["seconds"], "out_dir": str(pipe.out), "pipeline": pipe}


def summarize(metrics):
    """Compact text table of ensemble accuracies per representation."""
    lines = []
    for rep, r in metrics["representations"].items():
        accs = "  ".join(f"{m}={v['accuracy']:.4f}" for m, v in r["ensembles"].items())
        lines.append(f"{rep:>13}: {accs}")
    return "\n".join(lines)


def member_accuracy(metrics, rep, name):
    return metrics["representations"][rep]["members"][name]["accuracy"]


__all__ = ["Pipeline", "run_experiment", "ExperimentError", "STAGES", "classification_metrics"]
