"""Experiment configuration: embedded defaults, nested YAML/JSON overrides, hashing."""
from __future__ import annotations

import copy
import hashlib
import json
import os
from pathlib import Path

import yaml

from .conformal import ALPHAS
from .ensembles import METHODS, PARALLEL_STREAMS
from .features import PRESETS
from .learners import ModelSpec, default_member_specs
from .sim import SimParams

ROOT_ENV = "HYBRIDCM_ROOT"


class ConfigError(ValueError):
    pass


def _member_defaults():
    return {s.name: {"kind": s.kind, "params": dict(s.params)} for s in default_member_specs()}


DEFAULTS = {
    "root": "hybridcm-out",
    "seed": 0,
    "simulation": {"runs_per_class": 10, "n_samples": 1000, "params": {}},
    "features": {"lags": [1, 2, 5, 10], "sg_window": 11, "sg_order": 3, "eta": None,
                 "presets": list(PRESETS)},
    "models": _member_defaults(),
    "ensembles": {"methods": list(METHODS), "parallel_streams": list(PARALLEL_STREAMS)},
    "conformal": {"alphas": list(ALPHAS)},
}

# 3 training runs per class, 500 samples per run
REDUCED = {"simulation": {"runs_per_class": 6, "n_samples": 500}}


def deep_merge(base, over):
    out = copy.deepcopy(base)
    for k, v in (over or {}).items():
        if v is None and isinstance(out.get(k), dict):
            out.pop(k)  # `name: null` drops a mapping, e.g. a model member
        elif isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


class ExperimentConfig:
    """Validated nested configuration.  ``data`` holds the plain dict."""

    def __init__(self, data=None):
        self.data = deep_merge(DEFAULTS, data or {})
        self._validate()

    def _validate(self):
        d = self.data
        unknown = set(d) - set(DEFAULTS)
        if unknown:
            raise ConfigError(f"unknown config sections {sorted(unknown)}")
        missing = set(DEFAULTS) - set(d)
        if missing:
            raise ConfigError(f"missing config sections {sorted(missing)}")
        if len(d["models"]) < 2:
            raise ConfigError("at least two model members are needed for the ensembles")
        if d["simulation"]["runs_per_class"] < 4:
            raise ConfigError("runs_per_class must be at least 4 (train/val/calib/test)")
        for p in d["features"]["presets"]:
            if p not in PRESETS:
                raise ConfigError(f"unknown preset {p!r}")
        for m in d["ensembles"]["methods"]:
            if m not in METHODS:
                raise ConfigError(f"unknown ensemble method {m!r}")
        alphas = d["conformal"]["alphas"]
        if list(alphas) != sorted(alphas) or not all(0 < a < 1 for a in alphas):
            raise ConfigError("alphas must be ascending values in (0, 1)")
        self.sim_params()
        self.member_specs()

    # typed views
    @property
    def seed(self):
        return int(self.data["seed"])

    @property
    def root(self):
        return Path(os.environ.get(ROOT_ENV) or self.data["root"])

    def sim_params(self):
        try:
            return SimParams.from_dict({**SimParams().to_dict(), **self.data["simulation"]["params"]})
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad simulation params: {exc}") from exc

    def member_specs(self):
        return [ModelSpec(v["kind"], dict(v.get("params", {})), self.seed, name)
                for name, v in self.data["models"].items()]

    def eta(self):
        eta = self.data["features"]["eta"]
        return float(eta) if eta is not None else float(self.sim_params().E_over_R)

    @property
    def presets(self):
        return list(self.data["features"]["presets"])

    @property
    def streams(self):
        return list(self.data["ensembles"]["parallel_streams"])

    @property
    def methods(self):
        return list(self.data["ensembles"]["methods"])

    @property
    def alphas(self):
        return [float(a) for a in self.data["conformal"]["alphas"]]

    def hashed_payload(self):
        d = copy.deepcopy(self.data)
        d.pop("root")
        d["simulation"]["params"] = self.sim_params().to_dict()
        d["features"]["eta"] = self.eta()
        return d

    def digest(self):
        blob = json.dumps(self.hashed_payload(), sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:12]

    def dataset_digest(self):
        d = {"seed": self.seed, "simulation": self.hashed_payload()["simulation"]}
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:12]

    def with_seed(self, seed):
        return ExperimentConfig(deep_merge(self.data, {"seed": int(seed)}))

    def dump(self):
        return yaml.safe_dump(self.data, sort_keys=False)


def load_config(path=None, reduced=False, overrides=None):
    """Defaults, then the reduced profile, then the file at ``path``, then ``overrides``."""
    data = copy.deepcopy(REDUCED) if reduced else {}
    if path:
        text = Path(path).read_text()
        loaded = yaml.safe_load(text) or {}
        if not isinstance(loaded, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        data = deep_merge(data, loaded)
    data = deep_merge(data, overrides or {})
    return ExperimentConfig(data)
