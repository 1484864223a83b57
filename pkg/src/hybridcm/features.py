"""Lagged features, nominal surrogate fits and physics-informed residuals."""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import savgol_filter

from .sim import CHANNELS

PRESETS = {
    "base": ("base",),
    "base_lag": ("base", "lag"),
    "base_res": ("base", "lagged-residual"),
    "base_lag_res": ("base", "lag", "lagged-residual"),
    "res_only": ("lagged-residual",),
}
KINDS = ("base", "lag", "residual", "lagged-residual")
RESIDUAL_NAMES = ("r_Tc", "r_T", "r_C")


class FeatureError(ValueError):
    pass


class FitError(FeatureError):
    pass


@dataclass(frozen=True)
class LagSet:
    lags: tuple = (1, 2, 5, 10)

    def __post_init__(self):
        lags = tuple(int(l) for l in self.lags)
        if any(l < 1 for l in lags) or any(b <= a for a, b in zip(lags, lags[1:])):
            raise FeatureError(f"lags must be strictly increasing positive integers: {lags}")
        object.__setattr__(self, "lags", lags)

    @property
    def L_max(self):
        return max(self.lags) if self.lags else 0

    def __len__(self):
        return len(self.lags)


@dataclass(frozen=True)
class SGConfig:
    window: int = 11
    poly_order: int = 3
    dt: float = 1.0


@dataclass(frozen=True)
class SurrogateParams:
    beta: tuple
    alpha: tuple
    kvec: tuple
    eta: float
    fit_rmse: tuple = (np.nan, np.nan, np.nan)
    condition: tuple = ()
    warnings: tuple = ()
    frozen: bool = True

    def __post_init__(self):
        if not self.eta > 0:
            raise FeatureError("eta must be positive")
        for name, n in (("beta", 3), ("alpha", 4), ("kvec", 3)):
            vals = tuple(float(v) for v in getattr(self, name))
            if len(vals) != n:
                raise FeatureError(f"{name} needs {n} entries")
            object.__setattr__(self, name, vals)

    def to_bytes(self):
        return np.array(self.beta + self.alpha + self.kvec + (self.eta,)).tobytes()

    def to_dict(self):
        return {"beta": list(self.beta), "alpha": list(self.alpha), "kvec": list(self.kvec),
                "eta": self.eta, "fit_rmse": list(self.fit_rmse), "condition": list(self.condition),
                "warnings": list(self.warnings), "frozen": self.frozen}

    @classmethod
    def from_dict(cls, d):
        return cls(beta=tuple(d["beta"]), alpha=tuple(d["alpha"]), kvec=tuple(d["kvec"]),
                   eta=d["eta"], fit_rmse=tuple(d.get("fit_rmse", ())),
                   condition=tuple(d.get("condition", ())), warnings=tuple(d.get("warnings", ())),
                   frozen=d.get("frozen", True))


@dataclass
class ResidualSeries:
    r_Tc: np.ndarray
    r_T: np.ndarray
    r_C: np.ndarray

    def as_array(self):
        return np.column_stack([self.r_Tc, self.r_T, self.r_C])


@dataclass(frozen=True)
class Column:
    source: str
    lag: int
    kind: str

    @property
    def name(self):
        return self.source if self.lag == 0 else f"{self.source}_lag{self.lag}"


@dataclass
class FeatureMatrix:
    X: np.ndarray
    columns: list
    run_ids: np.ndarray
    time_index: np.ndarray
    labels: np.ndarray
    preset: str = ""

    def __post_init__(self):
        if self.X.shape[1] != len(self.columns):
            raise FeatureError("column descriptors do not match matrix width")
        if not (len(self.X) == len(self.run_ids) == len(self.time_index) == len(self.labels)):
            raise FeatureError("provenance length mismatch")

    @property
    def shape(self):
        return self.X.shape

    def subset(self, mask):
        return FeatureMatrix(self.X[mask], list(self.columns), self.run_ids[mask],
                             self.time_index[mask], self.labels[mask], self.preset)

    @staticmethod
    def concat(mats):
        if not mats:
            raise FeatureError("nothing to concatenate")
        first = mats[0]
        if any(m.columns != first.columns for m in mats):
            raise FeatureError("cannot stack matrices with different columns")
        return FeatureMatrix(np.vstack([m.X for m in mats]), list(first.columns),
                             np.concatenate([m.run_ids for m in mats]),
                             np.concatenate([m.time_index for m in mats]),
                             np.concatenate([m.labels for m in mats]), first.preset)

    def save(self, path):
        """CSV of provenance plus features and a JSON sidecar with descriptors."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        header = "run_id,time_index,label," + ",".join(c.name for c in self.columns)
        with open(path, "w") as fh:
            fh.write(header + "\n")
            for rid, ti, lab, row in zip(self.run_ids, self.time_index, self.labels, self.X):
                fh.write(f"{rid},{ti},{lab}," + ",".join(repr(float(v)) for v in row) + "\n")
        sidecar = {"preset": self.preset, "n_rows": int(self.X.shape[0]),
                   "columns": [{"name": c.name, "source": c.source, "lag": c.lag, "kind": c.kind}
                               for c in self.columns]}
        path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2))

    @classmethod
    def load(cls, path):
        path = Path(path)
        meta = json.loads(path.with_suffix(".json").read_text())
        cols = [Column(c["source"], c["lag"], c["kind"]) for c in meta["columns"]]
        run_ids, ti, lab, rows = [], [], [], []
        with open(path) as fh:
            next(fh)
            for line in fh:
                parts = line.rstrip("\n").split(",")
                run_ids.append(parts[0])
                ti.append(int(parts[1]))
                lab.append(int(parts[2]))
                rows.append([float(v) for v in parts[3:]])
        X = np.array(rows, dtype=float).reshape(len(rows), len(cols))
        return cls(X, cols, np.array(run_ids, dtype=object), np.array(ti), np.array(lab), meta["preset"])


def _lag_stack(values, lags, start):
    n = values.shape[0]
    blocks = [values[start:n]]
    for lag in lags:
        blocks.append(values[start - lag:n - lag])
    return np.hstack(blocks)


def make_lagged(run, lags=LagSet()):
    """Concatenate x_t with x_{t-l} for every l in ``lags``; drops the first L_max rows."""
    if len(run) <= lags.L_max:
        raise FeatureError(f"run of length {len(run)} too short for L_max={lags.L_max}")
    X = _lag_stack(run.samples, lags.lags, lags.L_max)
    cols = [Column(ch, 0, "base") for ch in CHANNELS]
    cols += [Column(ch, l, "lagged") for l in lags.lags for ch in CHANNELS]
    n = X.shape[0]
    return FeatureMatrix(X, cols, np.array([run.run_id] * n, dtype=object),
                         np.arange(lags.L_max, len(run)), np.full(n, run.class_label), "base_lag")


def sg_derivative(series, window=11, poly_order=3, dt=1.0):
    """First derivative from local least-squares polynomial fits.

    Edge points take the derivative of the fit over the nearest full window.
    """
    series = np.asarray(series, dtype=float)
    if window % 2 != 1 or window <= poly_order or poly_order < 0:
        raise FeatureError(f"invalid SG configuration window={window} order={poly_order}")
    if series.shape[-1] < window:
        raise FeatureError("series shorter than SG window")
    if not dt > 0:
        raise FeatureError("dt must be positive")
    return savgol_filter(series, window, poly_order, deriv=1, delta=dt, mode="interp", axis=-1)


def reaction_proxy(C, T, eta):
    T = np.asarray(T, dtype=float)
    if np.any(T <= 0):
        raise ValueError("temperature must be positive kelvin")
    return np.asarray(C, dtype=float) * np.exp(-eta / T)


def build_regressors(run, eta):
    """Regressor matrices for the coolant, temperature and concentration models."""
    Ci, C, Qc, Tc, Ti, T, Tci = (run.samples[:, i] for i in range(7))
    phi = reaction_proxy(C, T, eta)
    one = np.ones_like(C)
    z_c = np.column_stack([Qc * (Tci - Tc), T - Tc, one])
    z_T = np.column_stack([Ti - T, T - Tc, phi, one])
    z_C = np.column_stack([Ci - C, phi, one])
    return {"z_c": z_c, "z_T": z_T, "z_C": z_C}


def _targets(run, sg):
    idx = [CHANNELS.index(c) for c in ("Tc", "T", "C")]
    d = sg_derivative(run.samples[:, idx].T, sg.window, sg.poly_order, sg.dt)
    return d[0], d[1], d[2]


def ols(Z, y, rcond=1e-10):
    """Least squares via column equilibration and a truncated pseudo-inverse.

    Returns ``(coef, condition_number)``; raises FitError if the equilibrated
    design has singular values below ``rcond`` times the largest.
    """
    scale = np.sqrt(np.mean(Z * Z, axis=0))
    if np.any(scale == 0):
        raise FitError("regressor column is identically zero")
    Zs = Z / scale
    U, s, Vt = np.linalg.svd(Zs, full_matrices=False)
    if s[-1] <= rcond * s[0]:
        raise FitError(f"rank-deficient regressors (singular values {s})")
    coef = Vt.T @ ((U.T @ y) / s) / scale
    return coef, float(s[0] / s[-1])


def fit_surrogates(normal_run, sg=SGConfig(), eta=1.0e4, cond_warn=1e8):
    """Fit the three nominal derivative models on one Normal run and freeze them."""
    if normal_run.class_label != 0:
        raise FitError("surrogates must be fitted on a Normal (class 0) run")
    dTc, dT, dC = _targets(normal_run, sg)
    z = build_regressors(normal_run, eta)
    out, rmse, conds, notes = [], [], [], []
    for name, Z, y in (("coolant", z["z_c"], dTc), ("temperature", z["z_T"], dT),
                       ("concentration", z["z_C"], dC)):
        try:
            coef, cond = ols(Z, y)
        except FitError as exc:
            raise FitError(f"{name} model: {exc}") from None
        if cond > cond_warn:
            msg = f"{name} model poorly conditioned (cond={cond:.3g})"
            notes.append(msg)
            warnings.warn(msg, RuntimeWarning, stacklevel=2)
        out.append(tuple(coef))
        rmse.append(float(np.sqrt(np.mean((y - Z @ coef) ** 2))))
        conds.append(cond)
    return SurrogateParams(beta=out[0], alpha=out[1], kvec=out[2], eta=float(eta),
                           fit_rmse=tuple(rmse), condition=tuple(conds), warnings=tuple(notes))


def compute_residuals(run, params, sg=SGConfig()):
    if not params.frozen:
        raise FeatureError("surrogate parameters must be frozen before use")
    dTc, dT, dC = _targets(run, sg)
    z = build_regressors(run, params.eta)
    return ResidualSeries(
        r_Tc=dTc - z["z_c"] @ np.asarray(params.beta),
        r_T=dT - z["z_T"] @ np.asarray(params.alpha),
        r_C=dC - z["z_C"] @ np.asarray(params.kvec),
    )


def run_features(run, kinds, lags=LagSet(), params=None, sg=SGConfig(), preset=""):
    """Feature rows for one run; rows before L_max are dropped for every kind."""
    kinds = tuple(kinds)
    if not kinds:
        raise FeatureError("at least one feature kind is required")
    unknown = set(kinds) - set(KINDS)
    if unknown:
        raise FeatureError(f"unknown feature kinds {sorted(unknown)}")
    wants_res = any(k in ("residual", "lagged-residual") for k in kinds)
    if wants_res != (params is not None):
        raise FeatureError("surrogate params are required exactly when residual kinds are requested")
    L = lags.L_max
    n = len(run)
    if n <= L:
        raise FeatureError(f"run of length {n} too short for L_max={L}")
    blocks, cols = [], []
    if "base" in kinds:
        blocks.append(run.samples[L:])
        cols += [Column(ch, 0, "base") for ch in CHANNELS]
    if "lag" in kinds:
        blocks.append(_lag_stack(run.samples, lags.lags, L)[:, len(CHANNELS):])
        cols += [Column(ch, l, "lagged") for l in lags.lags for ch in CHANNELS]
    if wants_res:
        R = compute_residuals(run, params, sg).as_array()
        if "lagged-residual" in kinds:
            blocks.append(_lag_stack(R, lags.lags, L))
            cols += [Column(r, 0, "residual") for r in RESIDUAL_NAMES]
            cols += [Column(r, l, "lagged-residual") for l in lags.lags for r in RESIDUAL_NAMES]
        else:
            blocks.append(R[L:])
            cols += [Column(r, 0, "residual") for r in RESIDUAL_NAMES]
    X = np.hstack(blocks)
    m = X.shape[0]
    return FeatureMatrix(X, cols, np.array([run.run_id] * m, dtype=object), np.arange(L, n),
                         np.full(m, run.class_label), preset)


def assemble_features(runs, kinds, lags=LagSet(), params=None, sg=SGConfig()):
    """Stack per-run feature blocks.  ``kinds`` may be a preset name."""
    preset = ""
    if isinstance(kinds, str):
        if kinds not in PRESETS:
            raise FeatureError(f"unknown preset {kinds!r}; choose from {sorted(PRESETS)}")
        preset, kinds = kinds, PRESETS[kinds]
    mats = [run_features(run, kinds, lags, params, sg, preset) for run in runs]
    return FeatureMatrix.concat(mats)
