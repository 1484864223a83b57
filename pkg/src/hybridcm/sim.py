"""Closed-loop CSTR simulator with the twelve benchmark fault scenarios.

The plant is a jacketed, exothermic first-order reactor.  Kinetic and
transport constants are expressed per minute (the customary units for this
benchmark) while the sampling interval and all fault laws use seconds.
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

CHANNELS = ("Ci", "C", "Qc", "Tc", "Ti", "T", "Tci")
N_CLASSES = 13
RUN_LENGTH = 1000
ROLES = ("train", "val", "calib", "test")


class SimulationError(RuntimeError):
    pass


class SimulationDiverged(SimulationError):
    def __init__(self, step, state):
        super().__init__(f"simulation diverged at step {step}: state={state}")
        self.step = step


class ConfigurationError(ValueError):
    pass


@dataclass(frozen=True)
class SimParams:
    Q: float = 100.0            # L/min
    V: float = 150.0            # L
    Vc: float = 30.0            # L
    rho: float = 1000.0         # g/L
    rho_c: float = 1000.0
    Cp: float = 1.0             # cal/(g K)
    Cpc: float = 1.0
    UA: float = 7.0e5           # cal/(min K)
    dHr: float = -2.0e5         # cal/mol
    k0: float = 7.2e10          # 1/min
    E_over_R: float = 1.0e4     # K
    Ci0: float = 1.0            # mol/L
    Ti0: float = 350.0          # K
    Tci0: float = 300.0         # K
    Tset: float = 400.0         # K
    Qc0: float | None = None    # L/min; None -> steady-state value at Tset
    Qc_min: float = 0.0
    Qc_max: float = 200.0
    Kp: float = 8.0             # (L/min)/K
    Ki: float = 0.02            # (L/min)/(K s)
    # v1..v3 in mol/(L min), K/min, K/min
    process_noise_std: tuple = (1e-4, 0.1, 0.1)
    # channel order Ci, C, Qc, Tc, Ti, T, Tci
    sensor_noise_std: tuple = (0.012, 2e-5, 0.03, 0.02, 0.1, 0.008, 0.1)
    dt: float = 1.0             # s

    def __post_init__(self):
        positive = ("V", "Vc", "rho", "rho_c", "Cp", "Cpc", "k0", "E_over_R", "dt")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"{name} must be strictly positive")
        if len(self.process_noise_std) != 3 or len(self.sensor_noise_std) != 7:
            raise ConfigurationError("noise vectors must have 3 and 7 entries")
        if any(s < 0 for s in self.sensor_noise_std) or any(s < 0 for s in self.process_noise_std):
            raise ConfigurationError("noise std must be non-negative")
        object.__setattr__(self, "process_noise_std", tuple(float(s) for s in self.process_noise_std))
        object.__setattr__(self, "sensor_noise_std", tuple(float(s) for s in self.sensor_noise_std))
        if self.Qc0 is None:
            object.__setattr__(self, "Qc0", _steady_state_closed_form(self)[3])

    def to_dict(self):
        d = asdict(self)
        d["process_noise_std"] = list(self.process_noise_std)
        d["sensor_noise_std"] = list(self.sensor_noise_std)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        for key in ("process_noise_std", "sensor_noise_std"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)

    def with_noise(self, process=None, sensor=None):
        return replace(
            self,
            process_noise_std=self.process_noise_std if process is None else tuple(process),
            sensor_noise_std=self.sensor_noise_std if sensor is None else tuple(sensor),
        )

    def digest(self):
        payload = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(payload).hexdigest()[:16]


@dataclass
class ProcessState:
    C: float
    T: float
    Tc: float
    ctl_integral: float = 0.0


def arrhenius_rate(T, params):
    """Reaction rate constant k0*exp(-E/(R T)) in 1/min."""
    if not T > 0:
        raise ValueError(f"temperature must be positive kelvin, got {T}")
    return params.k0 * math.exp(-params.E_over_R / T)


def rhs(state, true_inputs, a, b, v, params):
    """Mass and energy balances; returns derivatives per minute.

    ``a`` scales the reaction term, ``b`` both heat-transfer terms and ``v``
    is the additive process-noise triple.
    """
    p = params
    C, T, Tc = state.C, state.T, state.Tc
    rate = arrhenius_rate(T, p) * C
    q_v = p.Q / p.V
    exchange = T - Tc
    dC = q_v * (true_inputs["Ci"] - C) - a * rate + v[0]
    dT = (q_v * (true_inputs["Ti"] - T)
          - a * p.dHr / (p.rho * p.Cp) * rate
          - b * p.UA / (p.rho * p.Cp * p.V) * exchange
          + v[1])
    dTc = (true_inputs["Qc"] / p.Vc * (true_inputs["Tci"] - Tc)
           + b * p.UA / (p.rho_c * p.Cpc * p.Vc) * exchange
           + v[2])
    return {"dC_dt": dC, "dT_dt": dT, "dTc_dt": dTc}


def _steady_state_closed_form(p):
    # Holding T at the setpoint makes every balance explicit in one unknown.
    T = p.Tset
    k = p.k0 * math.exp(-p.E_over_R / T)
    q_v = p.Q / p.V
    C = q_v * p.Ci0 / (q_v + k)
    heat_in = q_v * (p.Ti0 - T) - p.dHr / (p.rho * p.Cp) * k * C
    Tc = T - heat_in / (p.UA / (p.rho * p.Cp * p.V))
    if not Tc > p.Tci0:
        raise ConfigurationError("setpoint requires a coolant hotter than its inlet; no steady state")
    Qc = p.UA * (T - Tc) / (p.rho_c * p.Cpc * (Tc - p.Tci0))
    return C, T, Tc, Qc


def steady_state(params):
    """Nominal closed-loop operating point, polished by a root solve on ``rhs``."""
    from scipy.optimize import fsolve

    C0, T0, Tc0, _ = _steady_state_closed_form(params)
    inputs = {"Ci": params.Ci0, "Ti": params.Ti0, "Tci": params.Tci0, "Qc": params.Qc0}
    scale = np.array([1.0, 100.0, 100.0])

    def resid(x):
        d = rhs(ProcessState(*(x * scale)), inputs, 1.0, 1.0, (0.0, 0.0, 0.0), params)
        return [d["dC_dt"], d["dT_dt"], d["dTc_dt"]]

    x, _, ier, msg = fsolve(resid, np.array([C0, T0, Tc0]) / scale, xtol=1e-14, full_output=True)
    if ier != 1 and np.max(np.abs(resid(x))) > 1e-8:
        raise SimulationError(f"steady-state solve failed: {msg}")
    C, T, Tc = x * scale
    return ProcessState(C=float(C), T=float(T), Tc=float(Tc))


def pi_control(T_meas, ctl, params, dt):
    """PI law on reactor temperature with clamping and conditional integration.

    Returns ``(Qc, new_integral)``; the integral is frozen whenever the
    updated command would saturate.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    p = params
    e = T_meas - p.Tset
    trial = ctl + e * dt
    raw = p.Qc0 + p.Kp * e + p.Ki * trial
    if raw > p.Qc_max or raw < p.Qc_min:
        raw = p.Qc0 + p.Kp * e + p.Ki * ctl
        return min(max(raw, p.Qc_min), p.Qc_max), ctl
    return raw, trial


@dataclass(frozen=True)
class FaultSpec:
    fault_id: int
    law: str
    target: str
    delta: float = 0.0
    sigma: float = 0.0

    def __post_init__(self):
        ref = FAULT_TABLE.get(self.fault_id) if "FAULT_TABLE" in globals() else None
        if ref is not None and (ref.law, ref.target) != (self.law, self.target):
            raise ConfigurationError(f"fault {self.fault_id} must be {ref.law} on {ref.target}")
        if (self.fault_id == 0) != (self.law == "none"):
            raise ConfigurationError("fault 0 and law 'none' go together")

    def process_effect(self, t, inputs, rng):
        """Fault multipliers and disturbed true inputs at time ``t`` (seconds)."""
        a = b = 1.0
        if self.law == "exp-decay":
            if self.target == "param_a":
                a = math.exp(-self.delta * t)
            else:
                b = math.exp(-self.delta * t)
        elif self.law == "gaussian":
            name = self.target.split(":")[1]
            inputs = dict(inputs)
            inputs[name] = inputs[name] + self.sigma * rng.standard_normal()
        return inputs, a, b

    def sensor_effect(self, t, measured):
        if self.law not in ("ramp", "step"):
            return measured
        name = self.target.split(":")[1]
        measured = dict(measured)
        measured[name] = measured[name] + (self.delta * t if self.law == "ramp" else self.delta)
        return measured


FAULT_TABLE = {
    0: FaultSpec(0, "none", "none"),
    1: FaultSpec(1, "exp-decay", "param_a", delta=0.004),
    2: FaultSpec(2, "exp-decay", "param_b", delta=0.005),
    3: FaultSpec(3, "ramp", "sensor:Ci", delta=0.005),
    4: FaultSpec(4, "ramp", "sensor:Ti", delta=0.1),
    5: FaultSpec(5, "ramp", "sensor:Tci", delta=0.1),
    6: FaultSpec(6, "ramp", "sensor:C", delta=0.005),
    7: FaultSpec(7, "ramp", "sensor:T", delta=0.1),
    8: FaultSpec(8, "ramp", "sensor:Tc", delta=0.1),
    9: FaultSpec(9, "step", "sensor:Qc", delta=-0.2),
    10: FaultSpec(10, "gaussian", "input:Ci", sigma=0.005),
    11: FaultSpec(11, "gaussian", "input:Ti", sigma=5.0),
    12: FaultSpec(12, "gaussian", "input:Tci", sigma=5.0),
}


def fault_spec(fault_id):
    try:
        return FAULT_TABLE[int(fault_id)]
    except (KeyError, ValueError):
        raise ConfigurationError(f"unknown fault id {fault_id!r}") from None


def apply_fault(spec, t, true_values, measured_values, rng):
    """Apply one fault row at time ``t``.

    Returns ``(true_values, measured_values, a, b)``.  Either dict may be
    ``None`` when the caller only needs the other half.
    """
    if t < 0:
        raise ValueError("t must be non-negative")
    if spec.fault_id not in FAULT_TABLE:
        raise ConfigurationError(f"unknown fault id {spec.fault_id}")
    a = b = 1.0
    if true_values is not None:
        true_values, a, b = spec.process_effect(t, true_values, rng)
    elif spec.law == "exp-decay":
        _, a, b = spec.process_effect(t, {}, rng)
    if measured_values is not None:
        measured_values = spec.sensor_effect(t, measured_values)
    return true_values, measured_values, a, b


@dataclass
class Run:
    class_label: int
    seed: int
    samples: np.ndarray
    dt: float = 1.0
    channel_names: tuple = CHANNELS
    sim_params_hash: str = ""
    true_states: np.ndarray | None = field(default=None, repr=False)
    run_id: str = ""

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float)
        if self.samples.ndim != 2 or self.samples.shape[1] != len(CHANNELS):
            raise ValueError(f"samples must be (n, 7), got {self.samples.shape}")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("run contains non-finite samples")

    def channel(self, name):
        return self.samples[:, CHANNELS.index(name)]

    def __len__(self):
        return self.samples.shape[0]


def _rk4(state, inputs, a, b, v, p, h):
    def f(C, T, Tc):
        d = rhs(ProcessState(C, T, Tc), inputs, a, b, v, p)
        return d["dC_dt"], d["dT_dt"], d["dTc_dt"]

    C, T, Tc = state
    k1 = f(C, T, Tc)
    k2 = f(C + 0.5 * h * k1[0], T + 0.5 * h * k1[1], Tc + 0.5 * h * k1[2])
    k3 = f(C + 0.5 * h * k2[0], T + 0.5 * h * k2[1], Tc + 0.5 * h * k2[2])
    k4 = f(C + h * k3[0], T + h * k3[1], Tc + h * k3[2])
    return tuple(
        s + h / 6.0 * (d1 + 2 * d2 + 2 * d3 + d4)
        for s, d1, d2, d3, d4 in zip(state, k1, k2, k3, k4)
    )


def _substeps(state, inputs, a, b, p, limit=1.5):
    """RK4 substeps per sample so the stiffest linear mode stays inside the stability region."""
    try:
        k = a * arrhenius_rate(state[1], p)
    except ValueError:
        return 1
    fastest = max(
        p.Q / p.V + k,
        (inputs["Qc"] + b * p.UA / (p.rho_c * p.Cpc)) / p.Vc,
    )
    return max(1, math.ceil(fastest * p.dt / 60.0 / limit))


def simulate_run(class_label, seed, params=None, n_samples=RUN_LENGTH):
    """Simulate one closed-loop run of ``n_samples`` one-second steps.

    Row ``k`` holds the measurement taken after step ``k``, together with
    the inputs and coolant flow applied during that step, at ``t = k*dt``.
    All noise is drawn up front in a fixed layout so that two runs sharing a
    seed see identical noise regardless of their class.
    """
    params = params or SimParams()
    spec = fault_spec(class_label)
    p = params
    rng = np.random.default_rng(seed)
    ctl_noise = rng.standard_normal(n_samples)
    proc_noise = rng.standard_normal((n_samples, 3)) * np.asarray(p.process_noise_std)
    sens_noise = rng.standard_normal((n_samples, 7)) * np.asarray(p.sensor_noise_std)
    fault_rng = np.random.default_rng(rng.integers(2**63))

    ss = steady_state(p)
    state = (ss.C, ss.T, ss.Tc)
    integral = 0.0
    h = p.dt / 60.0
    T_sigma = p.sensor_noise_std[CHANNELS.index("T")]
    out = np.empty((n_samples, 7))
    truth = np.empty((n_samples, 3))
    nominal = {"Ci": p.Ci0, "Ti": p.Ti0, "Tci": p.Tci0}
    for k in range(n_samples):
        t = k * p.dt
        Qc, integral = pi_control(state[1] + T_sigma * ctl_noise[k], integral, p, p.dt)
        inputs, a, b = spec.process_effect(t, nominal, fault_rng)
        inputs = dict(inputs, Qc=Qc)
        try:
            n_sub = _substeps(state, inputs, a, b, p)
            for _ in range(n_sub):
                state = _rk4(state, inputs, a, b, proc_noise[k], p, h / n_sub)
        except (OverflowError, ValueError):
            raise SimulationDiverged(k, state) from None
        if not all(math.isfinite(s) for s in state) or state[1] <= 0:
            raise SimulationDiverged(k, state)
        truth[k] = state
        true_row = {"Ci": inputs["Ci"], "C": state[0], "Qc": Qc, "Tc": state[2],
                    "Ti": inputs["Ti"], "T": state[1], "Tci": inputs["Tci"]}
        meas = {name: true_row[name] + sens_noise[k, i] for i, name in enumerate(CHANNELS)}
        meas = spec.sensor_effect(t, meas)
        out[k] = [meas[name] for name in CHANNELS]
    return Run(class_label=int(class_label), seed=int(seed), samples=out, dt=p.dt,
               sim_params_hash=p.digest(), true_states=truth)


def run_seed(master_seed, class_label, run_index):
    """Independent 64-bit stream seed for one (class, run) pair."""
    ss = np.random.SeedSequence([int(master_seed), int(class_label), int(run_index)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def assign_roles(runs_per_class):
    """Role per run index: one each for val/calib/test, the rest train."""
    if runs_per_class < 4:
        raise ConfigurationError("runs_per_class must be at least 4")
    n_train = runs_per_class - 3
    return ["train"] * n_train + ["val", "calib", "test"]


def write_run_csv(run, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("t",) + CHANNELS)
        for k, row in enumerate(run.samples):
            w.writerow([repr(k * run.dt)] + [repr(float(v)) for v in row])


def read_run_csv(path, class_label, seed, sim_params_hash="", run_id=""):
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = tuple(next(r))
        if header != ("t",) + CHANNELS:
            raise ValueError(f"{path}: unexpected header {header}")
        rows = [[float(v) for v in line] for line in r]
    arr = np.array(rows)
    dt = float(arr[1, 0] - arr[0, 0]) if len(arr) > 1 else 1.0
    return Run(class_label=class_label, seed=seed, samples=arr[:, 1:], dt=dt,
               sim_params_hash=sim_params_hash, run_id=run_id)


@dataclass
class Dataset:
    root: Path
    manifest: dict
    runs: list

    def by_role(self, role):
        return [run for run, entry in zip(self.runs, self.manifest["runs"]) if entry["role"] == role]

    def role_of(self, run_id):
        for entry in self.manifest["runs"]:
            if entry["run_id"] == run_id:
                return entry["role"]
        raise KeyError(run_id)


def generate_dataset(params=None, runs_per_class=10, seed=0, root=None, n_samples=RUN_LENGTH,
                     progress=None):
    """Simulate ``13 x runs_per_class`` runs; persist them when ``root`` is given."""
    params = params or SimParams()
    roles = assign_roles(runs_per_class)
    entries, runs = [], []
    for label in range(N_CLASSES):
        for j in range(runs_per_class):
            s = run_seed(seed, label, j)
            run = simulate_run(label, s, params, n_samples=n_samples)
            run.run_id = f"c{label:02d}_r{j:02d}"
            entries.append({"run_id": run.run_id, "class_label": label, "run_index": j,
                            "seed": s, "role": roles[j], "file": f"runs/{run.run_id}.csv"})
            runs.append(run)
            if progress:
                progress(run)
    manifest = {
        "n_classes": N_CLASSES,
        "runs_per_class": runs_per_class,
        "n_samples": n_samples,
        "master_seed": int(seed),
        "sim_params": params.to_dict(),
        "sim_params_hash": params.digest(),
        "channels": list(CHANNELS),
        "runs": entries,
    }
    if root is not None:
        root = Path(root)
        for run, entry in zip(runs, entries):
            write_run_csv(run, root / entry["file"])
        (root / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return Dataset(root=Path(root) if root else None, manifest=manifest, runs=runs)


def load_dataset(root):
    root = Path(root)
    manifest = json.loads((root / "manifest.json").read_text())
    runs = [
        read_run_csv(root / e["file"], e["class_label"], e["seed"], manifest["sim_params_hash"], e["run_id"])
        for e in manifest["runs"]
    ]
    return Dataset(root=root, manifest=manifest, runs=runs)
