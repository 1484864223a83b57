"""Split conformal prediction sets over probability outputs.

Scores are s = 1 - p(y|x).  The threshold is the ceil((n+1)(1-alpha))-th
smallest calibration score and a set keeps every class whose score is at
most that threshold.  Sets may be empty.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass

import numpy as np

ALPHAS = (0.01, 0.05, 0.1, 0.15, 0.2)
TABLE_COLUMNS = ("representation", "method", "alpha", "coverage", "avg_size", "empty_count", "n_test")


class ConformalError(ValueError):
    pass


@dataclass(frozen=True)
class ConformalCalibration:
    alpha: float
    q_hat: float
    n_calib: int
    source: str = ""

    def __post_init__(self):
        if not 0.0 <= self.q_hat <= 1.0:
            raise ConformalError("q_hat must lie in [0, 1]")
        if self.n_calib < 1:
            raise ConformalError("n_calib must be at least 1")


def nonconformity(P, labels):
    """1 - probability of the true label.  Works on one row or a matrix."""
    P = np.asarray(P, dtype=float)
    labels = np.asarray(labels)
    if P.ndim == 1:
        if not 0 <= int(labels) < P.shape[0]:
            raise ConformalError(f"label {labels} outside 0..{P.shape[0] - 1}")
        return float(1.0 - P[int(labels)])
    if labels.shape != (P.shape[0],):
        raise ConformalError("one label per probability row is required")
    if labels.size and (labels.min() < 0 or labels.max() >= P.shape[1]):
        raise ConformalError("label outside the class range")
    return 1.0 - P[np.arange(P.shape[0]), labels]


def calibrate(scores, alpha, source=""):
    scores = np.sort(np.asarray(scores, dtype=float).ravel())
    n = scores.size
    if n == 0:
        raise ConformalError("no calibration scores")
    if not 0.0 < alpha < 1.0:
        raise ConformalError("alpha must lie in (0, 1)")
    # small guard so (n+1)(1-alpha) landing on an integer is not pushed up by rounding
    rank = math.ceil((n + 1) * (1.0 - alpha) - 1e-9)
    q_hat = 1.0 if rank > n else float(scores[max(rank, 1) - 1])
    return ConformalCalibration(float(alpha), float(np.clip(q_hat, 0.0, 1.0)), n, source)


def predict_set(P, calib):
    """Boolean membership mask (rows x K), or a sorted class list for a single row."""
    P = np.asarray(P, dtype=float)
    q = calib.q_hat if isinstance(calib, ConformalCalibration) else float(calib)
    mask = (1.0 - P) <= q
    if P.ndim == 1:
        return [int(k) for k in np.flatnonzero(mask)]
    return mask


def evaluate(sets, labels):
    sets = np.asarray(sets, dtype=bool)
    labels = np.asarray(labels, dtype=np.int64)
    if sets.shape[0] != labels.shape[0]:
        raise ConformalError("sets and labels differ in length")
    n = labels.shape[0]
    sizes = sets.sum(axis=1)
    covered = sets[np.arange(n), labels] if n else np.zeros(0, bool)
    return {"coverage": float(covered.mean()) if n else 0.0,
            "avg_size": float(sizes.mean()) if n else 0.0,
            "empty_count": int(np.sum(sizes == 0)), "n_test": int(n)}


def sweep(P_test, y_test, P_calib, y_calib, alphas=ALPHAS, representation="", method=""):
    """One evaluation record per alpha (ascending)."""
    alphas = list(alphas)
    if alphas != sorted(alphas):
        raise ConformalError("alphas must be sorted ascending")
    scores = nonconformity(P_calib, y_calib)
    rows = []
    for a in alphas:
        cal = calibrate(scores, a, source=method)
        rec = evaluate(predict_set(P_test, cal), y_test)
        rows.append({"representation": representation, "method": method, "alpha": float(a),
                     "q_hat": cal.q_hat, **rec})
    return rows


def write_table(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=TABLE_COLUMNS, extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(r[k]) if isinstance(r[k], float) else r[k]) for k in TABLE_COLUMNS})
    with open(str(path).rsplit(".", 1)[0] + ".json", "w") as fh:
        json.dump([{k: r[k] for k in TABLE_COLUMNS} for r in rows], fh, indent=1)


def read_table(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        r["alpha"] = float(r["alpha"])
        r["coverage"] = float(r["coverage"])
        r["avg_size"] = float(r["avg_size"])
        r["empty_count"] = int(r["empty_count"])
        r["n_test"] = int(r["n_test"])
    return rows
