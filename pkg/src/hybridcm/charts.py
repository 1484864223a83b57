"""Static SVG charts: ensemble accuracy bars and conformal set size curves."""
import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

# deterministic svg output
matplotlib.rcParams["svg.hashsalt"] = "hybridcm"
_META = {"Date": None, "Creator": None}


def _write_csv(rows, fields, path):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow(r)


def accuracy_chart(rows, path):
    """Grouped bars: one group per representation, one bar per method."""
    reps = list(dict.fromkeys(r["representation"] for r in rows))
    methods = list(dict.fromkeys(r["method"] for r in rows))
    acc = {(r["representation"], r["method"]): r["accuracy"] for r in rows}
    width = 0.8 / max(len(methods), 1)
    fig, ax = plt.subplots(figsize=(max(5, 1.6 * len(reps)), 4))
    for j, m in enumerate(methods):
        xs = [i + (j - (len(methods) - 1) / 2) * width for i in range(len(reps))]
        ax.bar(xs, [acc.get((r, m), 0.0) for r in reps], width, label=m)
    ax.set_xticks(range(len(reps)))
    ax.set_xticklabels(reps, rotation=15)
    lo = min(acc.values()) if acc else 0.0
    ax.set_ylim(max(0.0, lo - 0.05), 1.0)
    ax.set_ylabel("test accuracy")
    ax.legend(fontsize=7, ncol=min(len(methods), 5))
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata=_META)
    plt.close(fig)


def set_size_chart(rows, path):
    """Average prediction-set size against confidence 1 - alpha, one line per representation."""
    fig, ax = plt.subplots(figsize=(5, 4))
    for rep in dict.fromkeys(r["representation"] for r in rows):
        pts = sorted((1 - r["alpha"], r["avg_size"]) for r in rows if r["representation"] == rep)
        ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", label=rep)
    ax.set_xlabel("confidence level (1 - alpha)")
    ax.set_ylabel("average set size")
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata=_META)
    plt.close(fig)


def emit_charts(acc_rows, conformal_rows, out_dir):
    """Write both charts and their CSV data; returns the written paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    a_svg, a_csv = out / "accuracy.svg", out / "accuracy.csv"
    s_svg, s_csv = out / "set_size.svg", out / "set_size.csv"
    accuracy_chart(acc_rows, a_svg)
    _write_csv(acc_rows, ["representation", "method", "accuracy"], a_csv)
    size_rows = [{**r, "confidence": 1 - r["alpha"]} for r in conformal_rows]
    set_size_chart(size_rows, s_svg)
    _write_csv(size_rows, ["representation", "method", "alpha", "confidence", "avg_size", "coverage"],
               s_csv)
    return [a_svg, a_csv, s_svg, s_csv]
