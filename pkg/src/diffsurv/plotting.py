"""SVG export of curve estimates, drawn from the exported CSV files."""
from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .summary import CurveEstimate
from .survival import StepCurve


def write_curve_csv(est: CurveEstimate, path, header_comment: str | None = None) -> None:
    with Path(path).open("w", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time", "mean", "lo", "hi"])
        for row in zip(est.times, est.mean, est.band_lo, est.band_hi):
            w.writerow([repr(float(v)) for v in row])


def read_curve_csv(path, level: float = 0.9) -> CurveEstimate:
    with Path(path).open(newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    if rows[0] != ["time", "mean", "lo", "hi"]:
        raise ValueError(f"{path}: not a curve file")
    a = np.array(rows[1:], dtype=float).reshape(-1, 4)
    return CurveEstimate(a[:, 0], a[:, 1], a[:, 2], a[:, 3], level)


def write_km_csv(curves: dict[str, StepCurve], path, header_comment: str | None = None) -> None:
    with Path(path).open("w", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["group", "time", "survival", "at_risk", "deaths"])
        for g, c in curves.items():
            for t, s, n, d in zip(c.times, c.survival, c.at_risk, c.deaths):
                w.writerow([g, repr(float(t)), repr(float(s)), int(n), int(d)])


def read_km_csv(path) -> dict[str, StepCurve]:
    with Path(path).open(newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    out: dict[str, list] = {}
    for g, t, s, n, d in rows[1:]:
        out.setdefault(g, []).append((float(t), float(s), int(n), int(d)))
    return {
        g: StepCurve(*(np.array(col) for col in zip(*v))) for g, v in out.items()
    }


def export_plot(curves: dict[str, CurveEstimate], path, km: dict[str, StepCurve] | None = None,
                ylabel: str = "", xlabel: str = "time") -> Path:
    """Mean curves with shaded bands, and optional Kaplan-Meier steps, as SVG."""
    if not curves:
        raise ValueError("nothing to plot: empty curve list")
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    path = Path(path)
    with matplotlib.rc_context({"svg.hashsalt": "diffsurv", "svg.fonttype": "none"}):
        fig, ax = plt.subplots(figsize=(6, 4))
        for i, (label, est) in enumerate(curves.items()):
            color = f"C{i}"
            ax.fill_between(est.times, est.band_lo, est.band_hi, color=color, alpha=0.2, linewidth=0)
            ax.plot(est.times, est.mean, color=color, label=f"{label} mean")
            ax.plot(est.times, est.band_lo, color=color, linewidth=0.6, linestyle="--")
            ax.plot(est.times, est.band_hi, color=color, linewidth=0.6, linestyle="--")
        for i, (label, step) in enumerate((km or {}).items()):
            ax.step(step.times, step.survival, where="post", color=f"C{i}", linestyle=":", label=f"{label} KM")
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        ax.legend(frameon=False)
        fig.tight_layout()
        try:
            fig.savefig(path, format="svg", metadata={"Date": None})
        finally:
            plt.close(fig)
    return path
