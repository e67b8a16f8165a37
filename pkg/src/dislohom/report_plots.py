"""Figure rendering for convergence reports.

Figures are written next to the delimited output; the CSV/JSON stay the
machine-readable product.
"""

from __future__ import annotations

import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

plt.rcParams.update(
    {
        "figure.figsize": (5.2, 3.6),
        "figure.dpi": 130,
        "axes.grid": True,
        "grid.alpha": 0.3,
        "axes.spines.top": False,
        "axes.spines.right": False,
        "font.size": 9,
        "legend.frameon": False,
    }
)


def _guide(ax, ns, anchor, power, label):
    ns = np.asarray(ns, dtype=float)
    ax.loglog(ns, anchor * (ns / ns[0]) ** power, "k--", lw=0.8, label=label)


def render_deviation_figure(report, path: Path):
    ns = [r.n for r in report.records]
    sup = [r.dev_sup_offcore for r in report.records]
    lp = [r.dev_lp for r in report.records]
    fig, ax = plt.subplots()
    ax.loglog(ns, sup, "o-", label="sup off cores")
    ax.loglog(ns, lp, "s-", label="integrated $L^p$")
    if sup[0] > 0:
        _guide(ax, ns, sup[0], -1.0, r"$n^{-1}$ guide")
    ax.set_xlabel("n")
    ax.set_ylabel("frame deviation")
    ax.set_title("frame convergence")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def render_energy_figure(report, path: Path):
    recs = [r for r in report.records if not math.isnan(r.abs_gap)]
    if not recs:
        return False
    ns = [r.n for r in recs]
    gaps = [max(r.abs_gap, 1e-300) for r in recs]
    fig, ax = plt.subplots()
    ax.loglog(ns, gaps, "o-", label=r"$|I_n - I|$")
    nprobe = len(recs[0].probe_gaps)
    for k in range(nprobe):
        ax.loglog(
            ns, [max(r.probe_gaps[k], 1e-300) for r in recs],
            "^-", lw=0.9, ms=3, alpha=0.7, label=f"probe {k + 1} recovery",
        )
    ax.set_xlabel("n")
    ax.set_ylabel("energy gap")
    ax.set_title("energy convergence")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return True


def render_count_figure(report, path: Path):
    ns = [r.n for r in report.records]
    counts = [max(r.dislocations, 1) for r in report.records]
    fig, ax = plt.subplots()
    ax.loglog(ns, counts, "o-", label="dislocations")
    _guide(ax, ns, counts[0], 2.0, r"$n^{2}$ guide")
    ax.set_xlabel("n")
    ax.set_ylabel("count")
    ax.set_title("dislocation count")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def render_report_figures(report, outdir) -> list[str]:
    """Render all applicable figures; returns the written file names."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    written = []
    render_deviation_figure(report, outdir / "frame_deviation.png")
    written.append("frame_deviation.png")
    if render_energy_figure(report, outdir / "energy_gap.png"):
        written.append("energy_gap.png")
    render_count_figure(report, outdir / "dislocation_count.png")
    written.append("dislocation_count.png")
    return written
