"""Figure rendering for CLI reports.

Figures are written next to the delimited output they illustrate; the
harness itself stays plot-free.  matplotlib is imported lazily with the
Agg backend so library users and worker processes never touch it.
"""

from __future__ import annotations

import math


def _plt():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    return plt


def sweep_figure(rows, path):
    """Detection delay against average run length, one line per detector, log-log."""
    plt = _plt()
    by_detector = {}
    for row in rows:
        by_detector.setdefault(row.detector, []).append(row)
    fig, ax = plt.subplots(figsize=(6.4, 4.8))
    for name, group in by_detector.items():
        group = sorted(group, key=lambda r: r.arl_mean)
        x = [r.arl_mean for r in group]
        y = [r.cadd_mean for r in group]
        xerr = [r.arl_se for r in group]
        yerr = [r.cadd_se for r in group]
        ax.errorbar(x, y, xerr=xerr, yerr=yerr, marker="o", capsize=3, label=name)
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("empirical ARL")
    ax.set_ylabel("empirical CADD")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def zreport_figure(values, analytic, mean, path):
    """Histogram of oracle draws with the sample mean and analytic value marked."""
    plt = _plt()
    fig, ax = plt.subplots(figsize=(6.4, 4.8))
    ax.hist(values, bins=80, density=True, alpha=0.7)
    ax.axvline(mean, color="C1", label=f"sample mean {mean:.5f}")
    if analytic is not None and math.isfinite(analytic):
        ax.axvline(analytic, color="C3", linestyle="--", label=f"analytic {analytic:.5f}")
    ax.set_xlabel("oracle draw of log(Z0/Z1)")
    ax.set_ylabel("density")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
