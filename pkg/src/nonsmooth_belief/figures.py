"""Figure rendering for the experiment runner.

Each experiment gets one PNG rendered next to its CSV output.  All plots are
produced on the non-interactive Agg backend so the runner works headless.
"""

from __future__ import annotations

import math
from pathlib import Path
from typing import List

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

__all__ = ["render_figures"]


def _col(result, name):
    return np.array([row[result.columns.index(name)] for row in result.rows])


def _confidence_ellipse(ax, mu, Sigma, n_std=2.326348, **kwargs):
    w, V = np.linalg.eigh(0.5 * (Sigma + Sigma.T))
    w = np.clip(w, 0.0, None)
    theta = np.linspace(0.0, 2.0 * math.pi, 100)
    circle = np.stack([np.cos(theta), np.sin(theta)])
    pts = mu[:, None] + n_std * (V * np.sqrt(w)) @ circle
    ax.plot(pts[0], pts[1], **kwargs)


def _fig_crossing(result, path):
    t = _col(result, "t")
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(7, 6), sharex=True)
    mu = _col(result, "mu_0")
    sd = np.sqrt(_col(result, "Sigma_00"))
    ax1.plot(t, mu, label="approximate mean")
    ax1.fill_between(t, mu - 2 * sd, mu + 2 * sd, alpha=0.2)
    ax1.plot(t, _col(result, "ref_mu_0"), "--", label="exact reference")
    ax1.axhline(0.0, color="k", lw=0.5)
    ax1.set_ylabel("state")
    ax1.legend()
    ax2.semilogy(t, np.maximum(_col(result, "err_mean"), 1e-18), label="mean error")
    ax2.semilogy(t, np.maximum(_col(result, "err_cov"), 1e-18), label="variance error")
    ax2.set_xlabel("t")
    ax2.set_ylabel("error")
    ax2.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def _fig_sweep(result, path, xlabel):
    x = np.abs(_col(result, result.columns[0]))
    y = _col(result, "err_mean")
    fig, ax = plt.subplots(figsize=(6, 4.5))
    ax.loglog(x, y, "o", label="measured")
    slope = result.summary.get("slope")
    if slope is not None:
        c = y[-1] / x[-1] ** slope
        ax.loglog(x, c * x ** slope, "--", label=f"slope {slope:.2f} fit")
    ax.set_xlabel(xlabel)
    ax.set_ylabel("final mean error")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def _fig_moments_vs_oracle(result, path):
    t = _col(result, "t")
    fig, axes = plt.subplots(2, 1, figsize=(7, 6), sharex=True)
    for i, ax in enumerate(axes):
        mu = _col(result, f"mu_{i}")
        sd = np.sqrt(_col(result, f"Sigma_{i}{i}"))
        ax.plot(t, mu, label="approximate mean")
        ax.fill_between(t, mu - 2 * sd, mu + 2 * sd, alpha=0.2)
        ax.plot(t, _col(result, f"ref_mu_{i}"), "--", label="sample mean")
        ax.set_ylabel(f"x_{i}")
        ax.legend(loc="upper right", fontsize=8)
    axes[-1].set_xlabel("t")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def _plane_axes(result, cols_rows_list, labels):
    fig, ax = plt.subplots(figsize=(7, 5))
    for (columns, rows), label in zip(cols_rows_list, labels):
        idx_x = columns.index("mu_0")
        idx_y = columns.index("mu_1")
        xs = np.array([r[idx_x] for r in rows])
        ys = np.array([r[idx_y] for r in rows])
        line, = ax.plot(xs, ys, "-o", ms=3, label=label)
        n = 2
        i00, i01 = columns.index("Sigma_00"), columns.index("Sigma_01")
        i10, i11 = columns.index("Sigma_10"), columns.index("Sigma_11")
        for r in rows[:: max(1, len(rows) // 8)]:
            Sigma = np.array([[r[i00], r[i01]], [r[i10], r[i11]]])
            _confidence_ellipse(ax, np.array([r[idx_x], r[idx_y]]), Sigma,
                                color=line.get_color(), lw=0.6, alpha=0.6)
    return fig, ax


def _fig_quadcopter(result, path):
    config = result.summary.get("config", {})
    fig, ax = _plane_axes(result, [(result.columns, result.rows)], ["mean trajectory"])
    xs = np.linspace(min(r[1] for r in result.rows) - 1,
                     max(r[1] for r in result.rows) + 1, 200)
    curv = float(config.get("obstacle_curv", 0.05))
    obx = float(config.get("obstacle_x", 40.0))
    ax.plot(xs, -curv * (xs - obx) ** 2, "r--", lw=1, label="obstacle boundary")
    ax.axhline(0.0, color="k", lw=0.5, label="wind boundary")
    ax.set_xlabel("p_x")
    ax.set_ylabel("p_y")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def _fig_plane_with_surface(result, path, traces, labels):
    config = result.summary.get("config", {})
    fig, ax = _plane_axes(result, traces, labels)
    all_x = [r[1] for cols, rows in traces for r in rows]
    xs = np.linspace(min(all_x) - 1, max(all_x) + 1, 300)
    ax.plot(xs, -xs ** 2, "r--", lw=1, label="switching surface")
    goal = config.get("goal")
    if goal is not None:
        ax.plot([goal[0]], [goal[1]], "k*", ms=12, label="goal")
    ax.set_ylim(min(r[2] for cols, rows in traces for r in rows) - 2, 3)
    ax.set_xlabel("p_x")
    ax.set_ylabel("p_y")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_figures(result, out_dir) -> List[Path]:
    """Render the PNG figure(s) for an experiment result; returns paths."""
    out = Path(out_dir)
    path = out / "figure.png"
    name = result.name
    if name in ("crossing1d", "crossing1d-error"):
        _fig_crossing(result, path)
    elif name == "error-sweep-sigma":
        _fig_sweep(result, path, "initial standard deviation")
    elif name == "error-sweep-jump":
        _fig_sweep(result, path, "|jump in the dynamics|")
    elif name == "spring-dashpot":
        _fig_moments_vs_oracle(result, path)
    elif name == "quadcopter":
        _fig_quadcopter(result, path)
    elif name == "implicit-constraint":
        _fig_plane_with_surface(result, path, [(result.columns, result.rows)],
                                ["mean trajectory"])
    elif name == "compare-baseline":
        traces = [(result.columns, result.rows)]
        labels = ["normalization-based"]
        extra = result.extra_traces.get("trace_baseline.csv")
        if extra is not None:
            traces.append(extra)
            labels.append("linearization baseline")
        _fig_plane_with_surface(result, path, traces, labels)
    else:
        return []
    return [path]
