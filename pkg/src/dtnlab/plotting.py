"""Figures written next to the CSV outputs (non-interactive backend)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_ps_table(rows, axis_name: str, path) -> None:
    """Delivery probability against the sweep axis, one line per deadline."""
    fig, ax = plt.subplots(figsize=(6, 4))
    rows = np.asarray(rows, float)
    for T in np.unique(rows[:, 1]):
        sel = rows[rows[:, 1] == T]
        ax.errorbar(sel[:, 0], sel[:, 2], yerr=[sel[:, 2] - sel[:, 3], sel[:, 4] - sel[:, 2]],
                    marker="o", ms=3, capsize=2, label=f"T={T:g} s")
    ax.set_xlabel(axis_name)
    ax.set_ylabel("p(T)")
    ax.set_ylim(-0.02, 1.02)
    ax.grid(alpha=0.3)
    ax.legend(fontsize=8)
    _save(fig, path)


def plot_rate_series(series, fit_result, path, ylabel: str = "rate") -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(series.x, series.value, ".", ms=2, color="0.4", label="simulation")
    if fit_result is not None:
        lo, hi = fit_result.trimmed_domain
        xs = np.linspace(max(lo, series.x.min()), min(hi, series.x.max()), 400)
        ax.plot(xs, fit_result(xs), "r-", lw=1.2, label=fit_result.family.value)
    ax.set_xlabel("N" if series.kind.value == "by_count" else "t (s)")
    ax.set_ylabel(ylabel)
    ax.grid(alpha=0.3)
    ax.legend(fontsize=8)
    _save(fig, path)


def plot_model_comparison(T, sim_ps, models, path) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(T, sim_ps, "k.", ms=3, label="simulation")
    for m in models:
        ax.plot(T, m.p(T), lw=1.2, label=m.name)
    ax.set_xlabel("T (s)")
    ax.set_ylabel("p(T)")
    ax.set_ylim(-0.02, 1.02)
    ax.grid(alpha=0.3)
    ax.legend(fontsize=7)
    _save(fig, path)


def plot_mean_curve(times, mean_n, path, M=None) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(times, mean_n, "b-", lw=1)
    if M is not None:
        ax.axhline(M, color="0.6", ls="--", lw=0.8)
    ax.set_xlabel("t (s)")
    ax.set_ylabel("mean infected count")
    ax.grid(alpha=0.3)
    _save(fig, path)
