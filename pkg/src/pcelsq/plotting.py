"""PNG figures rendered next to the CSV outputs (``--plot``)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def png_path(csv_path) -> Path:
    return Path(csv_path).with_suffix(".png")


def _save(fig, csv_path) -> Path:
    out = png_path(csv_path)
    fig.tight_layout()
    fig.savefig(out, dpi=120)
    plt.close(fig)
    return out


def plot_recovery(table, csv_path) -> Path:
    cfg = table.config
    fig, ax = plt.subplots(figsize=(5.5, 4))
    for s in cfg.strategies:
        ax.plot(cfg.n_grid, table.success_probability(s), marker="o", label=s)
    ax.set_xlabel("N")
    ax.set_ylabel("success probability")
    ax.set_ylim(-0.03, 1.03)
    ax.set_title(f"{cfg.family}, d={cfg.d}, p={cfg.p} (P={table.P})")
    ax.legend()
    return _save(fig, csv_path)


def plot_ode(table, csv_path) -> Path:
    fig, ax = plt.subplots(figsize=(5.5, 4))
    for s in table.strategies:
        ax.errorbar(table.n_grid, table.mean(s), yerr=table.std(s), marker="o", capsize=3, label=s)
    ax.set_xlabel("N")
    ax.set_ylabel("relative RMSE")
    ax.set_yscale("log")
    ax.legend()
    return _save(fig, csv_path)


def plot_coefficients(coefficients, csv_path) -> Path:
    fig, ax = plt.subplots(figsize=(5.5, 4))
    mags = np.abs(np.asarray(coefficients))
    ax.semilogy(np.arange(mags.size), np.maximum(mags, 1e-300), ".", ms=3)
    ax.set_xlabel("basis index k")
    ax.set_ylabel("|c_k|")
    return _save(fig, csv_path)


def plot_coherence(reports, csv_path) -> Path:
    fig, ax = plt.subplots(figsize=(5.5, 4))
    groups = {}
    for r in reports:
        groups.setdefault((r.family, r.strategy, r.d), []).append(r)
    for (family, strategy, d), rows in groups.items():
        rows = sorted(rows, key=lambda r: r.p)
        ax.semilogy([r.p for r in rows], [r.mu2_hat for r in rows], marker="o",
                    label=f"{family} {strategy} d={d}")
    ax.set_xlabel("p")
    ax.set_ylabel("mu2 estimate")
    ax.legend(fontsize=7)
    return _save(fig, csv_path)


def plot_samples(points, csv_path) -> Path:
    fig, ax = plt.subplots(figsize=(4.5, 4.5))
    if points.shape[1] >= 2:
        ax.plot(points[:, 0], points[:, 1], ".", ms=1.5, alpha=0.5)
        ax.set_xlabel("x1")
        ax.set_ylabel("x2")
    else:
        ax.hist(points[:, 0], bins=60, density=True)
        ax.set_xlabel("x1")
    return _save(fig, csv_path)
