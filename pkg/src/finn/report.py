"""Figure rendering for the CLI report paths.

Every plotting function writes a static file (SVG by default) next to the
delimited output it illustrates and returns the path. Rendering is headless;
no interactive backend is required.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)
import numpy as np  # noqa: E402

from .dataio import Dataset, extract_breakthrough  # noqa: E402

FIGSIZE = (6.4, 4.0)


def _finish(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_dataset_overview(data: Dataset, path, title: str = "") -> Path:
    """Heatmap of the dissolved field plus the outlet breakthrough curve."""
    fig, (ax0, ax1) = plt.subplots(1, 2, figsize=(10.0, 4.0))
    extent = (0.0, data.c.shape[1] * float(data.meta.get("grid.dx", 1.0)),
              float(data.t_grid[-1]), float(data.t_grid[0]))
    im = ax0.imshow(data.c, aspect="auto", extent=extent, cmap="viridis")
    fig.colorbar(im, ax=ax0, label="dissolved concentration [kg/m$^3$]")
    ax0.set_xlabel("depth x [m]")
    ax0.set_ylabel("time [days]")
    ax0.set_title(title or "dissolved concentration")

    t, btc = extract_breakthrough(data)
    ax1.plot(t, btc, lw=1.5)
    ax1.set_xlabel("time [days]")
    ax1.set_ylabel("outlet concentration [kg/m$^3$]")
    ax1.set_title("breakthrough curve")
    ax1.grid(alpha=0.3)
    return _finish(fig, path)


def plot_profiles(data: Dataset, t_indices, path, which: str = "c") -> Path:
    """Spatial profiles of one field at several stored times."""
    a = data.c if which == "c" else data.ct
    dx = float(data.meta.get("grid.dx", 1.0))
    x = (np.arange(a.shape[1]) + 0.5) * dx
    fig, ax = plt.subplots(figsize=FIGSIZE)
    for ti in t_indices:
        ax.plot(x, a[ti], label=f"t = {data.t_grid[ti]:g} d")
    ax.set_xlabel("depth x [m]")
    label = "dissolved" if which == "c" else "total"
    ax.set_ylabel(f"{label} concentration [kg/m$^3$]")
    ax.legend()
    ax.grid(alpha=0.3)
    return _finish(fig, path)


def plot_history(history, path) -> Path:
    """Training loss per epoch on a log scale."""
    fig, ax = plt.subplots(figsize=FIGSIZE)
    ax.semilogy(np.arange(len(history)), history, lw=1.2)
    ax.set_xlabel("epoch")
    ax.set_ylabel("training MSE")
    ax.grid(alpha=0.3, which="both")
    return _finish(fig, path)


def plot_breakthrough_comparison(curves: dict[str, tuple], path) -> Path:
    """Overlayed outlet time series, e.g. prediction vs ground truth."""
    fig, ax = plt.subplots(figsize=FIGSIZE)
    for label, (t, series) in curves.items():
        ax.plot(t, series, lw=1.4, label=label)
    ax.set_xlabel("time [days]")
    ax.set_ylabel("outlet concentration [kg/m$^3$]")
    ax.legend()
    ax.grid(alpha=0.3)
    return _finish(fig, path)


def plot_retardation(c_values, curves: dict[str, np.ndarray], path) -> Path:
    """Retardation factor as a function of concentration."""
    fig, ax = plt.subplots(figsize=FIGSIZE)
    for label, r in curves.items():
        finite = np.isfinite(r)
        ax.plot(np.asarray(c_values)[finite], np.asarray(r)[finite],
                lw=1.4, label=label)
    ax.set_xlabel("dissolved concentration c [kg/m$^3$]")
    ax.set_ylabel("retardation factor R(c)")
    ax.legend()
    ax.grid(alpha=0.3)
    return _finish(fig, path)


def plot_mse_bars(report_values: dict[str, float], path) -> Path:
    """Log-scale bars for the three-window evaluation report."""
    fig, ax = plt.subplots(figsize=FIGSIZE)
    keys = list(report_values.keys())
    ax.bar(keys, [report_values[k] for k in keys], color="tab:blue", width=0.5)
    ax.set_yscale("log")
    ax.set_ylabel("MSE")
    ax.grid(alpha=0.3, axis="y", which="both")
    return _finish(fig, path)


def plot_seed_spread(outcomes, path) -> Path:
    """Per-seed evaluation MSEs across the three windows."""
    fig, ax = plt.subplots(figsize=FIGSIZE)
    keys = ("training", "extrapolated", "unseen")
    for k, marker in zip(keys, "osv"):
        seeds = [o.seed for o in outcomes if o.report is not None]
        vals = [getattr(o.report, k) for o in outcomes if o.report is not None]
        ax.semilogy(seeds, vals, marker, label=k, alpha=0.8)
    ax.set_xlabel("seed")
    ax.set_ylabel("MSE")
    ax.legend()
    ax.grid(alpha=0.3, which="both")
    return _finish(fig, path)
