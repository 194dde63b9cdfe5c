"""Figure rendering for evaluation outputs.

Everything draws through the Agg backend and writes image files; no
window is ever opened.  Three figure kinds: per-point RMSE heat maps on
the lat/lon grid, monthly RMSE line charts, and a variable-by-window
summary heat map for multi-variable reports.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .errors import ConfigurationError  # noqa: E402
from .geometry import Graticule  # noqa: E402
from .metrics import EvalReport  # noqa: E402


def plot_error_map(values: np.ndarray, grid: Graticule, out_path, title: str = "RMSE") -> None:
    """Per-grid-point heat map on lat/lon axes."""
    values = np.asarray(values)
    if values.ndim == 3 and values.shape[2] == 1:
        values = values[..., 0]
    if values.shape != (grid.num_lat, grid.num_lon):
        raise ConfigurationError(
            f"error map shape {values.shape} does not match grid "
            f"({grid.num_lat}, {grid.num_lon})")
    fig, ax = plt.subplots(figsize=(9, 4.5))
    mesh = ax.pcolormesh(grid.lon_deg, grid.lat_deg, values, cmap="viridis", shading="nearest")
    fig.colorbar(mesh, ax=ax, shrink=0.85, label="RMSE")
    ax.set_xlabel("longitude (deg)")
    ax.set_ylabel("latitude (deg)")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)


def _month_records(report: EvalReport):
    recs = [r for r in report.records if r.slice_name.startswith("month:")]
    if not recs:
        raise ConfigurationError("report carries no month slices; run eval with --monthly")
    return recs


def plot_monthly_rmse(report: EvalReport, out_path, title: str = "Monthly RMSE") -> None:
    """One line per (window, variable) across initialization months."""
    recs = _month_records(report)
    fig, ax = plt.subplots(figsize=(8, 4.5))
    combos = sorted({(r.window, r.variable) for r in recs})
    for window, variable in combos:
        pts = sorted(
            (int(r.slice_name.split(":")[1]), r.rmse)
            for r in recs if (r.window, r.variable) == (window, variable))
        months = [m for m, _ in pts]
        ax.plot(months, [v for _, v in pts], marker="o", label=f"{variable} {window}")
    ax.set_xticks(range(1, 13))
    ax.set_xlabel("initialization month")
    ax.set_ylabel("RMSE")
    ax.set_title(title)
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)


def plot_report_heatmap(report: EvalReport, out_path, slice_name: str = "global",
                        metric: str = "rmse", title: str | None = None) -> None:
    """Variables x windows matrix of one metric, annotated per cell."""
    recs = [r for r in report.records if r.slice_name == slice_name]
    if not recs:
        raise ConfigurationError(f"report has no records for slice {slice_name!r}")
    variables = sorted({r.variable for r in recs})
    windows = sorted({r.window for r in recs})
    grid = np.full((len(variables), len(windows)), np.nan)
    for r in recs:
        value = getattr(r, metric)
        if value is not None:
            grid[variables.index(r.variable), windows.index(r.window)] = value
    fig, ax = plt.subplots(figsize=(2.0 + 1.6 * len(windows), 1.2 + 0.5 * len(variables)))
    mesh = ax.imshow(grid, cmap="viridis_r" if metric == "rmse" else "viridis", aspect="auto")
    for i in range(len(variables)):
        for j in range(len(windows)):
            if np.isfinite(grid[i, j]):
                ax.text(j, i, f"{grid[i, j]:.4g}", ha="center", va="center", fontsize=8,
                        color="white")
    ax.set_xticks(range(len(windows)), windows)
    ax.set_yticks(range(len(variables)), variables)
    fig.colorbar(mesh, ax=ax, shrink=0.85, label=metric)
    ax.set_title(title or f"{metric} ({slice_name})")
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
