"""Plot-ready panel data and rendered figures from a results table.

Three panels mirror the evaluation summary: (a) dropped requests,
(d) advisor usage rates, (e) system failure counts, each aggregated per
configuration and traffic level. Every panel is written both as a CSV for
external tooling and as a PNG rendered here.
"""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Any

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

CONFIG_ORDER = ("marl_only", "guided_marl", "aura")
TRAFFIC_ORDER = ("low", "normal", "high")

CONFIG_LABELS = {"marl_only": "MARL-Only", "guided_marl": "Guided MARL", "aura": "AURA"}
CONFIG_COLORS = {"marl_only": "#888888", "guided_marl": "#4878a8", "aura": "#c05040"}

PANELS = {
    "a": ("panel_a.csv", "Dropped requests"),
    "d": ("panel_d.csv", "Advisor usage rate"),
    "e": ("panel_e.csv", "System failure steps"),
}


class MissingCellError(ValueError):
    """A (config, traffic) cell referenced by the export is absent."""


def _canonical(values: set[str], order: tuple[str, ...]) -> list[str]:
    return [v for v in order if v in values] + sorted(values - set(order))


def aggregate_cells(rows: list[dict[str, Any]]) -> dict[tuple[str, str], list[dict[str, Any]]]:
    """Group result rows per (config, traffic) cell, verifying the grid is
    complete."""
    if not rows:
        raise ValueError("no result rows to export")
    configs = _canonical({r["config"] for r in rows}, CONFIG_ORDER)
    traffics = _canonical({r["traffic"] for r in rows}, TRAFFIC_ORDER)
    cells: dict[tuple[str, str], list[dict[str, Any]]] = {}
    for row in rows:
        cells.setdefault((row["config"], row["traffic"]), []).append(row)
    for config in configs:
        for traffic in traffics:
            if (config, traffic) not in cells:
                raise MissingCellError(f"missing (config, traffic) cell: ({config}, {traffic})")
    ordered = {}
    for config in configs:
        for traffic in traffics:
            ordered[(config, traffic)] = cells[(config, traffic)]
    return ordered


def panel_rows(rows: list[dict[str, Any]], figure_id: str) -> list[dict[str, Any]]:
    """Aggregate one panel's data: mean/sd dropped requests (a), mean usage
    rate (d), or mean failure steps (e) per (config, traffic) cell."""
    cells = aggregate_cells(rows)
    out = []
    for (config, traffic), cell_rows in cells.items():
        entry: dict[str, Any] = {"config": config, "traffic": traffic}
        if figure_id == "a":
            values = np.array([float(r["dropped_requests_total"]) for r in cell_rows])
            entry["mean_dropped_requests"] = float(values.mean())
            entry["sd_dropped_requests"] = float(values.std(ddof=1)) if values.size > 1 else 0.0
        elif figure_id == "d":
            values = np.array([float(r["usage_rate"]) for r in cell_rows])
            entry["mean_usage_rate"] = float(values.mean())
        elif figure_id == "e":
            values = np.array([float(r["failure_steps"]) for r in cell_rows])
            entry["mean_failure_steps"] = float(values.mean())
        else:
            raise ValueError(f"unknown figure id {figure_id!r}; expected one of {sorted(PANELS)}")
        out.append(entry)
    return out


def write_panel_csv(panel: list[dict[str, Any]], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fieldnames = list(panel[0].keys())
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(fieldnames)
        for row in panel:
            writer.writerow([repr(v) if isinstance(v, float) else str(v) for v in row.values()])


def render_panel(panel: list[dict[str, Any]], figure_id: str, path: str | Path) -> None:
    """Render one panel as a grouped bar chart."""
    value_key = {
        "a": "mean_dropped_requests",
        "d": "mean_usage_rate",
        "e": "mean_failure_steps",
    }[figure_id]
    configs = _canonical({r["config"] for r in panel}, CONFIG_ORDER)
    traffics = _canonical({r["traffic"] for r in panel}, TRAFFIC_ORDER)
    lookup = {(r["config"], r["traffic"]): r for r in panel}

    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    x = np.arange(len(traffics))
    width = 0.8 / max(1, len(configs))
    for i, config in enumerate(configs):
        values = [lookup[(config, t)][value_key] for t in traffics]
        errors = None
        if figure_id == "a":
            errors = [lookup[(config, t)]["sd_dropped_requests"] for t in traffics]
        ax.bar(
            x + (i - (len(configs) - 1) / 2) * width,
            values,
            width,
            yerr=errors,
            capsize=3 if errors else 0,
            label=CONFIG_LABELS.get(config, config),
            color=CONFIG_COLORS.get(config),
        )
    ax.set_xticks(x)
    ax.set_xticklabels([t.capitalize() for t in traffics])
    ax.set_xlabel("Traffic level")
    ax.set_ylabel(PANELS[figure_id][1])
    if figure_id == "d":
        ax.set_ylim(0, 1)
        ax.axhline(0.6, color="black", linestyle="--", linewidth=0.8, alpha=0.6)
    ax.legend(frameon=False, fontsize=9)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def export_figure_data(
    rows: list[dict[str, Any]],
    figure_id: str,
    out_dir: str | Path,
    render: bool = True,
) -> list[Path]:
    """Write one panel (or all) as CSV plus rendered PNG; returns the paths
    written."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ids = sorted(PANELS) if figure_id == "all" else [figure_id]
    written: list[Path] = []
    for fid in ids:
        if fid not in PANELS:
            raise ValueError(f"unknown figure id {fid!r}; expected one of {sorted(PANELS)} or 'all'")
        panel = panel_rows(rows, fid)
        csv_path = out_dir / PANELS[fid][0]
        write_panel_csv(panel, csv_path)
        written.append(csv_path)
        if render:
            png_path = csv_path.with_suffix(".png")
            render_panel(panel, fid, png_path)
            written.append(png_path)
    return written
