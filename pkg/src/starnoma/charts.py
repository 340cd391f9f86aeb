"""Deterministic SVG line charts from result or trace CSVs."""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .model import watts_to_dbm

__all__ = ["ChartSpec", "ChartError", "chart_for_kind", "chart_series", "emit_chart"]


class ChartError(ValueError):
    """The CSV does not match the chart's expected schema or has no data."""


@dataclass(frozen=True)
class ChartSpec:
    x: str  # column for the x axis
    series: tuple[str, ...]  # columns whose values label one series
    x_label: str
    title: str
    y: str = "total_power_w"  # averaged in watts, plotted in dBm


_KIND_CHARTS = {
    "convergence": ChartSpec("iteration", ("M", "N_T"), "iteration",
                             "Total power versus iteration"),
    "sweep_M_NT": ChartSpec("M", ("N_T",), "surface elements M",
                            "Total power versus surface size"),
    "qos_compare": ChartSpec("qos_bits", ("scheme",), "minimum rate (bit/s/Hz)",
                             "Total power versus QoS target"),
}


def chart_for_kind(kind: str) -> ChartSpec:
    try:
        return _KIND_CHARTS[kind]
    except KeyError:
        raise ChartError(f"no chart preset for kind {kind!r}") from None


def chart_series(csv_path: str | os.PathLike, spec: ChartSpec) -> dict:
    """Mean dBm power per x value, grouped into series.

    Rows flagged infeasible or with an empty power are excluded.  Returns
    ``{label: (xs, ys)}`` with labels and x values sorted.
    """
    with open(csv_path, newline="") as fh:
        reader = csv.DictReader(fh)
        needed = {spec.x, spec.y, *spec.series}
        if reader.fieldnames is None or not needed <= set(reader.fieldnames):
            raise ChartError(f"{csv_path}: columns {sorted(needed)} required, "
                             f"found {reader.fieldnames}")
        groups: dict = {}
        for rec in reader:
            if rec.get("infeasible") == "1" or rec[spec.y] == "":
                continue
            label = ", ".join(f"{c}={rec[c]}" if c != "scheme" else rec[c] for c in spec.series)
            groups.setdefault(label, {}).setdefault(float(rec[spec.x]), []).append(
                float(rec[spec.y]))
    if not groups:
        raise ChartError(f"{csv_path}: no plottable rows")
    out = {}
    for label in sorted(groups):
        xs = sorted(groups[label])
        out[label] = (np.array(xs), np.array([watts_to_dbm(np.mean(groups[label][x]))
                                              for x in xs]))
    return out


def emit_chart(csv_path: str | os.PathLike, out_path: str | os.PathLike,
               spec: ChartSpec) -> Path:
    """Write an SVG line chart; nothing is written if the CSV has no data."""
    series = chart_series(csv_path, spec)
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    with matplotlib.rc_context({"svg.hashsalt": "starnoma", "svg.fonttype": "none"}):
        fig, ax = plt.subplots(figsize=(6, 4))
        for label, (xs, ys) in series.items():
            ax.plot(xs, ys, marker="o", label=label)
        ax.set_xlabel(spec.x_label)
        ax.set_ylabel("total power (dBm)")
        ax.set_title(spec.title)
        ax.grid(True, alpha=0.3)
        ax.legend()
        fig.tight_layout()
        out_path = Path(out_path)
        fig.savefig(out_path, format="svg", metadata={"Date": None})
        plt.close(fig)
    return out_path
