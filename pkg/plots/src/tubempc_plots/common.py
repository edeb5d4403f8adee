"""Shared figure plumbing: deterministic style, CSV/JSON readers, FigureSpec."""

import csv
import json
from dataclasses import dataclass

import matplotlib

matplotlib.use("Agg")  # file output only; keeps rendering deterministic
import matplotlib.pyplot as plt  # noqa: E402

FIGSIZE = (6.4, 4.4)
DPI = 150

plt.rcParams.update({
    "figure.figsize": FIGSIZE,
    "savefig.dpi": DPI,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "font.size": 10,
})

KINDS = ("trajectory", "timing_whisker", "scaling")


class PlotError(ValueError):
    """Bad or incomplete plot input (e.g. a missing CSV column)."""


@dataclass
class FigureSpec:
    inputs: list
    kind: str
    output: str

    def __post_init__(self):
        if self.kind not in KINDS:
            raise PlotError(f"unknown figure kind '{self.kind}' (expected one of {KINDS})")
        if not self.inputs:
            raise PlotError("at least one input file is required")


def read_csv_columns(path, required):
    """Read a CSV into {column: list[str]} and fail naming any missing column."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise PlotError(f"{path}: empty file")
    header, data = rows[0], rows[1:]
    for col in required:
        if col not in header:
            raise PlotError(f"{path}: missing column '{col}'")
    if not data:
        raise PlotError(f"{path}: no data rows")
    idx = {c: header.index(c) for c in header}
    return {c: [row[idx[c]] for row in data] for c in header}


def read_json(path):
    with open(path) as fh:
        return json.load(fh)


def save_figure(fig, out_path):
    fig.savefig(out_path, dpi=DPI)
    plt.close(fig)
