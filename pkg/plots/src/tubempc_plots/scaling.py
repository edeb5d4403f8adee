"""Scaling curves from the hanging-chain study: per-iteration time vs state size."""

import argparse
import sys

import numpy as np
from matplotlib import pyplot as plt

from .common import FigureSpec, PlotError, read_csv_columns, save_figure

COLUMNS = ("n_x", "t_propagation_per_iter_ns", "t_zoro_per_iter_ns",
           "t_nominal_per_iter_ns")


def plot_scaling(scaling_csv, out_path):
    spec = FigureSpec(inputs=[scaling_csv], kind="scaling", output=out_path)
    cols = read_csv_columns(scaling_csv, required=COLUMNS)
    n_x = np.array([float(v) for v in cols["n_x"]])
    prop = np.array([float(v) for v in cols["t_propagation_per_iter_ns"]]) / 1e6
    zoro = np.array([float(v) for v in cols["t_zoro_per_iter_ns"]]) / 1e6
    nominal = np.array([float(v) for v in cols["t_nominal_per_iter_ns"]]) / 1e6

    fig, ax = plt.subplots()
    ax.loglog(n_x, nominal, "o-", label="nominal per iteration")
    ax.loglog(n_x, zoro, "s-", label="tube-tightened per iteration")
    ax.loglog(n_x, prop, "^-", label="propagation + backoff")
    if n_x.size >= 2:
        slope = np.polyfit(np.log(n_x), np.log(np.maximum(prop, 1e-12)), 1)[0]
        ax.set_title(f"per-iteration time vs state dimension (propagation slope {slope:.2f})")
    else:
        ax.set_title("per-iteration time vs state dimension")
    ax.set_xlabel("state dimension n_x")
    ax.set_ylabel("time per iteration [ms]")
    ax.legend(fontsize=8)
    save_figure(fig, spec.output)


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--in", dest="csv", required=True, help="scaling.csv from the study")
    parser.add_argument("--out", required=True, help="output image path (png)")
    args = parser.parse_args(argv)
    try:
        plot_scaling(args.csv, args.out)
    except (PlotError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"wrote {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
