"""Per-phase computation-time chart with min/median/max whiskers.

Consumes one or more metrics JSON reports from the closed-loop runs; several
reports render as grouped whiskers (e.g. controller variants side by side).
"""

import argparse
import os
import sys

from matplotlib import pyplot as plt

from .common import FigureSpec, PlotError, read_json, save_figure

PHASES = ("prepare", "propagation", "feedback", "qp")


def _extract(report, path):
    timings = report.get("timings_ns")
    if timings is None:
        raise PlotError(f"{path}: missing field 'timings_ns'")
    out = {}
    for phase in PHASES:
        if phase not in timings:
            raise PlotError(f"{path}: missing timing phase '{phase}'")
        q = timings[phase]
        out[phase] = (q["min"] / 1e6, q["median"] / 1e6, q["max"] / 1e6)
    return out


def plot_timings(metrics_paths, out_path, labels=None):
    spec = FigureSpec(inputs=list(metrics_paths), kind="timing_whisker", output=out_path)
    reports = [_extract(read_json(p), p) for p in spec.inputs]
    if labels is None:
        labels = [os.path.splitext(os.path.basename(p))[0] for p in spec.inputs]

    fig, ax = plt.subplots()
    n = len(reports)
    width = 0.8 / n
    colors = plt.rcParams["axes.prop_cycle"].by_key()["color"]
    for r, (rep, label) in enumerate(zip(reports, labels)):
        xs = [i + (r - (n - 1) / 2.0) * width for i in range(len(PHASES))]
        lo = [rep[p][0] for p in PHASES]
        med = [rep[p][1] for p in PHASES]
        hi = [rep[p][2] for p in PHASES]
        color = colors[r % len(colors)]
        ax.vlines(xs, lo, hi, color=color, lw=1.5)
        ax.scatter(xs, med, marker="_", s=220, color=color, label=label)
    ax.set_xticks(range(len(PHASES)))
    ax.set_xticklabels(PHASES)
    ax.set_ylabel("time per step [ms]")
    ax.set_yscale("log")
    ax.set_title("computation times (whiskers: min to max, tick: median)")
    ax.legend(fontsize=8)
    save_figure(fig, spec.output)


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--in", dest="reports", nargs="+", required=True,
                        help="metrics JSON file(s)")
    parser.add_argument("--labels", nargs="+", default=None,
                        help="legend labels (defaults to file names)")
    parser.add_argument("--out", required=True, help="output image path (png)")
    args = parser.parse_args(argv)
    if args.labels is not None and len(args.labels) != len(args.reports):
        print("error: --labels must match the number of inputs", file=sys.stderr)
        return 2
    try:
        plot_timings(args.reports, args.out, labels=args.labels)
    except (PlotError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"wrote {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
