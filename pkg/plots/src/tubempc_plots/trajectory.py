"""Closed-loop trajectory map: robot path, inflated obstacles, clearance note.

Reads a trace CSV plus its sibling metadata JSON (for obstacle geometry) and
renders the 2D path.  Obstacle disks are drawn at their physical radius with a
dashed circle showing the robot-radius inflation.
"""

import argparse
import sys

import numpy as np
from matplotlib import pyplot as plt

from .common import FigureSpec, PlotError, read_csv_columns, read_json, save_figure


def plot_trajectory(trace_csv, meta_json, out_path):
    spec = FigureSpec(inputs=[trace_csv, meta_json], kind="trajectory", output=out_path)
    cols = read_csv_columns(trace_csv, required=["x0", "x1"])
    meta = read_json(meta_json)
    scenario = meta.get("scenario") or {}
    obstacles = scenario.get("obstacles", [])
    radius = float(scenario.get("robot_radius", 0.0))

    px = np.array([float(v) for v in cols["x0"]])
    py = np.array([float(v) for v in cols["x1"]])

    fig, ax = plt.subplots()
    ax.plot(px, py, "-", color="tab:blue", lw=1.5, label="closed loop")
    ax.plot(px[0], py[0], "o", color="tab:green", label="start")
    goal = scenario.get("goal")
    if goal is not None:
        ax.plot(goal[0], goal[1], "*", color="tab:red", ms=12, label="goal")

    min_clear = None
    for ob in obstacles:
        q = (float(ob["q_x"]), float(ob["q_y"]))
        r = float(ob["r_obs"])
        ax.add_patch(plt.Circle(q, r, color="0.55", zorder=2))
        ax.add_patch(plt.Circle(q, r + radius, fill=False, ls="--", color="0.4", zorder=2))
        d = np.hypot(px - q[0], py - q[1]) - r - radius
        ob_min = float(np.min(d))
        min_clear = ob_min if min_clear is None else min(min_clear, ob_min)

    if min_clear is not None:
        ax.set_title(f"closed-loop trajectory (min clearance {min_clear:.3f} m)")
    else:
        ax.set_title("closed-loop trajectory")
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    ax.set_aspect("equal", adjustable="datalim")
    ax.legend(loc="upper left", fontsize=8)
    save_figure(fig, spec.output)
    return min_clear


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--in", dest="trace", required=True, help="trace CSV from the closed loop")
    parser.add_argument("--meta", required=True, help="sibling metadata JSON (scenario geometry)")
    parser.add_argument("--out", required=True, help="output image path (png)")
    args = parser.parse_args(argv)
    try:
        plot_trajectory(args.trace, args.meta, args.out)
    except (PlotError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"wrote {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
