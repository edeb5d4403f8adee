"""Command-line entry point: load a config, run experiments, emit CSV/JSON files.

Subcommands: solve (open-loop OCP), closed-loop (receding-horizon simulation),
scaling (hanging-chain timing study), check (independent feasibility
verification of solve outputs).  Exit codes: 0 success, 2 config error,
3 solver failure, 4 feasibility-check failure.
"""

import argparse
import csv
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .check import check_solution
from .config import load_config
from .errors import ConfigurationError, IntegrationError
from .simulate import metrics, simulate_closed_loop, write_json, write_trace_csv
from .sqp import STATUS_CONVERGED, SqpSettings, rollout_guess, sqp_solve
from .zoro import ZoroConfig, zoro_sqp

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_CHECK = 4


def _fmt(v):
    return repr(float(v))


# ---------------------------------------------------------------------------
# solve artifacts
# ---------------------------------------------------------------------------

def write_trajectory_csv(path, xs, us, dt):
    n_x, n_u = xs.shape[1], us.shape[1]
    header = ["k", "t"] + [f"x{i}" for i in range(n_x)] + [f"u{i}" for i in range(n_u)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for k in range(xs.shape[0]):
            row = [str(k), _fmt(k * dt)] + [_fmt(v) for v in xs[k]]
            row += [_fmt(v) for v in us[k]] if k < us.shape[0] else [""] * n_u
            w.writerow(row)


def read_trajectory_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, data = rows[0], rows[1:]
    n_x = sum(1 for c in header if c.startswith("x"))
    n_u = sum(1 for c in header if c.startswith("u"))
    xs = np.zeros((len(data), n_x))
    us_rows = []
    dt = float(data[1][1]) - float(data[0][1]) if len(data) > 1 else 0.0
    for i, row in enumerate(data):
        vals = dict(zip(header, row))
        for j in range(n_x):
            xs[i, j] = float(vals[f"x{j}"])
        if vals[f"u0"] != "":
            us_rows.append([float(vals[f"u{j}"]) for j in range(n_u)])
    return xs, np.array(us_rows), dt


def write_tube_csv(path, tube):
    n_x = tube.P.shape[1]
    m_max = max(b.size for b in tube.beta)
    header = ["k"] + [f"P_{i}_{j}" for i in range(n_x) for j in range(n_x)]
    header += [f"beta_{i}" for i in range(m_max)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for k in range(tube.P.shape[0]):
            row = [str(k)] + [_fmt(v) for v in tube.P[k].ravel()]
            b = tube.beta[k]
            row += [_fmt(v) for v in b] + [""] * (m_max - b.size)
            w.writerow(row)


def read_tube_csv(path):
    from .zoro import TubeState
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, data = rows[0], rows[1:]
    n_x = int(np.sqrt(sum(1 for c in header if c.startswith("P_"))))
    m_max = sum(1 for c in header if c.startswith("beta_"))
    P = np.zeros((len(data), n_x, n_x))
    beta = []
    for i, row in enumerate(data):
        vals = row[1:]
        P[i] = np.array([float(v) for v in vals[:n_x * n_x]]).reshape(n_x, n_x)
        beta.append(np.array([float(v) for v in vals[n_x * n_x:] if v != ""]))
    return TubeState(P=P, beta=beta)


def _scenario_jsonable(scenario):
    if scenario is None:
        return None
    return {
        "start": [float(v) for v in scenario.start],
        "goal": [float(v) for v in scenario.goal],
        "robot_radius": scenario.robot_radius,
        "cruise_speed": scenario.cruise_speed,
        "obstacles": [{"q_x": ob.q_x, "q_y": ob.q_y, "r_obs": ob.r_obs}
                      for ob in scenario.obstacles],
        "bounds": dict(scenario.bounds),
        "weights": dict(scenario.weights),
    }


def run_solve(cfg, out_dir):
    scenario = cfg.build_scenario()
    spec = cfg.build_ocp(scenario)
    zoro_cfg = cfg.build_zoro(spec)
    settings = cfg.build_settings()
    result, tube = zoro_sqp(spec, zoro_cfg, guess=rollout_guess(spec), settings=settings)

    os.makedirs(out_dir, exist_ok=True)
    write_trajectory_csv(os.path.join(out_dir, "trajectory.csv"),
                         result.iterate.xs, result.iterate.us, spec.dt)
    write_tube_csv(os.path.join(out_dir, "tube.csv"), tube)
    log = {
        "status": result.status,
        "iterations": result.iterations,
        "history": result.history,
        "cost": spec.total_cost(result.iterate.xs, result.iterate.us),
        "timings_ns": {k: int(sum(it[f"{k}_ns"] for it in result.timings))
                       for k in ("prepare", "condense", "propagation", "feedback", "qp")},
        "scenario": _scenario_jsonable(scenario),
    }
    write_json(log, os.path.join(out_dir, "solver_log.json"))
    if result.status != STATUS_CONVERGED:
        print(f"solve: {result.status} after {result.iterations} iterations", file=sys.stderr)
        return EXIT_SOLVER
    print(f"solve: converged in {result.iterations} iterations, "
          f"cost {log['cost']:.6f}, outputs in {out_dir}")
    return EXIT_OK


def run_closed_loop(cfg, out_dir, seed_override=None, repeats=None):
    scenario = cfg.build_scenario()
    spec = cfg.build_ocp(scenario)
    zoro_cfg = cfg.build_zoro(spec)
    noise = cfg.build_noise(spec, seed_override)
    settings = cfg.build_settings()
    sim = cfg.sim
    controller = sim.get("controller", "zoro_rti")
    n_steps = int(sim.get("n_steps", 120))
    timing_repeats = int(sim.get("timing_repeats", 1))
    plant_num_steps = int(sim.get("plant_num_steps", 1))
    repeats = int(repeats) if repeats else 1

    def one(seed):
        n = type(noise)(covariance=noise.covariance, seed=seed)
        trace = simulate_closed_loop(None, controller, scenario, n, n_steps,
                                     ocp=spec, zoro_cfg=zoro_cfg, settings=settings,
                                     plant_num_steps=plant_num_steps,
                                     timing_repeats=timing_repeats)
        return seed, trace

    seeds = [noise.seed + i for i in range(repeats)]
    # timing mode wants an idle machine; fan out only plain multi-seed runs
    if repeats > 1 and timing_repeats == 1:
        with ThreadPoolExecutor(max_workers=min(repeats, os.cpu_count() or 1)) as pool:
            results = list(pool.map(one, seeds))
    else:
        results = [one(s) for s in seeds]

    os.makedirs(out_dir, exist_ok=True)
    all_metrics = []
    failures = 0
    for seed, trace in results:
        trace.metadata["scenario"] = _scenario_jsonable(scenario)
        trace.metadata["columns"] = trace.column_names()
        base = os.path.join(out_dir, f"trace_seed{seed}")
        write_trace_csv(trace, base + ".csv")
        write_json(trace.metadata, base + "_meta.json")
        m = metrics(trace) if trace.n_steps else {"failure": trace.failure}
        m["seed"] = seed
        write_json(m, os.path.join(out_dir, f"metrics_seed{seed}.json"))
        all_metrics.append(m)
        if trace.failure is not None:
            failures += 1
    write_json(all_metrics, os.path.join(out_dir, "metrics.json"))
    if failures:
        print(f"closed-loop: {failures}/{repeats} runs failed", file=sys.stderr)
        return EXIT_SOLVER
    worst = min((m.get("min_clearance", float("inf")) for m in all_metrics),
                default=float("inf"))
    print(f"closed-loop: {repeats} run(s) of {n_steps} steps complete; "
          f"min clearance {worst:.4f}; outputs in {out_dir}")
    return EXIT_OK


def _chain_zoro(spec, noise_scale):
    n_x = spec.model.n_x
    W = noise_scale * np.eye(n_x)
    return ZoroConfig(P0_bar=W.copy(), K=np.zeros((spec.model.n_u, n_x)), W=W,
                      G=np.eye(n_x), gamma=1.0)


def _per_iteration_times(result):
    n = max(len(result.timings), 1)
    prop = sum(t["propagation_ns"] for t in result.timings) / n
    total = sum(t["prepare_ns"] + t["propagation_ns"] + t["feedback_ns"]
                for t in result.timings) / n
    return prop, total


def run_scaling(cfg, out_dir, repeats=None):
    sizes = cfg.scaling.get("n_mass", [3, 4, 5, 6])
    iters = int(cfg.scaling.get("sqp_iterations", 5))
    noise_scale = float(cfg.scaling.get("noise_scale", 1e-4))
    repeats = int(repeats) if repeats else int(cfg.scaling.get("repeats", 3))
    settings = cfg.build_settings()
    settings = SqpSettings(max_iter=iters, tol_stationarity=settings.tol_stationarity,
                           tol_equality=settings.tol_equality,
                           tol_inequality=settings.tol_inequality,
                           tol_complementarity=settings.tol_complementarity,
                           levenberg=settings.levenberg, qp_tol=settings.qp_tol,
                           qp_max_iter=settings.qp_max_iter)

    rows = []
    flagged = []
    for n_mass in sizes:
        spec = cfg.build_ocp(n_mass=n_mass)
        zoro_cfg = _chain_zoro(spec, noise_scale)
        try:
            best = None
            for _ in range(repeats):
                guess = rollout_guess(spec)
                nominal = sqp_solve(spec, guess=guess, settings=settings)
                robust, _ = zoro_sqp(spec, zoro_cfg, guess=guess, settings=settings)
                prop, total_z = _per_iteration_times(robust)
                _, total_n = _per_iteration_times(nominal)
                sample = {"n_mass": n_mass, "n_x": spec.model.n_x,
                          "t_propagation_per_iter_ns": prop,
                          "t_remainder_per_iter_ns": total_z - prop,
                          "t_zoro_per_iter_ns": total_z,
                          "t_nominal_per_iter_ns": total_n}
                if best is None or sample["t_zoro_per_iter_ns"] < best["t_zoro_per_iter_ns"]:
                    best = sample
            rows.append(best)
        except (IntegrationError, np.linalg.LinAlgError) as exc:
            flagged.append({"n_mass": n_mass, "error": str(exc)})

    report = {"sizes": rows, "flagged": flagged, "sqp_iterations": iters,
              "repeats": repeats}
    if len(rows) >= 2:
        log_nx = np.log([r["n_x"] for r in rows])
        log_prop = np.log([max(r["t_propagation_per_iter_ns"], 1.0) for r in rows])
        report["propagation_slope"] = float(np.polyfit(log_nx, log_prop, 1)[0])
        report["max_zoro_over_nominal"] = max(r["t_zoro_per_iter_ns"] / r["t_nominal_per_iter_ns"]
                                              for r in rows)
    else:
        report["propagation_slope"] = None
        report["note"] = "insufficient points for a slope fit (need at least 2 sizes)"

    os.makedirs(out_dir, exist_ok=True)
    write_json(report, os.path.join(out_dir, "scaling.json"))
    with open(os.path.join(out_dir, "scaling.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        cols = ["n_mass", "n_x", "t_propagation_per_iter_ns", "t_remainder_per_iter_ns",
                "t_zoro_per_iter_ns", "t_nominal_per_iter_ns"]
        w.writerow(cols)
        for r in rows:
            w.writerow([str(r["n_mass"]), str(r["n_x"])] + [_fmt(r[c]) for c in cols[2:]])
    if not rows:
        print("scaling: every size failed", file=sys.stderr)
        return EXIT_SOLVER
    slope = report.get("propagation_slope")
    print(f"scaling: {len(rows)} size(s), propagation slope "
          f"{slope if slope is None else round(slope, 3)}; outputs in {out_dir}")
    return EXIT_OK


def run_check(cfg, files_dir, tol=1e-6):
    scenario = cfg.build_scenario()
    spec = cfg.build_ocp(scenario)
    zoro_cfg = cfg.build_zoro(spec)
    traj_path = os.path.join(files_dir, "trajectory.csv")
    if not os.path.exists(traj_path):
        raise ConfigurationError(f"{traj_path}: no trajectory file to check")
    xs, us, _ = read_trajectory_csv(traj_path)
    if xs.shape != (spec.N + 1, spec.model.n_x) or us.shape != (spec.N, spec.model.n_u):
        raise ConfigurationError(
            f"{traj_path}: trajectory shape {xs.shape}/{us.shape} does not match the config "
            f"(expected {(spec.N + 1, spec.model.n_x)}/{(spec.N, spec.model.n_u)})")
    violations = check_solution(spec, zoro_cfg, xs, us, tol=tol)
    if violations:
        print(f"check: {len(violations)} violation(s) at tolerance {tol}", file=sys.stderr)
        for v in violations:
            print("  " + v.describe(), file=sys.stderr)
        return EXIT_CHECK
    print(f"check: trajectory satisfies all tightened constraints at tolerance {tol}")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="tubempc",
        description="Tube-based robust NMPC: solve, simulate, benchmark, verify.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, helptext in (("solve", "solve one OCP and write trajectory/tube files"),
                           ("closed-loop", "run the closed-loop simulation"),
                           ("scaling", "hanging-chain propagation-cost scaling study"),
                           ("check", "verify solve outputs with the independent checker")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--config", required=True, help="path to the JSON run config")
        p.add_argument("--out", default=None, help="output directory (default: config's)")
        p.add_argument("--seed", type=int, default=None, help="override the noise seed")
        p.add_argument("--repeats", type=int, default=None,
                       help="number of runs (closed-loop seeds / scaling repeats)")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        out_dir = args.out if args.out is not None else cfg.output
        if args.command == "solve":
            return run_solve(cfg, out_dir)
        if args.command == "closed-loop":
            return run_closed_loop(cfg, out_dir, seed_override=args.seed,
                                   repeats=args.repeats)
        if args.command == "scaling":
            return run_scaling(cfg, out_dir, repeats=args.repeats)
        if args.command == "check":
            return run_check(cfg, out_dir)
    except ConfigurationError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except IntegrationError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
