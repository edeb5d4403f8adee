"""Closed-loop simulation: plant with seeded Gaussian process noise + controller.

Each step measures the true plant state, runs the selected controller variant
(nominal RTI, tube-tightened RTI, or tube-tightened SQP to convergence),
applies u_0, integrates the plant one sample with ERK4 and adds process noise.
Noise uses a counter-based generator (Philox) behind a Cholesky factor, so a
(seed, config) pair fully determines the simulated states.
"""

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError
from .integrators import ERK4, IntegratorConfig, discrete_step
from .ocp import build_diff_drive_ocp
from .sqp import SqpSettings, SqpSolver, sqp_solve
from .zoro import ZoroConfig, zoro_rti_feedback, zoro_rti_prepare, zoro_update

CONTROLLERS = ("nominal_rti", "zoro_rti", "zoro_sqp")
TIMING_KEYS = ("prepare", "propagation", "feedback", "qp")


@dataclass
class NoiseConfig:
    covariance: np.ndarray
    seed: int = 0

    def __post_init__(self):
        self.covariance = np.asarray(self.covariance, dtype=float)
        n = self.covariance.shape[0]
        if self.covariance.shape != (n, n):
            raise ConfigurationError("noise covariance must be square")
        if not np.allclose(self.covariance, self.covariance.T, atol=1e-12):
            raise ConfigurationError("noise covariance must be symmetric")
        if n and np.min(np.linalg.eigvalsh(self.covariance)) < -1e-10:
            raise ConfigurationError("noise covariance must be positive semidefinite")
        self.seed = int(self.seed)

    def cholesky_factor(self):
        if not np.any(self.covariance):
            return np.zeros_like(self.covariance)
        try:
            return np.linalg.cholesky(self.covariance)
        except np.linalg.LinAlgError:
            # PSD but singular: eigenvalue square root
            w, V = np.linalg.eigh(self.covariance)
            return V @ np.diag(np.sqrt(np.maximum(w, 0.0)))


@dataclass
class ClosedLoopTrace:
    """Per-step records of a closed-loop run plus run metadata."""

    t: np.ndarray
    x: np.ndarray                  # measured true state at each step
    u: np.ndarray                  # applied control
    clearance: np.ndarray          # (n, n_obstacles) or shape (n, 0)
    timings_ns: dict               # per-phase int64 arrays
    margin: np.ndarray             # min over stage rows of -h at (x_true, u)
    metadata: dict = field(default_factory=dict)
    failure: dict = None

    @property
    def n_steps(self):
        return self.t.size

    def column_names(self):
        n_x, n_u = self.x.shape[1], self.u.shape[1]
        cols = ["step", "t"]
        cols += [f"x{i}" for i in range(n_x)]
        cols += [f"u{i}" for i in range(n_u)]
        cols += [f"clearance_{j}" for j in range(self.clearance.shape[1])]
        cols += [f"t_{k}_ns" for k in TIMING_KEYS]
        return cols


def _controller_step(solver, controller, cfg, x_true):
    """One controller invocation; returns (StepResult, timing dict in ns)."""
    if controller == "nominal_rti":
        solver.prepare()
        solver.timings["propagation_ns"] = 0
        res = solver.feedback(x_true)
        timings = {k: solver.timings[f"{k}_ns"] for k in TIMING_KEYS}
        return res, timings
    if controller == "zoro_rti":
        zoro_rti_prepare(solver, cfg)
        res = zoro_rti_feedback(solver, x_true)
        timings = {k: solver.timings[f"{k}_ns"] for k in TIMING_KEYS}
        return res, timings


def simulate_closed_loop(plant_model, controller, scenario, noise, n_steps,
                         sample_time=None, ocp=None, zoro_cfg=None, settings=None,
                         plant_num_steps=1, init_solve=True, timing_repeats=1):
    """Run the receding-horizon loop and collect a ClosedLoopTrace.

    ``scenario`` drives the time-varying reference and the clearance metrics;
    the OCP is built from it unless one is passed explicitly.  With
    ``timing_repeats`` > 1 the identical simulation is repeated and each
    timing sample keeps its per-step minimum (the dynamical content is
    checked to be identical across repeats).
    """
    if controller not in CONTROLLERS:
        raise ConfigurationError(f"unknown controller '{controller}' (expected one of {CONTROLLERS})")
    if ocp is None:
        if scenario is None:
            raise ConfigurationError("either a scenario or an explicit ocp is required")
        ocp = build_diff_drive_ocp(scenario)
    if plant_model is None:
        plant_model = ocp.model
    if sample_time is None:
        sample_time = ocp.dt
    if abs(sample_time - ocp.dt) > 1e-12:
        raise ConfigurationError(
            f"sample_time {sample_time} must equal the OCP interval T/N = {ocp.dt}")
    if zoro_cfg is None:
        zoro_cfg = ZoroConfig.zero(ocp)
    if timing_repeats < 1:
        raise ConfigurationError("timing_repeats must be >= 1")

    base = _simulate_once(plant_model, controller, scenario, noise, n_steps,
                          ocp, zoro_cfg, settings, plant_num_steps, init_solve)
    for _ in range(timing_repeats - 1):
        rep = _simulate_once(plant_model, controller, scenario, noise, n_steps,
                             ocp, zoro_cfg, settings, plant_num_steps, init_solve)
        if not np.array_equal(rep.x, base.x):
            raise ConfigurationError("timing repeats produced different trajectories")
        for k in TIMING_KEYS:
            base.timings_ns[k] = np.minimum(base.timings_ns[k], rep.timings_ns[k])
    base.metadata["timing_repeats"] = timing_repeats
    return base


def _stage_margin(ocp, x, u):
    vals, _ = ocp.stage_constraints.eval(x, u, ocp.model.n_x, ocp.model.n_u)
    return float(-np.max(vals)) if vals.size else np.inf


def _set_scenario_references(solver, scenario, ocp, t):
    refs = solver.stage_refs.copy()
    for k in range(ocp.N):
        refs[k, :5] = scenario.reference_state(t + k * ocp.dt)
    term = solver.term_ref.copy()
    term[:5] = scenario.reference_state(t + ocp.T)
    solver.set_references(refs, term)


def _simulate_once(plant_model, controller, scenario, noise, n_steps, ocp,
                   zoro_cfg, settings, plant_num_steps, init_solve):
    dt = ocp.dt
    n_x, n_u = ocp.model.n_x, ocp.model.n_u
    n_obs = len(scenario.obstacles) if scenario is not None else 0
    rng = np.random.default_rng(np.random.Philox(key=noise.seed))
    L = noise.cholesky_factor()
    if L.shape[0] != plant_model.n_x:
        raise ConfigurationError(
            f"noise covariance dimension {L.shape[0]} does not match plant state {plant_model.n_x}")
    plant_cfg = IntegratorConfig(scheme=ERK4, step_size=dt / plant_num_steps,
                                 num_steps=plant_num_steps)
    settings = settings if settings is not None else SqpSettings()

    solver = SqpSolver(ocp, settings)
    if scenario is not None:
        _set_scenario_references(solver, scenario, ocp, 0.0)
    init_status = "skipped"
    if init_solve:
        hook = None if controller == "nominal_rti" else (lambda s: zoro_update(s, zoro_cfg))
        init = sqp_solve(ocp, settings=settings, bound_hook=hook)
        solver.set_iterate(init.iterate.xs, init.iterate.us)
        init_status = init.status

    x_true = ocp.x0.copy()
    t_arr = np.zeros(n_steps)
    xs = np.zeros((n_steps, n_x))
    us = np.zeros((n_steps, n_u))
    clear = np.zeros((n_steps, n_obs))
    margin = np.zeros(n_steps)
    timings = {k: np.zeros(n_steps, dtype=np.int64) for k in TIMING_KEYS}
    failure = None
    steps_done = 0

    for step in range(n_steps):
        t = step * dt
        if scenario is not None:
            _set_scenario_references(solver, scenario, ocp, t)
        if controller == "zoro_sqp":
            result = sqp_solve(ocp, guess=solver.iterate, settings=settings,
                               bound_hook=lambda s: zoro_update(s, zoro_cfg),
                               x0_bar=x_true)
            solver.set_iterate(result.iterate.xs, result.iterate.us)
            if result.status in ("qp_infeasible", "tightened_infeasible", "qp_failure"):
                failure = {"step": step, "status": result.status}
                break
            step_timings = {k: sum(it[f"{k}_ns"] for it in result.timings)
                            for k in TIMING_KEYS}
            u0 = result.iterate.us[0].copy()
        else:
            res, step_timings = _controller_step(solver, controller, zoro_cfg, x_true)
            if not res.applied:
                failure = {"step": step, "status": res.qp_status,
                           "qp_residual": res.qp_residual}
                break
            u0 = res.u0

        t_arr[step] = t
        xs[step] = x_true
        us[step] = u0
        if scenario is not None:
            clear[step] = scenario.clearances(x_true)
        margin[step] = _stage_margin(ocp, x_true, u0)
        for k in TIMING_KEYS:
            timings[k][step] = step_timings[k]
        steps_done = step + 1

        x_true = discrete_step(plant_model, x_true, u0, plant_cfg).x_next
        x_true = x_true + L @ rng.standard_normal(plant_model.n_x)
        solver.shift_warm_start()

    sl = slice(0, steps_done)
    meta = {
        "controller": controller,
        "seed": noise.seed,
        "sample_time": dt,
        "n_steps_requested": n_steps,
        "init_status": init_status,
        "final_state": [float(v) for v in x_true],
        "final_clearance": ([float(c) for c in scenario.clearances(x_true)]
                            if scenario is not None else None),
    }
    return ClosedLoopTrace(t=t_arr[sl], x=xs[sl], u=us[sl], clearance=clear[sl],
                           timings_ns={k: v[sl] for k, v in timings.items()},
                           margin=margin[sl], metadata=meta, failure=failure)


def metrics(trace):
    """Summary report: clearances, nominal-bound violations, timing quantiles."""
    if trace.n_steps == 0:
        raise ConfigurationError("cannot compute metrics of an empty trace")
    out = {"n_steps": int(trace.n_steps)}
    if trace.clearance.shape[1]:
        clear_min = trace.clearance.min(axis=1)
        out["min_clearance"] = float(np.min(clear_min))
        final = trace.metadata.get("final_clearance")
        if final is not None:
            out["min_clearance"] = min(out["min_clearance"], float(min(final)))
        out["collisions"] = int(np.sum(clear_min <= 0.0))
    out["violations"] = {
        "steps": int(np.sum(trace.margin < 0.0)),
        "min_margin": float(np.min(trace.margin)),
    }
    t = trace.timings_ns
    out["timings_ns"] = {
        k: {"min": int(np.min(v)), "median": float(np.median(v)), "max": int(np.max(v))}
        for k, v in t.items()
    }
    # qp time is a subinterval of the feedback phase, so it is not re-added
    total = t["prepare"] + t["propagation"] + t["feedback"]
    out["timings_ns"]["total"] = {"min": int(np.min(total)),
                                  "median": float(np.median(total)),
                                  "max": int(np.max(total))}
    share = (t["propagation"] / np.maximum(total, 1)).astype(float)
    out["propagation_share_median"] = float(np.median(share))
    if trace.failure is not None:
        out["failure"] = trace.failure
    return out


# ---------------------------------------------------------------------------
# Trace IO (fixed column order, round-trip stable formatting)
# ---------------------------------------------------------------------------

def _fmt(v):
    return repr(float(v))


def write_trace_csv(trace, path):
    cols = trace.column_names()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for i in range(trace.n_steps):
            row = [str(i), _fmt(trace.t[i])]
            row += [_fmt(v) for v in trace.x[i]]
            row += [_fmt(v) for v in trace.u[i]]
            row += [_fmt(v) for v in trace.clearance[i]]
            row += [str(int(trace.timings_ns[k][i])) for k in TIMING_KEYS]
            w.writerow(row)


def read_trace_csv(path):
    """Read a trace CSV back into a ClosedLoopTrace (margins are not stored)."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, data = rows[0], rows[1:]
    n = len(data)
    n_x = sum(1 for c in header if c.startswith("x"))
    n_u = sum(1 for c in header if c.startswith("u"))
    n_c = sum(1 for c in header if c.startswith("clearance_"))
    t = np.zeros(n)
    x = np.zeros((n, n_x))
    u = np.zeros((n, n_u))
    clear = np.zeros((n, n_c))
    timings = {k: np.zeros(n, dtype=np.int64) for k in TIMING_KEYS}
    for i, row in enumerate(data):
        vals = dict(zip(header, row))
        t[i] = float(vals["t"])
        for j in range(n_x):
            x[i, j] = float(vals[f"x{j}"])
        for j in range(n_u):
            u[i, j] = float(vals[f"u{j}"])
        for j in range(n_c):
            clear[i, j] = float(vals[f"clearance_{j}"])
        for k in TIMING_KEYS:
            timings[k][i] = int(vals[f"t_{k}_ns"])
    return ClosedLoopTrace(t=t, x=x, u=u, clearance=clear, timings_ns=timings,
                           margin=np.full(n, np.nan), metadata={})


def write_json(obj, path):
    with open(path, "w") as fh:
        fh.write(json.dumps(obj, indent=2, sort_keys=True))
        fh.write("\n")
