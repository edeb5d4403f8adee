"""JSON run configuration: parsing and validation with path-precise errors.

A config document has the blocks ``model``, ``ocp`` (with a scenario), and
optionally ``integrator``, ``zoro``, ``noise``, ``sim``, ``solver``,
``scaling`` and ``output``.  Matrices are row-major nested arrays; all
physical quantities are SI.  Validation happens before any numeric work and
reports the JSON path of the offending entry.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError
from .integrators import ERK4, IRK_GL4, IntegratorConfig
from .ocp import (DiffDriveScenario, build_diff_drive_ocp, build_hanging_chain_ocp,
                  default_diff_drive_scenario)
from .simulate import CONTROLLERS, NoiseConfig
from .sqp import SqpSettings
from .zoro import ZoroConfig

EXPERIMENTS = ("solve", "closed_loop", "scaling")
MODELS = ("diff_drive", "hanging_chain")


def _err(path, msg):
    raise ConfigurationError(f"{path}: {msg}")


def _expect_type(value, types, path, what):
    if not isinstance(value, types):
        _err(path, f"expected {what}, got {type(value).__name__}")
    return value


def _as_matrix(value, path, rows=None, cols=None):
    try:
        M = np.asarray(value, dtype=float)
    except (TypeError, ValueError):
        _err(path, "expected a nested array of numbers")
    if M.ndim != 2:
        _err(path, f"expected a 2-d matrix, got {M.ndim}-d data")
    if rows is not None and M.shape[0] != rows:
        _err(path, f"expected {rows} rows, got {M.shape[0]}")
    if cols is not None and M.shape[1] != cols:
        _err(path, f"expected {cols} columns, got {M.shape[1]}")
    return M


def _as_vector(value, path, size=None):
    try:
        v = np.asarray(value, dtype=float)
    except (TypeError, ValueError):
        _err(path, "expected an array of numbers")
    if v.ndim != 1:
        _err(path, f"expected a 1-d array, got {v.ndim}-d data")
    if size is not None and v.size != size:
        _err(path, f"expected length {size}, got {v.size}")
    return v


def _check_keys(block, allowed, path):
    for key in block:
        if key not in allowed:
            _err(f"{path}.{key}", f"unknown key (allowed: {', '.join(sorted(allowed))})")


@dataclass
class RunConfig:
    """Validated run configuration; factory methods build the solver objects."""

    experiment: str
    model: str
    ocp: dict
    integrator: IntegratorConfig = None
    zoro: dict = None
    noise: dict = None
    sim: dict = field(default_factory=dict)
    solver: SqpSettings = None
    scaling: dict = field(default_factory=dict)
    output: str = "out"

    def build_scenario(self):
        if self.model != "diff_drive":
            return None
        block = self.ocp.get("scenario")
        if block is None:
            return default_diff_drive_scenario()
        path = "ocp.scenario"
        _check_keys(block, {"start", "goal", "robot_radius", "cruise_speed",
                            "obstacles", "bounds", "weights", "waypoints"}, path)
        kwargs = {}
        kwargs["start"] = _as_vector(block.get("start", [0.0] * 5), f"{path}.start", 5)
        kwargs["goal"] = _as_vector(block.get("goal", [8.0, 0.0, 0.0]), f"{path}.goal", 3)
        if "robot_radius" in block:
            kwargs["robot_radius"] = float(block["robot_radius"])
        if "cruise_speed" in block:
            kwargs["cruise_speed"] = float(block["cruise_speed"])
        obstacles = block.get("obstacles", [])
        _expect_type(obstacles, list, f"{path}.obstacles", "a list")
        parsed = []
        for j, ob in enumerate(obstacles):
            _expect_type(ob, dict, f"{path}.obstacles[{j}]", "an object")
            for key in ("q_x", "q_y", "r_obs"):
                if key not in ob:
                    _err(f"{path}.obstacles[{j}]", f"missing field '{key}'")
            parsed.append({"q_x": float(ob["q_x"]), "q_y": float(ob["q_y"]),
                           "r_obs": float(ob["r_obs"])})
        kwargs["obstacles"] = parsed
        kwargs["bounds"] = block.get("bounds", {})
        kwargs["weights"] = block.get("weights", {})
        if "waypoints" in block:
            wp = block["waypoints"]
            kwargs["waypoints_t"] = _as_vector(wp.get("t", []), f"{path}.waypoints.t")
            kwargs["waypoints_x"] = _as_matrix(wp.get("states", []), f"{path}.waypoints.states",
                                               rows=kwargs["waypoints_t"].size, cols=5)
        return DiffDriveScenario(**kwargs)

    def build_ocp(self, scenario=None, n_mass=None, t0=0.0):
        N = int(self.ocp.get("N", 20))
        T = float(self.ocp.get("T", 2.0 if self.model == "diff_drive" else 1.0))
        if self.model == "diff_drive":
            scenario = scenario if scenario is not None else self.build_scenario()
            return build_diff_drive_ocp(scenario, N=N, T=T, integrator=self._integrator(T / N),
                                        t0=t0)
        if self.model == "hanging_chain":
            n_mass = n_mass if n_mass is not None else int(self.ocp.get("n_mass", 3))
            return build_hanging_chain_ocp(n_mass, N=N, T=T, integrator=self._integrator(T / N))
        _err("model", f"unknown model '{self.model}'")

    def _integrator(self, interval):
        if self.integrator is None:
            return None
        cfg = self.integrator
        return IntegratorConfig(scheme=cfg.scheme, step_size=interval / cfg.num_steps,
                                newton_iters=cfg.newton_iters,
                                jacobian_reuse=cfg.jacobian_reuse, num_steps=cfg.num_steps)

    def build_zoro(self, spec):
        n_x, n_u = spec.model.n_x, spec.model.n_u
        if self.zoro is None:
            return ZoroConfig.zero(spec)
        block = self.zoro
        W = _as_matrix(block["W"], "zoro.W") if "W" in block else np.zeros((n_x, n_x))
        n_w = W.shape[0]
        if W.shape != (n_w, n_w):
            _err("zoro.W", "must be square")
        P0 = block.get("P0_bar", "W")
        if isinstance(P0, str):
            if P0 != "W":
                _err("zoro.P0_bar", "string shorthand must be 'W'")
            if W.shape != (n_x, n_x):
                _err("zoro.P0_bar", "shorthand 'W' requires W to be n_x x n_x")
            P0 = W.copy()
        else:
            P0 = _as_matrix(P0, "zoro.P0_bar", rows=n_x, cols=n_x)
        K = _as_matrix(block.get("K", np.zeros((n_u, n_x))), "zoro.K", rows=n_u, cols=n_x)
        G = block.get("G", "identity")
        if isinstance(G, str):
            if G != "identity":
                _err("zoro.G", "string shorthand must be 'identity'")
            if n_w != n_x:
                _err("zoro.G", "shorthand 'identity' requires n_w == n_x")
            G = np.eye(n_x)
        else:
            G = _as_matrix(G, "zoro.G", rows=n_x, cols=n_w)
        gamma = float(block.get("gamma", 1.0))
        tighten = block.get("tighten", {})
        _check_keys(tighten, {"initial", "mid", "terminal"}, "zoro.tighten")

        def _idx(name, limit):
            v = tighten.get(name)
            if v is None:
                return None
            _expect_type(v, list, f"zoro.tighten.{name}", "a list of row indices")
            out = []
            for i in v:
                if not isinstance(i, int) or not 0 <= i < limit:
                    _err(f"zoro.tighten.{name}", f"row index {i} out of range 0..{limit - 1}")
                out.append(i)
            return out

        cfg = ZoroConfig(P0_bar=P0, K=K, W=W, G=G, gamma=gamma,
                         tighten_idx_0=_idx("initial", spec.stage_constraints.n_rows),
                         tighten_idx_mid=_idx("mid", spec.stage_constraints.n_rows),
                         tighten_idx_N=_idx("terminal", spec.terminal_constraints.n_rows))
        cfg.validate_against(spec)
        return cfg

    def build_noise(self, spec, seed_override=None):
        n_x = spec.model.n_x
        if self.noise is None:
            cov = np.zeros((n_x, n_x))
            seed = 0
        else:
            cov = _as_matrix(self.noise.get("covariance", np.zeros((n_x, n_x))),
                             "noise.covariance", rows=n_x, cols=n_x)
            seed = int(self.noise.get("seed", 0))
        if seed_override is not None:
            seed = int(seed_override)
        return NoiseConfig(covariance=cov, seed=seed)

    def build_settings(self):
        return self.solver if self.solver is not None else SqpSettings()


def parse_config(doc, path="config"):
    """Validate a parsed JSON document into a RunConfig."""
    _expect_type(doc, dict, path, "an object")
    _check_keys(doc, {"experiment", "model", "ocp", "integrator", "zoro", "noise",
                      "sim", "solver", "scaling", "output"}, path)
    experiment = doc.get("experiment", "solve")
    if experiment not in EXPERIMENTS:
        _err(f"{path}.experiment", f"must be one of {EXPERIMENTS}")
    model = doc.get("model", "diff_drive")
    if model not in MODELS:
        _err(f"{path}.model", f"must be one of {MODELS}")
    ocp = doc.get("ocp", {})
    _expect_type(ocp, dict, f"{path}.ocp", "an object")
    _check_keys(ocp, {"N", "T", "scenario", "n_mass"}, f"{path}.ocp")
    if "N" in ocp and (not isinstance(ocp["N"], int) or ocp["N"] < 1):
        _err(f"{path}.ocp.N", "must be a positive integer")

    integrator = None
    if "integrator" in doc:
        block = _expect_type(doc["integrator"], dict, f"{path}.integrator", "an object")
        _check_keys(block, {"scheme", "newton_iters", "jacobian_reuse", "num_steps"},
                    f"{path}.integrator")
        scheme = block.get("scheme", IRK_GL4)
        if scheme not in (ERK4, IRK_GL4):
            _err(f"{path}.integrator.scheme", f"must be '{ERK4}' or '{IRK_GL4}'")
        try:
            integrator = IntegratorConfig(scheme=scheme, step_size=1.0,
                                          newton_iters=int(block.get("newton_iters", 3)),
                                          jacobian_reuse=bool(block.get("jacobian_reuse", True)),
                                          num_steps=int(block.get("num_steps", 1)))
        except ConfigurationError as exc:
            _err(f"{path}.integrator", str(exc))

    zoro = doc.get("zoro")
    if zoro is not None:
        _expect_type(zoro, dict, f"{path}.zoro", "an object")
        _check_keys(zoro, {"P0_bar", "K", "W", "G", "gamma", "tighten"}, f"{path}.zoro")

    noise = doc.get("noise")
    if noise is not None:
        _expect_type(noise, dict, f"{path}.noise", "an object")
        _check_keys(noise, {"covariance", "seed"}, f"{path}.noise")

    sim = doc.get("sim", {})
    _expect_type(sim, dict, f"{path}.sim", "an object")
    _check_keys(sim, {"controller", "n_steps", "timing_repeats", "plant_num_steps"},
                f"{path}.sim")
    if "controller" in sim and sim["controller"] not in CONTROLLERS:
        _err(f"{path}.sim.controller", f"must be one of {CONTROLLERS}")

    solver = None
    if "solver" in doc:
        block = _expect_type(doc["solver"], dict, f"{path}.solver", "an object")
        allowed = {"max_iter", "tol_stationarity", "tol_equality", "tol_inequality",
                   "tol_complementarity", "levenberg", "qp_tol", "qp_max_iter"}
        _check_keys(block, allowed, f"{path}.solver")
        try:
            solver = SqpSettings(**block)
        except (TypeError, ValueError) as exc:
            _err(f"{path}.solver", str(exc))

    scaling = doc.get("scaling", {})
    _expect_type(scaling, dict, f"{path}.scaling", "an object")
    _check_keys(scaling, {"n_mass", "sqp_iterations", "repeats", "noise_scale"},
                f"{path}.scaling")
    if "n_mass" in scaling:
        _expect_type(scaling["n_mass"], list, f"{path}.scaling.n_mass", "a list of integers")
        for v in scaling["n_mass"]:
            if not isinstance(v, int) or v < 3:
                _err(f"{path}.scaling.n_mass", f"entries must be integers >= 3, got {v}")

    output = doc.get("output", "out")
    _expect_type(output, str, f"{path}.output", "a string")

    return RunConfig(experiment=experiment, model=model, ocp=ocp, integrator=integrator,
                     zoro=zoro, noise=noise, sim=sim, solver=solver, scaling=scaling,
                     output=output)


def load_config(path):
    """Load and validate a JSON config file; errors carry file/line positions."""
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigurationError(f"{path}: cannot read config: {exc}")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path}:{exc.lineno}:{exc.colno}: invalid JSON: {exc.msg}")
    return parse_config(doc, path=str(path))
