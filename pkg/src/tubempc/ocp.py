"""Multiple-shooting OCP container: dimensions, cost, constraints, tightening sets."""

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, ScenarioError
from .integrators import IRK_GL4, IntegratorConfig
from .models import DiffDriveModel, HangingChainModel, Model

COLLISION_GUARD_DIST = 1e-9
COLLISION_GUARD_VALUE = -1e6


@dataclass
class NonlinearRow:
    """One-sided nonlinear constraint row h(x, u) <= 0 with analytic gradient."""

    name: str
    fun: callable
    grad: callable  # returns vector of length n_x + n_u


@dataclass
class ConstraintRow:
    """Normalized row descriptor: value(x, u) <= 0."""

    label: str
    kind: str                 # state_ub, state_lb, ctrl_ub, ctrl_lb, nonlinear
    index: int = -1           # state/control component for box rows
    bound: float = 0.0
    nonlinear: NonlinearRow = None


class ConstraintSet:
    """Box bounds plus nonlinear rows, normalized to stacked one-sided form.

    Row order is fixed: state bounds (upper then lower per listed component),
    control bounds (same), then nonlinear rows.  Upper bounds become
    x_i - ub <= 0, lower bounds lb - x_i <= 0.
    """

    def __init__(self, state_bounds=(), control_bounds=(), nonlinear=()):
        self.state_bounds = [(int(i), float(lo), float(hi)) for i, lo, hi in state_bounds]
        self.control_bounds = [(int(i), float(lo), float(hi)) for i, lo, hi in control_bounds]
        self.nonlinear = list(nonlinear)

    def normalize(self):
        """Canonical copy with infinite bounds dropped; idempotent."""
        state = [(i, lo, hi) for i, lo, hi in self.state_bounds
                 if np.isfinite(lo) or np.isfinite(hi)]
        ctrl = [(i, lo, hi) for i, lo, hi in self.control_bounds
                if np.isfinite(lo) or np.isfinite(hi)]
        return ConstraintSet(state, ctrl, self.nonlinear)

    def rows(self):
        out = []
        for i, lo, hi in self.state_bounds:
            if np.isfinite(hi):
                out.append(ConstraintRow(f"x{i}_ub", "state_ub", i, hi))
            if np.isfinite(lo):
                out.append(ConstraintRow(f"x{i}_lb", "state_lb", i, lo))
        for i, lo, hi in self.control_bounds:
            if np.isfinite(hi):
                out.append(ConstraintRow(f"u{i}_ub", "ctrl_ub", i, hi))
            if np.isfinite(lo):
                out.append(ConstraintRow(f"u{i}_lb", "ctrl_lb", i, lo))
        for row in self.nonlinear:
            out.append(ConstraintRow(row.name, "nonlinear", nonlinear=row))
        return out

    @property
    def n_rows(self):
        return len(self.rows())

    def eval(self, x, u, n_x, n_u):
        """Stacked row values and gradients, shape (m,) and (m, n_x + n_u)."""
        rows = self.rows()
        m = len(rows)
        vals = np.zeros(m)
        grads = np.zeros((m, n_x + n_u))
        for r, row in enumerate(rows):
            if row.kind == "state_ub":
                vals[r] = x[row.index] - row.bound
                grads[r, row.index] = 1.0
            elif row.kind == "state_lb":
                vals[r] = row.bound - x[row.index]
                grads[r, row.index] = -1.0
            elif row.kind == "ctrl_ub":
                vals[r] = u[row.index] - row.bound
                grads[r, n_x + row.index] = 1.0
            elif row.kind == "ctrl_lb":
                vals[r] = row.bound - u[row.index]
                grads[r, n_x + row.index] = -1.0
            else:
                vals[r] = row.nonlinear.fun(x, u)
                grads[r] = row.nonlinear.grad(x, u)
        return vals, grads


def _check_psd(W, what):
    W = np.asarray(W, dtype=float)
    if W.ndim != 2 or W.shape[0] != W.shape[1]:
        raise ConfigurationError(f"{what}: weight must be square")
    if not np.allclose(W, W.T, atol=1e-12):
        raise ConfigurationError(f"{what}: weight must be symmetric")
    if np.min(np.linalg.eigvalsh(W)) < -1e-10:
        raise ConfigurationError(f"{what}: weight must be positive semidefinite")
    return W


class LeastSquaresCost:
    """Linear-least-squares cost on y = Vx x + Vu u against per-node references.

    Stage cost 0.5 ||Vx x_k + Vu u_k - yref_k||^2_W, terminal
    0.5 ||VN x_N - yref_N||^2_WN.  The Gauss-Newton Hessian blocks are
    constant and positive semidefinite by construction.
    """

    def __init__(self, Vx, Vu, W, y_ref, VN, WN, y_ref_N):
        self.Vx = np.asarray(Vx, dtype=float)
        self.Vu = np.asarray(Vu, dtype=float)
        self.W = _check_psd(W, "stage cost")
        self.y_ref = np.asarray(y_ref, dtype=float)
        self.VN = np.asarray(VN, dtype=float)
        self.WN = _check_psd(WN, "terminal cost")
        self.y_ref_N = np.asarray(y_ref_N, dtype=float)
        if self.Vx.shape[0] != self.W.shape[0] or self.Vu.shape[0] != self.W.shape[0]:
            raise ConfigurationError("stage output map and weight dimensions disagree")
        if self.VN.shape[0] != self.WN.shape[0]:
            raise ConfigurationError("terminal output map and weight dimensions disagree")
        # constant Gauss-Newton blocks
        self.Hxx = self.Vx.T @ self.W @ self.Vx
        self.Hxu = self.Vx.T @ self.W @ self.Vu
        self.Huu = self.Vu.T @ self.W @ self.Vu
        self.Hxx_N = self.VN.T @ self.WN @ self.VN

    @property
    def n_y(self):
        return self.W.shape[0]

    def stage_gradient(self, x, u, ref):
        res = self.Vx @ x + self.Vu @ u - ref
        return self.Vx.T @ (self.W @ res), self.Vu.T @ (self.W @ res)

    def terminal_gradient(self, x, ref):
        res = self.VN @ x - ref
        return self.VN.T @ (self.WN @ res)

    def stage_value(self, x, u, ref):
        res = self.Vx @ x + self.Vu @ u - ref
        return 0.5 * float(res @ self.W @ res)

    def terminal_value(self, x, ref):
        res = self.VN @ x - ref
        return 0.5 * float(res @ self.WN @ res)


@dataclass
class OcpSpec:
    """Problem data for the N-interval multiple-shooting OCP.

    ``tighten_idx_*`` list the constraint-row indices (into the normalized row
    order of the node's constraint set) that receive a backoff: node 0,
    intermediate nodes, and the terminal node respectively.
    """

    N: int
    T: float
    model: Model
    integrator: IntegratorConfig
    cost: LeastSquaresCost
    stage_constraints: ConstraintSet
    terminal_constraints: ConstraintSet
    tighten_idx_0: list = field(default_factory=list)
    tighten_idx_mid: list = field(default_factory=list)
    tighten_idx_N: list = field(default_factory=list)
    x0: np.ndarray = None

    def __post_init__(self):
        if self.N < 1:
            raise ConfigurationError("N must be >= 1")
        if self.terminal_constraints.control_bounds:
            raise ConfigurationError("terminal constraint set must not contain control bounds")
        n_stage = self.stage_constraints.n_rows
        n_term = self.terminal_constraints.n_rows
        for name, idx, limit in (("tighten_idx_0", self.tighten_idx_0, n_stage),
                                 ("tighten_idx_mid", self.tighten_idx_mid, n_stage),
                                 ("tighten_idx_N", self.tighten_idx_N, n_term)):
            for i in idx:
                if not 0 <= i < limit:
                    raise ConfigurationError(f"{name}: row index {i} out of range (node has {limit} rows)")
        if self.cost.y_ref.shape != (self.N, self.cost.n_y):
            raise ConfigurationError(
                f"stage reference must have shape ({self.N}, {self.cost.n_y}), got {self.cost.y_ref.shape}")
        if self.x0 is None:
            self.x0 = np.zeros(self.model.n_x)
        self.x0 = np.asarray(self.x0, dtype=float)

    @property
    def dt(self):
        return self.T / self.N

    def constraints_at(self, k):
        return self.terminal_constraints if k == self.N else self.stage_constraints

    def tighten_idx_at(self, k):
        if k == 0:
            return self.tighten_idx_0
        if k == self.N:
            return self.tighten_idx_N
        return self.tighten_idx_mid

    def total_cost(self, xs, us, stage_refs=None, term_ref=None):
        refs = self.cost.y_ref if stage_refs is None else stage_refs
        ref_N = self.cost.y_ref_N if term_ref is None else term_ref
        total = sum(self.cost.stage_value(xs[k], us[k], refs[k]) for k in range(self.N))
        return total + self.cost.terminal_value(xs[self.N], ref_N)


def eval_constraints(spec, k, x, u=None):
    """Stacked constraint values and gradients at node k; u is ignored at k = N."""
    if not 0 <= k <= spec.N:
        raise ConfigurationError(f"node index {k} out of range 0..{spec.N}")
    x = np.asarray(x, dtype=float)
    n_x, n_u = spec.model.n_x, spec.model.n_u
    if u is None or k == spec.N:
        u = np.zeros(n_u)
    u = np.asarray(u, dtype=float)
    return spec.constraints_at(k).eval(x, u, n_x, n_u)


# ---------------------------------------------------------------------------
# Differential drive scenario
# ---------------------------------------------------------------------------

DIFF_DRIVE_DEFAULT_BOUNDS = {
    "v_min": -0.3, "v_max": 1.0,
    "omega_min": -1.5, "omega_max": 1.5,
    "a_max": 2.0, "alpha_max": 2.0,
    "terminal_velocity_tol": 1e-3,
}

DIFF_DRIVE_DEFAULT_WEIGHTS = {
    "position": 5.0, "heading": 0.5, "velocity": 0.2, "angular": 0.2,
    "accel": 0.2, "angular_accel": 0.2,
    "terminal_position": 10.0, "terminal_heading": 1.0,
    "terminal_velocity": 1.0, "terminal_angular": 1.0,
}


@dataclass
class Obstacle:
    q_x: float
    q_y: float
    r_obs: float


@dataclass
class DiffDriveScenario:
    """Obstacle-avoidance scenario: geometry, bounds, weights, reference.

    The default reference is a timed trajectory moving from the start position
    to the goal at ``cruise_speed`` along a straight line (the closed loop has
    to deviate around the obstacles).  A timed waypoint table can be supplied
    instead.
    """

    start: np.ndarray
    goal: np.ndarray                      # (x, y, heading)
    robot_radius: float = 0.2
    obstacles: list = field(default_factory=list)
    bounds: dict = field(default_factory=dict)
    weights: dict = field(default_factory=dict)
    cruise_speed: float = 0.8
    waypoints_t: np.ndarray = None        # optional timed reference
    waypoints_x: np.ndarray = None        # shape (M, 5)

    def __post_init__(self):
        self.start = np.asarray(self.start, dtype=float)
        self.goal = np.asarray(self.goal, dtype=float)
        if self.start.shape != (5,):
            raise ConfigurationError("scenario start must have 5 components")
        if self.goal.shape != (3,):
            raise ConfigurationError("scenario goal must have 3 components (x, y, heading)")
        if self.cruise_speed <= 0.0:
            raise ConfigurationError("cruise_speed must be > 0")
        self.obstacles = [ob if isinstance(ob, Obstacle) else Obstacle(**ob) for ob in self.obstacles]
        self.bounds = {**DIFF_DRIVE_DEFAULT_BOUNDS, **self.bounds}
        self.weights = {**DIFF_DRIVE_DEFAULT_WEIGHTS, **self.weights}
        if self.waypoints_t is not None:
            self.waypoints_t = np.asarray(self.waypoints_t, dtype=float)
            self.waypoints_x = np.asarray(self.waypoints_x, dtype=float)
            if self.waypoints_x.shape != (self.waypoints_t.size, 5):
                raise ConfigurationError("waypoint states must have shape (len(t), 5)")

    def reference_state(self, t):
        """Reference state at absolute time t."""
        if self.waypoints_t is not None:
            return np.array([np.interp(t, self.waypoints_t, self.waypoints_x[:, j])
                             for j in range(5)])
        delta = self.goal[:2] - self.start[:2]
        dist = float(np.hypot(*delta))
        if dist < 1e-12:
            return np.array([self.goal[0], self.goal[1], self.goal[2], 0.0, 0.0])
        t_arrive = dist / self.cruise_speed
        if t >= t_arrive:
            return np.array([self.goal[0], self.goal[1], self.goal[2], 0.0, 0.0])
        direction = delta / dist
        pos = self.start[:2] + direction * self.cruise_speed * max(t, 0.0)
        heading = float(np.arctan2(direction[1], direction[0]))
        return np.array([pos[0], pos[1], heading, self.cruise_speed, 0.0])

    def clearances(self, x):
        """Distance margins to each inflated obstacle at state x (positive = clear)."""
        p = x[:2]
        return np.array([np.hypot(*(p - np.array([ob.q_x, ob.q_y]))) - self.robot_radius - ob.r_obs
                         for ob in self.obstacles])


def _collision_row(scenario, ob, j):
    q = np.array([ob.q_x, ob.q_y])
    r_total = scenario.robot_radius + ob.r_obs

    def fun(x, u, q=q, r_total=r_total):
        d = np.hypot(x[0] - q[0], x[1] - q[1])
        if d < COLLISION_GUARD_DIST:
            return COLLISION_GUARD_VALUE
        return r_total - d

    def grad(x, u, q=q):
        g = np.zeros(7)
        dx, dy = x[0] - q[0], x[1] - q[1]
        d = np.hypot(dx, dy)
        if d < COLLISION_GUARD_DIST:
            return g
        g[0] = -dx / d
        g[1] = -dy / d
        return g

    return NonlinearRow(f"obstacle_{j}", fun, grad)


def build_diff_drive_ocp(scenario, N=20, T=2.0, integrator=None, t0=0.0):
    """OCP for the differential drive scenario.

    Defaults follow the benchmark setup: 20 shooting intervals over 2 s, an
    implicit GL4 integrator with 3 reused-Jacobian Newton iterations, box
    bounds on (v, omega, a, alpha), one collision row per obstacle, and
    tightening of the v/omega bounds (upper v, lower v, upper omega) plus all
    collision rows at the intermediate nodes.  Terminal velocity bounds are
    kept exact (not tightened).
    """
    model = DiffDriveModel()
    for ob in scenario.obstacles:
        d = np.hypot(scenario.start[0] - ob.q_x, scenario.start[1] - ob.q_y)
        if d <= scenario.robot_radius + ob.r_obs:
            raise ScenarioError(
                f"initial state overlaps obstacle at ({ob.q_x}, {ob.q_y}): distance {d:.3f}")
    if integrator is None:
        integrator = IntegratorConfig(scheme=IRK_GL4, step_size=T / N,
                                      newton_iters=3, jacobian_reuse=True, num_steps=1)

    b = scenario.bounds
    stage = ConstraintSet(
        state_bounds=[(3, b["v_min"], b["v_max"]), (4, b["omega_min"], b["omega_max"])],
        control_bounds=[(0, -b["a_max"], b["a_max"]), (1, -b["alpha_max"], b["alpha_max"])],
        nonlinear=[_collision_row(scenario, ob, j) for j, ob in enumerate(scenario.obstacles)],
    )
    vt = b["terminal_velocity_tol"]
    terminal = ConstraintSet(state_bounds=[(3, -vt, vt), (4, -vt, vt)])

    w = scenario.weights
    W = np.diag([w["position"], w["position"], w["heading"], w["velocity"], w["angular"],
                 w["accel"], w["angular_accel"]])
    WN = np.diag([w["terminal_position"], w["terminal_position"], w["terminal_heading"],
                  w["terminal_velocity"], w["terminal_angular"]])
    Vx = np.vstack([np.eye(5), np.zeros((2, 5))])
    Vu = np.vstack([np.zeros((5, 2)), np.eye(2)])
    dt = T / N
    y_ref = np.zeros((N, 7))
    for k in range(N):
        y_ref[k, :5] = scenario.reference_state(t0 + k * dt)
    y_ref_N = scenario.reference_state(t0 + T)
    cost = LeastSquaresCost(Vx, Vu, W, y_ref, np.eye(5), WN, y_ref_N)

    # stage row order: v_ub(0), v_lb(1), omega_ub(2), omega_lb(3),
    # a_ub(4), a_lb(5), alpha_ub(6), alpha_lb(7), collisions(8..)
    n_obs = len(scenario.obstacles)
    tighten_mid = [0, 1, 2] + list(range(8, 8 + n_obs))

    return OcpSpec(N=N, T=T, model=model, integrator=integrator, cost=cost,
                   stage_constraints=stage, terminal_constraints=terminal,
                   tighten_idx_0=[], tighten_idx_mid=tighten_mid, tighten_idx_N=[],
                   x0=scenario.start)


def default_diff_drive_scenario():
    """Three-obstacle slalom used by the benchmark configs."""
    return DiffDriveScenario(
        start=np.zeros(5),
        goal=np.array([8.0, 0.0, 0.0]),
        robot_radius=0.2,
        obstacles=[Obstacle(2.0, 0.3, 0.35),
                   Obstacle(4.0, -0.4, 0.35),
                   Obstacle(6.0, 0.3, 0.35)],
    )


# ---------------------------------------------------------------------------
# Hanging chain (scaling benchmark)
# ---------------------------------------------------------------------------

def build_hanging_chain_ocp(n_mass, N=20, T=1.0, integrator=None, position_limit=10.0):
    """Regulation OCP for the hanging chain, used by the scaling study.

    The chain starts in a straight horizontal configuration and is regulated
    back to it against gravity.  Loose box bounds on the endpoint position
    provide state rows for tightening.
    """
    model = HangingChainModel(n_mass=n_mass)
    if integrator is None:
        integrator = IntegratorConfig(scheme=IRK_GL4, step_size=T / N,
                                      newton_iters=3, jacobian_reuse=True, num_steps=1)
    x_rest = model.resting_state()
    n_x, n_u = model.n_x, model.n_u

    end_off = 3 * (model.n_pos - 1)
    stage = ConstraintSet(
        state_bounds=[(end_off + j, -position_limit, position_limit) for j in range(3)],
        control_bounds=[(j, -1.0, 1.0) for j in range(3)],
    )
    terminal = ConstraintSet()

    W = np.diag(np.concatenate([np.full(3 * model.n_pos, 1.0),
                                np.full(3 * model.n_free, 0.1),
                                np.full(n_u, 0.05)]))
    Vx = np.vstack([np.eye(n_x), np.zeros((n_u, n_x))])
    Vu = np.vstack([np.zeros((n_x, n_u)), np.eye(n_u)])
    y_ref = np.tile(np.concatenate([x_rest, np.zeros(n_u)]), (N, 1))
    cost = LeastSquaresCost(Vx, Vu, W, y_ref, np.eye(n_x), np.diag(np.full(n_x, 1.0)), x_rest)

    # endpoint position rows come first in the stage row order (ub/lb pairs)
    tighten_mid = list(range(6))
    return OcpSpec(N=N, T=T, model=model, integrator=integrator, cost=cost,
                   stage_constraints=stage, terminal_constraints=terminal,
                   tighten_idx_0=[], tighten_idx_mid=tighten_mid, tighten_idx_N=[],
                   x0=x_rest)
