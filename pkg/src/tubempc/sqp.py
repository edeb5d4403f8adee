"""Gauss-Newton SQP over the nominal OCP: full condensing, prepare/feedback split.

The preparation phase linearizes dynamics, constraints and cost at the current
iterate and condenses everything that does not depend on the measured initial
state.  The feedback phase injects the measured state (and the current
constraint backoffs), solves the condensed QP and applies the full step.
A bound hook running between the two phases can retighten constraint bounds,
which is how the robust update plugs in.
"""

import time
from dataclasses import dataclass, field

import numpy as np

from .errors import SolverError
from .integrators import discrete_step
from .qp import STATUS_INFEASIBLE, STATUS_OPTIMAL, DenseQp, solve_qp

STATUS_CONVERGED = "converged"
STATUS_MAX_ITER = "max_iter"
STATUS_QP_INFEASIBLE = "qp_infeasible"
STATUS_TIGHTENED_INFEASIBLE = "tightened_infeasible"
STATUS_QP_FAILURE = "qp_failure"

_ZERO_ROW_TOL = 1e-12


@dataclass
class SqpSettings:
    max_iter: int = 50
    tol_stationarity: float = 1e-6
    tol_equality: float = 1e-8
    tol_inequality: float = 1e-8
    tol_complementarity: float = 1e-6
    levenberg: float = 0.0
    qp_tol: float = 1e-8
    qp_max_iter: int = 200

    def __post_init__(self):
        for name in ("tol_stationarity", "tol_equality", "tol_inequality", "tol_complementarity"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"{name} must be > 0")
        if self.levenberg < 0.0:
            raise ValueError("levenberg must be >= 0")


@dataclass
class Iterate:
    """Nominal trajectories plus the per-node linearization cache and backoffs."""

    xs: np.ndarray                      # (N+1, n_x)
    us: np.ndarray                      # (N, n_u)
    beta: list = None                   # per-node backoff vectors
    lam: list = None                    # per-node inequality multipliers
    cache: dict = field(default_factory=dict)

    def copy(self):
        return Iterate(xs=self.xs.copy(), us=self.us.copy(),
                       beta=[b.copy() for b in self.beta] if self.beta else None,
                       lam=[l.copy() for l in self.lam] if self.lam else None,
                       cache=dict(self.cache))


def constant_guess(spec, x0=None):
    """Iterate with every shooting node at x0 and zero controls."""
    x0 = spec.x0 if x0 is None else np.asarray(x0, dtype=float)
    xs = np.tile(x0, (spec.N + 1, 1))
    us = np.zeros((spec.N, spec.model.n_u))
    return Iterate(xs=xs, us=us)


def rollout_guess(spec, x0=None, us=None):
    """Dynamically consistent iterate: forward simulation under the given controls."""
    x0 = spec.x0 if x0 is None else np.asarray(x0, dtype=float)
    us = np.zeros((spec.N, spec.model.n_u)) if us is None else np.asarray(us, dtype=float)
    xs = np.zeros((spec.N + 1, spec.model.n_x))
    xs[0] = x0
    for k in range(spec.N):
        xs[k + 1] = discrete_step(spec.model, xs[k], us[k], spec.integrator).x_next
    return Iterate(xs=xs, us=us.copy())


@dataclass
class StepResult:
    applied: bool
    u0: np.ndarray = None
    step_norm: float = np.inf
    dxs: np.ndarray = None
    dus: np.ndarray = None
    qp_status: str = ""
    qp_residual: float = np.inf
    qp_iterations: int = 0
    ineq_res: float = np.inf            # max over enforceable rows of h + beta (pre-step)


@dataclass
class SolveResult:
    iterate: Iterate
    status: str
    iterations: int
    history: list = field(default_factory=list)
    recorded: list = field(default_factory=list)
    timings: list = field(default_factory=list)


class SqpSolver:
    """One solver instance drives one control loop; not internally thread-safe."""

    def __init__(self, spec, settings=None):
        self.spec = spec
        self.settings = settings if settings is not None else SqpSettings()
        self.n_x = spec.model.n_x
        self.n_u = spec.model.n_u
        self.N = spec.N
        self.m_nodes = [spec.constraints_at(k).n_rows for k in range(self.N + 1)]
        self.row_offsets = np.concatenate([[0], np.cumsum(self.m_nodes)]).astype(int)
        self.m_total = int(self.row_offsets[-1])
        self.iterate = constant_guess(spec)
        self.iterate.beta = [np.zeros(m) for m in self.m_nodes]
        self.iterate.lam = [np.zeros(m) for m in self.m_nodes]
        self.stage_refs = spec.cost.y_ref.copy()
        self.term_ref = spec.cost.y_ref_N.copy()
        self._prepared = False
        self._ws = {}
        self.timings = {"prepare_ns": 0, "condense_ns": 0, "propagation_ns": 0,
                        "feedback_ns": 0, "qp_ns": 0}

    # -- iterate management -------------------------------------------------

    def set_iterate(self, xs, us):
        xs = np.asarray(xs, dtype=float)
        us = np.asarray(us, dtype=float)
        if xs.shape != (self.N + 1, self.n_x) or us.shape != (self.N, self.n_u):
            raise SolverError(f"iterate shapes must be ({self.N + 1}, {self.n_x}) and ({self.N}, {self.n_u})")
        self.iterate.xs = xs.copy()
        self.iterate.us = us.copy()
        self._prepared = False

    def set_references(self, stage_refs, term_ref):
        stage_refs = np.asarray(stage_refs, dtype=float)
        term_ref = np.asarray(term_ref, dtype=float)
        if stage_refs.shape != self.stage_refs.shape or term_ref.shape != self.term_ref.shape:
            raise SolverError("reference shapes do not match the cost definition")
        self.stage_refs = stage_refs.copy()
        self.term_ref = term_ref.copy()
        self._prepared = False

    def shift_warm_start(self):
        """Shift-by-one initialization with last-node duplication."""
        self.iterate.xs[:-1] = self.iterate.xs[1:]
        self.iterate.us[:-1] = self.iterate.us[1:]
        self._prepared = False

    def eval_cost(self, xs=None, us=None):
        xs = self.iterate.xs if xs is None else xs
        us = self.iterate.us if us is None else us
        return self.spec.total_cost(xs, us, self.stage_refs, self.term_ref)

    # -- preparation phase ---------------------------------------------------

    def prepare(self):
        """Linearize at the current iterate and condense the state-independent parts."""
        t0 = time.perf_counter_ns()
        spec, it = self.spec, self.iterate
        N, n_x, n_u = self.N, self.n_x, self.n_u
        cost = spec.cost

        A = np.zeros((N, n_x, n_x))
        B = np.zeros((N, n_x, n_u))
        x_next = np.zeros((N, n_x))
        defects = np.zeros((N, n_x))
        for k in range(N):
            try:
                res = discrete_step(spec.model, it.xs[k], it.us[k], spec.integrator)
            except Exception as exc:
                exc.node = k if hasattr(exc, "node") else None
                raise
            A[k], B[k], x_next[k] = res.A, res.B, res.x_next
            defects[k] = res.x_next - it.xs[k + 1]

        h = []
        hgrad = []
        for k in range(N + 1):
            u_k = it.us[k] if k < N else None
            vals, grads = spec.constraints_at(k).eval(
                it.xs[k], u_k if u_k is not None else np.zeros(n_u), n_x, n_u)
            h.append(vals)
            hgrad.append(grads)

        gx = np.zeros((N + 1, n_x))
        gu = np.zeros((N, n_u))
        for k in range(N):
            gx[k], gu[k] = cost.stage_gradient(it.xs[k], it.us[k], self.stage_refs[k])
        gx[N] = cost.terminal_gradient(it.xs[N], self.term_ref)

        it.cache = {"A": A, "B": B, "x_next": x_next, "defects": defects,
                    "h": h, "hgrad": hgrad, "gx": gx, "gu": gu}

        tc = time.perf_counter_ns()
        self._condense(A, B, defects, h, hgrad, gx, gu)
        now = time.perf_counter_ns()
        self.timings["condense_ns"] = now - tc
        self.timings["prepare_ns"] = now - t0
        self._prepared = True

    def _condense(self, A, B, defects, h, hgrad, gx, gu):
        N, n_x, n_u = self.N, self.n_x, self.n_u
        cost = self.spec.cost
        n_w = N * n_u

        Eb = np.zeros((N + 1, n_x, n_x))
        e = np.zeros((N + 1, n_x))
        M = np.zeros(((N + 1) * n_x, n_w))
        Eb[0] = np.eye(n_x)
        for k in range(N):
            rows_k = slice(k * n_x, (k + 1) * n_x)
            rows_n = slice((k + 1) * n_x, (k + 2) * n_x)
            M[rows_n] = A[k] @ M[rows_k]
            M[rows_n, k * n_u:(k + 1) * n_u] += B[k]
            Eb[k + 1] = A[k] @ Eb[k]
            e[k + 1] = A[k] @ e[k] + defects[k]

        H = np.zeros((n_w, n_w))
        g0 = np.zeros(n_w)
        Gp = np.zeros((n_w, n_x))
        for k in range(N + 1):
            Mk = M[k * n_x:(k + 1) * n_x]
            Hxx = cost.Hxx if k < N else cost.Hxx_N
            H += Mk.T @ Hxx @ Mk
            g0 += Mk.T @ (Hxx @ e[k] + gx[k])
            Gp += Mk.T @ Hxx @ Eb[k]
            if k < N:
                uk = slice(k * n_u, (k + 1) * n_u)
                cross = Mk.T @ cost.Hxu
                H[:, uk] += cross
                H[uk, :] += cross.T
                H[uk, uk] += cost.Huu
                g0[uk] += cost.Hxu.T @ e[k] + gu[k]
                Gp[uk] += cost.Hxu.T @ Eb[k]
        if self.settings.levenberg > 0.0:
            H += self.settings.levenberg * np.eye(n_w)

        C = np.zeros((self.m_total, n_w))
        d0 = np.zeros(self.m_total)
        Dp = np.zeros((self.m_total, n_x))
        h_all = np.zeros(self.m_total)
        for k in range(N + 1):
            rows = slice(self.row_offsets[k], self.row_offsets[k + 1])
            if self.m_nodes[k] == 0:
                continue
            Gx = hgrad[k][:, :n_x]
            C[rows] = Gx @ M[k * n_x:(k + 1) * n_x]
            if k < N:
                C[rows, k * n_u:(k + 1) * n_u] += hgrad[k][:, n_x:]
            d0[rows] = Gx @ e[k] + h[k]
            Dp[rows] = Gx @ Eb[k]
            h_all[rows] = h[k]

        # constant rows (no dependence on the control increments) cannot be
        # enforced by the QP; they are monitored but dropped from the subproblem
        kept = np.max(np.abs(C), axis=1) > _ZERO_ROW_TOL if self.m_total else np.zeros(0, bool)

        self._ws = {"M": M, "E": Eb, "e": e, "H": H, "g0": g0, "Gp": Gp,
                    "C": C, "d0": d0, "Dp": Dp, "h_all": h_all, "kept": kept,
                    "defect_max": float(np.max(np.abs(defects))) if N else 0.0}

    def condense(self, x0_bar=None, include_backoffs=True):
        """Condensed QP at the given measured state (defaults to the iterate's x_0)."""
        if not self._prepared:
            raise SolverError("prepare() must run before condense()")
        ws = self._ws
        p = (np.asarray(x0_bar, dtype=float) - self.iterate.xs[0]) if x0_bar is not None \
            else np.zeros(self.n_x)
        g = ws["g0"] + ws["Gp"] @ p
        d = ws["d0"] + ws["Dp"] @ p
        if include_backoffs:
            d = d + self._beta_all()
        kept = ws["kept"]
        return DenseQp(H=ws["H"].copy(), g=g, C=ws["C"][kept].copy(), d=d[kept])

    def _beta_all(self):
        out = np.zeros(self.m_total)
        for k in range(self.N + 1):
            out[self.row_offsets[k]:self.row_offsets[k + 1]] = self.iterate.beta[k]
        return out

    # -- feedback phase ------------------------------------------------------

    def feedback(self, x0_bar):
        """Complete the measured-state pieces, solve the QP, apply the full step."""
        if not self._prepared:
            raise SolverError("prepare() must run before feedback()")
        t0 = time.perf_counter_ns()
        ws = self._ws
        N, n_x, n_u = self.N, self.n_x, self.n_u
        x0_bar = np.asarray(x0_bar, dtype=float)
        p = x0_bar - self.iterate.xs[0]

        beta_all = self._beta_all()
        g = ws["g0"] + ws["Gp"] @ p
        d = ws["d0"] + beta_all + ws["Dp"] @ p
        kept = ws["kept"]
        ineq_res = float(np.max(ws["h_all"][kept] + beta_all[kept], initial=0.0)) \
            if self.m_total else 0.0

        qp = DenseQp(H=ws["H"], g=g, C=ws["C"][kept], d=d[kept])
        tq = time.perf_counter_ns()
        sol = solve_qp(qp, tol=self.settings.qp_tol, max_iter=self.settings.qp_max_iter)
        self.timings["qp_ns"] = time.perf_counter_ns() - tq

        if sol.status != STATUS_OPTIMAL and not (sol.status != STATUS_INFEASIBLE
                                                 and sol.kkt_residual <= 1e2 * self.settings.qp_tol):
            self.timings["feedback_ns"] = time.perf_counter_ns() - t0
            return StepResult(applied=False, qp_status=sol.status,
                              qp_residual=sol.kkt_residual, qp_iterations=sol.iterations,
                              ineq_res=ineq_res)

        dus = sol.z.reshape(N, n_u)
        dxs = (ws["E"] @ p + ws["e"] + (ws["M"] @ sol.z).reshape(N + 1, n_x))
        self.iterate.xs += dxs
        self.iterate.us += dus
        lam_full = np.zeros(self.m_total)
        lam_full[kept] = sol.lam
        self.iterate.lam = [lam_full[self.row_offsets[k]:self.row_offsets[k + 1]].copy()
                            for k in range(N + 1)]
        self._prepared = False

        step_norm = max(float(np.max(np.abs(dxs))), float(np.max(np.abs(dus))) if N else 0.0)
        self.timings["feedback_ns"] = time.perf_counter_ns() - t0
        return StepResult(applied=True, u0=self.iterate.us[0].copy(), step_norm=step_norm,
                          dxs=dxs, dus=dus, qp_status=sol.status,
                          qp_residual=sol.kkt_residual, qp_iterations=sol.iterations,
                          ineq_res=ineq_res)

    @property
    def prepared(self):
        return self._prepared

    @property
    def defect_max(self):
        if not self._ws:
            raise SolverError("prepare() has not run")
        return self._ws["defect_max"]


def sqp_solve(spec, guess=None, settings=None, bound_hook=None, x0_bar=None,
              record_iterates=False):
    """Iterate prepare/hook/feedback until the KKT tolerances are met.

    The bound hook (if any) runs after each preparation and before each
    feedback, which is where backoff updates are applied.  Returns a
    SolveResult whose iteration count equals the number of QP solves.
    """
    settings = settings if settings is not None else SqpSettings()
    solver = SqpSolver(spec, settings)
    if guess is not None:
        solver.set_iterate(guess.xs, guess.us)
    if x0_bar is None:
        x0_bar = solver.iterate.xs[0].copy()
    x0_bar = np.asarray(x0_bar, dtype=float)

    status = STATUS_MAX_ITER
    history = []
    recorded = []
    timings = []
    iterations = 0
    for _ in range(settings.max_iter):
        solver.prepare()
        if bound_hook is not None:
            tp = time.perf_counter_ns()
            bound_hook(solver)
            solver.timings["propagation_ns"] = time.perf_counter_ns() - tp
        else:
            solver.timings["propagation_ns"] = 0
        eq_res = max(solver.defect_max, float(np.max(np.abs(x0_bar - solver.iterate.xs[0]))))
        res = solver.feedback(x0_bar)
        iterations += 1
        timings.append(dict(solver.timings))
        if not res.applied:
            tightened = any(np.any(b > 0.0) for b in solver.iterate.beta)
            if res.qp_status == STATUS_INFEASIBLE:
                status = STATUS_TIGHTENED_INFEASIBLE if tightened else STATUS_QP_INFEASIBLE
            else:
                status = STATUS_QP_FAILURE
            break
        history.append({"step_norm": res.step_norm, "eq_res": eq_res,
                        "ineq_res": res.ineq_res, "qp_residual": res.qp_residual,
                        "qp_iterations": res.qp_iterations})
        if record_iterates:
            recorded.append((solver.iterate.xs.copy(), solver.iterate.us.copy()))
        if (res.step_norm <= settings.tol_stationarity and eq_res <= settings.tol_equality
                and res.ineq_res <= settings.tol_inequality + res.step_norm):
            status = STATUS_CONVERGED
            break
    result = SolveResult(iterate=solver.iterate, status=status, iterations=iterations,
                         history=history, recorded=recorded, timings=timings)
    result.solver = solver
    return result
