"""Zero-order robust update: tube propagation, constraint backoffs, tightened solves.

Between SQP iterations the uncertainty ellipsoids P_0..P_N are propagated
along the current nominal linearization and the tightened constraint rows get
their bounds replaced by (nominal bound - backoff).  The solver itself never
sees the uncertainty matrices; they enter only through the bound updates.
"""

import time
from dataclasses import dataclass
from statistics import NormalDist

import numpy as np

from .errors import ConfigurationError, NumericalError, SolverError
from .sqp import SqpSolver, sqp_solve

_SQRT_CLAMP = 1e-14


@dataclass
class ZoroConfig:
    """Tube parameters: initial uncertainty, tube feedback gain, noise model.

    ``tighten_idx_*`` override the OCP's tightening sets when given; ``None``
    defers to the problem definition.  ``w_hook`` may supply a per-node noise
    shape W_k at update time (unused by the shipped configurations).
    """

    P0_bar: np.ndarray
    K: np.ndarray
    W: np.ndarray
    G: np.ndarray = None
    gamma: float = 1.0
    tighten_idx_0: list = None
    tighten_idx_mid: list = None
    tighten_idx_N: list = None
    w_hook: callable = None

    def __post_init__(self):
        self.P0_bar = _check_sym_psd(np.asarray(self.P0_bar, dtype=float), "P0_bar")
        self.W = _check_sym_psd(np.asarray(self.W, dtype=float), "W")
        self.K = np.asarray(self.K, dtype=float)
        if self.G is None:
            self.G = np.eye(self.W.shape[0])
        self.G = np.asarray(self.G, dtype=float)
        if self.gamma < 0.0:
            raise ConfigurationError("gamma must be >= 0")

    def validate_against(self, spec):
        n_x, n_u = spec.model.n_x, spec.model.n_u
        n_w = self.W.shape[0]
        if self.P0_bar.shape != (n_x, n_x):
            raise ConfigurationError(f"P0_bar must be ({n_x}, {n_x}), got {self.P0_bar.shape}")
        if self.K.shape != (n_u, n_x):
            raise ConfigurationError(f"K must be ({n_u}, {n_x}), got {self.K.shape}")
        if self.G.shape != (n_x, n_w):
            raise ConfigurationError(f"G must be ({n_x}, {n_w}), got {self.G.shape}")

    def tighten_idx_at(self, spec, k):
        if k == 0:
            return self.tighten_idx_0 if self.tighten_idx_0 is not None else spec.tighten_idx_0
        if k == spec.N:
            return self.tighten_idx_N if self.tighten_idx_N is not None else spec.tighten_idx_N
        return self.tighten_idx_mid if self.tighten_idx_mid is not None else spec.tighten_idx_mid

    @classmethod
    def zero(cls, spec, gamma=1.0):
        """No uncertainty: all backoffs vanish and the tightened solve is nominal."""
        n_x, n_u = spec.model.n_x, spec.model.n_u
        return cls(P0_bar=np.zeros((n_x, n_x)), K=np.zeros((n_u, n_x)),
                   W=np.zeros((n_x, n_x)), G=np.eye(n_x), gamma=gamma)


def _check_sym_psd(M, what):
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ConfigurationError(f"{what} must be a square matrix")
    if not np.allclose(M, M.T, atol=1e-10):
        raise ConfigurationError(f"{what} must be symmetric")
    if M.shape[0] and np.min(np.linalg.eigvalsh(0.5 * (M + M.T))) < -1e-10:
        raise ConfigurationError(f"{what} must be positive semidefinite")
    return 0.5 * (M + M.T)


@dataclass
class TubeState:
    """Snapshot of the uncertainty ellipsoids and per-node backoff vectors."""

    P: np.ndarray          # (N+1, n_x, n_x), each symmetric PSD
    beta: list             # per-node vectors, zero outside the tightening sets


def propagate_uncertainty(A, B, K, P, G, W):
    """One step of the tube recursion: (A+BK) P (A+BK)' + G W G', symmetrized."""
    Acl = A + B @ K
    M = Acl @ P @ Acl.T + G @ W @ G.T
    return 0.5 * (M + M.T)


def compute_backoff(grad_h, K, P, gamma):
    """Backoff gamma * sqrt(v' P v) with v the constraint normal projected by [I; K]."""
    n_x = P.shape[0]
    v = grad_h[:n_x] + K.T @ grad_h[n_x:]
    val = float(v @ P @ v)
    if val < -_SQRT_CLAMP:
        raise NumericalError(f"negative quadratic form {val:.3e} in backoff (P not PSD?)")
    return gamma * np.sqrt(max(val, 0.0))


def _node_backoffs(hgrad, idx, K, P, gamma, n_x):
    rows = hgrad[idx]
    V = rows[:, :n_x] + rows[:, n_x:] @ K
    vals = np.einsum("ij,jk,ik->i", V, P, V)
    if np.any(vals < -_SQRT_CLAMP):
        raise NumericalError("negative quadratic form in backoff (P not PSD?)")
    return gamma * np.sqrt(np.maximum(vals, 0.0))


def zoro_update(solver, cfg):
    """Propagate the tube along the cached linearization and replace the backoffs.

    Requires a prepared solver (valid A_k, B_k and constraint-gradient caches).
    Backoffs outside the tightening sets are reset to zero; inside them the
    stored value is replaced, never accumulated, so the update is idempotent
    on an unchanged iterate.
    """
    if not isinstance(solver, SqpSolver):
        raise ConfigurationError("zoro_update expects an SqpSolver")
    if not solver.prepared:
        raise SolverError("zoro_update requires a prepared solver")
    spec = solver.spec
    cfg.validate_against(spec)
    cache = solver.iterate.cache
    N, n_x = spec.N, spec.model.n_x

    P = np.zeros((N + 1, n_x, n_x))
    P[0] = cfg.P0_bar
    for k in range(N):
        W_k = cfg.W if cfg.w_hook is None else cfg.w_hook(solver, k)
        P[k + 1] = propagate_uncertainty(cache["A"][k], cache["B"][k], cfg.K, P[k], cfg.G, W_k)

    beta = []
    for k in range(N + 1):
        b = np.zeros(solver.m_nodes[k])
        idx = list(cfg.tighten_idx_at(spec, k))
        if idx:
            b[idx] = _node_backoffs(cache["hgrad"][k], idx, cfg.K, P[k], cfg.gamma, n_x)
        solver.iterate.beta[k] = b
        beta.append(b.copy())
    return TubeState(P=P, beta=beta)


def zoro_sqp(spec, cfg, guess=None, settings=None, x0_bar=None, record_iterates=False):
    """Tightened SQP: backoffs are refreshed after every preparation.

    Returns (SolveResult, TubeState); the tube state is recomputed at the
    returned iterate so that P and beta are self-consistent with the solution.
    """
    result = sqp_solve(spec, guess=guess, settings=settings,
                       bound_hook=lambda s: zoro_update(s, cfg),
                       x0_bar=x0_bar, record_iterates=record_iterates)
    solver = result.solver
    solver.prepare()
    tube = zoro_update(solver, cfg)
    return result, tube


def zoro_rti_prepare(solver, cfg):
    """Preparation phase of the tightened real-time iteration.

    Linearizes at the (shifted) previous solution, then propagates the tube
    and replaces the backoffs, so the feedback phase only needs the measured
    state.  Returns the TubeState used for the upcoming feedback.
    """
    solver.prepare()
    t0 = time.perf_counter_ns()
    tube = zoro_update(solver, cfg)
    solver.timings["propagation_ns"] = time.perf_counter_ns() - t0
    return tube


def zoro_rti_feedback(solver, x0_bar):
    """Feedback phase: consume the measured state and the tightened bounds."""
    return solver.feedback(x0_bar)


def gamma_from_probability(p, method="normal"):
    """Backoff factor for a target per-constraint satisfaction probability."""
    if not 0.0 < p < 1.0:
        raise ConfigurationError(f"probability must be in (0, 1), got {p}")
    if method == "normal":
        return NormalDist().inv_cdf(p)
    if method == "chebyshev":
        return 1.0 / np.sqrt(1.0 - p)
    raise ConfigurationError(f"unknown method '{method}' (expected normal or chebyshev)")


# per-step process noise covariance of the diff-drive benchmark
DIFF_DRIVE_NOISE_DIAG = (2e-6, 2e-6, 4e-6, 1.5e-3, 7e-3)


def default_diff_drive_zoro(gamma=3.0, k_v=5.0, k_omega=5.0):
    """Tube configuration for the diff-drive benchmark: P0 = W, gamma = 3.

    The constant tube feedback damps the velocity states (a = -k_v dv,
    alpha = -k_omega domega), standing in for the replanning feedback of the
    receding-horizon loop; without it the velocity tubes grow linearly and the
    tightened lower velocity bound collides with the terminal rest constraint.
    """
    W = np.diag(DIFF_DRIVE_NOISE_DIAG)
    K = np.zeros((2, 5))
    K[0, 3] = -k_v
    K[1, 4] = -k_omega
    return ZoroConfig(P0_bar=W.copy(), K=K, W=W, G=np.eye(5), gamma=gamma)
