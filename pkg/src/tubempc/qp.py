"""Dense convex QP solver: primal-dual interior point with Mehrotra correction.

Solves  min 0.5 z'Hz + g'z  s.t.  Cz + d <= 0  for PSD H.  Regularization is
added to the Newton matrix before factorization only; convergence is measured
against the original problem, so the returned KKT residual refers to the
unmodified data.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError

STATUS_OPTIMAL = "optimal"
STATUS_MAX_ITER = "max_iter"
STATUS_INFEASIBLE = "infeasible"


@dataclass
class DenseQp:
    H: np.ndarray
    g: np.ndarray
    C: np.ndarray = None
    d: np.ndarray = None

    def __post_init__(self):
        self.H = np.asarray(self.H, dtype=float)
        self.g = np.asarray(self.g, dtype=float)
        n = self.g.size
        if self.H.shape != (n, n):
            raise ConfigurationError(f"H must be ({n}, {n}), got {self.H.shape}")
        if self.C is None:
            self.C = np.zeros((0, n))
            self.d = np.zeros(0)
        self.C = np.asarray(self.C, dtype=float)
        self.d = np.asarray(self.d, dtype=float)
        if self.C.shape != (self.d.size, n):
            raise ConfigurationError(f"C must be ({self.d.size}, {n}), got {self.C.shape}")

    @property
    def n(self):
        return self.g.size

    @property
    def m(self):
        return self.d.size


@dataclass
class QpSolution:
    z: np.ndarray
    lam: np.ndarray
    status: str
    kkt_residual: float
    iterations: int = 0
    info: dict = field(default_factory=dict)


def _kkt_residual(qp, z, lam):
    r_stat = qp.H @ z + qp.g + (qp.C.T @ lam if qp.m else 0.0)
    res = float(np.max(np.abs(r_stat)))
    if qp.m:
        viol = qp.C @ z + qp.d
        res = max(res, float(np.max(viol, initial=0.0)))
        res = max(res, float(np.max(np.abs(lam * viol))))
    return res


def _chol_solve(L, rhs):
    y = np.linalg.solve(L, rhs)
    return np.linalg.solve(L.T, y)


def _factor(M, reg):
    bump = 0.0
    for _ in range(12):
        try:
            return np.linalg.cholesky(M + bump * np.eye(M.shape[0]))
        except np.linalg.LinAlgError:
            bump = max(10.0 * bump, reg * 10.0)
    raise np.linalg.LinAlgError("Newton matrix could not be factorized")


def _solve_unconstrained(qp, tol, reg):
    n = qp.n
    L = _factor(0.5 * (qp.H + qp.H.T) + reg * np.eye(n), reg)
    z = np.zeros(n)
    # iterative refinement against the unregularized system
    for it in range(20):
        r = -(qp.H @ z + qp.g)
        if np.max(np.abs(r)) <= 1e-12 * max(1.0, np.max(np.abs(qp.g))):
            break
        z = z + _chol_solve(L, r)
    res = _kkt_residual(qp, z, np.zeros(0))
    status = STATUS_OPTIMAL if res <= tol else STATUS_MAX_ITER
    return QpSolution(z=z, lam=np.zeros(0), status=status, kkt_residual=res, iterations=it + 1)


def _max_step(v, dv):
    neg = dv < 0.0
    if not np.any(neg):
        return np.inf
    return float(np.min(-v[neg] / dv[neg]))


def solve_qp(qp, warm_start=None, tol=1e-8, max_iter=200, reg=1e-8):
    """Solve the QP; returns a QpSolution with status optimal/max_iter/infeasible."""
    n, m = qp.n, qp.m
    H = 0.5 * (qp.H + qp.H.T)
    if m == 0:
        return _solve_unconstrained(qp, tol, reg)

    z = np.zeros(n) if warm_start is None else np.asarray(warm_start, dtype=float).copy()
    slack0 = -(qp.C @ z + qp.d)
    s = np.maximum(slack0, 1.0)
    lam = np.ones(m)
    tau = 0.995
    I_reg = reg * np.eye(n)

    best = (np.inf, z.copy(), lam.copy())
    for it in range(1, max_iter + 1):
        viol = qp.C @ z + qp.d
        r_d = H @ z + qp.g + qp.C.T @ lam
        r_p = viol + s
        mu = float(s @ lam) / m

        res = max(float(np.max(np.abs(r_d))),
                  float(np.max(viol, initial=0.0)),
                  float(np.max(np.abs(lam * viol))))
        if res < best[0]:
            best = (res, z.copy(), lam.copy())
        if res <= tol:
            return QpSolution(z=z, lam=np.maximum(lam, 0.0), status=STATUS_OPTIMAL,
                              kkt_residual=res, iterations=it)
        if np.max(np.abs(lam)) > 1e10 and float(np.max(viol, initial=0.0)) > 1e-6:
            return QpSolution(z=best[1], lam=best[2], status=STATUS_INFEASIBLE,
                              kkt_residual=best[0], iterations=it)

        D = np.minimum(lam / s, 1e14)
        try:
            L = _factor(H + I_reg + qp.C.T @ (D[:, None] * qp.C), reg)
        except np.linalg.LinAlgError:
            break

        # affine predictor
        r_c = lam * s
        rhs = -r_d + qp.C.T @ ((r_c - lam * r_p) / s)
        dz_aff = _chol_solve(L, rhs)
        dlam_aff = (-r_c + lam * r_p + lam * (qp.C @ dz_aff)) / s
        ds_aff = -r_p - qp.C @ dz_aff
        alpha_aff = min(1.0, _max_step(s, ds_aff), _max_step(lam, dlam_aff))
        mu_aff = float((s + alpha_aff * ds_aff) @ (lam + alpha_aff * dlam_aff)) / m
        sigma = (max(mu_aff, 0.0) / mu) ** 3 if mu > 0.0 else 0.0

        # corrector
        r_c = lam * s - sigma * mu + dlam_aff * ds_aff
        rhs = -r_d + qp.C.T @ ((r_c - lam * r_p) / s)
        dz = _chol_solve(L, rhs)
        dlam = (-r_c + lam * r_p + lam * (qp.C @ dz)) / s
        ds = -r_p - qp.C @ dz

        alpha_p = min(1.0, tau * _max_step(s, ds))
        alpha_d = min(1.0, tau * _max_step(lam, dlam))
        z = z + alpha_p * dz
        s = s + alpha_p * ds
        lam = lam + alpha_d * dlam

    res = _kkt_residual(qp, z, lam)
    if res < best[0]:
        best = (res, z, lam)
    viol_best = float(np.max(qp.C @ best[1] + qp.d, initial=0.0))
    status = STATUS_INFEASIBLE if (viol_best > 1e-6 and best[0] > 1e2 * tol) else STATUS_MAX_ITER
    return QpSolution(z=best[1], lam=np.maximum(best[2], 0.0), status=status,
                      kkt_residual=best[0], iterations=max_iter)
