"""Discrete-time steps with sensitivities, built from the continuous models."""

from dataclasses import dataclass

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from .errors import ConfigurationError, IntegrationError

ERK4 = "erk4"
IRK_GL4 = "irk_gl4"

# 2-stage Gauss-Legendre tableau (order 4)
_SQRT3 = np.sqrt(3.0)
_GL_A = np.array([[0.25, 0.25 - _SQRT3 / 6.0],
                  [0.25 + _SQRT3 / 6.0, 0.25]])
_GL_B = np.array([0.5, 0.5])


@dataclass
class IntegratorConfig:
    """One-step integrator settings.

    ``step_size`` is the length of a single step; a shooting interval is
    covered by ``num_steps`` consecutive steps.  ``newton_iters`` and
    ``jacobian_reuse`` only apply to the implicit scheme.
    """

    scheme: str = IRK_GL4
    step_size: float = 0.1
    newton_iters: int = 3
    jacobian_reuse: bool = True
    num_steps: int = 1

    def __post_init__(self):
        if self.scheme not in (ERK4, IRK_GL4):
            raise ConfigurationError(f"unknown integrator scheme '{self.scheme}'")
        if self.step_size <= 0.0:
            raise ConfigurationError("step_size must be > 0")
        if self.newton_iters < 1:
            raise ConfigurationError("newton_iters must be >= 1")
        if self.num_steps < 1:
            raise ConfigurationError("num_steps must be >= 1")


@dataclass
class DiscreteStepResult:
    """Discrete map output: next state plus sensitivities A = dx+/dx, B = dx+/du."""

    x_next: np.ndarray
    A: np.ndarray
    B: np.ndarray
    newton_residual: float = 0.0


def _check_finite(v, what, node=None, stage=None):
    if not np.all(np.isfinite(v)):
        raise IntegrationError(f"non-finite {what}", node=node, stage=stage)


def erk4_step(model, x, u, cfg):
    """Classical explicit RK4 step with sensitivities by forward chain rule.

    Each stage derivative is differentiated through its predecessors, so A and
    B are the exact Jacobians of the discrete map, not finite differences.
    """
    h = cfg.step_size
    n = model.n_x
    I = np.eye(n)

    k1 = model.f(x, u)
    _check_finite(k1, "stage k1")
    J1x, J1u = model.dfdx(x, u), model.dfdu(x, u)
    dk1x, dk1u = J1x, J1u

    x2 = x + 0.5 * h * k1
    k2 = model.f(x2, u)
    _check_finite(k2, "stage k2")
    J2x, J2u = model.dfdx(x2, u), model.dfdu(x2, u)
    dk2x = J2x @ (I + 0.5 * h * dk1x)
    dk2u = J2x @ (0.5 * h * dk1u) + J2u

    x3 = x + 0.5 * h * k2
    k3 = model.f(x3, u)
    _check_finite(k3, "stage k3")
    J3x, J3u = model.dfdx(x3, u), model.dfdu(x3, u)
    dk3x = J3x @ (I + 0.5 * h * dk2x)
    dk3u = J3x @ (0.5 * h * dk2u) + J3u

    x4 = x + h * k3
    k4 = model.f(x4, u)
    _check_finite(k4, "stage k4")
    J4x, J4u = model.dfdx(x4, u), model.dfdu(x4, u)
    dk4x = J4x @ (I + h * dk3x)
    dk4u = J4x @ (h * dk3u) + J4u

    x_next = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    A = I + (h / 6.0) * (dk1x + 2.0 * dk2x + 2.0 * dk3x + dk4x)
    B = (h / 6.0) * (dk1u + 2.0 * dk2u + 2.0 * dk3u + dk4u)
    return DiscreteStepResult(x_next=x_next, A=A, B=B)


def _gl4_stage_matrix(h, J1, J2, n):
    M = np.eye(2 * n)
    M[:n, :n] -= h * _GL_A[0, 0] * J1
    M[:n, n:] -= h * _GL_A[0, 1] * J1
    M[n:, :n] -= h * _GL_A[1, 0] * J2
    M[n:, n:] -= h * _GL_A[1, 1] * J2
    return M


def irk_gl4_step(model, x, u, cfg):
    """Implicit 2-stage Gauss-Legendre step (order 4).

    The stage equations are solved with a fixed number of Newton iterations;
    with ``jacobian_reuse`` the stage-system factorization from the first
    iteration is reused.  Sensitivities come from the implicit function
    theorem applied at the final iterate, with freshly evaluated stage
    Jacobians.
    """
    h = cfg.step_size
    n = model.n_x

    k0 = model.f(x, u)
    _check_finite(k0, "initial stage guess")
    K = np.concatenate([k0, k0])

    lu = None
    for it in range(cfg.newton_iters):
        X1 = x + h * (_GL_A[0, 0] * K[:n] + _GL_A[0, 1] * K[n:])
        X2 = x + h * (_GL_A[1, 0] * K[:n] + _GL_A[1, 1] * K[n:])
        R = K - np.concatenate([model.f(X1, u), model.f(X2, u)])
        _check_finite(R, "stage residual", stage=it)
        if lu is None or not cfg.jacobian_reuse:
            M = _gl4_stage_matrix(h, model.dfdx(X1, u), model.dfdx(X2, u), n)
            try:
                lu = lu_factor(M)
            except np.linalg.LinAlgError as exc:
                raise IntegrationError(f"singular stage Jacobian: {exc}", stage=it)
        K = K - lu_solve(lu, R)
        _check_finite(K, "stage values", stage=it)

    X1 = x + h * (_GL_A[0, 0] * K[:n] + _GL_A[0, 1] * K[n:])
    X2 = x + h * (_GL_A[1, 0] * K[:n] + _GL_A[1, 1] * K[n:])
    R = K - np.concatenate([model.f(X1, u), model.f(X2, u)])
    _check_finite(R, "final stage residual")
    residual = float(np.max(np.abs(R)))

    J1, J2 = model.dfdx(X1, u), model.dfdx(X2, u)
    M = _gl4_stage_matrix(h, J1, J2, n)
    try:
        lu = lu_factor(M)
    except np.linalg.LinAlgError as exc:
        raise IntegrationError(f"singular stage Jacobian in sensitivity pass: {exc}")
    dKdx = lu_solve(lu, np.vstack([J1, J2]))
    dKdu = lu_solve(lu, np.vstack([model.dfdu(X1, u), model.dfdu(X2, u)]))

    x_next = x + h * (_GL_B[0] * K[:n] + _GL_B[1] * K[n:])
    A = np.eye(n) + h * (_GL_B[0] * dKdx[:n] + _GL_B[1] * dKdx[n:])
    B = h * (_GL_B[0] * dKdu[:n] + _GL_B[1] * dKdu[n:])
    return DiscreteStepResult(x_next=x_next, A=A, B=B, newton_residual=residual)


_STEPPERS = {ERK4: erk4_step, IRK_GL4: irk_gl4_step}


def discrete_step(model, x, u, cfg):
    """Composed discrete map over cfg.num_steps sub-steps, with chained sensitivities."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    if x.shape != (model.n_x,) or u.shape != (model.n_u,):
        raise ConfigurationError(
            f"{model.name}: expected shapes ({model.n_x},)/({model.n_u},), "
            f"got {x.shape}/{u.shape}")
    stepper = _STEPPERS[cfg.scheme]
    A = np.eye(model.n_x)
    B = np.zeros((model.n_x, model.n_u))
    residual = 0.0
    for _ in range(cfg.num_steps):
        res = stepper(model, x, u, cfg)
        x = res.x_next
        A = res.A @ A
        B = res.A @ B + res.B
        residual = max(residual, res.newton_residual)
    return DiscreteStepResult(x_next=x, A=A, B=B, newton_residual=residual)
