"""Continuous-time dynamics models with analytic Jacobians."""

import numpy as np

from .errors import ConfigurationError

GRAVITY = 9.81


class Model:
    """Base class for continuous-time systems xdot = f(x, u).

    Subclasses provide the right-hand side ``f`` together with the analytic
    Jacobians ``dfdx`` (n_x, n_x) and ``dfdu`` (n_x, n_u).  Instances are
    immutable after construction and safe to share.
    """

    n_x = 0
    n_u = 0
    name = "model"

    def f(self, x, u):
        raise NotImplementedError

    def dfdx(self, x, u):
        raise NotImplementedError

    def dfdu(self, x, u):
        raise NotImplementedError


class DiffDriveModel(Model):
    """Differential drive robot.

    State (p_x, p_y, theta, v, omega): 2D position [m], heading [rad],
    forward velocity [m/s], angular rate [rad/s].  Controls (a, alpha) are the
    forward and angular accelerations.  The right-hand side is

        (v cos theta, v sin theta, omega, a, alpha)
    """

    n_x = 5
    n_u = 2
    name = "diff_drive"

    def f(self, x, u):
        theta, v, omega = x[2], x[3], x[4]
        return np.array([v * np.cos(theta), v * np.sin(theta), omega, u[0], u[1]])

    def dfdx(self, x, u):
        theta, v = x[2], x[3]
        J = np.zeros((5, 5))
        J[0, 2] = -v * np.sin(theta)
        J[0, 3] = np.cos(theta)
        J[1, 2] = v * np.cos(theta)
        J[1, 3] = np.sin(theta)
        J[2, 4] = 1.0
        return J

    def dfdu(self, x, u):
        J = np.zeros((5, 2))
        J[3, 0] = 1.0
        J[4, 1] = 1.0
        return J


class LtiModel(Model):
    """Linear time-invariant system xdot = A x + B u (test model)."""

    name = "lti"

    def __init__(self, A, B, name="lti"):
        A = np.asarray(A, dtype=float)
        B = np.asarray(B, dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ConfigurationError("LtiModel: A must be square")
        if B.ndim != 2 or B.shape[0] != A.shape[0]:
            raise ConfigurationError("LtiModel: B must have the same row count as A")
        self.A = A
        self.B = B
        self.n_x = A.shape[0]
        self.n_u = B.shape[1]
        self.name = name

    def f(self, x, u):
        return self.A @ x + self.B @ u

    def dfdx(self, x, u):
        return self.A.copy()

    def dfdu(self, x, u):
        return self.B.copy()


class HangingChainModel(Model):
    """Chain of point masses in 3D connected by linear springs.

    The first mass is anchored at the origin; the last mass is the actuated
    endpoint whose velocity is the control.  Intermediate masses obey Newton
    dynamics under gravity and spring forces.  State layout:

        [p_1, ..., p_{n_mass-1},  v_1, ..., v_{n_mass-2}]

    where p_i are the 3D positions of the non-anchored masses (the last one
    being the endpoint) and v_i the velocities of the free masses.  Hence
    n_x = 6*n_mass - 9 and n_u = 3.

    Default parameters (mass 0.033 kg, spring constant 33 N/m, rest length
    0.033 m) are implementation defaults for the scaling benchmark.
    """

    n_u = 3

    def __init__(self, n_mass=3, mass=0.033, spring_constant=33.0, rest_length=0.033):
        if n_mass < 3:
            raise ConfigurationError("HangingChainModel: n_mass must be >= 3")
        self.n_mass = n_mass
        self.mass = mass
        self.spring_constant = spring_constant
        self.rest_length = rest_length
        self.n_free = n_mass - 2          # masses with Newton dynamics
        self.n_pos = n_mass - 1           # tracked positions (free + endpoint)
        self.n_x = 3 * (self.n_pos + self.n_free)
        self.name = f"hanging_chain_{n_mass}"

    def _positions(self, x):
        # anchored mass prepended, so springs can be indexed uniformly
        p = np.zeros((self.n_mass, 3))
        p[1:] = x[: 3 * self.n_pos].reshape(self.n_pos, 3)
        return p

    def _spring_force(self, d):
        # force exerted along d = p_far - p_near on the near mass
        r = np.linalg.norm(d)
        return self.spring_constant * (1.0 - self.rest_length / r) * d

    def _spring_jacobian(self, d):
        r = np.linalg.norm(d)
        k, L = self.spring_constant, self.rest_length
        return k * ((1.0 - L / r) * np.eye(3) + L * np.outer(d, d) / r**3)

    def f(self, x, u):
        p = self._positions(x)
        vel = x[3 * self.n_pos:].reshape(self.n_free, 3)
        xdot = np.zeros(self.n_x)
        xdot[: 3 * self.n_free] = vel.ravel()
        xdot[3 * (self.n_pos - 1): 3 * self.n_pos] = u
        grav = np.array([0.0, 0.0, -GRAVITY])
        for i in range(1, self.n_mass - 1):
            force = self._spring_force(p[i + 1] - p[i]) - self._spring_force(p[i] - p[i - 1])
            acc = force / self.mass + grav
            off = 3 * (self.n_pos + i - 1)
            xdot[off: off + 3] = acc
        return xdot

    def dfdx(self, x, u):
        p = self._positions(x)
        J = np.zeros((self.n_x, self.n_x))
        for i in range(self.n_free):
            J[3 * i: 3 * i + 3, 3 * (self.n_pos + i): 3 * (self.n_pos + i) + 3] = np.eye(3)
        for i in range(1, self.n_mass - 1):
            D_next = self._spring_jacobian(p[i + 1] - p[i])
            D_prev = self._spring_jacobian(p[i] - p[i - 1])
            row = 3 * (self.n_pos + i - 1)
            J[row: row + 3, 3 * i: 3 * i + 3] = D_next / self.mass
            J[row: row + 3, 3 * (i - 1): 3 * i] -= (D_next + D_prev) / self.mass
            if i - 2 >= 0:
                J[row: row + 3, 3 * (i - 2): 3 * (i - 2) + 3] += D_prev / self.mass
        return J

    def dfdu(self, x, u):
        J = np.zeros((self.n_x, 3))
        J[3 * (self.n_pos - 1): 3 * self.n_pos] = np.eye(3)
        return J

    def resting_state(self, spacing=0.1):
        """Straight horizontal configuration with zero velocities."""
        x = np.zeros(self.n_x)
        for i in range(self.n_pos):
            x[3 * i] = spacing * (i + 1)
        return x


def eval_dynamics(model, x, u):
    """Evaluate f(x, u) after checking dimensions."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    if x.shape != (model.n_x,):
        raise ConfigurationError(f"{model.name}: expected state of length {model.n_x}, got {x.shape}")
    if u.shape != (model.n_u,):
        raise ConfigurationError(f"{model.name}: expected control of length {model.n_u}, got {u.shape}")
    return model.f(x, u)


def eval_jacobians(model, x, u):
    """Evaluate (dfdx, dfdu) after checking dimensions."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    if x.shape != (model.n_x,):
        raise ConfigurationError(f"{model.name}: expected state of length {model.n_x}, got {x.shape}")
    if u.shape != (model.n_u,):
        raise ConfigurationError(f"{model.name}: expected control of length {model.n_u}, got {u.shape}")
    return model.dfdx(x, u), model.dfdu(x, u)


_DEFAULT_LTI_A = np.array([[0.0, 1.0], [-1.0, -0.5]])
_DEFAULT_LTI_B = np.array([[0.0], [1.0]])


def get_model(name, **params):
    """Instantiate a model by its registry name: diff_drive, hanging_chain, lti."""
    if name == "diff_drive":
        return DiffDriveModel()
    if name == "hanging_chain":
        return HangingChainModel(**params)
    if name == "lti":
        if "A" in params or "B" in params:
            return LtiModel(params["A"], params["B"])
        return LtiModel(_DEFAULT_LTI_A, _DEFAULT_LTI_B)
    raise ConfigurationError(f"unknown model '{name}'")
