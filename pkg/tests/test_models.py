import numpy as np
import pytest

from tubempc.errors import ConfigurationError
from tubempc.models import (DiffDriveModel, HangingChainModel, LtiModel,
                            eval_dynamics, eval_jacobians, get_model)


def finite_diff_jacobians(model, x, u, eps=1e-6):
    """Central-difference oracle for dfdx, dfdu."""
    n_x, n_u = model.n_x, model.n_u
    Jx = np.zeros((n_x, n_x))
    Ju = np.zeros((n_x, n_u))
    for j in range(n_x):
        dx = np.zeros(n_x)
        dx[j] = eps
        Jx[:, j] = (model.f(x + dx, u) - model.f(x - dx, u)) / (2 * eps)
    for j in range(n_u):
        du = np.zeros(n_u)
        du[j] = eps
        Ju[:, j] = (model.f(x, u + du) - model.f(x, u - du)) / (2 * eps)
    return Jx, Ju


def test_diff_drive_rhs_cases():
    m = DiffDriveModel()
    assert np.allclose(eval_dynamics(m, np.array([0, 0, 0, 1, 0.0]), np.zeros(2)),
                       [1, 0, 0, 0, 0])
    # heading pi/2 turns the velocity into the y direction
    out = eval_dynamics(m, np.array([0, 0, np.pi / 2, 2, 0.0]), np.zeros(2))
    assert np.allclose(out, [0, 2, 0, 0, 0], atol=1e-15)
    assert np.allclose(eval_dynamics(m, np.zeros(5), np.array([1.0, 2.0])),
                       [0, 0, 0, 1, 2])


def test_diff_drive_rhs_symbolic_identity():
    m = DiffDriveModel()
    rng = np.random.default_rng(0)
    for _ in range(20):
        x = rng.normal(size=5)
        u = rng.normal(size=2)
        expected = np.array([x[3] * np.cos(x[2]), x[3] * np.sin(x[2]), x[4], u[0], u[1]])
        assert np.array_equal(m.f(x, u), expected)


def test_diff_drive_jacobian_rows():
    m = DiffDriveModel()
    x = np.array([0.3, -0.2, 0.0, 1.0, 0.1])
    Jx, Ju = eval_jacobians(m, x, np.zeros(2))
    assert Jx[0, 2] == -1.0 * np.sin(0.0)
    assert Jx[0, 3] == np.cos(0.0)
    expected_Ju = np.zeros((5, 2))
    expected_Ju[3, 0] = 1.0
    expected_Ju[4, 1] = 1.0
    assert np.array_equal(Ju, expected_Ju)


def test_dimension_mismatch_raises():
    m = DiffDriveModel()
    with pytest.raises(ConfigurationError):
        eval_dynamics(m, np.zeros(4), np.zeros(2))
    with pytest.raises(ConfigurationError):
        eval_jacobians(m, np.zeros(5), np.zeros(3))


def registered_models():
    return [
        DiffDriveModel(),
        HangingChainModel(n_mass=3),
        HangingChainModel(n_mass=4),
        get_model("lti"),
    ]


@pytest.mark.parametrize("model", registered_models(), ids=lambda m: m.name)
def test_jacobians_match_finite_differences(model):
    rng = np.random.default_rng(42)
    for _ in range(100):
        x = rng.uniform(-1.0, 1.0, size=model.n_x)
        if isinstance(model, HangingChainModel):
            # keep mass positions separated: spread them along x
            x = model.resting_state() + 0.05 * rng.normal(size=model.n_x)
        u = rng.uniform(-1.0, 1.0, size=model.n_u)
        Jx, Ju = eval_jacobians(model, x, u)
        Jx_fd, Ju_fd = finite_diff_jacobians(model, x, u)
        scale = max(1.0, np.max(np.abs(Jx_fd)))
        assert np.max(np.abs(Jx - Jx_fd)) / scale <= 1e-6
        scale_u = max(1.0, np.max(np.abs(Ju_fd)))
        assert np.max(np.abs(Ju - Ju_fd)) / scale_u <= 1e-6


def test_chain_dimension_grows_affinely():
    sizes = {n: HangingChainModel(n_mass=n).n_x for n in (3, 4, 5, 6)}
    assert sizes == {3: 9, 4: 15, 5: 21, 6: 27}
    diffs = np.diff(sorted(sizes.values()))
    assert np.all(diffs == 6)


def test_get_model_unknown_name():
    with pytest.raises(ConfigurationError):
        get_model("does_not_exist")
