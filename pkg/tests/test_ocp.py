import numpy as np
import pytest

from tubempc.errors import ConfigurationError, ScenarioError
from tubempc.ocp import (ConstraintSet, DiffDriveScenario, Obstacle,
                         build_diff_drive_ocp, default_diff_drive_scenario,
                         eval_constraints)


def test_upper_bound_row():
    cs = ConstraintSet(state_bounds=[(0, -np.inf, 5.0)])
    vals, grads = cs.eval(np.array([3.0, 0.0]), np.zeros(1), 2, 1)
    assert vals[0] == -2.0
    assert np.array_equal(grads[0], [1.0, 0.0, 0.0])


def test_row_order_and_labels():
    cs = ConstraintSet(state_bounds=[(3, -0.1, 1.0), (4, -1.0, 1.0)],
                       control_bounds=[(0, -1.0, 1.0)])
    labels = [r.label for r in cs.rows()]
    assert labels == ["x3_ub", "x3_lb", "x4_ub", "x4_lb", "u0_ub", "u0_lb"]


def test_normalization_is_idempotent():
    cs = ConstraintSet(state_bounds=[(0, -np.inf, 2.0), (1, -1.0, np.inf), (2, -np.inf, np.inf)],
                       control_bounds=[(0, -3.0, 3.0)])
    once = cs.normalize()
    twice = once.normalize()
    assert [r.label for r in once.rows()] == [r.label for r in twice.rows()]
    assert once.state_bounds == twice.state_bounds
    assert once.control_bounds == twice.control_bounds


def test_collision_row_value_and_gradient():
    scen = DiffDriveScenario(start=np.zeros(5), goal=np.array([5.0, 0, 0]),
                             robot_radius=0.2, obstacles=[Obstacle(1.0, 0.0, 0.3)])
    spec = build_diff_drive_ocp(scen)
    # robot at distance 1.0 from the obstacle center, r_total = 0.5
    x = np.array([0.0, 0.0, 0.0, 0.0, 0.0])
    vals, grads = eval_constraints(spec, 1, x, np.zeros(2))
    row = 8  # collisions follow the 8 box rows
    assert vals[row] == pytest.approx(-0.5)
    assert np.allclose(grads[row][:2], [1.0, 0.0])  # -(p-q)/|p-q| with p-q = (-1, 0)
    assert np.all(grads[row][2:] == 0.0)

    # finite-difference check away from the singular point
    eps = 1e-7
    for j in range(2):
        d = np.zeros(5)
        d[j] = eps
        fd = (spec.stage_constraints.nonlinear[0].fun(x + d, np.zeros(2))
              - spec.stage_constraints.nonlinear[0].fun(x - d, np.zeros(2))) / (2 * eps)
        assert abs(grads[row][j] - fd) <= 1e-6


def test_collision_guard_near_center():
    scen = DiffDriveScenario(start=np.array([5.0, 5.0, 0, 0, 0]), goal=np.array([6.0, 0, 0]),
                             obstacles=[Obstacle(1.0, 1.0, 0.3)])
    spec = build_diff_drive_ocp(scen)
    row = spec.stage_constraints.nonlinear[0]
    x_on_center = np.array([1.0, 1.0, 0, 0, 0])
    assert row.fun(x_on_center, np.zeros(2)) < -1e5
    assert np.all(row.grad(x_on_center, np.zeros(2)) == 0.0)


def test_default_diff_drive_dimensions():
    spec = build_diff_drive_ocp(default_diff_drive_scenario())
    assert spec.model.n_x == 5 and spec.model.n_u == 2
    assert spec.N == 20 and spec.T == 2.0
    assert spec.integrator.scheme == "irk_gl4"
    assert spec.integrator.newton_iters == 3 and spec.integrator.jacobian_reuse


def test_three_obstacles_three_rows_per_stage_node():
    spec = build_diff_drive_ocp(default_diff_drive_scenario())
    assert len(spec.stage_constraints.nonlinear) == 3
    vals, _ = eval_constraints(spec, 2, np.zeros(5), np.zeros(2))
    assert vals.size == 8 + 3  # 8 box rows + 3 collision rows


def test_tightening_sets():
    spec = build_diff_drive_ocp(default_diff_drive_scenario())
    # upper v, lower v, upper omega, and all collision rows
    assert spec.tighten_idx_mid == [0, 1, 2, 8, 9, 10]
    assert spec.tighten_idx_N == []
    assert spec.tighten_idx_0 == []


def test_terminal_node_rows_state_only():
    spec = build_diff_drive_ocp(default_diff_drive_scenario())
    vals, grads = eval_constraints(spec, spec.N, np.zeros(5))
    assert vals.size == 4  # tight velocity bounds only
    assert np.all(grads[:, 5:] == 0.0)
    vt = spec.terminal_constraints.state_bounds[0]
    assert vt[1] == -1e-3 and vt[2] == 1e-3


def test_initial_overlap_raises_scenario_error():
    scen = DiffDriveScenario(start=np.zeros(5), goal=np.array([5.0, 0, 0]),
                             robot_radius=0.2, obstacles=[Obstacle(0.1, 0.0, 0.3)])
    with pytest.raises(ScenarioError):
        build_diff_drive_ocp(scen)


def test_tighten_index_out_of_range_rejected():
    scen = default_diff_drive_scenario()
    spec = build_diff_drive_ocp(scen)
    from tubempc.ocp import OcpSpec
    with pytest.raises(ConfigurationError):
        OcpSpec(N=spec.N, T=spec.T, model=spec.model, integrator=spec.integrator,
                cost=spec.cost, stage_constraints=spec.stage_constraints,
                terminal_constraints=spec.terminal_constraints,
                tighten_idx_mid=[99], x0=spec.x0)


def test_node_index_out_of_range():
    spec = build_diff_drive_ocp(default_diff_drive_scenario())
    with pytest.raises(ConfigurationError):
        eval_constraints(spec, spec.N + 1, np.zeros(5))


def test_waypoint_reference_interpolation():
    scen = DiffDriveScenario(
        start=np.zeros(5), goal=np.array([1.0, 0, 0]),
        waypoints_t=np.array([0.0, 1.0]),
        waypoints_x=np.array([[0, 0, 0, 0, 0], [2.0, 0, 0, 0, 0.0]]))
    assert scen.reference_state(0.5)[0] == pytest.approx(1.0)
    assert scen.reference_state(2.0)[0] == pytest.approx(2.0)  # clamped past the end
