"""Acceptance suite: every criterion at its stated tolerance, one line each."""

import json
import math
import time
from contextlib import contextmanager

import numpy as np
import pytest
from scipy.linalg import block_diag

from tubempc.check import check_solution
from tubempc.cli import run_scaling
from tubempc.config import load_config, parse_config
from tubempc.integrators import ERK4, IntegratorConfig, discrete_step
from tubempc.models import LtiModel
from tubempc.ocp import (ConstraintSet, LeastSquaresCost, OcpSpec,
                         build_diff_drive_ocp, default_diff_drive_scenario)
from tubempc.simulate import NoiseConfig, metrics, simulate_closed_loop
from tubempc.sqp import (STATUS_CONVERGED, SqpSettings, SqpSolver, constant_guess,
                         sqp_solve)
from tubempc.zoro import (ZoroConfig, compute_backoff, default_diff_drive_zoro,
                          gamma_from_probability, propagate_uncertainty, zoro_sqp,
                          zoro_update)

PAPER_W = np.diag((2e-6, 2e-6, 4e-6, 1.5e-3, 7e-3))


@contextmanager
def criterion(name):
    try:
        yield
    except Exception:
        print(f"FAIL  {name}")
        raise
    print(f"PASS  {name}")


def test_propagation_oracle_equivalence():
    with criterion("propagation oracle equivalence (1000 random, 1e-12, <5s)"):
        rng = np.random.default_rng(100)
        t0 = time.perf_counter()
        for _ in range(1000):
            n_x = int(rng.integers(1, 9))
            n_u = int(rng.integers(1, 5))
            n_w = int(rng.integers(1, 5))
            A = rng.normal(size=(n_x, n_x))
            B = rng.normal(size=(n_x, n_u))
            K = rng.normal(size=(n_u, n_x))
            G = rng.normal(size=(n_x, n_w))
            Lp = rng.normal(size=(n_x, n_x))
            Lw = rng.normal(size=(n_w, n_w))
            P = Lp @ Lp.T
            W = Lw @ Lw.T
            out = propagate_uncertainty(A, B, K, P, G, W)
            Acl = A + B.dot(K)
            oracle = np.einsum("ij,jk,lk->il", Acl, P, Acl) \
                + np.einsum("ij,jk,lk->il", G, W, G)
            oracle = 0.5 * (oracle + oracle.T)
            assert np.max(np.abs(out - oracle)) <= 1e-12 * max(1.0, np.max(np.abs(oracle)))
        elapsed = time.perf_counter() - t0
        assert elapsed < 5.0


def test_backoff_oracle_monotonicity_scaling():
    with criterion("backoff oracle + monotonicity + sqrt-scaling (1000 random, 1e-12, <5s)"):
        rng = np.random.default_rng(101)
        t0 = time.perf_counter()
        for _ in range(1000):
            n_x = int(rng.integers(1, 7))
            n_u = int(rng.integers(1, 4))
            grad = rng.normal(size=n_x + n_u)
            K = rng.normal(size=(n_u, n_x))
            L = rng.normal(size=(n_x, n_x))
            P = L @ L.T
            gamma = float(rng.uniform(0.1, 4.0))
            beta = compute_backoff(grad, K, P, gamma)
            # direct scalar-sum oracle of the projected quadratic form
            v = grad[:n_x] + K.T @ grad[n_x:]
            quad = sum(v[i] * P[i, j] * v[j] for i in range(n_x) for j in range(n_x))
            oracle = gamma * math.sqrt(max(quad, 0.0))
            assert abs(beta - oracle) <= 1e-12 * max(1.0, oracle)
            # monotonicity under PSD increment
            L2 = rng.normal(size=(n_x, n_x))
            beta_up = compute_backoff(grad, K, P + L2 @ L2.T, gamma)
            assert beta_up >= beta - 1e-12
            # exact sqrt scaling
            s = float(rng.uniform(0.1, 10.0))
            beta_s = compute_backoff(grad, K, (s ** 2) * P, gamma)
            assert abs(beta_s - s * beta) <= 1e-12 * max(1.0, beta_s)
        elapsed = time.perf_counter() - t0
        assert elapsed < 5.0


def test_zero_uncertainty_reduction():
    with criterion("zero-uncertainty reduction: zoro_sqp == sqp_solve (1e-12)"):
        spec = build_diff_drive_ocp(default_diff_drive_scenario())
        nominal = sqp_solve(spec, record_iterates=True)
        robust, _ = zoro_sqp(spec, ZoroConfig.zero(spec), record_iterates=True)
        assert nominal.status == robust.status == STATUS_CONVERGED
        assert len(nominal.recorded) == len(robust.recorded)
        for (xs_a, us_a), (xs_b, us_b) in zip(nominal.recorded, robust.recorded):
            assert np.max(np.abs(xs_a - xs_b)) <= 1e-12
            assert np.max(np.abs(us_a - us_b)) <= 1e-12


def test_fixed_point_feasibility():
    with criterion("fixed-point feasibility: independent check of h + beta <= 1e-6"):
        spec = build_diff_drive_ocp(default_diff_drive_scenario())
        cfg = default_diff_drive_zoro()
        result, tube = zoro_sqp(spec, cfg,
                                settings=SqpSettings(max_iter=100, tol_stationarity=1e-8))
        assert result.status == STATUS_CONVERGED
        violations = check_solution(spec, cfg, result.iterate.xs, result.iterate.us,
                                    tol=1e-6)
        assert violations == [], [v.describe() for v in violations]
        assert max(np.max(b, initial=0.0) for b in tube.beta) > 1e-3


def riccati_rollout(Ad, Bd, Q, R, QN, N, x0):
    P = QN.copy()
    gains = [None] * N
    for k in reversed(range(N)):
        Kk = -np.linalg.solve(R + Bd.T @ P @ Bd, Bd.T @ P @ Ad)
        P = Q + Ad.T @ P @ Ad + Ad.T @ P @ Bd @ Kk
        gains[k] = Kk
    xs = [np.asarray(x0, dtype=float)]
    us = []
    for k in range(N):
        us.append(gains[k] @ xs[-1])
        xs.append(Ad @ xs[-1] + Bd @ us[-1])
    return np.array(xs), np.array(us)


def test_lqr_equivalence():
    with criterion("LQR equivalence: one prepare+feedback matches Riccati (1e-8)"):
        rng = np.random.default_rng(23)
        A = rng.normal(size=(4, 4))
        A = A - (np.max(np.real(np.linalg.eigvals(A))) + 0.5) * np.eye(4)
        B = rng.normal(size=(4, 2))
        Q, R, QN = np.eye(4), np.eye(2), 2.0 * np.eye(4)
        model = LtiModel(A, B)
        Vx = np.vstack([np.eye(4), np.zeros((2, 4))])
        Vu = np.vstack([np.zeros((4, 2)), np.eye(2)])
        cost = LeastSquaresCost(Vx, Vu, block_diag(Q, R), np.zeros((10, 6)),
                                np.eye(4), QN, np.zeros(4))
        spec = OcpSpec(N=10, T=1.0, model=model,
                       integrator=IntegratorConfig(scheme=ERK4, step_size=0.1),
                       cost=cost, stage_constraints=ConstraintSet(),
                       terminal_constraints=ConstraintSet(), x0=np.zeros(4))
        Ad_Bd = discrete_step(model, np.zeros(4), np.zeros(2), spec.integrator)
        x0_bar = np.array([0.05, -0.08, 0.03, 0.06])
        xs_or, us_or = riccati_rollout(Ad_Bd.A, Ad_Bd.B, Q, R, QN, 10, x0_bar)

        solver = SqpSolver(spec)
        solver.set_iterate(constant_guess(spec, np.zeros(4)).xs,
                           np.zeros((10, 2)))
        solver.prepare()
        res = solver.feedback(x0_bar)
        assert res.applied
        assert np.max(np.abs(res.u0 - us_or[0])) <= 1e-8
        assert np.max(np.abs(solver.iterate.us - us_or)) <= 1e-8
        assert np.max(np.abs(solver.iterate.xs - xs_or)) <= 1e-8


def sparse_kkt_step(solver, x0_bar):
    spec = solver.spec
    N, n_x, n_u = spec.N, spec.model.n_x, spec.model.n_u
    cache = solver.iterate.cache
    cost = spec.cost
    nv = (N + 1) * n_x + N * n_u
    H = np.zeros((nv, nv))
    g = np.zeros(nv)
    for k in range(N + 1):
        xk = slice(k * n_x, (k + 1) * n_x)
        H[xk, xk] = cost.Hxx if k < N else cost.Hxx_N
        g[xk] = cache["gx"][k]
        if k < N:
            uk = slice((N + 1) * n_x + k * n_u, (N + 1) * n_x + (k + 1) * n_u)
            H[xk, uk] = cost.Hxu
            H[uk, xk] = cost.Hxu.T
            H[uk, uk] = cost.Huu
            g[uk] = cache["gu"][k]
    ne = (N + 1) * n_x
    E = np.zeros((ne, nv))
    b = np.zeros(ne)
    E[:n_x, :n_x] = np.eye(n_x)
    b[:n_x] = x0_bar - solver.iterate.xs[0]
    for k in range(N):
        rows = slice((k + 1) * n_x, (k + 2) * n_x)
        E[rows, k * n_x:(k + 1) * n_x] = cache["A"][k]
        E[rows, (k + 1) * n_x:(k + 2) * n_x] = -np.eye(n_x)
        E[rows, (N + 1) * n_x + k * n_u:(N + 1) * n_x + (k + 1) * n_u] = cache["B"][k]
        b[rows] = -(cache["x_next"][k] - solver.iterate.xs[k + 1])
    K = np.zeros((nv + ne, nv + ne))
    K[:nv, :nv] = H
    K[:nv, nv:] = E.T
    K[nv:, :nv] = E
    sol = np.linalg.solve(K, np.concatenate([-g, b]))
    return (sol[:(N + 1) * n_x].reshape(N + 1, n_x),
            sol[(N + 1) * n_x:nv].reshape(N, n_u))


def test_condensing_correctness():
    with criterion("condensing correctness: condensed == sparse KKT (1e-10)"):
        rng = np.random.default_rng(31)
        for _ in range(10):
            A = rng.normal(size=(2, 2)) - 1.5 * np.eye(2)
            B = rng.normal(size=(2, 1))
            model = LtiModel(A, B)
            Vx = rng.normal(size=(3, 2))
            Vu = rng.normal(size=(3, 1))
            cost = LeastSquaresCost(Vx, Vu, np.eye(3), rng.normal(size=(3, 3)),
                                    rng.normal(size=(2, 2)), np.eye(2),
                                    rng.normal(size=2))
            spec = OcpSpec(N=3, T=0.3, model=model,
                           integrator=IntegratorConfig(scheme=ERK4, step_size=0.1),
                           cost=cost, stage_constraints=ConstraintSet(),
                           terminal_constraints=ConstraintSet())
            solver = SqpSolver(spec)
            solver.set_iterate(rng.normal(size=(4, 2)), rng.normal(size=(3, 1)))
            solver.prepare()
            x0_bar = rng.normal(size=2)
            dxs_or, dus_or = sparse_kkt_step(solver, x0_bar)
            res = solver.feedback(x0_bar)
            assert res.applied
            assert np.max(np.abs(res.dxs - dxs_or)) <= 1e-10
            assert np.max(np.abs(res.dus - dus_or)) <= 1e-10


def test_rti_split_equivalence():
    with criterion("RTI split equivalence: deferred measurement (1e-14)"):
        spec = build_diff_drive_ocp(default_diff_drive_scenario())
        cfg = default_diff_drive_zoro()
        guess = constant_guess(spec)

        # solver A prepares before the measurement is known
        a = SqpSolver(spec)
        a.set_iterate(guess.xs, guess.us)
        a.prepare()
        zoro_update(a, cfg)
        x0_bar = spec.x0 + np.array([0.01, -0.02, 0.005, 0.01, 0.0])
        res_a = a.feedback(x0_bar)

        # solver B runs the identical iteration knowing x0_bar from the start
        b = SqpSolver(spec)
        b.set_iterate(guess.xs, guess.us)
        b.prepare()
        zoro_update(b, cfg)
        res_b = b.feedback(x0_bar)

        assert res_a.applied and res_b.applied
        assert np.max(np.abs(res_a.u0 - res_b.u0)) <= 1e-14
        assert np.max(np.abs(res_a.dxs - res_b.dxs)) <= 1e-14
        assert np.max(np.abs(res_a.dus - res_b.dus)) <= 1e-14


def test_diff_drive_closed_loop_50_seeds():
    with criterion("diff-drive closed loop: 50 seeded runs, zero collisions, <5min"):
        scen = default_diff_drive_scenario()
        cfg = default_diff_drive_zoro()
        t0 = time.perf_counter()
        shares = []
        for seed in range(50):
            trace = simulate_closed_loop(None, "zoro_rti", scen,
                                         NoiseConfig(PAPER_W, seed), 120,
                                         zoro_cfg=cfg)
            assert trace.failure is None, f"seed {seed}: {trace.failure}"
            assert trace.n_steps == 120
            m = metrics(trace)
            assert m["min_clearance"] > 0.0, f"seed {seed}: clearance {m['min_clearance']}"
            shares.append(m["propagation_share_median"])
        elapsed = time.perf_counter() - t0
        assert elapsed < 300.0
        test_diff_drive_closed_loop_50_seeds.shares = shares
        print(f"      (50 runs in {elapsed:.1f}s, median propagation share "
              f"{np.median(shares):.3f})")


def test_propagation_overhead_share():
    with criterion("propagation overhead: median share of step time <= 30%"):
        shares = getattr(test_diff_drive_closed_loop_50_seeds, "shares", None)
        if shares is None:
            trace = simulate_closed_loop(None, "zoro_rti", default_diff_drive_scenario(),
                                         NoiseConfig(PAPER_W, 0), 120,
                                         zoro_cfg=default_diff_drive_zoro())
            shares = [metrics(trace)["propagation_share_median"]]
        assert float(np.median(shares)) <= 0.30


def test_scaling_study(tmp_path):
    with criterion("scaling: propagation slope <= 3.5, zoro <= 3x nominal per size"):
        cfg = parse_config({
            "experiment": "scaling",
            "model": "hanging_chain",
            "ocp": {"N": 20, "T": 1.0},
            "scaling": {"n_mass": [3, 4, 5, 6], "sqp_iterations": 5, "repeats": 3},
        })
        assert run_scaling(cfg, str(tmp_path)) == 0
        report = json.loads((tmp_path / "scaling.json").read_text())
        assert len(report["sizes"]) == 4
        assert report["flagged"] == []
        assert report["propagation_slope"] <= 3.5
        for row in report["sizes"]:
            ratio = row["t_zoro_per_iter_ns"] / row["t_nominal_per_iter_ns"]
            assert ratio <= 3.0, f"n_mass={row['n_mass']}: ratio {ratio:.2f}"
        print(f"      (slope {report['propagation_slope']:.3f}, "
              f"worst ratio {report['max_zoro_over_nominal']:.2f})")


def normal_inv_cdf_bisect(p):
    lo, hi = -12.0, 12.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if 0.5 * (1.0 + math.erf(mid / math.sqrt(2.0))) < p:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def test_gamma_from_probability_accuracy():
    with criterion("gamma_from_probability: normal 1e-6 vs bisection, chebyshev exact"):
        for p in (0.5, 0.9, 0.99, 0.99865):
            assert abs(gamma_from_probability(p, "normal") - normal_inv_cdf_bisect(p)) <= 1e-6
        assert gamma_from_probability(0.75, "chebyshev") == 2.0
        assert gamma_from_probability(0.99, "chebyshev") == 1.0 / math.sqrt(1.0 - 0.99)
