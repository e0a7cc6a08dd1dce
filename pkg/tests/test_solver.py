import dataclasses

import numpy as np
import pytest

import cilqr.solver as solver_mod
from cilqr.barrier import ControlBounds
from cilqr.cost_model import CostWeights, QuadraticExpansion, ReferenceLine, TerminalTarget
from cilqr.harness.scenario import load_scenario
from cilqr.harness.simulate import build_problem
from cilqr.problem import PlanningProblem
from cilqr.solver import (
    GainSchedule,
    NumericalFailure,
    SolverConfig,
    Status,
    backward_pass,
    forward_pass,
    regularized_inverse,
    solve,
)
from cilqr.vehicle_model import linearize, rollout

from pathlib import Path

SCENARIOS = Path(__file__).resolve().parents[1] / "src" / "cilqr" / "scenarios"
CFG = SolverConfig()


def _empty_problem(bounds=ControlBounds(), **kw):
    return PlanningProblem(
        dt=CFG.dt,
        reference=ReferenceLine.straight(0.0, -100, 1000, 20.0),
        target=TerminalTarget(0.0, 20.0),
        bounds=bounds,
        **kw,
    )


def _cutin_problem():
    scn = load_scenario(SCENARIOS / "cutin_single.json")
    x0 = np.array([0.0, scn.ev.lateral, scn.ev.speed, 0.0])
    return scn, build_problem(scn, 0.0, 600.0), x0


def test_config_validation():
    for bad in (dict(lambda0=0.0), dict(scale_s=1.0), dict(lambda_max=0.5), dict(max_iters=0), dict(dt=0.0)):
        with pytest.raises(ValueError):
            SolverConfig(**bad)
    assert (CFG.lambda0, CFG.lambda_max, CFG.scale_s, CFG.max_iters, CFG.horizon_T) == (1.0, 1e10, 5e2, 20, 20)


def test_regularized_inverse_examples():
    np.testing.assert_allclose(regularized_inverse(np.eye(2), 1.0), 0.5 * np.eye(2))
    np.testing.assert_allclose(regularized_inverse(np.diag([2.0, -3.0]), 1.0), np.diag([1 / 3, 1.0]))
    with pytest.raises(ValueError):
        regularized_inverse(np.eye(2), 0.0)


def test_regularized_inverse_random():
    rng = np.random.default_rng(0)
    for _ in range(200):
        A = rng.normal(size=(2, 2))
        S = A + A.T
        R = regularized_inverse(S, rng.uniform(1e-6, 10))
        np.testing.assert_array_equal(R, R.T)
        assert np.linalg.eigvalsh(R).min() > 0
        P = A @ A.T + 0.1 * np.eye(2)
        true = np.linalg.inv(P)
        assert np.abs(regularized_inverse(P, 1e-9) - true).max() < 1e-6 * max(1.0, np.abs(true).max())


def test_backward_pass_zero_expansions():
    T = 5
    gains, red = backward_pass(QuadraticExpansion.zeros((T,)), np.tile(np.eye(4), (T, 1, 1)),
                               np.zeros((T, 4, 2)), QuadraticExpansion.zeros(), 1.0)
    assert not gains.H.any() and not gains.G.any() and red == 0.0


def test_backward_pass_one_step_lqr():
    rng = np.random.default_rng(1)
    for _ in range(50):
        A, B = rng.normal(size=(4, 4)), rng.normal(size=(4, 2))
        M = rng.normal(size=(6, 6))
        M = M @ M.T + 0.1 * np.eye(6)
        stage = QuadraticExpansion(0.0, rng.normal(size=4), rng.normal(size=2), M[:4, :4], M[4:, 4:], M[:4, 4:])
        Q = rng.normal(size=(4, 4))
        Q = Q @ Q.T
        q = rng.normal(size=4)
        terminal = QuadraticExpansion(0.0, q, np.zeros(2), Q, np.zeros((2, 2)), np.zeros((4, 2)))
        gains, _ = backward_pass(_batch(stage), A[None], B[None], terminal, 1e-9)

        # closed form: minimise lu.du + 1/2 du.Ruu.du + q.(B du) + 1/2 (B du).Q.(B du) at dx = 0
        J = lambda du: stage.lu @ du + 0.5 * du @ stage.luu @ du + q @ (B @ du) + 0.5 * (B @ du) @ Q @ (B @ du)
        Hq = stage.luu + B.T @ Q @ B
        du_star = np.linalg.solve(Hq, -(stage.lu + B.T @ q))
        assert J(du_star) <= J(du_star + 1e-4 * rng.normal(size=2))
        assert np.abs(gains.H[0] - du_star).max() < 1e-8 * max(1.0, np.abs(du_star).max())
        G_star = -np.linalg.solve(Hq, (stage.lxu + A.T @ Q @ B).T)
        assert np.abs(gains.G[0] - G_star).max() < 1e-8 * max(1.0, np.abs(G_star).max())


def _batch(e):
    return QuadraticExpansion(np.array([e.value]), e.lx[None], e.lu[None], e.lxx[None], e.luu[None], e.lxu[None])


def test_value_function_symmetric():
    rng = np.random.default_rng(2)
    T = 8
    M = rng.normal(size=(T, 6, 6))
    M = M @ np.swapaxes(M, 1, 2)
    stage = QuadraticExpansion(np.zeros(T), rng.normal(size=(T, 4)), rng.normal(size=(T, 2)),
                               M[:, :4, :4], M[:, 4:, 4:], M[:, :4, 4:])
    Q = rng.normal(size=(4, 4))
    terminal = QuadraticExpansion(0.0, rng.normal(size=4), np.zeros(2), Q @ Q.T, np.zeros((2, 2)), np.zeros((4, 2)))
    values = []
    backward_pass(stage, rng.normal(size=(T, 4, 4)), rng.normal(size=(T, 4, 2)), terminal, 0.1, record=values)
    assert len(values) == T
    for v in values:
        np.testing.assert_array_equal(v.Vxx, v.Vxx.T)


def test_backward_pass_non_finite_reports_step():
    T = 4
    stage = QuadraticExpansion.zeros((T,))
    stage.lu[2] = np.nan
    with pytest.raises(NumericalFailure) as exc:
        backward_pass(stage, np.tile(np.eye(4), (T, 1, 1)), np.zeros((T, 4, 2)), QuadraticExpansion.zeros(), 1.0)
    assert exc.value.step_index == 2


def test_forward_pass_zero_gains_is_identity():
    _, problem, x0 = _cutin_problem()
    u = np.column_stack([np.linspace(-1, 1, 20), 0.02 * np.ones(20)])
    prev = rollout(x0, u, CFG.dt)
    traj, ev = forward_pass(problem, prev, GainSchedule.zeros(20))
    np.testing.assert_array_equal(traj.states, prev.states)
    assert abs(ev.cost - problem.cost(prev.states, prev.controls)) <= 1e-12 * abs(ev.cost)
    with pytest.raises(ValueError):
        forward_pass(problem, prev, GainSchedule.zeros(19))


def test_rereference_equals_fresh_evaluation():
    _, problem, x0 = _cutin_problem()
    rng = np.random.default_rng(4)
    prev = rollout(x0, rng.normal(size=(20, 2)) * [0.5, 0.05], CFG.dt)
    gains = GainSchedule(rng.normal(size=(20, 2)) * [0.3, 0.02], np.zeros((20, 2, 4)))
    traj, ev = forward_pass(problem, prev, gains)
    fresh = problem.evaluate(traj.states, traj.controls)
    reref = problem.rereference(ev, traj.states)
    assert reref.cost == fresh.cost
    for name in ("value", "lx", "lu", "lxx", "luu", "lxu"):
        np.testing.assert_array_equal(getattr(reref.stage, name), getattr(fresh.stage, name))
        np.testing.assert_array_equal(getattr(reref.terminal, name), getattr(fresh.terminal, name))


def test_forward_pass_first_order_taylor():
    problem = _empty_problem()
    rng = np.random.default_rng(3)
    prev = rollout([0, 0, 20, 0.05], rng.normal(size=(20, 2)) * [0.5, 0.02], CFG.dt)
    fx, fu = linearize(prev.states[:-1], prev.controls, CFG.dt)
    direction = rng.normal(size=(20, 2)) * [1.0, 0.05]
    errs = []
    for eps in (1e-2, 5e-3):
        gains = GainSchedule(eps * direction, np.zeros((20, 2, 4)))
        traj, ev = forward_pass(problem, prev, gains)
        dx = np.zeros(4)
        err = 0.0
        for k in range(20):
            dx = fx[k] @ dx + fu[k] @ (eps * direction[k])
            err = max(err, np.abs(traj.states[k + 1] - prev.states[k + 1] - dx).max())
        errs.append(err)
        assert ev.cost == pytest.approx(problem.cost(traj.states, traj.controls, prev.states), rel=1e-12)
    assert 3.0 < errs[0] / errs[1] < 5.0  # halving the step quarters the remainder


def test_empty_road_converges_immediately():
    problem = _empty_problem()
    res = solve(problem, [0, 0, 20, 0], np.zeros((20, 2)), CFG)
    assert res.status is Status.CONVERGED and res.iterations <= 2
    assert np.abs(res.trajectory.controls).max() < 1e-3


def test_cutin_solve_monotone_and_consistent():
    _, problem, x0 = _cutin_problem()
    res = solve(problem, x0, np.zeros((20, 2)), CFG)
    assert res.iterations <= CFG.max_iters
    assert all(b < a for a, b in zip(res.cost_log, res.cost_log[1:]))
    recomputed = problem.cost(res.trajectory.states, res.trajectory.controls)
    assert abs(res.cost - recomputed) <= 1e-9 * abs(recomputed)
    again = solve(problem, x0, np.zeros((20, 2)), CFG)
    assert again.cost == res.cost and again.cost_log == res.cost_log
    np.testing.assert_array_equal(again.trajectory.states, res.trajectory.states)


def test_convex_tracking_reaches_stationarity():
    # speed tracking plus control and terminal costs: quadratic in (x, u) and exactly
    # represented by the expansions; the box barrier underflows to exactly zero
    wide = ControlBounds(a_min=-1e3, a_max=1e3, r_min=-1e3, r_max=1e3)
    weights = CostWeights(w_px=0.0, w_py=0.0, w_v=0.0, w_psi=0.0, w_pref=0.0)
    problem = _empty_problem(bounds=wide, weights=weights)
    for x0 in ([0.0, 0.0, 21.0, 0.02], [0.0, 0.3, 18.0, -0.05]):
        res = solve(problem, x0, np.zeros((20, 2)), dataclasses.replace(CFG, max_iters=10))
        ev = problem.evaluate(res.trajectory.states, res.trajectory.controls)
        _, predicted = backward_pass(ev.stage, ev.fx, ev.fu, ev.terminal, solver_mod.LAMBDA_FLOOR)
        assert res.iterations <= 10
        assert predicted < 1e-6


def test_numerical_failure_is_a_rejection(monkeypatch):
    problem = _empty_problem()
    real = solver_mod.forward_pass
    calls = {"n": 0}

    def flaky(problem, prev, gains):
        calls["n"] += 1
        if calls["n"] == 1:
            raise NumericalFailure("injected", 3)
        return real(problem, prev, gains)

    monkeypatch.setattr(solver_mod, "forward_pass", flaky)
    res = solve(problem, [0, 0.5, 20, 0], np.zeros((20, 2)), CFG)
    assert res.failures == 1 and np.isnan(res.trial_log[0])
    assert all(b < a for a, b in zip(res.cost_log, res.cost_log[1:]))


def test_damping_ceiling():
    problem = _empty_problem()

    def always_fail(*a, **k):
        raise NumericalFailure("injected", 0)

    mp = pytest.MonkeyPatch()
    mp.setattr(solver_mod, "forward_pass", always_fail)
    try:
        res = solve(problem, [0, 0.5, 20, 0], np.zeros((20, 2)), CFG)
    finally:
        mp.undo()
    assert res.status is Status.DAMPING_CEILING and res.final_lambda > CFG.lambda_max
    assert res.iterations == 4  # 1 -> 5e2 -> 2.5e5 -> 1.25e8 -> 6.25e10


def test_u0_length_checked():
    with pytest.raises(ValueError):
        solve(_empty_problem(), [0, 0, 20, 0], np.zeros((19, 2)), CFG)
