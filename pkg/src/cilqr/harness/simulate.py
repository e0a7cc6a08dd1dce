"""Receding-horizon closed-loop simulation of the planner and a braking baseline."""

import math
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..barrier import BoundaryPolynomials
from ..cost_model import ReferenceLine, TerminalTarget
from ..geometry import OrientedRectangle, minkowski_sum, rectangles_overlap, signed_distance
from ..problem import ObstacleMode, ObstacleTrack, PlanningProblem
from ..solver import NumericalFailure, SolveResult, solve
from ..vehicle_model import ACC, CONTROL_DIM, PSI, PX, PY, STATE_DIM, V, YAW_RATE, Trajectory, rollout, step
from .scenario import Scenario, predict_tv_trajectory, tv_state

MIDPOINT_HALF_WINDOW = 0.5  # [s]
BASELINE_TTC = 3.0  # [s] braking trigger of the baseline
BASELINE_JERK = 10.0  # [m/s^3] ramp rate of the baseline deceleration
TTC_RESOLUTION = 0.05  # [s] look-ahead sampling of the baseline's collision check


@dataclass
class PlanRecord:
    t: float
    states: np.ndarray
    controls: np.ndarray
    status: str
    iterations: int
    cost: float
    cost_log: list
    fallback: bool = False


@dataclass
class RunResult:
    scenario: Scenario
    executed: Trajectory
    tv_truth: np.ndarray  # (K+1, n_tv, 3): x, y, heading
    clearances: np.ndarray  # (K+1, n_tv)
    overlaps: np.ndarray  # (K+1, n_tv) independent rectangle test
    plans: list = field(default_factory=list)
    metrics: dict = field(default_factory=dict)
    timings_ms: list = field(default_factory=list)
    planner: str = "ilqr"


def infeasible_braking_distance(v_ev: float, v_tv: float, a_min: float, l_ev: float, l_tv: float) -> float:
    """Smallest initial gap from which braking alone avoids a slower lead vehicle."""
    if not a_min < 0:
        raise ValueError(f"a_min must be negative, got {a_min}")
    if v_ev < v_tv:
        raise ValueError(f"v_ev must be at least v_tv, got {v_ev} < {v_tv}")
    return (v_ev - v_tv) ** 2 / (2.0 * abs(a_min)) + (l_ev + l_tv) / 2.0


def _noise_rng(seed: int, tv_id: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(tv_id,))))


def tv_ground_truth(scn: Scenario, n_steps: int) -> np.ndarray:
    """Realized TV poses at every executed step; noisy in the risk-aware modes."""
    dt = scn.solver.dt
    out = np.empty((n_steps + 1, len(scn.tvs), 3))
    noisy = scn.mode is not ObstacleMode.MDR
    for j, tv in enumerate(scn.tvs):
        rng = _noise_rng(scn.sim.seed, tv.id)
        chol = np.linalg.cholesky(np.array(tv.sigma, dtype=float))
        for k in range(n_steps + 1):
            pos, heading, _ = tv_state(tv, k * dt)
            if noisy:
                pos = pos + chol @ rng.standard_normal(2)
            out[k, j] = (pos[0], pos[1], heading)
    return out


def build_problem(scn: Scenario, t0: float, x_end: float) -> PlanningProblem:
    T, dt = scn.solver.horizon_T, scn.solver.dt
    tracks = []
    for tv in scn.tvs:
        pred = predict_tv_trajectory(tv, T, dt, t0)
        rects = tuple(
            OrientedRectangle((p[0], p[1]), float(h), tv.length, tv.width)
            for p, h in zip(pred.positions, pred.headings)
        )
        tracks.append(ObstacleTrack(rects, pred.covs, tv.id))
    road = scn.road
    return PlanningProblem(
        dt=dt,
        reference=ReferenceLine.straight(road.lane_center(road.ego_lane), -100.0, x_end, scn.ev.speed),
        target=TerminalTarget(psi_f=0.0, v_f=scn.ev.speed),
        weights=scn.weights,
        barrier=scn.barrier,
        bounds=scn.bounds,
        boundaries=BoundaryPolynomials((road.left_edge,), (road.right_edge,)),
        obstacles=tuple(tracks),
        mode=scn.mode,
        d_min=scn.d_min,
        risk=scn.risk,
        ev_length=scn.ev.length,
        ev_width=scn.ev.width,
    )


def _n_cycles(scn: Scenario) -> int:
    return int(math.ceil(scn.sim.duration / scn.sim.replan_period - 1e-9))


def _clearances(scn: Scenario, states: np.ndarray, truth: np.ndarray):
    n = states.shape[0]
    clear = np.full((n, len(scn.tvs)), np.inf)
    overlap = np.zeros((n, len(scn.tvs)), dtype=bool)
    for k in range(n):
        x = states[k]
        ev = OrientedRectangle((x[PX], x[PY]), float(x[PSI]), scn.ev.length, scn.ev.width)
        for j, tv in enumerate(scn.tvs):
            rect = OrientedRectangle((truth[k, j, 0], truth[k, j, 1]), float(truth[k, j, 2]), tv.length, tv.width)
            clear[k, j] = signed_distance(minkowski_sum(ev, rect), x[[PX, PY]])[0]
            overlap[k, j] = rectangles_overlap(ev, rect)
    return clear, overlap


def _box_violation(scn: Scenario, controls: np.ndarray) -> float:
    b = scn.bounds
    if controls.size == 0:
        return 0.0
    a, r = controls[:, ACC], controls[:, YAW_RATE]
    va = np.maximum(np.maximum(a - b.a_max, b.a_min - a), 0.0) / (b.a_max - b.a_min)
    vr = np.maximum(np.maximum(r - b.r_max, b.r_min - r), 0.0) / (b.r_max - b.r_min)
    return float(max(va.max(), vr.max()))


def compute_metrics(result: RunResult) -> dict:
    scn = result.scenario
    dt = scn.solver.dt
    states, controls = result.executed.states, result.executed.controls
    clear = result.clearances
    accel = controls[:, ACC]
    jerk = np.diff(accel) / dt
    lane_y = scn.road.lane_center(scn.road.ego_lane)
    min_clear = float(clear.min()) if clear.size else math.inf

    mid = None
    lane_changers = [j for j, tv in enumerate(scn.tvs) if tv.behavior == "lane-change"]
    if lane_changers:
        tv = scn.tvs[lane_changers[0]]
        t_mid = tv.start_time + 0.5 * tv.duration
        t = np.arange(states.shape[0]) * dt
        win = np.abs(t - t_mid) <= MIDPOINT_HALF_WINDOW + 1e-9
        if np.any(win):
            mid = float(clear[win].min())

    plans = result.plans
    monotone = all(all(b < a for a, b in zip(p.cost_log, p.cost_log[1:])) for p in plans)
    statuses: dict = {}
    for p in plans:
        statuses[p.status] = statuses.get(p.status, 0) + 1
    fallbacks = sum(p.fallback for p in plans)
    return {
        "planner": result.planner,
        "min_clearance": min_clear,
        "collision": bool(min_clear < 0),
        "overlap_detected": bool(result.overlaps.any()),
        "midpoint_clearance": mid,
        "avg_abs_accel": float(np.mean(np.abs(accel))) if accel.size else 0.0,
        "avg_abs_jerk": float(np.mean(np.abs(jerk))) if jerk.size else 0.0,
        "max_lateral_offset": float(np.max(np.abs(states[:, PY] - lane_y))),
        "max_box_violation": _box_violation(scn, controls),
        "accepted_costs_monotone": bool(monotone),
        "cycles": len(plans),
        "fallback_cycles": int(fallbacks),
        "degraded": bool(fallbacks > 0),
        "solver_iterations": int(sum(p.iterations for p in plans)),
        "solver_status_counts": dict(sorted(statuses.items())),
        "executed_steps": int(controls.shape[0]),
    }


def run(scn: Scenario) -> RunResult:
    """Closed-loop receding-horizon run of the iLQR planner."""
    dt, T, m = scn.solver.dt, scn.solver.horizon_T, scn.replan_steps
    if m > T:
        raise ValueError(f"replan period ({m} steps) exceeds the horizon ({T} steps)")
    n_cycles = _n_cycles(scn)
    K = n_cycles * m
    truth = tv_ground_truth(scn, K)
    x_end = scn.ev.speed * (K + T) * dt * 2.0 + 200.0

    states = np.empty((K + 1, STATE_DIM))
    controls = np.empty((K, CONTROL_DIM))
    states[0] = (0.0, scn.ev.lateral, scn.ev.speed, 0.0)
    warm = np.zeros((T, CONTROL_DIM))
    plans, timings = [], []

    for c in range(n_cycles):
        k0 = c * m
        t0 = k0 * dt
        x0 = states[k0].copy()
        problem = build_problem(scn, t0, x_end + x0[PX])
        tic = time.perf_counter()
        try:
            sol: Optional[SolveResult] = solve(problem, x0, warm, scn.solver)
            plan = sol.trajectory
            rec = PlanRecord(t0, plan.states, plan.controls, sol.status.value, sol.iterations,
                             sol.cost, list(sol.cost_log))
        except NumericalFailure:
            brake = np.zeros((T, CONTROL_DIM))
            brake[:, ACC] = scn.bounds.a_min
            plan = rollout(x0, brake, dt)
            rec = PlanRecord(t0, plan.states, plan.controls, "fallback", 0, math.nan, [], fallback=True)
        timings.append(1e3 * (time.perf_counter() - tic))
        plans.append(rec)
        for i in range(m):
            controls[k0 + i] = plan.controls[i]
            states[k0 + i + 1] = step(states[k0 + i], controls[k0 + i], dt)
        warm = np.vstack([plan.controls[m:], np.repeat(plan.controls[-1:], m, axis=0)])

    executed = Trajectory(states, controls, dt, consistent=True)
    clear, overlap = _clearances(scn, states, truth)
    result = RunResult(scn, executed, truth, clear, overlap, plans, timings_ms=timings)
    result.metrics = compute_metrics(result)
    return result


def _predicted_ttc(scn: Scenario, x: np.ndarray, t: float) -> float:
    """Time until the EV footprint, held at constant speed and heading, first overlaps a TV's known path."""
    for i in range(int(round(BASELINE_TTC / TTC_RESOLUTION)) + 1):
        tau = i * TTC_RESOLUTION
        centre = (x[PX] + x[V] * math.cos(x[PSI]) * tau, x[PY] + x[V] * math.sin(x[PSI]) * tau)
        ev = OrientedRectangle(centre, float(x[PSI]), scn.ev.length, scn.ev.width)
        for tv in scn.tvs:
            pos, heading, _ = tv_state(tv, t + tau)
            if rectangles_overlap(ev, OrientedRectangle((pos[0], pos[1]), heading, tv.length, tv.width)):
                return tau
    return math.inf


def run_braking_baseline(scn: Scenario) -> RunResult:
    """Longitudinal-only baseline: cruise, or ramp toward ``a_min`` when time-to-collision drops below 3 s.

    Time-to-collision uses the TVs' known future paths, the same information
    the planner receives.
    """
    dt = scn.solver.dt
    K = _n_cycles(scn) * scn.replan_steps
    truth = tv_ground_truth(scn, K)
    states = np.empty((K + 1, STATE_DIM))
    controls = np.zeros((K, CONTROL_DIM))
    states[0] = (0.0, scn.ev.lateral, scn.ev.speed, 0.0)
    a = 0.0
    for k in range(K):
        x = states[k]
        if _predicted_ttc(scn, x, k * dt) < BASELINE_TTC:
            a = max(scn.bounds.a_min, a - BASELINE_JERK * dt)
        else:
            a = min(0.0, a + BASELINE_JERK * dt)
        a = max(a, -x[V] / dt)  # never reverse
        controls[k, ACC] = a
        states[k + 1] = step(x, controls[k], dt)
    executed = Trajectory(states, controls, dt, consistent=True)
    clear, overlap = _clearances(scn, states, truth)
    result = RunResult(scn, executed, truth, clear, overlap, [], planner="braking")
    result.metrics = compute_metrics(result)
    return result
