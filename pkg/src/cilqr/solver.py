"""Iterative LQR with Levenberg-Marquardt damping.

The outer loop alternates a backward pass (local quadratic model of the
value function, first-order dynamics) with a full-step forward pass.  A
trial is accepted when it lowers the cost; the damping factor is divided by
``scale_s`` on acceptance and multiplied by it on rejection.
"""

import enum
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import numpy.typing as npt

from .cost_model import QuadraticExpansion
from .problem import Evaluation, PlanningProblem
from .vehicle_model import CONTROL_DIM, STATE_DIM, Trajectory, rollout, step

DoubleArray = npt.NDArray[np.float64]

# Stop when the model predicts less than this fraction of the cost can be gained.
PREDICTED_REDUCTION_TOL = 1e-9
# Repeated division by the scale would underflow to zero after ~110 accepted steps.
LAMBDA_FLOOR = 1e-12


class NumericalFailure(RuntimeError):
    def __init__(self, message: str, step_index: int):
        super().__init__(f"{message} (step {step_index})")
        self.step_index = step_index


class Status(str, enum.Enum):
    CONVERGED = "converged"
    DAMPING_CEILING = "damping_ceiling"
    ITERATION_LIMIT = "iteration_limit"


@dataclass(frozen=True)
class SolverConfig:
    lambda0: float = 1.0
    lambda_max: float = 1e10
    scale_s: float = 5e2
    max_iters: int = 20
    convergence_tol: float = 1e-4
    horizon_T: int = 20
    dt: float = 0.25

    def __post_init__(self) -> None:
        if not self.lambda0 > 0:
            raise ValueError("lambda0 must be positive")
        if not self.scale_s > 1:
            raise ValueError("scale_s must exceed 1")
        if not self.lambda_max > self.lambda0:
            raise ValueError("lambda_max must exceed lambda0")
        if self.max_iters < 1 or self.horizon_T < 1:
            raise ValueError("max_iters and horizon_T must be at least 1")
        if not self.dt > 0:
            raise ValueError("dt must be positive")


@dataclass
class ValueExpansion:
    Vx: DoubleArray
    Vxx: DoubleArray


@dataclass
class GainSchedule:
    H: DoubleArray  # (T, 2) feedforward
    G: DoubleArray  # (T, 2, 4) feedback

    def __post_init__(self) -> None:
        if self.H.shape[0] != self.G.shape[0]:
            raise ValueError("feedforward and feedback schedules differ in length")

    @property
    def horizon(self) -> int:
        return self.H.shape[0]

    @classmethod
    def zeros(cls, T: int) -> "GainSchedule":
        return cls(np.zeros((T, CONTROL_DIM)), np.zeros((T, CONTROL_DIM, STATE_DIM)))


@dataclass
class SolveResult:
    trajectory: Trajectory
    cost: float
    iterations: int
    status: Status
    cost_log: list[float] = field(default_factory=list)  # accepted costs, initial first
    trial_log: list[float] = field(default_factory=list)  # every trial cost (nan on failure)
    failures: int = 0
    final_lambda: float = float("nan")


def regularized_inverse(Puu: npt.ArrayLike, lam: float) -> DoubleArray:
    """``U (max(L, 0) + lam I)^-1 U^T`` for symmetric ``Puu = U L U^T``."""
    if not lam > 0:
        raise ValueError(f"damping must be positive, got {lam}")
    Puu = np.asarray(Puu, dtype=float)
    evals, evecs = np.linalg.eigh(0.5 * (Puu + np.swapaxes(Puu, -1, -2)))
    inv = 1.0 / (np.maximum(evals, 0.0) + lam)
    out = (evecs * inv[..., None, :]) @ np.swapaxes(evecs, -1, -2)
    return 0.5 * (out + np.swapaxes(out, -1, -2))


def backward_pass(
    stage: QuadraticExpansion,
    fx: DoubleArray,
    fu: DoubleArray,
    terminal: QuadraticExpansion,
    lam: float,
    record: Optional[list] = None,
) -> tuple[GainSchedule, float]:
    """Gains for every step and the predicted cost reduction of applying them.

    If ``record`` is given, the value expansion at every step is appended to
    it (step ``T-1`` first).
    """
    T = fx.shape[0]
    gains = GainSchedule.zeros(T)
    Vx = np.array(terminal.lx, dtype=float)
    Vxx = np.array(terminal.lxx, dtype=float)
    reduction = 0.0
    for k in range(T - 1, -1, -1):
        A, B = fx[k], fu[k]
        Px = stage.lx[k] + A.T @ Vx
        Pu = stage.lu[k] + B.T @ Vx
        Pxx = stage.lxx[k] + A.T @ Vxx @ A
        Puu = stage.luu[k] + B.T @ Vxx @ B
        Pxu = stage.lxu[k] + A.T @ Vxx @ B
        Pinv = regularized_inverse(Puu, lam)
        H = -Pinv @ Pu
        G = -Pinv @ Pxu.T
        Vx = Px + Pxu @ H
        Vxx = Pxx + Pxu @ G
        Vxx = 0.5 * (Vxx + Vxx.T)
        if not (np.all(np.isfinite(H)) and np.all(np.isfinite(G)) and np.all(np.isfinite(Vxx))):
            raise NumericalFailure("non-finite value function", k)
        gains.H[k], gains.G[k] = H, G
        if record is not None:
            record.append(ValueExpansion(Vx.copy(), Vxx.copy()))
        reduction += float(-H @ Pu - 0.5 * H @ Puu @ H)
    return gains, reduction


def forward_pass(
    problem: PlanningProblem, prev: Trajectory, gains: GainSchedule
) -> tuple[Trajectory, Evaluation]:
    """Apply ``u_k = u_hat_k + H_k + G_k (x_k - x_hat_k)`` and evaluate against ``prev``."""
    if gains.horizon != prev.horizon:
        raise ValueError(f"gain schedule length {gains.horizon} != horizon {prev.horizon}")
    T = prev.horizon
    states = np.empty_like(prev.states)
    controls = np.empty_like(prev.controls)
    states[0] = prev.states[0]
    for k in range(T):
        controls[k] = prev.controls[k] + gains.H[k] + gains.G[k] @ (states[k] - prev.states[k])
        try:
            states[k + 1] = step(states[k], controls[k], prev.dt)
        except ValueError as exc:
            raise NumericalFailure(str(exc), k) from exc
        if not np.all(np.isfinite(states[k + 1])):
            raise NumericalFailure("non-finite state", k + 1)
    traj = Trajectory(states, controls, prev.dt, consistent=True)
    # a wild trial may overflow to inf; it is then simply rejected
    with np.errstate(over="ignore", invalid="ignore"):
        return traj, problem.evaluate(states, controls, prev.states)


def solve(
    problem: PlanningProblem, x0: npt.ArrayLike, u0: npt.ArrayLike, cfg: SolverConfig = SolverConfig()
) -> SolveResult:
    u0 = np.asarray(u0, dtype=float).reshape(-1, CONTROL_DIM)
    if u0.shape[0] != cfg.horizon_T:
        raise ValueError(f"u0 has {u0.shape[0]} steps, horizon is {cfg.horizon_T}")
    traj = rollout(x0, u0, cfg.dt)
    ev = problem.evaluate(traj.states, traj.controls)
    if not np.isfinite(ev.cost):
        raise NumericalFailure("initial trajectory has non-finite cost", 0)
    j_minus = ev.cost
    result = SolveResult(traj, j_minus, 0, Status.ITERATION_LIMIT, cost_log=[j_minus])
    lam = cfg.lambda0

    for i in range(cfg.max_iters):
        result.iterations = i + 1
        accepted = False
        try:
            with np.errstate(over="ignore", invalid="ignore"):
                gains, predicted = backward_pass(ev.stage, ev.fx, ev.fu, ev.terminal, lam)
            if predicted < PREDICTED_REDUCTION_TOL * max(abs(j_minus), 1.0):
                result.status = Status.CONVERGED
                break
            trial, trial_ev = forward_pass(problem, traj, gains)
            j_plus = trial_ev.cost
            result.trial_log.append(j_plus)
            accepted = bool(np.isfinite(j_plus) and j_plus < j_minus)
        except NumericalFailure:
            result.failures += 1
            result.trial_log.append(float("nan"))

        if accepted:
            lam = max(lam / cfg.scale_s, LAMBDA_FLOOR)
            rel = (j_minus - j_plus) / max(j_minus, 1.0)
            traj = trial
            ev = problem.rereference(trial_ev, traj.states)
            j_minus = ev.cost
            result.cost_log.append(j_minus)
            if rel < cfg.convergence_tol:
                result.status = Status.CONVERGED
                break
        else:
            lam *= cfg.scale_s
            if lam > cfg.lambda_max:
                result.status = Status.DAMPING_CEILING
                break

    result.trajectory = traj
    result.cost = j_minus
    result.final_lambda = lam
    return result
