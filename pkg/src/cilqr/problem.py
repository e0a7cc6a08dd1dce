"""Assembly of all cost and barrier terms into one trajectory objective.

The objective of a trajectory with respect to a previous iterate ``x_hat`` is

    J = sum_k [control + adjusting + tracking + barriers](x_k, u_k)
        + [terminal + adjusting + state barriers](x_T)

Collision polygons are built from the evaluated trajectory's own headings and
held fixed when differentiating.
"""

import enum
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import numpy.typing as npt

from .barrier import (
    BarrierParams,
    BoundaryPolynomials,
    ControlBounds,
    exp_barrier,
    road_boundary_constraints,
    control_bound_constraints,
    sum_rows,
)
from .cost_model import (
    CostWeights,
    QuadraticExpansion,
    ReferenceLine,
    TerminalTarget,
    adjusting_cost,
    control_cost,
    terminal_cost,
    tracking_cost,
)
from .geometry import OrientedRectangle, minkowski_sum, mdr_constraint, signed_distance
from .risk import GaussianPosition, RiskParams, expected_barrier, probability_barrier
from .vehicle_model import PSI, PX, PY, STATE_DIM, linearize

DoubleArray = npt.NDArray[np.float64]


class ObstacleMode(enum.Enum):
    MDR = "mdr"
    MRR = "mrr"
    MRR_SLOW = "mrr-slow"


@dataclass(frozen=True)
class ObstacleTrack:
    """Predicted TV footprints (one per state index) with position covariances."""

    rects: tuple[OrientedRectangle, ...]
    covs: DoubleArray  # (T+1, 2, 2)
    tv_id: int = 0

    def __post_init__(self) -> None:
        covs = np.asarray(self.covs, dtype=float)
        if covs.shape != (len(self.rects), 2, 2):
            raise ValueError(f"need one 2x2 covariance per footprint, got {covs.shape}")
        object.__setattr__(self, "rects", tuple(self.rects))
        object.__setattr__(self, "covs", covs)


@dataclass
class Evaluation:
    cost: float
    stage: QuadraticExpansion  # batched over T
    terminal: QuadraticExpansion
    fx: DoubleArray  # (T, 4, 4)
    fu: DoubleArray  # (T, 4, 2)
    saturated: bool = False
    # every term except the adjusting cost, which alone depends on ``x_hat``
    fixed_stage: Optional[QuadraticExpansion] = None
    fixed_terminal: Optional[QuadraticExpansion] = None


@dataclass
class PlanningProblem:
    dt: float
    reference: Optional[ReferenceLine]
    target: TerminalTarget
    weights: CostWeights = field(default_factory=CostWeights)
    barrier: BarrierParams = field(default_factory=BarrierParams)
    control_barrier: Optional[BarrierParams] = None  # defaults to ``barrier``
    bounds: ControlBounds = field(default_factory=ControlBounds)
    boundaries: Optional[BoundaryPolynomials] = None
    obstacles: Sequence[ObstacleTrack] = ()
    mode: ObstacleMode = ObstacleMode.MDR
    d_min: float = 1.0
    risk: RiskParams = field(default_factory=RiskParams)
    ev_length: float = 5.0
    ev_width: float = 2.0
    project_psd: bool = True

    def ev_rect(self, x: DoubleArray) -> OrientedRectangle:
        return OrientedRectangle((x[PX], x[PY]), float(x[PSI]), self.ev_length, self.ev_width)

    def polygon(self, x: DoubleArray, track: ObstacleTrack, k: int):
        return minkowski_sum(self.ev_rect(x), track.rects[k])

    def clearances(self, states: npt.ArrayLike) -> DoubleArray:
        """Signed polygon distance of every state to every obstacle, shape ``(T+1, n_obs)``."""
        states = np.asarray(states, dtype=float)
        out = np.full((states.shape[0], len(self.obstacles)), np.inf)
        for j, track in enumerate(self.obstacles):
            for k, x in enumerate(states):
                out[k, j] = signed_distance(self.polygon(x, track, k), x[[PX, PY]])[0]
        return out

    def _obstacle_terms(self, states: DoubleArray) -> tuple[QuadraticExpansion, bool]:
        n = states.shape[0]
        total = QuadraticExpansion.zeros((n,))
        saturated = False
        for j, track in enumerate(self.obstacles):
            if len(track.rects) < n:
                raise ValueError(f"obstacle {track.tv_id} predicted for {len(track.rects)} steps, need {n}")
            if self.mode is ObstacleMode.MRR:
                for k, x in enumerate(states):
                    poly = self.polygon(x, track, k)
                    gp = GaussianPosition(track.rects[k].center, track.covs[k])
                    term = expected_barrier(x, poly, gp, self.barrier, self.d_min, self.project_psd)
                    _accumulate(total, k, term)
                continue
            g = np.empty(n)
            gx = np.zeros((n, STATE_DIM))
            gxx = np.zeros((n, STATE_DIM, STATE_DIM))
            for k, x in enumerate(states):
                poly = self.polygon(x, track, k)
                c = mdr_constraint(x, poly, self.d_min)
                g[k], gx[k], gxx[k] = c.g, c.gx, c.gxx
                if self.mode is ObstacleMode.MRR_SLOW:
                    gp = GaussianPosition(track.rects[k].center, track.covs[k])
                    stream = 1000 * track.tv_id + k
                    term = probability_barrier(x, poly, gp, self.barrier, self.risk, stream)
                    _accumulate(total, k, term)
            rows = exp_barrier(g, gx=gx, gxx=gxx, p=self.barrier)
            saturated |= bool(np.any(rows.saturated))
            total = total + rows
        return total, saturated

    def evaluate(
        self, states: npt.ArrayLike, controls: npt.ArrayLike, x_hat: Optional[npt.ArrayLike] = None
    ) -> Evaluation:
        """Total cost and per-step quadratic expansions of a trajectory."""
        states = np.asarray(states, dtype=float)
        controls = np.asarray(controls, dtype=float)
        x_hat = states if x_hat is None else np.asarray(x_hat, dtype=float)
        T = controls.shape[0]
        w = self.weights

        # state-dependent terms over all T+1 states
        xs = QuadraticExpansion.zeros((states.shape[0],))
        saturated = False
        if self.boundaries is not None:
            g, gx, gxx = road_boundary_constraints(states, self.boundaries)
            road = exp_barrier(g, gx=gx, gxx=gxx, p=self.barrier)
            saturated = bool(np.any(road.saturated))
            xs = xs + sum_rows(road)
        obs, obs_sat = self._obstacle_terms(states)
        xs = xs + obs
        saturated |= obs_sat

        stage = xs[:T] + control_cost(controls, w)
        if self.reference is not None:
            stage = stage + tracking_cost(states[:T], self.reference, w)
        gu, gu_rows = control_bound_constraints(controls, self.bounds)
        ctrl = exp_barrier(gu, gu=gu_rows, p=self.control_barrier or self.barrier)
        saturated |= bool(np.any(ctrl.saturated))
        stage = stage + sum_rows(ctrl)
        terminal = xs[T] + terminal_cost(states[T], self.target, w)
        fx, fu = linearize(states[:T], controls, self.dt)
        ev = Evaluation(0.0, stage, terminal, fx, fu, saturated, fixed_stage=stage, fixed_terminal=terminal)
        return self._with_adjusting(ev, states, x_hat)

    def rereference(self, ev: Evaluation, states: npt.ArrayLike) -> Evaluation:
        """``ev`` re-expressed with ``states`` as the previous iterate.

        Equal to ``evaluate(states, controls)`` for the trajectory that
        produced ``ev``, without recomputing the barrier terms.
        """
        states = np.asarray(states, dtype=float)
        return self._with_adjusting(ev, states, states)

    def _with_adjusting(self, ev: Evaluation, states: DoubleArray, x_hat: DoubleArray) -> Evaluation:
        T = ev.fx.shape[0]
        adj = adjusting_cost(states, x_hat, self.weights)
        stage = (ev.fixed_stage + adj[:T]).symmetrized()
        terminal = (ev.fixed_terminal + adj[T]).symmetrized()
        cost = float(np.sum(stage.value) + terminal.value)
        return Evaluation(cost, stage, terminal, ev.fx, ev.fu, ev.saturated,
                          fixed_stage=ev.fixed_stage, fixed_terminal=ev.fixed_terminal)

    def cost(self, states, controls, x_hat=None) -> float:
        return self.evaluate(states, controls, x_hat).cost


def _accumulate(total: QuadraticExpansion, k: int, term: QuadraticExpansion) -> None:
    total.value[k] += term.value
    total.lx[k] += term.lx
    total.lu[k] += term.lu
    total.lxx[k] += term.lxx
    total.luu[k] += term.luu
    total.lxu[k] += term.lxu
