"""Scenario files: parsing, defaults, validation and TV prediction."""

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import numpy as np

from ..barrier import BarrierParams, ControlBounds, FrictionEnvelope, InfeasibleEnvelopeError, friction_feasible_check
from ..cost_model import CostWeights
from ..geometry import OrientedRectangle, rectangles_overlap
from ..problem import ObstacleMode
from ..risk import GaussianPosition, RiskParams
from ..solver import SolverConfig

SCHEMA_VERSION = 1
DEFAULT_SIGMA = ((0.25, 0.0), (0.0, 0.25))


class ScenarioError(ValueError):
    """Malformed or inconsistent scenario; the message names the field or invariant."""


@dataclass(frozen=True)
class EgoSpec:
    speed: float = 20.0
    lateral: float = 0.0
    length: float = 5.0
    width: float = 2.0


@dataclass(frozen=True)
class RoadSpec:
    lane_width: float = 4.0
    lane_count: int = 3
    ego_lane: int = 1  # 0 is the rightmost lane
    mu_hat: float = 0.9

    def lane_center(self, lane: int) -> float:
        """Lateral position of a lane centre relative to the ego lane centre."""
        return (lane - self.ego_lane) * self.lane_width

    @property
    def right_edge(self) -> float:
        return self.lane_center(0) - 0.5 * self.lane_width

    @property
    def left_edge(self) -> float:
        return self.lane_center(self.lane_count - 1) + 0.5 * self.lane_width


@dataclass(frozen=True)
class TVSpec:
    id: int
    speed: float
    lateral: float  # offset from the EV at t=0 [m], left positive
    longitudinal: float  # offset ahead of the EV at t=0 [m]
    length: float = 5.0
    width: float = 2.0
    behavior: str = "lane-keep"  # or "lane-change"
    target_lateral: Optional[float] = None
    start_time: float = 0.0
    duration: float = 2.0
    sigma: tuple = DEFAULT_SIGMA
    sigma_growth: float = 0.0  # [m^2/s] added isotropically per second of look-ahead

    def __post_init__(self) -> None:
        if self.speed < 0:
            raise ScenarioError(f"tv {self.id}: invariant speed >= 0 violated ({self.speed})")
        if self.behavior not in ("lane-keep", "lane-change"):
            raise ScenarioError(f"tv {self.id}: unknown behavior {self.behavior!r}")
        if self.behavior == "lane-change":
            if not self.duration > 0:
                raise ScenarioError(f"tv {self.id}: invariant duration > 0 violated ({self.duration})")
            if self.target_lateral is None:
                raise ScenarioError(f"tv {self.id}: lane-change needs target_lateral or target_lane")
        if self.sigma_growth < 0:
            raise ScenarioError(f"tv {self.id}: sigma_growth must be nonnegative")
        try:
            GaussianPosition(np.zeros(2), np.array(self.sigma)).require_pd()
        except ValueError as exc:
            raise ScenarioError(f"tv {self.id}: sigma invalid: {exc}") from exc


@dataclass(frozen=True)
class SimSpec:
    duration: float = 8.0
    replan_period: float = 0.25
    seed: int = 0


@dataclass(frozen=True)
class Scenario:
    name: str
    ev: EgoSpec
    road: RoadSpec
    tvs: tuple[TVSpec, ...]
    solver: SolverConfig
    weights: CostWeights
    barrier: BarrierParams
    bounds: ControlBounds
    risk: RiskParams
    mode: ObstacleMode
    sim: SimSpec
    d_min: float = 1.0
    defaults_used: tuple[str, ...] = ()

    @property
    def replan_steps(self) -> int:
        return int(round(self.sim.replan_period / self.solver.dt))

    def to_dict(self) -> dict:
        """Full effective configuration in the scenario file layout."""
        return {
            "schema_version": SCHEMA_VERSION,
            "name": self.name,
            "mode": self.mode.value,
            "d_min": self.d_min,
            "ev": dataclasses.asdict(self.ev),
            "road": dataclasses.asdict(self.road),
            "tvs": [_tv_to_dict(tv) for tv in self.tvs],
            "solver": _solver_to_dict(self.solver),
            "weights": dataclasses.asdict(self.weights),
            "barrier": dataclasses.asdict(self.barrier),
            "bounds": dataclasses.asdict(self.bounds),
            "risk": dataclasses.asdict(self.risk),
            "sim": dataclasses.asdict(self.sim),
        }


def _tv_to_dict(tv: TVSpec) -> dict:
    d = dataclasses.asdict(tv)
    d["sigma"] = [list(r) for r in tv.sigma]
    return d


def _solver_to_dict(cfg: SolverConfig) -> dict:
    d = dataclasses.asdict(cfg)
    d["horizon"] = cfg.horizon_T * cfg.dt
    del d["horizon_T"]
    return d


# field name in file -> dataclass field; "horizon" is given in seconds
_SOLVER_KEYS = {"lambda0", "lambda_max", "scale_s", "max_iters", "convergence_tol", "horizon", "dt"}


def _section(raw: dict, key: str, cls, defaults_used: list, rename: Optional[dict] = None) -> Any:
    sub = raw.get(key)
    if sub is None:
        defaults_used.append(key)
        return cls()
    if not isinstance(sub, dict):
        raise ScenarioError(f"field '{key}' must be an object")
    names = [f.name for f in dataclasses.fields(cls)]
    unknown = set(sub) - set(names)
    if unknown:
        raise ScenarioError(f"field '{key}': unknown keys {sorted(unknown)}")
    for n in names:
        if n not in sub:
            defaults_used.append(f"{key}.{n}")
    try:
        return cls(**sub)
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"field '{key}': {exc}") from exc


def _parse_solver(raw: dict, defaults_used: list) -> SolverConfig:
    sub = raw.get("solver")
    if sub is None:
        defaults_used.append("solver")
        sub = {}
    unknown = set(sub) - _SOLVER_KEYS
    if unknown:
        raise ScenarioError(f"field 'solver': unknown keys {sorted(unknown)}")
    for n in sorted(_SOLVER_KEYS - set(sub)):
        if "solver" in raw:
            defaults_used.append(f"solver.{n}")
    kw = {k: v for k, v in sub.items() if k != "horizon"}
    dt = float(kw.get("dt", SolverConfig.dt))
    horizon = float(sub.get("horizon", SolverConfig.horizon_T * SolverConfig.dt))
    kw["horizon_T"] = _integer_ratio(horizon, dt, "solver.horizon is an integer multiple of solver.dt")
    try:
        return SolverConfig(**kw)
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"field 'solver': {exc}") from exc


def _integer_ratio(a: float, b: float, invariant: str) -> int:
    n = int(round(a / b))
    if n < 1 or abs(n * b - a) > 1e-9 * max(1.0, abs(a)):
        raise ScenarioError(f"invariant violated: {invariant} ({a} / {b})")
    return n


def _parse_tv(raw: Any, idx: int, road: RoadSpec) -> TVSpec:
    if not isinstance(raw, dict):
        raise ScenarioError(f"field 'tvs[{idx}]' must be an object")
    raw = dict(raw)
    raw.setdefault("id", idx + 1)
    if "target_lane" in raw:
        lane = raw.pop("target_lane")
        if not 0 <= lane < road.lane_count:
            raise ScenarioError(f"field 'tvs[{idx}].target_lane' out of range: {lane}")
        raw["target_lateral"] = road.lane_center(lane)
    if "sigma" in raw:
        raw["sigma"] = tuple(tuple(float(c) for c in row) for row in raw["sigma"])
    names = {f.name for f in dataclasses.fields(TVSpec)}
    unknown = set(raw) - names
    if unknown:
        raise ScenarioError(f"field 'tvs[{idx}]': unknown keys {sorted(unknown)}")
    missing = {"speed", "lateral", "longitudinal"} - set(raw)
    if missing:
        raise ScenarioError(f"field 'tvs[{idx}]': missing required keys {sorted(missing)}")
    try:
        return TVSpec(**raw)
    except TypeError as exc:
        raise ScenarioError(f"field 'tvs[{idx}]': {exc}") from exc


def parse_scenario(raw: dict, name: str = "scenario") -> Scenario:
    if not isinstance(raw, dict):
        raise ScenarioError("scenario document must be an object")
    known = {"schema_version", "name", "mode", "d_min", "ev", "road", "tvs", "solver",
             "weights", "barrier", "bounds", "risk", "sim"}
    unknown = set(raw) - known
    if unknown:
        raise ScenarioError(f"unknown top-level keys {sorted(unknown)}")
    version = raw.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ScenarioError(f"field 'schema_version': unsupported version {version}")

    defaults_used: list[str] = []
    if "mode" not in raw:
        defaults_used.append("mode")
    try:
        mode = ObstacleMode(str(raw.get("mode", "mdr")).lower())
    except ValueError:
        raise ScenarioError(f"field 'mode': expected one of mdr, mrr, mrr-slow, got {raw['mode']!r}") from None
    if "d_min" not in raw:
        defaults_used.append("d_min")
    d_min = float(raw.get("d_min", 1.0))
    if not d_min >= 0:
        raise ScenarioError(f"field 'd_min' must be nonnegative, got {d_min}")

    ev = _section(raw, "ev", EgoSpec, defaults_used)
    road = _section(raw, "road", RoadSpec, defaults_used)
    solver = _parse_solver(raw, defaults_used)
    weights = _section(raw, "weights", CostWeights, defaults_used)
    barrier = _section(raw, "barrier", BarrierParams, defaults_used)
    bounds = _section(raw, "bounds", ControlBounds, defaults_used)
    risk = _section(raw, "risk", RiskParams, defaults_used)
    sim = _section(raw, "sim", SimSpec, defaults_used)

    tvs_raw = raw.get("tvs", [])
    if not isinstance(tvs_raw, list):
        raise ScenarioError("field 'tvs' must be a list")
    tvs = tuple(_parse_tv(t, i, road) for i, t in enumerate(tvs_raw))

    scn = Scenario(
        name=str(raw.get("name", name)),
        ev=ev, road=road, tvs=tvs, solver=solver, weights=weights, barrier=barrier,
        bounds=bounds, risk=risk, mode=mode, sim=sim, d_min=d_min,
        defaults_used=tuple(defaults_used),
    )
    validate(scn)
    return scn


def validate(scn: Scenario) -> None:
    _integer_ratio(scn.sim.replan_period, scn.solver.dt, "sim.replan_period is an integer multiple of solver.dt")
    if not scn.sim.duration > 0:
        raise ScenarioError("invariant violated: sim.duration > 0")
    if len({tv.id for tv in scn.tvs}) != len(scn.tvs):
        raise ScenarioError("invariant violated: tv ids are unique")
    if not (scn.road.lane_count >= 1 and 0 <= scn.road.ego_lane < scn.road.lane_count):
        raise ScenarioError("invariant violated: road.ego_lane indexes an existing lane")
    try:
        ok, margins = friction_feasible_check(scn.bounds, FrictionEnvelope(scn.road.mu_hat), scn.ev.speed)
    except InfeasibleEnvelopeError as exc:
        raise ScenarioError(f"invariant violated: friction envelope: {exc}") from exc
    if not ok:
        bad = [k for k in ("a_min", "a_max", "r_min", "r_max") if margins[k] <= 0]
        raise ScenarioError(f"invariant violated: control bounds inside friction envelope ({bad})")
    ev_rect = OrientedRectangle((0.0, scn.ev.lateral), 0.0, scn.ev.length, scn.ev.width)
    for tv in scn.tvs:
        pos, heading, _ = tv_state(tv, 0.0)
        if rectangles_overlap(ev_rect, OrientedRectangle(tuple(pos), heading, tv.length, tv.width)):
            raise ScenarioError(f"invariant violated: tv {tv.id} initially collision-free with the EV")


def load_scenario(path) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ScenarioError(f"{path}: cannot read scenario: {exc}") from exc
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    try:
        return parse_scenario(raw, name=path.stem)
    except ScenarioError as exc:
        raise ScenarioError(f"{path}: {exc}") from exc


def with_overrides(scn: Scenario, **kw) -> Scenario:
    """Copy with CLI-level overrides (mode, seed, replan_period, horizon, dt); None means keep."""
    mode = kw.get("mode")
    sim = scn.sim
    if kw.get("seed") is not None:
        sim = dataclasses.replace(sim, seed=int(kw["seed"]))
    if kw.get("replan_period") is not None:
        sim = dataclasses.replace(sim, replan_period=float(kw["replan_period"]))
    solver = scn.solver
    dt = float(kw["dt"]) if kw.get("dt") is not None else solver.dt
    horizon = float(kw["horizon"]) if kw.get("horizon") is not None else solver.horizon_T * solver.dt
    if kw.get("dt") is not None or kw.get("horizon") is not None:
        steps = _integer_ratio(horizon, dt, "horizon is an integer multiple of dt")
        solver = dataclasses.replace(solver, dt=dt, horizon_T=steps)
    risk = scn.risk
    if kw.get("seed") is not None:
        risk = dataclasses.replace(risk, seed=int(kw["seed"]))
    out = dataclasses.replace(
        scn,
        mode=ObstacleMode(mode) if mode is not None else scn.mode,
        sim=sim, solver=solver, risk=risk,
    )
    validate(out)
    return out


def tv_state(tv: TVSpec, t: float) -> tuple[np.ndarray, float, np.ndarray]:
    """Nominal position, heading and lateral velocity of a TV at absolute time ``t``."""
    x = tv.longitudinal + tv.speed * t
    if tv.behavior == "lane-keep":
        return np.array([x, tv.lateral]), 0.0, 0.0
    tau = min(max((t - tv.start_time) / tv.duration, 0.0), 1.0)
    dy = tv.target_lateral - tv.lateral
    y = tv.lateral + dy * (3.0 * tau**2 - 2.0 * tau**3)
    if 0.0 < tau < 1.0:
        vy = dy * 6.0 * tau * (1.0 - tau) / tv.duration
    else:
        vy = 0.0
    heading = math.atan2(vy, tv.speed) if (vy != 0.0 or tv.speed > 0) else 0.0
    return np.array([x, y]), heading, vy


@dataclass(frozen=True)
class TVPrediction:
    positions: np.ndarray  # (T+1, 2)
    headings: np.ndarray  # (T+1,)
    covs: np.ndarray  # (T+1, 2, 2)

    def gaussian(self, k: int) -> GaussianPosition:
        return GaussianPosition(self.positions[k], self.covs[k])


def predict_tv_trajectory(tv: TVSpec, horizon_T: int, dt: float, t0: float = 0.0) -> TVPrediction:
    """Nominal TV motion over ``horizon_T`` steps starting at absolute time ``t0``."""
    pos = np.empty((horizon_T + 1, 2))
    hdg = np.empty(horizon_T + 1)
    covs = np.empty((horizon_T + 1, 2, 2))
    base = np.array(tv.sigma, dtype=float)
    for k in range(horizon_T + 1):
        p, h, _ = tv_state(tv, t0 + k * dt)
        pos[k], hdg[k] = p, h
        covs[k] = base + tv.sigma_growth * k * dt * np.eye(2)
    return TVPrediction(pos, hdg, covs)
