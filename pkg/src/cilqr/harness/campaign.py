"""Randomized cut-in campaign comparing the planner with a braking-only baseline."""

import dataclasses
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .outputs import SCHEMA_VERSION, dumps, write_table
from .scenario import Scenario, TVSpec, validate
from .simulate import infeasible_braking_distance, run, run_braking_baseline

CUTIN_START = (0.5, 2.0)  # [s]
CUTIN_DURATION = (1.5, 3.0)  # [s]
TV_SPEED = (8.0, 14.0)  # [m/s]
INITIAL_GAP = (12.0, 25.0)  # [m], centre to centre


@dataclass(frozen=True)
class CaseSpec:
    case: int
    start_time: float
    duration: float
    tv_speed: float
    gap: float
    braking_threshold: float  # smallest gap braking alone can handle

    @property
    def below_threshold(self) -> bool:
        return self.gap < self.braking_threshold


@dataclass
class CampaignResult:
    cases: list[CaseSpec]
    rows: list[dict] = field(default_factory=list)
    summary: dict = field(default_factory=dict)


def _cutin_template(template: Scenario) -> tuple[int, TVSpec]:
    for j, tv in enumerate(template.tvs):
        if tv.behavior == "lane-change":
            return j, tv
    raise ValueError("campaign template needs a lane-change TV")


def sample_cases(template: Scenario, n_cases: int, seed: int) -> list[CaseSpec]:
    if n_cases < 1:
        raise ValueError(f"n_cases must be at least 1, got {n_cases}")
    _, tv = _cutin_template(template)
    cases = []
    for i in range(n_cases):
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(i,))))
        start = rng.uniform(*CUTIN_START)
        dur = rng.uniform(*CUTIN_DURATION)
        speed = rng.uniform(*TV_SPEED)
        gap = rng.uniform(*INITIAL_GAP)
        thr = infeasible_braking_distance(template.ev.speed, speed, template.bounds.a_min,
                                          template.ev.length, tv.length)
        cases.append(CaseSpec(i, float(start), float(dur), float(speed), float(gap), float(thr)))
    return cases


def case_scenario(template: Scenario, spec: CaseSpec, seed: int) -> Scenario:
    j, tv = _cutin_template(template)
    tv = dataclasses.replace(tv, start_time=spec.start_time, duration=spec.duration,
                             speed=spec.tv_speed, longitudinal=spec.gap)
    tvs = template.tvs[:j] + (tv,) + template.tvs[j + 1:]
    scn = dataclasses.replace(
        template,
        name=f"{template.name}_case{spec.case:03d}",
        tvs=tvs,
        sim=dataclasses.replace(template.sim, seed=seed + spec.case),
    )
    validate(scn)
    return scn


_ROW_KEYS = ("collision", "min_clearance", "avg_abs_accel", "avg_abs_jerk", "max_lateral_offset", "degraded")


def _run_case(args) -> list[dict]:
    template, spec, seed = args
    base = dataclasses.asdict(spec) | {"below_threshold": spec.below_threshold}
    rows = []
    for name, fn in (("ilqr", run), ("braking", run_braking_baseline)):
        row = dict(base, planner=name)
        try:
            m = fn(case_scenario(template, spec, seed)).metrics
            row.update({k: m[k] for k in _ROW_KEYS}, failed=False)
        except Exception as exc:  # a failing case is recorded, not fatal
            row.update({k: None for k in _ROW_KEYS}, failed=True, error=f"{type(exc).__name__}: {exc}")
        rows.append(row)
    return rows


def _summarize(rows: list[dict]) -> dict:
    out = {}
    for name in ("ilqr", "braking"):
        ok = [r for r in rows if r["planner"] == name and not r["failed"]]
        out[name] = {
            "cases": len(ok),
            "failed": sum(1 for r in rows if r["planner"] == name and r["failed"]),
            "accidents": sum(1 for r in ok if r["collision"]),
            "accidents_below_threshold": sum(1 for r in ok if r["collision"] and r["below_threshold"]),
            "avg_abs_accel": float(np.mean([r["avg_abs_accel"] for r in ok])) if ok else None,
            "avg_abs_jerk": float(np.mean([r["avg_abs_jerk"] for r in ok])) if ok else None,
        }
    for key in ("avg_abs_accel", "avg_abs_jerk"):
        b, i = out["braking"][key], out["ilqr"][key]
        out[f"improvement_{key}_pct"] = 100.0 * (b - i) / b if b and i is not None else None
    out["cases_below_threshold"] = sum(1 for r in rows if r["planner"] == "ilqr" and r["below_threshold"])
    return out


def batch_campaign(template: Scenario, n_cases: int, seed: int, workers: int = 1) -> CampaignResult:
    """Run ``n_cases`` seeded cut-in variations under both planners.

    Results are ordered by case index regardless of ``workers``.
    """
    cases = sample_cases(template, n_cases, seed)
    jobs = [(template, c, seed) for c in cases]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            nested = list(pool.map(_run_case, jobs))
    else:
        nested = [_run_case(j) for j in jobs]
    rows = [r for pair in nested for r in pair]
    return CampaignResult(cases, rows, _summarize(rows))


_TABLE_COLS = ["case", "planner", "start_time", "duration", "tv_speed", "gap", "braking_threshold",
               "below_threshold", "failed", *_ROW_KEYS]


def emit_campaign(result: CampaignResult, out_dir, template: Optional[Scenario] = None, seed: Optional[int] = None) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"table": out / "campaign.csv", "summary": out / "campaign_summary.json"}

    def cell(v):
        if isinstance(v, bool):
            return int(v)
        return "" if v is None else v

    write_table(paths["table"], _TABLE_COLS, ([cell(r.get(c)) for c in _TABLE_COLS] for r in result.rows))
    doc = {
        "schema_version": SCHEMA_VERSION,
        "seed": seed,
        "n_cases": len(result.cases),
        "summary": result.summary,
        "errors": [{"case": r["case"], "planner": r["planner"], "error": r["error"]}
                   for r in result.rows if r.get("failed")],
    }
    if template is not None:
        doc["template"] = template.to_dict()
    paths["summary"].write_text(dumps(doc))
    return paths
