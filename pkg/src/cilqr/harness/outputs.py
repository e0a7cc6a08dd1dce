"""Trajectory tables and metrics documents.

Floats are written with 17 significant digits so that re-parsing returns
the identical binary value.
"""

import csv
import io
import json
import math
from pathlib import Path
from typing import Any, Iterable

import numpy as np

SCHEMA_VERSION = 1
TRAJECTORY_FILE = "trajectory.csv"
PLANS_FILE = "plans.csv"
METRICS_FILE = "metrics.json"
TIMING_FILE = "timing.json"


def fmt_float(x: float) -> str:
    return format(float(x), ".17g")


def _encode(obj: Any, indent: int, level: int) -> str:
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if obj is None or obj is True or obj is False:
        return json.dumps(obj)
    if isinstance(obj, (bool, np.bool_)):
        return json.dumps(bool(obj))
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return fmt_float(obj) if math.isfinite(obj) else "null"
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {_encode(v, indent, level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        seq = list(obj)
        if not seq:
            return "[]"
        if all(not isinstance(v, (dict, list, tuple, np.ndarray)) for v in seq):
            return "[" + ", ".join(_encode(v, indent, level + 1) for v in seq) + "]"
        return "[\n" + ",\n".join(pad + _encode(v, indent, level + 1) for v in seq) + "\n" + end + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps(obj: Any, indent: int = 2) -> str:
    """JSON text with 17-significant-digit floats; non-finite floats become null."""
    return _encode(obj, indent, 0) + "\n"


def _write(path: Path, text: str) -> None:
    try:
        path.write_text(text)
    except OSError as exc:
        raise OSError(f"{path}: cannot write output: {exc}") from exc


def write_table(path: Path, header: list[str], rows: Iterable[Iterable[Any]]) -> None:
    """Comma-separated table preceded by a ``# schema_version`` comment line."""
    buf = io.StringIO()
    buf.write(f"# schema_version: {SCHEMA_VERSION}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt_float(v) if isinstance(v, (float, np.floating)) else v for v in row])
    _write(path, buf.getvalue())


def read_table(path) -> tuple[list[str], np.ndarray]:
    """Parse a numeric table written by :func:`write_table`."""
    lines = [ln for ln in Path(path).read_text().splitlines() if not ln.startswith("#")]
    header = lines[0].split(",")
    data = [[float(v) for v in ln.split(",")] for ln in lines[1:]]
    return header, np.array(data, dtype=float).reshape(-1, len(header))


def trajectory_rows(result) -> tuple[list[str], list[list[float]]]:
    scn = result.scenario
    states, controls = result.executed.states, result.executed.controls
    dt = result.executed.dt
    header = ["t", "px", "py", "v", "psi", "a", "r"] + [f"clearance_tv{tv.id}" for tv in scn.tvs]
    rows = []
    for k in range(states.shape[0]):
        u = controls[k] if k < controls.shape[0] else (math.nan, math.nan)
        rows.append([k * dt, *states[k], *u, *result.clearances[k]])
    return header, rows


def emit_outputs(result, out_dir, include_plans: bool = False) -> dict:
    """Write trajectory, metrics/config and timing files; returns their paths."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"{out}: cannot create output directory: {exc}") from exc
    paths = {"trajectory": out / TRAJECTORY_FILE, "metrics": out / METRICS_FILE, "timing": out / TIMING_FILE}

    header, rows = trajectory_rows(result)
    write_table(paths["trajectory"], header, rows)

    scn = result.scenario
    doc = {
        "schema_version": SCHEMA_VERSION,
        "scenario": scn.name,
        "metrics": result.metrics,
        "config": scn.to_dict(),
        "defaults_used": list(scn.defaults_used),
    }
    _write(paths["metrics"], dumps(doc))

    t = result.timings_ms
    timing = {
        "schema_version": SCHEMA_VERSION,
        "per_cycle_solve_ms": list(t),
        "mean_solve_ms": float(np.mean(t)) if t else None,
        "max_solve_ms": float(np.max(t)) if t else None,
    }
    _write(paths["timing"], dumps(timing))

    if include_plans:
        paths["plans"] = out / PLANS_FILE
        plan_rows = []
        for c, p in enumerate(result.plans):
            for k in range(p.states.shape[0]):
                u = p.controls[k] if k < p.controls.shape[0] else (math.nan, math.nan)
                plan_rows.append([c, p.t + k * result.executed.dt, *p.states[k], *u])
        write_table(paths["plans"], ["cycle", "t", "px", "py", "v", "psi", "a", "r"], plan_rows)
    return paths
