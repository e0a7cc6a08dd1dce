"""Finite-difference oracles shared by the test modules."""

import numpy as np


def central_jacobian(f, x, h=1e-6):
    """Jacobian of ``f`` at ``x`` by central differences; output shape ``f(x).shape + x.shape``."""
    x = np.asarray(x, dtype=float)
    f0 = np.asarray(f(x))
    out = np.empty(f0.shape + x.shape)
    for i in np.ndindex(x.shape):
        e = np.zeros_like(x)
        e[i] = h
        out[(...,) + i] = (np.asarray(f(x + e)) - np.asarray(f(x - e))) / (2 * h)
    return out


def rel_err(analytic, numeric, floor=1e-10):
    """Max abs difference scaled by the larger magnitude of the two arrays."""
    a, n = np.asarray(analytic, dtype=float), np.asarray(numeric, dtype=float)
    scale = max(np.abs(a).max(initial=0.0), np.abs(n).max(initial=0.0))
    diff = np.abs(a - n).max(initial=0.0)
    return diff / scale if scale > floor else diff


# One line per acceptance criterion, printed in the pytest terminal summary.
ACCEPTANCE_LINES: dict[int, str] = {}


def report(criterion: int, ok: bool, detail: str) -> None:
    line = f"criterion {criterion:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES[criterion] = line
    print(line)
