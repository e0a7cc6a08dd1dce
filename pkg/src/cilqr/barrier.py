"""Exponential barrier relaxation and the planner's box/friction/road constraints.

Every constraint is written as ``g < 0`` before being turned into the cost
``b = q1 * exp(q2 * g)``.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np
import numpy.typing as npt

from .cost_model import QuadraticExpansion
from .vehicle_model import ACC, CONTROL_DIM, PX, PY, STATE_DIM, YAW_RATE

DoubleArray = npt.NDArray[np.float64]

GRAVITY = 9.81  # [m/s^2]
EXPONENT_CLAMP = 40.0


@dataclass(frozen=True)
class BarrierParams:
    q1: float = 1e2
    q2: float = 10.0

    def __post_init__(self) -> None:
        if not (self.q1 > 0 and self.q2 > 0):
            raise ValueError(f"barrier coefficients must be positive, got q1={self.q1}, q2={self.q2}")


@dataclass(frozen=True)
class ControlBounds:
    a_min: float = -4.0
    a_max: float = 2.0
    r_min: float = -0.25
    r_max: float = 0.25

    def __post_init__(self) -> None:
        if not (self.a_min < self.a_max and self.r_min < self.r_max):
            raise ValueError(f"invalid control bounds {self}")


@dataclass(frozen=True)
class FrictionEnvelope:
    mu_hat: float = 0.9
    g_const: float = GRAVITY

    def __post_init__(self) -> None:
        if not 0 < self.mu_hat <= 1.2:
            raise ValueError(f"mu_hat must lie in (0, 1.2], got {self.mu_hat}")


@dataclass(frozen=True)
class BoundaryPolynomials:
    """Left/right road edges as ``y = sum(c[k] * x**k)`` (lowest order first)."""

    left: tuple[float, ...]
    right: tuple[float, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "left", tuple(float(c) for c in self.left))
        object.__setattr__(self, "right", tuple(float(c) for c in self.right))
        if not self.left or not self.right:
            raise ValueError("boundary polynomials need at least one coefficient")


class InfeasibleEnvelopeError(ValueError):
    """Acceleration bounds exceed what the friction envelope allows."""


@dataclass
class BarrierExpansion(QuadraticExpansion):
    saturated: npt.NDArray[np.bool_] = None


def exp_barrier(
    g_val: npt.ArrayLike,
    gx: Optional[npt.ArrayLike] = None,
    gu: Optional[npt.ArrayLike] = None,
    gxx: Optional[npt.ArrayLike] = None,
    guu: Optional[npt.ArrayLike] = None,
    gxu: Optional[npt.ArrayLike] = None,
    p: BarrierParams = BarrierParams(),
) -> BarrierExpansion:
    """Quadratize ``q1 * exp(q2 * g)`` given the derivatives of ``g``.

    Missing derivative blocks are zero.  If ``q2 * g`` exceeds the clamp the
    exponential is evaluated at the clamp (value and derivatives alike) and
    the row is flagged in ``saturated``.
    """
    g = np.asarray(g_val, dtype=float)
    batch = g.shape
    gx = np.zeros(batch + (STATE_DIM,)) if gx is None else np.broadcast_to(gx, batch + (STATE_DIM,))
    gu = np.zeros(batch + (CONTROL_DIM,)) if gu is None else np.broadcast_to(gu, batch + (CONTROL_DIM,))

    arg = p.q2 * g
    saturated = arg > EXPONENT_CLAMP
    e = p.q1 * np.exp(np.minimum(arg, EXPONENT_CLAMP))
    c = p.q2 * e  # first-derivative multiplier

    bxx = p.q2 * gx[..., :, None] * gx[..., None, :]
    buu = p.q2 * gu[..., :, None] * gu[..., None, :]
    bxu = p.q2 * gx[..., :, None] * gu[..., None, :]
    if gxx is not None:
        bxx = bxx + gxx
    if guu is not None:
        buu = buu + guu
    if gxu is not None:
        bxu = bxu + gxu

    return BarrierExpansion(
        value=e,
        lx=c[..., None] * gx,
        lu=c[..., None] * gu,
        lxx=c[..., None, None] * bxx,
        luu=c[..., None, None] * buu,
        lxu=c[..., None, None] * bxu,
        saturated=saturated,
    )


def sum_rows(expansion: QuadraticExpansion) -> QuadraticExpansion:
    """Collapse the trailing constraint-row axis of a barrier expansion."""
    return QuadraticExpansion(
        expansion.value.sum(axis=-1),
        expansion.lx.sum(axis=-2),
        expansion.lu.sum(axis=-2),
        expansion.lxx.sum(axis=-3),
        expansion.luu.sum(axis=-3),
        expansion.lxu.sum(axis=-3),
    )


def control_bound_constraints(u: npt.ArrayLike, bounds: ControlBounds) -> tuple[DoubleArray, DoubleArray]:
    """Rows ``a - a_max, a_min - a, r - r_max, r_min - r`` and their control gradients.

    Returns ``g`` of shape ``(..., 4)`` and ``gu`` of shape ``(..., 4, 2)``.
    """
    u = np.asarray(u, dtype=float)
    a, r = u[..., ACC], u[..., YAW_RATE]
    g = np.stack([a - bounds.a_max, bounds.a_min - a, r - bounds.r_max, bounds.r_min - r], axis=-1)
    gu_rows = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])
    gu = np.broadcast_to(gu_rows, u.shape[:-1] + (4, CONTROL_DIM))
    return g, gu


def friction_feasible_check(bounds: ControlBounds, env: FrictionEnvelope, v: float) -> tuple[bool, dict]:
    """Check the box bounds against the friction ellipse at speed ``v``.

    Returns ``(feasible, margins)`` where every margin must be positive for
    the corresponding inequality to hold.
    """
    if not v > 0:
        raise ValueError(f"speed must be positive, got {v}")
    mu_g = env.mu_hat * env.g_const
    a_bar = max(abs(bounds.a_min), abs(bounds.a_max))
    if mu_g**2 <= a_bar**2:
        raise InfeasibleEnvelopeError(
            f"friction limit mu*g={mu_g:.4f} m/s^2 does not exceed max |a|={a_bar:.4f} m/s^2"
        )
    r_lim = np.sqrt(mu_g**2 - a_bar**2) / v
    margins = {
        "a_min": bounds.a_min + mu_g,
        "a_max": mu_g - bounds.a_max,
        "r_min": bounds.r_min + r_lim,
        "r_max": r_lim - bounds.r_max,
        "r_limit": r_lim,
    }
    feasible = all(margins[k] > 0 for k in ("a_min", "a_max", "r_min", "r_max"))
    return feasible, margins


def road_boundary_constraints(
    x: npt.ArrayLike, b: BoundaryPolynomials
) -> tuple[DoubleArray, DoubleArray, DoubleArray]:
    """Rows ``py - left(px) < 0`` and ``right(px) - py < 0``.

    Returns ``g (..., 2)``, ``gx (..., 2, 4)``, ``gxx (..., 2, 4, 4)``.
    """
    x = np.asarray(x, dtype=float)
    px, py = x[..., PX], x[..., PY]
    P = np.polynomial.polynomial
    left, right = np.array(b.left), np.array(b.right)
    dleft, dright = P.polyder(left), P.polyder(right)
    ddleft, ddright = P.polyder(left, 2), P.polyder(right, 2)

    batch = x.shape[:-1]
    g = np.stack([py - P.polyval(px, left), P.polyval(px, right) - py], axis=-1)
    gx = np.zeros(batch + (2, STATE_DIM))
    gx[..., 0, PX] = -P.polyval(px, dleft)
    gx[..., 0, PY] = 1.0
    gx[..., 1, PX] = P.polyval(px, dright)
    gx[..., 1, PY] = -1.0
    gxx = np.zeros(batch + (2, STATE_DIM, STATE_DIM))
    gxx[..., 0, PX, PX] = -P.polyval(px, ddleft)
    gxx[..., 1, PX, PX] = P.polyval(px, ddright)
    return g, gx, gxx

