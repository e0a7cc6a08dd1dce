"""Quadratic stage and terminal costs with exact gradients and Hessians.

Every cost returns a :class:`QuadraticExpansion`.  Inputs may carry leading
batch dimensions (e.g. one row per time step), in which case every field of
the expansion carries the same leading dimensions.
"""

from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np
import numpy.typing as npt

from .vehicle_model import CONTROL_DIM, PSI, PX, PY, STATE_DIM, V

DoubleArray = npt.NDArray[np.float64]


@dataclass
class QuadraticExpansion:
    """Cost value with first and second derivatives in state and control."""

    value: DoubleArray
    lx: DoubleArray
    lu: DoubleArray
    lxx: DoubleArray
    luu: DoubleArray
    lxu: DoubleArray

    @classmethod
    def zeros(cls, batch: tuple = ()) -> "QuadraticExpansion":
        return cls(
            value=np.zeros(batch),
            lx=np.zeros(batch + (STATE_DIM,)),
            lu=np.zeros(batch + (CONTROL_DIM,)),
            lxx=np.zeros(batch + (STATE_DIM, STATE_DIM)),
            luu=np.zeros(batch + (CONTROL_DIM, CONTROL_DIM)),
            lxu=np.zeros(batch + (STATE_DIM, CONTROL_DIM)),
        )

    @property
    def batch_shape(self) -> tuple:
        return np.shape(self.value)

    def __add__(self, other: "QuadraticExpansion") -> "QuadraticExpansion":
        return QuadraticExpansion(
            self.value + other.value,
            self.lx + other.lx,
            self.lu + other.lu,
            self.lxx + other.lxx,
            self.luu + other.luu,
            self.lxu + other.lxu,
        )

    def __getitem__(self, idx) -> "QuadraticExpansion":
        return QuadraticExpansion(
            self.value[idx], self.lx[idx], self.lu[idx], self.lxx[idx], self.luu[idx], self.lxu[idx]
        )

    def symmetrized(self) -> "QuadraticExpansion":
        return QuadraticExpansion(
            self.value,
            self.lx,
            self.lu,
            0.5 * (self.lxx + np.swapaxes(self.lxx, -1, -2)),
            0.5 * (self.luu + np.swapaxes(self.luu, -1, -2)),
            self.lxu,
        )


@dataclass(frozen=True)
class CostWeights:
    """Weights of the control, adjusting, tracking and terminal costs (published defaults)."""

    w_a: float = 1e3
    w_r: float = 1e5
    w_px: float = 1.0
    w_py: float = 1.0
    w_v: float = 1e4
    w_psi: float = 1e4
    w_pref: float = 1e5
    w_vref: float = 1e3
    w_psif: float = 1e4
    w_vf: float = 1e3

    def __post_init__(self) -> None:
        for name, val in self.__dict__.items():
            if not val >= 0:
                raise ValueError(f"weight {name} must be nonnegative, got {val}")


@dataclass(frozen=True)
class TerminalTarget:
    psi_f: float
    v_f: float


@dataclass(frozen=True)
class ReferenceLine:
    """Polyline reference with a desired speed.

    ``v_ref`` is either a scalar or one value per vertex (linearly interpolated
    by arc length).
    """

    points: DoubleArray
    v_ref: float | DoubleArray
    _stations: DoubleArray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 2:
            raise ValueError("reference line needs at least two 2-D vertices")
        seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
        if np.any(seg <= 0):
            raise ValueError("reference line has repeated consecutive vertices")
        v_ref = np.asarray(self.v_ref, dtype=float)
        if v_ref.ndim not in (0, 1) or (v_ref.ndim == 1 and v_ref.shape[0] != pts.shape[0]):
            raise ValueError("v_ref must be a scalar or one value per vertex")
        if np.any(v_ref <= 0):
            raise ValueError("v_ref must be positive")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "v_ref", float(v_ref) if v_ref.ndim == 0 else v_ref)
        object.__setattr__(self, "_stations", np.concatenate([[0.0], np.cumsum(seg)]))

    @classmethod
    def straight(cls, y: float, x_start: float, x_end: float, v_ref: float) -> "ReferenceLine":
        return cls(np.array([[x_start, y], [x_end, y]]), v_ref)

    @classmethod
    def from_polynomial(
        cls, coeffs: Sequence[float], x_start: float, x_end: float, v_ref: float, spacing: float = 0.5
    ) -> "ReferenceLine":
        """Densify ``y = sum(coeffs[k] * x**k)`` to a polyline at roughly ``spacing`` metres."""
        n = max(2, int(np.ceil((x_end - x_start) / spacing)) + 1)
        xs = np.linspace(x_start, x_end, n)
        ys = np.polynomial.polynomial.polyval(xs, coeffs)
        return cls(np.column_stack([xs, ys]), v_ref)

    @property
    def stations(self) -> DoubleArray:
        return self._stations

    def speed_at(self, station: npt.ArrayLike) -> DoubleArray:
        if np.ndim(self.v_ref) == 0:
            return np.full(np.shape(station), self.v_ref)
        return np.interp(station, self._stations, self.v_ref)


_TIE_TOL = 1e-12


def project_to_reference(p: npt.ArrayLike, line: ReferenceLine) -> tuple[DoubleArray, DoubleArray]:
    """Nearest point on ``line`` to ``p`` and the reference speed there.

    Ties are broken toward the smallest arc-length station. ``p`` may be a
    single point ``(2,)`` or a batch ``(..., 2)``.
    """
    p = np.asarray(p, dtype=float)
    a = line.points[:-1]
    d = np.diff(line.points, axis=0)
    seg_len2 = np.einsum("ij,ij->i", d, d)

    rel = p[..., None, :] - a  # (..., S, 2)
    t = np.clip(np.einsum("...sj,sj->...s", rel, d) / seg_len2, 0.0, 1.0)
    foot = a + t[..., None] * d
    dist2 = np.sum((p[..., None, :] - foot) ** 2, axis=-1)

    # first segment whose distance is within tolerance of the minimum = smallest station
    best = np.argmax(dist2 <= dist2.min(axis=-1, keepdims=True) + _TIE_TOL, axis=-1)
    p_ref = np.take_along_axis(foot, best[..., None, None], axis=-2)[..., 0, :]
    t_best = np.take_along_axis(t, best[..., None], axis=-1)[..., 0]
    station = line.stations[best] + t_best * np.sqrt(seg_len2[best])
    return p_ref, line.speed_at(station)


def control_cost(u: npt.ArrayLike, w: CostWeights) -> QuadraticExpansion:
    u = np.asarray(u, dtype=float)
    wu = np.array([w.w_a, w.w_r])
    q = QuadraticExpansion.zeros(u.shape[:-1])
    q.value = 0.5 * np.sum(wu * u * u, axis=-1)
    q.lu = wu * u
    q.luu[...] = np.diag(wu)
    return q


def adjusting_cost(x: npt.ArrayLike, x_hat: npt.ArrayLike, w: CostWeights) -> QuadraticExpansion:
    """Penalty on deviation from the previous iterate ``x_hat``."""
    x = np.asarray(x, dtype=float)
    dx = x - np.asarray(x_hat, dtype=float)
    wx = np.array([w.w_px, w.w_py, w.w_v, w.w_psi])
    q = QuadraticExpansion.zeros(dx.shape[:-1])
    q.value = 0.5 * np.sum(wx * dx * dx, axis=-1)
    q.lx = wx * dx
    q.lxx[...] = np.diag(wx)
    return q


def tracking_cost(x: npt.ArrayLike, line: ReferenceLine, w: CostWeights) -> QuadraticExpansion:
    """Lane-keeping cost on (px, py, v) against the projected reference point.

    The reference point is treated as constant when differentiating.
    """
    x = np.asarray(x, dtype=float)
    p_ref, v_ref = project_to_reference(x[..., [PX, PY]], line)
    err = np.zeros(x.shape)
    err[..., PX] = x[..., PX] - p_ref[..., 0]
    err[..., PY] = x[..., PY] - p_ref[..., 1]
    err[..., V] = x[..., V] - v_ref
    wx = np.array([w.w_pref, w.w_pref, w.w_vref, 0.0])
    q = QuadraticExpansion.zeros(x.shape[:-1])
    q.value = 0.5 * np.sum(wx * err * err, axis=-1)
    q.lx = wx * err
    q.lxx[...] = np.diag(wx)
    return q


def terminal_cost(x_T: npt.ArrayLike, target: TerminalTarget, w: CostWeights) -> QuadraticExpansion:
    """Terminal heading and speed cost; the selected pair is (v, psi) in state order."""
    x_T = np.asarray(x_T, dtype=float)
    err = np.zeros(x_T.shape)
    err[..., V] = x_T[..., V] - target.v_f
    err[..., PSI] = x_T[..., PSI] - target.psi_f
    wx = np.array([0.0, 0.0, w.w_vf, w.w_psif])
    q = QuadraticExpansion.zeros(x_T.shape[:-1])
    q.value = 0.5 * np.sum(wx * err * err, axis=-1)
    q.lx = wx * err
    q.lxx[...] = np.diag(wx)
    return q


def total_stage_cost(
    x: npt.ArrayLike,
    u: npt.ArrayLike,
    x_hat: npt.ArrayLike,
    line: Optional[ReferenceLine],
    w: CostWeights,
    barrier_terms: Iterable[QuadraticExpansion] = (),
) -> QuadraticExpansion:
    """Control + adjusting + tracking costs plus any barrier expansions."""
    total = control_cost(u, w) + adjusting_cost(x, x_hat, w)
    if line is not None:
        total = total + tracking_cost(x, line, w)
    for term in barrier_terms:
        total = total + term
    return total.symmetrized()
