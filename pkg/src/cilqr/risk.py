"""Collision risk under Gaussian uncertainty of traffic-vehicle positions.

Two routes are provided:

* Monte Carlo estimates of the probability that the ego-minus-vertex
  displacement falls in the polygon's corner cone, together with its
  score-function gradient and Hessian.  Accurate but slow; used for
  validation and the optional slow planner mode.
* The expected exponential barrier of the zone distance, integrated with a
  five-point unscented transform.  This is the default real-time route.
"""

import functools
import math
from dataclasses import dataclass

import numpy as np
import numpy.typing as npt

from .barrier import BarrierParams, exp_barrier
from .cost_model import QuadraticExpansion
from .geometry import ConvexPolygon, Zone, ZoneResult, anchor_vertex, classify_zone
from .vehicle_model import PX, PY, STATE_DIM

DoubleArray = npt.NDArray[np.float64]

_POS = [PX, PY]


@dataclass(frozen=True)
class GaussianPosition:
    mean: DoubleArray
    cov: DoubleArray

    def __post_init__(self) -> None:
        mean = np.asarray(self.mean, dtype=float).reshape(2)
        cov = np.asarray(self.cov, dtype=float).reshape(2, 2)
        if not np.allclose(cov, cov.T, rtol=0, atol=1e-12):
            raise ValueError("covariance must be symmetric")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", 0.5 * (cov + cov.T))

    def require_pd(self) -> None:
        if np.linalg.eigvalsh(self.cov).min() <= 0:
            raise ValueError(f"covariance is not positive definite: {self.cov.tolist()}")


@dataclass(frozen=True)
class ConeRegion:
    """Closed cone swept counter-clockwise from ``dir1`` to ``dir2``.

    Equal directions denote the whole plane, opposite directions a half-plane.
    """

    apex: DoubleArray
    dir1: DoubleArray
    dir2: DoubleArray

    def __post_init__(self) -> None:
        d1 = np.asarray(self.dir1, dtype=float)
        d2 = np.asarray(self.dir2, dtype=float)
        object.__setattr__(self, "apex", np.asarray(self.apex, dtype=float).reshape(2))
        object.__setattr__(self, "dir1", d1 / np.linalg.norm(d1))
        object.__setattr__(self, "dir2", d2 / np.linalg.norm(d2))

    @property
    def sweep(self) -> float:
        d1, d2 = self.dir1, self.dir2
        ang = math.atan2(d1[0] * d2[1] - d1[1] * d2[0], d1 @ d2) % (2 * math.pi)
        return 2 * math.pi if ang < 1e-12 else ang

    @classmethod
    def full_plane(cls, apex=(0.0, 0.0)) -> "ConeRegion":
        return cls(apex, (1.0, 0.0), (1.0, 0.0))

    def contains(self, pts: npt.ArrayLike) -> npt.NDArray[np.bool_]:
        q = np.asarray(pts, dtype=float) - self.apex
        d1, d2 = self.dir1, self.dir2
        c1 = d1[0] * q[..., 1] - d1[1] * q[..., 0]  # cross(dir1, q)
        c2 = q[..., 0] * d2[1] - q[..., 1] * d2[0]  # cross(q, dir2)
        sweep = self.sweep
        if sweep >= 2 * math.pi:
            return np.ones(q.shape[:-1], dtype=bool)
        if sweep <= math.pi:
            return (c1 >= 0) & (c2 >= 0)
        return ~((c1 < 0) & (c2 < 0))


def interior_cone(zr: ZoneResult) -> ConeRegion:
    """Cone of the polygon's interior angle at the frame vertex, apex at the origin.

    Expressed in displacement coordinates ``P - O``.
    """
    return ConeRegion(np.zeros(2), zr.t_next, -zr.t_prev)


@dataclass(frozen=True)
class RiskParams:
    p_max: float = 0.1
    mc_samples: int = 4000
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0 < self.p_max < 1:
            raise ValueError(f"p_max must lie in (0, 1), got {self.p_max}")
        if self.mc_samples < 1000:
            raise ValueError(f"mc_samples must be at least 1000, got {self.mc_samples}")


# Planner-sized sample sets are reused every iteration; large validation sets are not cached.
_CACHE_MAX_SAMPLES = 100_000


def _draw_normals(seed: int, stream: int, n: int) -> DoubleArray:
    ss = np.random.SeedSequence(seed, spawn_key=(stream,))
    z = np.random.Generator(np.random.Philox(ss)).standard_normal((n, 2))
    z.setflags(write=False)
    return z


_cached_normals = functools.lru_cache(maxsize=512)(_draw_normals)


def _standard_normals(seed: int, stream: int, n: int) -> DoubleArray:
    return _cached_normals(seed, stream, n) if n <= _CACHE_MAX_SAMPLES else _draw_normals(seed, stream, n)


@dataclass(frozen=True)
class ConeEstimate:
    probability: float
    stderr: float
    gradient: DoubleArray  # (4,)
    hessian: DoubleArray  # (4, 4)


def _cone_samples(x, cone, gp, rp, stream):
    gp.require_pd()
    x = np.asarray(x, dtype=float)
    mean = x[_POS] - gp.mean
    L = np.linalg.cholesky(gp.cov)
    z = _standard_normals(int(rp.seed), int(stream), int(rp.mc_samples))
    xi = mean + z @ L.T
    return z, L, cone.contains(xi)


def cone_collision_probability(
    x: npt.ArrayLike, cone: ConeRegion, gp: GaussianPosition, rp: RiskParams, stream: int = 0
) -> tuple[float, float]:
    """Monte Carlo probability that ``p - O`` with ``O ~ N(mean, cov)`` lies in ``cone``.

    Returns ``(estimate, binomial standard error)``.  Identical seed and
    stream give bitwise-identical results.
    """
    _, _, inside = _cone_samples(x, cone, gp, rp, stream)
    p = float(np.mean(inside))
    return p, math.sqrt(p * (1.0 - p) / inside.size)


def cone_probability_derivatives(
    x: npt.ArrayLike, cone: ConeRegion, gp: GaussianPosition, rp: RiskParams, stream: int = 0
) -> ConeEstimate:
    """Probability with score-function gradient and Hessian in the full state.

    A cone covering every sample (or none) gives exactly zero derivatives.
    The sample set is the same one :func:`cone_collision_probability` uses.
    """
    z, L, inside = _cone_samples(x, cone, gp, rp, stream)
    n = inside.size
    p = float(np.mean(inside))
    # score Sigma^-1 (xi - mean) = L^-T z; the score and (score score^T - Sigma^-1)
    # have zero mean, so the estimated probability serves as a variance-reducing baseline
    score = np.linalg.solve(L.T, z.T).T
    w = inside - p
    grad = np.zeros(STATE_DIM)
    grad[_POS] = w @ score / n
    hess = np.zeros((STATE_DIM, STATE_DIM))
    h2 = (score.T * w) @ score / n
    hess[np.ix_(_POS, _POS)] = 0.5 * (h2 + h2.T)
    return ConeEstimate(p, math.sqrt(p * (1.0 - p) / n), grad, hess)


def cone_probability_gradient(x, cone, gp, rp, stream: int = 0) -> DoubleArray:
    return cone_probability_derivatives(x, cone, gp, rp, stream).gradient


def cone_probability_hessian(x, cone, gp, rp, stream: int = 0) -> DoubleArray:
    return cone_probability_derivatives(x, cone, gp, rp, stream).hessian


def mrr_probability_check(prob: float, rp: RiskParams) -> bool:
    if not 0.0 <= prob <= 1.0:
        raise ValueError(f"probability out of range: {prob}")
    return prob < rp.p_max


@dataclass(frozen=True)
class SigmaPointSet:
    points: DoubleArray  # (5, 2)
    weights_mean: DoubleArray
    weights_cov: DoubleArray

    def mean(self) -> DoubleArray:
        return self.weights_mean @ self.points

    def covariance(self) -> DoubleArray:
        d = self.points - self.mean()
        return (self.weights_cov[:, None] * d).T @ d


UT_ALPHA, UT_BETA, UT_KAPPA = 1.0, 2.0, 1.0


def sigma_points(gp: GaussianPosition) -> SigmaPointSet:
    """Symmetric 2n+1 sigma points (alpha=1, beta=2, kappa=1) using the symmetric square root."""
    n = 2
    lam = UT_ALPHA**2 * (n + UT_KAPPA) - n
    evals, evecs = np.linalg.eigh(gp.cov)
    if evals.min() <= 0:
        raise ValueError(f"covariance is not positive definite: {gp.cov.tolist()}")
    root = (evecs * np.sqrt((n + lam) * evals)) @ evecs.T
    pts = np.vstack([gp.mean, gp.mean + root.T, gp.mean - root.T])
    wm = np.full(2 * n + 1, 1.0 / (2 * (n + lam)))
    wc = wm.copy()
    wm[0] = lam / (n + lam)
    wc[0] = lam / (n + lam) + (1 - UT_ALPHA**2 + UT_BETA)
    return SigmaPointSet(pts, wm, wc)


def _fixed_zone_distance(zr: ZoneResult, zone: Zone, q: DoubleArray):
    """Zone distance of displacements ``q (m, 2)`` with gradient and Hessian."""
    m = q.shape[0]
    if zone in (Zone.I, Zone.IV, Zone.II, Zone.III):
        tau = zr.tau1 if zone in (Zone.I, Zone.IV) else zr.tau2
        return q @ tau, np.broadcast_to(tau, (m, 2)), np.zeros((m, 2, 2))
    r = np.linalg.norm(q, axis=1)
    r = np.where(r == 0.0, np.finfo(float).tiny, r)
    qh = q / r[:, None]
    hess = (np.eye(2) - qh[:, :, None] * qh[:, None, :]) / r[:, None, None]
    return r, qh, hess


def _project_psd(m: DoubleArray) -> DoubleArray:
    evals, evecs = np.linalg.eigh(0.5 * (m + m.T))
    return (evecs * np.maximum(evals, 0.0)) @ evecs.T


def expected_barrier(
    x: npt.ArrayLike,
    poly: ConvexPolygon,
    gp: GaussianPosition,
    bp: BarrierParams,
    d_min: float,
    project_psd: bool = True,
) -> QuadraticExpansion:
    """Unscented-transform expectation of ``q1 exp(q2 (d_min - d))``.

    ``poly`` sits at the mean TV position ``gp.mean``; the TV centroid
    uncertainty ``gp.cov`` shifts the whole polygon.  The vertex frame and
    zone are fixed at the mean displacement; derivatives are the exact
    derivatives of the sigma-point sum, which by Gaussian integration by
    parts estimate the same quantities as the score-weighted expectations.
    """
    x = np.asarray(x, dtype=float)
    p = x[_POS]
    zr = anchor_vertex(poly, p)
    zone = classify_zone(zr, p)
    sp = sigma_points(GaussianPosition(np.zeros(2), gp.cov))
    q = (p - zr.closest_vertex) + sp.points

    d, dd, ddd = _fixed_zone_distance(zr, zone, q)
    m = q.shape[0]
    gx = np.zeros((m, STATE_DIM))
    gx[:, _POS] = -dd
    gxx = np.zeros((m, STATE_DIM, STATE_DIM))
    gxx[:, 0:2, 0:2] = -ddd
    rows = exp_barrier(d_min - d, gx=gx, gxx=gxx, p=bp)

    w = sp.weights_mean
    out = QuadraticExpansion(
        value=np.asarray(w @ rows.value),
        lx=w @ rows.lx,
        lu=w @ rows.lu,
        lxx=np.einsum("i,ijk->jk", w, rows.lxx),
        luu=np.einsum("i,ijk->jk", w, rows.luu),
        lxu=np.einsum("i,ijk->jk", w, rows.lxu),
    )
    out.lxx = 0.5 * (out.lxx + out.lxx.T)
    if project_psd:
        out.lxx = _project_psd(out.lxx)
    return out


def probability_barrier(
    x: npt.ArrayLike,
    poly: ConvexPolygon,
    gp: GaussianPosition,
    bp: BarrierParams,
    rp: RiskParams,
    stream: int = 0,
) -> QuadraticExpansion:
    """Exponential barrier on ``P(p - O in corner cone) - p_max`` (slow mode)."""
    x = np.asarray(x, dtype=float)
    zr = anchor_vertex(poly, x[_POS])
    cone = interior_cone(zr)
    est = cone_probability_derivatives(x, cone, GaussianPosition(zr.closest_vertex, gp.cov), rp, stream)
    return exp_barrier(est.probability - rp.p_max, gx=est.gradient, gxx=est.hessian, p=bp)
