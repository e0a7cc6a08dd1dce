import math

import numpy as np
import pytest

from cilqr.barrier import BarrierParams, exp_barrier
from cilqr.geometry import OrientedRectangle, Zone, anchor_vertex, classify_zone, mdr_constraint, minkowski_sum
from cilqr.risk import (
    ConeRegion,
    GaussianPosition,
    RiskParams,
    cone_collision_probability,
    cone_probability_derivatives,
    cone_probability_gradient,
    cone_probability_hessian,
    expected_barrier,
    interior_cone,
    mrr_probability_check,
    probability_barrier,
    sigma_points,
)

from helpers import central_jacobian, rel_err

BP = BarrierParams(q1=100.0, q2=10.0)
POLY = minkowski_sum(OrientedRectangle((0, 0), 0.0, 5, 2), OrientedRectangle((0, 0), 0.0, 5, 2))  # 10 x 4


def _cone(a, sweep):
    return ConeRegion(np.zeros(2), (math.cos(a), math.sin(a)), (math.cos(a + sweep), math.sin(a + sweep)))


def _quadrature(cone, m, cov, n_r=400, n_t=400):
    """Probability, gradient and Hessian in the mean ``m`` of N(m, cov) over ``cone``.

    Gauss-Legendre in polar coordinates about the apex; independent of sampling.
    """
    cov_inv = np.linalg.inv(cov)
    a0 = math.atan2(cone.dir1[1], cone.dir1[0])
    R = np.linalg.norm(m - cone.apex) + 14 * math.sqrt(np.linalg.eigvalsh(cov).max())
    xr, wr = np.polynomial.legendre.leggauss(n_r)
    xt, wt = np.polynomial.legendre.leggauss(n_t)
    r, w_r = 0.5 * R * (xr + 1), 0.5 * R * wr
    t, w_t = a0 + 0.5 * cone.sweep * (xt + 1), 0.5 * cone.sweep * wt
    rr, tt = np.meshgrid(r, t, indexing="ij")
    w = np.outer(w_r, w_t) * rr
    pts = cone.apex + np.stack([rr * np.cos(tt), rr * np.sin(tt)], axis=-1)
    d = pts - m
    s = d @ cov_inv
    dens = np.exp(-0.5 * np.einsum("...i,...i", s, d)) / (2 * math.pi * math.sqrt(np.linalg.det(cov)))
    wd = w * dens
    p = wd.sum()
    grad = np.einsum("ij,ijk->k", wd, s)
    hess = np.einsum("ij,ijk,ijl->kl", wd, s, s) - p * cov_inv
    return p, grad, hess


def _state(pos):
    return np.array([pos[0], pos[1], 20.0, 0.0])


def test_gaussian_and_params_validation():
    with pytest.raises(ValueError):
        GaussianPosition([0, 0], [[1, 0.5], [0, 1]])
    with pytest.raises(ValueError):
        GaussianPosition([0, 0], np.zeros((2, 2))).require_pd()
    with pytest.raises(ValueError):
        RiskParams(p_max=1.0)
    with pytest.raises(ValueError):
        RiskParams(mc_samples=999)
    with pytest.raises(ValueError):
        cone_collision_probability(_state([0, 0]), _cone(0, 1), GaussianPosition([0, 0], np.diag([1.0, 0.0])), RiskParams())


def test_cone_membership():
    c = _cone(0.0, math.pi / 2)
    np.testing.assert_array_equal(c.contains([[1, 1], [-1, 1], [1, -1], [0, 0], [1, 0]]), [1, 0, 0, 1, 1])
    wide = _cone(0.0, 1.5 * math.pi)
    np.testing.assert_array_equal(wide.contains([[1, 1], [-1, -1], [1, -1]]), [1, 1, 0])
    assert ConeRegion.full_plane().contains([[3.0, -7.0]]).all()
    assert ConeRegion.full_plane().sweep == 2 * math.pi


@pytest.mark.parametrize("sweep, expected", [(math.pi, 0.5), (math.pi / 2, 0.25)])
def test_symmetric_cones_at_mean(sweep, expected):
    rp = RiskParams(mc_samples=1_000_000, seed=3)
    gp = GaussianPosition([2.0, -1.0], 0.25 * np.eye(2))
    p, se = cone_collision_probability(_state([2.0, -1.0]), _cone(0.3, sweep), gp, rp)
    assert abs(p - expected) <= 3 * se


def test_sixty_degree_cone_across_seeds():
    gp = GaussianPosition([0.0, 0.0], 0.25 * np.eye(2))
    cone = ConeRegion([1.0, 0.0], (1.0, 0.0), (0.5, math.sqrt(3) / 2))
    x = _state([0.0, 0.0])
    exact = _quadrature(cone, np.zeros(2), gp.cov)[0]
    ests = [cone_collision_probability(x, cone, gp, RiskParams(mc_samples=1_000_000, seed=s)) for s in range(5)]
    for p, se in ests:
        assert abs(p - exact) <= 3 * se
    for (p1, s1), (p2, s2) in zip(ests, ests[1:]):
        assert abs(p1 - p2) <= 3 * math.hypot(s1, s2)


def test_reproducible_bitwise():
    gp = GaussianPosition([0.3, 0.1], [[0.3, 0.05], [0.05, 0.2]])
    rp = RiskParams(mc_samples=20_000, seed=42)
    a = cone_probability_derivatives(_state([0.5, 0.5]), _cone(0.2, 1.3), gp, rp, stream=7)
    b = cone_probability_derivatives(_state([0.5, 0.5]), _cone(0.2, 1.3), gp, rp, stream=7)
    assert a.probability == b.probability
    assert a.gradient.tobytes() == b.gradient.tobytes() and a.hessian.tobytes() == b.hessian.tobytes()
    c = cone_probability_derivatives(_state([0.5, 0.5]), _cone(0.2, 1.3), gp, rp, stream=8)
    assert c.probability != a.probability
    assert cone_collision_probability(_state([0.5, 0.5]), _cone(0.2, 1.3), gp, rp, 7)[0] == a.probability


def test_standard_error_binomial_rate():
    gp = GaussianPosition([0.0, 0.0], 0.25 * np.eye(2))
    cone = _cone(0.4, 1.0)
    x = _state([0.2, 0.1])

    def spread(n):
        return np.std([cone_collision_probability(x, cone, gp, RiskParams(mc_samples=n, seed=s))[0]
                       for s in range(30)], ddof=1)

    ratio = spread(10_000) / spread(30_000)
    assert abs(ratio / math.sqrt(3) - 1) < 0.2


def test_full_plane_and_far_cone_derivatives_vanish():
    gp = GaussianPosition([0.0, 0.0], 0.25 * np.eye(2))
    est = cone_probability_derivatives(_state([0.4, -0.2]), ConeRegion.full_plane(), gp, RiskParams())
    assert est.probability == 1.0
    assert not est.gradient.any() and not est.hessian.any()
    far = ConeRegion([5.0, 0.0], (1.0, 0.0), (0.0, 1.0))  # apex 10 sigma away
    g = cone_probability_gradient(_state([0.0, 0.0]), far, gp, RiskParams(mc_samples=100_000))
    assert np.linalg.norm(g) < 1e-6


def _random_cone_config(rng):
    cone = _cone(rng.uniform(0, 2 * math.pi), rng.uniform(math.pi / 3, 0.9 * math.pi))
    cov = 0.25 * np.diag(rng.uniform(0.7, 1.4, 2))
    return cone, GaussianPosition(np.zeros(2), cov), _state(rng.normal(size=2) * 0.2)


def test_mc_derivatives_match_quadrature():
    rng = np.random.default_rng(20)
    for i in range(20):
        cone, gp, x = _random_cone_config(rng)
        est = cone_probability_derivatives(x, cone, gp, RiskParams(mc_samples=1_000_000, seed=i))
        p, g, H = _quadrature(cone, x[:2] - gp.mean, gp.cov)
        assert abs(est.probability - p) <= 3 * est.stderr
        assert np.linalg.norm(est.gradient[:2] - g) / np.linalg.norm(g) < 5e-2
        assert np.linalg.norm(est.hessian[:2, :2] - H) / np.linalg.norm(H) < 1e-1
        assert not est.gradient[2:].any()
        np.testing.assert_array_equal(est.hessian, est.hessian.T)


def test_mc_gradient_matches_common_random_number_differences():
    rng = np.random.default_rng(20)
    h = 1e-3
    errors = []
    for i in range(20):
        cone, gp, x = _random_cone_config(rng)
        rp = RiskParams(mc_samples=1_000_000, seed=i)
        g = cone_probability_gradient(x, cone, gp, rp)[:2]
        fd = np.array([
            (cone_collision_probability(x + h * e, cone, gp, rp)[0]
             - cone_collision_probability(x - h * e, cone, gp, rp)[0]) / (2 * h)
            for e in np.eye(4)[:2]
        ])
        errors.append(np.linalg.norm(g - fd) / np.linalg.norm(fd))
    print("max relative gradient/finite-difference gap:", max(errors))
    assert max(errors) < 5e-2


def test_hessian_helper_matches_derivatives():
    cone, gp, x = _random_cone_config(np.random.default_rng(0))
    rp = RiskParams()
    np.testing.assert_array_equal(cone_probability_hessian(x, cone, gp, rp),
                                  cone_probability_derivatives(x, cone, gp, rp).hessian)


def test_probability_check():
    rp = RiskParams(p_max=0.1)
    assert mrr_probability_check(0.05, rp)
    assert not mrr_probability_check(0.1, rp)
    assert mrr_probability_check(0.0, RiskParams(p_max=1e-6))
    with pytest.raises(ValueError):
        mrr_probability_check(1.5, rp)


def test_sigma_points_identity():
    sp = sigma_points(GaussianPosition([0, 0], np.eye(2)))
    r3 = math.sqrt(3)
    expected = {(0, 0), (r3, 0), (0, r3), (-r3, 0), (0, -r3)}
    assert {tuple(np.round(p, 12)) for p in sp.points} == {tuple(np.round(p, 12)) for p in expected}
    assert sp.weights_mean.sum() == pytest.approx(1.0, abs=1e-15)
    with pytest.raises(ValueError):
        sigma_points(GaussianPosition([0, 0], np.diag([1.0, 0.0])))


def test_sigma_points_reconstruct_moments():
    rng = np.random.default_rng(21)
    for _ in range(100):
        A = rng.normal(size=(2, 2))
        cov = A @ A.T + 1e-3 * np.eye(2)
        mu = rng.normal(size=2) * 10
        sp = sigma_points(GaussianPosition(mu, cov))
        assert np.abs(sp.mean() - mu).max() < 1e-12 * max(1.0, np.abs(mu).max())
        assert np.abs(sp.covariance() - cov).max() < 1e-10 * max(1.0, np.abs(cov).max())


def test_expected_barrier_degenerate_covariance():
    rng = np.random.default_rng(22)
    for _ in range(50):
        x = _state(rng.uniform(-15, 15, 2))
        ref = exp_barrier(mdr_constraint(x, POLY, 1.0).g, p=BP).value
        e = expected_barrier(x, POLY, GaussianPosition([0, 0], 1e-10 * np.eye(2)), BP, 1.0)
        assert abs(e.value - ref) <= 1e-6 * ref


def _linear_zone_point(rng):
    while True:
        p = rng.uniform(-12, 12, 2)
        zr = anchor_vertex(POLY, p)
        zone = classify_zone(zr, p)
        if zone is Zone.I and np.max(POLY.half_plane_values(p)) > 0.5:
            return p, zr


def test_expected_barrier_lognormal_closed_form():
    rng = np.random.default_rng(23)
    for _ in range(100):
        p, zr = _linear_zone_point(rng)
        tau = zr.tau1
        var_target = rng.uniform(0.01, 0.5) / BP.q2**2
        A = rng.normal(size=(2, 2))
        cov = A @ A.T + 0.05 * np.eye(2)
        cov *= var_target / (tau @ cov @ tau)
        e = expected_barrier(_state(p), POLY, GaussianPosition([0, 0], cov), BP, 1.0)
        closed = BP.q1 * math.exp(BP.q2 * (1.0 - tau @ (p - zr.closest_vertex))) * math.exp(BP.q2**2 * tau @ cov @ tau / 2)
        assert abs(e.value / closed - 1) < 0.05


def test_expected_barrier_matches_finite_differences():
    rng = np.random.default_rng(24)
    checked = 0
    while checked < 100:
        p = rng.uniform(-10, 10, 2)
        A = rng.normal(size=(2, 2)) * 0.3
        gp = GaussianPosition([0, 0], A @ A.T + 0.05 * np.eye(2))
        x = _state(p)
        zr, zone = anchor_vertex(POLY, p), classify_zone(anchor_vertex(POLY, p), p)
        h = 1e-5
        stable = all(
            classify_zone(anchor_vertex(POLY, p + s * 20 * h * e), p + s * 20 * h * e) is zone
            and anchor_vertex(POLY, p + s * 20 * h * e).index == zr.index
            for e in np.eye(2) for s in (-1, 1)
        )
        if not stable:
            continue
        f = lambda z: expected_barrier(z, POLY, gp, BP, 1.0, project_psd=False)
        e = f(x)
        assert rel_err(e.lx, central_jacobian(lambda z: f(z).value, x, h)) < 1e-4
        assert rel_err(e.lxx, central_jacobian(lambda z: f(z).lx, x, h)) < 1e-4
        checked += 1


def test_expected_barrier_hessian_projected_psd():
    rng = np.random.default_rng(25)
    for _ in range(100):
        A = rng.normal(size=(2, 2))
        e = expected_barrier(_state(rng.uniform(-8, 8, 2)), POLY, GaussianPosition([0, 0], A @ A.T + 0.01 * np.eye(2)), BP, 1.0)
        assert np.linalg.eigvalsh(e.lxx).min() >= -1e-9 * max(1.0, np.abs(e.lxx).max())


def test_expected_barrier_monotone_in_uncertainty():
    rng = np.random.default_rng(26)
    for _ in range(100):
        p, _ = _linear_zone_point(rng)
        A = rng.normal(size=(2, 2)) * 0.3
        cov = A @ A.T + 0.01 * np.eye(2)
        base = expected_barrier(_state(p), POLY, GaussianPosition([0, 0], cov), BP, 1.0).value
        grown = expected_barrier(_state(p), POLY, GaussianPosition([0, 0], cov * rng.uniform(1.01, 4)), BP, 1.0).value
        assert grown >= base


def test_interior_cone_and_probability_barrier():
    p = np.array([5.5, 2.5])  # just outside the (5, 2) corner
    zr = anchor_vertex(POLY, p)
    cone = interior_cone(zr)
    assert cone.sweep == pytest.approx(math.pi / 2)
    # polygon interior lies in the cone in displacement coordinates
    assert cone.contains(np.array([[-1.0, -1.0]]))[0] and not cone.contains(np.array([[1.0, 1.0]]))[0]
    gp = GaussianPosition([0, 0], 0.25 * np.eye(2))
    b = probability_barrier(_state(p), POLY, gp, BP, RiskParams(), stream=3)
    prob = cone_collision_probability(_state(p), cone, GaussianPosition(zr.closest_vertex, gp.cov), RiskParams(), 3)[0]
    assert b.value == pytest.approx(BP.q1 * math.exp(BP.q2 * (prob - 0.1)), rel=1e-12)
    # moving toward the polygon raises the probability
    assert b.lx[0] < 0 and b.lx[1] < 0
