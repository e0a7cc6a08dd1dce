import math

import numpy as np
import pytest

from cilqr.vehicle_model import Trajectory, linearize, rollout, step

from helpers import central_jacobian, rel_err


def test_step_examples():
    np.testing.assert_allclose(step([0, 0, 20, 0], [0, 0], 0.25), [5, 0, 20, 0])
    np.testing.assert_allclose(step([0, 0, 20, 0], [2, 0], 0.25), [5, 0, 20.5, 0])
    np.testing.assert_allclose(
        step([0, 0, 10, math.pi / 2], [0, 0.1], 0.25), [0, 2.5, 10, math.pi / 2 + 0.025], atol=1e-12
    )


def test_step_rejects_bad_input():
    with pytest.raises(ValueError):
        step([0, 0, np.nan, 0], [0, 0], 0.25)
    with pytest.raises(ValueError):
        step([0, 0, 1, 0], [np.inf, 0], 0.25)
    with pytest.raises(ValueError):
        step([0, 0, 1, 0], [0, 0], 0.0)


def test_step_does_not_wrap_yaw():
    x = step([0, 0, 1, 3.1], [0, 1.0], 1.0)
    assert x[3] == pytest.approx(4.1)


def test_step_broadcasts_over_batches():
    rng = np.random.default_rng(0)
    xs, us = rng.normal(size=(7, 4)), rng.normal(size=(7, 2))
    batched = step(xs, us, 0.1)
    for i in range(7):
        np.testing.assert_array_equal(batched[i], step(xs[i], us[i], 0.1))


def test_rollout_examples():
    tr = rollout([0, 0, 20, 0], np.zeros((20, 2)), 0.25)
    np.testing.assert_allclose(tr.states[-1], [100, 0, 20, 0])
    assert tr.consistent and tr.horizon == 20

    tr = rollout([0, 0, 0, 0], np.column_stack([np.zeros(10), np.linspace(-1, 1, 10)]), 0.25)
    assert np.all(tr.states[:, :2] == 0)

    u = np.zeros((12, 2))
    u[:8, 0] = 2.0
    tr = rollout([0, 0, 20, 0], u, 0.25)
    assert tr.states[-1, 2] == pytest.approx(24.0)
    # hand-summed Euler recursion: px grows by v_k * dt with v_k = 20 + 0.5 k for k < 8, then 24
    v = [20 + 0.5 * k for k in range(9)] + [24.0] * 3
    assert tr.states[-1, 0] == pytest.approx(0.25 * sum(v[:12]))


def test_trajectory_validation():
    with pytest.raises(ValueError):
        Trajectory(np.zeros((3, 4)), np.zeros((3, 2)), 0.25)
    with pytest.raises(ValueError):
        Trajectory(np.zeros((3, 3)), np.zeros((2, 2)), 0.25)
    with pytest.raises(ValueError):
        rollout([0, 0, 0, 0], np.zeros((0, 2)), 0.25)


def test_linearize_examples():
    fx, fu = linearize([0, 0, 20, 0], [0, 0], 0.25)
    assert fx[0, 2] == 0.25 and fx[1, 3] == 5.0 and fx[0, 3] == 0.0
    expected_fu = np.zeros((4, 2))
    expected_fu[2, 0] = expected_fu[3, 1] = 0.25
    rng = np.random.default_rng(1)
    for x in rng.normal(size=(5, 4)):
        np.testing.assert_array_equal(linearize(x, [0.3, -0.1], 0.25)[1], expected_fu)


def test_linearize_matches_finite_differences():
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(100):
        x = rng.normal(size=4) * [50, 5, 10, 1.5]
        u = rng.normal(size=2) * [2, 0.2]
        fx, fu = linearize(x, u, 0.25)
        worst = max(worst, rel_err(fx, central_jacobian(lambda z: step(z, u, 0.25), x)))
        worst = max(worst, rel_err(fu, central_jacobian(lambda w: step(x, w, 0.25), u)))
    assert worst < 1e-6
