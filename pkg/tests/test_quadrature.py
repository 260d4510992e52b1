import numpy as np
import pytest
from numpy.testing import assert_allclose

from perfhom.quadrature import (
    ball_rule,
    ball_volume,
    box_rule,
    composite_interval,
    masked_ball_rule,
    reference_cube,
    shell_rule,
    sphere_rule,
)


def test_gauss_exact_for_polynomials():
    x, w = composite_interval([0.0, 0.3, 1.0], 4)
    for k in range(8):
        assert_allclose(w @ x**k, 1.0 / (k + 1), rtol=1e-14)


@pytest.mark.parametrize("n", [1, 2, 3, 4])
def test_reference_cube_weights(n):
    pts, w = reference_cube(n, 3, 2)
    assert_allclose(w.sum(), 1.0, rtol=1e-14)
    assert np.all(np.abs(pts) < 0.5)


def test_box_rule_integrates_monomial():
    pts, w = box_rule([0, -1, 2], [1, 1, 3], 4)
    val = w @ (pts[:, 0] ** 2 * pts[:, 1] ** 2 * pts[:, 2])
    # (1/3) * (2/3) * (5/2)
    assert_allclose(val, 5.0 / 9.0, rtol=1e-13)


def test_sphere_rule_area_and_moments():
    dirs, w = sphere_rule(8)
    assert_allclose(w.sum(), 4 * np.pi, rtol=1e-14)
    assert_allclose(w @ dirs[:, 2] ** 2, 4 * np.pi / 3, rtol=1e-13)
    assert_allclose(w @ (dirs[:, 0] * dirs[:, 1]), 0.0, atol=1e-14)


def test_ball_and_shell_volumes():
    pts, w = ball_rule([0.1, 0.2, 0.3], 0.7)
    assert_allclose(w.sum(), ball_volume(0.7, 3), rtol=1e-13)
    pts, w, r = shell_rule([0, 0, 0], [0.5, 0.8, 1.0])
    assert_allclose(w.sum(), 4 * np.pi / 3 * (1 - 0.125), rtol=1e-13)
    assert np.all((r > 0.5) & (r < 1.0))


def test_masked_ball_rule_volume():
    for n in (3, 4):
        _, w = masked_ball_rule(np.zeros(n), 0.3)
        assert_allclose(w.sum(), ball_volume(0.3, n), rtol=1e-14)


def test_ball_volume_known_values():
    assert_allclose(ball_volume(1.0, 3), 4 * np.pi / 3)
    assert_allclose(ball_volume(2.0, 2), 4 * np.pi)
    assert_allclose(ball_volume(1.0, 4), np.pi**2 / 2)
