import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from calibcube.ellipse import fit_ellipse
from calibcube.errors import DegenerateConfiguration, TooFewPoints


def ellipse_points(center, a, b, angle, n, start=0.0, span=2 * np.pi):
    t = start + span * np.arange(n) / n
    c, s = np.cos(angle), np.sin(angle)
    x, y = a * np.cos(t), b * np.sin(t)
    return np.column_stack([center[0] + c * x - s * y, center[1] + s * x + c * y])


def test_circle_exact():
    e = fit_ellipse(ellipse_points((10, 10), 5, 5, 0.0, 12))
    assert np.allclose(e.center, [10, 10], atol=1e-6)
    assert np.allclose(e.semi_axes, [5, 5], atol=1e-6)


def test_rotated_ellipse_exact():
    e = fit_ellipse(ellipse_points((-3.5, 120.25), 9, 4, 0.6, 20))
    assert np.allclose(e.center, [-3.5, 120.25], atol=1e-6)
    assert np.allclose(e.semi_axes, [9, 4], atol=1e-6)
    assert np.isclose(np.cos(2 * (e.angle - 0.6)), 1.0, atol=1e-9)


def test_partial_arc_exact():
    e = fit_ellipse(ellipse_points((50, 40), 12, 7, -0.3, 15, start=0.2, span=np.pi))
    assert np.allclose(e.center, [50, 40], atol=1e-6)


def test_conic_satisfies_ellipse_constraint():
    e = fit_ellipse(ellipse_points((1, 2), 3, 2, 0.1, 10))
    A, B, C = e.conic[:3]
    assert 4 * A * C - B * B > 0


def test_too_few_points():
    with pytest.raises(TooFewPoints):
        fit_ellipse(ellipse_points((0, 0), 1, 1, 0, 5))


def test_collinear_points():
    pts = np.column_stack([np.arange(10.0), 2 * np.arange(10.0) + 1])
    with pytest.raises(DegenerateConfiguration):
        fit_ellipse(pts)


@settings(max_examples=50, deadline=None)
@given(st.floats(-500, 500), st.floats(-500, 500))
def test_translation_equivariance(dx, dy):
    rng = np.random.default_rng(0)
    pts = ellipse_points((20, 30), 6, 3, 0.4, 30) + rng.normal(0, 0.2, (30, 2))
    base = fit_ellipse(pts).center
    moved = fit_ellipse(pts + [dx, dy]).center
    assert np.allclose(moved - base, [dx, dy], atol=1e-9)


def test_noisy_fit_is_close():
    rng = np.random.default_rng(7)
    errs = []
    for _ in range(50):
        pts = ellipse_points((100, 80), 10, 6, 0.7, 30) + rng.normal(0, 0.3, (30, 2))
        errs.append(np.linalg.norm(fit_ellipse(pts).center - [100, 80]))
    assert np.sqrt(np.mean(np.square(errs))) < 0.15
