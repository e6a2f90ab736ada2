import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pmsynrm import materials as m

NU0 = 1e7 / (4 * math.pi)
CURVE = m.MarroccoCurve()
SCHEMES = [m.InterpolationScheme.simp(3.0), m.InterpolationScheme.lukas(5.0), m.InterpolationScheme.td()]


def test_reluctivity_at_zero():
    assert abs(m.reluctivity(CURVE, 0.0) - 124.94) < 0.01


def test_reluctivity_first_branch():
    c = CURVE
    expected = NU0 * (c.eps + (c.c - c.eps) / (c.tau + 1.0))
    assert math.isclose(m.reluctivity(c, 1.0), expected, rel_tol=1e-14)


@pytest.mark.parametrize("variant", ["consistent", "published"])
def test_reluctivity_saturates_below_nu0(variant):
    curve = m.MarroccoCurve(variant=variant)
    nu = m.reluctivity(curve, 10.0)
    assert nu < NU0
    assert nu > 0.74 * NU0
    assert math.isclose(nu, NU0 * (1 - curve.m_s / 10.0), rel_tol=1e-14)


def test_saturation_branch_ordering():
    assert CURVE.b_s > CURVE.b_max


@pytest.mark.parametrize("variant", ["consistent", "published", "linear"])
def test_reluctivity_bounds(variant):
    curve = m.MarroccoCurve(variant=variant)
    b = np.linspace(0.0, 20.0, 20001)
    nu = m.reluctivity(curve, b)
    assert np.all(nu >= NU0 * curve.eps)
    assert np.all(nu < NU0)


def test_reluctivity_rejects_negative():
    with pytest.raises(m.DomainError):
        m.reluctivity(CURVE, -0.1)


def _fd_points(curve, n=100, seed=1):
    rng = np.random.default_rng(seed)
    # below ~0.3 T the curve is flat to ~1e-12 relative and differencing only sees roundoff
    b = rng.uniform(0.3, 4.0, 4 * n)
    # keep away from branch junctions where the one-sided rule applies
    far = (np.abs(b - curve.b_max) > 5e-3) & (np.abs(b - curve.b_s) > 5e-3)
    return b[far][:n]


def _fd4(f, x, h):
    return (-f(x + 2 * h) + 8 * f(x + h) - 8 * f(x - h) + f(x - 2 * h)) / (12 * h)


def test_reluctivity_derivative_matches_fd():
    b = _fd_points(CURVE)
    assert len(b) == 100
    fd = _fd4(lambda x: m.reluctivity(CURVE, x), b, 1e-3)
    an = m.reluctivity_derivative(CURVE, b)
    assert np.max(np.abs(fd - an) / np.abs(an)) < 1e-6


def test_reluctivity_derivative_examples():
    h = 1e-6
    fd = (m.reluctivity(CURVE, 0.5 + h) - m.reluctivity(CURVE, 0.5 - h)) / (2 * h)
    assert math.isclose(m.reluctivity_derivative(CURVE, 0.5), fd, rel_tol=1e-6)
    assert abs(m.reluctivity_derivative(CURVE, 0.01)) < 1e-12
    assert m.reluctivity_derivative(CURVE, 0.0) == 0.0
    b = 5.0
    assert math.isclose(m.reluctivity_derivative(CURVE, b), NU0 * CURVE.m_s / b ** 2, rel_tol=1e-14)


def test_junction_gaps_reported():
    # measured, not asserted to vanish; the consistent variant closes the upper junction
    gaps = CURVE.junction_gaps()
    assert all(np.isfinite(gaps))
    assert gaps[1] < 1e-6 * NU0
    pub = m.MarroccoCurve(variant="published").junction_gaps()
    assert pub[0] > 10 * gaps[0]


def test_td_conditions():
    s = m.InterpolationScheme.td()
    nu1 = NU0 * 1.57e-4
    assert abs(nu1 - 124.94) < 0.01
    assert m.interp_value(s, 0.0) == 0.0
    assert abs(m.interp_value(s, 1.0) - 1.0) < 1e-12
    assert abs(m.interp_derivative(s, 0.0) - 2 * NU0 / (NU0 + nu1)) < 1e-12
    assert abs(m.interp_derivative(s, 1.0) - 2 * nu1 / (NU0 + nu1)) < 1e-12
    a, b = s.td_coefficients
    assert abs(a + b - 1.0) < 1e-15
    assert math.isclose(m.interp_value(s, 0.5), 0.5 * a + 0.25 * b, rel_tol=1e-15)


def test_td_cubic_term_vanishes():
    s = m.InterpolationScheme.td()
    r = np.linspace(0, 1, 50)
    coeffs = np.polyfit(r, m.interp_value(s, r), 3)
    assert abs(coeffs[0]) < 1e-12


def test_scheme_examples():
    assert m.interp_value(m.InterpolationScheme.simp(3.0), 0.5) == 0.125
    for lam in (0.5, 1.0, 5.0, 20.0):
        assert abs(m.interp_value(m.InterpolationScheme.lukas(lam), 0.5) - 0.5) < 1e-15


@pytest.mark.parametrize("scheme", SCHEMES, ids=["simp", "lukas", "td"])
def test_scheme_endpoints_and_monotone(scheme):
    assert m.interp_value(scheme, 0.0) == 0.0
    assert abs(m.interp_value(scheme, 1.0) - 1.0) < 1e-15
    f = m.interp_value(scheme, np.linspace(0, 1, 1000))
    assert np.all(np.diff(f) >= 0)


@pytest.mark.parametrize("scheme", SCHEMES, ids=["simp", "lukas", "td"])
def test_scheme_derivative_matches_fd(scheme):
    r = np.random.default_rng(3).uniform(1e-3, 1 - 1e-3, 100)
    h = 1e-7
    fd = (m.interp_value(scheme, r + h) - m.interp_value(scheme, r - h)) / (2 * h)
    an = m.interp_derivative(scheme, r)
    assert np.max(np.abs(fd - an) / np.abs(an)) < 1e-6


def test_scheme_domain():
    with pytest.raises(m.DomainError):
        m.interp_value(SCHEMES[0], 1.5)
    with pytest.raises(m.DomainError):
        m.interp_derivative(SCHEMES[1], -0.1)


def test_interpolated_reluctivity():
    td = m.InterpolationScheme.td()
    for b in (0.0, 0.7, 1.9, 3.0):
        assert m.interpolated_reluctivity(1.0, b, CURVE, td) == pytest.approx(m.reluctivity(CURVE, b), abs=1e-12 * NU0)
        assert m.interpolated_reluctivity(0.0, b, CURVE, td) == NU0
    expected = NU0 + m.interp_value(td, 0.5) * (NU0 * CURVE.eps - NU0)
    assert m.interpolated_reluctivity(0.5, 0.0, CURVE, td) == pytest.approx(expected, rel=1e-14)


def test_square_to_disk_corner_and_axis():
    u, v = m.square_to_disk(1.0, 1.0)
    assert abs(u - 1 / math.sqrt(2)) < 1e-12 and abs(v - 1 / math.sqrt(2)) < 1e-12
    y = np.linspace(-1, 1, 11)
    u, v = m.square_to_disk(np.zeros_like(y), y)
    assert np.all(u == 0) and np.array_equal(v, y)


def test_square_disk_roundtrip_grid():
    x, y = np.meshgrid(np.linspace(-1, 1, 101), np.linspace(-1, 1, 101))
    u, v = m.square_to_disk(x, y)
    assert np.all(u * u + v * v <= 1 + 1e-15)
    xb, yb = m.disk_to_square(u, v)
    assert max(np.abs(xb - x).max(), np.abs(yb - y).max()) < 1e-10
    # injective on the grid
    pts = np.round(np.column_stack([u.ravel(), v.ravel()]), 12)
    assert len(np.unique(pts, axis=0)) == pts.shape[0]


def test_square_to_disk_angle_distortion_is_bounded():
    x, y = np.meshgrid(np.linspace(-1, 1, 101), np.linspace(-1, 1, 101))
    keep = (x != 0) | (y != 0)
    u, v = m.square_to_disk(x[keep], y[keep])
    d = np.angle(np.exp(1j * (np.arctan2(v, u) - np.arctan2(y[keep], x[keep]))))
    # exact on the axes and diagonals, a few degrees elsewhere
    assert np.max(np.abs(d)) < math.radians(10)


@given(st.floats(-1, 1), st.floats(-1, 1))
def test_square_disk_roundtrip_property(x, y):
    u, v = m.square_to_disk(x, y)
    assert u * u + v * v <= 1 + 1e-15
    xb, yb = m.disk_to_square(u, v)
    assert abs(xb - x) < 1e-10 and abs(yb - y) < 1e-10


def test_jacobian_matches_fd():
    rng = np.random.default_rng(4)
    x, y = rng.uniform(-0.99, 0.99, (2, 50))
    h = 1e-7
    jac = m.square_to_disk_jacobian(x, y)
    ux = [(a - b) / (2 * h) for a, b in zip(m.square_to_disk(x + h, y), m.square_to_disk(x - h, y))]
    uy = [(a - b) / (2 * h) for a, b in zip(m.square_to_disk(x, y + h), m.square_to_disk(x, y - h))]
    assert np.allclose(jac[0], ux[0], atol=1e-8)
    assert np.allclose(jac[1], uy[0], atol=1e-8)
    assert np.allclose(jac[2], ux[1], atol=1e-8)
    assert np.allclose(jac[3], uy[1], atol=1e-8)


def test_magnetization_examples():
    spec, fm = m.MagnetSpec(), m.InterpolationScheme.lukas(5.0)
    assert np.array_equal(m.densities_to_magnetization(0.5, 0.5, spec, fm), [0.0, 0.0])
    M = m.densities_to_magnetization(1.0, 0.5, spec, fm)
    assert np.allclose(M, [2.33e5, 0.0], rtol=1e-14, atol=1e-9)
    u, v = m.disk_vector(1.0, 1.0)
    assert abs(math.hypot(u, v) - 1.0) < 1e-15
    M = m.densities_to_magnetization(1.0, 1.0, spec, fm)
    assert abs(math.atan2(M[1], M[0]) - math.pi / 4) < 1e-15
    assert abs(np.linalg.norm(M) - 2.33e5) < 1e-9


@settings(max_examples=200)
@given(st.floats(0, 1), st.floats(0, 1))
def test_magnetization_magnitude_bounded(a, b):
    M = m.densities_to_magnetization(a, b, m.MagnetSpec(), m.InterpolationScheme.lukas(5.0))
    assert np.linalg.norm(M) <= 2.33e5 * (1 + 1e-12)


def test_magnet_spec_positive():
    with pytest.raises(ValueError):
        m.MagnetSpec(0.0)
