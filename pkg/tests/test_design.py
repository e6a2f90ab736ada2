import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pmsynrm.design import (AugLagState, DesignMap, FilterParams, HelmholtzFilter, helmholtz_filter,
                            intermediate_penalty, intermediate_penalty_gradient, psi, psi_derivative,
                            tanh_projection, tanh_projection_derivative, update_multipliers,
                            volume_fraction)
from pmsynrm.fem import DensityField
from pmsynrm.materials import InterpolationScheme, MagnetSpec
from pmsynrm.optimizer import projected_gradient, take_step
from pmsynrm.sensitivity import DesignGradient


@pytest.fixture(scope="module")
def design_mesh(coarse_model):
    m = coarse_model
    return m.rotor.nodes, m.rotor.triangles[m.design_elements], m.rotor.h, m.design_areas


# ---------------------------------------------------------------- volumes


def test_volume_fraction_examples(design_mesh):
    *_, areas = design_mesh
    assert volume_fraction(np.ones(len(areas)), areas) == pytest.approx(1.0, abs=1e-15)
    assert volume_fraction(np.full(len(areas), 0.5), areas) == pytest.approx(0.5, abs=1e-15)


def test_volume_fraction_half_disk(design_mesh):
    nodes, tris, _, areas = design_mesh
    x = nodes[tris].mean(axis=1)[:, 0]
    rho = (x > 0).astype(float)
    # quantisation: elements straddling the cut line
    assert abs(volume_fraction(rho, areas) - 0.5) < 0.02


# ---------------------------------------------------------------- psi and multipliers


def test_psi_examples():
    assert psi(0.0, 0.7, 1.3) == 0.0
    assert psi(-1.0, 1.0, 1.0) == 1.5
    assert psi(0.6, 0.5, 1.0) == -0.125


def test_psi_continuity_random():
    rng = np.random.default_rng(0)
    for sigma, mu in zip(rng.uniform(0, 10, 1000), rng.uniform(1e-3, 10, 1000)):
        t = mu * sigma
        quad = -sigma * t + t * t / (2 * mu)
        const = -0.5 * mu * sigma * sigma
        assert abs(psi(t, sigma, mu) - const) <= 1e-12 * max(1.0, abs(const))
        assert abs(quad - const) <= 1e-12 * max(1.0, abs(const))
        assert abs(psi(np.nextafter(t, np.inf), sigma, mu) - const) <= 1e-12 * max(1.0, abs(const))


@given(st.floats(-5, 5), st.floats(0, 5), st.floats(0.01, 5))
def test_psi_derivative_matches_fd(t, sigma, mu):
    h = 1e-6
    if abs(t - mu * sigma) < 2 * h:
        return
    fd = (psi(t + h, sigma, mu) - psi(t - h, sigma, mu)) / (2 * h)
    assert abs(fd - psi_derivative(t, sigma, mu)) < 1e-5 * max(1.0, abs(fd))


def test_update_multipliers_examples():
    s = update_multipliers(AugLagState(mu=1.0), 0.3, 0.2)
    assert s.sigma_iron == 0.0 and s.sigma_magnet == 0.0
    s = update_multipliers(AugLagState(mu=1.0), -0.1, 0.5)
    assert s.sigma_iron == pytest.approx(0.1, abs=1e-15)
    assert s.sigma_magnet == 0.0


def test_mu_halves_on_repeated_non_improvement():
    s = AugLagState(mu=1.0)
    mus = []
    for _ in range(5):
        s = update_multipliers(s, -0.2, 0.0)
        mus.append(s.mu)
    # the first update only records the violation
    assert mus == [1.0, 0.5, 0.25, 0.125, 0.0625]


def test_mu_kept_when_violation_shrinks():
    s = update_multipliers(AugLagState(mu=1.0), -0.2, 0.0)
    s = update_multipliers(s, -0.1, 0.0)
    assert s.mu == 1.0


def test_auglag_state_invariants():
    with pytest.raises(ValueError):
        AugLagState(mu=0.0)
    with pytest.raises(ValueError):
        AugLagState(sigma_iron=-1.0)
    with pytest.raises(ValueError):
        AugLagState(bound_iron=1.5)


# ---------------------------------------------------------------- penalty


def test_intermediate_penalty_examples(design_mesh):
    *_, areas = design_mesh
    n = len(areas)
    assert intermediate_penalty(np.zeros(n), areas, 0.3) == 0.0
    assert intermediate_penalty(np.ones(n), areas, 0.3) == 0.0
    assert intermediate_penalty(np.full(n, 0.5), areas, 0.3) == pytest.approx(0.3, rel=1e-14)


def test_intermediate_penalty_gradient_fd(design_mesh):
    *_, areas = design_mesh
    rho = np.random.default_rng(1).uniform(0, 1, len(areas))
    g = intermediate_penalty_gradient(rho, areas, 0.7)
    h = 1e-4
    for i in range(0, len(areas), 37):
        e = np.zeros(len(areas))
        e[i] = h
        fd = (intermediate_penalty(rho + e, areas, 0.7) - intermediate_penalty(rho - e, areas, 0.7)) / (2 * h)
        # the penalty is quadratic, so central differences are exact up to roundoff
        assert abs(fd - g[i]) < 1e-10
    assert np.allclose(g, 4 * 0.7 * areas * (1 - 2 * rho) / areas.sum(), rtol=1e-14)


# ---------------------------------------------------------------- projection


def test_projection_examples():
    for beta in (1.0, 4.0, 16.0, 64.0):
        assert tanh_projection(0.5, beta) == pytest.approx(0.5, abs=1e-15)
        assert tanh_projection(0.0, beta) == 0.0
        assert tanh_projection(1.0, beta) == pytest.approx(1.0, abs=1e-15)
    assert tanh_projection(0.6, 16.0) > tanh_projection(0.6, 4.0)
    assert np.array_equal(tanh_projection(np.array([0.2, 0.7]), None), [0.2, 0.7])


@given(st.floats(0, 1), st.floats(0.5, 64))
def test_projection_in_unit_interval(rho, beta):
    p = tanh_projection(rho, beta)
    assert -1e-15 <= p <= 1 + 1e-15


def test_projection_derivative_fd():
    rho = np.linspace(0.01, 0.99, 50)
    for beta in (2.0, 8.0):
        h = 1e-6
        fd = (tanh_projection(rho + h, beta) - tanh_projection(rho - h, beta)) / (2 * h)
        assert np.allclose(fd, tanh_projection_derivative(rho, beta), rtol=1e-6)


# ---------------------------------------------------------------- filter


def test_filter_preserves_constants(design_mesh):
    nodes, tris, h, _ = design_mesh
    out = helmholtz_filter(np.full(len(tris), 0.37), nodes, tris, 1.5 * h)
    assert np.max(np.abs(out - 0.37)) < 1e-12


def test_filter_zero_radius_identity(design_mesh):
    nodes, tris, *_ = design_mesh
    rho = np.random.default_rng(2).uniform(0, 1, len(tris))
    assert np.array_equal(helmholtz_filter(rho, nodes, tris, 0.0), rho)
    assert np.max(np.abs(helmholtz_filter(rho, nodes, tris, 1e-9) - rho)) < 1e-10


def test_filter_smooths_checkerboard(design_mesh):
    nodes, tris, h, areas = design_mesh
    rho = np.where(np.arange(len(tris)) % 2 == 0, 1.0, 0.0)
    out = helmholtz_filter(rho, nodes, tris, 1.5 * h)
    assert np.var(out) < np.var(rho)
    # conserves the area-weighted mean and stays within the input range
    assert np.dot(areas, out) == pytest.approx(np.dot(areas, rho), rel=1e-12)
    assert out.min() >= -1e-12 and out.max() <= 1 + 1e-12


def test_filter_transpose_is_adjoint(design_mesh):
    nodes, tris, h, _ = design_mesh
    f = HelmholtzFilter(nodes, tris, 1.5 * h)
    rng = np.random.default_rng(3)
    a, b = rng.normal(size=len(tris)), rng.normal(size=len(tris))
    assert np.dot(f.apply(a), b) == pytest.approx(np.dot(a, f.apply_transpose(b)), rel=1e-12)


def test_filter_projection_keeps_uniform_binary_fields(design_mesh):
    nodes, tris, h, _ = design_mesh
    dm = DesignMap(nodes, tris, h, FilterParams(delta=1.0, beta=16.0), MagnetSpec(), InterpolationScheme.lukas())
    for v in (0.0, 1.0):
        X = DensityField.uniform(len(tris), v, 0.5, 0.5)
        assert np.max(np.abs(dm.forward(X).rho_nu - v)) < 1e-6


def test_design_map_ranges(design_mesh):
    nodes, tris, h, _ = design_mesh
    dm = DesignMap(nodes, tris, h, FilterParams(beta=8.0), MagnetSpec(), InterpolationScheme.lukas())
    rng = np.random.default_rng(4)
    X = DensityField(*rng.uniform(0, 1, (3, len(tris))))
    phys = dm.forward(X)
    for field in (phys.rho_nu, phys.m, phys.m_bar, phys.magnet_density):
        assert field.min() >= 0 and field.max() <= 1 + 1e-12
    assert np.all(np.linalg.norm(phys.magnetization, axis=1) <= 2.33e5 * (1 + 1e-12))


def test_filter_params_validation():
    with pytest.raises(ValueError):
        FilterParams(delta=-1)
    with pytest.raises(ValueError):
        FilterParams(beta=0.0)
    with pytest.raises(ValueError):
        FilterParams(cut=1.5)


# ---------------------------------------------------------------- projected gradient and step


def _field(*cols):
    return DensityField(*[np.array(c, dtype=float) for c in cols])


def test_projected_gradient_examples():
    X = _field([0.0, 1.0, 0.5], [0.5, 0.5, 0.5], [0.5, 0.5, 0.5])
    g = DesignGradient(np.array([2.0, 2.0, 2.0]), np.zeros(3), np.zeros(3))
    out = projected_gradient(X, g)
    assert list(out.g_rho_nu) == [0.0, 2.0, 2.0]
    g = DesignGradient(np.array([-2.0, -2.0, -2.0]), np.zeros(3), np.zeros(3))
    assert list(projected_gradient(X, g).g_rho_nu) == [-2.0, 0.0, -2.0]


def test_take_step_examples():
    X = _field([0.5], [0.5], [0.5])
    out = take_step(X, DesignGradient(np.array([1.0]), np.zeros(1), np.zeros(1)), 0.1)
    assert np.allclose(out.as_array()[:, 0], [0.4, 0.5, 0.5], atol=1e-15)
    zero = DesignGradient(np.zeros(1), np.zeros(1), np.zeros(1))
    assert np.array_equal(take_step(X, zero, 0.1).as_array(), X.as_array())
    out = take_step(_field([0.05], [0.5], [0.5]), DesignGradient(np.array([1.0]), np.zeros(1), np.zeros(1)), 0.2)
    assert out.rho_nu[0] == 0.0
    with pytest.raises(ValueError):
        take_step(X, zero, 0.0)


@settings(max_examples=50)
@given(st.lists(st.tuples(st.floats(0, 1), st.floats(0, 1), st.floats(0, 1),
                          st.floats(-10, 10), st.floats(-10, 10), st.floats(-10, 10)), min_size=1, max_size=20),
       st.floats(1e-4, 1.0))
def test_step_stays_in_box_and_moves_by_at_most_step(rows, step):
    a = np.array(rows).T
    X = DensityField(*a[:3])
    g = projected_gradient(X, DesignGradient(*a[3:]))
    out = take_step(X, g, step).as_array()
    assert out.min() >= 0 and out.max() <= 1
    assert np.all(np.linalg.norm(out - a[:3], axis=0) <= step * (1 + 1e-12))
    # each element moves against its own gradient
    assert np.all(np.sum((out - a[:3]) * g.as_array(), axis=0) <= 1e-15)
