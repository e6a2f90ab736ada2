"""Design-variable pipeline: filtering, projection, volume terms, multipliers.

The chain from optimisation variables X = (rho_nu, rho_mx, rho_my) to the
fields the solver sees is

    filtered   = F X                       (Helmholtz filter, per channel)
    rho_nu_bar = P(filtered_nu)            (tanh projection)
    w          = disk(2 filtered_m - 1)    (square-to-disk map)
    m_bar      = P(|w|)
    M          = M_max f_M(m_bar) w / |w|

``DesignMap.forward`` evaluates it and ``DesignMap.vjp`` pulls gradients with
respect to (rho_nu_bar, M, m_bar) back to X.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .materials import (InterpolationScheme, MagnetSpec, interp_derivative, interp_value,
                        square_to_disk, square_to_disk_jacobian)


# ---------------------------------------------------------------- projection

def tanh_projection(rho, beta: float | None, cut: float = 0.5):
    """Smoothed Heaviside with P(0) = 0, P(1) = 1; ``beta=None`` is the identity."""
    rho = np.asarray(rho, dtype=float)
    if beta is None:
        return rho.copy()
    a = math.tanh(beta * cut)
    return (a + np.tanh(beta * (rho - cut))) / (a + math.tanh(beta * (1.0 - cut)))


def tanh_projection_derivative(rho, beta: float | None, cut: float = 0.5):
    rho = np.asarray(rho, dtype=float)
    if beta is None:
        return np.ones_like(rho)
    a = math.tanh(beta * cut)
    sech2 = 1.0 - np.tanh(beta * (rho - cut)) ** 2
    return beta * sech2 / (a + math.tanh(beta * (1.0 - cut)))


# ---------------------------------------------------------------- volumes and penalties

def volume_fraction(rho, areas: np.ndarray) -> float:
    return float(np.dot(areas, rho) / np.sum(areas))


def psi(t: float, sigma: float, mu: float) -> float:
    """Augmented-Lagrangian term for an inequality constraint t >= 0."""
    if t - mu * sigma <= 0.0:
        return -sigma * t + t * t / (2.0 * mu)
    return -0.5 * mu * sigma * sigma


def psi_derivative(t: float, sigma: float, mu: float) -> float:
    if t - mu * sigma <= 0.0:
        return -sigma + t / mu
    return 0.0


def intermediate_penalty(rho, areas: np.ndarray, weight: float) -> float:
    rho = np.asarray(rho, dtype=float)
    return float(4.0 * weight * np.dot(areas, rho * (1.0 - rho)) / np.sum(areas))


def intermediate_penalty_gradient(rho, areas: np.ndarray, weight: float) -> np.ndarray:
    rho = np.asarray(rho, dtype=float)
    return 4.0 * weight * areas * (1.0 - 2.0 * rho) / np.sum(areas)


@dataclass(frozen=True)
class AugLagState:
    """Multiplier estimates and penalty for the iron and magnet volume bounds."""

    sigma_iron: float = 0.0
    sigma_magnet: float = 0.0
    mu: float = 1.0
    bound_iron: float = 1.0
    bound_magnet: float = 1.0
    last_violation: float = math.inf

    def __post_init__(self):
        if not self.mu > 0.0:
            raise ValueError("penalty parameter must be > 0")
        if self.sigma_iron < 0.0 or self.sigma_magnet < 0.0:
            raise ValueError("multipliers must be >= 0")
        for b in (self.bound_iron, self.bound_magnet):
            if not 0.0 <= b <= 1.0:
                raise ValueError("volume bounds must lie in [0, 1]")


def update_multipliers(state: AugLagState, h_iron: float, h_magnet: float,
                       shrink: float = 0.9, mu_factor: float = 0.5) -> AugLagState:
    """First-order multiplier update; halve mu if the violation did not drop enough.

    ``h_*`` are constraint values ``bound - volume`` (feasible when >= 0).
    """
    sig_i = max(state.sigma_iron - h_iron / state.mu, 0.0)
    sig_m = max(state.sigma_magnet - h_magnet / state.mu, 0.0)
    violation = max(-h_iron, -h_magnet, 0.0)
    mu = state.mu
    if violation > 0.0 and violation > shrink * state.last_violation:
        mu *= mu_factor
    return replace(state, sigma_iron=sig_i, sigma_magnet=sig_m, mu=mu, last_violation=violation)


# ---------------------------------------------------------------- Helmholtz filter

class HelmholtzFilter:
    """Finite-volume solve of -r^2 lap(rho) + rho = rho_ref on element cells.

    Two-point fluxes across interior edges, zero flux on the boundary.  The
    operator preserves constants and reduces to the identity for r = 0.
    """

    def __init__(self, nodes: np.ndarray, triangles: np.ndarray, radius: float):
        if radius < 0.0:
            raise ValueError("filter radius must be >= 0")
        self.radius = float(radius)
        p = nodes[triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        self.areas = 0.5 * np.abs(d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])
        n = len(triangles)
        self._lu = None
        if self.radius == 0.0:
            return
        cen = p.mean(axis=1)
        e = np.concatenate([triangles[:, [0, 1]], triangles[:, [1, 2]], triangles[:, [2, 0]]])
        owner = np.tile(np.arange(n), 3)
        key = np.sort(e, axis=1)
        order = np.lexsort((key[:, 1], key[:, 0]))
        ks = key[order]
        same = np.all(ks[1:] == ks[:-1], axis=1)
        i = owner[order][:-1][same]
        j = owner[order][1:][same]
        a, b = ks[:-1][same, 0], ks[:-1][same, 1]
        length = np.linalg.norm(nodes[a] - nodes[b], axis=1)
        dist = np.linalg.norm(cen[i] - cen[j], axis=1)
        c = self.radius ** 2 * length / dist
        lap = sp.coo_matrix((np.concatenate([c, c, -c, -c]),
                             (np.concatenate([i, j, i, j]), np.concatenate([i, j, j, i]))),
                            shape=(n, n)).tocsc()
        self.matrix = (sp.diags(self.areas) + lap).tocsc()
        self._lu = spla.splu(self.matrix)

    def apply(self, rho: np.ndarray) -> np.ndarray:
        rho = np.asarray(rho, dtype=float)
        if self._lu is None:
            return rho.copy()
        return self._lu.solve(self.areas * rho)

    def apply_transpose(self, grad: np.ndarray) -> np.ndarray:
        grad = np.asarray(grad, dtype=float)
        if self._lu is None:
            return grad.copy()
        return self.areas * self._lu.solve(grad)


def helmholtz_filter(rho: np.ndarray, nodes: np.ndarray, triangles: np.ndarray, radius: float) -> np.ndarray:
    return HelmholtzFilter(nodes, triangles, radius).apply(rho)


# ---------------------------------------------------------------- design map

@dataclass(frozen=True)
class FilterParams:
    """Filtering and projection settings (``beta=None`` disables projection)."""

    delta: float = 1.0
    beta: float | None = 4.0
    cut: float = 0.5
    filter_on: bool = True

    def __post_init__(self):
        if self.delta < 0.0:
            raise ValueError("filter length multiplier must be >= 0")
        if self.beta is not None and not self.beta > 0.0:
            raise ValueError("projection sharpness must be > 0")
        if not 0.0 <= self.cut <= 1.0:
            raise ValueError("projection threshold must lie in [0, 1]")


@dataclass(frozen=True, eq=False)
class PhysicalDesign:
    """Solver-facing fields of one design plus intermediates for the chain rule."""

    filtered: np.ndarray      # (3, n)
    rho_nu: np.ndarray        # projected iron density
    w: np.ndarray             # (n, 2) disk vector
    m: np.ndarray             # |w|
    m_bar: np.ndarray         # projected magnet magnitude
    magnetization: np.ndarray  # (n, 2), A/m
    key: str

    @property
    def magnet_density(self) -> np.ndarray:
        """(1 - rho_nu) m_bar, the field the magnet volume bound acts on."""
        return (1.0 - self.rho_nu) * self.m_bar


_SMALL_M = 1e-9


class DesignMap:
    def __init__(self, nodes: np.ndarray, triangles: np.ndarray, h: float,
                 params: FilterParams, magnet: MagnetSpec, f_m: InterpolationScheme):
        self.params = params
        self.magnet = magnet
        self.f_m = f_m
        radius = params.delta * h if params.filter_on else 0.0
        self.filter = HelmholtzFilter(nodes, triangles, radius)
        self.areas = self.filter.areas

    def with_params(self, params: FilterParams) -> "DesignMap":
        out = object.__new__(DesignMap)
        out.__dict__.update(self.__dict__)
        if params.delta != self.params.delta or params.filter_on != self.params.filter_on:
            raise ValueError("changing the filter radius requires a new DesignMap")
        out.params = params
        return out

    def _scale(self, m: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """s(m) = f_M(P(m)) / m and its derivative, with the m -> 0 limit."""
        beta, cut = self.params.beta, self.params.cut
        small = m < _SMALL_M
        ms = np.where(small, 1.0, m)
        pm = np.clip(tanh_projection(ms, beta, cut), 0.0, 1.0)
        f = interp_value(self.f_m, pm)
        fp = interp_derivative(self.f_m, pm) * tanh_projection_derivative(ms, beta, cut)
        s = f / ms
        ds = (fp * ms - f) / (ms * ms)
        s0 = interp_derivative(self.f_m, 0.0) * float(tanh_projection_derivative(0.0, beta, cut))
        return np.where(small, s0, s), np.where(small, 0.0, ds)

    def forward(self, X) -> PhysicalDesign:
        arr = X.as_array()
        filt = np.stack([self.filter.apply(c) for c in arr])
        filt = np.clip(filt, 0.0, 1.0)
        beta, cut = self.params.beta, self.params.cut
        rho_nu = np.clip(tanh_projection(filt[0], beta, cut), 0.0, 1.0)
        u, v = square_to_disk(2.0 * filt[1] - 1.0, 2.0 * filt[2] - 1.0)
        w = np.column_stack([u, v])
        m = np.hypot(u, v)
        m_bar = np.clip(tanh_projection(m, beta, cut), 0.0, 1.0)
        s, _ = self._scale(m)
        mag = self.magnet.m_max * s[:, None] * w
        return PhysicalDesign(filt, rho_nu, w, m, m_bar, mag, X.digest())

    def vjp(self, phys: PhysicalDesign, g_rho_nu: np.ndarray, g_mag: np.ndarray,
            g_m_bar: np.ndarray) -> np.ndarray:
        """Gradient with respect to X (shape (3, n)) from gradients on the physical fields."""
        beta, cut = self.params.beta, self.params.cut
        filt, w, m = phys.filtered, phys.w, phys.m
        g_f = np.zeros_like(filt)
        g_f[0] = g_rho_nu * tanh_projection_derivative(filt[0], beta, cut)
        s, ds = self._scale(m)
        safe_m = np.where(m < _SMALL_M, 1.0, m)
        wg = np.sum(w * g_mag, axis=1)
        g_w = self.magnet.m_max * (s[:, None] * g_mag + (ds * wg / safe_m)[:, None] * w)
        dp = tanh_projection_derivative(m, beta, cut)
        g_w += np.where(m < _SMALL_M, 0.0, g_m_bar * dp / safe_m)[:, None] * w
        dudx, dudy, dvdx, dvdy = square_to_disk_jacobian(2.0 * filt[1] - 1.0, 2.0 * filt[2] - 1.0)
        g_f[1] = 2.0 * (g_w[:, 0] * dudx + g_w[:, 1] * dvdx)
        g_f[2] = 2.0 * (g_w[:, 0] * dudy + g_w[:, 1] * dvdy)
        # the clip after filtering is inactive for inputs in [0, 1]
        return np.stack([self.filter.apply_transpose(c) for c in g_f])
