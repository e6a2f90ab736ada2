"""Material laws: Marrocco reluctivity, interpolation schemes, magnetization.

All functions are vectorised over numpy arrays and also accept scalars.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

NU0 = 1.0e7 / (4.0 * math.pi)


class DomainError(ValueError):
    """Argument outside the domain of a material law."""


@dataclass(frozen=True)
class MarroccoCurve:
    """Marrocco fit of the iron BH characteristic.

    ``variant="consistent"`` (default) uses the saturation extension
    ``H(B) = exp(gamma (B - beta))`` between ``B_max`` and ``B_s`` and
    ``M_s = B_s - 1/gamma``; with these the magnetic field ``H = nu B`` is
    continuous and C1 at ``B_s``.  ``variant="published"`` uses
    ``nu = exp(gamma (B - beta) / B)`` and ``M_s = B_s + 1/gamma``; it is
    kept for plotting/comparison only since it jumps by more than an order
    of magnitude at ``B_max``.
    ``variant="linear"`` freezes the iron at its low-field value ``nu0 eps``
    (linearised problems, gradient checks).
    """

    alpha: float = 6.84
    beta: float = -0.130
    gamma: float = 4.86
    eps: float = 1.57e-4
    tau: float = 4.14e3
    c: float = 1.90e-2
    b_max: float = 1.80
    nu0: float = NU0
    variant: str = "consistent"

    def __post_init__(self):
        if self.variant not in ("consistent", "published", "linear"):
            raise ValueError(f"unknown Marrocco variant {self.variant!r}")

    @property
    def b_s(self) -> float:
        return self.beta + math.log(self.nu0 / self.gamma) / self.gamma

    @property
    def m_s(self) -> float:
        if self.variant == "published":
            return self.b_s + 1.0 / self.gamma
        return self.b_s - 1.0 / self.gamma

    @property
    def nu_min(self) -> float:
        return self.nu0 * self.eps

    def junction_gaps(self) -> tuple[float, float]:
        """|nu(B_max-) - nu(B_max+)| and |nu(B_s-) - nu(B_s+)|, unclamped."""
        d = 1e-12
        lo = _raw_branches(self, np.array([self.b_max, self.b_max + d, self.b_s - d, self.b_s + d]))
        return abs(lo[0] - lo[1]), abs(lo[2] - lo[3])


def _raw_branches(curve: MarroccoCurve, b: np.ndarray) -> np.ndarray:
    nu0 = curve.nu0
    if curve.variant == "linear":
        return np.full_like(b, nu0 * curve.eps)
    out = np.empty_like(b)
    low = b <= curve.b_max
    sat = (b > curve.b_s) & ~low
    mid = ~low & ~sat
    b2a = b[low] ** (2.0 * curve.alpha)
    out[low] = nu0 * (curve.eps + (curve.c - curve.eps) * b2a / (curve.tau + b2a))
    out[sat] = nu0 * (1.0 - curve.m_s / b[sat])
    bm = b[mid]
    if curve.variant == "published":
        out[mid] = np.exp(curve.gamma * (bm - curve.beta) / bm)
    else:
        out[mid] = np.exp(curve.gamma * (bm - curve.beta)) / bm
    return out


def _raw_derivative(curve: MarroccoCurve, b: np.ndarray) -> np.ndarray:
    nu0 = curve.nu0
    out = np.zeros_like(b)
    if curve.variant == "linear":
        return out
    low = b <= curve.b_max
    sat = (b > curve.b_s) & ~low
    mid = ~low & ~sat
    bl = b[low]
    two_a = 2.0 * curve.alpha
    b2a = bl ** two_a
    with np.errstate(divide="ignore", invalid="ignore"):
        dl = nu0 * (curve.c - curve.eps) * two_a * bl ** (two_a - 1.0) * curve.tau / (curve.tau + b2a) ** 2
    out[low] = np.where(bl > 0.0, dl, 0.0)
    out[sat] = nu0 * curve.m_s / b[sat] ** 2
    bm = b[mid]
    if curve.variant == "published":
        out[mid] = np.exp(curve.gamma * (bm - curve.beta) / bm) * curve.gamma * curve.beta / bm ** 2
    else:
        e = np.exp(curve.gamma * (bm - curve.beta))
        out[mid] = e * (curve.gamma / bm - 1.0 / bm ** 2)
    return out


def reluctivity(curve: MarroccoCurve, b):
    """nu(|B|) in m/H, clamped to [nu0*eps, nu0)."""
    arr = np.asarray(b, dtype=float)
    if np.any(arr < 0.0) or np.any(np.isnan(arr)):
        raise DomainError("flux density magnitude must be >= 0")
    flat = arr.reshape(-1)
    raw = _raw_branches(curve, flat)
    top = np.nextafter(curve.nu0, 0.0)
    out = np.clip(raw, curve.nu_min, top).reshape(arr.shape)
    return float(out) if np.ndim(b) == 0 else out


def reluctivity_derivative(curve: MarroccoCurve, b):
    """d nu / d|B|; zero wherever the clamp is active and at B = 0."""
    arr = np.asarray(b, dtype=float)
    if np.any(arr < 0.0):
        raise DomainError("flux density magnitude must be >= 0")
    flat = arr.reshape(-1)
    raw = _raw_branches(curve, flat)
    d = _raw_derivative(curve, flat)
    clamped = (raw < curve.nu_min) | (raw >= curve.nu0)
    d[clamped] = 0.0
    d = d.reshape(arr.shape)
    return float(d) if np.ndim(b) == 0 else d


# ---------------------------------------------------------------- interpolation

@dataclass(frozen=True)
class InterpolationScheme:
    """Material interpolation f: [0,1] -> [0,1] with f(0)=0, f(1)=1.

    kind: ``"simp"`` (rho**n), ``"lukas"`` (arctan scheme, slope ``lam``) or
    ``"td"`` (quadratic Hermite with topological-derivative end slopes for
    reluctivities ``nu0`` and ``nu1``).
    """

    kind: str = "td"
    n: float = 3.0
    lam: float = 5.0
    nu0: float = NU0
    nu1: float = NU0 * 1.57e-4

    def __post_init__(self):
        if self.kind not in ("simp", "lukas", "td"):
            raise ValueError(f"unknown interpolation scheme {self.kind!r}")
        if self.kind == "simp" and not self.n > 0:
            raise ValueError("SIMP exponent must be > 0")
        if self.kind == "lukas" and not self.lam > 0:
            raise ValueError("Lukas slope must be > 0")

    @classmethod
    def simp(cls, n: float = 3.0) -> "InterpolationScheme":
        return cls(kind="simp", n=n)

    @classmethod
    def lukas(cls, lam: float = 5.0) -> "InterpolationScheme":
        return cls(kind="lukas", lam=lam)

    @classmethod
    def td(cls, nu0: float = NU0, nu1: float | None = None, eps: float = 1.57e-4) -> "InterpolationScheme":
        return cls(kind="td", nu0=nu0, nu1=nu0 * eps if nu1 is None else nu1)

    @property
    def td_coefficients(self) -> tuple[float, float]:
        s = self.nu0 + self.nu1
        return 2.0 * self.nu0 / s, -(self.nu0 - self.nu1) / s


def _check_unit(rho) -> np.ndarray:
    r = np.asarray(rho, dtype=float)
    if np.any(r < 0.0) or np.any(r > 1.0) or np.any(np.isnan(r)):
        raise DomainError("density outside [0, 1]")
    return r


def interp_value(scheme: InterpolationScheme, rho):
    r = _check_unit(rho)
    if scheme.kind == "simp":
        out = r ** scheme.n
    elif scheme.kind == "lukas":
        lam = scheme.lam
        out = 0.5 * (1.0 + np.arctan(lam * (2.0 * r - 1.0)) / math.atan(lam))
        out = np.where(r == 0.0, 0.0, np.where(r == 1.0, 1.0, out))
    else:
        a, b = scheme.td_coefficients
        out = a * r + b * r * r
    return float(out) if np.ndim(rho) == 0 else out


def interp_derivative(scheme: InterpolationScheme, rho):
    r = _check_unit(rho)
    if scheme.kind == "simp":
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.where(r > 0.0, scheme.n * r ** (scheme.n - 1.0),
                           1.0 if scheme.n == 1.0 else (0.0 if scheme.n > 1.0 else np.inf))
    elif scheme.kind == "lukas":
        lam = scheme.lam
        t = lam * (2.0 * r - 1.0)
        out = lam / (math.atan(lam) * (1.0 + t * t))
    else:
        a, b = scheme.td_coefficients
        out = a + 2.0 * b * r
    return float(out) if np.ndim(rho) == 0 else out


def interpolated_reluctivity(rho_nu, b, curve: MarroccoCurve, scheme: InterpolationScheme):
    """nu0 + f(rho) (nu_hat(B) - nu0): air at rho=0, iron at rho=1."""
    return curve.nu0 + interp_value(scheme, rho_nu) * (reluctivity(curve, b) - curve.nu0)


# ---------------------------------------------------------------- magnetization

def square_to_disk(x, y):
    """Elliptic grid map from [-1,1]^2 onto the closed unit disk."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    u = x * np.sqrt(np.maximum(1.0 - 0.5 * y * y, 0.0))
    v = y * np.sqrt(np.maximum(1.0 - 0.5 * x * x, 0.0))
    return u, v


def square_to_disk_jacobian(x, y):
    """Entries (du/dx, du/dy, dv/dx, dv/dy) of the elliptic grid map."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    sy = np.sqrt(np.maximum(1.0 - 0.5 * y * y, 0.0))
    sx = np.sqrt(np.maximum(1.0 - 0.5 * x * x, 0.0))
    # sx, sy >= 1/sqrt(2) on the square, no division hazard
    return sy, -0.5 * x * y / sy, -0.5 * x * y / sx, sx


def disk_to_square(u, v):
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    r2 = 2.0 * math.sqrt(2.0)
    d = u * u - v * v
    x = 0.5 * (np.sqrt(np.maximum(2.0 + d + r2 * u, 0.0)) - np.sqrt(np.maximum(2.0 + d - r2 * u, 0.0)))
    y = 0.5 * (np.sqrt(np.maximum(2.0 - d + r2 * v, 0.0)) - np.sqrt(np.maximum(2.0 - d - r2 * v, 0.0)))
    return x, y


@dataclass(frozen=True)
class MagnetSpec:
    # maximum magnetization in A/m
    m_max: float = 2.33e5

    def __post_init__(self):
        if not self.m_max > 0:
            raise ValueError("m_max must be > 0")


MAGNITUDE_EPS = 1e-12


def disk_vector(rho_mx, rho_my):
    """Unit-disk magnetization vector of the two magnetization densities."""
    return square_to_disk(2.0 * (np.asarray(rho_mx, dtype=float) - 0.5),
                          2.0 * (np.asarray(rho_my, dtype=float) - 0.5))


def densities_to_magnetization(rho_mx, rho_my, spec: MagnetSpec, f_m: InterpolationScheme):
    """Physical magnetization (A/m) of magnet material with the given densities.

    Returns an array of shape ``(..., 2)`` with magnitude ``M_max f_M(|M~|)``
    along the disk vector ``M~``; zero where ``|M~| < 1e-12``.
    """
    _check_unit(rho_mx)
    _check_unit(rho_my)
    u, v = disk_vector(rho_mx, rho_my)
    w = np.stack([u, v], axis=-1)
    m = np.hypot(u, v)
    return magnetization_from_disk(w, m, spec, f_m)


def magnetization_from_disk(w: np.ndarray, m_bar, spec: MagnetSpec,
                            f_m: InterpolationScheme) -> np.ndarray:
    """M_max f_M(m_bar) w/|w| with the zero guard; ``m_bar`` may differ from |w|."""
    m = np.linalg.norm(w, axis=-1)
    m_bar = np.clip(np.asarray(m_bar, dtype=float), 0.0, 1.0)
    safe = m >= MAGNITUDE_EPS
    scale = np.where(safe, spec.m_max * interp_value(f_m, m_bar) / np.where(safe, m, 1.0), 0.0)
    return w * scale[..., None]


@dataclass(frozen=True)
class MaterialModel:
    """Everything the state operator needs to know about materials."""

    curve: MarroccoCurve = MarroccoCurve()
    f_nu: InterpolationScheme = InterpolationScheme.td()
    f_m: InterpolationScheme = InterpolationScheme.lukas(5.0)
    magnet: MagnetSpec = MagnetSpec()

    @property
    def nu0(self) -> float:
        return self.curve.nu0
