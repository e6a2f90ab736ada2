"""Nonlinear magnetostatic state problem with a Nitsche sliding interface.

Unknowns are P1 nodal potentials on the stator and (independently) on the
rotor mesh, plus a trace field ``eta`` living on the stator-side nodes of the
sliding circle.  Rotor quantities are assembled in the rotor's own frame:
volume terms, magnet sources and field magnitudes are invariant under the
rigid rotation, so only the interface coupling and the phase currents depend
on the rotor angle.

With ``conforming=True`` the model instead fuses a node-matching rotor and
stator into one conforming mesh (no interface terms); this is the reference
discretisation the mortar coupling is checked against.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import geometry as g
from .materials import (MaterialModel, densities_to_magnetization,
                        interp_value, reluctivity, reluctivity_derivative)

FOUR_POSITIONS = (0.0, math.pi / 12.0, math.pi / 6.0, math.pi / 4.0)

_GAUSS_X = np.array([0.5 - math.sqrt(15.0) / 10.0, 0.5, 0.5 + math.sqrt(15.0) / 10.0])
_GAUSS_W = np.array([5.0, 8.0, 5.0]) / 18.0


class SolverError(RuntimeError):
    def __init__(self, message: str, residual_norm: float = float("nan"), theta: float | None = None):
        super().__init__(message)
        self.residual_norm = residual_norm
        self.theta = theta


@dataclass(frozen=True, eq=False)
class DensityField:
    """Per-element design densities on the rotor design region."""

    rho_nu: np.ndarray
    rho_mx: np.ndarray
    rho_my: np.ndarray

    def __post_init__(self):
        for name in ("rho_nu", "rho_mx", "rho_my"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        n = len(self.rho_nu)
        if len(self.rho_mx) != n or len(self.rho_my) != n:
            raise ValueError("density channels differ in length")
        a = self.as_array()
        if np.any(np.isnan(a)) or np.any(a < 0.0) or np.any(a > 1.0):
            raise ValueError("densities must lie in [0, 1]")

    @classmethod
    def uniform(cls, n: int, rho_nu: float = 0.5, rho_mx: float = 0.5, rho_my: float = 0.5) -> "DensityField":
        return cls(np.full(n, rho_nu), np.full(n, rho_mx), np.full(n, rho_my))

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "DensityField":
        arr = np.asarray(arr, dtype=float)
        return cls(arr[0], arr[1], arr[2])

    def __len__(self) -> int:
        return len(self.rho_nu)

    def as_array(self) -> np.ndarray:
        return np.stack([self.rho_nu, self.rho_mx, self.rho_my])

    def digest(self) -> str:
        return hashlib.sha1(np.ascontiguousarray(self.as_array()).tobytes()).hexdigest()


@dataclass(frozen=True, eq=False)
class ElementMaterial:
    """Physical fields seen by the solver on design elements.

    ``rho_nu`` enters the reluctivity interpolation, ``magnetization`` (A/m,
    rotor frame) is the magnet strength before the ``f_nu(1 - rho_nu)``
    air/iron prefactor.
    """

    rho_nu: np.ndarray
    magnetization: np.ndarray
    key: str = ""

    @classmethod
    def from_density(cls, X: DensityField, materials: MaterialModel) -> "ElementMaterial":
        mag = densities_to_magnetization(X.rho_mx, X.rho_my, materials.magnet, materials.f_m)
        return cls(np.asarray(X.rho_nu, dtype=float), mag, X.digest())


@dataclass(frozen=True)
class NitscheParams:
    alpha: float = 160.0
    degree: int = 1
    h: float | None = None

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("Nitsche stabilisation must be > 0")
        if self.degree != 1:
            raise ValueError("only P1 elements are supported")


# accepted Newton stall, relative to the load norm
STALL_RTOL = 1e-4


@dataclass(eq=False)
class StateSolution:
    U: np.ndarray
    theta: float
    converged: bool
    newton_iters: int
    residual_norm: float
    design_key: str = ""
    residual_history: list = field(default_factory=list)

    def u_stator(self, model: "MachineModel") -> np.ndarray:
        return self.U[model.stator_dofs]

    def u_rotor(self, model: "MachineModel") -> np.ndarray:
        return self.U[model.rotor_dofs]

    def eta(self, model: "MachineModel") -> np.ndarray:
        return self.U[model.eta_dofs]


def p1_gradients(nodes: np.ndarray, tris: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Basis-function gradients (M, 3, 2) and areas (M,) of P1 triangles."""
    p = nodes[tris]
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    inv = np.empty((len(tris), 2, 2))
    inv[:, 0, 0] = d2[:, 1] / det
    inv[:, 0, 1] = -d2[:, 0] / det
    inv[:, 1, 0] = -d1[:, 1] / det
    inv[:, 1, 1] = d1[:, 0] / det
    # reference gradients (-1,-1), (1,0), (0,1) mapped by the inverse Jacobian
    ref = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
    grads = np.einsum("ak,mkj->maj", ref, inv)
    return grads, 0.5 * det


class _Pattern:
    """COO -> CSR scatter map for a fixed set of (row, col) pairs."""

    def __init__(self, rows: np.ndarray, cols: np.ndarray, n: int):
        csr = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
        csr.sum_duplicates()
        csr.sort_indices()
        self.indptr, self.indices = csr.indptr, csr.indices
        # locate every COO entry inside the CSR data array
        key_csr = np.repeat(np.arange(n), np.diff(csr.indptr)).astype(np.int64) * n + csr.indices
        key_coo = rows.astype(np.int64) * n + cols
        self.slot = np.searchsorted(key_csr, key_coo)
        self.n = n
        self.nnz = len(csr.indices)

    def matrix(self, values: np.ndarray) -> sp.csr_matrix:
        data = np.bincount(self.slot, weights=values, minlength=self.nnz)
        return sp.csr_matrix((data, self.indices, self.indptr), shape=(self.n, self.n))


class MachineModel:
    """Discrete state operator for one machine and mesh pair.

    Immutable after construction; ``solve_state`` and friends only read it.
    """

    def __init__(self, geometry: g.MachineGeometry, layout: g.WindingLayout,
                 stator: g.Mesh, rotor: g.Mesh, materials: MaterialModel = MaterialModel(),
                 nitsche: NitscheParams = NitscheParams(), conforming: bool = False):
        if layout.slot_area is None or np.any(stator.tags < 0):
            stator, layout = g.bind_winding(stator, layout)
        self.geometry = geometry
        self.layout = layout
        self.stator = stator
        self.rotor = rotor
        self.materials = materials
        self.nitsche = nitsche
        self.conforming = conforming
        nu0 = materials.nu0

        ns, nr = stator.n_nodes, rotor.n_nodes
        self.stator_dofs = np.arange(ns)
        if conforming:
            _, _, _, nmap = g.merge_conforming(stator, rotor)
            self.rotor_dofs = nmap
            n_u = int(nmap.max()) + 1
            self.eta_dofs = np.zeros(0, dtype=np.int64)
        else:
            self.rotor_dofs = ns + np.arange(nr)
            n_u = ns + nr
            self.eta_dofs = n_u + np.arange(len(stator.interface_edges))
        self.n_dofs = n_u + len(self.eta_dofs)

        r_out = np.linalg.norm(stator.nodes, axis=1)
        fixed = np.isclose(r_out, geometry.stator_outer_radius, rtol=1e-9)
        self.fixed_dofs = self.stator_dofs[fixed]
        free = np.ones(self.n_dofs, dtype=bool)
        free[self.fixed_dofs] = False
        self.free = np.flatnonzero(free)

        gs, as_ = p1_gradients(stator.nodes, stator.triangles)
        gr, ar = p1_gradients(rotor.nodes, rotor.triangles)
        self.stator_grads, self.stator_areas = gs, as_
        self.rotor_grads, self.rotor_areas = gr, ar
        self.grads = np.concatenate([gs, gr])
        self.areas = np.concatenate([as_, ar])
        self.elem_dofs = np.concatenate([self.stator_dofs[stator.triangles],
                                         self.rotor_dofs[rotor.triangles]])
        n_el = len(self.areas)
        self.n_stator_elements = stator.n_elements
        self.stator_iron = np.flatnonzero(stator.tags == g.FERRO_STATOR)
        self.design_elements = np.flatnonzero(rotor.tags == g.ROTOR_DESIGN)
        self.design_global = stator.n_elements + self.design_elements
        self.n_design = len(self.design_elements)
        self.design_areas = ar[self.design_elements]
        self.coil_elements = np.flatnonzero(stator.tags >= g.COIL_BASE)

        rows = np.repeat(self.elem_dofs, 3, axis=1).ravel()
        cols = np.tile(self.elem_dofs, (1, 3)).ravel()
        self._vol_pattern = _Pattern(rows, cols, self.n_dofs)
        self.nu0 = nu0
        self._n_el = n_el

        if nitsche.h is not None:
            self.h = float(nitsche.h)
        else:
            self.h = float(max(stator.diameters().max(), rotor.diameters().max()))
        self.penalty = nu0 * nitsche.alpha * nitsche.degree ** 2 / self.h
        self._interface_cache: dict[float, sp.csr_matrix] = {}
        if not conforming:
            self._prepare_interface()

    # ----------------------------------------------------------- interface

    def _prepare_interface(self):
        st, ro = self.stator, self.rotor
        self._if_owner_s = _edge_owner(st.triangles, st.interface_edges)
        self._if_owner_r = _edge_owner(ro.triangles, ro.interface_edges)
        sn = st.interface_nodes()
        ang = np.mod(np.arctan2(st.nodes[sn, 1], st.nodes[sn, 0]), 2 * math.pi)
        if np.any(np.diff(ang) <= 0.0):
            raise g.GeometryError("stator interface nodes must be ordered by increasing angle from 0")
        self._if_s_angles = ang
        self._if_s_points = st.nodes[sn]
        # stator-side terms do not depend on the rotor angle
        self._stator_quad = self._stator_quadrature()
        self._stator_side = self._side_blocks(self._stator_quad)

    def _stator_quadrature(self) -> dict:
        st = self.stator
        p0 = st.nodes[st.interface_edges[:, 0]]
        p1 = st.nodes[st.interface_edges[:, 1]]
        n_e = len(p0)
        edge = np.repeat(np.arange(n_e), 3)
        t = np.tile(_GAUSS_X, n_e)
        x = p0[edge] + t[:, None] * (p1 - p0)[edge]
        length = np.linalg.norm(p1 - p0, axis=1)
        w = np.tile(_GAUSS_W, n_e) * length[edge]
        normal = _outward_normals(p0, p1, outward=False)
        return self._trace_data(self._if_owner_s[edge], x, normal[edge], w,
                                np.column_stack([edge, (edge + 1) % n_e]),
                                np.column_stack([1.0 - t, t]),
                                self.stator_grads, st.triangles, st.nodes, self.stator_dofs)

    def _rotor_quadrature(self, theta: float) -> dict:
        ro = self.rotor
        edges = ro.interface_edges
        P0r, P1r = ro.nodes[edges[:, 0]], ro.nodes[edges[:, 1]]
        P0, P1 = g.rotate_points(P0r, theta), g.rotate_points(P1r, theta)
        two_pi = 2 * math.pi
        a_r = np.mod(np.arctan2(P0[:, 1], P0[:, 0]), two_pi)
        cuts = np.unique(np.concatenate([a_r, self._if_s_angles]))
        cuts = cuts[np.concatenate([[True], np.diff(cuts) > 1e-13])]
        if len(cuts) > 1 and two_pi - cuts[-1] + cuts[0] < 1e-13:
            cuts = cuts[:-1]
        lo = cuts
        hi = np.append(cuts[1:], cuts[0] + two_pi)
        mid = np.mod(0.5 * (lo + hi), two_pi)
        order = np.argsort(a_r)
        pos = np.searchsorted(a_r[order], mid, side="right") - 1
        edge = order[pos % len(order)]
        ta = _ray_param(P0[edge], P1[edge], lo)
        tb = _ray_param(P0[edge], P1[edge], hi)
        nseg = len(lo)
        seg = np.repeat(np.arange(nseg), 3)
        t = (ta[:, None] + (tb - ta)[:, None] * _GAUSS_X[None, :]).ravel()
        e = edge[seg]
        x = P0[e] + t[:, None] * (P1[e] - P0[e])
        length = np.linalg.norm(P1 - P0, axis=1)
        w = np.tile(_GAUSS_W, nseg) * (tb - ta)[seg] * length[e]
        if np.any(w < 0.0):
            raise g.GeometryError("interface quadrature produced negative weights")
        # stator trace basis at the same points, matched along the radial ray
        psi = np.mod(np.arctan2(x[:, 1], x[:, 0]), two_pi)
        ns = len(self._if_s_angles)
        k = np.mod(np.searchsorted(self._if_s_angles, psi, side="right") - 1, ns)
        s = _ray_param(self._if_s_points[k], self._if_s_points[(k + 1) % ns], psi)
        normal = _outward_normals(P0r, P1r, outward=True)
        return self._trace_data(self._if_owner_r[e], g.rotate_points(x, -theta), normal[e], w,
                                np.column_stack([k, (k + 1) % ns]),
                                np.column_stack([1.0 - s, s]),
                                self.rotor_grads, ro.triangles, ro.nodes, self.rotor_dofs)

    def _trace_data(self, elem, x_local, normal_local, weights, eta_idx, eta_val,
                    grads, tris, nodes, dof_map) -> dict:
        G = grads[elem]
        cen = nodes[tris[elem]].mean(axis=1)
        return {
            "w": weights,
            "U": 1.0 / 3.0 + np.einsum("qaj,qj->qa", G, x_local - cen),
            "Gn": np.einsum("qaj,qj->qa", G, normal_local),
            "E": eta_val,
            "du": dof_map[tris[elem]],
            "de": self.eta_dofs[eta_idx],
        }

    def _side_blocks(self, q: dict):
        U, Gn, E, du, de = q["U"], q["Gn"], q["E"], q["du"], q["de"]
        nu0, kap = self.nu0, self.penalty
        w = q["w"][:, None, None]
        uu = w * (-nu0 * (U[:, :, None] * Gn[:, None, :] + Gn[:, :, None] * U[:, None, :])
                  + kap * U[:, :, None] * U[:, None, :])
        ue = w * (nu0 * Gn[:, :, None] * E[:, None, :] - kap * U[:, :, None] * E[:, None, :])
        ee = w * kap * E[:, :, None] * E[:, None, :]
        rows = [np.repeat(du, 3, axis=1).ravel(), np.repeat(du, 2, axis=1).ravel(),
                np.repeat(de, 3, axis=1).ravel(), np.repeat(de, 2, axis=1).ravel()]
        cols = [np.tile(du, (1, 3)).ravel(), np.tile(de, (1, 3)).ravel(),
                np.tile(du, (1, 2)).ravel(), np.tile(de, (1, 2)).ravel()]
        vals = [uu.ravel(), ue.ravel(), np.transpose(ue, (0, 2, 1)).ravel(), ee.ravel()]
        return np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)

    def interface_matrix(self, theta: float) -> sp.csr_matrix:
        if self.conforming:
            return sp.csr_matrix((self.n_dofs, self.n_dofs))
        key = round(float(theta), 15)
        mat = self._interface_cache.get(key)
        if mat is None:
            r1, c1, v1 = self._stator_side
            r2, c2, v2 = self._side_blocks(self._rotor_quadrature(theta))
            mat = sp.csr_matrix((np.concatenate([v1, v2]),
                                 (np.concatenate([r1, r2]), np.concatenate([c1, c2]))),
                                shape=(self.n_dofs, self.n_dofs))
            mat.sum_duplicates()
            if len(self._interface_cache) > 64:
                self._interface_cache.clear()
            self._interface_cache[key] = mat
        return mat

    # ----------------------------------------------------------- sources

    def current_load(self, theta: float) -> np.ndarray:
        j = g.current_density(self.stator.tags, theta, self.layout, self.geometry.pole_pairs)
        f = np.zeros(self.n_dofs)
        el = self.coil_elements
        np.add.at(f, self.elem_dofs[el].ravel(),
                  np.repeat(j[el] * self.stator_areas[el] / 3.0, 3))
        return f

    def magnet_prefactor(self, rho_nu: np.ndarray) -> np.ndarray:
        return interp_value(self.materials.f_nu, 1.0 - np.asarray(rho_nu))

    def magnet_load(self, mat: ElementMaterial) -> np.ndarray:
        """Load vector of the rotor magnetization (rotor frame)."""
        f = np.zeros(self.n_dofs)
        M = np.asarray(mat.magnetization)
        if not np.any(M):
            return f
        el = self.design_global
        c = self.magnet_prefactor(mat.rho_nu) * self.areas[el]
        perp = np.column_stack([-M[:, 1], M[:, 0]]) * c[:, None]
        vals = np.einsum("eaj,ej->ea", self.grads[el], perp)
        np.add.at(f, self.elem_dofs[el].ravel(), vals.ravel())
        return f

    # ----------------------------------------------------------- volume terms

    def element_gradients(self, U: np.ndarray) -> np.ndarray:
        return np.einsum("eaj,ea->ej", self.grads, U[self.elem_dofs])

    def element_reluctivity(self, mat: ElementMaterial, bmag: np.ndarray):
        """nu and d nu / dB per element for flux densities ``bmag``."""
        curve = self.materials.curve
        nu = np.full(self._n_el, self.nu0)
        dnu = np.zeros(self._n_el)
        it = self.stator_iron
        nu[it] = reluctivity(curve, bmag[it])
        dnu[it] = reluctivity_derivative(curve, bmag[it])
        de = self.design_global
        f = interp_value(self.materials.f_nu, mat.rho_nu)
        nh = reluctivity(curve, bmag[de])
        nu[de] = self.nu0 + f * (nh - self.nu0)
        dnu[de] = f * reluctivity_derivative(curve, bmag[de])
        return nu, dnu

    def assemble(self, mat: ElementMaterial, theta: float, U: np.ndarray,
                 with_jacobian: bool = True):
        """Residual (full dof vector) and tangent matrix at ``U``."""
        grad = self.element_gradients(U)
        bmag = np.linalg.norm(grad, axis=1)
        nu, dnu = self.element_reluctivity(mat, bmag)
        G, A = self.grads, self.areas
        flux = (A * nu)[:, None] * grad
        r_el = np.einsum("eaj,ej->ea", G, flux)
        res = np.zeros(self.n_dofs)
        np.add.at(res, self.elem_dofs.ravel(), r_el.ravel())
        K_if = self.interface_matrix(theta)
        res += K_if @ U
        res -= self.current_load(theta) + self.magnet_load(mat)
        if not with_jacobian:
            return res, None
        Kel = (A * nu)[:, None, None] * np.einsum("eaj,ebj->eab", G, G)
        with np.errstate(divide="ignore", invalid="ignore"):
            coef = np.where(bmag > 1e-300, A * dnu / bmag, 0.0)
        Gg = np.einsum("eaj,ej->ea", G, grad)
        Kel += coef[:, None, None] * Gg[:, :, None] * Gg[:, None, :]
        J = self._vol_pattern.matrix(Kel.ravel()) + K_if
        return res, J

    # ----------------------------------------------------------- solving

    def material(self, design) -> ElementMaterial:
        if isinstance(design, ElementMaterial):
            mat = design
        elif isinstance(design, DensityField):
            mat = ElementMaterial.from_density(design, self.materials)
        else:
            raise TypeError(f"unsupported design type {type(design).__name__}")
        if len(mat.rho_nu) != self.n_design or np.shape(mat.magnetization) != (self.n_design, 2):
            raise ValueError(
                f"design has {len(mat.rho_nu)} elements, mesh has {self.n_design} design elements")
        return mat

    def solve_state(self, design, theta: float, guess: StateSolution | None = None,
                    rtol: float = 1e-8, atol: float = 1e-12, max_iter: int = 50,
                    stall_rtol: float = STALL_RTOL) -> StateSolution:
        """Damped Newton solve of the state problem at rotor angle ``theta``.

        The reluctivity jumps slightly where its branches meet, so the
        residual can stop decreasing above ``rtol`` when elements sit on a
        junction.  A stall below ``stall_rtol`` (relative to the load) is
        returned with ``converged=False``; above it a SolverError is raised.
        """
        mat = self.material(design)
        U = np.zeros(self.n_dofs) if guess is None else np.array(guess.U, dtype=float)
        U[self.fixed_dofs] = 0.0
        free = self.free
        load = self.current_load(theta) + self.magnet_load(mat)
        ref = np.linalg.norm(load[free])
        tol = max(rtol * ref, atol)
        res, J = self.assemble(mat, theta, U)
        rnorm = np.linalg.norm(res[free])
        history = [rnorm]
        it = 0
        while rnorm > tol:
            if it >= max_iter:
                raise SolverError(f"Newton did not converge in {max_iter} steps at theta={theta:.6g} "
                                  f"(residual {rnorm:.3e})", rnorm, theta)
            Jf = J[free][:, free].tocsc()
            try:
                du = spla.spsolve(Jf, -res[free])
            except RuntimeError as exc:  # singular factor
                raise SolverError(f"singular Jacobian at theta={theta:.6g}: {exc}", rnorm, theta) from exc
            if not np.all(np.isfinite(du)):
                raise SolverError(f"singular Jacobian at theta={theta:.6g}", rnorm, theta)
            step = 1.0
            accepted = False
            for _ in range(21):
                trial = U.copy()
                trial[free] += step * du
                res_t, J_t = self.assemble(mat, theta, trial)
                rn_t = np.linalg.norm(res_t[free])
                if rn_t < rnorm:
                    accepted = True
                    break
                step *= 0.5
            it += 1
            if not accepted:
                if rnorm <= max(stall_rtol * ref, atol):
                    break
                raise SolverError(f"Newton line search failed at theta={theta:.6g} "
                                  f"(residual {rnorm:.3e})", rnorm, theta)
            U, res, J, rnorm = trial, res_t, J_t, rn_t
            history.append(rnorm)
        return StateSolution(U=U, theta=float(theta), converged=bool(rnorm <= tol), newton_iters=it,
                             residual_norm=float(rnorm), design_key=mat.key,
                             residual_history=history)

    def solve_four_positions(self, design, guesses=None, **kw) -> list[StateSolution]:
        mat = self.material(design)
        out = []
        for i, th in enumerate(FOUR_POSITIONS):
            guess = None if guesses is None else guesses[i]
            try:
                out.append(self.solve_state(mat, th, guess, **kw))
            except SolverError as exc:
                raise SolverError(f"state solve failed at theta={th:.6g}: {exc}",
                                  exc.residual_norm, th) from exc
        return out

    def tangent(self, design, state: StateSolution) -> sp.csr_matrix:
        _, J = self.assemble(self.material(design), state.theta, state.U)
        return J

    # ----------------------------------------------------------- post

    def flux_density(self, state: StateSolution) -> np.ndarray:
        """|B| per element (stator elements first, then rotor)."""
        return np.linalg.norm(self.element_gradients(state.U), axis=1)

    def field_energy(self, design, state: StateSolution) -> float:
        """Integral of nu |grad u|^2 over both meshes."""
        mat = self.material(design)
        grad = self.element_gradients(state.U)
        b = np.linalg.norm(grad, axis=1)
        nu, _ = self.element_reluctivity(mat, b)
        return float(np.sum(self.areas * nu * b * b))

    def interface_jump(self, state: StateSolution) -> float:
        """Penalty-weighted mismatch sqrt(kappa * sum_i ||u_i - eta||^2) on the sliding circle."""
        if self.conforming:
            return 0.0
        total = 0.0
        for q in (self._stator_quad, self._rotor_quadrature(state.theta)):
            diff = np.sum(q["U"] * state.U[q["du"]], axis=1) - np.sum(q["E"] * state.U[q["de"]], axis=1)
            total += float(np.sum(q["w"] * diff * diff))
        return math.sqrt(self.penalty * total)


def _edge_owner(tris: np.ndarray, edges: np.ndarray) -> np.ndarray:
    """Index of the triangle containing each (boundary) edge."""
    n = int(tris.max()) + 1
    tri_edges = np.concatenate([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]])
    owner = np.tile(np.arange(len(tris)), 3)
    key = np.sort(tri_edges, axis=1)
    key = key[:, 0].astype(np.int64) * n + key[:, 1]
    q = np.sort(edges, axis=1)
    q = q[:, 0].astype(np.int64) * n + q[:, 1]
    order = np.argsort(key)
    pos = np.searchsorted(key[order], q)
    if np.any(key[order][pos] != q):
        raise g.GeometryError("interface edge not found in the mesh")
    return owner[order][pos]


def _outward_normals(p0: np.ndarray, p1: np.ndarray, outward: bool) -> np.ndarray:
    """Unit chord normals pointing away from (or towards) the origin."""
    tv = (p1 - p0) / np.linalg.norm(p1 - p0, axis=1)[:, None]
    n = np.column_stack([tv[:, 1], -tv[:, 0]])
    away = np.sum(n * (p0 + p1), axis=1) > 0.0
    n[away != outward] *= -1.0
    return n


def _ray_param(p0: np.ndarray, p1: np.ndarray, angle: np.ndarray) -> np.ndarray:
    """Chord parameter t where the ray from the origin at ``angle`` hits p0 + t (p1 - p0)."""
    d = np.column_stack([np.cos(angle), np.sin(angle)])
    e = p1 - p0
    num = -(p0[:, 0] * d[:, 1] - p0[:, 1] * d[:, 0])
    den = e[:, 0] * d[:, 1] - e[:, 1] * d[:, 0]
    return np.clip(num / den, 0.0, 1.0)


def build_model(geometry: g.MachineGeometry, layout: g.WindingLayout, target_h: float,
                materials: MaterialModel = MaterialModel(), nitsche: NitscheParams = NitscheParams(),
                stator_coarsening: float = 1.5) -> MachineModel:
    stator, rotor = g.generate_meshes(geometry, target_h, stator_coarsening)
    stator, layout = g.bind_winding(stator, layout)
    return MachineModel(geometry, layout, stator, rotor, materials, nitsche)


def evaluate_p1(nodes: np.ndarray, tris: np.ndarray, values: np.ndarray,
                points: np.ndarray, chunk: int = 512) -> np.ndarray:
    """Evaluate a P1 field at arbitrary points (nan outside the mesh)."""
    p = nodes[tris]
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    out = np.full(len(points), np.nan)
    for s in range(0, len(points), chunk):
        q = points[s:s + chunk]
        rel = q[:, None, :] - p[None, :, 0, :]
        l1 = (rel[..., 0] * d2[None, :, 1] - rel[..., 1] * d2[None, :, 0]) / det
        l2 = (d1[None, :, 0] * rel[..., 1] - d1[None, :, 1] * rel[..., 0]) / det
        l0 = 1.0 - l1 - l2
        inside = (l0 >= -1e-10) & (l1 >= -1e-10) & (l2 >= -1e-10)
        has = inside.any(axis=1)
        t = np.argmax(inside, axis=1)
        rows = np.arange(len(q))
        v = values[tris[t]]
        val = v[:, 0] * l0[rows, t] + v[:, 1] * l1[rows, t] + v[:, 2] * l2[rows, t]
        out[s:s + chunk] = np.where(has, val, np.nan)
    return out
