"""Arkkio torque on the air-gap annulus and rotor-angle averages."""
from __future__ import annotations

import csv
import math

import numpy as np
import scipy.sparse as sp

from . import geometry as g
from .fem import FOUR_POSITIONS, MachineModel, StateSolution
from .materials import DomainError

# 6-point symmetric rule, exact for degree-4 polynomials on triangles
_DUNAVANT_W = np.array([0.223381589678011] * 3 + [0.109951743655322] * 3)
_a, _b = 0.445948490915965, 0.108103018168070
_c, _d = 0.091576213509771, 0.816847572980459
_DUNAVANT_L = np.array([[_a, _a, _b], [_a, _b, _a], [_b, _a, _a],
                        [_c, _c, _d], [_c, _d, _c], [_d, _c, _c]])


def q_matrix(x: float, y: float) -> np.ndarray:
    """Matrix with grad(u)^T Q grad(u) = r B_r B_phi for B = curl(u e_z)."""
    r = math.hypot(x, y)
    if r == 0.0:
        raise DomainError("Q is undefined at the origin")
    off = 0.5 * (y * y - x * x) / r
    return np.array([[x * y / r, off], [off, -x * y / r]])


def _q_averaged(points: np.ndarray, tris: np.ndarray) -> np.ndarray:
    """Integral of Q over each triangle, shape (M, 2, 2)."""
    p = points[tris]
    q = np.einsum("kj,mjd->mkd", _DUNAVANT_L, p)
    x, y = q[..., 0], q[..., 1]
    r = np.hypot(x, y)
    off = 0.5 * (y * y - x * x) / r
    d = x * y / r
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    area = 0.5 * np.abs(d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])
    out = np.empty((len(tris), 2, 2))
    out[:, 0, 0] = area * (d @ _DUNAVANT_W)
    out[:, 1, 1] = -out[:, 0, 0]
    out[:, 0, 1] = out[:, 1, 0] = area * (off @ _DUNAVANT_W)
    return out


class ArkkioEvaluator:
    """Torque as the quadratic form T(U) = U^T K U over annulus elements.

    The annulus [r_r, r_s] straddles the sliding circle, so it is integrated on
    both meshes, each over its own part.  Rotor elements use rotor-frame
    coordinates; r B_r B_phi is invariant under the rigid rotation.
    """

    def __init__(self, model: MachineModel):
        geo = model.geometry
        if not geo.r_s > geo.r_r:
            raise g.GeometryError("Arkkio annulus requires r_s > r_r")
        self.model = model
        self.length = geo.axial_length
        self.r_r, self.r_s = geo.r_r, geo.r_s
        self.nu0 = model.nu0
        s_el = np.flatnonzero(model.stator.tags == g.ARKKIO)
        r_el = np.flatnonzero(model.rotor.tags == g.ARKKIO)
        if len(s_el) + len(r_el) == 0:
            raise g.GeometryError("mesh has no Arkkio annulus elements")
        self.elements = np.concatenate([s_el, model.n_stator_elements + r_el])
        qbar = np.concatenate([_q_averaged(model.stator.nodes, model.stator.triangles[s_el]),
                               _q_averaged(model.rotor.nodes, model.rotor.triangles[r_el])])
        G = model.grads[self.elements]
        kel = np.einsum("eaj,ejk,ebk->eab", G, qbar, G)
        dofs = model.elem_dofs[self.elements]
        rows = np.repeat(dofs, 3, axis=1).ravel()
        cols = np.tile(dofs, (1, 3)).ravel()
        self.scale = self.length * self.nu0 / (self.r_s - self.r_r)
        self.matrix = sp.csr_matrix((self.scale * kel.ravel(), (rows, cols)),
                                    shape=(model.n_dofs, model.n_dofs))
        self.matrix.sum_duplicates()
        self._dofs = dofs
        self._g1, self._g2 = G[:, 1], G[:, 2]
        self._qbar = qbar

    def torque(self, U: np.ndarray) -> float:
        # gradients from nodal differences: adding a constant to U changes nothing
        u = U[self._dofs]
        grad = self._g1 * (u[:, 1] - u[:, 0])[:, None] + self._g2 * (u[:, 2] - u[:, 0])[:, None]
        return float(self.scale * np.einsum("ej,ejk,ek->", grad, self._qbar, grad))

    def gradient(self, U: np.ndarray) -> np.ndarray:
        """dT/dU (the matrix is symmetric)."""
        return 2.0 * (self.matrix @ U)


def torque(state: StateSolution, ev: ArkkioEvaluator) -> float:
    return ev.torque(state.U)


def average_torque(states: list[StateSolution], ev: ArkkioEvaluator) -> float:
    return float(np.mean([ev.torque(s.U) for s in states]))


def average_torque_four_point(model: MachineModel, design, ev: ArkkioEvaluator | None = None) -> float:
    ev = ArkkioEvaluator(model) if ev is None else ev
    return average_torque(model.solve_four_positions(design), ev)


def torque_sweep(model: MachineModel, design, n_positions: int = 60,
                 ev: ArkkioEvaluator | None = None) -> list[tuple[float, float]]:
    """Torque at ``n_positions`` equally spaced angles in [0, 2 pi)."""
    if n_positions < 1:
        raise ValueError("n_positions must be >= 1")
    ev = ArkkioEvaluator(model) if ev is None else ev
    mat = model.material(design)
    out = []
    prev = None
    for k in range(n_positions):
        theta = 2.0 * math.pi * k / n_positions
        prev = model.solve_state(mat, theta, guess=prev)
        out.append((theta, ev.torque(prev.U)))
    return out


def write_sweep_csv(path, sweep: list[tuple[float, float]]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["theta_rad", "torque_Nm"])
        for theta, t in sweep:
            w.writerow([f"{theta:.12g}", f"{t:.12g}"])


__all__ = ["FOUR_POSITIONS", "ArkkioEvaluator", "q_matrix", "torque", "average_torque",
           "average_torque_four_point", "torque_sweep", "write_sweep_csv"]
