"""Adjoint solves and the design gradient of the augmented Lagrangian.

The objective is

    L(X) = -T_bar + psi(h_iron) + psi(h_magnet) + I_gamma(rho_nu_bar) + I_gamma(m_bar)

with T_bar the four-position average torque and h_* = bound - volume.  All
design-dependent terms of the state operator live in the rotor frame, so the
per-angle partial derivatives need no re-indexing between positions.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse.linalg as spla

from .design import (AugLagState, DesignMap, PhysicalDesign, intermediate_penalty,
                     intermediate_penalty_gradient, psi, psi_derivative, volume_fraction)
from .fem import ElementMaterial, MachineModel, SolverError, StateSolution
from .materials import interp_derivative, interp_value, reluctivity
from .torque import ArkkioEvaluator


class StaleStateError(RuntimeError):
    pass


@dataclass(eq=False)
class AdjointSolution:
    lam: np.ndarray
    theta: float

    def trace(self, model: MachineModel) -> np.ndarray:
        return self.lam[model.eta_dofs]


@dataclass(eq=False)
class DesignGradient:
    g_rho_nu: np.ndarray
    g_rho_mx: np.ndarray
    g_rho_my: np.ndarray

    def as_array(self) -> np.ndarray:
        return np.stack([self.g_rho_nu, self.g_rho_mx, self.g_rho_my])

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "DesignGradient":
        return cls(arr[0].copy(), arr[1].copy(), arr[2].copy())


def solve_adjoint(model: MachineModel, design, state: StateSolution, load: np.ndarray) -> AdjointSolution:
    """Solve J^T lam = load on free dofs, J the Newton tangent at ``state``.

    ``load`` is -dL/dU; for the torque objective that is (1/4) dT/dU.
    """
    J = model.tangent(design, state)
    free = model.free
    lam = np.zeros(model.n_dofs)
    rhs = load[free]
    if not np.any(rhs):
        return AdjointSolution(lam, state.theta)
    try:
        sol = spla.spsolve(J[free][:, free].T.tocsc(), rhs)
    except RuntimeError as exc:
        raise SolverError(f"singular adjoint system at theta={state.theta:.6g}: {exc}") from exc
    if not np.all(np.isfinite(sol)):
        raise SolverError(f"singular adjoint system at theta={state.theta:.6g}")
    lam[free] = sol
    return AdjointSolution(lam, state.theta)


def residual_partials(model: MachineModel, mat: ElementMaterial, state: StateSolution,
                      adjoint: AdjointSolution) -> tuple[np.ndarray, np.ndarray]:
    """lam^T dR/d(rho_nu) per design element and lam^T dR/dM, shape (n, 2)."""
    el = model.design_global
    G = model.grads[el]
    dofs = model.elem_dofs[el]
    gu = np.einsum("eaj,ea->ej", G, state.U[dofs])
    gl = np.einsum("eaj,ea->ej", G, adjoint.lam[dofs])
    area = model.areas[el]
    mats = model.materials
    rho = np.asarray(mat.rho_nu)
    nh = reluctivity(mats.curve, np.linalg.norm(gu, axis=1))
    M = np.asarray(mat.magnetization)
    perp = np.column_stack([-M[:, 1], M[:, 0]])
    g_rho = area * (interp_derivative(mats.f_nu, rho) * (nh - model.nu0) * np.sum(gu * gl, axis=1)
                    + interp_derivative(mats.f_nu, 1.0 - rho) * np.sum(perp * gl, axis=1))
    pref = area * interp_value(mats.f_nu, 1.0 - rho)
    g_mag = np.column_stack([-pref * gl[:, 1], pref * gl[:, 0]])
    return g_rho, g_mag


@dataclass(eq=False)
class Evaluation:
    """Objective value and everything needed to differentiate it."""

    value: float
    torque: float
    torques: list
    vol_iron: float
    vol_magnet: float
    phys: PhysicalDesign
    material: ElementMaterial
    states: list
    key: str


class Objective:
    """Augmented Lagrangian of the average-torque problem for one machine model."""

    def __init__(self, model: MachineModel, design_map: DesignMap, penalty_weight: float = 0.0,
                 torque_weight: float = 1.0, solver_options: dict | None = None):
        self.model = model
        self.solver_options = dict(solver_options or {})
        self.design_map = design_map
        self.evaluator = ArkkioEvaluator(model)
        self.penalty_weight = penalty_weight
        self.torque_weight = torque_weight
        self.areas = model.design_areas

    def evaluate(self, X, auglag: AugLagState, guesses=None) -> Evaluation:
        phys = self.design_map.forward(X)
        mat = ElementMaterial(phys.rho_nu, phys.magnetization, phys.key)
        states = self.model.solve_four_positions(mat, guesses, **self.solver_options)
        torques = [self.evaluator.torque(s.U) for s in states]
        t_bar = float(np.mean(torques))
        v_iron = volume_fraction(phys.rho_nu, self.areas)
        v_mag = volume_fraction(phys.magnet_density, self.areas)
        value = (-self.torque_weight * t_bar
                 + psi(auglag.bound_iron - v_iron, auglag.sigma_iron, auglag.mu)
                 + psi(auglag.bound_magnet - v_mag, auglag.sigma_magnet, auglag.mu)
                 + intermediate_penalty(phys.rho_nu, self.areas, self.penalty_weight)
                 + intermediate_penalty(phys.m_bar, self.areas, self.penalty_weight))
        return Evaluation(float(value), t_bar, torques, v_iron, v_mag, phys, mat, states, phys.key)

    def adjoints(self, ev: Evaluation) -> list[AdjointSolution]:
        n = len(ev.states)
        return [solve_adjoint(self.model, ev.material, s,
                              (self.torque_weight / n) * self.evaluator.gradient(s.U))
                for s in ev.states]

    def gradient(self, X, ev: Evaluation, auglag: AugLagState,
                 adjoints: list[AdjointSolution] | None = None) -> DesignGradient:
        return lagrangian_gradient(self, X, ev, auglag, adjoints)


def lagrangian_gradient(obj: Objective, X, ev: Evaluation, auglag: AugLagState,
                        adjoints: list[AdjointSolution] | None = None) -> DesignGradient:
    if X.digest() != ev.key or any(s.design_key != ev.key for s in ev.states):
        raise StaleStateError("state solutions belong to a different design")
    if adjoints is None:
        adjoints = obj.adjoints(ev)
    phys, areas = ev.phys, obj.areas
    n = len(areas)
    g_rho = np.zeros(n)
    g_mag = np.zeros((n, 2))
    for s, a in zip(ev.states, adjoints):
        gr, gm = residual_partials(obj.model, ev.material, s, a)
        g_rho += gr
        g_mag += gm
    # explicit terms: volume constraints and intermediate penalties
    v_total = areas.sum()
    d_iron = psi_derivative(auglag.bound_iron - ev.vol_iron, auglag.sigma_iron, auglag.mu)
    d_mag = psi_derivative(auglag.bound_magnet - ev.vol_magnet, auglag.sigma_magnet, auglag.mu)
    g_rho += -d_iron * areas / v_total
    g_rho += -d_mag * (-phys.m_bar) * areas / v_total
    g_mbar = -d_mag * (1.0 - phys.rho_nu) * areas / v_total
    g_rho += intermediate_penalty_gradient(phys.rho_nu, areas, obj.penalty_weight)
    g_mbar += intermediate_penalty_gradient(phys.m_bar, areas, obj.penalty_weight)
    return DesignGradient.from_array(obj.design_map.vjp(phys, g_rho, g_mag, g_mbar))
