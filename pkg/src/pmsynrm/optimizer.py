"""Projected-gradient descent on the augmented Lagrangian with continuation."""
from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .design import (AugLagState, FilterParams, HelmholtzFilter, helmholtz_filter,
                     intermediate_penalty, intermediate_penalty_gradient, psi, psi_derivative,
                     tanh_projection, tanh_projection_derivative, update_multipliers,
                     volume_fraction)
from .fem import DensityField, SolverError
from .sensitivity import DesignGradient, Evaluation, Objective

HISTORY_COLUMNS = ("iter", "L", "T_bar_Nm", "vol_iron", "vol_magnet", "step", "grad_inf_norm",
                   "accepted", "phase")

GRADIENT_EPS = 1e-14
# volume excess that triggers an early multiplier update on a stalled line search
VIOLATION_TOL = 1e-3


def projected_gradient(X: DensityField, grad: DesignGradient) -> DesignGradient:
    """Zero the components that would push a density through an active bound."""
    x = X.as_array()
    gr = grad.as_array()
    out = np.where(x <= 0.0, np.minimum(gr, 0.0), np.where(x >= 1.0, np.maximum(gr, 0.0), gr))
    return DesignGradient.from_array(out)


def take_step(X: DensityField, grad: DesignGradient, step: float) -> DensityField:
    """Move every element by ``step`` against its normalised 3-vector gradient, then clamp."""
    if not step > 0.0:
        raise ValueError("step must be > 0")
    x = X.as_array()
    gr = grad.as_array()
    norm = np.linalg.norm(gr, axis=0)
    move = norm >= GRADIENT_EPS
    new = x.copy()
    new[:, move] = x[:, move] - step * gr[:, move] / norm[move]
    return DensityField.from_array(np.clip(new, 0.0, 1.0))


@dataclass(frozen=True)
class OptimizerConfig:
    max_iter: int = 300
    tol: float = 1e-4
    step: float = 0.05
    max_halvings: int = 10
    grow: float = 1.2
    max_step: float = 0.2
    multiplier_every: int = 10
    beta_start: float | None = 4.0
    beta_max: float = 64.0
    beta_every: int = 50
    penalty_weight: float = 0.0
    bound_iron: float = 0.4
    bound_magnet: float = 1.0
    mu: float = 0.1
    active_channels: tuple[bool, bool, bool] = (True, True, True)
    max_failures: int = 2

    def __post_init__(self):
        if self.max_iter < 0 or not self.step > 0 or not self.tol >= 0:
            raise ValueError("invalid optimizer limits")
        if not self.grow > 0.0 or self.max_halvings < 0:
            raise ValueError("invalid line-search settings")


@dataclass
class OptimizationResult:
    design: DensityField
    history: list = field(default_factory=list)
    evaluation: Evaluation | None = None
    auglag: AugLagState | None = None
    beta: float | None = None
    reason: str = ""
    error: str = ""
    wall_time: float = 0.0


def _rescore(obj: Objective, ev: Evaluation, al: AugLagState) -> float:
    phys, areas = ev.phys, obj.areas
    return float(-obj.torque_weight * ev.torque
                 + psi(al.bound_iron - ev.vol_iron, al.sigma_iron, al.mu)
                 + psi(al.bound_magnet - ev.vol_magnet, al.sigma_magnet, al.mu)
                 + intermediate_penalty(phys.rho_nu, areas, obj.penalty_weight)
                 + intermediate_penalty(phys.m_bar, areas, obj.penalty_weight))


def optimize(obj: Objective, start: DensityField, cfg: OptimizerConfig = OptimizerConfig(),
             callback=None, log=None) -> OptimizationResult:
    """Run the descent loop; solver failures end the run with the history kept.

    ``callback(iteration, X, evaluation)`` is called after every iteration.
    """
    t0 = time.perf_counter()
    mask = np.array(cfg.active_channels, dtype=float)[:, None]
    rel_area = obj.areas / obj.areas.sum()
    beta = cfg.beta_start
    obj.design_map = obj.design_map.with_params(replace(obj.design_map.params, beta=beta))
    al = AugLagState(mu=cfg.mu, bound_iron=cfg.bound_iron, bound_magnet=cfg.bound_magnet)
    X = start
    result = OptimizationResult(design=X, auglag=al, beta=beta)
    history = result.history
    try:
        ev = obj.evaluate(X, al)
    except SolverError as exc:
        result.reason, result.error = "solver failure", str(exc)
        return result
    step = cfg.step
    failures = 0
    phase = 0
    accepted = True
    for it in range(cfg.max_iter + 1):
        grad = DesignGradient.from_array(obj.gradient(X, ev, al).as_array() * mask)
        pg = projected_gradient(X, grad)
        # per unit volume fraction, so the stopping test does not scale with element size
        gnorm = float(np.max(np.abs(pg.as_array()) / rel_area)) if len(X) else 0.0
        history.append((it, ev.value, ev.torque, ev.vol_iron, ev.vol_magnet, step, gnorm,
                        int(accepted), phase))
        if log is not None:
            log(f"iter {it:4d}  L={ev.value:+.6f}  T={ev.torque:.5f}  iron={ev.vol_iron:.4f}  "
                f"mag={ev.vol_magnet:.4f}  s={step:.4g}  |G|={gnorm:.3e}  "
                f"sig=({al.sigma_iron:.3g},{al.sigma_magnet:.3g})  mu={al.mu:.3g}")
        if callback is not None:
            callback(it, X, ev)
        if gnorm < cfg.tol:
            result.reason = "gradient tolerance"
            break
        if it == cfg.max_iter:
            result.reason = "iteration limit"
            break
        trial_step = step
        accepted = False
        for k in range(cfg.max_halvings + 1):
            X_new = take_step(X, pg, trial_step)
            try:
                ev_new = obj.evaluate(X_new, al, guesses=ev.states)
            except SolverError:
                trial_step *= 0.5
                continue
            if ev_new.value < ev.value:
                accepted = True
                break
            trial_step *= 0.5
        if accepted:
            X, ev = X_new, ev_new
            failures = 0
            step = min(trial_step * cfg.grow, cfg.max_step) if k == 0 else trial_step
        else:
            step = max(trial_step, cfg.step * 0.5 ** cfg.max_halvings)
            # stationary while a bound is still violated: the multipliers are stale, not the design
            stalled_infeasible = (cfg.multiplier_every and
                                  max(ev.vol_iron - al.bound_iron, ev.vol_magnet - al.bound_magnet)
                                  > VIOLATION_TOL)
            if not stalled_infeasible:
                failures += 1
                if failures >= cfg.max_failures:
                    result.reason = "line search failed"
                    break
        n = it + 1
        changed = False
        if cfg.multiplier_every and (n % cfg.multiplier_every == 0 or (not accepted and stalled_infeasible)):
            al = update_multipliers(al, al.bound_iron - ev.vol_iron, al.bound_magnet - ev.vol_magnet)
            changed = True
        if (beta is not None and cfg.beta_every and n % cfg.beta_every == 0
                and beta < cfg.beta_max):
            beta = min(2.0 * beta, cfg.beta_max)
            obj.design_map = obj.design_map.with_params(replace(obj.design_map.params, beta=beta))
            try:
                ev = obj.evaluate(X, al, guesses=ev.states)
            except SolverError as exc:
                result.reason, result.error = "solver failure", str(exc)
                break
            step = cfg.step
            changed = True
        elif changed:
            ev.value = _rescore(obj, ev, al)
        if changed:
            phase += 1
            failures = 0
    result.design, result.evaluation, result.auglag, result.beta = X, ev, al, beta
    result.wall_time = time.perf_counter() - t0
    return result


def write_history_csv(path, history: list) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HISTORY_COLUMNS)
        for row in history:
            it, L, T, vi, vm, s, gn, acc, ph = row
            w.writerow([it, f"{L:.12g}", f"{T:.12g}", f"{vi:.12g}", f"{vm:.12g}", f"{s:.12g}",
                        f"{gn:.12g}", acc, ph])


__all__ = ["AugLagState", "FilterParams", "HelmholtzFilter", "OptimizerConfig", "OptimizationResult",
           "helmholtz_filter", "intermediate_penalty", "intermediate_penalty_gradient", "optimize",
           "projected_gradient", "psi", "psi_derivative", "take_step", "tanh_projection",
           "tanh_projection_derivative", "update_multipliers", "volume_fraction",
           "write_history_csv", "HISTORY_COLUMNS"]
