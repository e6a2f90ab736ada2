import numpy as np
import pytest

from pmsynrm import config as C
from pmsynrm.design import DesignMap, FilterParams
from pmsynrm.fem import DensityField
from pmsynrm.sensitivity import Objective


def small_config(h=3.0e-3):
    return C.apply_overrides(C.default_config(), {"solver": {"target_h": h}})


TIGHT = {"rtol": 1e-13, "atol": 1e-14, "max_iter": 50}


def make_objective(model, beta=None, filter_on=True, penalty=0.0, torque_weight=1.0):
    params = FilterParams(delta=1.5, beta=beta, filter_on=filter_on)
    ro = model.rotor
    dmap = DesignMap(ro.nodes, ro.triangles[model.design_elements], ro.h, params,
                     model.materials.magnet, model.materials.f_m)
    return Objective(model, dmap, penalty_weight=penalty, torque_weight=torque_weight, solver_options=TIGHT)


def random_design(n, seed):
    rng = np.random.default_rng(seed)
    return DensityField(rng.uniform(0.15, 0.85, n), rng.uniform(0.1, 0.9, n), rng.uniform(0.1, 0.9, n))


def fd_check(obj, X, al, n_elements=20, h=1e-5, seed=0):
    ev = obj.evaluate(X, al)
    grad = obj.gradient(X, ev, al).as_array()
    rng = np.random.default_rng(seed)
    elems = rng.choice(len(X), n_elements, replace=False)
    base = X.as_array()
    worst = 0.0
    gscale = np.abs(grad).max()
    for e in elems:
        for ch in range(3):
            vals = []
            for sgn in (1, -1):
                a = base.copy()
                a[ch, e] += sgn * h
                vals.append(obj.evaluate(DensityField.from_array(a), al, guesses=ev.states).value)
            fd = (vals[0] - vals[1]) / (2 * h)
            err = abs(fd - grad[ch, e]) / max(abs(grad[ch, e]), 1e-3 * gscale)
            worst = max(worst, err)
    return worst


@pytest.fixture(scope="session")
def machine():
    return C.machine(C.default_config())


@pytest.fixture(scope="session")
def coarse_model():
    """About 300 design elements; cheap enough for finite-difference checks."""
    return C.model(small_config(3.0e-3))


@pytest.fixture(scope="session")
def default_model():
    return C.model(C.default_config())


ACCEPTANCE_LINES: list[str] = []


def check(criterion: int, name: str, ok: bool, detail: str) -> None:
    """Record one acceptance line, then fail the test if the criterion is not met."""
    ACCEPTANCE_LINES.append(f"[{'PASS' if ok else 'FAIL'}] {criterion:2d} {name}: {detail}")
    assert ok, detail


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
