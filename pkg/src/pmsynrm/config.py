"""Run configuration: INI files, embedded study presets, object builders.

Every key has a default in ``SCHEMA``; a config file only lists overrides.
Values are typed by their default.  Angles may be written as multiples of
pi (``5*pi/6``, ``3pi/32``).
"""
from __future__ import annotations

import configparser
import copy
import math
import re
from dataclasses import dataclass

import numpy as np

from . import geometry as g
from .design import DesignMap, FilterParams
from .fem import DensityField, MachineModel, NitscheParams
from .materials import InterpolationScheme, MagnetSpec, MarroccoCurve, MaterialModel
from .optimizer import OptimizerConfig
from .postprocess import ClusterConfig
from .sensitivity import Objective


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None, source: str = "<config>"):
        where = f"{source}:{line}: " if line is not None else f"{source}: "
        super().__init__(where + message)
        self.line = line


SCHEMA: dict[str, dict[str, object]] = {
    "geometry": {
        "slot_count": 24, "axial_length": 50.0e-3, "rotor_outer_radius": 18.5e-3,
        "stator_inner_radius": 26.5e-3, "stator_outer_radius": 47.5e-3, "air_gap_length": 8.0e-3,
        "pole_pairs": 1, "arkkio_inner_radius": "auto", "arkkio_outer_radius": "auto",
        "slot_opening_depth": 1.0e-3, "slot_depth": 11.5e-3, "slot_width_fraction": 0.5,
    },
    "winding": {
        "turns_per_coil": 64, "peak_current": 12.0, "phase_angle": "5*pi/6",
        "belt_order": "U+,W-,V+,U-,W+,V-",
    },
    "material": {
        "marrocco_variant": "consistent", "alpha": 6.84, "beta": -0.130, "gamma": 4.86,
        "eps": 1.57e-4, "tau": 4.14e3, "c": 1.90e-2, "b_max": 1.80, "m_max": 2.33e5,
        "f_nu": "td", "f_nu_param": 0.0, "f_m": "lukas", "f_m_param": 5.0,
    },
    "solver": {
        "target_h": 1.5e-3, "stator_coarsening": 1.5, "nitsche_alpha": 160.0,
        "newton_rtol": 1e-8, "newton_atol": 1e-12, "newton_max_iter": 50, "newton_stall_rtol": 1e-4,
    },
    "optimizer": {
        "start": "layered", "layer_angle": "pi/4", "layer_period": 7.4e-3,
        "bound_iron": 0.4, "bound_magnet": 1.0, "active_channels": "nu,mx,my",
        "max_iter": 300, "tol": 1e-4, "step": 0.05, "max_halvings": 10, "grow": 1.2,
        "max_step": 0.2, "multiplier_every": 10, "mu": 0.1, "filter_delta": 1.0,
        "beta_start": "4", "beta_max": 64.0, "beta_every": 50, "penalty_weight": 0.0,
    },
    "postprocess": {
        "k": 5, "norm_x": "auto", "norm_y": "auto", "angle_weight": 1.0, "max_iter": 100,
        "seed": 0, "wrap": True, "magnitude_threshold": 0.5, "iron_threshold": 0.5,
    },
    "output": {"directory": "out", "snapshot_every": 0, "sweep_positions": 60},
}

_ANGLE_RE = re.compile(r"^\s*([-+]?\d*\.?\d*)\s*\*?\s*pi\s*(?:/\s*(\d*\.?\d+))?\s*$")


def parse_angle(text: str) -> float:
    """A float, or ``[a][*]pi[/b]``."""
    try:
        return float(text)
    except ValueError:
        pass
    m = _ANGLE_RE.match(text)
    if not m:
        raise ValueError(f"not an angle: {text!r}")
    a = m.group(1)
    num = 1.0 if a in ("", "+") else (-1.0 if a == "-" else float(a))
    den = float(m.group(2)) if m.group(2) else 1.0
    return num * math.pi / den


def _convert(default, text: str):
    if isinstance(default, bool):
        low = text.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"expected a boolean, got {text!r}")
    if isinstance(default, int):
        return int(text)
    if isinstance(default, float):
        return float(text)
    return text.strip()


@dataclass
class RunConfig:
    values: dict
    source: str = "<defaults>"

    def __getitem__(self, section: str) -> dict:
        return self.values[section]

    def copy(self) -> "RunConfig":
        return RunConfig(copy.deepcopy(self.values), self.source)


def default_config() -> RunConfig:
    return RunConfig(copy.deepcopy(SCHEMA))


def _locate(lines: list[str], section: str, key: str) -> int | None:
    current = None
    for i, raw in enumerate(lines, start=1):
        s = raw.strip()
        if s.startswith("[") and s.endswith("]"):
            current = s[1:-1].strip()
        elif current == section and re.match(rf"^{re.escape(key)}\s*[=:]", s):
            return i
    return None


def apply_overrides(cfg: RunConfig, overrides: dict, lines: list[str] | None = None,
                    source: str = "<overrides>") -> RunConfig:
    out = cfg.copy()
    lines = lines or []
    for section, entries in overrides.items():
        if section not in SCHEMA:
            raise ConfigError(f"unknown section [{section}]", _locate_section(lines, section), source)
        for key, raw in entries.items():
            if key not in SCHEMA[section]:
                raise ConfigError(f"unknown key {key!r} in [{section}]", _locate(lines, section, key), source)
            try:
                val = _convert(SCHEMA[section][key], raw) if isinstance(raw, str) else raw
            except ValueError as exc:
                raise ConfigError(f"[{section}] {key}: {exc}", _locate(lines, section, key), source) from exc
            out.values[section][key] = val
    out.source = source
    return out


def _locate_section(lines: list[str], section: str) -> int | None:
    for i, raw in enumerate(lines, start=1):
        if raw.strip() == f"[{section}]":
            return i
    return None


def parse_config(text: str, base: RunConfig | None = None, source: str = "<config>") -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string(text, source=source)
    except configparser.ParsingError as exc:
        lineno = exc.errors[0][0] if exc.errors else None
        raise ConfigError(f"malformed line {exc.errors[0][1] if exc.errors else ''}", lineno, source) from exc
    except configparser.Error as exc:
        raise ConfigError(str(exc).splitlines()[0], getattr(exc, "lineno", None), source) from exc
    overrides = {s: dict(parser.items(s)) for s in parser.sections()}
    cfg = apply_overrides(base or default_config(), overrides, text.splitlines(), source)
    validate(cfg, text.splitlines())
    return cfg


def load_config(path, base: RunConfig | None = None) -> RunConfig:
    with open(path) as fh:
        return parse_config(fh.read(), base, str(path))


def validate(cfg: RunConfig, lines: list[str] | None = None) -> None:
    lines = lines or []

    def fail(section, key, msg):
        raise ConfigError(f"[{section}] {key}: {msg}", _locate(lines, section, key), cfg.source)

    for key in ("phase_angle",):
        try:
            parse_angle(cfg["winding"][key])
        except ValueError as exc:
            fail("winding", key, str(exc))
    try:
        parse_angle(cfg["optimizer"]["layer_angle"])
    except ValueError as exc:
        fail("optimizer", "layer_angle", str(exc))
    for key in ("arkkio_inner_radius", "arkkio_outer_radius"):
        v = cfg["geometry"][key]
        if v != "auto":
            try:
                float(v)
            except ValueError:
                fail("geometry", key, "expected a length in metres or 'auto'")
    opt = cfg["optimizer"]
    for key in ("bound_iron", "bound_magnet"):
        if not 0.0 <= opt[key] <= 1.0:
            fail("optimizer", key, "volume bound must lie in [0, 1]")
    chans = [c.strip() for c in opt["active_channels"].split(",") if c.strip()]
    if not chans or set(chans) - {"nu", "mx", "my"}:
        fail("optimizer", "active_channels", "use a comma list of nu, mx, my")
    if opt["beta_start"].lower() != "none":
        try:
            if not float(opt["beta_start"]) > 0:
                raise ValueError
        except ValueError:
            fail("optimizer", "beta_start", "expected a positive number or 'none'")
    if not cfg["solver"]["target_h"] > 0:
        fail("solver", "target_h", "must be > 0")
    if cfg["postprocess"]["k"] < 1:
        fail("postprocess", "k", "must be >= 1")


# ---------------------------------------------------------------- presets

# the study presets run on a finer mesh than the solver default (about 8k triangles)
STUDY_H = 1.3e-3

_IRON_AIR = {"solver": {"target_h": STUDY_H},
             "optimizer": {"start": "layered", "active_channels": "nu", "bound_magnet": 1.0}}


def _iron(frac):
    d = copy.deepcopy(_IRON_AIR)
    d["optimizer"]["bound_iron"] = frac
    return d


def _magnet(frac):
    return {"solver": {"target_h": STUDY_H},
            "optimizer": {"start": "preset:iron-air-40", "bound_iron": 0.4, "bound_magnet": frac,
                          "active_channels": "nu,mx,my"}}


def _gray(frac):
    return {"winding": {"phase_angle": "3*pi/32"}, "solver": {"target_h": STUDY_H},
            "optimizer": {"start": "gray", "bound_iron": 0.4, "bound_magnet": frac,
                          "active_channels": "nu,mx,my", "penalty_weight": 0.01}}


PRESETS: dict[str, dict] = {
    "all-iron": {"optimizer": {"start": "all-iron"}},
    "iron-air-10": _iron(0.10),
    "iron-air-20": _iron(0.20),
    "iron-air-40": _iron(0.40),
    "magnet-7.5": _magnet(0.075),
    "magnet-15": _magnet(0.15),
    "magnet-30": _magnet(0.30),
    "gray-10": _gray(0.10),
    "gray-20": _gray(0.20),
    "gray-unbounded": _gray(1.0),
}


def preset_config(name: str, base: RunConfig | None = None) -> RunConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    overrides = {s: {k: (v if isinstance(v, str) else v) for k, v in e.items()}
                 for s, e in PRESETS[name].items()}
    return apply_overrides(base or default_config(), overrides, source=f"preset:{name}")


# ---------------------------------------------------------------- builders

def machine(cfg: RunConfig) -> tuple[g.MachineGeometry, g.WindingLayout]:
    geo = dict(cfg["geometry"])
    ri, ro = geo.pop("arkkio_inner_radius"), geo.pop("arkkio_outer_radius")
    params = dict(geo)
    if ri != "auto" or ro != "auto":
        gap = geo["air_gap_length"]
        r0 = geo["rotor_outer_radius"]
        params["arkkio_radii"] = (float(ri) if ri != "auto" else r0 + gap / 3.0,
                                  float(ro) if ro != "auto" else r0 + 2.0 * gap / 3.0)
    w = cfg["winding"]
    params.update(turns_per_coil=w["turns_per_coil"], peak_current=w["peak_current"],
                  phase_angle=parse_angle(w["phase_angle"]),
                  belt_order=tuple(s.strip() for s in w["belt_order"].split(",")))
    return g.build_machine(params)


def _scheme(kind: str, param: float, nu0: float, eps: float) -> InterpolationScheme:
    if kind == "td":
        return InterpolationScheme.td(nu0=nu0, eps=eps)
    if kind == "simp":
        return InterpolationScheme.simp(param or 3.0)
    if kind == "lukas":
        return InterpolationScheme.lukas(param or 5.0)
    raise ConfigError(f"unknown interpolation scheme {kind!r}")


def materials(cfg: RunConfig) -> MaterialModel:
    m = cfg["material"]
    curve = MarroccoCurve(alpha=m["alpha"], beta=m["beta"], gamma=m["gamma"], eps=m["eps"],
                          tau=m["tau"], c=m["c"], b_max=m["b_max"], variant=m["marrocco_variant"])
    return MaterialModel(curve=curve, f_nu=_scheme(m["f_nu"], m["f_nu_param"], curve.nu0, m["eps"]),
                         f_m=_scheme(m["f_m"], m["f_m_param"], curve.nu0, m["eps"]),
                         magnet=MagnetSpec(m["m_max"]))


def model(cfg: RunConfig) -> MachineModel:
    geo, layout = machine(cfg)
    s = cfg["solver"]
    stator, rotor = g.generate_meshes(geo, s["target_h"], s["stator_coarsening"])
    stator, layout = g.bind_winding(stator, layout)
    return MachineModel(geo, layout, stator, rotor, materials(cfg), NitscheParams(alpha=s["nitsche_alpha"]))


def solver_options(cfg: RunConfig) -> dict:
    s = cfg["solver"]
    return {"rtol": s["newton_rtol"], "atol": s["newton_atol"], "max_iter": s["newton_max_iter"],
            "stall_rtol": s["newton_stall_rtol"]}


def filter_params(cfg: RunConfig) -> FilterParams:
    o = cfg["optimizer"]
    beta = None if o["beta_start"].lower() == "none" else float(o["beta_start"])
    return FilterParams(delta=o["filter_delta"], beta=beta, filter_on=o["filter_delta"] > 0)


def design_map(cfg: RunConfig, mdl: MachineModel) -> DesignMap:
    ro = mdl.rotor
    return DesignMap(ro.nodes, ro.triangles[mdl.design_elements], ro.h, filter_params(cfg),
                     mdl.materials.magnet, mdl.materials.f_m)


def objective(cfg: RunConfig, mdl: MachineModel) -> Objective:
    return Objective(mdl, design_map(cfg, mdl), penalty_weight=cfg["optimizer"]["penalty_weight"],
                     solver_options=solver_options(cfg))


def optimizer_config(cfg: RunConfig) -> OptimizerConfig:
    o = cfg["optimizer"]
    chans = {c.strip() for c in o["active_channels"].split(",")}
    fp = filter_params(cfg)
    return OptimizerConfig(max_iter=o["max_iter"], tol=o["tol"], step=o["step"],
                           max_halvings=o["max_halvings"], grow=o["grow"], max_step=o["max_step"],
                           multiplier_every=o["multiplier_every"], beta_start=fp.beta,
                           beta_max=o["beta_max"], beta_every=o["beta_every"],
                           penalty_weight=o["penalty_weight"], bound_iron=o["bound_iron"],
                           bound_magnet=o["bound_magnet"], mu=o["mu"],
                           active_channels=tuple(c in chans for c in ("nu", "mx", "my")))


def cluster_config(cfg: RunConfig) -> ClusterConfig:
    p = cfg["postprocess"]
    diam = 2.0 * cfg["geometry"]["rotor_outer_radius"]
    nx = diam if p["norm_x"] == "auto" else float(p["norm_x"])
    ny = diam if p["norm_y"] == "auto" else float(p["norm_y"])
    return ClusterConfig(k=p["k"], norm_x=nx, norm_y=ny, angle_weight=p["angle_weight"],
                         max_iter=p["max_iter"], seed=p["seed"], wrap=p["wrap"],
                         sample_radius=cfg["geometry"]["rotor_outer_radius"])


def layered_start(centroids: np.ndarray, angle: float, period: float) -> np.ndarray:
    """Binary iron/air stripes parallel to the direction ``angle``."""
    across = -math.sin(angle) * centroids[:, 0] + math.cos(angle) * centroids[:, 1]
    return (np.cos(2.0 * math.pi * across / period) > 0.0).astype(float)


def start_design(cfg: RunConfig, mdl: MachineModel) -> DensityField | None:
    """Initial densities for the configured start; ``None`` for ``preset:``/file starts."""
    kind = cfg["optimizer"]["start"]
    n = mdl.n_design
    if kind == "gray":
        return DensityField.uniform(n, 0.5, 0.5, 0.5)
    if kind == "all-iron":
        return DensityField.uniform(n, 1.0, 0.5, 0.5)
    if kind == "all-air":
        return DensityField.uniform(n, 0.0, 0.5, 0.5)
    if kind == "layered":
        c = mdl.rotor.centroids()[mdl.design_elements]
        o = cfg["optimizer"]
        rho = layered_start(c, parse_angle(o["layer_angle"]), o["layer_period"])
        return DensityField(rho, np.full(n, 0.5), np.full(n, 0.5))
    return None
