"""Machine geometry, structured polar meshes and stator excitation.

The stator and rotor are meshed independently.  Both meshes are built from
concentric node rings so every radius that separates two regions (rotor
surface, Arkkio radii, sliding circle, slot bottom, ...) is resolved exactly
by mesh edges, and slot flanks fall on angular grid lines.

* rotor: hexagonal-ring disk (ring ``k`` carries ``6k`` nodes) up to the rotor
  surface, then zipped air rings out to the sliding (mortar) circle;
* stator: a quad grid in (r, phi) from the sliding circle to the outer
  stator radius, each quad split into two triangles with alternating diagonals
  so the mesh has no preferred sense of rotation.

Lengths are in metres throughout.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

# region tags
FERRO_STATOR = 0
AIR_STATOR = 1
ROTOR_DESIGN = 2
ARKKIO = 3
AIR_ROTOR = 4
COIL_BASE = 10

PHASE_LABELS = ("U+", "U-", "V+", "V-", "W+", "W-")
# 60 degree phase belts of the one-pole-pair distributed winding
DEFAULT_BELT_ORDER = ("U+", "W-", "V+", "U-", "W+", "V-")

TAG_NAMES = {
    FERRO_STATOR: "FerroStator",
    AIR_STATOR: "AirStator",
    ROTOR_DESIGN: "RotorDesign",
    ARKKIO: "ArkkioAnnulus",
    AIR_ROTOR: "AirRotor",
}
TAG_NAMES.update({COIL_BASE + i: f"Coil({lab})" for i, lab in enumerate(PHASE_LABELS)})


class GeometryError(ValueError):
    """Raised for inconsistent machine dimensions or invalid meshes."""


def coil_tag(label: str) -> int:
    return COIL_BASE + PHASE_LABELS.index(label)


@dataclass(frozen=True)
class MachineGeometry:
    slot_count: int = 24
    axial_length: float = 50.0e-3
    rotor_outer_radius: float = 18.5e-3
    stator_inner_radius: float = 26.5e-3
    stator_outer_radius: float = 47.5e-3
    air_gap_length: float = 8.0e-3
    pole_pairs: int = 1
    arkkio_radii: tuple[float, float] | None = None
    # slot shape (not tabulated for the benchmark machine, see README)
    slot_opening_depth: float = 1.0e-3
    slot_depth: float = 11.5e-3
    slot_width_fraction: float = 0.5

    @property
    def r_r(self) -> float:
        return self.arkkio_radii[0]

    @property
    def r_s(self) -> float:
        return self.arkkio_radii[1]

    @property
    def mortar_radius(self) -> float:
        return 0.5 * (self.rotor_outer_radius + self.stator_inner_radius)

    @property
    def slot_pitch(self) -> float:
        return 2.0 * math.pi / self.slot_count

    def validate(self) -> None:
        for name in ("axial_length", "rotor_outer_radius", "stator_inner_radius",
                     "stator_outer_radius", "air_gap_length"):
            if not getattr(self, name) > 0.0:
                raise GeometryError(f"{name} must be strictly positive")
        if self.slot_count <= 0:
            raise GeometryError("slot_count must be > 0")
        if self.pole_pairs < 1:
            raise GeometryError("pole_pairs must be >= 1")
        gap = self.stator_inner_radius - self.rotor_outer_radius
        if not math.isclose(gap, self.air_gap_length, rel_tol=1e-9, abs_tol=1e-12):
            raise GeometryError(
                "stator_inner_radius - rotor_outer_radius = air_gap_length violated "
                f"({gap:.6g} != {self.air_gap_length:.6g})")
        if self.arkkio_radii is None:
            raise GeometryError("arkkio_radii unset")
        r_r, r_s = self.arkkio_radii
        if not (self.rotor_outer_radius < r_r < r_s < self.stator_inner_radius):
            raise GeometryError(
                "rotor_outer_radius < r_r < r_s < stator_inner_radius violated "
                f"({self.rotor_outer_radius:.6g}, {r_r:.6g}, {r_s:.6g}, "
                f"{self.stator_inner_radius:.6g})")
        slot_bottom = self.stator_inner_radius + self.slot_depth
        if not (0.0 <= self.slot_opening_depth < self.slot_depth):
            raise GeometryError("slot_opening_depth must lie in [0, slot_depth)")
        if not slot_bottom < self.stator_outer_radius:
            raise GeometryError("slot bottom must lie inside stator_outer_radius")
        if not 0.0 < self.slot_width_fraction < 1.0:
            raise GeometryError("slot_width_fraction must lie in (0, 1)")


@dataclass(frozen=True)
class WindingLayout:
    turns_per_coil: int = 64
    peak_current: float = 12.0
    phase_angle: float = 5.0 * math.pi / 6.0
    slot_assignment: tuple[str, ...] = ()
    slot_area: float | None = None

    def label_of(self, slot: int) -> str:
        return self.slot_assignment[slot]

    def validate(self) -> None:
        if not self.slot_assignment:
            raise GeometryError("empty slot assignment")
        bad = set(self.slot_assignment) - set(PHASE_LABELS)
        if bad:
            raise GeometryError(f"unknown phase labels {sorted(bad)}")
        counts = {lab: self.slot_assignment.count(lab) for lab in PHASE_LABELS}
        if len(set(counts.values())) != 1:
            raise GeometryError(f"unbalanced winding: slots per label {counts}")
        if self.slot_area is not None and not self.slot_area > 0.0:
            raise GeometryError("slot_area must be > 0")


def default_slot_assignment(slot_count: int,
                            belt_order: tuple[str, ...] = DEFAULT_BELT_ORDER) -> tuple[str, ...]:
    """Consecutive equal bands of slots, one band per entry of ``belt_order``."""
    n = len(belt_order)
    if slot_count % n:
        raise GeometryError(f"slot_count {slot_count} not divisible into {n} phase belts")
    per = slot_count // n
    return tuple(belt_order[s // per] for s in range(slot_count))


def build_machine(config: dict | None = None) -> tuple[MachineGeometry, WindingLayout]:
    """Validated geometry and winding from a flat parameter mapping.

    Unknown keys raise.  ``arkkio_radii`` defaults to the thirds of the gap.
    """
    cfg = dict(config or {})
    geo_keys = {f for f in MachineGeometry.__dataclass_fields__}
    win_keys = {f for f in WindingLayout.__dataclass_fields__} | {"belt_order"}
    unknown = set(cfg) - geo_keys - win_keys
    if unknown:
        raise GeometryError(f"unknown machine parameters: {sorted(unknown)}")
    geo = MachineGeometry(**{k: v for k, v in cfg.items() if k in geo_keys})
    if geo.arkkio_radii is None:
        r0, g = geo.rotor_outer_radius, geo.air_gap_length
        geo = replace(geo, arkkio_radii=(r0 + g / 3.0, r0 + 2.0 * g / 3.0))
    else:
        geo = replace(geo, arkkio_radii=tuple(float(r) for r in geo.arkkio_radii))
    geo.validate()

    belt = tuple(cfg.pop("belt_order", DEFAULT_BELT_ORDER))
    wcfg = {k: v for k, v in cfg.items() if k in win_keys and k != "belt_order"}
    if not wcfg.get("slot_assignment"):
        wcfg["slot_assignment"] = default_slot_assignment(geo.slot_count, belt)
    wcfg["slot_assignment"] = tuple(wcfg["slot_assignment"])
    if len(wcfg["slot_assignment"]) != geo.slot_count:
        raise GeometryError("slot_assignment length differs from slot_count")
    layout = WindingLayout(**wcfg)
    layout.validate()
    return geo, layout


@dataclass(frozen=True, eq=False)
class Mesh:
    """Triangle mesh with region tags and its sliding-circle boundary.

    ``interface_edges`` lists boundary edges on the sliding circle ordered by
    angle, oriented counter-clockwise.  ``slot`` holds the slot index of coil
    triangles and -1 elsewhere.
    """

    nodes: np.ndarray
    triangles: np.ndarray
    tags: np.ndarray
    interface_edges: np.ndarray
    interface_radius: float
    h: float
    slot: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.slot is None:
            object.__setattr__(self, "slot", np.full(len(self.triangles), -1, dtype=np.int64))
        for name in ("nodes", "triangles", "tags", "interface_edges", "slot"):
            getattr(self, name).setflags(write=False)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_elements(self) -> int:
        return len(self.triangles)

    def signed_areas(self) -> np.ndarray:
        p = self.nodes[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    def centroids(self) -> np.ndarray:
        return self.nodes[self.triangles].mean(axis=1)

    def diameters(self) -> np.ndarray:
        p = self.nodes[self.triangles]
        e = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 1], p[:, 0] - p[:, 2]], axis=1)
        return np.linalg.norm(e, axis=2).max(axis=1)

    def interface_nodes(self) -> np.ndarray:
        return self.interface_edges[:, 0].copy()

    def boundary_edges(self) -> np.ndarray:
        e = np.concatenate([self.triangles[:, [0, 1]], self.triangles[:, [1, 2]],
                            self.triangles[:, [2, 0]]])
        key = np.sort(e, axis=1)
        _, inv, cnt = np.unique(key, axis=0, return_inverse=True, return_counts=True)
        return e[cnt[inv.ravel()] == 1]

    def check(self) -> None:
        a = self.signed_areas()
        if np.any(a <= 0.0):
            raise GeometryError(f"{int(np.sum(a <= 0))} inverted or degenerate triangles")
        if len(self.tags) != len(self.triangles):
            raise GeometryError("one region tag per triangle required")
        e = self.interface_edges
        if len(e) < 3 or np.any(e[:, 1] != np.roll(e[:, 0], -1)):
            raise GeometryError("interface edges do not form a single closed polygon")
        r = np.linalg.norm(self.nodes[e[:, 0]], axis=1)
        if np.max(np.abs(r - self.interface_radius)) > 1e-9 * self.interface_radius:
            raise GeometryError("interface nodes off the declared radius")


def rotate_points(points: np.ndarray, theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return points @ np.array([[c, s], [-s, c]])


def rotate_rotor(rotor: Mesh, theta: float) -> Mesh:
    return replace(rotor, nodes=rotate_points(np.asarray(rotor.nodes), theta))


# ---------------------------------------------------------------- meshing

def _ring(radius: float, count: int, offset: float = 0.0) -> np.ndarray:
    phi = offset + 2.0 * math.pi * np.arange(count) / count
    return radius * np.column_stack([np.cos(phi), np.sin(phi)])


def _zip_rings(inner: np.ndarray, outer: np.ndarray, phi_in: np.ndarray,
               phi_out: np.ndarray) -> list[tuple[int, int, int]]:
    """Triangulate the strip between two closed node rings.

    ``inner``/``outer`` are global node ids ordered by increasing angle
    starting at angle 0; angles are given in [0, 2pi).
    """
    na, nb = len(inner), len(outer)
    a_ang = np.append(phi_in, 2.0 * math.pi)
    b_ang = np.append(phi_out, 2.0 * math.pi)
    tris = []
    i = j = 0
    while i < na or j < nb:
        adv_a = j >= nb or (i < na and a_ang[i + 1] <= b_ang[j + 1] + 1e-12)
        if adv_a:
            tris.append((inner[i % na], inner[(i + 1) % na], outer[j % nb]))
            i += 1
        else:
            tris.append((inner[i % na], outer[(j + 1) % nb], outer[j % nb]))
            j += 1
    return tris


def _ccw(nodes: np.ndarray, tris: np.ndarray) -> np.ndarray:
    p = nodes[tris]
    d1, d2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
    neg = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0] < 0.0
    tris = tris.copy()
    tris[neg] = tris[neg][:, [0, 2, 1]]
    return tris


def _band_radii(r0: float, r1: float, spacing: float) -> np.ndarray:
    n = max(1, int(math.ceil((r1 - r0) / spacing - 1e-9)))
    return np.linspace(r0, r1, n + 1)


def _stator_divisions(geo: MachineGeometry, h: float) -> int:
    """Angular divisions: a multiple of the slot count that resolves the slot flank."""
    per_slot = 2.0 * math.pi * geo.mortar_radius / (geo.slot_count * h)
    frac = geo.slot_width_fraction
    m = max(2, int(math.ceil(per_slot - 1e-9)))
    while abs(m * frac - round(m * frac)) > 1e-9:
        m += 1
    return geo.slot_count * m


def generate_meshes(geom: MachineGeometry, target_h: float,
                    stator_coarsening: float = 1.5,
                    rotor_interface_nodes: int | None = None) -> tuple[Mesh, Mesh]:
    """Independent stator and rotor meshes meeting on the gap mid-circle.

    ``target_h`` sets the element size in the rotor and at the sliding
    circle; stator elements grow with radius up to ``stator_coarsening``
    times that.  ``rotor_interface_nodes`` forces the node count of the
    rotor's sliding circle (used to build a node-matching pair).
    """
    geom.validate()
    if not 0.0 < target_h < geom.air_gap_length / 2.0:
        raise GeometryError("target_h must lie in (0, air_gap_length / 2)")
    stator = _stator_mesh(geom, target_h, stator_coarsening)
    rotor = _rotor_mesh(geom, target_h, rotor_interface_nodes)
    h = max(stator.h, rotor.h)
    stator = replace(stator, h=h)
    rotor = replace(rotor, h=h)
    stator.check()
    rotor.check()
    return stator, rotor


def _rotor_mesh(geo: MachineGeometry, h: float, n_interface: int | None) -> Mesh:
    r_rot, r_m = geo.rotor_outer_radius, geo.mortar_radius
    k_des = max(2, int(math.ceil(r_rot / h - 1e-9)))
    nodes = [np.zeros((1, 2))]
    rings: list[tuple[np.ndarray, np.ndarray]] = [(np.array([0]), np.array([0.0]))]
    n_total = 1
    radii = [r_rot * k / k_des for k in range(1, k_des + 1)]
    counts = [6 * k for k in range(1, k_des + 1)]
    h_eff = 2.0 * math.pi * r_rot / counts[-1]
    # air rings from the rotor surface out to the sliding circle
    air_radii = np.unique(np.concatenate([_band_radii(r_rot, geo.r_r, h_eff),
                                          _band_radii(geo.r_r, r_m, h_eff)]))[1:]
    for r in air_radii:
        radii.append(float(r))
        counts.append(max(counts[-1], int(round(2.0 * math.pi * r / h_eff))))
    if n_interface is not None:
        if n_interface < counts[-2]:
            raise GeometryError("rotor_interface_nodes below the adjacent ring count")
        counts[-1] = int(n_interface)
    for r, n in zip(radii, counts):
        pts = _ring(r, n)
        ids = np.arange(n_total, n_total + n)
        phi = 2.0 * math.pi * np.arange(n) / n
        nodes.append(pts)
        rings.append((ids, phi))
        n_total += n
    tris: list[tuple[int, int, int]] = []
    ids1 = rings[1][0]
    for i in range(len(ids1)):
        tris.append((0, ids1[i], ids1[(i + 1) % len(ids1)]))
    for (a, pa), (b, pb) in zip(rings[1:-1], rings[2:]):
        tris.extend(_zip_rings(a, b, pa, pb))
    nodes_arr = np.concatenate(nodes)
    tri_arr = _ccw(nodes_arr, np.asarray(tris, dtype=np.int64))

    rc = np.linalg.norm(nodes_arr[tri_arr].mean(axis=1), axis=1)
    tags = np.full(len(tri_arr), AIR_ROTOR, dtype=np.int64)
    tags[rc < r_rot] = ROTOR_DESIGN
    tags[(rc > geo.r_r) & (rc < r_m)] = ARKKIO

    outer = rings[-1][0]
    edges = np.column_stack([outer, np.roll(outer, -1)])
    diam = Mesh(nodes_arr, tri_arr, tags, edges, r_m, 0.0).diameters()
    return Mesh(nodes_arr, tri_arr, tags, edges, r_m, float(diam.max()))


def _stator_mesh(geo: MachineGeometry, h: float, coarsening: float) -> Mesh:
    n_phi = _stator_divisions(geo, h)
    dphi = 2.0 * math.pi / n_phi
    r_m, r_si = geo.mortar_radius, geo.stator_inner_radius
    r_open = r_si + geo.slot_opening_depth
    r_bot = r_si + geo.slot_depth
    breaks = [r_m, geo.r_s, r_si, r_open, r_bot, geo.stator_outer_radius]
    breaks = sorted(set(breaks))
    radii = [breaks[0]]
    for r0, r1 in zip(breaks[:-1], breaks[1:]):
        spacing = min(coarsening * h, dphi * 0.5 * (r0 + r1))
        radii.extend(_band_radii(r0, r1, spacing)[1:])
    radii = np.asarray(radii)
    nr = len(radii)
    phi = dphi * np.arange(n_phi)
    rr, pp = np.meshgrid(radii, phi, indexing="ij")
    nodes = np.column_stack([(rr * np.cos(pp)).ravel(), (rr * np.sin(pp)).ravel()])

    i, j = np.meshgrid(np.arange(nr - 1), np.arange(n_phi), indexing="ij")
    i, j = i.ravel(), j.ravel()
    jn = (j + 1) % n_phi
    n00, n01 = i * n_phi + j, i * n_phi + jn
    n10, n11 = (i + 1) * n_phi + j, (i + 1) * n_phi + jn
    alt = (i + j) % 2 == 0
    t1 = np.where(alt[:, None], np.column_stack([n00, n01, n11]), np.column_stack([n00, n01, n10]))
    t2 = np.where(alt[:, None], np.column_stack([n00, n11, n10]), np.column_stack([n01, n11, n10]))
    tris = _ccw(nodes, np.concatenate([t1, t2]))

    cen = nodes[tris].mean(axis=1)
    rc = np.linalg.norm(cen, axis=1)
    ang = np.mod(np.arctan2(cen[:, 1], cen[:, 0]), 2.0 * math.pi)
    pitch = geo.slot_pitch
    slot_idx = np.floor(ang / pitch).astype(np.int64) % geo.slot_count
    in_slot_span = (ang / pitch - np.floor(ang / pitch)) < geo.slot_width_fraction

    tags = np.full(len(tris), FERRO_STATOR, dtype=np.int64)
    tags[rc < r_si] = AIR_STATOR
    tags[rc < geo.r_s] = ARKKIO
    tags[(rc > r_si) & (rc < r_open) & in_slot_span] = AIR_STATOR
    coil = (rc > r_open) & (rc < r_bot) & in_slot_span
    tags[coil] = -1  # resolved per slot in bind_winding
    slot = np.where(coil, slot_idx, -1)

    inner = np.arange(n_phi)
    edges = np.column_stack([inner, np.roll(inner, -1)])
    mesh = Mesh(nodes, tris, tags, edges, r_m, 0.0, slot)
    return replace(mesh, h=float(mesh.diameters().max()))


def bind_winding(stator: Mesh, layout: WindingLayout) -> tuple[Mesh, WindingLayout]:
    """Tag coil triangles with their phase label and measure the slot area."""
    tags = np.array(stator.tags)
    coil = stator.slot >= 0
    labels = np.array([coil_tag(lab) for lab in layout.slot_assignment])
    tags[coil] = labels[stator.slot[coil]]
    areas = stator.signed_areas()
    per_slot = np.bincount(stator.slot[coil], weights=areas[coil],
                           minlength=len(layout.slot_assignment))
    if np.any(per_slot <= 0.0):
        raise GeometryError("a slot received no coil triangles")
    spread = (per_slot.max() - per_slot.min()) / per_slot.mean()
    if spread > 1e-9:
        raise GeometryError(f"slot areas differ by {spread:.2e} (relative)")
    return replace(stator, tags=tags), replace(layout, slot_area=float(per_slot.mean()))


def phase_currents(theta: float, layout: WindingLayout, n_pp: int) -> tuple[float, float, float]:
    arg = n_pp * theta + layout.phase_angle
    imax = layout.peak_current
    return (imax * math.cos(arg),
            imax * math.cos(arg - 2.0 * math.pi / 3.0),
            imax * math.cos(arg - 4.0 * math.pi / 3.0))


def label_current_densities(theta: float, layout: WindingLayout, n_pp: int) -> dict[str, float]:
    """Current density in A/m^2 carried by each signed phase label."""
    if layout.slot_area is None:
        raise GeometryError("slot area unknown; call bind_winding first")
    iu, iv, iw = phase_currents(theta, layout, n_pp)
    scale = layout.turns_per_coil / layout.slot_area
    out = {}
    for p, cur in zip("UVW", (iu, iv, iw)):
        out[p + "+"] = scale * cur
        out[p + "-"] = -scale * cur
    return out


def current_density(tags: np.ndarray, theta: float, layout: WindingLayout,
                    n_pp: int) -> np.ndarray:
    """Impressed current density per triangle for an array of region tags."""
    dens = label_current_densities(theta, layout, n_pp)
    lut = np.zeros(COIL_BASE + len(PHASE_LABELS))
    for i, lab in enumerate(PHASE_LABELS):
        lut[COIL_BASE + i] = dens[lab]
    tags = np.asarray(tags)
    out = np.zeros(tags.shape)
    coil = tags >= COIL_BASE
    out[coil] = lut[tags[coil]]
    return out


def merge_conforming(stator: Mesh, rotor: Mesh, tol: float = 1e-12) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Fuse a node-matching stator/rotor pair into one mesh.

    Returns ``(nodes, triangles, tags, rotor_node_map)`` where rotor node ``i``
    becomes node ``rotor_node_map[i]`` of the fused mesh.
    """
    s_if = stator.interface_nodes()
    r_if = rotor.interface_nodes()
    if len(s_if) != len(r_if):
        raise GeometryError("interface node counts differ; meshes do not match")
    ps, pr = stator.nodes[s_if], rotor.nodes[r_if]
    order_s = np.argsort(np.mod(np.arctan2(ps[:, 1], ps[:, 0]), 2 * math.pi))
    order_r = np.argsort(np.mod(np.arctan2(pr[:, 1], pr[:, 0]), 2 * math.pi))
    if np.max(np.linalg.norm(ps[order_s] - pr[order_r], axis=1)) > tol * max(1.0, rotor.interface_radius) + 1e-12:
        raise GeometryError("interface nodes do not coincide")
    nmap = np.full(rotor.n_nodes, -1, dtype=np.int64)
    nmap[r_if[order_r]] = s_if[order_s]
    rest = nmap < 0
    nmap[rest] = stator.n_nodes + np.arange(int(rest.sum()))
    nodes = np.concatenate([stator.nodes, rotor.nodes[rest]])
    tris = np.concatenate([stator.triangles, nmap[rotor.triangles]])
    tags = np.concatenate([stator.tags, rotor.tags])
    return nodes, tris, tags, nmap
