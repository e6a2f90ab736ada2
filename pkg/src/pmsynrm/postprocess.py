"""K-means homogenisation of magnetization directions in an optimised rotor."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .fem import DensityField
from .materials import disk_to_square, disk_vector

TWO_PI = 2.0 * math.pi


class ClusteringError(ValueError):
    pass


@dataclass(frozen=True)
class MagnetCell:
    x: float
    y: float
    angle: float
    element: int
    area: float


@dataclass(frozen=True)
class ClusterConfig:
    """Settings of the position/angle K-means.

    ``norm_x`` and ``norm_y`` scale the coordinates (metres), ``angle_weight``
    multiplies the squared angle term.  With ``wrap`` the angle difference is
    taken on the circle and cluster angles are circular means.
    """

    k: int = 5
    norm_x: float = 37.0e-3
    norm_y: float = 37.0e-3
    angle_weight: float = 1.0
    max_iter: int = 100
    seed: int = 0
    wrap: bool = True
    sample_radius: float = 18.5e-3

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if not (self.norm_x > 0 and self.norm_y > 0):
            raise ValueError("coordinate normalisers must be > 0")
        if self.angle_weight < 0:
            raise ValueError("angle weight must be >= 0")


def extract_magnet_cells(X: DensityField, centroids: np.ndarray, areas: np.ndarray,
                         magnitude_threshold: float = 0.5, iron_threshold: float = 0.5) -> list[MagnetCell]:
    """Design elements that hold magnet material: |M~| above and rho_nu below threshold."""
    u, v = disk_vector(X.rho_mx, X.rho_my)
    mag = np.hypot(u, v)
    sel = np.flatnonzero((mag > magnitude_threshold) & (X.rho_nu < iron_threshold))
    if len(sel) == 0:
        raise ClusteringError("no magnet elements pass the thresholds; lower magnitude_threshold "
                              "or raise iron_threshold")
    ang = np.mod(np.arctan2(v[sel], u[sel]), TWO_PI)
    return [MagnetCell(float(centroids[i, 0]), float(centroids[i, 1]), float(a), int(i), float(areas[i]))
            for i, a in zip(sel, ang)]


def angle_difference(a, b, wrap: bool = True):
    d = np.abs(np.asarray(a, dtype=float) - np.asarray(b, dtype=float))
    return np.minimum(d, TWO_PI - d) if wrap else d


def distances(points: np.ndarray, centers: np.ndarray, cfg: ClusterConfig, alpha: float | None = None) -> np.ndarray:
    """d_alpha between every point (x, y, angle) and every centre, shape (n, k)."""
    alpha = cfg.angle_weight if alpha is None else alpha
    dx = (points[:, None, 0] - centers[None, :, 0]) / cfg.norm_x
    dy = (points[:, None, 1] - centers[None, :, 1]) / cfg.norm_y
    da = angle_difference(points[:, None, 2], centers[None, :, 2], cfg.wrap) / TWO_PI
    return np.sqrt(dx * dx + dy * dy + alpha * da * da)


def _cluster_angle(angles: np.ndarray, wrap: bool) -> float:
    if wrap:
        return float(np.mod(math.atan2(np.sin(angles).sum(), np.cos(angles).sum()), TWO_PI))
    return float(np.mean(angles))


def _update(points: np.ndarray, labels: np.ndarray, centers: np.ndarray, cfg: ClusterConfig) -> np.ndarray:
    new = centers.copy()
    for j in range(len(centers)):
        sel = labels == j
        if np.any(sel):
            new[j, 0] = points[sel, 0].mean()
            new[j, 1] = points[sel, 1].mean()
            new[j, 2] = _cluster_angle(points[sel, 2], cfg.wrap)
    return new


def within_cluster_objective(points: np.ndarray, labels: np.ndarray, centers: np.ndarray,
                             cfg: ClusterConfig) -> float:
    d = distances(points, centers, cfg)
    return float(np.sum(d[np.arange(len(points)), labels] ** 2))


def kmeans_cluster(cells: list[MagnetCell], cfg: ClusterConfig = ClusterConfig(),
                   trace: list | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Lloyd iterations under d_alpha; returns (labels, centres as (k, 3) x/y/angle).

    Centres start at seeded random positions in the rotor disk; the first
    assignment ignores angles.  Empty clusters are re-seeded at the cell that
    is farthest from its centre among clusters with two or more
    members.  Ties go to the lowest centre index.
    """
    if cfg.k > len(cells):
        raise ClusteringError(f"k={cfg.k} exceeds the number of magnet cells ({len(cells)})")
    pts = np.array([[c.x, c.y, c.angle] for c in cells], dtype=float)
    rng = np.random.default_rng(cfg.seed)
    r = cfg.sample_radius * np.sqrt(rng.uniform(0.0, 1.0, cfg.k))
    phi = rng.uniform(0.0, TWO_PI, cfg.k)
    centers = np.column_stack([r * np.cos(phi), r * np.sin(phi), np.zeros(cfg.k)])
    labels = np.argmin(distances(pts, centers, cfg, alpha=0.0), axis=1)
    for it in range(cfg.max_iter):
        for j in range(cfg.k):
            if not np.any(labels == j):
                d = distances(pts, centers, cfg)[np.arange(len(pts)), labels]
                # only take from clusters that keep a member
                d[np.bincount(labels, minlength=cfg.k)[labels] < 2] = -1.0
                far = int(np.argmax(d))
                labels[far] = j
                centers[j] = pts[far]
        centers = _update(pts, labels, centers, cfg)
        if trace is not None:
            trace.append(within_cluster_objective(pts, labels, centers, cfg))
        new = np.argmin(distances(pts, centers, cfg), axis=1)
        if np.array_equal(new, labels):
            break
        labels = new
    return labels, centers


def apply_clustering(X: DensityField, cells: list[MagnetCell], labels: np.ndarray,
                     centers: np.ndarray) -> DensityField:
    """Give every magnet cell its cluster's angle at full magnitude; rho_nu untouched."""
    mx = np.array(X.rho_mx, dtype=float)
    my = np.array(X.rho_my, dtype=float)
    idx = np.array([c.element for c in cells])
    ang = centers[labels, 2]
    sx, sy = disk_to_square(np.cos(ang), np.sin(ang))
    mx[idx] = np.clip(0.5 * (sx + 1.0), 0.0, 1.0)
    my[idx] = np.clip(0.5 * (sy + 1.0), 0.0, 1.0)
    return DensityField(np.array(X.rho_nu), mx, my)


def write_cluster_report(path, cells: list[MagnetCell], labels: np.ndarray, centers: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["element_id", "cluster_id", "angle_before_rad", "angle_after_rad"])
        for c, lab in zip(cells, labels):
            w.writerow([c.element, int(lab), f"{c.angle:.12g}", f"{centers[lab, 2]:.12g}"])
