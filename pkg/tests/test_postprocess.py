import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pmsynrm.fem import DensityField
from pmsynrm.materials import disk_vector, disk_to_square
from pmsynrm.postprocess import (ClusterConfig, ClusteringError, MagnetCell, angle_difference,
                                 apply_clustering, distances, extract_magnet_cells, kmeans_cluster,
                                 write_cluster_report, _cluster_angle)


def blob_cells(seed=0, n_per=30):
    rng = np.random.default_rng(seed)
    cells = []
    anchors = [(-0.01, 0.0, 0.2), (0.01, 0.0, 3.0), (0.0, 0.012, 5.0)]
    for ax, ay, aa in anchors:
        for _ in range(n_per):
            cells.append(MagnetCell(ax + rng.normal(0, 1e-3), ay + rng.normal(0, 1e-3),
                                    float(np.mod(aa + rng.normal(0, 0.05), 2 * math.pi)), len(cells), 1e-6))
    return cells


def random_cells(n, seed):
    rng = np.random.default_rng(seed)
    r = 0.018 * np.sqrt(rng.uniform(0, 1, n))
    phi = rng.uniform(0, 2 * math.pi, n)
    ang = rng.uniform(0, 2 * math.pi, n)
    return [MagnetCell(float(r[i] * math.cos(phi[i])), float(r[i] * math.sin(phi[i])), float(ang[i]), i, 1e-6)
            for i in range(n)]


def test_angle_difference_wraps():
    assert angle_difference(0.1, 2 * math.pi - 0.1) == pytest.approx(0.2)
    assert angle_difference(0.1, 2 * math.pi - 0.1, wrap=False) == pytest.approx(2 * math.pi - 0.2)
    assert angle_difference(1.0, 1.0 + math.pi) == pytest.approx(math.pi)


def test_circular_mean_across_zero():
    a = np.array([0.1, 2 * math.pi - 0.1])
    assert min(_cluster_angle(a, True), 2 * math.pi - _cluster_angle(a, True)) < 1e-12
    assert _cluster_angle(a, False) == pytest.approx(math.pi)


def test_distance_example():
    cfg = ClusterConfig(norm_x=2.0, norm_y=1.0, angle_weight=4.0)
    d = distances(np.array([[2.0, 1.0, math.pi]]), np.array([[0.0, 0.0, 0.0]]), cfg)
    assert d[0, 0] == pytest.approx(math.sqrt(1 + 1 + 4 * 0.25))


def test_blobs_are_recovered():
    cells = blob_cells()
    labels, centers = kmeans_cluster(cells, ClusterConfig(k=3, seed=1))
    groups = [set(labels[i * 30:(i + 1) * 30]) for i in range(3)]
    assert all(len(g) == 1 for g in groups)
    assert len(set.union(*groups)) == 3


@settings(max_examples=25, deadline=None)
@given(st.integers(6, 60), st.integers(1, 6), st.integers(0, 10_000), st.booleans())
def test_partition_invariants(n, k, seed, wrap):
    cells = random_cells(n, seed)
    cfg = ClusterConfig(k=k, seed=seed, wrap=wrap)
    trace = []
    labels, centers = kmeans_cluster(cells, cfg, trace)
    assert labels.shape == (n,)
    assert labels.min() >= 0 and labels.max() < k
    assert centers.shape == (k, 3)
    assert np.all((centers[:, 2] >= 0) & (centers[:, 2] < 2 * math.pi + 1e-12))
    if not wrap:
        # linear angles: the mean is the exact minimiser, so Lloyd steps never increase the objective
        assert all(b <= a * (1 + 1e-12) + 1e-15 for a, b in zip(trace, trace[1:]))
    # every non-empty cluster centre is the mean position of its members
    pts = np.array([[c.x, c.y] for c in cells])
    for j in range(k):
        sel = labels == j
        if np.any(sel):
            assert np.allclose(centers[j, :2], pts[sel].mean(axis=0), atol=1e-15)
    # the final assignment is nearest-centre
    d = distances(np.array([[c.x, c.y, c.angle] for c in cells]), centers, cfg)
    assert np.allclose(d[np.arange(n), labels], d.min(axis=1), rtol=0, atol=1e-12) or len(trace) == cfg.max_iter


def test_kmeans_deterministic():
    cells = random_cells(40, 3)
    a = kmeans_cluster(cells, ClusterConfig(seed=7))
    b = kmeans_cluster(cells, ClusterConfig(seed=7))
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])


def test_too_many_clusters():
    with pytest.raises(ClusteringError):
        kmeans_cluster(random_cells(3, 0), ClusterConfig(k=5))


def test_k_equal_n_gives_singletons():
    cells = random_cells(5, 2)
    labels, centers = kmeans_cluster(cells, ClusterConfig(k=5, seed=0))
    assert sorted(labels) == [0, 1, 2, 3, 4]


def test_cluster_config_validation():
    with pytest.raises(ValueError):
        ClusterConfig(k=0)
    with pytest.raises(ValueError):
        ClusterConfig(norm_x=0.0)
    with pytest.raises(ValueError):
        ClusterConfig(angle_weight=-1.0)


def test_extract_and_apply_clustering():
    n = 8
    ang = np.linspace(0.1, 6.0, n)
    sx, sy = disk_to_square(np.cos(ang), np.sin(ang))
    mx, my = np.clip(0.5 * (sx + 1), 0, 1), np.clip(0.5 * (sy + 1), 0, 1)
    rho = np.array([0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 1.0])
    X = DensityField(rho, mx, my)
    cent = np.column_stack([np.linspace(-0.01, 0.01, n), np.zeros(n)])
    cells = extract_magnet_cells(X, cent, np.full(n, 1e-6))
    # iron elements are not magnet cells
    assert [c.element for c in cells] == list(range(6))
    assert np.allclose([c.angle for c in cells], ang[:6], atol=1e-9)
    labels, centers = kmeans_cluster(cells, ClusterConfig(k=2, seed=0))
    Xc = apply_clustering(X, cells, labels, centers)
    assert np.array_equal(Xc.rho_nu, X.rho_nu)
    assert np.array_equal(Xc.rho_mx[6:], X.rho_mx[6:])
    u, v = disk_vector(Xc.rho_mx[:6], Xc.rho_my[:6])
    assert np.allclose(np.hypot(u, v), 1.0, atol=1e-9)
    got = np.mod(np.arctan2(v, u), 2 * math.pi)
    assert np.all(angle_difference(got, centers[labels, 2]) < 1e-9)


def test_extract_rejects_empty_selection():
    X = DensityField.uniform(4, 0.0, 0.5, 0.5)
    with pytest.raises(ClusteringError, match="magnitude_threshold"):
        extract_magnet_cells(X, np.zeros((4, 2)), np.ones(4))


def test_cluster_report(tmp_path):
    cells = blob_cells(n_per=4)
    labels, centers = kmeans_cluster(cells, ClusterConfig(k=3))
    p = tmp_path / "clusters.csv"
    write_cluster_report(p, cells, labels, centers)
    rows = p.read_text().splitlines()
    assert rows[0] == "element_id,cluster_id,angle_before_rad,angle_after_rad"
    assert len(rows) == len(cells) + 1
