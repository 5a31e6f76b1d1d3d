"""Tests for normals, intensity normalization, and clustering.

The clustering oracle is a brute-force union-find over the full O(n^2)
distance matrix; the normals oracle is the analytic plane normal.
"""

import math

import numpy as np
import pytest

from lidarcam.pointcloud import (
    NOISE,
    attribute,
    estimate_normals,
    normalize_intensity,
    segment_clusters,
)


def brute_force_components(xyz, radius, min_pts):
    """Union-find over all pairs; the independent clustering oracle."""
    n = xyz.shape[0]
    parent = list(range(n))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for i in range(n):
        for j in range(i + 1, n):
            if np.linalg.norm(xyz[i] - xyz[j]) <= radius:
                ri, rj = find(i), find(j)
                if ri != rj:
                    parent[max(ri, rj)] = min(ri, rj)

    labels = np.full(n, NOISE, dtype=np.int64)
    roots = [find(i) for i in range(n)]
    sizes = {}
    for r in roots:
        sizes[r] = sizes.get(r, 0) + 1
    next_label = 0
    seen = {}
    for i, r in enumerate(roots):
        if sizes[r] < min_pts:
            continue
        if r not in seen:
            seen[r] = next_label
            next_label += 1
        labels[i] = seen[r]
    return labels


def plane_grid(n_side, spacing, z=2.0):
    xs = (np.arange(n_side) - n_side / 2) * spacing
    xx, yy = np.meshgrid(xs, xs)
    return np.column_stack([xx.ravel(), yy.ravel(), np.full(xx.size, z)])


class TestEstimateNormals:
    def test_plane_facing_camera(self):
        xyz = plane_grid(10, 0.1, z=2.0)
        normals, reliable = estimate_normals(xyz, k=10)
        assert reliable.all()
        # Oriented toward the origin, so the z=2 plane normal is -z.
        np.testing.assert_allclose(normals, np.tile([0, 0, -1.0], (100, 1)), atol=1e-9)

    def test_plane_x_equals_5(self):
        xyz = plane_grid(10, 0.1)[:, [2, 0, 1]]  # plane x = 2 -> relabel axes
        xyz[:, 0] = 5.0
        normals, _ = estimate_normals(xyz, k=10)
        np.testing.assert_allclose(normals, np.tile([-1.0, 0, 0], (100, 1)), atol=1e-9)

    def test_noisy_plane_within_one_degree(self):
        rng = np.random.default_rng(7)
        n_side = 24
        spacing = 0.25
        xs = (np.arange(n_side) - n_side / 2) * spacing
        xx, yy = np.meshgrid(xs, xs)
        zz = 3.0 - 0.3 * xx - 0.4 * yy + rng.normal(0, 0.005, xx.shape)
        xyz = np.column_stack([xx.ravel(), yy.ravel(), zz.ravel()])
        normals, _ = estimate_normals(xyz, k=12)

        true_n = np.array([0.3, 0.4, 1.0])
        true_n /= np.linalg.norm(true_n)
        interior = (np.abs(xx.ravel()) < xs.max() - 2 * spacing) & (
            np.abs(yy.ravel()) < xs.max() - 2 * spacing
        )
        cos = np.abs(normals[interior] @ true_n)
        angles = np.degrees(np.arccos(np.clip(cos, -1, 1)))
        assert np.mean(angles < 1.0) >= 0.95

    def test_unit_length_and_orientation(self):
        rng = np.random.default_rng(3)
        xyz = rng.uniform(-5, 5, size=(200, 3)) + [0, 0, 10.0]
        normals, reliable = estimate_normals(xyz, k=8)
        np.testing.assert_allclose(np.linalg.norm(normals, axis=1), 1.0, atol=1e-6)
        dots = np.einsum("ni,ni->n", normals[reliable], -xyz[reliable])
        assert (dots >= 0).all()

    def test_degenerate_neighborhood_flagged(self):
        xyz = np.zeros((12, 3))
        xyz[10:] = [[5, 5, 5], [5, 5, 5.01]]
        normals, reliable = estimate_normals(xyz, k=5)
        assert not reliable[:10].any()
        np.testing.assert_array_equal(normals[0], [0, 0, 1])

    def test_parameter_validation(self):
        xyz = plane_grid(3, 0.1)
        with pytest.raises(ValueError):
            estimate_normals(xyz, k=2)
        with pytest.raises(ValueError):
            estimate_normals(xyz[:4], k=5)


class TestNormalizeIntensity:
    def test_constant_cloud_all_zero(self):
        np.testing.assert_array_equal(normalize_intensity(np.full(50, 0.5)), np.zeros(50))

    def test_uniform_ramp_pins_p99(self):
        # 100 values 0..99: p99 is the sorted value at rank ceil(0.99*100)-1 = 98.
        r = normalize_intensity(np.arange(100.0))
        assert r[0] == 0.0
        assert r[99] == 1.0
        assert r[98] == pytest.approx(1.0)
        assert r[49] == pytest.approx(49.0 / 98.0)

    def test_outlier_clamps(self):
        rng = np.random.default_rng(5)
        base = rng.uniform(0, 1, 199)
        values = np.append(base, 1000.0)
        r = normalize_intensity(values)
        assert r[-1] == 1.0
        p99 = np.sort(values)[math.ceil(0.99 * 200) - 1]
        expected = np.clip((values - values.min()) / (p99 - values.min()), 0, 1)
        np.testing.assert_allclose(r, expected, atol=1e-12)

    def test_monotone(self):
        rng = np.random.default_rng(11)
        values = rng.uniform(0, 10, 500)
        r = normalize_intensity(values)
        order = np.argsort(values)
        assert (np.diff(r[order]) >= -1e-15).all()

    def test_affine_invariance(self):
        rng = np.random.default_rng(13)
        values = rng.uniform(0, 10, 300)
        r1 = normalize_intensity(values)
        r2 = normalize_intensity(3.7 * values + 11.0)
        np.testing.assert_allclose(r1, r2, atol=1e-12)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            normalize_intensity(np.array([]))


class TestSegmentClusters:
    def test_two_blobs(self):
        rng = np.random.default_rng(0)
        a = rng.normal(0, 0.1, size=(50, 3))
        b = rng.normal(0, 0.1, size=(50, 3)) + [10, 0, 0]
        labels, count = segment_clusters(np.vstack([a, b]), radius=0.5, min_pts=5)
        assert count == 2
        assert set(labels[:50]) == {0}
        assert set(labels[50:]) == {1}

    def test_chain_connectivity(self):
        xyz = np.column_stack([np.arange(30) * 0.4, np.zeros(30), np.zeros(30)])
        labels, count = segment_clusters(xyz, radius=0.5, min_pts=5)
        assert count == 1
        assert set(labels) == {0}

    def test_small_components_are_noise(self):
        xyz = np.vstack([np.zeros((10, 3)), [[100, 100, 100]]])
        labels, count = segment_clusters(xyz, radius=0.5, min_pts=5)
        assert count == 1
        assert labels[-1] == NOISE

    def test_matches_brute_force_on_random_clouds(self):
        rng = np.random.default_rng(21)
        for trial in range(10):
            n = int(rng.integers(50, 300))
            xyz = rng.uniform(0, 6, size=(n, 3))
            radius = float(rng.uniform(0.3, 0.9))
            min_pts = int(rng.integers(1, 6))
            labels, _ = segment_clusters(xyz, radius=radius, min_pts=min_pts)
            expected = brute_force_components(xyz, radius, min_pts)
            np.testing.assert_array_equal(labels, expected)

    def test_permutation_invariant_partition(self):
        rng = np.random.default_rng(33)
        xyz = rng.uniform(0, 4, size=(150, 3))
        labels, _ = segment_clusters(xyz, radius=0.6, min_pts=3)
        perm = rng.permutation(150)
        labels_p, _ = segment_clusters(xyz[perm], radius=0.6, min_pts=3)
        # Same partition up to label renaming.
        for i in range(150):
            for j in range(150):
                same = labels[perm[i]] == labels[perm[j]] and labels[perm[i]] != NOISE
                same_p = labels_p[i] == labels_p[j] and labels_p[i] != NOISE
                assert same == same_p

    def test_parameter_validation(self):
        with pytest.raises(ValueError):
            segment_clusters(np.zeros((5, 3)), radius=0.0)
        with pytest.raises(ValueError):
            segment_clusters(np.zeros((5, 3)), min_pts=0)


class TestAttribute:
    def test_planar_constant_blob(self):
        xyz = plane_grid(12, 0.1, z=3.0)
        cloud = attribute(xyz, np.full(len(xyz), 7.0), k=10, radius=0.5, min_pts=5)
        assert cloud.class_count == 1
        assert set(cloud.classes) == {0}
        np.testing.assert_array_equal(cloud.reflectivity, np.zeros(len(xyz)))
        np.testing.assert_allclose(
            cloud.normals, np.tile([0, 0, -1.0], (len(xyz), 1)), atol=1e-9
        )

    def test_two_plane_scene(self):
        a = plane_grid(10, 0.1, z=2.0)
        b = plane_grid(10, 0.1, z=2.0)[:, [2, 0, 1]]
        b[:, 0] = 5.0
        xyz = np.vstack([a, b])
        intensity = np.concatenate([np.full(100, 10.0), np.full(100, 50.0)])
        cloud = attribute(xyz, intensity, k=8, radius=0.5, min_pts=5)
        assert cloud.class_count == 2
        normals_a = cloud.normals[:100]
        normals_b = cloud.normals[100:]
        assert abs(normals_a @ normals_b.T).max() < 1e-6  # orthogonal planes

    def test_matches_suboperations_exactly(self):
        rng = np.random.default_rng(17)
        xyz = np.vstack([
            plane_grid(15, 0.12, z=4.0),
            plane_grid(15, 0.12, z=8.0) + [3.0, 0, 0],
        ])
        intensity = rng.uniform(0, 100, len(xyz))
        cloud = attribute(xyz, intensity, k=9, radius=0.4, min_pts=4)

        normals, reliable = estimate_normals(xyz, k=9)
        reflectivity = normalize_intensity(intensity)
        classes, count = segment_clusters(xyz, radius=0.4, min_pts=4)
        np.testing.assert_array_equal(cloud.normals, normals)
        np.testing.assert_array_equal(cloud.reflectivity, reflectivity)
        np.testing.assert_array_equal(cloud.classes, classes)
        assert cloud.class_count == count
        np.testing.assert_array_equal(cloud.reliable, reliable)

    def test_select_preserves_order(self):
        xyz = plane_grid(10, 0.1)
        cloud = attribute(xyz, np.arange(100.0), k=5, radius=0.5, min_pts=5)
        sub = cloud.select(np.array([5, 2, 50]))
        np.testing.assert_array_equal(sub.xyz, xyz[[5, 2, 50]])
        assert len(sub) == 3

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError):
            attribute(np.zeros((10, 3)), np.zeros(9))
