"""Point-cloud preprocessing: normals, intensity normalization, clustering.

Clouds are structure-of-arrays: an (N, 3) float64 position array plus an (N,)
intensity array, both in the sensor frame. attribute() bundles the three
preprocessing steps into an AttributedCloud whose rows carry
{x, y, z, nx, ny, nz, r, class}.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

__all__ = [
    "NOISE",
    "AttributedCloud",
    "estimate_normals",
    "normalize_intensity",
    "segment_clusters",
    "attribute",
]

# Class label for points whose cluster fell below the minimum size.
NOISE = -1


@dataclass
class AttributedCloud:
    """Preprocessed cloud: positions, unit normals, reflectivity, class ids.

    classes holds dense ids in [0, class_count) plus the NOISE sentinel.
    reliable flags points whose normal came from a non-degenerate
    neighborhood; unreliable normals default to (0, 0, 1).
    """

    xyz: np.ndarray
    normals: np.ndarray
    reflectivity: np.ndarray
    classes: np.ndarray
    class_count: int
    reliable: np.ndarray

    def __len__(self) -> int:
        return self.xyz.shape[0]

    def select(self, idx: np.ndarray) -> "AttributedCloud":
        """Subset view of the cloud at the given point indices."""
        labels = self.classes[idx]
        kept = np.unique(labels[labels != NOISE])
        return AttributedCloud(
            xyz=self.xyz[idx],
            normals=self.normals[idx],
            reflectivity=self.reflectivity[idx],
            classes=labels,
            class_count=int(kept.size),
            reliable=self.reliable[idx],
        )


def estimate_normals(xyz: np.ndarray, k: int = 10):
    """Per-point unit normals from PCA over the k nearest neighbors.

    The normal is the eigenvector of the neighborhood covariance with the
    smallest eigenvalue, sign-flipped so it faces the sensor origin
    (n . (-p) >= 0). Degenerate neighborhoods (all k points coincident) get
    the placeholder normal (0, 0, 1) and a False reliability flag.

    Returns (normals (N, 3), reliable (N,) bool).
    """
    xyz = np.asarray(xyz, dtype=np.float64).reshape(-1, 3)
    n = xyz.shape[0]
    if k < 3:
        raise ValueError("need k >= 3 neighbors for a covariance")
    if n < k:
        raise ValueError(f"cloud has {n} points but k={k}")

    tree = cKDTree(xyz)
    _, nbr = tree.query(xyz, k=k)
    hoods = xyz[nbr]                                  # (N, k, 3)
    centered = hoods - hoods.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centered, centered) / k

    reliable = np.trace(cov, axis1=1, axis2=2) > 1e-18
    eigvals, eigvecs = np.linalg.eigh(cov)           # ascending eigenvalues
    normals = eigvecs[:, :, 0]
    norms = np.linalg.norm(normals, axis=1, keepdims=True)
    normals = normals / np.where(norms > 0, norms, 1.0)

    # Orient toward the origin: flip where n points away from the sensor.
    flip = np.einsum("ni,ni->n", normals, xyz) > 0.0
    normals[flip] *= -1.0
    normals[~reliable] = (0.0, 0.0, 1.0)
    return normals, reliable


def normalize_intensity(intensity: np.ndarray) -> np.ndarray:
    """Normalize raw intensities into [0, 1] with a 99th-percentile ceiling.

    r = clamp((i - min) / (p99 - min), 0, 1), where p99 is the sorted value
    at rank ceil(0.99 * n) - 1. The percentile clamp keeps single sensor
    spikes from crushing the rest of the range. A degenerate spread
    (p99 == min, e.g. a constant cloud) maps to r = 0 below the ceiling.
    """
    i = np.asarray(intensity, dtype=np.float64).reshape(-1)
    if i.size == 0:
        raise ValueError("empty intensity array")
    lo = i.min()
    p99 = np.sort(i)[math.ceil(0.99 * i.size) - 1]
    if p99 > lo:
        return np.clip((i - lo) / (p99 - lo), 0.0, 1.0)
    return (i > p99).astype(np.float64)


def segment_clusters(xyz: np.ndarray, radius: float = 0.5, min_pts: int = 5):
    """Euclidean connected-components clustering.

    Two points are connected when their distance is <= radius; connected
    components smaller than min_pts become NOISE. Labels are dense and
    assigned in order of each component's first point index, so the
    partition is deterministic and independent of point order up to that
    renaming rule.

    Returns (labels (N,) int, class_count).
    """
    xyz = np.asarray(xyz, dtype=np.float64).reshape(-1, 3)
    n = xyz.shape[0]
    if radius <= 0:
        raise ValueError("radius must be positive")
    if min_pts < 1:
        raise ValueError("min_pts must be >= 1")
    if n == 0:
        return np.empty(0, dtype=np.int64), 0

    parent = np.arange(n)

    def find(a: int) -> int:
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    tree = cKDTree(xyz)
    for a, b in tree.query_pairs(radius, output_type="ndarray"):
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)

    roots = np.array([find(a) for a in range(n)])
    sizes = np.bincount(roots, minlength=n)

    labels = np.full(n, NOISE, dtype=np.int64)
    next_label = 0
    seen: dict[int, int] = {}
    for a in range(n):
        root = roots[a]
        if sizes[root] < min_pts:
            continue
        if root not in seen:
            seen[root] = next_label
            next_label += 1
        labels[a] = seen[root]
    return labels, next_label


def attribute(
    xyz: np.ndarray,
    intensity: np.ndarray,
    k: int = 10,
    radius: float = 0.5,
    min_pts: int = 5,
) -> AttributedCloud:
    """Compose normals + intensity normalization + clustering, order preserved."""
    xyz = np.asarray(xyz, dtype=np.float64).reshape(-1, 3)
    intensity = np.asarray(intensity, dtype=np.float64).reshape(-1)
    if intensity.shape[0] != xyz.shape[0]:
        raise ValueError("xyz and intensity lengths differ")
    normals, reliable = estimate_normals(xyz, k=k)
    reflectivity = normalize_intensity(intensity)
    classes, class_count = segment_clusters(xyz, radius=radius, min_pts=min_pts)
    return AttributedCloud(
        xyz=xyz,
        normals=normals,
        reflectivity=reflectivity,
        classes=classes,
        class_count=class_count,
        reliable=reliable,
    )
