"""Rigid-body and pinhole-camera math for LiDAR-camera calibration.

Conventions used throughout the toolkit:

* Rotation matrices are 3x3 row-major numpy arrays acting on column vectors.
* Euler angles compose as Rz(theta) @ Rx(omega) @ Ry(psi), i.e. theta about
  the z-axis, omega about the x-axis, psi about the y-axis.
* Quaternions are (w, x, y, z) arrays, unit norm, canonicalized to w >= 0.
* An Extrinsic is the homogeneous rigid transform [R t; 0 1] mapping points
  from the source frame (LiDAR) into the camera frame.
* Angles are radians everywhere except explicitly *_deg values, which exist
  only for reporting.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "EulerAngles",
    "Extrinsic",
    "Intrinsics",
    "Pixel",
    "euler_to_rotation",
    "rotation_to_quaternion",
    "quaternion_to_rotation",
    "canonicalize_quaternion",
    "rodrigues",
    "compose",
    "invert",
    "project",
    "project_points",
    "unproject",
    "reproject",
    "pixel_from_image",
    "rotation_error_deg",
    "translation_error_cm",
    "is_rotation_matrix",
]

ORTHONORMAL_TOL = 1e-9


@dataclass(frozen=True)
class EulerAngles:
    """Euler angles in radians: theta about z, omega about x, psi about y."""

    theta: float
    omega: float
    psi: float

    def __post_init__(self):
        if not all(math.isfinite(a) for a in (self.theta, self.omega, self.psi)):
            raise ValueError("Euler angles must be finite")


@dataclass(frozen=True)
class Pixel:
    """Real-valued pixel coordinate with the camera-frame depth of the point."""

    u: float
    v: float
    depth: float


@dataclass(frozen=True)
class Intrinsics:
    """Pinhole camera internals: focal lengths and principal point in pixels.

    dx/dy are the optional physical pixel pitches (meters per pixel) relating
    the metric image plane to pixel coordinates via fx = f/dx, fy = f/dy.
    """

    width: int
    height: int
    fx: float
    fy: float
    u0: float
    v0: float
    dx: float | None = None
    dy: float | None = None

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image dimensions must be positive")


def _rot_z(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _rot_x(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def _rot_y(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def euler_to_rotation(angles: EulerAngles) -> np.ndarray:
    """Rotation matrix Rz(theta) @ Rx(omega) @ Ry(psi)."""
    return _rot_z(angles.theta) @ _rot_x(angles.omega) @ _rot_y(angles.psi)


def is_rotation_matrix(m: np.ndarray, tol: float = ORTHONORMAL_TOL) -> bool:
    """True if m is orthonormal with determinant +1 within tol per entry."""
    m = np.asarray(m, dtype=np.float64)
    if m.shape != (3, 3):
        return False
    if not np.all(np.abs(m.T @ m - np.eye(3)) <= tol):
        return False
    return abs(np.linalg.det(m) - 1.0) <= tol


def _require_rotation(m: np.ndarray) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    if not is_rotation_matrix(m):
        raise ValueError("not an orthonormal right-handed rotation matrix")
    return m


def canonicalize_quaternion(q: np.ndarray) -> np.ndarray:
    """Pick the sign representative with w > 0 (then x > 0, y > 0, z > 0).

    q and -q encode the same rotation; this fixes a unique representative so
    quaternion-space comparisons are well defined.
    """
    q = np.asarray(q, dtype=np.float64)
    for component in q:
        if component > 0.0:
            return q.copy()
        if component < 0.0:
            return -q
    raise ValueError("zero quaternion has no canonical form")


def rotation_to_quaternion(r: np.ndarray) -> np.ndarray:
    """Convert a rotation matrix to a canonical unit quaternion (w, x, y, z).

    Raises ValueError for non-orthonormal input. Uses the largest-pivot
    (Shepperd) branch selection for numerical stability near w = 0.
    """
    r = _require_rotation(r)
    tr = r[0, 0] + r[1, 1] + r[2, 2]
    if tr > 0.0:
        s = math.sqrt(tr + 1.0) * 2.0
        q = np.array([
            0.25 * s,
            (r[2, 1] - r[1, 2]) / s,
            (r[0, 2] - r[2, 0]) / s,
            (r[1, 0] - r[0, 1]) / s,
        ])
    elif r[0, 0] >= r[1, 1] and r[0, 0] >= r[2, 2]:
        s = math.sqrt(1.0 + r[0, 0] - r[1, 1] - r[2, 2]) * 2.0
        q = np.array([
            (r[2, 1] - r[1, 2]) / s,
            0.25 * s,
            (r[0, 1] + r[1, 0]) / s,
            (r[0, 2] + r[2, 0]) / s,
        ])
    elif r[1, 1] >= r[2, 2]:
        s = math.sqrt(1.0 + r[1, 1] - r[0, 0] - r[2, 2]) * 2.0
        q = np.array([
            (r[0, 2] - r[2, 0]) / s,
            (r[0, 1] + r[1, 0]) / s,
            0.25 * s,
            (r[1, 2] + r[2, 1]) / s,
        ])
    else:
        s = math.sqrt(1.0 + r[2, 2] - r[0, 0] - r[1, 1]) * 2.0
        q = np.array([
            (r[1, 0] - r[0, 1]) / s,
            (r[0, 2] + r[2, 0]) / s,
            (r[1, 2] + r[2, 1]) / s,
            0.25 * s,
        ])
    return canonicalize_quaternion(q / np.linalg.norm(q))


def quaternion_to_rotation(q: np.ndarray) -> np.ndarray:
    """Rotation matrix of a unit quaternion (w, x, y, z)."""
    q = np.asarray(q, dtype=np.float64)
    n = np.linalg.norm(q)
    if abs(n - 1.0) > 1e-9:
        raise ValueError("quaternion must be unit norm")
    w, x, y, z = q / n
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def rodrigues(rotvec: np.ndarray) -> np.ndarray:
    """Rotation matrix for an axis-angle vector (angle = norm, axis = direction).

    The zero vector maps to the identity.
    """
    v = np.asarray(rotvec, dtype=np.float64).reshape(3)
    angle = np.linalg.norm(v)
    if angle == 0.0:
        return np.eye(3)
    kx, ky, kz = v / angle
    k = np.array([[0.0, -kz, ky], [kz, 0.0, -kx], [-ky, kx, 0.0]])
    return np.eye(3) + math.sin(angle) * k + (1.0 - math.cos(angle)) * (k @ k)


@dataclass(frozen=True)
class Extrinsic:
    """Homogeneous rigid transform: x_cam = rotation @ x + translation."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=np.float64).reshape(3, 3))
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=np.float64).reshape(3))

    @classmethod
    def identity(cls) -> "Extrinsic":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, m: np.ndarray) -> "Extrinsic":
        m = np.asarray(m, dtype=np.float64)
        if m.shape != (4, 4):
            raise ValueError("expected a 4x4 homogeneous matrix")
        if not np.allclose(m[3], [0.0, 0.0, 0.0, 1.0], atol=1e-9):
            raise ValueError("last homogeneous row must be (0, 0, 0, 1)")
        return cls(m[:3, :3], m[:3, 3])

    def as_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform one (3,) point or an (N, 3) stack of points."""
        p = np.asarray(points, dtype=np.float64)
        return p @ self.rotation.T + self.translation

    def inverse(self) -> "Extrinsic":
        rt = self.rotation.T
        return Extrinsic(rt, -rt @ self.translation)

    def to_text(self) -> str:
        """Serialize as 4 lines of 4 floats (row-major homogeneous matrix)."""
        rows = []
        for row in self.as_matrix():
            rows.append(" ".join(f"{v:.17g}" for v in row))
        return "\n".join(rows) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "Extrinsic":
        """Parse the 4x4 text format; '#'-prefixed comment lines are ignored."""
        rows = []
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            values = [float(tok) for tok in line.split()]
            if len(values) != 4:
                raise ValueError(f"expected 4 values per matrix row, got {len(values)}")
            rows.append(values)
        if len(rows) != 4:
            raise ValueError(f"expected 4 matrix rows, got {len(rows)}")
        return cls.from_matrix(np.array(rows))

    def save(self, path) -> None:
        with open(path, "w") as f:
            f.write(self.to_text())

    @classmethod
    def load(cls, path) -> "Extrinsic":
        with open(path) as f:
            return cls.from_text(f.read())


def compose(a: Extrinsic, b: Extrinsic) -> Extrinsic:
    """Composition a*b: apply b first, then a."""
    return Extrinsic(a.rotation @ b.rotation, a.rotation @ b.translation + a.translation)


def invert(a: Extrinsic) -> Extrinsic:
    return a.inverse()


def project(point: np.ndarray, k: Intrinsics, h: Extrinsic) -> Pixel | None:
    """Project one 3D point through extrinsic h and intrinsics k.

    Returns None (the behind-camera sentinel) when the camera-frame depth is
    non-positive, so whole-cloud projection loops stay total.
    """
    x_c, y_c, z_c = h.apply(np.asarray(point, dtype=np.float64).reshape(3))
    if z_c <= 0.0:
        return None
    return Pixel(float(k.fx * x_c / z_c + k.u0), float(k.fy * y_c / z_c + k.v0), float(z_c))


def project_points(points: np.ndarray, k: Intrinsics, h: Extrinsic):
    """Vectorized projection of an (N, 3) cloud.

    Returns (u, v, depth, valid) arrays of length N; u/v are only meaningful
    where valid (depth > 0).
    """
    cam = np.asarray(points, dtype=np.float64).reshape(-1, 3) @ h.rotation.T + h.translation
    z = cam[:, 2]
    valid = z > 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        u = k.fx * cam[:, 0] / z + k.u0
        v = k.fy * cam[:, 1] / z + k.v0
    return u, v, z, valid


def unproject(u: float, v: float, depth: float, k: Intrinsics) -> np.ndarray:
    """Back-project a pixel at a known positive depth to a camera-frame point."""
    if depth <= 0.0:
        raise ValueError("depth must be positive")
    return np.array([
        (u - k.u0) / k.fx * depth,
        (v - k.v0) / k.fy * depth,
        depth,
    ])


def reproject(point: np.ndarray, r: np.ndarray, t: np.ndarray, k: Intrinsics) -> Pixel | None:
    """Rigid-transform-then-project, as a named alias of project().

    Kept separate so the transform-projection identity is an explicit,
    testable contract rather than an accident of implementation.
    """
    return project(point, k, Extrinsic(r, t))


def pixel_from_image(x: float, y: float, k: Intrinsics) -> tuple[float, float]:
    """Map metric image-plane coordinates to pixel coordinates via dx/dy."""
    if k.dx is None or k.dy is None:
        raise ValueError("intrinsics carry no pixel pitch (dx/dy)")
    return x / k.dx + k.u0, y / k.dy + k.v0


def rotation_error_deg(a: np.ndarray, b: np.ndarray) -> float:
    """Geodesic angle between two rotations, in degrees, clamped to [0, 180]."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    cos_angle = (np.trace(a.T @ b) - 1.0) / 2.0
    cos_angle = min(1.0, max(-1.0, cos_angle))
    return math.degrees(math.acos(cos_angle))


def translation_error_cm(a: np.ndarray, b: np.ndarray) -> float:
    """Euclidean distance between two translations, in centimeters."""
    a = np.asarray(a, dtype=np.float64).reshape(3)
    b = np.asarray(b, dtype=np.float64).reshape(3)
    return 100.0 * float(np.linalg.norm(a - b))
