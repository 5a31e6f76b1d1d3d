"""Unit tests for rotations, transforms, projection, and pose-error metrics.

Oracles are kept independent of the code under test: naive 3x3 / 4x4 matrix
products written inline, scipy's rotation conversions, and closed-form
quantities computed by hand.
"""

import math

import numpy as np
import pytest
from scipy.spatial.transform import Rotation as ScipyRotation

from lidarcam.geometry import (
    Extrinsic,
    EulerAngles,
    Intrinsics,
    canonicalize_quaternion,
    compose,
    euler_to_rotation,
    invert,
    is_rotation_matrix,
    pixel_from_image,
    project,
    project_points,
    quaternion_to_rotation,
    reproject,
    rodrigues,
    rotation_error_deg,
    rotation_to_quaternion,
    translation_error_cm,
    unproject,
)


def naive_matmul3(a, b):
    """Textbook triple loop, the oracle for 3x3 products."""
    out = np.zeros((3, 3))
    for i in range(3):
        for j in range(3):
            for k in range(3):
                out[i, j] += a[i, k] * b[k, j]
    return out


def random_rotation(rng):
    return euler_to_rotation(
        EulerAngles(*rng.uniform(-math.pi / 2, math.pi / 2, size=3))
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def k():
    return Intrinsics(width=640, height=480, fx=500.0, fy=480.0, u0=320.0, v0=240.0)


class TestEulerToRotation:
    def test_zero_angles_identity(self):
        np.testing.assert_array_almost_equal(
            euler_to_rotation(EulerAngles(0, 0, 0)), np.eye(3), decimal=12
        )

    def test_quarter_turn_about_z(self):
        expected = np.array([[0, -1, 0], [1, 0, 0], [0, 0, 1]], dtype=float)
        np.testing.assert_allclose(
            euler_to_rotation(EulerAngles(math.pi / 2, 0, 0)), expected, atol=1e-12
        )

    def test_matches_naive_factor_product(self):
        theta, omega, psi = 0.3, -0.2, 0.1
        ct, st = math.cos(theta), math.sin(theta)
        co, so = math.cos(omega), math.sin(omega)
        cp, sp = math.cos(psi), math.sin(psi)
        rz = np.array([[ct, -st, 0], [st, ct, 0], [0, 0, 1]])
        rx = np.array([[1, 0, 0], [0, co, -so], [0, so, co]])
        ry = np.array([[cp, 0, sp], [0, 1, 0], [-sp, 0, cp]])
        expected = naive_matmul3(naive_matmul3(rz, rx), ry)
        np.testing.assert_allclose(
            euler_to_rotation(EulerAngles(theta, omega, psi)), expected, atol=1e-12
        )

    def test_always_orthonormal(self, rng):
        for _ in range(200):
            r = euler_to_rotation(EulerAngles(*rng.uniform(-math.pi, math.pi, size=3)))
            assert np.abs(r.T @ r - np.eye(3)).max() <= 1e-9
            assert abs(np.linalg.det(r) - 1.0) <= 1e-9

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            EulerAngles(math.nan, 0, 0)


class TestQuaternion:
    def test_identity(self):
        np.testing.assert_allclose(
            rotation_to_quaternion(np.eye(3)), [1, 0, 0, 0], atol=1e-12
        )

    def test_half_turn_about_z(self):
        r = euler_to_rotation(EulerAngles(math.pi, 0, 0))
        np.testing.assert_allclose(rotation_to_quaternion(r), [0, 0, 0, 1], atol=1e-9)

    def test_round_trip_random(self, rng):
        for _ in range(300):
            r = random_rotation(rng)
            q = rotation_to_quaternion(r)
            assert abs(np.linalg.norm(q) - 1.0) <= 1e-9
            assert q[0] >= 0
            np.testing.assert_allclose(quaternion_to_rotation(q), r, atol=1e-9)

    def test_matches_scipy(self, rng):
        for _ in range(50):
            r = random_rotation(rng)
            q = rotation_to_quaternion(r)
            q_ref = ScipyRotation.from_matrix(r).as_quat()  # (x, y, z, w)
            q_ref = np.array([q_ref[3], q_ref[0], q_ref[1], q_ref[2]])
            if q_ref[0] < 0:
                q_ref = -q_ref
            np.testing.assert_allclose(q, q_ref, atol=1e-9)

    def test_rejects_non_orthonormal(self):
        with pytest.raises(ValueError):
            rotation_to_quaternion(np.eye(3) * 1.001)

    def test_rejects_non_unit_quaternion(self):
        with pytest.raises(ValueError):
            quaternion_to_rotation([1.0, 0.5, 0, 0])

    def test_canonicalization_sign(self):
        q = canonicalize_quaternion([-0.5, 0.5, 0.5, 0.5])
        assert q[0] > 0
        np.testing.assert_allclose(
            canonicalize_quaternion([0.0, -1.0, 0.0, 0.0]), [0, 1, 0, 0], atol=0
        )


class TestRodrigues:
    def test_zero_vector_identity(self):
        np.testing.assert_array_equal(rodrigues([0, 0, 0]), np.eye(3))

    def test_z_quarter_turn_equals_euler(self):
        np.testing.assert_allclose(
            rodrigues([0, 0, math.pi / 2]),
            euler_to_rotation(EulerAngles(math.pi / 2, 0, 0)),
            atol=1e-12,
        )

    def test_geodesic_angle_equals_norm(self, rng):
        for _ in range(100):
            v = rng.uniform(-2, 2, size=3)
            r = rodrigues(v)
            angle = rotation_error_deg(np.eye(3), r)
            expected = math.degrees(np.linalg.norm(v))
            if expected > 180.0:
                expected = 360.0 - expected
            assert abs(angle - expected) <= 1e-9 * max(1.0, expected)

    def test_matches_quaternion_exponential_oracle(self):
        v = np.array([0.1, 0.2, 0.3])
        angle = np.linalg.norm(v)
        axis = v / angle
        q = np.concatenate([[math.cos(angle / 2)], math.sin(angle / 2) * axis])
        np.testing.assert_allclose(rodrigues(v), quaternion_to_rotation(q), atol=1e-12)


class TestExtrinsic:
    def test_compose_with_identity(self, rng):
        x = Extrinsic(random_rotation(rng), rng.uniform(-1, 1, 3))
        out = compose(Extrinsic.identity(), x)
        np.testing.assert_allclose(out.as_matrix(), x.as_matrix(), atol=1e-15)

    def test_invert_pure_translation(self):
        inv = invert(Extrinsic(np.eye(3), [1.0, 2.0, 3.0]))
        np.testing.assert_allclose(inv.translation, [-1, -2, -3], atol=1e-15)
        np.testing.assert_allclose(inv.rotation, np.eye(3), atol=1e-15)

    def test_compose_matches_4x4_oracle(self, rng):
        for _ in range(50):
            a = Extrinsic(random_rotation(rng), rng.uniform(-2, 2, 3))
            b = Extrinsic(random_rotation(rng), rng.uniform(-2, 2, 3))
            p = rng.uniform(-5, 5, 3)
            oracle = a.as_matrix() @ b.as_matrix() @ np.append(p, 1.0)
            np.testing.assert_allclose(compose(a, b).apply(p), oracle[:3], atol=1e-9)

    def test_compose_inverse_is_identity(self, rng):
        a = Extrinsic(random_rotation(rng), rng.uniform(-2, 2, 3))
        out = compose(a, invert(a)).as_matrix()
        np.testing.assert_allclose(out, np.eye(4), atol=1e-9)

    def test_compose_associative(self, rng):
        for _ in range(30):
            a, b, c = (
                Extrinsic(random_rotation(rng), rng.uniform(-2, 2, 3)) for _ in range(3)
            )
            left = compose(compose(a, b), c).as_matrix()
            right = compose(a, compose(b, c)).as_matrix()
            np.testing.assert_allclose(left, right, atol=1e-9)

    def test_text_round_trip_exact(self, rng, tmp_path):
        a = Extrinsic(random_rotation(rng), rng.uniform(-2, 2, 3))
        path = tmp_path / "ext.txt"
        a.save(path)
        b = Extrinsic.load(path)
        np.testing.assert_array_equal(a.as_matrix(), b.as_matrix())

    def test_text_comments_ignored(self):
        text = "# comment\n1 0 0 0\n0 1 0 0\n# more\n0 0 1 0\n0 0 0 1\n"
        np.testing.assert_array_equal(Extrinsic.from_text(text).as_matrix(), np.eye(4))

    def test_text_rejects_bad_row(self):
        with pytest.raises(ValueError):
            Extrinsic.from_text("1 0 0\n0 1 0 0\n0 0 1 0\n0 0 0 1\n")


class TestProjection:
    def test_on_axis_point(self, k):
        p = project([0, 0, 5.0], k, Extrinsic.identity())
        assert (p.u, p.v, p.depth) == (320.0, 240.0, 5.0)

    def test_off_axis_point(self, k):
        p = project([1.0, 0, 5.0], k, Extrinsic.identity())
        assert p.u == pytest.approx(420.0)

    def test_behind_camera_sentinel(self, k):
        assert project([0, 0, -1.0], k, Extrinsic.identity()) is None
        assert project([0, 0, 0.0], k, Extrinsic.identity()) is None

    def test_unproject_principal_point(self, k):
        np.testing.assert_allclose(unproject(k.u0, k.v0, 7.0, k), [0, 0, 7.0])
        np.testing.assert_allclose(unproject(k.u0 + k.fx, k.v0, 1.0, k), [1, 0, 1.0])

    def test_unproject_rejects_bad_depth(self, k):
        with pytest.raises(ValueError):
            unproject(0, 0, 0.0, k)

    def test_project_unproject_round_trip(self, k, rng):
        for _ in range(500):
            u = rng.uniform(0, k.width)
            v = rng.uniform(0, k.height)
            depth = rng.uniform(0.1, 120.0)
            point = unproject(u, v, depth, k)
            pix = project(point, k, Extrinsic.identity())
            assert abs(pix.u - u) <= 1e-9
            assert abs(pix.v - v) <= 1e-9
            assert abs(pix.depth - depth) <= 1e-9

    def test_reproject_is_project(self, k, rng):
        for _ in range(200):
            r = random_rotation(rng)
            t = rng.uniform(-2, 2, 3)
            point = rng.uniform(-10, 10, 3)
            a = reproject(point, r, t, k)
            b = project(point, k, Extrinsic(r, t))
            if a is None:
                assert b is None
            else:
                assert abs(a.u - b.u) <= 1e-12
                assert abs(a.v - b.v) <= 1e-12

    def test_project_points_matches_scalar(self, k, rng):
        points = rng.uniform(-10, 10, size=(200, 3))
        h = Extrinsic(random_rotation(rng), rng.uniform(-1, 1, 3))
        u, v, z, valid = project_points(points, k, h)
        for i, point in enumerate(points):
            pix = project(point, k, h)
            if pix is None:
                assert not valid[i]
            else:
                assert valid[i]
                assert u[i] == pytest.approx(pix.u, rel=1e-12, abs=1e-12)
                assert v[i] == pytest.approx(pix.v, rel=1e-12, abs=1e-12)

    def test_pixel_from_image_plane(self):
        k = Intrinsics(640, 480, fx=500.0, fy=500.0, u0=320.0, v0=240.0,
                       dx=0.002, dy=0.002)
        assert pixel_from_image(0.0, 0.0, k) == (320.0, 240.0)
        u, _ = pixel_from_image(k.dx, 0.0, k)
        assert u == pytest.approx(321.0)

    def test_pixel_from_image_requires_pitch(self, k):
        with pytest.raises(ValueError):
            pixel_from_image(0.0, 0.0, k)

    def test_focal_pitch_consistency(self, rng):
        # fx = f / dx: projecting through the metric image plane and then
        # converting to pixels must agree with the direct pinhole formula.
        f, dx, dy = 0.008, 1.6e-5, 1.6e-5
        k = Intrinsics(640, 480, fx=f / dx, fy=f / dy, u0=320.0, v0=240.0, dx=dx, dy=dy)
        for _ in range(100):
            point = np.array([rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(1, 50)])
            x_plane = f * point[0] / point[2]
            y_plane = f * point[1] / point[2]
            u_via_plane, v_via_plane = pixel_from_image(x_plane, y_plane, k)
            pix = project(point, k, Extrinsic.identity())
            assert abs(pix.u - u_via_plane) <= 1e-9
            assert abs(pix.v - v_via_plane) <= 1e-9


class TestErrorMetrics:
    def test_zero_for_equal_rotations(self, rng):
        r = random_rotation(rng)
        assert rotation_error_deg(r, r) == 0.0

    def test_single_axis_degree(self):
        r = euler_to_rotation(EulerAngles(math.radians(1.0), 0, 0))
        assert rotation_error_deg(np.eye(3), r) == pytest.approx(1.0, abs=1e-9)

    def test_matches_quaternion_angle_oracle(self):
        r = euler_to_rotation(EulerAngles(0.2, 0.1, -0.15))
        q = rotation_to_quaternion(r)
        expected = math.degrees(2.0 * math.acos(abs(q[0])))
        assert rotation_error_deg(np.eye(3), r) == pytest.approx(expected, abs=1e-9)

    def test_symmetry_and_left_invariance(self, rng):
        for _ in range(50):
            a, b, q = (random_rotation(rng) for _ in range(3))
            e = rotation_error_deg(a, b)
            assert e == pytest.approx(rotation_error_deg(b, a), abs=1e-9)
            assert e == pytest.approx(rotation_error_deg(q @ a, q @ b), abs=1e-8)

    def test_translation_error(self):
        assert translation_error_cm([0, 0, 0], [0.03, 0, 0.04]) == pytest.approx(5.0)
        assert translation_error_cm([0.01, 0, 0], [0, 0, 0]) == pytest.approx(1.0)
        assert translation_error_cm([1, 2, 3], [1, 2, 3]) == 0.0

    def test_is_rotation_matrix(self, rng):
        assert is_rotation_matrix(random_rotation(rng))
        assert not is_rotation_matrix(np.eye(3) * 1.001)
        assert not is_rotation_matrix(np.diag([1.0, 1.0, -1.0]))  # reflection
