import unittest

import numpy as np

from longwall_fusion.exception import GeometryException
from longwall_fusion.geometry import (
    Point3,
    RigidTransform,
    Timestamp,
    compose,
    invert,
    lidar_to_camera,
    transform_point,
)


def random_transform(rng: np.random.Generator) -> RigidTransform:
    return RigidTransform.from_euler(
        "xyz", rng.uniform(-180, 180, 3), rng.uniform(-5, 5, 3)
    )


class GeometryTest(unittest.TestCase):
    def test_identity(self):
        p = transform_point(RigidTransform.identity(), Point3(1, 2, 3))
        self.assertEqual(Point3(1.0, 2.0, 3.0), p)

    def test_translation(self):
        t = RigidTransform.from_translation((0.05, 0, 0))
        self.assertEqual(Point3(0.05, 0.0, 0.0), transform_point(t, (0, 0, 0)))

    def test_rotation_about_z(self):
        t = RigidTransform.from_euler("z", 90.0)
        x, y, z = transform_point(t, (1, 0, 0))
        self.assertAlmostEqual(0.0, x, places=12)
        self.assertAlmostEqual(1.0, y, places=12)
        self.assertAlmostEqual(0.0, z, places=12)

    def test_rejects_non_orthonormal(self):
        self.assertRaises(
            GeometryException, RigidTransform, np.diag([1.0, 1.0, 2.0])
        )
        self.assertRaises(
            GeometryException, RigidTransform, np.diag([1.0, 1.0, -1.0])
        )
        self.assertRaises(
            GeometryException,
            RigidTransform.from_translation,
            (np.nan, 0.0, 0.0),
        )

    def test_compose_with_identity(self):
        t = random_transform(np.random.default_rng(1))
        c = compose(t, RigidTransform.identity())
        np.testing.assert_allclose(c.as_matrix(), t.as_matrix(), atol=1e-12)

    def test_compose_with_inverse(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            t = random_transform(rng)
            c = compose(t, invert(t))
            np.testing.assert_allclose(c.as_matrix(), np.eye(4), atol=1e-9)

    def test_compose_matches_sequential_application(self):
        rng = np.random.default_rng(3)
        a, b = random_transform(rng), random_transform(rng)
        points = rng.uniform(-10, 10, (100, 3))
        np.testing.assert_allclose(
            compose(a, b).apply(points), a.apply(b.apply(points)), atol=1e-9
        )

    def test_transform_is_read_only(self):
        t = RigidTransform.identity()
        with self.assertRaises(ValueError):
            t.rotation[0, 0] = 2.0

    def test_timestamp(self):
        t = Timestamp.from_seconds(1.5)
        self.assertEqual(1_500_000_000, t.nanos)
        self.assertEqual(1500.0, t.millis)
        self.assertEqual(1.5, t.seconds)

    def test_lidar_to_camera_axes(self):
        """
        Without roll, LiDAR forward maps to the optical axis and LiDAR left
        to image left (negative x).
        """
        t = lidar_to_camera((0.0, 0.0, 0.0), 0.0)
        np.testing.assert_allclose(
            t.apply_direction([1.0, 0.0, 0.0]), [0, 0, 1], atol=1e-12
        )
        np.testing.assert_allclose(
            t.apply_direction([0.0, 1.0, 0.0]), [-1, 0, 0], atol=1e-12
        )

    def test_lidar_to_camera_baseline(self):
        """The camera centre sits at the camera-frame origin."""
        t = lidar_to_camera((0.0, 0.05, 0.0), 90.0)
        np.testing.assert_allclose(
            t.apply([[0.0, 0.05, 0.0]]), [[0, 0, 0]], atol=1e-12
        )
