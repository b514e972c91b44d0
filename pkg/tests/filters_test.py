import unittest

import numpy as np

from longwall_fusion.exception import FusionException
from longwall_fusion.filters import (
    ColoredCloud,
    radius_outlier_removal,
    ror_mask,
    voxel_downsample,
    voxel_indices,
)
from longwall_fusion.geometry import Timestamp
from longwall_fusion.scanner import PointCloudFrame


def brute_force_ror(positions, radius_m, min_neighbors):
    d = np.linalg.norm(positions[:, None, :] - positions[None, :, :], axis=2)
    others = (d <= radius_m).sum(axis=1) - 1
    return others >= min_neighbors


def clustered(rng, centers, per_cluster, voxel_m):
    """Points well inside the voxels that contain the given cell indices."""
    cells = np.repeat(np.asarray(centers, dtype=float), per_cluster, axis=0)
    offsets = rng.uniform(0.1, 0.9, cells.shape)
    return (cells + offsets) * voxel_m


class FiltersTest(unittest.TestCase):
    def test_ror_matches_brute_force(self):
        rng = np.random.default_rng(4)
        positions = rng.uniform(0, 2, (400, 3))
        for radius, k in [(0.2, 1), (0.3, 5), (0.5, 12)]:
            np.testing.assert_array_equal(
                brute_force_ror(positions, radius, k),
                ror_mask(positions, radius, k),
            )

    def test_ror_radius_is_inclusive(self):
        positions = np.array([[0.0, 0, 0], [1.0, 0, 0], [5.0, 0, 0]])
        np.testing.assert_array_equal(
            [True, True, False], ror_mask(positions, 1.0, 1)
        )

    def test_ror_edge_cases(self):
        empty = np.zeros((0, 3))
        self.assertEqual(0, len(ror_mask(empty, 0.2, 5)))
        few = np.zeros((3, 3))
        self.assertFalse(ror_mask(few, 0.2, 3).any())
        self.assertTrue(ror_mask(few, 0.2, 0).all())
        self.assertRaises(FusionException, ror_mask, few, 0.0, 1)

    def test_ror_keeps_dense_clusters(self):
        rng = np.random.default_rng(5)
        dense = rng.normal(scale=0.02, size=(200, 3))
        lone = np.array([[3.0, 3.0, 3.0], [-3.0, 0.0, 1.0]])
        cloud = ColoredCloud(
            np.vstack([dense, lone]), np.zeros((202, 3), dtype=np.uint8)
        )
        kept = radius_outlier_removal(cloud, 0.2, 5)
        self.assertEqual(200, len(kept))
        np.testing.assert_array_equal(dense, kept.positions)

    def test_voxel_indices_are_sorted(self):
        positions = np.array(
            [[0.5, 0.5, 0.5], [-0.5, 0.5, 0.5], [0.6, 0.4, 0.1]]
        )
        unique, inverse, counts = voxel_indices(positions, 1.0)
        np.testing.assert_array_equal([[-1, 0, 0], [0, 0, 0]], unique)
        np.testing.assert_array_equal([1, 0, 1], inverse)
        np.testing.assert_array_equal([1, 2], counts)

    def test_voxel_centroids_and_colours(self):
        cloud = ColoredCloud(
            np.array([[0.1, 0.1, 0.1], [0.3, 0.3, 0.3], [1.5, 0.5, 0.5]]),
            np.array([[10, 0, 255], [11, 0, 0], [7, 7, 7]], dtype=np.uint8),
        )
        out = voxel_downsample(cloud, 1.0)
        np.testing.assert_allclose(
            [[0.2, 0.2, 0.2], [1.5, 0.5, 0.5]], out.positions
        )
        # 10.5 and 127.5 round half-up
        np.testing.assert_array_equal(
            [[11, 0, 128], [7, 7, 7]], out.rgb
        )

    def test_voxel_downsample_frame(self):
        frame = PointCloudFrame(
            2,
            Timestamp(5),
            np.array([[0.1, 0.1, 0.1], [0.2, 0.2, 0.2]]),
            np.array([0.2, 0.4]),
            np.array([30, 10], dtype=np.int64),
        )
        out = voxel_downsample(frame, 1.0)
        self.assertEqual(1, len(out))
        self.assertEqual(2, out.frame_id)
        self.assertAlmostEqual(0.3, out.intensity[0])
        self.assertEqual(10, out.dt_ns[0])

    def test_voxel_downsample_is_idempotent(self):
        rng = np.random.default_rng(6)
        centers = rng.integers(-50, 50, (60, 3))
        positions = clustered(rng, centers, 7, 0.01)
        rgb = rng.integers(0, 256, (len(positions), 3)).astype(np.uint8)
        once = voxel_downsample(ColoredCloud(positions, rgb), 0.01)
        twice = voxel_downsample(once, 0.01)
        self.assertEqual(len(np.unique(centers, axis=0)), len(once))
        np.testing.assert_allclose(once.positions, twice.positions)
        np.testing.assert_array_equal(once.rgb, twice.rgb)

    def test_coarser_voxels_never_add_points(self):
        rng = np.random.default_rng(8)
        cloud = ColoredCloud(
            rng.uniform(-1, 1, (2000, 3)),
            np.zeros((2000, 3), dtype=np.uint8),
        )
        sizes = [len(voxel_downsample(cloud, v)) for v in (0.05, 0.1, 0.2)]
        self.assertEqual(sorted(sizes, reverse=True), sizes)

    def test_voxel_rejects_bad_size(self):
        self.assertRaises(
            FusionException, voxel_indices, np.zeros((1, 3)), 0.0
        )
        empty = ColoredCloud()
        self.assertIs(empty, voxel_downsample(empty, 0.01))
