import unittest

import numpy as np
from scipy.spatial import cKDTree

from longwall_fusion.config import ScannerGeometry
from longwall_fusion.geometry import Timestamp
from longwall_fusion.scanner import (
    angles_from_directions,
    directions_from_angles,
    generate_frame,
    generate_frames,
    rosette_angles,
    scan_direction,
)
from longwall_fusion.scene import empty, longwall, rect_target

SMALL = ScannerGeometry(points_per_frame=6000)


class ScannerTest(unittest.TestCase):
    def test_boresight_at_phase_zero(self):
        np.testing.assert_allclose(
            scan_direction(ScannerGeometry(), 0.0), [1, 0, 0], atol=1e-15
        )

    def test_cone_containment(self):
        geometry = ScannerGeometry()
        angles = rosette_angles(geometry, np.linspace(0, 1, 100_000))
        self.assertLessEqual(
            np.abs(angles[:, 0]).max(), geometry.hfov_rad / 2 + 1e-12
        )
        self.assertLessEqual(
            np.abs(angles[:, 1]).max(), geometry.vfov_rad / 2 + 1e-12
        )
        # inside the ellipse, not just the bounding box
        rho = (angles[:, 0] / (geometry.hfov_rad / 2)) ** 2 + (
            angles[:, 1] / (geometry.vfov_rad / 2)
        ) ** 2
        self.assertLessEqual(rho.max(), 1.0 + 1e-9)

    def test_pattern_fills_the_field(self):
        """One second of samples leaves no empty cell inside 90% scale."""
        geometry = ScannerGeometry()
        t = np.arange(720_000) / 720_000.0
        angles = rosette_angles(geometry, t)
        a = geometry.hfov_rad / 2
        b = geometry.vfov_rad / 2
        counts, az_edges, el_edges = np.histogram2d(
            angles[:, 0], angles[:, 1], bins=50, range=[[-a, a], [-b, b]]
        )
        az_c = 0.5 * (az_edges[1:] + az_edges[:-1])
        el_c = 0.5 * (el_edges[1:] + el_edges[:-1])
        az_g, el_g = np.meshgrid(az_c, el_c, indexing="ij")
        # whole cell inside the 0.9 ellipse
        half = np.array(
            [az_edges[1] - az_edges[0], el_edges[1] - el_edges[0]]
        )
        reach = ((np.abs(az_g) + half[0] / 2) / (0.9 * a)) ** 2 + (
            (np.abs(el_g) + half[1] / 2) / (0.9 * b)
        ) ** 2
        self.assertTrue(np.all(counts[reach <= 1.0] > 0))

    def test_direction_angle_round_trip(self):
        angles = np.array([[0.1, -0.2], [-0.5, 0.4], [0.0, 0.0]])
        np.testing.assert_allclose(
            angles_from_directions(directions_from_angles(angles)),
            angles,
            atol=1e-12,
        )

    def test_frame_contents(self):
        frame = generate_frame(longwall(), SMALL, 3, Timestamp(300_000_000))
        self.assertEqual(3, frame.frame_id)
        self.assertEqual(Timestamp(300_000_000), frame.t0)
        self.assertLessEqual(len(frame), SMALL.points_per_frame)
        # the longwall encloses the whole cone
        self.assertGreaterEqual(len(frame), 0.95 * SMALL.points_per_frame)
        self.assertTrue(np.all(frame.dt_ns >= 0))
        self.assertTrue(np.all(frame.dt_ns < SMALL.period_ns))
        self.assertTrue(np.all(np.diff(frame.dt_ns) >= 0))
        ranges = np.linalg.norm(frame.positions, axis=1)
        self.assertTrue(np.all(ranges >= SMALL.min_range_m))
        self.assertTrue(np.all(ranges <= SMALL.max_range_m))
        intensity = frame.intensity
        self.assertTrue(np.all((intensity >= 0) & (intensity <= 1)))

    def test_empty_scene(self):
        frame = generate_frame(empty(), SMALL, 0, Timestamp(0))
        self.assertEqual(0, len(frame))

    def test_deterministic(self):
        a = generate_frame(longwall(), SMALL, 5, Timestamp(0), jitter_seed=9)
        b = generate_frame(longwall(), SMALL, 5, Timestamp(0), jitter_seed=9)
        self.assertEqual(a, b)
        c = generate_frame(longwall(), SMALL, 5, Timestamp(0), jitter_seed=8)
        self.assertNotEqual(a, c)

    def test_points_lie_on_the_board(self):
        """Returns are reported along the commanded ray at the beam range."""
        frame = generate_frame(rect_target(5.0), SMALL, 0, Timestamp(0))
        self.assertGreater(len(frame), 0)
        ranges = np.linalg.norm(frame.positions, axis=1)
        # the jittered beam hits the plane x = 5
        np.testing.assert_allclose(ranges, 5.0 / frame.beams[:, 0])
        spread = np.linalg.norm(
            frame.positions - frame.beams * ranges[:, None], axis=1
        )
        self.assertLess(spread.max(), 5.0 * np.radians(0.28) * 4)

    def test_frame_cadence(self):
        frames = generate_frames(rect_target(), SMALL, 4, clock_offset_ms=2)
        stamps = [f.t0.nanos for f in frames]
        self.assertEqual(
            [2_000_000 + k * 100_000_000 for k in range(4)], stamps
        )
        self.assertEqual([0, 1, 2, 3], [f.frame_id for f in frames])

    def test_accumulated_spacing_at_three_metres(self):
        """One second on a board at 3 m leaves points under 10 mm apart."""
        frames = generate_frames(rect_target(3.0), ScannerGeometry(), 10)
        points = np.concatenate([f.positions for f in frames])[:, 1:]
        distances, _ = cKDTree(points).query(points, k=2)
        self.assertLess(distances[:, 1].mean(), 0.010)
