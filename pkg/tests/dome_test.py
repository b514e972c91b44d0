import unittest
from math import asin, atan2, radians, sin

import numpy as np

from longwall_fusion.config import DomeParams, ScannerGeometry
from longwall_fusion.dome import (
    CorrectionLut,
    build_correction_lut,
    correct_frame,
    dimensional_report,
    distort_frame,
    load_lut,
    refract_ray,
    relative_error,
    save_lut,
    trace_dome,
)
from longwall_fusion.exception import (
    FusionException,
    UndefinedReferenceException,
)
from longwall_fusion.geometry import Timestamp
from longwall_fusion.scanner import (
    PointCloudFrame,
    directions_from_angles,
    generate_frame,
    rosette_angles,
)
from longwall_fusion.scene import Plane, Scene, rect_target

CONCENTRIC = DomeParams(center_x_m=0.0, center_y_m=0.0)
SMALL = ScannerGeometry(points_per_frame=4000)


def in_fov_directions(count: int, seed: int) -> np.ndarray:
    t = np.random.default_rng(seed).uniform(0, 5, count)
    return directions_from_angles(rosette_angles(ScannerGeometry(), t))


def angle_between(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    cos = np.clip(np.einsum("ij,ij->i", a, b), -1.0, 1.0)
    return np.arccos(cos)


class RefractionTest(unittest.TestCase):
    def test_normal_incidence(self):
        for d in ([1.0, 0, 0], [0.6, 0.8, 0], [0.6, 0, -0.8]):
            _, exit_dir = refract_ray(CONCENTRIC, (0, 0, 0), d)
            np.testing.assert_allclose(exit_dir, d, atol=1e-12)

    def test_vacuum_dome(self):
        origin, exit_dir = refract_ray(
            DomeParams(refractive_index=1.0), (0, 0, 0), (1, 0, 0)
        )
        np.testing.assert_array_equal([1.0, 0.0, 0.0], exit_dir)
        self.assertGreater(origin[0], 0.0)

    def test_thirty_degree_incidence(self):
        """Deviation through both interfaces, by plane trigonometry."""
        r1 = CONCENTRIC.inner_radius_m
        r2 = CONCENTRIC.outer_radius_m
        n = CONCENTRIC.refractive_index
        i1 = radians(30.0)
        t = asin(sin(i1) / n)
        i2 = asin(r1 * sin(t) / r2)
        e = asin(n * sin(i2))
        expected = i1 - t + i2 - e

        origin, exit_dir = refract_ray(
            CONCENTRIC, (0.0, r1 * sin(i1), 0.0), (1.0, 0.0, 0.0)
        )
        self.assertAlmostEqual(
            expected, atan2(exit_dir[1], exit_dir[0]), places=12
        )
        self.assertAlmostEqual(r2, float(np.linalg.norm(origin)), places=12)
        self.assertAlmostEqual(0.0, exit_dir[2], places=12)

    def test_deviation_grows_with_incidence(self):
        r1 = CONCENTRIC.inner_radius_m
        offsets = np.linspace(0.0, 0.9 * r1, 40)
        origins = np.column_stack([np.zeros(40), offsets, np.zeros(40)])
        dirs = np.tile([1.0, 0.0, 0.0], (40, 1))
        traced = trace_dome(CONCENTRIC, origins, dirs)
        deviation = angle_between(traced.exit_dir, dirs)
        self.assertTrue(np.all(traced.transmitted))
        self.assertTrue(np.all(np.diff(deviation) > 0))

    def test_default_dome_transmits_the_whole_field(self):
        dirs = in_fov_directions(5000, 1)
        traced = trace_dome(DomeParams(), np.zeros(3), dirs)
        self.assertTrue(np.all(traced.transmitted))


class CorrectionLutTest(unittest.TestCase):
    @classmethod
    def setUpClass(cls) -> None:
        cls.dome = DomeParams()
        cls.lut = build_correction_lut(cls.dome)

    def test_entries_are_bounded(self):
        self.assertTrue(np.all(np.isfinite(self.lut.entries)))
        self.assertLess(np.abs(self.lut.entries).max(), radians(2.0))
        self.assertGreater(np.abs(self.lut.entries).max(), 0.0)
        az_lo, az_hi, el_lo, el_hi = self.lut.bounds
        geometry = ScannerGeometry()
        self.assertGreaterEqual(az_hi, geometry.hfov_rad / 2)
        self.assertLessEqual(az_lo, -geometry.hfov_rad / 2)
        self.assertGreaterEqual(el_hi, geometry.vfov_rad / 2)
        self.assertLessEqual(el_lo, -geometry.vfov_rad / 2)

    def test_boresight_offset_on_axis_dome(self):
        lut = build_correction_lut(DomeParams(center_y_m=0.0))
        delta, outside = lut.offsets(np.zeros((1, 2)))
        self.assertEqual(0, outside)
        np.testing.assert_allclose(delta, [[0.0, 0.0]], atol=1e-9)

    def test_vacuum_dome_gives_zero_table(self):
        lut = build_correction_lut(DomeParams(refractive_index=1.0))
        self.assertFalse(np.any(lut.entries))
        self.assertEqual(0.0, lut.path_offset_m)

    def test_rejects_bad_step(self):
        self.assertRaises(
            FusionException, build_correction_lut, self.dome, SMALL, 10.0
        )

    def test_matches_exact_inversion(self):
        commanded = in_fov_directions(10_000, 2)
        exact = trace_dome(self.dome, np.zeros(3), commanded).exit_dir
        corrected = self.lut.correct_directions(commanded)
        residual = angle_between(corrected, exact)
        self.assertLess(residual.max(), radians(self.dome.lut_step_deg) / 10)

    def test_zero_table_is_identity(self):
        frame = generate_frame(rect_target(3.0), SMALL, 0, Timestamp(0))
        self.assertIs(frame, correct_frame(frame, CorrectionLut.zeros()))

    def test_outside_points_are_clamped(self):
        frame = PointCloudFrame(
            0,
            Timestamp(0),
            np.array([[0.0, 0.0, 5.0], [5.0, 0.0, 0.0]]),
            np.ones(2),
            np.zeros(2, dtype=np.int64),
        )
        with self.assertLogs("longwall_fusion", "WARNING"):
            corrected = correct_frame(frame, self.lut)
        self.assertEqual(2, len(corrected))

    def test_distort_then_correct(self):
        """Corrected points land on the true beam hit within 2 mm."""
        dome = DomeParams(scatter_gain=1.0)
        lut = build_correction_lut(dome)
        wall = Scene((Plane(0, 5.0, (-10, -10), (10, 10)),))
        dirs = in_fov_directions(4000, 3)
        frame = PointCloudFrame(
            0,
            Timestamp(0),
            dirs * 5.0,
            np.ones(len(dirs)),
            np.zeros(len(dirs), dtype=np.int64),
        )
        distorted = distort_frame(frame, dome, wall)
        self.assertEqual(len(frame), len(distorted))
        traced = trace_dome(dome, np.zeros(3), dirs)
        hit_t = (5.0 - traced.exit_origin[:, 0]) / traced.exit_dir[:, 0]
        truth = traced.exit_origin + traced.exit_dir * hit_t[:, None]
        corrected = correct_frame(distorted, lut)
        residual = np.linalg.norm(corrected.positions - truth, axis=1)
        self.assertLess(residual.max(), 0.002)

    def test_vacuum_distortion_is_identity(self):
        frame = generate_frame(rect_target(3.0), SMALL, 0, Timestamp(0))
        distorted = distort_frame(
            frame, DomeParams(refractive_index=1.0), rect_target(3.0)
        )
        self.assertEqual(frame, distorted)

    def test_lut_file(self):
        data = save_lut(self.lut)
        self.assertEqual(b"DLUT", data[:4])
        loaded = load_lut(data, self.dome.path_offset_m)
        np.testing.assert_allclose(
            self.lut.entries, loaded.entries, atol=1e-7
        )
        np.testing.assert_allclose(self.lut.az_grid, loaded.az_grid)
        self.assertRaises(FusionException, load_lut, b"XLUT" + data[4:])
        self.assertRaises(FusionException, load_lut, data[:-4])


class RelativeErrorTest(unittest.TestCase):
    def test_arithmetic(self):
        self.assertAlmostEqual(1.0, relative_error(2.02, 2.00))
        self.assertEqual(0.0, relative_error(3.0, 3.0))
        self.assertRaises(
            UndefinedReferenceException, relative_error, 1.0, 0.0
        )


class DimensionalReportTest(unittest.TestCase):
    """Twenty frames of the 1 x 1 m board at 2 to 5 m."""

    @classmethod
    def setUpClass(cls) -> None:
        dome = DomeParams()
        cls.raw = dimensional_report(dome)
        cls.corrected = dimensional_report(
            dome, lut=build_correction_lut(dome)
        )

    def test_errors_are_positive(self):
        for row in self.raw.rows:
            self.assertEqual(20, row.frames)
            for k in range(3):
                self.assertGreater(row.error_pct[k], 0.0)

    def test_height_error_dominates_at_five_metres(self):
        row = self.raw.row(5.0)
        self.assertGreater(row.error_pct.height, row.error_pct.width)
        self.assertGreater(row.error_pct.height, 0.0)
        self.assertLessEqual(row.error_pct.height, 2.5)

    def test_range_error_is_flat(self):
        ranges = [r.error_pct.range for r in self.raw.rows]
        self.assertLess(max(ranges) - min(ranges), 0.3)

    def test_height_spread_grows_with_distance(self):
        self.assertGreater(
            self.raw.row(5.0).std_pct.height,
            self.raw.row(2.0).std_pct.height,
        )

    def test_stored_errors_are_reproducible(self):
        for row in self.raw.rows:
            for k in range(3):
                self.assertAlmostEqual(
                    relative_error(row.m_e[k], row.m_r[k]),
                    row.error_pct[k],
                    delta=1e-9,
                )

    def test_correction_gate(self):
        raw = self.raw.row(5.0)
        fixed = self.corrected.row(5.0)
        self.assertTrue(self.corrected.corrected)
        self.assertLess(abs(fixed.error_pct.height), 1.0)
        self.assertLess(abs(fixed.error_pct.width), 1.0)
        self.assertLessEqual(
            abs(fixed.error_pct.height), 0.6 * raw.error_pct.height
        )
        self.assertLessEqual(
            abs(fixed.error_pct.width), 0.6 * raw.error_pct.width
        )

    def test_vacuum_dome_has_no_error(self):
        report = dimensional_report(
            DomeParams(refractive_index=1.0), distances=(3.0,), frames=3
        )
        for k in range(3):
            self.assertLess(abs(report.rows[0].error_pct[k]), 0.2)

    def test_csv(self):
        lines = self.raw.to_csv().splitlines()
        self.assertEqual(5, len(lines))
        self.assertTrue(lines[0].startswith("distance_m,corrected,height_e"))
        self.assertTrue(lines[4].startswith("5.0,0,"))
