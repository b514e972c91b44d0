import unittest
from dataclasses import replace
from math import radians, tan

from longwall_fusion.exception import FusionException
from longwall_fusion.fov import (
    FovGeometry,
    cross_sections,
    distance_to_reach,
    overlap_asymptote,
    overlap_curve,
    overlap_fraction,
)
from longwall_fusion.geometry import Point3

ROTATED = FovGeometry()
CONVENTIONAL = FovGeometry(alignment="conventional")


class CrossSectionTest(unittest.TestCase):
    def test_square_camera(self):
        section = cross_sections(FovGeometry(90.0, 90.0), 1.0)
        self.assertAlmostEqual(1.0, section.rect_half[0])
        self.assertAlmostEqual(1.0, section.rect_half[1])

    def test_defaults(self):
        section = cross_sections(ROTATED, 1.0)
        self.assertAlmostEqual(tan(radians(42.4)), section.rect_half[0])
        self.assertAlmostEqual(0.912, section.rect_half[0], delta=0.002)
        self.assertAlmostEqual(0.641, section.rect_half[1], delta=0.002)
        # the LiDAR's 77.2 degree axis lies along image rows
        self.assertAlmostEqual(0.798, section.ellipse_semi[0], delta=0.002)
        self.assertAlmostEqual(0.705, section.ellipse_semi[1], delta=0.002)
        self.assertEqual((-0.05, 0.0), section.center_offset)
        plain = cross_sections(CONVENTIONAL, 1.0)
        self.assertEqual(
            section.ellipse_semi[::-1], tuple(plain.ellipse_semi)
        )

    def test_similarity(self):
        one = cross_sections(ROTATED, 1.0)
        two = cross_sections(ROTATED, 2.0)
        for a, b in zip(
            one.rect_half + one.ellipse_semi, two.rect_half + two.ellipse_semi
        ):
            self.assertAlmostEqual(2.0 * a, b)

    def test_validation(self):
        self.assertRaises(FusionException, cross_sections, ROTATED, 0.0)
        self.assertRaises(FusionException, FovGeometry, 180.0)
        self.assertRaises(FusionException, FovGeometry, 84.8, -1.0)
        self.assertRaises(FusionException, FovGeometry, alignment="tilted")


class OverlapTest(unittest.TestCase):
    def test_close_range(self):
        estimate = overlap_fraction(ROTATED, 0.16)
        self.assertGreaterEqual(estimate.fraction, 0.88)
        self.assertLessEqual(estimate.fraction, 0.92)
        self.assertGreater(estimate.stderr, 0.0)
        self.assertLess(estimate.stderr, 0.002)

    def test_quarter_metre(self):
        fraction = overlap_fraction(ROTATED, 0.25).fraction
        self.assertGreaterEqual(fraction, 0.94)

    def test_beyond_the_baseline(self):
        # from 1 m on the baseline no longer clips and only rows are cut
        asymptote = overlap_asymptote(ROTATED)
        for d in (1.0, 3.0):
            fraction = overlap_fraction(ROTATED, d).fraction
            self.assertAlmostEqual(asymptote, fraction, delta=0.003)
            self.assertGreaterEqual(fraction, 0.965)

    def test_deterministic(self):
        self.assertEqual(
            overlap_fraction(ROTATED, 0.5, seed=9),
            overlap_fraction(ROTATED, 0.5, seed=9),
        )

    def test_ellipse_inside_rectangle(self):
        g = FovGeometry(120.0, 120.0, 40.0, 40.0, Point3(0, 0, 0))
        self.assertEqual(1.0, overlap_fraction(g, 1.0).fraction)
        self.assertEqual(1.0, overlap_asymptote(g))

    def test_mirrored_baseline(self):
        mirrored = replace(ROTATED, baseline=Point3(0.0, -0.05, 0.0))
        self.assertAlmostEqual(
            overlap_fraction(ROTATED, 0.2).fraction,
            overlap_fraction(mirrored, 0.2, seed=1).fraction,
            delta=0.003,
        )

    def test_sample_floor(self):
        self.assertRaises(
            FusionException, overlap_fraction, ROTATED, 1.0, 99_999
        )


class AsymptoteTest(unittest.TestCase):
    def test_conventional(self):
        asymptote = overlap_asymptote(CONVENTIONAL)
        self.assertGreaterEqual(asymptote, 0.89)
        self.assertLessEqual(asymptote, 0.91)

    def test_rotated_gains_coverage(self):
        rotated = overlap_asymptote(ROTATED)
        self.assertAlmostEqual(0.968, rotated, delta=0.001)
        self.assertGreaterEqual(
            rotated, overlap_asymptote(CONVENTIONAL) + 0.06
        )

    def test_monte_carlo_agrees_far_away(self):
        for g in (ROTATED, CONVENTIONAL):
            self.assertAlmostEqual(
                overlap_asymptote(g),
                overlap_fraction(g, 100.0).fraction,
                delta=0.005,
            )


class OverlapCurveTest(unittest.TestCase):
    def test_default_distances(self):
        curve = overlap_curve(ROTATED)
        self.assertEqual([0.16, 1.0, 3.0], [row.d_m for row in curve.rows])
        lines = curve.to_csv().splitlines()
        self.assertEqual("d_m,fraction,stderr", lines[0])
        self.assertEqual(4, len(lines))
        self.assertTrue(lines[1].startswith("0.16,0.8"))

    def test_monotone(self):
        distances = [0.1 + 0.1 * k for k in range(50)]
        fractions = [
            row.fraction for row in overlap_curve(ROTATED, distances).rows
        ]
        for a, b in zip(fractions, fractions[1:]):
            self.assertLessEqual(a, b)

    def test_validation(self):
        self.assertRaises(
            FusionException, overlap_curve, ROTATED, [1.0, 0.5]
        )
        self.assertRaises(FusionException, overlap_curve, ROTATED, [0.0])

    def test_distance_to_reach(self):
        d = distance_to_reach(ROTATED, 0.95)
        self.assertGreaterEqual(d, 0.22)
        self.assertLessEqual(d, 0.30)
        self.assertGreaterEqual(overlap_fraction(ROTATED, d).fraction, 0.95)

    def test_conventional_reach(self):
        target = overlap_asymptote(CONVENTIONAL) - 0.002
        d = distance_to_reach(CONVENTIONAL, target)
        self.assertGreater(d, 0.15)
        self.assertLess(d, 0.30)

    def test_unreachable_target(self):
        self.assertRaises(
            FusionException, distance_to_reach, CONVENTIONAL, 0.95
        )
