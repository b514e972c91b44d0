"""
Field-of-view overlap between the camera frustum and the LiDAR cone.

Cross sections are taken on a plane at distance d in front of both sensors,
in camera image axes (horizontal, vertical). The camera footprint is a
rectangle, the LiDAR footprint an ellipse whose centre is displaced by the
in-plane baseline. In the rotated alignment the LiDAR is turned 90 degrees
about the boresight, which swaps the ellipse axes.
"""
from dataclasses import dataclass
from math import asin, pi, radians, sqrt, tan
from typing import List, NamedTuple, Sequence, Tuple

import numpy as np
from typing_extensions import Literal

from .exception import FusionException
from .geometry import Point3
from .log import logger

Alignment = Literal["rotated", "conventional"]

MIN_SAMPLES = 100_000
OVERLAP_DISTANCES_M = (0.16, 1.0, 3.0)


@dataclass(frozen=True)
class FovGeometry:
    cam_hfov_deg: float = 84.8
    cam_vfov_deg: float = 65.3
    lidar_hfov_deg: float = 70.4
    lidar_vfov_deg: float = 77.2
    # camera centre minus LiDAR centre; y is horizontal, z vertical
    baseline: Point3 = Point3(0.0, 0.05, 0.0)
    alignment: Alignment = "rotated"

    def __post_init__(self) -> None:
        for name in (
            "cam_hfov_deg",
            "cam_vfov_deg",
            "lidar_hfov_deg",
            "lidar_vfov_deg",
        ):
            value = getattr(self, name)
            if not 0.0 < value < 180.0:
                raise FusionException(
                    "{0}={1} is out of range (0, 180)".format(name, value)
                )
        if self.alignment not in ("rotated", "conventional"):
            raise FusionException(
                "unknown alignment {0!r}".format(self.alignment)
            )


class CrossSection(NamedTuple):
    rect_half: Tuple[float, float]
    ellipse_semi: Tuple[float, float]
    center_offset: Tuple[float, float]


def cross_sections(g: FovGeometry, d: float) -> CrossSection:
    if d <= 0:
        raise FusionException("distance must be positive, got {0}".format(d))
    rect = (
        d * tan(radians(g.cam_hfov_deg) / 2.0),
        d * tan(radians(g.cam_vfov_deg) / 2.0),
    )
    ellipse = (
        d * tan(radians(g.lidar_hfov_deg) / 2.0),
        d * tan(radians(g.lidar_vfov_deg) / 2.0),
    )
    if g.alignment == "rotated":
        ellipse = (ellipse[1], ellipse[0])
    # LiDAR centre relative to the camera centre
    offset = (-g.baseline.y, -g.baseline.z)
    return CrossSection(rect, ellipse, offset)


class OverlapEstimate(NamedTuple):
    fraction: float
    stderr: float


def _unit_disk(n_samples: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    r = np.sqrt(rng.random(n_samples))
    theta = 2.0 * np.pi * rng.random(n_samples)
    return np.column_stack([r * np.cos(theta), r * np.sin(theta)])


def overlap_fraction(
    g: FovGeometry, d: float, n_samples: int = 200_000, seed: int = 0
) -> OverlapEstimate:
    """Monte Carlo share of the LiDAR ellipse inside the camera rectangle."""
    if n_samples < MIN_SAMPLES:
        raise FusionException(
            "n_samples must be at least {0}".format(MIN_SAMPLES)
        )
    section = cross_sections(g, d)
    points = _unit_disk(n_samples, seed) * np.asarray(section.ellipse_semi)
    points += np.asarray(section.center_offset)
    inside = (np.abs(points[:, 0]) <= section.rect_half[0]) & (
        np.abs(points[:, 1]) <= section.rect_half[1]
    )
    fraction = float(inside.mean())
    stderr = sqrt(fraction * (1.0 - fraction) / n_samples)
    return OverlapEstimate(fraction, stderr)


def _disk_inside(rho: float) -> float:
    """Share of a unit disk with |coordinate| <= rho on one axis."""
    if rho >= 1.0:
        return 1.0
    return (2.0 / pi) * (asin(rho) + rho * sqrt(1.0 - rho * rho))


def overlap_asymptote(g: FovGeometry) -> float:
    """Overlap as d grows without bound, where the baseline vanishes."""
    section = cross_sections(g, 1.0)
    result = 1.0
    for half, semi in zip(section.rect_half, section.ellipse_semi):
        result *= _disk_inside(half / semi)
    return result


class OverlapRow(NamedTuple):
    d_m: float
    fraction: float
    stderr: float


@dataclass(frozen=True)
class OverlapCurve:
    rows: Tuple[OverlapRow, ...]

    def to_csv(self) -> str:
        lines = ["d_m,fraction,stderr"]
        for row in self.rows:
            lines.append(
                "{0},{1:.6f},{2:.6f}".format(row.d_m, row.fraction, row.stderr)
            )
        return "\n".join(lines) + "\n"


def overlap_curve(
    g: FovGeometry,
    distances: Sequence[float] = OVERLAP_DISTANCES_M,
    n_samples: int = 200_000,
    seed: int = 0,
) -> OverlapCurve:
    if any(d <= 0 for d in distances) or list(distances) != sorted(distances):
        raise FusionException("distances must be positive and sorted")
    rows: List[OverlapRow] = []
    for d in distances:
        estimate = overlap_fraction(g, d, n_samples, seed)
        rows.append(OverlapRow(float(d), *estimate))
    return OverlapCurve(tuple(rows))


def distance_to_reach(
    g: FovGeometry,
    target: float,
    lo_m: float = 0.01,
    hi_m: float = 10.0,
    tolerance_m: float = 0.01,
    n_samples: int = 200_000,
    seed: int = 0,
) -> float:
    """
    Smallest distance (to tolerance_m) at which the overlap reaches target.

    The same seed is used at every distance so the estimate is monotone in d.
    """
    if overlap_fraction(g, hi_m, n_samples, seed).fraction < target:
        raise FusionException(
            "overlap never reaches {0} within {1} m".format(target, hi_m)
        )
    while hi_m - lo_m > tolerance_m:
        mid = 0.5 * (lo_m + hi_m)
        if overlap_fraction(g, mid, n_samples, seed).fraction >= target:
            hi_m = mid
        else:
            lo_m = mid
    logger.debug(
        "distance_to_reach(alignment=%s, target=%s) = %.3f",
        g.alignment,
        target,
        hi_m,
    )
    return hi_m
