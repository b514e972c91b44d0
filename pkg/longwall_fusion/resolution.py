"""
Gap-board resolution analysis.

Face points of each row are projected onto the row axis (y). A gap counts as
resolved when the empty interval straddling its centre in the accumulated
cloud is wider than twice the point spacing the scanner achieves on that row
in a single sweep.
"""
from dataclasses import dataclass
from typing import List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from .config import ScannerGeometry
from .exception import InsufficientDataException
from .log import logger
from .scanner import generate_frames
from .scene import Scene, gap_board

SPACING_FACTOR = 2.0
MIN_FACE_POINTS = 20


class RowResolution(NamedTuple):
    row: str
    threshold_m: float
    gaps_mm: Tuple[int, ...]
    resolved: Tuple[bool, ...]

    @property
    def smallest_resolved_mm(self) -> Optional[int]:
        hits = [g for g, ok in zip(self.gaps_mm, self.resolved) if ok]
        return min(hits) if hits else None


@dataclass(frozen=True)
class GapBoardReport:
    distance_m: float
    rows: Tuple[RowResolution, ...]

    def row(self, name: str) -> RowResolution:
        for r in self.rows:
            if r.row == name:
                return r
        raise KeyError(name)

    def to_csv(self) -> str:
        lines = ["row,gap_mm,resolved,threshold_mm"]
        for r in self.rows:
            for gap, ok in zip(r.gaps_mm, r.resolved):
                lines.append(
                    "{0},{1},{2},{3:.3f}".format(
                        r.row, gap, int(ok), r.threshold_m * 1e3
                    )
                )
        return "\n".join(lines) + "\n"


def sweep_spacing(face_yz: Sequence[np.ndarray]) -> float:
    """
    Median over sweeps of sqrt(face area / points in the sweep).

    The face area is the (y, z) bounding box of all sweeps together.
    """
    counts = np.array([len(f) for f in face_yz])
    if counts.sum() < 2:
        raise InsufficientDataException("need at least 2 face points")
    merged = np.concatenate(face_yz)
    extent = merged.max(axis=0) - merged.min(axis=0)
    area = float(extent[0] * extent[1])
    return float(np.median(np.sqrt(area / counts[counts > 0])))


def row_resolution(
    name: str,
    sweeps: Sequence[np.ndarray],
    face_x: float,
    z_range: Tuple[float, float],
    gaps: Sequence[Tuple[float, float]],
    gaps_mm: Sequence[int],
    depth_tol_m: float = 0.02,
) -> RowResolution:
    """Resolution of one row from per-sweep LiDAR positions."""
    faces = []
    for positions in sweeps:
        on_face = (
            (np.abs(positions[:, 0] - face_x) <= depth_tol_m)
            & (positions[:, 2] >= z_range[0])
            & (positions[:, 2] <= z_range[1])
        )
        faces.append(positions[on_face][:, 1:3])
    total = sum(len(f) for f in faces)
    if total < MIN_FACE_POINTS:
        raise InsufficientDataException(
            "row {0}: only {1} face points".format(name, total)
        )
    threshold = SPACING_FACTOR * sweep_spacing(faces)
    ys = np.sort(np.concatenate([f[:, 0] for f in faces]))
    resolved: List[bool] = []
    for g0, g1 in gaps:
        idx = int(np.searchsorted(ys, 0.5 * (g0 + g1)))
        if idx == 0 or idx == len(ys):
            resolved.append(False)
            continue
        resolved.append(bool(ys[idx] - ys[idx - 1] > threshold))
    return RowResolution(name, threshold, tuple(gaps_mm), tuple(resolved))


def analyse_gap_board(
    scene: Scene, sweeps: Sequence[np.ndarray], distance_m: float
) -> GapBoardReport:
    face_x = scene.extras["proud_face_x"]
    rows = []
    for name, (z_range, gaps, gaps_mm) in scene.extras["rows"].items():
        rows.append(
            row_resolution(name, sweeps, face_x, z_range, gaps, gaps_mm)
        )
    return GapBoardReport(distance_m, tuple(rows))


def gap_board_report(
    distance_m: float = 3.0,
    geometry: ScannerGeometry = ScannerGeometry(),
    window_s: float = 1.0,
    seed: int = 0,
) -> GapBoardReport:
    """Scan the board for window_s and report per-row resolution."""
    scene = gap_board(distance_m)
    count = max(1, int(round(window_s * geometry.rate_hz)))
    frames = generate_frames(scene, geometry, count, jitter_seed=seed)
    report = analyse_gap_board(
        scene, [f.positions for f in frames], distance_m
    )
    for r in report.rows:
        logger.info(
            "gap board %s row at %.2f m: threshold %.1f mm, smallest "
            "resolved %s mm",
            r.row,
            distance_m,
            r.threshold_m * 1e3,
            r.smallest_resolved_mm,
        )
    return report
