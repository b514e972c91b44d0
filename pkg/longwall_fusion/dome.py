"""
Dome refraction model and lookup-table correction.

The enclosure window is a spherical polycarbonate shell. A beam leaving the
LiDAR is refracted at the inner (air to polycarbonate) and outer
(polycarbonate to air) surfaces. The driver still reports the point along
the commanded direction at the time-of-flight range, which inflates the
reconstructed geometry; the correction table maps each commanded direction
back onto the direction the beam actually left the dome in.
"""
import struct
from dataclasses import dataclass, field
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .config import DomeParams, ScannerGeometry
from .exception import (
    FusionException,
    InsufficientDataException,
    UndefinedReferenceException,
)
from .geometry import Timestamp
from .log import logger
from .scanner import (
    PointCloudFrame,
    angles_from_directions,
    directions_from_angles,
    generate_frame,
)
from .scene import Scene, intersect, rect_target

LUT_MAGIC = b"DLUT"
LUT_VERSION = 1
_LUT_HEADER = struct.Struct("<4sHHH4d")
MAX_LUT_OFFSET_RAD = np.radians(2.0)


class DomeTrace(NamedTuple):
    inner: np.ndarray
    exit_origin: np.ndarray
    exit_dir: np.ndarray
    transmitted: np.ndarray


def _sphere_exit(
    origins: np.ndarray, dirs: np.ndarray, center: np.ndarray, radius: float
) -> np.ndarray:
    """Forward intersection of rays starting inside a sphere."""
    m = origins - center
    b = np.einsum("ij,ij->i", m, dirs)
    c = np.einsum("ij,ij->i", m, m) - radius * radius
    return -b + np.sqrt(np.maximum(b * b - c, 0.0))


def snell(
    dirs: np.ndarray, normals: np.ndarray, eta: float
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Vector Snell refraction.

    normals point back toward the incident side; eta is n1 / n2. Returns
    the refracted directions and a mask that is False on total internal
    reflection.
    """
    cos_i = -np.einsum("ij,ij->i", dirs, normals)
    sin2_t = eta * eta * (1.0 - cos_i * cos_i)
    ok = sin2_t <= 1.0
    cos_t = np.sqrt(np.clip(1.0 - sin2_t, 0.0, None))
    out = eta * dirs + (eta * cos_i - cos_t)[:, None] * normals
    out /= np.linalg.norm(out, axis=1, keepdims=True)
    return out, ok


def trace_dome(
    dome: DomeParams, origins: np.ndarray, dirs: np.ndarray
) -> DomeTrace:
    """Trace rays from inside the dome through both spherical interfaces."""
    dirs = np.atleast_2d(np.asarray(dirs, dtype=np.float64))
    origins = np.broadcast_to(
        np.asarray(origins, dtype=np.float64), dirs.shape
    )
    center = np.asarray(dome.center_offset, dtype=np.float64)
    n = dome.refractive_index

    t1 = _sphere_exit(origins, dirs, center, dome.inner_radius_m)
    inner = origins + dirs * t1[:, None]
    normal1 = (inner - center) / dome.inner_radius_m
    inside_dir, ok1 = snell(dirs, -normal1, 1.0 / n)

    t2 = _sphere_exit(inner, inside_dir, center, dome.outer_radius_m)
    outer = inner + inside_dir * t2[:, None]
    normal2 = (outer - center) / dome.outer_radius_m
    exit_dir, ok2 = snell(inside_dir, -normal2, n)
    return DomeTrace(inner, outer, exit_dir, ok1 & ok2)


def refract_ray(
    dome: DomeParams, origin: Sequence[float], direction: Sequence[float]
) -> Optional[Tuple[np.ndarray, np.ndarray]]:
    """
    Exit origin and direction of one ray after both dome interfaces.

    Returns None when the ray is totally internally reflected.
    """
    if dome.refractive_index == 1.0:
        d = np.asarray(direction, dtype=np.float64)
        traced = trace_dome(dome, np.asarray(origin), d)
        return traced.exit_origin[0], d.copy()
    traced = trace_dome(dome, np.asarray(origin), np.asarray(direction))
    if not traced.transmitted[0]:
        return None
    return traced.exit_origin[0], traced.exit_dir[0]


def _scatter(
    frame: PointCloudFrame,
    beams: np.ndarray,
    dome: DomeParams,
    geometry: ScannerGeometry,
    seed: int,
) -> np.ndarray:
    """Extra beam spread from the window (divergence times scatter_gain)."""
    if dome.scatter_gain <= 1.0 or len(beams) == 0:
        return beams
    extra = np.sqrt(dome.scatter_gain ** 2 - 1.0)
    sigma = extra * 0.5 * np.array([geometry.div_h_rad, geometry.div_v_rad])
    rng = np.random.default_rng([seed, frame.frame_id, 0x0D0E])
    angles = angles_from_directions(beams)
    return directions_from_angles(
        angles + rng.normal(size=angles.shape) * sigma
    )


def distort_frame(
    frame: PointCloudFrame,
    dome: DomeParams,
    scene: Scene,
    geometry: ScannerGeometry = ScannerGeometry(),
    scene_time_s: Optional[float] = None,
    seed: int = 0,
) -> PointCloudFrame:
    """
    Observe a frame through the dome.

    Each beam is re-cast through the shell and re-intersected with the
    scene; the point is reported along the commanded direction at the path
    length plus the constant optical offset thickness * (n - 1). Beams that
    miss after refraction are dropped.
    """
    if dome.refractive_index == 1.0 or len(frame) == 0:
        return frame
    ranges = np.linalg.norm(frame.positions, axis=1)
    nominal = frame.positions / ranges[:, None]
    beams = nominal if frame.beams is None else frame.beams
    beams = _scatter(frame, beams, dome, geometry, seed)

    traced = trace_dome(dome, np.zeros(3), beams)
    if scene_time_s is None:
        scene_time_s = frame.t0.seconds + 0.5 / geometry.rate_hz
    hits = intersect(scene, traced.exit_origin, traced.exit_dir, scene_time_s)
    path = (
        np.linalg.norm(traced.inner, axis=1)
        + np.linalg.norm(traced.exit_origin - traced.inner, axis=1)
        + hits.t
        + dome.path_offset_m
    )
    keep = (
        traced.transmitted
        & np.isfinite(hits.t)
        & (path >= geometry.min_range_m)
        & (path <= geometry.max_range_m)
    )
    logger.debug(
        "distort_frame(frame_id=%i, points=%i, kept=%i)",
        frame.frame_id,
        len(frame),
        int(keep.sum()),
    )
    return PointCloudFrame(
        frame.frame_id,
        frame.t0,
        nominal[keep] * path[keep, None],
        frame.intensity[keep],
        frame.dt_ns[keep],
        traced.exit_dir[keep],
    )


@dataclass(frozen=True, eq=False)
class CorrectionLut:
    """
    CorrectionLut.

    entries[i, j] = (d_az, d_el) in radians at (az_grid[i], el_grid[j]).
    Subtracting the bilinearly interpolated offset from a commanded
    direction gives the direction the beam left the dome in.
    """

    az_grid: np.ndarray
    el_grid: np.ndarray
    entries: np.ndarray
    path_offset_m: float = 0.0
    _interp: List[RegularGridInterpolator] = field(
        default_factory=list, repr=False
    )

    def __post_init__(self) -> None:
        for k in range(2):
            self._interp.append(
                RegularGridInterpolator(
                    (self.az_grid, self.el_grid),
                    self.entries[:, :, k],
                    method="linear",
                )
            )

    @property
    def bounds(self) -> Tuple[float, float, float, float]:
        return (
            float(self.az_grid[0]),
            float(self.az_grid[-1]),
            float(self.el_grid[0]),
            float(self.el_grid[-1]),
        )

    def offsets(self, angles: np.ndarray) -> Tuple[np.ndarray, int]:
        """Interpolated offsets for (N, 2) angles and the clamped count."""
        az_lo, az_hi, el_lo, el_hi = self.bounds
        clamped = np.column_stack(
            [
                np.clip(angles[:, 0], az_lo, az_hi),
                np.clip(angles[:, 1], el_lo, el_hi),
            ]
        )
        outside = int(np.count_nonzero(np.any(clamped != angles, axis=1)))
        return (
            np.column_stack([f(clamped) for f in self._interp]),
            outside,
        )

    def correct_directions(self, dirs: np.ndarray) -> np.ndarray:
        angles = angles_from_directions(dirs)
        delta, _ = self.offsets(angles)
        return directions_from_angles(angles - delta)

    @classmethod
    def zeros(
        cls,
        geometry: ScannerGeometry = ScannerGeometry(),
        step_deg: float = 0.5,
    ) -> "CorrectionLut":
        az, el = _grid(geometry, step_deg)
        return cls(az, el, np.zeros((len(az), len(el), 2)))


def _grid(
    geometry: ScannerGeometry, step_deg: float
) -> Tuple[np.ndarray, np.ndarray]:
    step = np.radians(step_deg)
    # one extra node past the edge covers jittered beams
    az_half = 0.5 * geometry.hfov_rad + step
    el_half = 0.5 * geometry.vfov_rad + step
    n_az = int(np.ceil(2 * az_half / step)) + 1
    n_el = int(np.ceil(2 * el_half / step)) + 1
    return (
        np.linspace(-az_half, az_half, n_az),
        np.linspace(-el_half, el_half, n_el),
    )


def build_correction_lut(
    dome: DomeParams,
    geometry: ScannerGeometry = ScannerGeometry(),
    grid_step_deg: Optional[float] = None,
) -> CorrectionLut:
    """Trace every grid direction through the dome and store its offset."""
    step_deg = dome.lut_step_deg if grid_step_deg is None else grid_step_deg
    if not 0.05 < step_deg < 5.0:
        raise FusionException(
            "grid_step_deg must lie in (0.05, 5), got {0}".format(step_deg)
        )
    az, el = _grid(geometry, step_deg)
    mesh = np.stack(np.meshgrid(az, el, indexing="ij"), axis=-1)
    angles = mesh.reshape(-1, 2)
    if dome.refractive_index == 1.0:
        entries = np.zeros((len(az), len(el), 2))
    else:
        traced = trace_dome(dome, np.zeros(3), directions_from_angles(angles))
        if not np.all(traced.transmitted):
            raise FusionException(
                "total internal reflection inside the scanner field of view"
            )
        exit_angles = angles_from_directions(traced.exit_dir)
        entries = (angles - exit_angles).reshape(len(az), len(el), 2)
    logger.debug(
        "build_correction_lut(step_deg=%s, nodes=%ix%i, max_offset=%e)",
        step_deg,
        len(az),
        len(el),
        float(np.max(np.abs(entries))),
    )
    return CorrectionLut(az, el, entries, dome.path_offset_m)


def correct_frame(
    frame: PointCloudFrame, lut: CorrectionLut
) -> PointCloudFrame:
    """
    Re-express every point along its corrected direction.

    The range loses the constant path offset; the point count never
    changes. Directions outside the table use the nearest edge node.
    """
    if len(frame) == 0:
        return frame
    ranges = np.linalg.norm(frame.positions, axis=1)
    angles = angles_from_directions(frame.positions)
    delta, outside = lut.offsets(angles)
    if outside:
        logger.warning(
            "correct_frame: %i of %i points outside the LUT, clamped",
            outside,
            len(frame),
        )
    if not np.any(delta) and lut.path_offset_m == 0.0:
        return frame
    dirs = directions_from_angles(angles - delta)
    corrected = dirs * (ranges - lut.path_offset_m)[:, None]
    return frame.with_positions(corrected)


def save_lut(lut: CorrectionLut) -> bytes:
    """Serialise as DLUT v1 (little-endian, float32 entries)."""
    header = _LUT_HEADER.pack(
        LUT_MAGIC,
        LUT_VERSION,
        len(lut.az_grid),
        len(lut.el_grid),
        *lut.bounds,
    )
    return header + lut.entries.astype("<f4").tobytes(order="C")


def load_lut(data: bytes, path_offset_m: float = 0.0) -> CorrectionLut:
    if len(data) < _LUT_HEADER.size:
        raise FusionException("LUT file truncated")
    magic, version, n_az, n_el, az0, az1, el0, el1 = _LUT_HEADER.unpack_from(
        data
    )
    if magic != LUT_MAGIC:
        raise FusionException("bad LUT magic {0!r}".format(magic))
    if version != LUT_VERSION:
        raise FusionException("unsupported LUT version {0}".format(version))
    expected = _LUT_HEADER.size + n_az * n_el * 2 * 4
    if len(data) != expected:
        raise FusionException(
            "LUT length mismatch: expected {0}, got {1}".format(
                expected, len(data)
            )
        )
    entries = np.frombuffer(
        data, dtype="<f4", offset=_LUT_HEADER.size
    ).reshape(n_az, n_el, 2)
    return CorrectionLut(
        np.linspace(az0, az1, n_az),
        np.linspace(el0, el1, n_el),
        entries.astype(np.float64),
        path_offset_m,
    )


def relative_error(m_e: float, m_r: float) -> float:
    """Relative error of an enclosure measurement against the reference, %."""
    if m_r == 0:
        raise UndefinedReferenceException(
            "relative error is undefined for a zero reference"
        )
    return (m_e - m_r) / m_r * 100.0


class Dimensions(NamedTuple):
    height: float
    width: float
    range: float


class DistanceRow(NamedTuple):
    distance_m: float
    m_e: Dimensions
    m_r: Dimensions
    error_pct: Dimensions
    std_pct: Dimensions
    frames: int


@dataclass(frozen=True)
class DimensionalReport:
    rows: Tuple[DistanceRow, ...]
    corrected: bool = False

    def row(self, distance_m: float) -> DistanceRow:
        for r in self.rows:
            if abs(r.distance_m - distance_m) < 1e-9:
                return r
        raise KeyError(distance_m)

    def to_csv(self) -> str:
        lines = [
            "distance_m,corrected,height_e,height_r,height_err_pct,"
            "height_std_pct,width_e,width_r,width_err_pct,width_std_pct,"
            "range_e,range_r,range_err_pct,range_std_pct"
        ]
        for r in self.rows:
            cells = [repr(r.distance_m), str(int(self.corrected))]
            for k in range(3):
                cells += [
                    "{0:.6f}".format(r.m_e[k]),
                    "{0:.6f}".format(r.m_r[k]),
                    "{0:.6f}".format(r.error_pct[k]),
                    "{0:.6f}".format(r.std_pct[k]),
                ]
            lines.append(",".join(cells))
        return "\n".join(lines) + "\n"


def _measure(
    positions: np.ndarray, scene: Scene, margin: Tuple[float, float, float]
) -> Optional[Dimensions]:
    box = scene.target
    lo = np.asarray(box.lo) - margin
    hi = np.asarray(box.hi) + margin
    inside = np.all((positions >= lo) & (positions <= hi), axis=1)
    cropped = positions[inside]
    if len(cropped) < 50:
        return None
    z1, z99 = np.percentile(cropped[:, 2], [1, 99])
    y1, y99 = np.percentile(cropped[:, 1], [1, 99])
    return Dimensions(
        float(z99 - z1),
        float(y99 - y1),
        float(np.mean(np.linalg.norm(cropped, axis=1))),
    )


def dimensional_report(
    dome: DomeParams,
    distances: Sequence[float] = (2.0, 3.0, 4.0, 5.0),
    geometry: ScannerGeometry = ScannerGeometry(),
    frames: int = 20,
    lut: Optional[CorrectionLut] = None,
    seed: int = 0,
    target_m: float = 1.0,
) -> DimensionalReport:
    """
    Board dimensions with and without the enclosure at each distance.

    With a LUT the enclosure observation is corrected before measuring.
    The crop box is the board inflated by 3 sigma of the (scattered) beam
    footprint at that range.
    """
    rows = []
    spread = max(dome.scatter_gain, 1.0) * 0.5
    for distance in distances:
        scene = rect_target(distance, target_m)
        margin = (
            0.05,
            3.0 * spread * geometry.div_h_rad * distance + 0.005,
            3.0 * spread * geometry.div_v_rad * distance + 0.005,
        )
        per_frame: Dict[str, List[Dimensions]] = {"e": [], "r": []}
        for k in range(frames):
            reference = generate_frame(
                scene, geometry, k, Timestamp(k * geometry.period_ns), seed
            )
            observed = distort_frame(
                reference, dome, scene, geometry, seed=seed
            )
            if lut is not None:
                observed = correct_frame(observed, lut)
            m_r = _measure(reference.positions, scene, margin)
            m_e = _measure(observed.positions, scene, margin)
            if m_r is None or m_e is None:
                raise InsufficientDataException(
                    "fewer than 50 target points at {0} m".format(distance)
                )
            per_frame["r"].append(m_r)
            per_frame["e"].append(m_e)
        m_e_mean = Dimensions(*np.mean(per_frame["e"], axis=0).tolist())
        m_r_mean = Dimensions(*np.mean(per_frame["r"], axis=0).tolist())
        errors = np.array(
            [
                [relative_error(e[k], r[k]) for k in range(3)]
                for e, r in zip(per_frame["e"], per_frame["r"])
            ]
        )
        rows.append(
            DistanceRow(
                float(distance),
                m_e_mean,
                m_r_mean,
                Dimensions(
                    *[
                        relative_error(m_e_mean[k], m_r_mean[k])
                        for k in range(3)
                    ]
                ),
                Dimensions(*errors.std(axis=0).tolist()),
                len(per_frame["e"]),
            )
        )
        logger.info(
            "dimensional_report: %.1f m height %+.3f%% width %+.3f%% range"
            " %+.3f%%",
            distance,
            *rows[-1].error_pct
        )
    return DimensionalReport(tuple(rows), corrected=lut is not None)
