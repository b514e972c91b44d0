"""
Non-repetitive solid-state LiDAR simulation.

The scan pattern is a two-prism rosette: two counter-rotating deflections at
incommensurate frequencies whose sum slowly fills the elliptical field of
view. Frames are ray-cast against a Scene.
"""
from dataclasses import dataclass, field
from typing import Iterator, List, NamedTuple, Optional

import numpy as np

from .config import ScannerGeometry
from .geometry import Point3, Timestamp
from .log import logger
from .scene import Scene, intersect

PRISM_F1_HZ = 1447.0
PRISM_F2_HZ = 911.8


class LidarPoint(NamedTuple):
    position: Point3
    intensity: float
    dt_ns: int


@dataclass(frozen=True, eq=False)
class PointCloudFrame:
    """
    PointCloudFrame.

    One sweep. Points are stored column-wise: positions (N, 3) metres in the
    LiDAR frame, intensity (N,) in [0, 1] and dt_ns (N,) offsets from t0.
    beams holds the physical beam direction of each return when the frame
    comes from the simulator; it is not part of the observation.
    """

    frame_id: int
    t0: Timestamp
    positions: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    intensity: np.ndarray = field(default_factory=lambda: np.zeros(0))
    dt_ns: np.ndarray = field(
        default_factory=lambda: np.zeros(0, dtype=np.int64)
    )
    beams: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return len(self.positions)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PointCloudFrame):
            return NotImplemented
        return (
            self.frame_id == other.frame_id
            and self.t0 == other.t0
            and np.array_equal(self.positions, other.positions)
            and np.array_equal(self.intensity, other.intensity)
            and np.array_equal(self.dt_ns, other.dt_ns)
        )

    __hash__ = None  # type: ignore

    @property
    def points(self) -> Iterator[LidarPoint]:
        for position, intensity, dt in zip(
            self.positions, self.intensity, self.dt_ns
        ):
            yield LidarPoint(
                Point3(*map(float, position)), float(intensity), int(dt)
            )

    def select(self, mask: np.ndarray) -> "PointCloudFrame":
        return PointCloudFrame(
            self.frame_id,
            self.t0,
            self.positions[mask],
            self.intensity[mask],
            self.dt_ns[mask],
            None if self.beams is None else self.beams[mask],
        )

    def with_positions(self, positions: np.ndarray) -> "PointCloudFrame":
        return PointCloudFrame(
            self.frame_id,
            self.t0,
            positions,
            self.intensity,
            self.dt_ns,
            self.beams,
        )


def rosette_angles(
    geometry: ScannerGeometry, t: np.ndarray
) -> np.ndarray:
    """Azimuth / elevation (radians) of the rosette at times t (seconds)."""
    t = np.asarray(t, dtype=np.float64)
    theta1 = 2.0 * np.pi * PRISM_F1_HZ * t
    theta2 = 2.0 * np.pi * PRISM_F2_HZ * t
    az = 0.5 * geometry.hfov_rad * 0.5 * (np.cos(theta1) - np.cos(theta2))
    el = 0.5 * geometry.vfov_rad * 0.5 * (np.sin(theta1) + np.sin(theta2))
    return np.stack([az, el], axis=-1)


def directions_from_angles(angles: np.ndarray) -> np.ndarray:
    """Unit vectors for (az, el) pairs; az positive toward +y."""
    az = angles[..., 0]
    el = angles[..., 1]
    return np.stack(
        [np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)],
        axis=-1,
    )


def angles_from_directions(dirs: np.ndarray) -> np.ndarray:
    dirs = np.asarray(dirs, dtype=np.float64)
    az = np.arctan2(dirs[..., 1], dirs[..., 0])
    el = np.arctan2(dirs[..., 2], np.hypot(dirs[..., 0], dirs[..., 1]))
    return np.stack([az, el], axis=-1)


def scan_direction(geometry: ScannerGeometry, t: float) -> np.ndarray:
    """Unit beam direction at time t; t = 0 is boresight (1, 0, 0)."""
    return directions_from_angles(rosette_angles(geometry, np.array([t])))[0]


def generate_frame(
    scene: Scene,
    geometry: ScannerGeometry,
    frame_id: int,
    t0: Timestamp,
    jitter_seed: int = 0,
    scene_time_s: Optional[float] = None,
    origin: np.ndarray = np.zeros(3),
) -> PointCloudFrame:
    """
    Simulate one sweep.

    points_per_frame samples are spread evenly over the frame period. Each
    beam is perturbed by Gaussian jitter (sigma = half the divergence per
    axis); the return is reported along the commanded direction at the
    range of the jittered beam's hit, so footprint spread shows up at edges.
    scene_time_s places the shearer (defaults to t0).
    """
    n = geometry.points_per_frame
    period_s = 1.0 / geometry.rate_hz
    start_s = t0.seconds if scene_time_s is None else scene_time_s
    dt_ns = (np.arange(n, dtype=np.int64) * geometry.period_ns) // n
    times = frame_id * period_s + dt_ns / 1e9
    angles = rosette_angles(geometry, times)
    rng = np.random.default_rng([jitter_seed, frame_id])
    jitter = rng.normal(size=(n, 2)) * np.array(
        [0.5 * geometry.div_h_rad, 0.5 * geometry.div_v_rad]
    )
    nominal = directions_from_angles(angles)
    beams = directions_from_angles(angles + jitter)

    # the shearer moves a few cm per frame; sample it at the frame midpoint
    hits = intersect(scene, origin, beams, start_s + 0.5 * period_s)
    ranges = hits.t
    keep = (
        np.isfinite(ranges)
        & (ranges >= geometry.min_range_m)
        & (ranges <= geometry.max_range_m)
    )
    cosine = np.abs(np.einsum("ij,ij->i", hits.normal, beams))
    intensity = np.clip(hits.albedo * cosine, 0.0, 1.0)
    positions = origin + nominal[keep] * ranges[keep, None]
    logger.debug(
        "generate_frame(frame_id=%i, t0=%i, rays=%i, hits=%i)",
        frame_id,
        t0.nanos,
        n,
        int(keep.sum()),
    )
    return PointCloudFrame(
        frame_id,
        t0,
        positions,
        intensity[keep],
        dt_ns[keep],
        beams[keep],
    )


def generate_frames(
    scene: Scene,
    geometry: ScannerGeometry,
    count: int,
    first_frame_id: int = 0,
    clock_offset_ms: float = 0.0,
    start_s: float = 0.0,
    jitter_seed: int = 0,
) -> List[PointCloudFrame]:
    """
    A contiguous run of frames.

    Frame k observes the scene at start_s + k / rate_hz and is stamped by the
    LiDAR clock, which runs clock_offset_ms ahead of true time.
    """
    frames = []
    for k in range(first_frame_id, first_frame_id + count):
        true_s = start_s + k * geometry.period_ns / 1e9
        stamp = Timestamp(
            int(round(start_s * 1e9))
            + k * geometry.period_ns
            + int(round(clock_offset_ms * 1e6))
        )
        frames.append(
            generate_frame(
                scene, geometry, k, stamp, jitter_seed, scene_time_s=true_s
            )
        )
    return frames
