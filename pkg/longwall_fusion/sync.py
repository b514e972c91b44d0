"""
Clock-offset estimation and frame pairing.

Both sensors stamp frames with their own clock. The offset is defined as
LiDAR clock minus camera clock: a positive value means LiDAR stamps are
late, so a LiDAR frame's observation time on the camera clock is
``t0 - offset``. It is estimated offline by cross-correlating motion
signals extracted independently from each stream.
"""
from dataclasses import dataclass, field
from typing import List, NamedTuple, Sequence, Tuple

import numpy as np

from .camera import ImageFrame, camera_pose, render_image
from .config import ClockModel, SystemConfig, config_fragment
from .dome import distort_frame
from .exception import (
    ImageException,
    InsufficientMotionException,
    SyncException,
)
from .geometry import Timestamp
from .log import logger
from .scanner import PointCloudFrame, generate_frame
from .scene import Scene

__all__ = [
    "ClockModel",
    "MotionSignal",
    "FramePair",
    "lidar_motion_signal",
    "camera_motion_signal",
    "estimate_offset",
    "pair_frames",
    "offset_fragment",
    "simulate_streams",
]

# allowed spread of frame intervals before a stream counts as non-uniform
CADENCE_TOLERANCE_NS = 1_000
MIN_OVERLAP_MS = 5_000.0
_FLAT_FLOOR = 1e-12
_CELL_BIAS = 1 << 20


@dataclass(frozen=True, eq=False)
class MotionSignal:
    """
    MotionSignal.

    Uniformly sampled motion energy; sample i sits at
    start_ms + i * sample_period_ms on the stream's own clock.
    """

    sample_period_ms: float
    values: np.ndarray = field(default_factory=lambda: np.zeros(2))
    start_ms: float = 0.0

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=np.float64)
        if len(values) < 2:
            raise SyncException("a motion signal needs at least 2 samples")
        if self.sample_period_ms <= 0:
            raise SyncException("sample_period_ms must be positive")
        object.__setattr__(self, "values", values)

    @property
    def times_ms(self) -> np.ndarray:
        return self.start_ms + self.sample_period_ms * np.arange(
            len(self.values)
        )

    @property
    def end_ms(self) -> float:
        return float(self.times_ms[-1])

    def shifted(self, delta_ms: float) -> "MotionSignal":
        return MotionSignal(
            self.sample_period_ms, self.values, self.start_ms + delta_ms
        )


class FramePair(NamedTuple):
    lidar_frame_id: int
    camera_frame_id: int
    residual_ms: float


def _uniform_period_ns(stamps: Sequence[int], what: str) -> int:
    diffs = np.diff(np.asarray(stamps, dtype=np.int64))
    if np.any(diffs <= 0) or np.ptp(diffs) > CADENCE_TOLERANCE_NS:
        raise SyncException("non-uniform {0} cadence".format(what))
    return int(round(diffs.mean()))


def _cell_keys(positions: np.ndarray, cell_m: float) -> np.ndarray:
    cells = np.floor(positions / cell_m).astype(np.int64) + _CELL_BIAS
    return np.unique((cells[:, 0] << 42) | (cells[:, 1] << 21) | cells[:, 2])


def lidar_motion_signal(
    frames: Sequence[PointCloudFrame], cell_m: float = 0.05, window: int = 3
) -> MotionSignal:
    """
    Occupancy-flip motion energy.

    Occupancy is the union of `window` consecutive sweeps, which fills the
    holes a single non-repetitive sweep leaves. Each sample is the number of
    cells that flip between two successive windows over the cells occupied
    in either, placed midway between the windows' sweep midpoints.
    """
    if len(frames) < window + 2:
        raise SyncException(
            "need at least {0} LiDAR frames, got {1}".format(
                window + 2, len(frames)
            )
        )
    period_ns = _uniform_period_ns([f.t0.nanos for f in frames], "LiDAR")
    keys = [_cell_keys(f.positions, cell_m) for f in frames]
    unions = [
        np.unique(np.concatenate(keys[k - window + 1 : k + 1]))
        for k in range(window - 1, len(frames))
    ]
    values = []
    for prev, cur in zip(unions, unions[1:]):
        occupied = len(np.union1d(prev, cur))
        flips = len(np.setxor1d(prev, cur, assume_unique=True))
        values.append(flips / occupied if occupied else 0.0)
    # first window spans frames 0..window-1; its centre is a half sweep later
    first_centre_ns = frames[0].t0.nanos + window * period_ns / 2.0
    start_ms = (first_centre_ns + period_ns / 2.0) / 1e6
    logger.debug(
        "lidar_motion_signal(frames=%i, cell_m=%s, window=%i)",
        len(frames),
        cell_m,
        window,
    )
    return MotionSignal(period_ns / 1e6, np.array(values), start_ms)


def camera_motion_signal(frames: Sequence[ImageFrame]) -> MotionSignal:
    """Mean absolute luminance change between consecutive images."""
    if len(frames) < 3:
        raise SyncException(
            "need at least 3 camera frames, got {0}".format(len(frames))
        )
    size = (frames[0].width, frames[0].height)
    for img in frames[1:]:
        if (img.width, img.height) != size:
            raise ImageException(
                "dimension mismatch: {0}x{1} vs {2}x{3}".format(
                    img.width, img.height, *size
                )
            )
    period_ns = _uniform_period_ns(
        [img.t_exposure.nanos for img in frames], "camera"
    )
    values = []
    previous = frames[0].gray()
    for img in frames[1:]:
        current = img.gray()
        values.append(float(np.abs(current - previous).mean()))
        previous = current
    start_ms = (frames[0].t_exposure.nanos + period_ns / 2.0) / 1e6
    return MotionSignal(period_ns / 1e6, np.array(values), start_ms)


def _resample(
    signal: MotionSignal, grid_ms: np.ndarray
) -> np.ndarray:
    return np.interp(
        grid_ms, signal.times_ms, signal.values, left=np.nan, right=np.nan
    )


def _ncc(a: np.ndarray, b: np.ndarray) -> float:
    ok = np.isfinite(a) & np.isfinite(b)
    if np.count_nonzero(ok) < 3:
        return -np.inf
    a = a[ok] - a[ok].mean()
    b = b[ok] - b[ok].mean()
    denominator = np.sqrt(np.dot(a, a) * np.dot(b, b))
    if denominator <= _FLAT_FLOOR:
        return -np.inf
    return float(np.dot(a, b) / denominator)


def estimate_offset(
    lidar_sig: MotionSignal,
    cam_sig: MotionSignal,
    search_ms: Tuple[float, float] = (-200.0, 200.0),
    step_ms: float = 1.0,
) -> float:
    """
    Lag (ms) of the LiDAR signal against the camera signal.

    Both signals are linearly resampled onto a step_ms grid, the normalised
    cross-correlation is evaluated at every lag in search_ms and the best
    lag is refined with a parabola through the peak and its neighbours.
    """
    for name, sig in (("LiDAR", lidar_sig), ("camera", cam_sig)):
        if np.var(sig.values) < _FLAT_FLOOR:
            raise InsufficientMotionException(
                "{0} motion signal is flat".format(name)
            )
    overlap = min(lidar_sig.end_ms, cam_sig.end_ms) - max(
        lidar_sig.start_ms, cam_sig.start_ms
    )
    if overlap < MIN_OVERLAP_MS:
        raise InsufficientMotionException(
            "signals overlap for {0:.0f} ms, need {1:.0f}".format(
                overlap, MIN_OVERLAP_MS
            )
        )
    grid = np.arange(cam_sig.start_ms, cam_sig.end_ms + step_ms, step_ms)
    cam = _resample(cam_sig, grid)
    lags = np.arange(
        np.ceil(search_ms[0] / step_ms), np.floor(search_ms[1] / step_ms) + 1
    ).astype(np.int64)
    scores = np.array(
        [_ncc(_resample(lidar_sig, grid + k * step_ms), cam) for k in lags]
    )
    if not np.any(np.isfinite(scores)):
        raise InsufficientMotionException("signals do not overlap")
    best = int(np.argmax(scores))
    refined = float(lags[best])
    if 0 < best < len(scores) - 1 and np.all(
        np.isfinite(scores[best - 1 : best + 2])
    ):
        left, mid, right = scores[best - 1 : best + 2]
        curvature = left - 2.0 * mid + right
        if curvature < 0.0:
            refined += 0.5 * (left - right) / curvature
    offset = refined * step_ms
    logger.info(
        "estimate_offset: %.3f ms (peak ncc %.3f)", offset, scores[best]
    )
    return offset


def pair_frames(
    lidar: Sequence[PointCloudFrame],
    camera: Sequence[ImageFrame],
    offset_ms: float,
    lidar_period_ns: int = 100_000_000,
) -> List[FramePair]:
    """
    Nearest-exposure pairing on corrected LiDAR time.

    camera_frame_id is the index into `camera`. Pairs whose residual
    exceeds half a LiDAR period are dropped.
    """
    if not camera:
        raise SyncException("camera stream is empty")
    exposures = np.array([img.t_exposure.nanos for img in camera], np.int64)
    if np.any(np.diff(exposures) < 0):
        raise SyncException("camera stream is not timestamp-sorted")
    offset_ns = int(round(offset_ms * 1e6))
    pairs = []
    dropped = 0
    for frame in lidar:
        corrected = frame.t0.nanos - offset_ns
        idx = int(np.searchsorted(exposures, corrected))
        if idx == len(exposures) or (
            idx > 0
            and corrected - exposures[idx - 1] <= exposures[idx] - corrected
        ):
            idx -= 1
        residual_ns = corrected - int(exposures[idx])
        if 2 * abs(residual_ns) > lidar_period_ns:
            dropped += 1
            continue
        pairs.append(FramePair(frame.frame_id, idx, residual_ns / 1e6))
    if dropped:
        logger.warning(
            "pair_frames: %i of %i LiDAR frames unpaired", dropped, len(lidar)
        )
    return pairs


def offset_fragment(offset_ms: float) -> str:
    return config_fragment("sync.estimated_offset_ms", offset_ms)


def simulate_streams(
    scene: Scene, cfg: SystemConfig, duration_s: float, seed: int = 0
) -> Tuple[List[PointCloudFrame], List[ImageFrame]]:
    """
    Both sensor streams over [0, duration_s) of true time.

    The camera clock is the reference. The LiDAR clock runs
    (1 + drift_ppm * 1e-6) times faster and leads by true_offset_ms.
    LiDAR sweeps are observed through the enclosure in cfg.dome.
    """
    clock = cfg.sync
    geometry = cfg.scanner
    lidar = []
    for k in range(int(round(duration_s * geometry.rate_hz))):
        true_ns = k * geometry.period_ns
        stamp = Timestamp(
            int(round(true_ns * (1.0 + clock.drift_ppm * 1e-6)))
            + int(round(clock.true_offset_ms * 1e6))
        )
        frame = generate_frame(
            scene, geometry, k, stamp, seed, scene_time_s=true_ns / 1e9
        )
        lidar.append(
            distort_frame(
                frame,
                cfg.dome,
                scene,
                geometry,
                true_ns / 1e9 + 0.5 / geometry.rate_hz,
                seed,
            )
        )
    pose = camera_pose(cfg)
    images = []
    for j in range(int(round(duration_s * cfg.camera.rate_hz))):
        images.append(
            render_image(
                scene,
                pose,
                cfg.intrinsics,
                cfg.imaging.illumination_lux,
                t=j * cfg.camera.period_ns / 1e9,
                sensor_gain=cfg.imaging.sensor_gain,
                read_noise_dn=cfg.imaging.read_noise_dn,
                seed=seed * 1_000_003 + j,
            )
        )
    logger.info(
        "simulate_streams: %i LiDAR frames, %i images over %.1f s",
        len(lidar),
        len(images),
        duration_s,
    )
    return lidar, images
