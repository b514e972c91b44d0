"""
Onboard processing chain.

accumulate -> correct -> radius outlier removal -> voxel -> (enhance) ->
colourise, over a sliding window that advances one LiDAR frame at a time.
Every emitted FusedFrame carries the wall-clock time and point counts of
each stage.
"""
import queue
import threading
import time
from collections import OrderedDict, deque
from dataclasses import dataclass, field
from typing import (
    Any,
    Callable,
    Deque,
    Dict,
    Iterable,
    Iterator,
    List,
    NamedTuple,
    Optional,
    Sequence,
    Tuple,
)

import numpy as np
from typing_extensions import Literal

from .camera import ImageFrame, camera_pose, enhance_low_light, project_points
from .config import CameraIntrinsics, SystemConfig
from .dome import CorrectionLut, correct_frame
from .exception import FrameSequenceException, InsufficientDataException
from .filters import ColoredCloud, ror_mask, voxel_downsample
from .geometry import Point3, RigidTransform, Timestamp
from .log import logger
from .scanner import PointCloudFrame
from .sync import pair_frames

Stage = Literal[
    "accumulate", "correct", "ror", "voxel", "enhance", "colourise"
]
STAGES: Tuple[Stage, ...] = (
    "accumulate",
    "correct",
    "ror",
    "voxel",
    "enhance",
    "colourise",
)
# how often a blocked stage thread checks for shutdown
QUEUE_POLL_S = 0.05


class ColoredPoint(NamedTuple):
    position: Point3
    rgb: Tuple[int, int, int]


class StageRecord(NamedTuple):
    latency_ms: float
    in_count: int
    out_count: int


@dataclass
class StageStats:
    records: Dict[str, StageRecord] = field(default_factory=OrderedDict)
    validity_ratio: float = 0.0

    def record(
        self, stage: Stage, started: float, in_count: int, out_count: int
    ) -> None:
        self.records[stage] = StageRecord(
            (time.perf_counter() - started) * 1e3, in_count, out_count
        )

    def __getitem__(self, stage: Stage) -> StageRecord:
        return self.records[stage]

    @property
    def end_to_end_ms(self) -> float:
        return float(sum(r.latency_ms for r in self.records.values()))

    @property
    def out_count(self) -> int:
        if not self.records:
            return 0
        return next(reversed(self.records.values())).out_count


@dataclass(frozen=True, eq=False)
class FusedFrame:
    """
    FusedFrame.

    cloud is the colourised window in the LiDAR frame. delta holds the
    contribution of the newest LiDAR frame alone, which is what the
    streaming layer sends between keyframes.
    """

    frame_id: int
    t: Timestamp
    cloud: ColoredCloud = field(default_factory=ColoredCloud)
    stats: StageStats = field(default_factory=StageStats)
    enhanced: bool = False
    delta: Optional[ColoredCloud] = None
    # set on frames received off the wire that carry only the newest sweep
    is_delta: bool = False

    def __len__(self) -> int:
        return len(self.cloud)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, FusedFrame):
            return NotImplemented
        return (
            self.frame_id == other.frame_id
            and self.t == other.t
            and self.enhanced == other.enhanced
            and self.is_delta == other.is_delta
            and self.cloud == other.cloud
        )

    __hash__ = None  # type: ignore

    @property
    def points(self) -> List[ColoredPoint]:
        return [
            ColoredPoint(
                Point3(*map(float, p)), (int(c[0]), int(c[1]), int(c[2]))
            )
            for p, c in zip(self.cloud.positions, self.cloud.rgb)
        ]


def accumulate(
    frames: Sequence[PointCloudFrame],
    window_s: float = 1.0,
    rate_hz: float = 10.0,
) -> PointCloudFrame:
    """
    Merge contiguous sweeps into one cloud stamped with the last t0.

    dt_ns is rebased onto the merged t0, so earlier sweeps carry negative
    offsets.
    """
    if not frames:
        raise FrameSequenceException("nothing to accumulate")
    if len(frames) == 1:
        return frames[0]
    for prev, cur in zip(frames, frames[1:]):
        if cur.frame_id != prev.frame_id + 1:
            raise FrameSequenceException(
                "frame {0} missing from the sequence".format(
                    prev.frame_id + 1
                )
            )
    if len(frames) > int(round(window_s * rate_hz)):
        raise FrameSequenceException(
            "{0} frames span more than {1} s".format(len(frames), window_s)
        )
    last = frames[-1]
    return PointCloudFrame(
        last.frame_id,
        last.t0,
        np.concatenate([f.positions for f in frames]),
        np.concatenate([f.intensity for f in frames]),
        np.concatenate(
            [f.dt_ns + (f.t0.nanos - last.t0.nanos) for f in frames]
        ),
    )


def colourise(
    positions: np.ndarray,
    image: ImageFrame,
    extr: RigidTransform,
    intr: CameraIntrinsics,
) -> Tuple[ColoredCloud, float]:
    """
    Attach the nearest pixel colour to every point the camera sees.

    Returns the valid points (positions untouched, still in the LiDAR
    frame) and the fraction of input points that were valid.
    """
    positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    if len(positions) == 0:
        return ColoredCloud(), 0.0
    uv, valid = project_points(extr.apply(positions), intr)
    cols = np.minimum(np.floor(uv[valid, 0] + 0.5), image.width - 1)
    rows = np.minimum(np.floor(uv[valid, 1] + 0.5), image.height - 1)
    rgb = image.pixels[rows.astype(np.intp), cols.astype(np.intp)]
    ratio = float(np.count_nonzero(valid)) / len(positions)
    return ColoredCloud(positions[valid], rgb), ratio


class _Window(NamedTuple):
    frame: PointCloudFrame
    image: Optional[ImageFrame]
    cloud: PointCloudFrame
    newest: int
    stats: StageStats


class FusionPipeline:
    """
    Sliding-window fusion over a LiDAR stream and a recorded camera stream.

    Frames are corrected as they arrive; the window holds the corrected
    sweeps so each emission only corrects the newest one. LiDAR frames
    without a camera match are skipped and counted in `skipped`.
    """

    def __init__(
        self,
        cfg: SystemConfig,
        camera: Sequence[ImageFrame],
        lut: Optional[CorrectionLut] = None,
        offset_ms: float = 0.0,
    ) -> None:
        self.cfg = cfg
        self.camera = list(camera)
        self.lut = lut
        self.offset_ms = offset_ms
        self.extrinsic = camera_pose(cfg)
        self.capacity = int(round(cfg.pipeline.window_s * cfg.scanner.rate_hz))
        self.skipped = 0
        self._window: Deque[PointCloudFrame] = deque(maxlen=self.capacity)

    def _pair(self, frame: PointCloudFrame) -> Optional[ImageFrame]:
        if not self.camera:
            return None
        pairs = pair_frames(
            [frame], self.camera, self.offset_ms, self.cfg.scanner.period_ns
        )
        return self.camera[pairs[0].camera_frame_id] if pairs else None

    def window_stage(self, frame: PointCloudFrame) -> Optional[_Window]:
        """Pair, correct and accumulate; None when the frame is skipped."""
        if self._window and frame.frame_id != self._window[-1].frame_id + 1:
            logger.warning(
                "frame %i follows %i, restarting the window",
                frame.frame_id,
                self._window[-1].frame_id,
            )
            self._window.clear()
        stats = StageStats()
        started = time.perf_counter()
        corrected = frame
        if self.lut is not None:
            corrected = correct_frame(frame, self.lut)
        correct_ms = (time.perf_counter() - started) * 1e3
        self._window.append(corrected)

        image = self._pair(frame)
        if image is None:
            self.skipped += 1
            return None
        started = time.perf_counter()
        cloud = accumulate(
            list(self._window),
            self.cfg.pipeline.window_s,
            self.cfg.scanner.rate_hz,
        )
        total = sum(len(f) for f in self._window)
        stats.record("accumulate", started, total, len(cloud))
        stats.records["correct"] = StageRecord(correct_ms, total, len(cloud))
        return _Window(frame, image, cloud, len(corrected), stats)

    def filter_stage(
        self, window: _Window
    ) -> Tuple[_Window, PointCloudFrame, np.ndarray]:
        stats = window.stats
        cfg = self.cfg.pipeline
        started = time.perf_counter()
        mask = ror_mask(
            window.cloud.positions, cfg.ror_radius_m, cfg.ror_min_neighbors
        )
        kept = window.cloud.select(mask)
        stats.record("ror", started, len(window.cloud), len(kept))
        started = time.perf_counter()
        voxels = voxel_downsample(kept, cfg.voxel_m)
        stats.record("voxel", started, len(kept), len(voxels))
        newest = np.zeros(len(window.cloud), dtype=bool)
        if window.newest:
            newest[-window.newest :] = True
        return window, voxels, window.cloud.positions[mask & newest]

    def fuse_stage(
        self, staged: Tuple[_Window, PointCloudFrame, np.ndarray]
    ) -> FusedFrame:
        window, voxels, newest = staged
        stats = window.stats
        image = window.image
        enhanced = False
        started = time.perf_counter()
        if self.cfg.pipeline.enhancement_enabled and image is not None:
            image = enhance_low_light(
                image,
                self.cfg.imaging.target_mean,
                self.cfg.imaging.detail_sigma_px,
            )
            enhanced = True
        stats.record("enhance", started, len(voxels), len(voxels))
        started = time.perf_counter()
        intr = self.cfg.intrinsics
        cloud, ratio = colourise(voxels.positions, image, self.extrinsic, intr)
        delta_voxels = voxel_downsample(
            ColoredCloud(newest, np.zeros((len(newest), 3), np.uint8)),
            self.cfg.pipeline.voxel_m,
        )
        delta, _ = colourise(
            delta_voxels.positions, image, self.extrinsic, intr
        )
        stats.validity_ratio = ratio
        stats.record("colourise", started, len(voxels), len(cloud))
        return FusedFrame(
            window.frame.frame_id,
            window.frame.t0,
            cloud,
            stats,
            enhanced,
            delta,
        )

    def process(self, frame: PointCloudFrame) -> Optional[FusedFrame]:
        window = self.window_stage(frame)
        if window is None:
            return None
        return self.fuse_stage(self.filter_stage(window))

    def run(self, frames: Iterable[PointCloudFrame]) -> Iterator[FusedFrame]:
        if self.cfg.pipeline.threaded:
            yield from self._run_threaded(frames)
            return
        for frame in frames:
            fused = self.process(frame)
            if fused is not None:
                yield fused

    def _run_threaded(
        self, frames: Iterable[PointCloudFrame]
    ) -> Iterator[FusedFrame]:
        """
        Each stage on its own thread; FIFO queues keep frame order.

        A stage error is re-raised here. Raising, or closing the generator
        early, stops and joins every stage thread before returning.
        """
        done = object()
        stop = threading.Event()
        source: "queue.Queue[Any]" = queue.Queue(maxsize=2)
        filtered: "queue.Queue[Any]" = queue.Queue(maxsize=2)
        fused: "queue.Queue[Any]" = queue.Queue(maxsize=2)

        def put(outbox: "queue.Queue[Any]", item: Any) -> bool:
            while not stop.is_set():
                try:
                    outbox.put(item, timeout=QUEUE_POLL_S)
                    return True
                except queue.Full:
                    continue
            return False

        def get(inbox: "queue.Queue[Any]") -> Any:
            while not stop.is_set():
                try:
                    return inbox.get(timeout=QUEUE_POLL_S)
                except queue.Empty:
                    continue
            return done

        def worker(
            fn: Callable[[Any], Any],
            inbox: "queue.Queue[Any]",
            outbox: "queue.Queue[Any]",
        ) -> None:
            while True:
                item = get(inbox)
                if item is done or isinstance(item, BaseException):
                    put(outbox, item)
                    return
                try:
                    result = fn(item)
                except Exception as error:  # pylint: disable=broad-except
                    put(outbox, error)
                    return
                if not put(outbox, result):
                    return

        def feed() -> None:
            try:
                for frame in frames:
                    if stop.is_set():
                        return
                    window = self.window_stage(frame)
                    if window is not None and not put(source, window):
                        return
            except Exception as error:  # pylint: disable=broad-except
                put(source, error)
                return
            put(source, done)

        threads = [
            threading.Thread(target=feed, name="pipeline-feed", daemon=True),
            threading.Thread(
                target=worker,
                name="pipeline-filter",
                args=(self.filter_stage, source, filtered),
                daemon=True,
            ),
            threading.Thread(
                target=worker,
                name="pipeline-fuse",
                args=(self.fuse_stage, filtered, fused),
                daemon=True,
            ),
        ]
        for thread in threads:
            thread.start()
        try:
            while True:
                item = fused.get()
                if item is done:
                    break
                if isinstance(item, BaseException):
                    raise item
                yield item
        finally:
            stop.set()
            for thread in threads:
                thread.join()


def run_pipeline(
    lidar: Iterable[PointCloudFrame],
    camera: Sequence[ImageFrame],
    cfg: SystemConfig,
    lut: Optional[CorrectionLut] = None,
    offset_ms: float = 0.0,
) -> Iterator[FusedFrame]:
    logger.debug(
        "run_pipeline(camera=%i, lut=%s, offset_ms=%s, threaded=%s)",
        len(camera),
        lut is not None,
        offset_ms,
        cfg.pipeline.threaded,
    )
    return FusionPipeline(cfg, camera, lut, offset_ms).run(lidar)


class StageSummary(NamedTuple):
    stage: str
    mean_ms: float
    p95_ms: float


@dataclass(frozen=True)
class LatencyReport:
    stages: Tuple[StageSummary, ...]
    end_to_end_mean_ms: float
    end_to_end_p95_ms: float
    achieved_hz: float
    frames: int

    def to_csv(self) -> str:
        lines = ["stage,mean_ms,p95_ms"]
        for row in self.stages:
            lines.append(
                "{0},{1:.3f},{2:.3f}".format(
                    row.stage, row.mean_ms, row.p95_ms
                )
            )
        lines.append(
            "end_to_end,{0:.3f},{1:.3f}".format(
                self.end_to_end_mean_ms, self.end_to_end_p95_ms
            )
        )
        lines.append("achieved_hz,{0:.3f},".format(self.achieved_hz))
        return "\n".join(lines) + "\n"


def latency_report(
    stats: Sequence[StageStats], lidar_rate_hz: float = 10.0
) -> LatencyReport:
    """
    Per-stage and end-to-end latency summary.

    The achieved rate is the LiDAR rate, or the rate the mean end-to-end
    latency allows when that is lower.
    """
    if len(stats) < 10:
        raise InsufficientDataException(
            "latency report needs at least 10 frames, got {0}".format(
                len(stats)
            )
        )
    rows = []
    for stage in STAGES:
        values = [s[stage].latency_ms for s in stats if stage in s.records]
        if values:
            rows.append(
                StageSummary(
                    stage,
                    float(np.mean(values)),
                    float(np.percentile(values, 95)),
                )
            )
    end_to_end = np.array([s.end_to_end_ms for s in stats])
    mean = float(end_to_end.mean())
    achieved = lidar_rate_hz if mean <= 0 else min(lidar_rate_hz, 1e3 / mean)
    return LatencyReport(
        tuple(rows),
        mean,
        float(np.percentile(end_to_end, 95)),
        achieved,
        len(stats),
    )


_PLY_VERTEX = np.dtype(
    [
        ("x", "<f4"),
        ("y", "<f4"),
        ("z", "<f4"),
        ("red", "u1"),
        ("green", "u1"),
        ("blue", "u1"),
    ]
)


def write_ply(cloud: ColoredCloud) -> bytes:
    """Binary little-endian PLY with float xyz and uchar rgb."""
    header = (
        "ply\n"
        "format binary_little_endian 1.0\n"
        "element vertex {0}\n"
        "property float x\n"
        "property float y\n"
        "property float z\n"
        "property uchar red\n"
        "property uchar green\n"
        "property uchar blue\n"
        "end_header\n"
    ).format(len(cloud))
    body = np.zeros(len(cloud), dtype=_PLY_VERTEX)
    for k, name in enumerate("xyz"):
        body[name] = cloud.positions[:, k]
    for k, name in enumerate(("red", "green", "blue")):
        body[name] = cloud.rgb[:, k]
    return header.encode("ascii") + body.tobytes()
