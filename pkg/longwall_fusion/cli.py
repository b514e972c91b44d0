"""
Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 runtime failure (including a failed
acceptance gate).
"""
import argparse
import logging
import sys
from dataclasses import replace
from typing import Any, Callable, List, NoReturn, Optional, Sequence

import numpy as np

from . import __version__
from .camera import (
    ImageFrame,
    bin_image,
    calibrate_sensor_gain,
    camera_pose,
    dome_image_effects,
    enhance_low_light,
    render_image,
    write_ppm,
)
from .config import (
    EXTRINSIC_REPROJECTION_TARGET_PX,
    INTRINSIC_REPROJECTION_TARGET_PX,
    OPEN_INTRINSICS,
    SystemConfig,
    config_fragment,
    environment,
    parse_overrides,
)
from .dome import build_correction_lut, dimensional_report, save_lut
from .exception import FusionException
from .filters import ColoredCloud
from .fov import (
    OVERLAP_DISTANCES_M,
    FovGeometry,
    distance_to_reach,
    overlap_asymptote,
    overlap_curve,
)
from .geometry import Point3
from .governor import GovernorPolicy
from .log import logger
from .metrics import image_metrics, intrinsics_shift, metrics_csv
from .pipeline import FusedFrame, latency_report, run_pipeline, write_ply
from .resolution import gap_board_report
from .scene import checkerboard, preset, sync_target
from .server import FrameServer, Reconstruction, planned_mbps, serve, subscribe
from .storage import ArtifactStore, open_store
from .sync import (
    camera_motion_signal,
    estimate_offset,
    lidar_motion_signal,
    offset_fragment,
    simulate_streams,
)

USAGE_EXIT = 1
RUNTIME_EXIT = 2
DOME_GATE_PCT = 1.0
DEFAULT_VOXELS = (0.005, 0.01, 0.02, 0.05)


class ArgumentParser(argparse.ArgumentParser):
    """argparse with usage errors mapped to exit code 1."""

    def error(self, message: str) -> NoReturn:
        self.print_usage(sys.stderr)
        self.exit(USAGE_EXIT, "{0}: error: {1}\n".format(self.prog, message))


def _load(args: argparse.Namespace) -> SystemConfig:
    lines: List[str] = []
    source = "<overrides>"
    config_path = args.config or environment()["LONGWALL_CONFIG"]
    if config_path is not None:
        try:
            with open(config_path, "r", encoding="utf-8") as handle:
                lines = handle.readlines()
        except OSError as err:
            raise FusionException(
                "cannot read config {0}: {1}".format(config_path, err)
            ) from err
        source = config_path
    lines += args.set or []
    for key, attr in (
        ("pipeline.voxel_m", "voxel"),
        ("wire.port", "port"),
        ("wire.mode", "mode"),
    ):
        value = getattr(args, attr, None)
        if value is not None:
            lines.append("{0} = {1}".format(key, value))
    return parse_overrides(lines, source=source)


def _fused(
    cfg: SystemConfig, duration_s: float, seed: int
) -> List[FusedFrame]:
    scene = preset(cfg.scene)
    lidar, images = simulate_streams(scene, cfg, duration_s, seed)
    lut = build_correction_lut(cfg.dome, cfg.scanner)
    offset = cfg.sync.estimated_offset_ms
    if offset is None:
        logger.debug("no estimated offset configured, using the true one")
        offset = cfg.sync.true_offset_ms
    return list(run_pipeline(lidar, images, cfg, lut, offset))


def cmd_simulate(
    args: argparse.Namespace, cfg: SystemConfig, store: ArtifactStore
) -> int:
    scene = preset(cfg.scene)
    lidar, images = simulate_streams(scene, cfg, args.duration, args.seed)
    lines = ["frame_id,t0_ns,points"]
    lines += [
        "{0},{1},{2}".format(f.frame_id, f.t0.nanos, len(f)) for f in lidar
    ]
    store.put_text("simulate_frames.csv", "\n".join(lines) + "\n")
    if lidar:
        positions = np.concatenate([f.positions for f in lidar])
        grey = np.concatenate(
            [np.round(f.intensity * 255.0) for f in lidar]
        ).astype(np.uint8)
        store.put_bytes(
            "simulate_cloud.ply",
            write_ply(ColoredCloud(positions, np.repeat(grey[:, None], 3, 1))),
        )
    if images:
        store.put_bytes("simulate_first.ppm", write_ppm(images[0]))
    print("{0} LiDAR frames, {1} images".format(len(lidar), len(images)))
    return 0


def cmd_pipeline(
    args: argparse.Namespace, cfg: SystemConfig, store: ArtifactStore
) -> int:
    frames = _fused(cfg, args.duration, args.seed)
    if not frames:
        raise FusionException("pipeline produced no frames")
    report = latency_report([f.stats for f in frames], cfg.scanner.rate_hz)
    store.put_text("latency.csv", report.to_csv())
    store.put_bytes("fused.ply", write_ply(frames[-1].cloud))
    print(
        "{0} frames, {1} points in the last window, {2:.1f} ms mean".format(
            len(frames), len(frames[-1]), report.end_to_end_mean_ms
        )
    )
    return 0


def cmd_serve(
    args: argparse.Namespace, cfg: SystemConfig, store: ArtifactStore
) -> int:
    frames = _fused(cfg, args.duration, args.seed)
    policy = GovernorPolicy.from_config(cfg)
    keyframe_every = int(round(cfg.pipeline.window_s * cfg.scanner.rate_hz))
    with FrameServer(
        cfg.wire.host, cfg.wire.port, cfg.wire.queue_depth, cfg.wire.stats_port
    ) as server:
        summary = serve(
            server,
            frames,
            policy,
            mode=cfg.wire.mode,
            keyframe_every=keyframe_every,
            rate_hz=cfg.scanner.rate_hz,
            min_subscribers=args.min_subscribers,
            wait_s=args.wait,
        )
    print(
        "{0} of {1} frames sent, {2} bytes, voxel {3:.4f} m".format(
            summary.frames_sent,
            summary.frames_in,
            summary.bytes_sent,
            summary.state.voxel_m,
        )
    )
    return 0


def cmd_subscribe(
    args: argparse.Namespace, cfg: SystemConfig, store: ArtifactStore
) -> int:
    reconstruction = Reconstruction()
    received = 0
    for frame in subscribe(args.host, cfg.wire.port, args.timeout):
        reconstruction.apply(frame)
        received += 1
        print(
            "{0},{1},{2},{3}".format(
                frame.frame_id,
                int(frame.is_delta),
                len(frame),
                len(reconstruction.cloud),
            )
        )
        if args.frames and received >= args.frames:
            break
    if args.snapshot:
        store.put_bytes("received.ply", write_ply(reconstruction.cloud))
    return 0


def cmd_fov(
    args: argparse.Namespace, cfg: SystemConfig, store: ArtifactStore
) -> int:
    g = FovGeometry(
        cfg.camera.hfov_deg,
        cfg.camera.vfov_deg,
        cfg.scanner.hfov_deg,
        cfg.scanner.vfov_deg,
        Point3(0.0, cfg.baseline.offset_m, 0.0),
        args.alignment,
    )
    distances = sorted(args.distance or OVERLAP_DISTANCES_M)
    curve = overlap_curve(g, distances, args.samples, args.seed)
    store.put_text("fov_{0}.csv".format(args.alignment), curve.to_csv())
    sys.stdout.write(curve.to_csv())
    print("asymptote,{0:.4f}".format(overlap_asymptote(g)))
    if args.reach is not None:
        d = distance_to_reach(g, args.reach, n_samples=args.samples)
        print("reach_{0},{1:.3f}".format(args.reach, d))
    return 0


def cmd_dome_report(
    args: argparse.Namespace, cfg: SystemConfig, store: ArtifactStore
) -> int:
    distances = sorted(args.distance or (2.0, 3.0, 4.0, 5.0))
    lut = build_correction_lut(cfg.dome, cfg.scanner)
    store.put_bytes("dome.lut", save_lut(lut))
    raw = dimensional_report(
        cfg.dome, distances, cfg.scanner, args.frames, seed=args.seed
    )
    fixed = dimensional_report(
        cfg.dome, distances, cfg.scanner, args.frames, lut, args.seed
    )
    csv = raw.to_csv() + "".join(fixed.to_csv().splitlines(True)[1:])
    store.put_text("dome_report.csv", csv)
    sys.stdout.write(csv)
    worst = max(max(abs(e) for e in r.error_pct) for r in fixed.rows)
    if worst >= DOME_GATE_PCT:
        logger.error(
            "corrected error %.3f%% is not below %.1f%%", worst, DOME_GATE_PCT
        )
        return RUNTIME_EXIT
    return 0


def cmd_voxel_sweep(
    args: argparse.Namespace, cfg: SystemConfig, store: ArtifactStore
) -> int:
    voxels = args.voxels or list(DEFAULT_VOXELS)
    rate = cfg.scanner.rate_hz
    keyframe_every = int(round(cfg.pipeline.window_s * rate))
    lines = ["voxel_m,points_per_s,mbps,latency_ms,achieved_hz"]
    counts = []
    for voxel in voxels:
        run_cfg = replace(
            cfg, pipeline=replace(cfg.pipeline, voxel_m=voxel)
        )
        frames = _fused(run_cfg, args.duration, args.seed)
        report = latency_report([f.stats for f in frames], rate)
        new_points = [
            len(f.delta) if f.delta is not None else len(f) for f in frames
        ]
        points_per_s = float(np.mean(new_points)) * rate
        mbps = planned_mbps(frames, rate, cfg.wire.mode, keyframe_every)
        counts.append(points_per_s)
        lines.append(
            "{0},{1:.1f},{2:.3f},{3:.3f},{4:.3f}".format(
                voxel,
                points_per_s,
                mbps,
                report.end_to_end_mean_ms,
                report.achieved_hz,
            )
        )
    csv = "\n".join(lines) + "\n"
    store.put_text("voxel_sweep.csv", csv)
    sys.stdout.write(csv)
    order = np.argsort(voxels)
    if np.any(np.diff(np.asarray(counts)[order]) >= 0):
        raise FusionException(
            "point rate does not fall as the voxel size grows"
        )
    return 0


def cmd_sync_estimate(
    args: argparse.Namespace, cfg: SystemConfig, store: ArtifactStore
) -> int:
    if args.true_offset is not None:
        cfg = replace(
            cfg, sync=replace(cfg.sync, true_offset_ms=args.true_offset)
        )
    scene = sync_target(cfg.scene) if args.scene is None else preset(
        replace(cfg.scene, preset=args.scene)
    )
    lidar, images = simulate_streams(scene, cfg, args.duration, args.seed)
    offset = estimate_offset(
        lidar_motion_signal(lidar), camera_motion_signal(images)
    )
    residual = offset - cfg.sync.true_offset_ms
    fragment = offset_fragment(offset)
    store.put_text("sync.cfg", fragment)
    print("estimated_offset_ms,{0:.3f}".format(offset))
    print("residual_ms,{0:.3f}".format(residual))
    sys.stdout.write(fragment)
    return 0


def _render(
    cfg: SystemConfig, intr: Any, seed: int, scene_distance_m: float
) -> ImageFrame:
    scene = checkerboard(scene_distance_m)
    return render_image(
        scene,
        camera_pose(cfg),
        intr,
        cfg.imaging.illumination_lux,
        sensor_gain=cfg.imaging.sensor_gain,
        read_noise_dn=cfg.imaging.read_noise_dn,
        seed=seed,
    )


def cmd_metrics(
    args: argparse.Namespace, cfg: SystemConfig, store: ArtifactStore
) -> int:
    reference = _render(cfg, OPEN_INTRINSICS, args.seed, args.distance)
    enclosure = dome_image_effects(
        _render(cfg, cfg.intrinsics, args.seed, args.distance)
    )
    enhanced = enhance_low_light(
        enclosure, cfg.imaging.target_mean, cfg.imaging.detail_sigma_px
    )
    reports = {
        "open": image_metrics(reference),
        "enclosure": image_metrics(enclosure, reference),
        "enhanced": image_metrics(enhanced, reference),
    }
    if args.bin > 1:
        reports["enclosure_binned"] = image_metrics(
            bin_image(enclosure, args.bin), bin_image(reference, args.bin)
        )
    csv = metrics_csv(reports)
    store.put_text("metrics.csv", csv)
    store.put_bytes("enclosure.ppm", write_ppm(enclosure))
    store.put_bytes("enhanced.ppm", write_ppm(enhanced))
    sys.stdout.write(csv)
    shift = intrinsics_shift(cfg.intrinsics, OPEN_INTRINSICS)
    for key, value in shift.items():
        print("{0},{1:.6f}".format(key, value))
    print("intrinsic_target_px,{0}".format(INTRINSIC_REPROJECTION_TARGET_PX))
    print("extrinsic_target_px,{0}".format(EXTRINSIC_REPROJECTION_TARGET_PX))
    if args.fit_gain:
        gain = calibrate_sensor_gain(
            checkerboard(args.distance), camera_pose(cfg), cfg.intrinsics
        )
        sys.stdout.write(config_fragment("imaging.sensor_gain", gain))
    return 0


def cmd_gap_board(
    args: argparse.Namespace, cfg: SystemConfig, store: ArtifactStore
) -> int:
    report = gap_board_report(
        args.distance, cfg.scanner, cfg.pipeline.window_s, args.seed
    )
    csv = report.to_csv()
    store.put_text("gap_board.csv", csv)
    sys.stdout.write(csv)
    for r in report.rows:
        print(
            "smallest_resolved_{0}_mm,{1}".format(
                r.row, r.smallest_resolved_mm
            )
        )
    return 0


Command = Callable[[argparse.Namespace, SystemConfig, ArtifactStore], int]


def build_parser() -> ArgumentParser:
    common = ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value config file")
    common.add_argument("--seed", type=int, default=0, help="random seed")
    common.add_argument(
        "--out", default=".", help="output dir, s3://bucket/p or gs://bucket/p"
    )
    common.add_argument(
        "--set",
        action="append",
        metavar="KEY=VALUE",
        help="override any config key, e.g. scanner.rate_hz=10",
    )
    common.add_argument(
        "--log-level",
        default=None,
        help="logging level (defaults to LONGWALL_LOG_LEVEL or WARNING)",
    )

    parser = ArgumentParser(
        prog="longwall-fusion",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    parser.add_argument("--version", action="version", version=__version__)
    commands = parser.add_subparsers(dest="command", required=True)

    def add(name: str, fn: Command, help_text: str) -> ArgumentParser:
        sub = commands.add_parser(
            name,
            parents=[common],
            help=help_text,
            formatter_class=argparse.ArgumentDefaultsHelpFormatter,
        )
        sub.set_defaults(handler=fn)
        return sub

    sub = add("simulate", cmd_simulate, "simulate both sensor streams")
    sub.add_argument("--duration", type=float, default=1.0)

    sub = add("pipeline", cmd_pipeline, "run the fusion pipeline")
    sub.add_argument("--duration", type=float, default=2.0)
    sub.add_argument("--voxel", type=float)

    sub = add("serve", cmd_serve, "stream fused frames over TCP")
    sub.add_argument("--duration", type=float, default=30.0)
    sub.add_argument("--voxel", type=float)
    sub.add_argument("--port", type=int)
    sub.add_argument("--mode", choices=("delta", "full"))
    sub.add_argument("--min-subscribers", type=int, default=0)
    sub.add_argument("--wait", type=float, default=10.0)

    sub = add("subscribe", cmd_subscribe, "receive and reconstruct frames")
    sub.add_argument("--host", default="127.0.0.1")
    sub.add_argument("--port", type=int)
    sub.add_argument("--frames", type=int, default=0, help="0 = until EOF")
    sub.add_argument("--timeout", type=float, default=None)
    sub.add_argument("--snapshot", action="store_true")

    sub = add("fov", cmd_fov, "camera/LiDAR overlap curve")
    sub.add_argument("--distance", type=float, action="append")
    sub.add_argument(
        "--alignment", choices=("rotated", "conventional"), default="rotated"
    )
    sub.add_argument("--samples", type=int, default=200_000)
    sub.add_argument("--reach", type=float, default=None)

    sub = add("dome-report", cmd_dome_report, "dimensional error table")
    sub.add_argument("--distance", type=float, action="append")
    sub.add_argument("--frames", type=int, default=20)

    sub = add("voxel-sweep", cmd_voxel_sweep, "density/bandwidth per voxel")
    sub.add_argument("--voxels", type=float, nargs="+")
    sub.add_argument("--duration", type=float, default=2.0)
    sub.add_argument("--mode", choices=("delta", "full"))

    sub = add("sync-estimate", cmd_sync_estimate, "estimate clock offset")
    sub.add_argument("--duration", type=float, default=20.0)
    sub.add_argument("--true-offset", type=float, default=None)
    sub.add_argument("--scene", default=None, help="scene preset override")

    sub = add("metrics", cmd_metrics, "image metrics of the enclosure")
    sub.add_argument("--distance", type=float, default=1.5)
    sub.add_argument("--bin", type=int, default=1)
    sub.add_argument("--fit-gain", action="store_true")

    sub = add("gap-board", cmd_gap_board, "LiDAR gap resolution")
    sub.add_argument("--distance", type=float, default=3.0)
    return parser


def _configure_logging(level: Optional[str]) -> None:
    name = (level or environment()["LONGWALL_LOG_LEVEL"] or "WARNING").upper()
    logging.basicConfig(
        level=getattr(logging, name, logging.WARNING),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _configure_logging(args.log_level)
    try:
        cfg = _load(args)
        store = open_store(args.out)
        handler: Command = args.handler
        return handler(args, cfg, store)
    except FusionException as err:
        logger.error("%s failed: %s", args.command, err)
        print("error: {0}".format(err), file=sys.stderr)
        return RUNTIME_EXIT
