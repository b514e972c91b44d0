"""
Configuration.

Two layers: process environment (``.env`` loaded through python-dotenv) for
deployment settings and credentials, and a flat ``section.key = value`` file
for the sensing and processing parameters. Defaults equal the reference
values of the deployed system; angles are given in degrees.
"""
from dataclasses import MISSING, dataclass, field, fields, replace
from math import radians
from os import getcwd, getenv, path
from typing import Any, Dict, Optional, Tuple

from dotenv import load_dotenv

from .exception import ConfigException
from .geometry import Point3
from .log import logger

env_dirname = path.realpath(getcwd())
load_dotenv(path.join(env_dirname, ".env"))


def environment() -> Dict:
    return {
        "LONGWALL_CONFIG": getenv("LONGWALL_CONFIG", default=None),
        "LONGWALL_LOG_LEVEL": getenv("LONGWALL_LOG_LEVEL", default=None),
        "GOOGLE_CLOUD_PROJECT": getenv("GOOGLE_CLOUD_PROJECT", default=None),
        "STORAGE_EMULATOR_HOST": getenv(
            "STORAGE_EMULATOR_HOST", default=None
        ),
        "AWS_ACCESS_KEY_ID": getenv("AWS_ACCESS_KEY_ID", default=None),
        "AWS_SECRET_ACCESS_KEY": getenv("AWS_SECRET_ACCESS_KEY", default=None),
        "AWS_REGION": getenv("AWS_REGION", default=None),
        "S3_ENDPOINT": getenv("S3_ENDPOINT", default=None),
        "S3_SECURE": getenv("S3_SECURE", default=None),
    }


def _knob(
    default: Any,
    lo: Optional[float] = None,
    hi: Optional[float] = None,
    open_lo: bool = False,
    open_hi: bool = False,
    alias: Optional[str] = None,
    choices: Optional[Tuple[str, ...]] = None,
) -> Any:
    return field(
        default=default,
        metadata={
            "range": (lo, hi, open_lo, open_hi),
            "alias": alias,
            "choices": choices,
        },
    )


@dataclass(frozen=True)
class ScannerGeometry:
    hfov_deg: float = _knob(70.4, 0.0, 180.0, True, True)
    vfov_deg: float = _knob(77.2, 0.0, 180.0, True, True)
    rate_hz: float = _knob(10.0, 0.0, 1000.0, open_lo=True)
    points_per_frame: int = _knob(72000, 1, 10_000_000)
    min_range_m: float = _knob(0.1, 0.0, 1000.0)
    max_range_m: float = _knob(200.0, 0.0, 10000.0, open_lo=True)
    div_h_deg: float = _knob(0.03, 0.0, 5.0)
    div_v_deg: float = _knob(0.28, 0.0, 5.0)
    seed: int = _knob(0, 0, 2**32 - 1)

    @property
    def period_ns(self) -> int:
        return int(round(1e9 / self.rate_hz))

    @property
    def hfov_rad(self) -> float:
        return radians(self.hfov_deg)

    @property
    def vfov_rad(self) -> float:
        return radians(self.vfov_deg)

    @property
    def div_h_rad(self) -> float:
        return radians(self.div_h_deg)

    @property
    def div_v_rad(self) -> float:
        return radians(self.div_v_deg)


@dataclass(frozen=True)
class CameraGeometry:
    hfov_deg: float = _knob(84.8, 0.0, 180.0, True, True)
    vfov_deg: float = _knob(65.3, 0.0, 180.0, True, True)
    native_w: int = _knob(1936, 1, 100_000)
    native_h: int = _knob(1464, 1, 100_000)
    rate_hz: float = _knob(35.0, 0.0, 1000.0, open_lo=True)
    binning: int = _knob(4, 1, 64)

    @property
    def width(self) -> int:
        return self.native_w // self.binning

    @property
    def height(self) -> int:
        return self.native_h // self.binning

    @property
    def period_ns(self) -> int:
        return int(round(1e9 / self.rate_hz))


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics at the binned resolution."""

    fx: float = _knob(224.23, 0.0, 1e6, open_lo=True)
    fy: float = _knob(226.22, 0.0, 1e6, open_lo=True)
    cx: float = _knob(246.68, 0.0, 1e6)
    cy: float = _knob(178.79, 0.0, 1e6)
    k1: float = _knob(-0.262286, -10.0, 10.0)
    k2: float = _knob(0.094721, -10.0, 10.0)
    width: int = _knob(484, 1, 100_000)
    height: int = _knob(366, 1, 100_000)
    profile: str = _knob("enclosure", choices=("enclosure", "open"))

    def scaled(self, factor: float) -> "CameraIntrinsics":
        return replace(
            self,
            fx=self.fx * factor,
            fy=self.fy * factor,
            cx=self.cx * factor,
            cy=self.cy * factor,
            width=int(round(self.width * factor)),
            height=int(round(self.height * factor)),
        )


# calibrated with the camera outside the enclosure
OPEN_INTRINSICS = CameraIntrinsics(
    fx=231.14,
    fy=230.66,
    cx=240.69,
    cy=182.70,
    k1=-0.246114,
    k2=0.097548,
    profile="open",
)

INTRINSIC_REPROJECTION_TARGET_PX = 0.08
EXTRINSIC_REPROJECTION_TARGET_PX = 2.0


@dataclass(frozen=True)
class BaselineConfig:
    offset_m: float = _knob(0.05, -1.0, 1.0)
    roll_deg: float = _knob(90.0, -180.0, 180.0)


@dataclass(frozen=True)
class DomeParams:
    inner_radius_m: float = _knob(0.10, 0.0, 1.0, open_lo=True)
    thickness_m: float = _knob(0.003, 0.0, 0.05, open_lo=True)
    refractive_index: float = _knob(1.584, 1.0, 2.0, open_hi=True)
    center_x_m: float = _knob(-0.07, -1.0, 1.0)
    center_y_m: float = _knob(0.005, -1.0, 1.0)
    center_z_m: float = _knob(0.0, -1.0, 1.0)
    scatter_gain: float = _knob(1.5, 1.0, 10.0)
    lut_step_deg: float = _knob(0.5, 0.05, 5.0, True, True)

    @property
    def outer_radius_m(self) -> float:
        return self.inner_radius_m + self.thickness_m

    @property
    def center_offset(self) -> Point3:
        return Point3(self.center_x_m, self.center_y_m, self.center_z_m)

    @property
    def path_offset_m(self) -> float:
        return self.thickness_m * (self.refractive_index - 1.0)


@dataclass(frozen=True)
class PipelineConfig:
    window_s: float = _knob(1.0, 0.0, 60.0, open_lo=True)
    ror_radius_m: float = _knob(0.20, 0.0, 10.0, open_lo=True)
    ror_min_neighbors: int = _knob(5, 0, 10_000)
    voxel_m: float = _knob(0.01, 0.001, 0.5, alias="voxel")
    enhancement_enabled: bool = _knob(False)
    threaded: bool = _knob(False)


@dataclass(frozen=True)
class WireConfig:
    cap_mbps: float = _knob(25.0, 0.0, 100_000.0, open_lo=True)
    host: str = _knob("0.0.0.0")
    port: int = _knob(7447, 0, 65535)
    stats_port: int = _knob(7448, 0, 65535)
    mode: str = _knob("delta", choices=("delta", "full"))
    queue_depth: int = _knob(8, 1, 1024)
    min_voxel_m: float = _knob(0.005, 0.001, 0.5)
    max_voxel_m: float = _knob(0.05, 0.001, 0.5)
    adjust_factor: float = _knob(1.25, 1.0, 10.0, open_lo=True)
    decimation_max: int = _knob(2, 1, 100)


@dataclass(frozen=True)
class SceneConfig:
    preset: str = _knob(
        "longwall",
        choices=(
            "longwall", "rect-target", "gap-board", "sync-target", "empty"
        ),
    )
    width_m: float = _knob(5.0, 0.0, 100.0, open_lo=True)
    length_m: float = _knob(18.0, 0.0, 1000.0, open_lo=True)
    height_m: float = _knob(3.0, 0.0, 100.0, open_lo=True)
    shearer_speed_mps: float = _knob(0.5, 0.0, 10.0)
    shearer_pulse_s: float = _knob(0.0, 0.0, 3600.0)
    target_distance_m: float = _knob(5.0, 0.1, 200.0)


@dataclass(frozen=True)
class ClockModel:
    true_offset_ms: float = _knob(32.0, -1000.0, 1000.0, True, True)
    drift_ppm: float = _knob(0.0, -1000.0, 1000.0)
    estimated_offset_ms: Optional[float] = _knob(None, -1000.0, 1000.0)


@dataclass(frozen=True)
class ImagingConfig:
    sensor_gain: float = _knob(62.0, 0.0, 1e6, open_lo=True)
    illumination_lux: float = _knob(7.0, 0.0, 1e6, open_lo=True)
    read_noise_dn: float = _knob(2.0, 0.0, 255.0)
    target_mean: float = _knob(120.0, 0.0, 255.0, True, True)
    detail_sigma_px: float = _knob(25.0, 0.0, 1000.0, open_lo=True)


@dataclass(frozen=True)
class SystemConfig:
    scanner: ScannerGeometry = field(default_factory=ScannerGeometry)
    camera: CameraGeometry = field(default_factory=CameraGeometry)
    intrinsics: CameraIntrinsics = field(default_factory=CameraIntrinsics)
    baseline: BaselineConfig = field(default_factory=BaselineConfig)
    dome: DomeParams = field(default_factory=DomeParams)
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    wire: WireConfig = field(default_factory=WireConfig)
    scene: SceneConfig = field(default_factory=SceneConfig)
    sync: ClockModel = field(default_factory=ClockModel)
    imaging: ImagingConfig = field(default_factory=ImagingConfig)


# file section -> SystemConfig attribute; "camera" keys spread over two
_SECTIONS = {
    "scanner": ("scanner",),
    "camera": ("camera", "intrinsics"),
    "baseline": ("baseline",),
    "dome": ("dome",),
    "pipeline": ("pipeline",),
    "wire": ("wire",),
    "scene": ("scene",),
    "sync": ("sync",),
    "imaging": ("imaging",),
}

_TRUE = ("1", "true", "yes", "on")
_FALSE = ("0", "false", "no", "off")


def _resolve(key: str) -> Tuple[str, Any]:
    section, _, name = key.partition(".")
    for attr in _SECTIONS.get(section, ()):
        klass = type(getattr(SystemConfig(), attr))
        for f in fields(klass):
            if name in (f.name, f.metadata.get("alias")):
                return attr, f
    raise KeyError(key)


def _coerce(key: str, f: Any, raw: str) -> Any:
    default = f.default if f.default is not MISSING else None
    if raw.lower() in ("none", "") and default is None:
        return None
    if isinstance(default, bool):
        lowered = raw.lower()
        if lowered in _TRUE:
            return True
        if lowered in _FALSE:
            return False
        raise ValueError("expected a boolean")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, str):
        return raw
    return float(raw)


def _check(key: str, f: Any, value: Any) -> None:
    choices = f.metadata.get("choices")
    if choices is not None and value not in choices:
        raise ConfigException(
            "{0} must be one of {1}, got {2!r}".format(key, choices, value)
        )
    lo, hi, open_lo, open_hi = f.metadata.get(
        "range", (None, None, False, False)
    )
    if value is None or isinstance(value, (bool, str)):
        return
    if value != value or value in (float("inf"), float("-inf")):
        raise ConfigException("{0} must be finite".format(key))
    below = lo is not None and (value <= lo if open_lo else value < lo)
    above = hi is not None and (value >= hi if open_hi else value > hi)
    if below or above:
        raise ConfigException(
            "{0}={1} is out of range {2}{3}, {4}{5}".format(
                key,
                value,
                "(" if open_lo else "[",
                lo,
                hi,
                ")" if open_hi else "]",
            )
        )


def validate(cfg: SystemConfig) -> SystemConfig:
    """Check every field range and the cross-field invariants."""
    for section, attrs in _SECTIONS.items():
        for attr in attrs:
            part = getattr(cfg, attr)
            for f in fields(part):
                _check(
                    "{0}.{1}".format(section, f.name),
                    f,
                    getattr(part, f.name),
                )
    if cfg.scanner.min_range_m >= cfg.scanner.max_range_m:
        raise ConfigException(
            "scanner.min_range_m must be below scanner.max_range_m"
        )
    if (
        cfg.camera.native_w % cfg.camera.binning
        or cfg.camera.native_h % cfg.camera.binning
    ):
        raise ConfigException(
            "camera.binning must divide camera.native_w and camera.native_h"
        )
    if cfg.wire.min_voxel_m > cfg.wire.max_voxel_m:
        raise ConfigException("wire.min_voxel_m exceeds wire.max_voxel_m")
    intr = cfg.intrinsics
    if not (0.0 <= intr.cx < intr.width and 0.0 <= intr.cy < intr.height):
        raise ConfigException(
            "principal point ({0}, {1}) lies outside the {2}x{3} image".format(
                intr.cx, intr.cy, intr.width, intr.height
            )
        )
    ratio = cfg.pipeline.window_s * cfg.scanner.rate_hz
    if abs(ratio - round(ratio)) > 1e-6 or round(ratio) < 1:
        raise ConfigException(
            "pipeline.window_s must be a multiple of the LiDAR period"
        )
    return cfg


def parse_overrides(lines: Any, source: str = "<config>") -> SystemConfig:
    """Build a SystemConfig from ``key = value`` lines over the defaults."""
    updates: Dict[str, Dict[str, Any]] = {}
    for lineno, line in enumerate(lines, start=1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        key, sep, raw = text.partition("=")
        key, raw = key.strip(), raw.strip()
        if not sep or not key:
            raise ConfigException(
                "{0}: parse failure at line {1}: expected key = value".format(
                    source, lineno
                )
            )
        try:
            attr, f = _resolve(key)
        except KeyError:
            raise ConfigException(
                "{0}: parse failure at line {1}: unknown key {2!r}".format(
                    source, lineno, key
                )
            ) from None
        try:
            value = _coerce(key, f, raw)
        except ValueError:
            raise ConfigException(
                "{0}: parse failure at line {1}: bad value {2!r} for {3}"
                .format(source, lineno, raw, key)
            ) from None
        _check(key, f, value)
        updates.setdefault(attr, {})[f.name] = value

    cfg = SystemConfig()
    intrinsic_updates = updates.pop("intrinsics", {})
    parts = {
        attr: replace(getattr(cfg, attr), **values)
        for attr, values in updates.items()
    }
    cfg = replace(cfg, **parts)
    base = (
        OPEN_INTRINSICS
        if intrinsic_updates.get("profile") == "open"
        else cfg.intrinsics
    )
    # intrinsics are stated at the binned image size
    sized = {"width": cfg.camera.width, "height": cfg.camera.height}
    sized.update(intrinsic_updates)
    return validate(replace(cfg, intrinsics=replace(base, **sized)))


def load_config(config_path: Optional[str] = None) -> SystemConfig:
    """
    Load a SystemConfig from a dotted key-value file.

    With no path, LONGWALL_CONFIG from the environment is used; when that is
    unset too, the defaults are returned.
    """
    if config_path is None:
        config_path = environment()["LONGWALL_CONFIG"]
    if config_path is None:
        return validate(SystemConfig())
    logger.debug("load_config(path='%s')", config_path)
    if not path.isfile(config_path):
        raise ConfigException(
            "config file {0} does not exist".format(config_path)
        )
    with open(config_path, "r", encoding="utf-8") as handle:
        return parse_overrides(handle.readlines(), source=config_path)


def config_fragment(key: str, value: float) -> str:
    """One-line fragment consumable by load_config."""
    return "{0} = {1:.6f}\n".format(key, value)
