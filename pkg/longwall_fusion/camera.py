"""
Camera model and synthetic low-light imaging.

Pinhole projection with two-term radial distortion, a Lambertian renderer
with the light co-located with the camera, block binning, the analytic
illumination-map enhancer and the enclosure image effects. Images are
``(height, width, 3)`` uint8 arrays wrapped in ImageFrame.
"""
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import cv2
import numpy as np
from scipy.ndimage import gaussian_filter, map_coordinates

from .config import CameraGeometry, CameraIntrinsics, SystemConfig
from .exception import ImageException
from .geometry import (
    Point3,
    RigidTransform,
    Timestamp,
    invert,
    lidar_to_camera,
)
from .log import logger
from .scene import Scene, intersect

__all__ = [
    "CameraGeometry",
    "CameraIntrinsics",
    "ImageFrame",
    "camera_pose",
    "project",
    "project_points",
    "unproject",
    "render_image",
    "calibrate_sensor_gain",
    "bin_image",
    "enhance_low_light",
    "dome_image_effects",
    "read_ppm",
    "write_ppm",
]

_UNDISTORT_ITERATIONS = 20


def camera_pose(cfg: SystemConfig) -> RigidTransform:
    """LiDAR frame to camera optical frame for the configured mounting."""
    return lidar_to_camera(
        (0.0, cfg.baseline.offset_m, 0.0), cfg.baseline.roll_deg
    )


@dataclass(frozen=True, eq=False)
class ImageFrame:
    width: int
    height: int
    pixels: np.ndarray
    t_exposure: Timestamp = Timestamp(0)

    def __post_init__(self) -> None:
        pixels = np.asarray(self.pixels, dtype=np.uint8)
        if pixels.size != self.width * self.height * 3:
            raise ImageException(
                "pixel buffer holds {0} values, expected {1}".format(
                    pixels.size, self.width * self.height * 3
                )
            )
        object.__setattr__(
            self, "pixels", pixels.reshape(self.height, self.width, 3)
        )

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ImageFrame):
            return NotImplemented
        return self.t_exposure == other.t_exposure and np.array_equal(
            self.pixels, other.pixels
        )

    __hash__ = None  # type: ignore

    @classmethod
    def from_array(
        cls, pixels: np.ndarray, t_exposure: Timestamp = Timestamp(0)
    ) -> "ImageFrame":
        """Wrap an (H, W, 3) or (H, W) array, rounding half-up and clipping."""
        array = np.asarray(pixels)
        if array.ndim == 2:
            array = np.repeat(array[:, :, None], 3, axis=2)
        if array.dtype != np.uint8:
            array = np.clip(np.floor(array + 0.5), 0, 255).astype(np.uint8)
        return cls(array.shape[1], array.shape[0], array, t_exposure)

    @property
    def mean_brightness(self) -> float:
        return float(self.pixels.mean())

    def gray(self) -> np.ndarray:
        """Unweighted channel mean as float64 (H, W)."""
        return self.pixels.astype(np.float64).mean(axis=2)


def project_points(
    points: np.ndarray, intr: CameraIntrinsics
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Vectorised projection of (N, 3) camera-frame points.

    Returns (N, 2) pixel coordinates and a mask of points that are in front
    of the camera and land inside the image.
    """
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    z = points[:, 2]
    front = z > 0.0
    safe_z = np.where(front, z, 1.0)
    x = points[:, 0] / safe_z
    y = points[:, 1] / safe_z
    r2 = x * x + y * y
    radial = 1.0 + intr.k1 * r2 + intr.k2 * r2 * r2
    u = intr.fx * radial * x + intr.cx
    v = intr.fy * radial * y + intr.cy
    valid = (
        front
        & (u >= 0.0)
        & (u < intr.width)
        & (v >= 0.0)
        & (v < intr.height)
    )
    return np.column_stack([u, v]), valid


def project(
    p_cam: Point3, intr: CameraIntrinsics
) -> Optional[Tuple[float, float]]:
    uv, valid = project_points(np.asarray([p_cam], dtype=np.float64), intr)
    if not valid[0]:
        return None
    return float(uv[0, 0]), float(uv[0, 1])


def unproject(uv: np.ndarray, intr: CameraIntrinsics) -> np.ndarray:
    """
    Unit camera-frame rays for (N, 2) pixel coordinates.

    The distortion polynomial is inverted on the radius by Newton's method,
    started from the distorted radius.
    """
    uv = np.atleast_2d(np.asarray(uv, dtype=np.float64))
    xd = (uv[:, 0] - intr.cx) / intr.fx
    yd = (uv[:, 1] - intr.cy) / intr.fy
    rd = np.hypot(xd, yd)
    r = rd.copy()
    for _ in range(_UNDISTORT_ITERATIONS):
        r2 = r * r
        g = r * (1.0 + intr.k1 * r2 + intr.k2 * r2 * r2) - rd
        dg = 1.0 + 3.0 * intr.k1 * r2 + 5.0 * intr.k2 * r2 * r2
        r = r - g / dg
    scale = np.where(rd > 0.0, r / np.where(rd > 0.0, rd, 1.0), 1.0)
    rays = np.column_stack([xd * scale, yd * scale, np.ones_like(xd)])
    return rays / np.linalg.norm(rays, axis=1, keepdims=True)


def _pixel_grid(intr: CameraIntrinsics) -> np.ndarray:
    v, u = np.mgrid[0 : intr.height, 0 : intr.width]
    return np.column_stack([u.ravel(), v.ravel()]).astype(np.float64)


def _irradiance(
    scene: Scene,
    pose: RigidTransform,
    intr: CameraIntrinsics,
    t: float,
) -> np.ndarray:
    """Per-pixel reflected light per unit gain and lux, (H, W, 3)."""
    rays = unproject(_pixel_grid(intr), intr)
    cam_to_world = invert(pose)
    dirs = cam_to_world.apply_direction(rays)
    hits = intersect(scene, cam_to_world.translation, dirs, t)
    cosine = np.abs(np.einsum("ij,ij->i", hits.normal, dirs))
    # Lambertian: radiance = reflectance * E * cos / pi
    shade = np.where(np.isfinite(hits.t), cosine / np.pi, 0.0)
    reflectance = hits.rgb / 255.0
    return (reflectance * shade[:, None]).reshape(intr.height, intr.width, 3)


def render_image(
    scene: Scene,
    pose: RigidTransform,
    intr: CameraIntrinsics,
    illumination_lux: float,
    t: float = 0.0,
    sensor_gain: float = 62.0,
    read_noise_dn: float = 2.0,
    seed: int = 0,
) -> ImageFrame:
    """
    Render the scene as seen from pose (LiDAR frame into camera).

    DN = sensor_gain * lux * reflectance * cos / pi plus Gaussian read
    noise, quantised to 8 bits. Deterministic for a given seed.
    """
    if illumination_lux <= 0.0:
        raise ImageException(
            "illumination_lux must be positive, got {0}".format(
                illumination_lux
            )
        )
    signal = _irradiance(scene, pose, intr, t)
    signal *= sensor_gain * illumination_lux
    if read_noise_dn > 0.0:
        rng = np.random.default_rng(seed)
        signal += rng.normal(scale=read_noise_dn, size=signal.shape)
    logger.debug(
        "render_image(scene='%s', lux=%s, t=%s, %ix%i)",
        scene.name,
        illumination_lux,
        t,
        intr.width,
        intr.height,
    )
    return ImageFrame.from_array(signal, Timestamp.from_seconds(t))


def calibrate_sensor_gain(
    scene: Scene,
    pose: RigidTransform,
    intr: CameraIntrinsics,
    illumination_lux: float = 7.0,
    target_mean: float = 34.0,
    t: float = 0.0,
) -> float:
    """Gain that brings the noise-free reference render to target_mean."""
    signal = _irradiance(scene, pose, intr, t)
    mean = float(signal.mean()) * illumination_lux
    if mean <= 0.0:
        raise ImageException("reference render is black")
    gain = target_mean / mean
    logger.info(
        "calibrate_sensor_gain: %.4f (%.1f lux -> mean %.1f)",
        gain,
        illumination_lux,
        target_mean,
    )
    return gain


def bin_image(img: ImageFrame, factor: int) -> ImageFrame:
    """Average factor x factor blocks, rounding half-up."""
    if factor < 1 or img.width % factor or img.height % factor:
        raise ImageException(
            "binning factor {0} does not divide {1}x{2}".format(
                factor, img.width, img.height
            )
        )
    if factor == 1:
        return img
    h, w = img.height // factor, img.width // factor
    blocks = img.pixels.astype(np.float64).reshape(h, factor, w, factor, 3)
    return ImageFrame.from_array(blocks.mean(axis=(1, 3)), img.t_exposure)


def _apply_gain(
    pixels: np.ndarray, illumination: np.ndarray, target: float
) -> np.ndarray:
    peak = np.maximum(pixels.max(axis=2), 1.0)
    gain = np.clip(target / illumination, 1.0, 255.0 / peak)
    return np.clip(np.floor(pixels * gain[:, :, None] + 0.5), 0.0, 255.0)


def enhance_low_light(
    img: ImageFrame, target_mean: float = 120.0, detail_sigma: float = 25.0
) -> ImageFrame:
    """
    Illumination-map enhancement.

    The illumination map is a wide Gaussian blur of luminance. Every pixel
    is multiplied by target / map, never below 1 and never so far that its
    brightest channel clips; the target level is searched so the output
    mean lands on target_mean.
    """
    if not 0.0 < target_mean < 255.0:
        raise ImageException(
            "target_mean must lie in (0, 255), got {0}".format(target_mean)
        )
    if img.mean_brightness >= target_mean:
        return img
    pixels = img.pixels.astype(np.float64)
    illumination = np.maximum(
        gaussian_filter(pixels.mean(axis=2), detail_sigma, mode="nearest"),
        1.0,
    )
    lo, hi = 0.0, 255.0 * 64.0
    for _ in range(48):
        mid = 0.5 * (lo + hi)
        if _apply_gain(pixels, illumination, mid).mean() < target_mean:
            lo = mid
        else:
            hi = mid
    out = _apply_gain(pixels, illumination, hi)
    logger.debug(
        "enhance_low_light(mean_in=%.2f, mean_out=%.2f, level=%.2f)",
        img.mean_brightness,
        out.mean(),
        hi,
    )
    return ImageFrame.from_array(out, img.t_exposure)


def dome_image_effects(
    img: ImageFrame,
    channel_gains: Sequence[float] = (1.08, 1.0, 0.9),
    blur_sigma: float = 1.2,
    kappa: float = 0.06,
) -> ImageFrame:
    """
    Light path through the enclosure window.

    Applied in order: per-channel gain (colour cast), Gaussian blur
    (scatter) and barrel warp u' = u (1 + kappa r^2) about the image centre,
    r normalised by the half diagonal.
    """
    neutral = tuple(channel_gains) == (1.0, 1.0, 1.0)
    if neutral and blur_sigma == 0.0 and kappa == 0.0:
        return img
    pixels = img.pixels.astype(np.float64) * np.asarray(channel_gains)
    if blur_sigma > 0.0:
        pixels = gaussian_filter(
            pixels, (blur_sigma, blur_sigma, 0.0), mode="nearest"
        )
    if kappa != 0.0:
        h, w = img.height, img.width
        cy, cx = 0.5 * (h - 1), 0.5 * (w - 1)
        half_diag = np.hypot(cx, cy)
        v, u = np.mgrid[0:h, 0:w].astype(np.float64)
        du, dv = (u - cx) / half_diag, (v - cy) / half_diag
        factor = 1.0 + kappa * (du * du + dv * dv)
        src_u = cx + (u - cx) * factor
        src_v = cy + (v - cy) * factor
        pixels = np.stack(
            [
                map_coordinates(
                    pixels[:, :, c], [src_v, src_u], order=1, mode="nearest"
                )
                for c in range(3)
            ],
            axis=2,
        )
    return ImageFrame.from_array(pixels, img.t_exposure)


def write_ppm(img: ImageFrame) -> bytes:
    ok, encoded = cv2.imencode(
        ".ppm", cv2.cvtColor(img.pixels, cv2.COLOR_RGB2BGR)
    )
    if not ok:
        raise ImageException(
            "cannot encode a {0}x{1} PPM".format(img.width, img.height)
        )
    return encoded.tobytes()


def read_ppm(data: bytes, t_exposure: Timestamp = Timestamp(0)) -> ImageFrame:
    """Decode a binary (P6) PPM; comments in the header are allowed."""
    if data[:2] != b"P6":
        raise ImageException("not a binary PPM: {0!r}".format(data[:2]))
    pixels = cv2.imdecode(
        np.frombuffer(data, dtype=np.uint8), cv2.IMREAD_UNCHANGED
    )
    if pixels is None or pixels.ndim != 3:
        raise ImageException(
            "truncated or malformed PPM ({0} bytes)".format(len(data))
        )
    if pixels.dtype != np.uint8:
        raise ImageException("only 8-bit PPM is supported")
    return ImageFrame.from_array(
        cv2.cvtColor(pixels, cv2.COLOR_BGR2RGB), t_exposure
    )
