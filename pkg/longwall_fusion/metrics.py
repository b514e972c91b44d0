"""Image-quality metrics for the enhancer and the enclosure comparison."""
from dataclasses import astuple, dataclass, fields
from typing import Dict, Optional, Tuple

import numpy as np
from scipy.ndimage import correlate1d
from skimage.filters import threshold_otsu
from skimage.transform import hough_line, hough_line_peaks

from .camera import ImageFrame
from .config import CameraIntrinsics
from .exception import ImageException
from .log import logger

HOUGH_MIN_SUPPORT = 30
# half-width of the strip of edge pixels a detected line is refit to
REFINE_BAND_PX = 2.5
_CENTRAL = np.array([-0.5, 0.0, 0.5])
_HOUGH_THETA_DEG = np.arange(-90.0, 90.0, 1.0)


def gradients(img: ImageFrame) -> Tuple[np.ndarray, np.ndarray]:
    """Central-difference gradients of the channel-mean image."""
    gray = img.gray()
    gx = correlate1d(gray, _CENTRAL, axis=1, mode="nearest")
    gy = correlate1d(gray, _CENTRAL, axis=0, mode="nearest")
    return gx, gy


def gradient_magnitude(img: ImageFrame) -> np.ndarray:
    gx, gy = gradients(img)
    return np.hypot(gx, gy)


def delta_rgb(a: ImageFrame, b: ImageFrame) -> float:
    if (a.width, a.height) != (b.width, b.height):
        raise ImageException(
            "dimension mismatch: {0}x{1} vs {2}x{3}".format(
                a.width, a.height, b.width, b.height
            )
        )
    mean_a = a.pixels.reshape(-1, 3).astype(np.float64).mean(axis=0)
    mean_b = b.pixels.reshape(-1, 3).astype(np.float64).mean(axis=0)
    return float(np.linalg.norm(mean_a - mean_b))


def sharpness(img: ImageFrame) -> float:
    return float(gradient_magnitude(img).mean())


def _edge_threshold(magnitude: np.ndarray) -> float:
    if magnitude.max() == magnitude.min():
        return float(magnitude.max())
    return float(threshold_otsu(magnitude))


def edge_pixels(
    img: ImageFrame, threshold: Optional[float] = None
) -> Tuple[np.ndarray, np.ndarray]:
    magnitude = gradient_magnitude(img)
    if threshold is None:
        threshold = _edge_threshold(magnitude)
    return magnitude > threshold, magnitude


def edge_strength(img: ImageFrame, threshold: Optional[float] = None) -> float:
    """Mean gradient magnitude over edge pixels (Otsu when no threshold)."""
    if threshold is not None and threshold < 0:
        raise ImageException("threshold must be non-negative")
    edges, magnitude = edge_pixels(img, threshold)
    if not np.any(edges):
        return 0.0
    return float(magnitude[edges].mean())


def _principal_angle_deg(rows: np.ndarray, cols: np.ndarray) -> float:
    """Direction of the principal axis of a pixel set, in (-90, 90]."""
    x = cols - cols.mean()
    y = rows - rows.mean()
    sxx, syy, sxy = np.dot(x, x), np.dot(y, y), np.dot(x, y)
    return float(np.rad2deg(0.5 * np.arctan2(2.0 * sxy, sxx - syy)))


def line_straightness(img: ImageFrame) -> float:
    """
    Support-weighted angular deviation of Hough lines from the image axes.

    Lines are voted from the edge pixels with 1 degree / 1 px bins; peaks
    need at least HOUGH_MIN_SUPPORT votes. Each line's angle is then refit
    to the edge pixels within REFINE_BAND_PX of it, so the result is not
    tied to the bin width. Returns degrees, 0 when no line is found.
    """
    edges, _ = edge_pixels(img)
    if np.count_nonzero(edges) < HOUGH_MIN_SUPPORT:
        return 0.0
    hspace, angles, dists = hough_line(
        edges, theta=np.deg2rad(_HOUGH_THETA_DEG)
    )
    votes, peak_angles, peak_dists = hough_line_peaks(
        hspace, angles, dists, threshold=HOUGH_MIN_SUPPORT
    )
    if len(votes) == 0:
        return 0.0
    rows, cols = np.nonzero(edges)
    rows, cols = rows.astype(np.float64), cols.astype(np.float64)
    deviation = np.empty(len(votes))
    for k, (angle, dist) in enumerate(zip(peak_angles, peak_dists)):
        near = (
            np.abs(cols * np.cos(angle) + rows * np.sin(angle) - dist)
            <= REFINE_BAND_PX
        )
        if np.count_nonzero(near) >= 2:
            direction = abs(_principal_angle_deg(rows[near], cols[near]))
        else:
            # normal angle; deviation from either axis is symmetric
            direction = abs(np.rad2deg(angle))
        direction = round(direction, 9)
        deviation[k] = min(direction, 90.0 - direction)
    weights = votes.astype(np.float64)
    result = float(np.sum(weights * deviation) / np.sum(weights))
    logger.debug(
        "line_straightness(lines=%i, deviation=%.4f)", len(votes), result
    )
    return result


def orientation_histogram(img: ImageFrame, bins: int = 36) -> np.ndarray:
    """Magnitude-weighted histogram of gradient orientation over [0, 180)."""
    gx, gy = gradients(img)
    orientation = np.degrees(np.arctan2(gy, gx)) % 180.0
    hist, _ = np.histogram(
        orientation, bins=bins, range=(0.0, 180.0), weights=np.hypot(gx, gy)
    )
    total = hist.sum()
    return hist / total if total > 0 else hist


def orientation_correlation(a: ImageFrame, b: ImageFrame) -> float:
    ha, hb = orientation_histogram(a), orientation_histogram(b)
    if ha.std() == 0.0 or hb.std() == 0.0:
        return 1.0 if np.allclose(ha, hb) else 0.0
    return float(np.corrcoef(ha, hb)[0, 1])


@dataclass(frozen=True)
class ImageMetricsReport:
    delta_rgb: float
    sharpness: float
    edge_strength: float
    straightness_deg: float
    mean_brightness: float

    @classmethod
    def header(cls) -> str:
        return ",".join(f.name for f in fields(cls))

    def to_row(self) -> str:
        return ",".join("{0:.6f}".format(v) for v in astuple(self))


def image_metrics(
    img: ImageFrame, reference: Optional[ImageFrame] = None
) -> ImageMetricsReport:
    """Metric suite; delta_rgb is taken against reference (0 without one)."""
    return ImageMetricsReport(
        delta_rgb(img, reference) if reference is not None else 0.0,
        sharpness(img),
        edge_strength(img),
        line_straightness(img),
        img.mean_brightness,
    )


def metrics_csv(reports: Dict[str, ImageMetricsReport]) -> str:
    lines = ["label," + ImageMetricsReport.header()]
    for label, report in reports.items():
        lines.append("{0},{1}".format(label, report.to_row()))
    return "\n".join(lines) + "\n"


def intrinsics_shift(
    enclosure: CameraIntrinsics, reference: CameraIntrinsics
) -> Dict[str, float]:
    """Focal and principal-point change introduced by the enclosure."""
    return {
        "d_fx": enclosure.fx - reference.fx,
        "d_fy": enclosure.fy - reference.fy,
        "d_cx": enclosure.cx - reference.cx,
        "d_cy": enclosure.cy - reference.cy,
        "d_k1": enclosure.k1 - reference.k1,
        "d_k2": enclosure.k2 - reference.k2,
    }
