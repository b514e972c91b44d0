"""Point-cloud filters: radius outlier removal and voxel-grid downsampling."""
from dataclasses import dataclass, field
from typing import Tuple, TypeVar, Union

import numpy as np
from scipy.spatial import cKDTree

from .exception import FusionException
from .scanner import PointCloudFrame


@dataclass(frozen=True, eq=False)
class ColoredCloud:
    """Positions (N, 3) float64 with per-point uint8 RGB (N, 3)."""

    positions: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    rgb: np.ndarray = field(
        default_factory=lambda: np.zeros((0, 3), dtype=np.uint8)
    )

    def __len__(self) -> int:
        return len(self.positions)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ColoredCloud):
            return NotImplemented
        return np.array_equal(
            self.positions, other.positions
        ) and np.array_equal(self.rgb, other.rgb)

    __hash__ = None  # type: ignore

    def select(self, mask: np.ndarray) -> "ColoredCloud":
        return ColoredCloud(self.positions[mask], self.rgb[mask])


Cloud = TypeVar("Cloud", PointCloudFrame, ColoredCloud)


def _select(cloud: Cloud, mask: np.ndarray) -> Cloud:
    return cloud.select(mask)


def ror_mask(
    positions: np.ndarray, radius_m: float, min_neighbors: int
) -> np.ndarray:
    """
    Points with at least min_neighbors others within radius_m (inclusive).

    Only the (min_neighbors + 1) nearest points are queried; the point
    itself is always among them at distance 0.
    """
    if radius_m <= 0:
        raise FusionException(
            "radius_m must be positive, got {0}".format(radius_m)
        )
    n = len(positions)
    if min_neighbors <= 0:
        return np.ones(n, dtype=bool)
    if n <= min_neighbors:
        return np.zeros(n, dtype=bool)
    tree = cKDTree(positions)
    distances, _ = tree.query(
        positions,
        k=min_neighbors + 1,
        distance_upper_bound=np.nextafter(radius_m, np.inf),
        workers=-1,
    )
    return distances[:, -1] <= radius_m


def radius_outlier_removal(
    cloud: Cloud, radius_m: float, min_neighbors: int
) -> Cloud:
    return _select(cloud, ror_mask(cloud.positions, radius_m, min_neighbors))


def voxel_indices(
    positions: np.ndarray, voxel_m: float
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Occupied voxels in ascending (ix, iy, iz) order.

    Returns the unique cells, the cell index of every point and the member
    count of every cell.
    """
    if voxel_m <= 0:
        raise FusionException(
            "voxel_m must be positive, got {0}".format(voxel_m)
        )
    cells = np.floor(positions / voxel_m).astype(np.int64)
    unique, inverse, counts = np.unique(
        cells, axis=0, return_inverse=True, return_counts=True
    )
    return unique, inverse.reshape(-1), counts


def _mean_by(
    inverse: np.ndarray, counts: np.ndarray, values: np.ndarray
) -> np.ndarray:
    sums = np.zeros((len(counts),) + values.shape[1:])
    np.add.at(sums, inverse, values)
    shape = (-1,) + (1,) * (values.ndim - 1)
    return sums / counts.reshape(shape)


def voxel_downsample(
    cloud: Union[PointCloudFrame, ColoredCloud], voxel_m: float
) -> Union[PointCloudFrame, ColoredCloud]:
    """
    One centroid per occupied voxel.

    Colours are averaged per channel and rounded half-up; for LiDAR frames
    intensity is averaged and dt_ns takes the earliest member.
    """
    if len(cloud) == 0:
        return cloud
    _, inverse, counts = voxel_indices(cloud.positions, voxel_m)
    positions = _mean_by(inverse, counts, cloud.positions)
    if isinstance(cloud, ColoredCloud):
        rgb = _mean_by(inverse, counts, cloud.rgb.astype(np.float64))
        return ColoredCloud(
            positions, np.floor(rgb + 0.5).astype(np.uint8)
        )
    intensity = _mean_by(inverse, counts, cloud.intensity)
    dt_ns = np.full(len(counts), np.iinfo(np.int64).max, dtype=np.int64)
    np.minimum.at(dt_ns, inverse, cloud.dt_ns)
    return PointCloudFrame(
        cloud.frame_id, cloud.t0, positions, intensity, dt_ns
    )
