"""
Synthetic scenes.

A scene is a static list of axis-aligned boxes and finite axis-aligned
planes, plus an optional shearer box moving along the face (y axis). All
intersection routines are vectorised over rays.
"""
from dataclasses import dataclass, field, replace
from typing import List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from .config import SceneConfig
from .geometry import Point3, RigidTransform

# rays starting on a surface must not re-hit it
_EPS = 1e-9

RGB = Tuple[int, int, int]


@dataclass(frozen=True)
class Box:
    lo: Tuple[float, float, float]
    hi: Tuple[float, float, float]
    albedo: float = 0.5
    rgb: RGB = (128, 128, 128)
    alt_rgb: Optional[RGB] = None
    checker_m: float = 0.0
    name: str = "box"

    def translated(self, offset: np.ndarray) -> "Box":
        return replace(
            self,
            lo=tuple(np.add(self.lo, offset)),
            hi=tuple(np.add(self.hi, offset)),
        )


@dataclass(frozen=True)
class Plane:
    """Finite plane ``coord[axis] == offset`` bounded on the other axes."""

    axis: int
    offset: float
    lo: Tuple[float, float]
    hi: Tuple[float, float]
    albedo: float = 0.5
    rgb: RGB = (128, 128, 128)
    alt_rgb: Optional[RGB] = None
    checker_m: float = 0.0
    name: str = "plane"


Primitive = object


@dataclass(frozen=True)
class Shearer:
    box: Box
    velocity_mps: float = 0.5
    extent: Tuple[float, float] = (-9.0, 9.0)
    # cutting-speed modulation period; 0 keeps the speed constant
    pulse_period_s: float = 0.0

    def travelled(self, t: float) -> float:
        """Distance covered since t = 0 (speed v (1 - cos(2 pi t / T)))."""
        t = max(t, 0.0)
        if self.pulse_period_s <= 0.0:
            return self.velocity_mps * t
        w = 2.0 * np.pi / self.pulse_period_s
        return self.velocity_mps * (t - np.sin(w * t) / w)

    @property
    def start_y(self) -> float:
        return 0.5 * (self.box.lo[1] + self.box.hi[1])

    @property
    def half_length(self) -> float:
        return 0.5 * (self.box.hi[1] - self.box.lo[1])


@dataclass(frozen=True)
class Scene:
    primitives: Tuple[Primitive, ...] = ()
    shearer: Optional[Shearer] = None
    name: str = "custom"
    # region of interest used by dimensional / gap analyses
    target: Optional[Box] = None
    extras: dict = field(default_factory=dict, compare=False)

    def at(self, t: float) -> List[Primitive]:
        """Primitives with the shearer placed at time t."""
        prims = list(self.primitives)
        if self.shearer is not None:
            pose = shearer_pose(self, t)
            prims.append(
                self.shearer.box.translated(
                    pose.translation - _center(self.shearer.box)
                )
            )
        return prims


def _center(box: Box) -> np.ndarray:
    return 0.5 * (np.asarray(box.lo) + np.asarray(box.hi))


class Hits(NamedTuple):
    t: np.ndarray
    normal: np.ndarray
    albedo: np.ndarray
    rgb: np.ndarray
    index: np.ndarray


def shearer_pose(scene: Scene, t: float) -> RigidTransform:
    """
    Shearer pose at time t.

    The centre moves along y at the configured speed and reverses at the
    face extents (triangle wave), so it never leaves [lo + L/2, hi - L/2].
    """
    if scene.shearer is None:
        return RigidTransform.identity()
    shearer = scene.shearer
    box = shearer.box
    lo = shearer.extent[0] + shearer.half_length
    hi = shearer.extent[1] - shearer.half_length
    span = hi - lo
    y0 = min(max(shearer.start_y, lo), hi)
    if span <= 0.0 or shearer.velocity_mps == 0.0:
        y = y0
    else:
        # unfold onto a 2*span cycle starting at lo
        travelled = (y0 - lo) + shearer.travelled(t)
        phase = travelled % (2.0 * span)
        y = lo + (phase if phase <= span else 2.0 * span - phase)
    return RigidTransform.from_translation(
        [0.5 * (box.lo[0] + box.hi[0]), y, 0.5 * (box.lo[2] + box.hi[2])]
    )


def _box_hits(
    box: Box, origins: np.ndarray, dirs: np.ndarray
) -> Tuple[np.ndarray, np.ndarray]:
    lo = np.asarray(box.lo)
    hi = np.asarray(box.hi)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
        t1 = (lo - origins) * inv
        t2 = (hi - origins) * inv
    parallel = dirs == 0.0
    inside = (origins >= lo) & (origins <= hi)
    t1 = np.where(parallel, np.where(inside, -np.inf, np.inf), t1)
    t2 = np.where(parallel, np.where(inside, np.inf, -np.inf), t2)
    tnear = np.minimum(t1, t2)
    tfar = np.maximum(t1, t2)
    t_enter = tnear.max(axis=1)
    t_exit = tfar.min(axis=1)
    enter_axis = tnear.argmax(axis=1)
    exit_axis = tfar.argmin(axis=1)
    hit = (t_exit >= t_enter) & (t_exit > _EPS)
    from_outside = t_enter > _EPS
    t = np.where(hit, np.where(from_outside, t_enter, t_exit), np.inf)
    axis = np.where(from_outside, enter_axis, exit_axis)
    rows = np.arange(len(dirs))
    normal = np.zeros_like(dirs)
    normal[rows, axis] = -np.sign(dirs[rows, axis])
    return t, normal


def _plane_hits(
    plane: Plane, origins: np.ndarray, dirs: np.ndarray
) -> Tuple[np.ndarray, np.ndarray]:
    k = plane.axis
    others = [a for a in range(3) if a != k]
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (plane.offset - origins[:, k]) / dirs[:, k]
    t = np.where(np.isfinite(t) & (t > _EPS), t, np.inf)
    finite = np.isfinite(t)
    point = origins + dirs * np.where(finite, t, 0.0)[:, None]
    inside = np.ones(len(dirs), dtype=bool)
    for j, a in enumerate(others):
        inside &= (point[:, a] >= plane.lo[j]) & (point[:, a] <= plane.hi[j])
    t = np.where(finite & inside, t, np.inf)
    normal = np.zeros_like(dirs)
    normal[:, k] = -np.sign(dirs[:, k])
    return t, normal


def _surface_rgb(prim: Primitive, points: np.ndarray) -> np.ndarray:
    base = np.broadcast_to(
        np.asarray(prim.rgb, dtype=np.float64), points.shape
    )
    if not prim.checker_m or prim.alt_rgb is None:
        return np.array(base)
    cells = np.floor(points / prim.checker_m).astype(np.int64)
    if isinstance(prim, Plane):
        cells[:, prim.axis] = 0
    odd = (cells.sum(axis=1) % 2).astype(bool)
    return np.where(odd[:, None], np.asarray(prim.alt_rgb, float), base)


def intersect(
    scene: Scene, origins: np.ndarray, dirs: np.ndarray, t: float = 0.0
) -> Hits:
    """Nearest hit of every ray against all primitives at time t."""
    dirs = np.atleast_2d(np.asarray(dirs, dtype=np.float64))
    origins = np.broadcast_to(
        np.asarray(origins, dtype=np.float64), dirs.shape
    )
    n = len(dirs)
    best = np.full(n, np.inf)
    normal = np.zeros((n, 3))
    index = np.full(n, -1, dtype=np.int64)
    prims = scene.at(t)
    for i, prim in enumerate(prims):
        if isinstance(prim, Box):
            ti, ni = _box_hits(prim, origins, dirs)
        else:
            ti, ni = _plane_hits(prim, origins, dirs)
        closer = ti < best
        best = np.where(closer, ti, best)
        normal[closer] = ni[closer]
        index[closer] = i
    albedo = np.zeros(n)
    rgb = np.zeros((n, 3))
    points = origins + dirs * np.where(np.isfinite(best), best, 0.0)[:, None]
    for i, prim in enumerate(prims):
        mask = index == i
        if np.any(mask):
            albedo[mask] = prim.albedo
            rgb[mask] = _surface_rgb(prim, points[mask])
    return Hits(best, normal, albedo, rgb, index)


def raycast(
    scene: Scene,
    origin: Sequence[float],
    direction: Sequence[float],
    t: float = 0.0,
    min_range: float = 0.1,
    max_range: float = 200.0,
) -> Optional[Tuple[Point3, float]]:
    """
    Nearest intersection of one ray with the scene at time t.

    Returns the hit point and a Lambertian intensity (albedo times the
    cosine of incidence, clamped to [0, 1]); None when nothing is hit within
    max_range or the nearest hit is closer than min_range.
    """
    hits = intersect(scene, np.asarray(origin), np.asarray(direction), t)
    distance = float(hits.t[0])
    if not np.isfinite(distance) or distance > max_range:
        return None
    if distance < min_range:
        return None
    d = np.asarray(direction, dtype=np.float64)
    point = np.asarray(origin, dtype=np.float64) + distance * d
    cosine = abs(float(hits.normal[0] @ d))
    intensity = min(max(hits.albedo[0] * cosine, 0.0), 1.0)
    return Point3(*map(float, point)), intensity


def longwall(cfg: SceneConfig = SceneConfig()) -> Scene:
    """
    Longwall section seen from the roof-support line.

    The monitoring unit sits at the origin below the canopy, looking along +x
    at the face. Plane offsets sit mid-way between 1 cm cells so voxel
    counts are not split by rounding at the surfaces.
    """
    face_x = 2.505
    back_x = face_x - cfg.width_m
    roof_z = 1.005
    floor_z = roof_z - cfg.height_m
    half = 0.5 * cfg.length_m
    coal = (52, 48, 46)
    rock = (120, 112, 100)
    prims = (
        Plane(
            0,
            face_x,
            (-half, floor_z),
            (half, roof_z),
            albedo=0.25,
            rgb=coal,
            alt_rgb=(70, 64, 60),
            checker_m=0.4,
            name="face",
        ),
        Plane(
            0,
            back_x,
            (-half, floor_z),
            (half, roof_z),
            albedo=0.3,
            rgb=rock,
            name="goaf",
        ),
        Plane(
            2,
            roof_z,
            (back_x, -half),
            (face_x, half),
            albedo=0.45,
            rgb=rock,
            alt_rgb=(140, 132, 118),
            checker_m=0.5,
            name="roof",
        ),
        Plane(
            2,
            floor_z,
            (back_x, -half),
            (face_x, half),
            albedo=0.35,
            rgb=(90, 84, 78),
            name="floor",
        ),
        Plane(
            1,
            -half,
            (back_x, floor_z),
            (face_x, roof_z),
            albedo=0.3,
            rgb=rock,
            name="end-left",
        ),
        Plane(
            1,
            half,
            (back_x, floor_z),
            (face_x, roof_z),
            albedo=0.3,
            rgb=rock,
            name="end-right",
        ),
        Box(
            (1.305, -half, floor_z),
            (2.405, half, floor_z + 0.3),
            albedo=0.5,
            rgb=(150, 140, 40),
            name="conveyor",
        ),
        Box(
            (back_x, -half, floor_z),
            (-0.995, half, roof_z - 0.4),
            albedo=0.55,
            rgb=(200, 170, 30),
            alt_rgb=(90, 90, 90),
            checker_m=0.75,
            name="supports",
        ),
    )
    shearer = Shearer(
        Box(
            (1.505, -4.25, floor_z + 0.3),
            (2.405, -1.75, floor_z + 1.5),
            albedo=0.6,
            rgb=(210, 120, 30),
            name="shearer",
        ),
        velocity_mps=cfg.shearer_speed_mps,
        extent=(-half, half),
        pulse_period_s=cfg.shearer_pulse_s,
    )
    return Scene(prims, shearer, name="longwall")


def rect_target(distance_m: float = 5.0, size_m: float = 1.0) -> Scene:
    """Free-standing square board facing the scanner, no background."""
    h = 0.5 * size_m
    board = Plane(
        0,
        distance_m,
        (-h, -h),
        (h, h),
        albedo=0.8,
        rgb=(230, 230, 230),
        name="board",
    )
    target = Box((distance_m, -h, -h), (distance_m, h, h), name="board")
    return Scene((board,), None, name="rect-target", target=target)


def sync_target(cfg: SceneConfig = SceneConfig()) -> Scene:
    """
    Block shuttling in front of a wall, inside both sensor footprints.

    Its motion is the shared event stream used for clock-offset estimation.
    """
    wall = Plane(
        0,
        3.005,
        (-3.0, -2.0),
        (3.0, 2.0),
        albedo=0.4,
        rgb=(70, 70, 70),
        name="wall",
    )
    block = Box(
        (1.905, -0.2, -0.25),
        (2.205, 0.2, 0.25),
        albedo=0.7,
        rgb=(220, 200, 40),
        name="block",
    )
    shearer = Shearer(
        block,
        velocity_mps=cfg.shearer_speed_mps,
        extent=(-0.7, 0.7),
        pulse_period_s=cfg.shearer_pulse_s or 2.0,
    )
    return Scene((wall,), shearer, name="sync-target")


TOP_ROW_GAPS_MM = (1, 3, 5, 8, 10, 15, 20, 25)
MIDDLE_ROW_GAPS_MM = (30, 35, 40, 45, 50)


def _row(
    distance_m: float,
    z_lo: float,
    z_hi: float,
    gaps_mm: Sequence[int],
    width_m: float,
    proud_m: float,
) -> Tuple[List[Box], List[Tuple[float, float]]]:
    total = width_m * (len(gaps_mm) + 1) + sum(gaps_mm) / 1000.0
    y = -0.5 * total
    elements: List[Box] = []
    gaps: List[Tuple[float, float]] = []
    for i in range(len(gaps_mm) + 1):
        elements.append(
            Box(
                (distance_m - proud_m, y, z_lo),
                (distance_m, y + width_m, z_hi),
                albedo=0.8,
                rgb=(220, 220, 220),
                name="element",
            )
        )
        y += width_m
        if i < len(gaps_mm):
            gaps.append((y, y + gaps_mm[i] / 1000.0))
            y += gaps_mm[i] / 1000.0
    return elements, gaps


def gap_board(distance_m: float = 3.0) -> Scene:
    """
    Resolution board: three rows of elements standing proud of a backing.

    Top row gaps 1-25 mm, middle row 30-50 mm, bottom row of "<" shaped
    elements built from short stacked boxes. The backing sits 0.3 m behind
    so gaps read as range discontinuities.
    """
    proud = 0.05
    top, top_gaps = _row(distance_m, 0.15, 0.35, TOP_ROW_GAPS_MM, 0.06, proud)
    mid, mid_gaps = _row(
        distance_m, -0.10, 0.10, MIDDLE_ROW_GAPS_MM, 0.08, proud
    )
    chevrons: List[Box] = []
    for k in range(3):
        y0 = -0.3 + 0.25 * k
        for step in range(8):
            dz = 0.02 * step
            # arms meet at mid height, apex towards -y
            dy = 0.01 * abs(step - 3.5)
            chevrons.append(
                Box(
                    (distance_m - proud, y0 + dy, -0.35 + dz),
                    (distance_m, y0 + dy + 0.03, -0.33 + dz),
                    albedo=0.8,
                    rgb=(220, 220, 220),
                    name="chevron",
                )
            )
    backing = Plane(
        0,
        distance_m + 0.3,
        (-1.0, -0.8),
        (1.0, 0.8),
        albedo=0.4,
        rgb=(90, 90, 90),
        name="backing",
    )
    scene = Scene(
        tuple(top + mid + chevrons + [backing]),
        None,
        name="gap-board",
        target=Box((distance_m - proud, -1.0, -0.8), (distance_m, 1.0, 0.8)),
        extras={
            "rows": {
                "top": ((0.15, 0.35), top_gaps, TOP_ROW_GAPS_MM),
                "middle": ((-0.10, 0.10), mid_gaps, MIDDLE_ROW_GAPS_MM),
            },
            "proud_face_x": distance_m - proud,
        },
    )
    return scene


def checkerboard(
    distance_m: float = 1.5, squares: int = 9, square_m: float = 0.2
) -> Scene:
    """Planar checkerboard filling most of the camera view."""
    h = 0.5 * squares * square_m
    board = Plane(
        0,
        distance_m,
        (-h, -h),
        (h, h),
        albedo=0.9,
        rgb=(235, 235, 235),
        alt_rgb=(20, 20, 20),
        checker_m=square_m,
        name="checkerboard",
    )
    return Scene((board,), None, name="checkerboard")


def empty() -> Scene:
    return Scene((), None, name="empty")


def preset(cfg: SceneConfig) -> Scene:
    if cfg.preset == "longwall":
        return longwall(cfg)
    if cfg.preset == "rect-target":
        return rect_target(cfg.target_distance_m)
    if cfg.preset == "gap-board":
        return gap_board(cfg.target_distance_m)
    if cfg.preset == "sync-target":
        return sync_target(cfg)
    return empty()
