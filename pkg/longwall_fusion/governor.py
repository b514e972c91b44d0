"""
Bandwidth governor.

Keeps the sustained output rate under the link capacity by first dropping
fused frames (send every k-th) and then coarsening the voxel grid. When the
load falls well below the cap the changes are undone in reverse order, back
to the configured voxel size.
"""
from dataclasses import dataclass, replace
from threading import Lock
from typing import NamedTuple, Optional

from .config import SystemConfig
from .exception import FusionException
from .log import logger

RELAX_RATIO = 0.6
# a relaxation must leave at least this much headroom below the cap
HEADROOM_RATIO = 0.9
HOLD_S = 5.0


class BandwidthStats(NamedTuple):
    window_s: float
    megabits_per_s: float
    frames_per_s: float
    bytes_sent: int

    @classmethod
    def from_bytes(
        cls, window_s: float, bytes_sent: int, frames: int
    ) -> "BandwidthStats":
        if window_s <= 0:
            return cls(window_s, 0.0, 0.0, bytes_sent)
        return cls(
            window_s,
            bytes_sent * 8.0 / (window_s * 1e6),
            frames / window_s,
            bytes_sent,
        )


@dataclass(frozen=True)
class GovernorPolicy:
    cap_mbps: float = 25.0
    min_voxel_m: float = 0.005
    max_voxel_m: float = 0.05
    adjust_factor: float = 1.25
    decimation_max: int = 2
    default_voxel_m: float = 0.01
    hold_s: float = HOLD_S

    def __post_init__(self) -> None:
        if self.cap_mbps <= 0:
            raise FusionException("cap_mbps must be positive")
        if not 0 < self.min_voxel_m <= self.max_voxel_m:
            raise FusionException(
                "voxel bounds [{0}, {1}] are invalid".format(
                    self.min_voxel_m, self.max_voxel_m
                )
            )
        if self.adjust_factor <= 1.0:
            raise FusionException("adjust_factor must exceed 1")
        if self.decimation_max < 1:
            raise FusionException("decimation_max must be at least 1")

    @classmethod
    def from_config(cls, cfg: SystemConfig) -> "GovernorPolicy":
        wire = cfg.wire
        return cls(
            cap_mbps=wire.cap_mbps,
            min_voxel_m=wire.min_voxel_m,
            max_voxel_m=wire.max_voxel_m,
            adjust_factor=wire.adjust_factor,
            decimation_max=wire.decimation_max,
            default_voxel_m=cfg.pipeline.voxel_m,
        )

    def clamp(self, voxel_m: float) -> float:
        return min(max(voxel_m, self.min_voxel_m), self.max_voxel_m)

    @property
    def home_voxel_m(self) -> float:
        return self.clamp(self.default_voxel_m)


@dataclass(frozen=True)
class GovernorState:
    voxel_m: float
    decimation: int = 1
    last_change_s: Optional[float] = None

    @classmethod
    def initial(cls, policy: GovernorPolicy) -> "GovernorState":
        return cls(policy.home_voxel_m)


def _tighten(
    state: GovernorState, policy: GovernorPolicy
) -> Optional[GovernorState]:
    if state.decimation < policy.decimation_max:
        return replace(state, decimation=state.decimation + 1)
    if state.voxel_m < policy.max_voxel_m:
        return replace(
            state, voxel_m=policy.clamp(state.voxel_m * policy.adjust_factor)
        )
    return None


def _relax(
    state: GovernorState, policy: GovernorPolicy, mbps: float
) -> Optional[GovernorState]:
    home = policy.home_voxel_m
    if state.voxel_m > home:
        voxel = max(state.voxel_m / policy.adjust_factor, home)
        # surface point density goes with the inverse square of the voxel
        predicted = mbps * (state.voxel_m / voxel) ** 2
        candidate = replace(state, voxel_m=voxel)
    elif state.decimation > 1:
        k = state.decimation
        predicted = mbps * k / (k - 1)
        candidate = replace(state, decimation=k - 1)
    else:
        return None
    if predicted >= HEADROOM_RATIO * policy.cap_mbps:
        return None
    return candidate


def govern(
    stats: BandwidthStats,
    policy: GovernorPolicy,
    state: GovernorState,
    now_s: float,
) -> GovernorState:
    """
    One governor step.

    Returns the state unchanged unless the measured rate is over the cap or
    under RELAX_RATIO of it, and never changes anything within hold_s of the
    previous change.
    """
    if (
        state.last_change_s is not None
        and now_s - state.last_change_s < policy.hold_s
    ):
        return state
    mbps = stats.megabits_per_s
    if mbps > policy.cap_mbps:
        cause = "over cap"
        updated = _tighten(state, policy)
        if updated is None:
            logger.warning(
                "govern: %.2f Mb/s over %.2f cap at coarsest setting",
                mbps,
                policy.cap_mbps,
            )
            return state
    elif mbps < RELAX_RATIO * policy.cap_mbps:
        cause = "under relax threshold"
        updated = _relax(state, policy, mbps)
        if updated is None:
            return state
    else:
        return state
    updated = replace(updated, last_change_s=now_s)
    logger.info(
        "govern: %s (%.2f Mb/s, cap %.2f): voxel %.4f -> %.4f m, "
        "decimation %i -> %i",
        cause,
        mbps,
        policy.cap_mbps,
        state.voxel_m,
        updated.voxel_m,
        state.decimation,
        updated.decimation,
    )
    return updated


class Governor:
    """Thread-safe holder of the current governor state."""

    def __init__(self, policy: GovernorPolicy) -> None:
        self.policy = policy
        self._state = GovernorState.initial(policy)
        self._lock = Lock()

    @property
    def state(self) -> GovernorState:
        with self._lock:
            return self._state

    def consult(self, stats: BandwidthStats, now_s: float) -> GovernorState:
        with self._lock:
            self._state = govern(stats, self.policy, self._state, now_s)
            return self._state
