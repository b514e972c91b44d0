"""
Wire format.

A message is a 24-byte little-endian header followed by point_count
16-byte records::

    magic        4s   b"LWF1"
    version      u16
    point_stride u8   16
    flags        u8   bit0 enhancement applied, bit1 delta
    frame_id     u32
    timestamp_ns u64
    point_count  u32

    x, y, z      f32 metres, LiDAR frame
    rgb          u32  0x00RRGGBB

On a TCP stream every message is preceded by its length as a u32.
"""
import struct
from typing import List

import numpy as np

from .exception import (
    BadMagicException,
    LengthMismatchException,
    UnsupportedVersionException,
    WireException,
)
from .filters import ColoredCloud
from .geometry import Timestamp
from .pipeline import FusedFrame

MAGIC = b"LWF1"
VERSION = 1
POINT_STRIDE = 16
FLAG_ENHANCED = 0x01
FLAG_DELTA = 0x02

HEADER = struct.Struct("<4sHBBIQI")
LENGTH_PREFIX = struct.Struct("<I")
RECORD = np.dtype([("xyz", "<f4", (3,)), ("rgb", "<u4")])

assert HEADER.size == 24 and RECORD.itemsize == POINT_STRIDE


def _pack_rgb(rgb: np.ndarray) -> np.ndarray:
    rgb = rgb.astype(np.uint32)
    return (rgb[:, 0] << 16) | (rgb[:, 1] << 8) | rgb[:, 2]


def _unpack_rgb(packed: np.ndarray) -> np.ndarray:
    return np.column_stack(
        [(packed >> 16) & 0xFF, (packed >> 8) & 0xFF, packed & 0xFF]
    ).astype(np.uint8)


def encode_cloud(
    frame_id: int,
    t: Timestamp,
    cloud: ColoredCloud,
    enhanced: bool = False,
    delta: bool = False,
) -> bytes:
    count = len(cloud)
    if not 0 <= frame_id < 1 << 32:
        raise WireException(
            "frame_id {0} does not fit in 32 bits".format(frame_id)
        )
    if count >= 1 << 32:
        raise WireException("too many points: {0}".format(count))
    flags = (FLAG_ENHANCED if enhanced else 0) | (FLAG_DELTA if delta else 0)
    header = HEADER.pack(
        MAGIC, VERSION, POINT_STRIDE, flags, frame_id, t.nanos, count
    )
    records = np.empty(count, dtype=RECORD)
    if count:
        records["xyz"] = cloud.positions
        records["rgb"] = _pack_rgb(cloud.rgb)
    return header + records.tobytes()


def encode_frame(frame: FusedFrame, delta: bool = False) -> bytes:
    """
    Serialise a fused frame.

    With delta set the frame's newest-sweep cloud is sent instead of the
    full window.
    """
    cloud = frame.cloud
    if delta and frame.delta is not None:
        cloud = frame.delta
    return encode_cloud(
        frame.frame_id,
        frame.t,
        cloud,
        frame.enhanced,
        delta or frame.is_delta,
    )


def decode_frame(data: bytes) -> FusedFrame:
    """Inverse of encode_frame; rejects anything that is not exact."""
    if len(data) < HEADER.size:
        raise LengthMismatchException(HEADER.size, len(data))
    magic, version, stride, flags, frame_id, nanos, count = HEADER.unpack_from(
        data
    )
    if magic != MAGIC:
        raise BadMagicException("bad magic {0!r}".format(magic))
    if version != VERSION:
        raise UnsupportedVersionException(
            "unsupported wire version {0}".format(version)
        )
    if stride != POINT_STRIDE:
        raise WireException("unsupported point stride {0}".format(stride))
    expected = HEADER.size + count * POINT_STRIDE
    if len(data) != expected:
        raise LengthMismatchException(expected, len(data))
    records = np.frombuffer(
        data, dtype=RECORD, count=count, offset=HEADER.size
    )
    cloud = ColoredCloud(
        records["xyz"].astype(np.float64).reshape(-1, 3),
        _unpack_rgb(records["rgb"]),
    )
    return FusedFrame(
        frame_id,
        Timestamp(nanos),
        cloud,
        enhanced=bool(flags & FLAG_ENHANCED),
        is_delta=bool(flags & FLAG_DELTA),
    )


def frame_message(payload: bytes) -> bytes:
    return LENGTH_PREFIX.pack(len(payload)) + payload


class FrameDecoder:
    """
    Incremental length-prefixed stream decoder.

    Bytes can be fed in arbitrary pieces; complete frames are returned as
    soon as their last byte arrives.
    """

    def __init__(self) -> None:
        self._buffer = bytearray()

    def feed(self, data: bytes) -> List[FusedFrame]:
        self._buffer.extend(data)
        frames = []
        while len(self._buffer) >= LENGTH_PREFIX.size:
            (length,) = LENGTH_PREFIX.unpack_from(self._buffer)
            end = LENGTH_PREFIX.size + length
            if len(self._buffer) < end:
                break
            frames.append(
                decode_frame(bytes(self._buffer[LENGTH_PREFIX.size : end]))
            )
            del self._buffer[:end]
        return frames

    @property
    def pending(self) -> int:
        return len(self._buffer)


def message_size(point_count: int) -> int:
    """Bytes one frame occupies on a TCP stream, length prefix included."""
    return LENGTH_PREFIX.size + HEADER.size + POINT_STRIDE * point_count
