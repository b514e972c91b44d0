"""
TCP streaming of fused frames.

One acceptor thread and one writer thread per subscriber. The publisher
encodes each frame once and hands the same bytes to every subscriber queue;
a full queue drops its oldest message so a slow reader never blocks the
pipeline. Bytes are metered only after the socket write returns.
"""
import socket
import time
from collections import deque
from threading import Condition, Event, Lock, Thread
from typing import (
    Callable,
    Deque,
    Iterable,
    Iterator,
    List,
    NamedTuple,
    Optional,
    Sequence,
    Tuple,
)

import numpy as np

from .exception import WireException
from .filters import ColoredCloud, voxel_downsample
from .governor import BandwidthStats, Governor, GovernorPolicy, GovernorState
from .log import logger
from .pipeline import FusedFrame
from .wire import FrameDecoder, encode_cloud, frame_message, message_size

Clock = Callable[[], float]

RECV_CHUNK = 65536
STATS_INTERVAL_S = 1.0


class _Meter:
    """Sliding record of (time, bytes, frames) events."""

    def __init__(self, clock: Clock, horizon_s: float = 60.0) -> None:
        self._clock = clock
        self._horizon_s = horizon_s
        self._events: Deque[Tuple[float, int, int]] = deque()
        self._lock = Lock()
        self.total_bytes = 0

    def add(self, nbytes: int = 0, frames: int = 0) -> None:
        now = self._clock()
        with self._lock:
            self._events.append((now, nbytes, frames))
            self.total_bytes += nbytes
            while self._events and now - self._events[0][0] > self._horizon_s:
                self._events.popleft()

    def window(self, window_s: float) -> Tuple[int, int]:
        since = self._clock() - window_s
        nbytes = frames = 0
        with self._lock:
            for stamp, b, f in reversed(self._events):
                if stamp < since:
                    break
                nbytes += b
                frames += f
        return nbytes, frames


class _Subscriber:
    def __init__(
        self,
        conn: socket.socket,
        address: Tuple[str, int],
        queue_depth: int,
        meter: _Meter,
    ) -> None:
        self.conn = conn
        self.address = address
        self.bytes_sent = 0
        self.dropped = 0
        self.closed = False
        self._queue: Deque[bytes] = deque(maxlen=queue_depth)
        self._ready = Condition()
        self._meter = meter
        self._thread = Thread(
            target=self._write, name="subscriber-{0}".format(address[1])
        )
        self._thread.daemon = True

    def start(self) -> None:
        self._thread.start()

    def offer(self, message: bytes) -> None:
        with self._ready:
            if len(self._queue) == self._queue.maxlen:
                self.dropped += 1
            self._queue.append(message)
            self._ready.notify()

    @property
    def pending(self) -> int:
        with self._ready:
            return len(self._queue)

    def close(self) -> None:
        with self._ready:
            self.closed = True
            self._ready.notify()

    def join(self, timeout: Optional[float] = None) -> None:
        self._thread.join(timeout)
        if self._thread.is_alive():
            # writer is stuck in sendall on a reader that stopped reading
            try:
                self.conn.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            self._thread.join(timeout)

    def _write(self) -> None:
        try:
            while True:
                with self._ready:
                    while not self._queue and not self.closed:
                        self._ready.wait()
                    if not self._queue:
                        return
                    message = self._queue.popleft()
                self.conn.sendall(message)
                self.bytes_sent += len(message)
                self._meter.add(len(message))
        except OSError as err:
            logger.warning(
                "subscriber %s:%i dropped: %s", *self.address[:2], err
            )
        finally:
            with self._ready:
                self.closed = True
                self._queue.clear()
            try:
                self.conn.close()
            except OSError:
                pass


def _listen(host: str, port: int) -> socket.socket:
    sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    try:
        sock.bind((host, port))
        sock.listen()
    except OSError as err:
        sock.close()
        raise WireException(
            "cannot bind {0}:{1}: {2}".format(host, port, err)
        ) from err
    return sock


class FrameServer:
    def __init__(
        self,
        host: str = "0.0.0.0",
        port: int = 7447,
        queue_depth: int = 8,
        stats_port: Optional[int] = None,
        clock: Clock = time.monotonic,
    ) -> None:
        self.host = host
        self.port = port
        self.queue_depth = queue_depth
        self.stats_port = stats_port
        self._clock = clock
        self._sent = _Meter(clock)
        self._published = _Meter(clock)
        self._subscribers: List[_Subscriber] = []
        self._lock = Condition()
        self._stop = Event()
        self._sock: Optional[socket.socket] = None
        self._stats_sock: Optional[socket.socket] = None
        self._threads: List[Thread] = []

    def __enter__(self) -> "FrameServer":
        return self.start()

    def __exit__(self, *exc_info: object) -> None:
        self.close()

    @property
    def clock(self) -> Clock:
        return self._clock

    @property
    def address(self) -> Tuple[str, int]:
        if self._sock is None:
            raise WireException("server is not started")
        return self._sock.getsockname()[:2]

    @property
    def stats_address(self) -> Optional[Tuple[str, int]]:
        if self._stats_sock is None:
            return None
        return self._stats_sock.getsockname()[:2]

    def start(self) -> "FrameServer":
        logger.debug(
            "FrameServer.start(host='%s', port=%i)", self.host, self.port
        )
        self._sock = _listen(self.host, self.port)
        self._spawn(self._accept, "acceptor")
        if self.stats_port is not None:
            self._stats_sock = _listen(self.host, self.stats_port)
            self._spawn(self._accept_stats, "stats-acceptor")
        return self

    def _spawn(
        self, target: Callable[..., None], name: str, *args: object
    ) -> None:
        thread = Thread(target=target, name=name, args=args)
        thread.daemon = True
        thread.start()
        self._threads.append(thread)

    def _accept(self) -> None:
        assert self._sock is not None
        while not self._stop.is_set():
            try:
                conn, address = self._sock.accept()
            except OSError:
                return
            conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            subscriber = _Subscriber(
                conn, address, self.queue_depth, self._sent
            )
            with self._lock:
                self._subscribers.append(subscriber)
                self._lock.notify_all()
            subscriber.start()
            logger.info("subscriber %s:%i connected", *address[:2])

    def _accept_stats(self) -> None:
        assert self._stats_sock is not None
        while not self._stop.is_set():
            try:
                conn, _ = self._stats_sock.accept()
            except OSError:
                return
            self._spawn(self._stats_writer, "stats-writer", conn)

    def _stats_writer(self, conn: socket.socket) -> None:
        with conn:
            while not self._stop.is_set():
                stats = self.bandwidth_stats(STATS_INTERVAL_S)
                line = "{0},{1:.3f},{2:.2f},{3}\n".format(
                    int(time.time() * 1000),
                    stats.megabits_per_s,
                    stats.frames_per_s,
                    self.subscriber_count,
                )
                try:
                    conn.sendall(line.encode("ascii"))
                except OSError:
                    return
                self._stop.wait(STATS_INTERVAL_S)

    def _live(self) -> List[_Subscriber]:
        with self._lock:
            self._subscribers = [s for s in self._subscribers if not s.closed]
            return list(self._subscribers)

    @property
    def subscriber_count(self) -> int:
        return len(self._live())

    def wait_for_subscribers(self, count: int, timeout_s: float) -> bool:
        deadline = self._clock() + timeout_s
        with self._lock:
            while len(self._subscribers) < count:
                remaining = deadline - self._clock()
                if remaining <= 0:
                    return False
                self._lock.wait(min(remaining, 0.1))
        return True

    def publish(self, payload: bytes) -> None:
        """Queue one encoded frame for every subscriber."""
        message = frame_message(payload)
        for subscriber in self._live():
            subscriber.offer(message)
        self._published.add(frames=1)

    def bandwidth_stats(self, window_s: float) -> BandwidthStats:
        nbytes, _ = self._sent.window(window_s)
        _, frames = self._published.window(window_s)
        return BandwidthStats.from_bytes(window_s, nbytes, frames)

    @property
    def bytes_sent(self) -> int:
        return self._sent.total_bytes

    def drain(self, timeout_s: float = 5.0) -> bool:
        deadline = self._clock() + timeout_s
        while any(s.pending for s in self._live()):
            if self._clock() >= deadline:
                return False
            time.sleep(0.01)
        return True

    def close(self) -> None:
        self._stop.set()
        for sock in (self._sock, self._stats_sock):
            if sock is not None:
                try:
                    sock.shutdown(socket.SHUT_RDWR)
                except OSError:
                    pass
                try:
                    sock.close()
                except OSError:
                    pass
        with self._lock:
            subscribers = list(self._subscribers)
        for subscriber in subscribers:
            subscriber.close()
        for subscriber in subscribers:
            subscriber.join(1.0)
        logger.debug("FrameServer.close(bytes_sent=%i)", self.bytes_sent)


class ServeSummary(NamedTuple):
    frames_in: int
    frames_sent: int
    bytes_sent: int
    state: GovernorState


def _concat(clouds: List[ColoredCloud]) -> ColoredCloud:
    if len(clouds) == 1:
        return clouds[0]
    return ColoredCloud(
        np.concatenate([c.positions for c in clouds]),
        np.concatenate([c.rgb for c in clouds]),
    )


def serve(
    server: FrameServer,
    frames: Iterable[FusedFrame],
    policy: GovernorPolicy,
    mode: str = "delta",
    keyframe_every: int = 10,
    rate_hz: Optional[float] = 10.0,
    min_subscribers: int = 0,
    wait_s: float = 10.0,
    drain_s: float = 5.0,
) -> ServeSummary:
    """
    Publish a frame stream through a started server until it ends.

    In delta mode a full-window keyframe goes out every keyframe_every
    frames and the newest-sweep clouds in between; frames skipped by
    decimation have their deltas merged into the next one sent. In full
    mode decimation sends every k-th frame. The
    governor is consulted once per second and its voxel size is applied by
    re-voxelising outgoing clouds.
    """
    if mode not in ("delta", "full"):
        raise WireException("unknown mode {0!r}".format(mode))
    if min_subscribers and not server.wait_for_subscribers(
        min_subscribers, wait_s
    ):
        raise WireException(
            "no {0} subscribers within {1} s".format(min_subscribers, wait_s)
        )
    governor = Governor(policy)
    clock = server.clock
    started = clock()
    next_consult = started + STATS_INTERVAL_S
    frames_in = frames_sent = 0
    since_keyframe = keyframe_every
    pending: List[ColoredCloud] = []
    for index, frame in enumerate(frames):
        frames_in += 1
        if rate_hz:
            delay = started + index / rate_hz - clock()
            if delay > 0:
                time.sleep(delay)
        now = clock()
        if now >= next_consult:
            stats = server.bandwidth_stats(STATS_INTERVAL_S)
            logger.info(
                "bandwidth: %.2f Mb/s, %.1f fps, %i subscribers",
                stats.megabits_per_s,
                stats.frames_per_s,
                server.subscriber_count,
            )
            governor.consult(stats, now)
            next_consult = now + STATS_INTERVAL_S
        state = governor.state
        if mode == "full":
            if index % state.decimation:
                continue
            keyframe = True
        else:
            keyframe = since_keyframe >= keyframe_every or frame.delta is None
            if not keyframe:
                pending.append(frame.delta)
            since_keyframe = 1 if keyframe else since_keyframe + 1
            # a scheduled keyframe is never dropped
            if index % state.decimation and not keyframe:
                continue
        cloud = frame.cloud if keyframe else _concat(pending)
        pending = []
        if state.voxel_m > policy.default_voxel_m:
            cloud = voxel_downsample(cloud, state.voxel_m)
        server.publish(
            encode_cloud(
                frame.frame_id,
                frame.t,
                cloud,
                frame.enhanced,
                delta=not keyframe,
            )
        )
        frames_sent += 1
    server.drain(drain_s)
    summary = ServeSummary(
        frames_in, frames_sent, server.bytes_sent, governor.state
    )
    logger.info(
        "serve: %i of %i frames sent, %i bytes",
        frames_sent,
        frames_in,
        summary.bytes_sent,
    )
    return summary


def _recv_frames(
    sock: socket.socket, decoder: FrameDecoder
) -> Iterator[FusedFrame]:
    while True:
        chunk = sock.recv(RECV_CHUNK)
        if not chunk:
            if decoder.pending:
                logger.warning(
                    "stream ended with %i undecoded bytes", decoder.pending
                )
            return
        yield from decoder.feed(chunk)


def subscribe(
    host: str, port: int, timeout_s: Optional[float] = None
) -> Iterator[FusedFrame]:
    """Connect to a frame server and yield frames until it closes."""
    logger.debug("subscribe(host='%s', port=%i)", host, port)
    try:
        sock = socket.create_connection((host, port), timeout=timeout_s)
    except OSError as err:
        raise WireException(
            "cannot connect to {0}:{1}: {2}".format(host, port, err)
        ) from err
    with sock:
        yield from _recv_frames(sock, FrameDecoder())


class Reconstruction:
    """
    Receiver-side cloud.

    A keyframe replaces the cloud; a delta frame is appended to it until the
    next keyframe arrives.
    """

    def __init__(self) -> None:
        self.cloud = ColoredCloud()
        self.frame_id: Optional[int] = None
        self.keyframes = 0
        self.deltas = 0

    def apply(self, frame: FusedFrame) -> ColoredCloud:
        if frame.is_delta:
            self.cloud = _concat([self.cloud, frame.cloud])
            self.deltas += 1
        else:
            self.cloud = frame.cloud
            self.keyframes += 1
        self.frame_id = frame.frame_id
        return self.cloud


def planned_mbps(
    frames: Sequence[FusedFrame],
    rate_hz: float,
    mode: str = "delta",
    keyframe_every: int = 10,
) -> float:
    """Stream rate serve would produce for frames without governor action."""
    if not frames:
        return 0.0
    total = 0
    for index, frame in enumerate(frames):
        keyframe = (
            mode == "full"
            or index % keyframe_every == 0
            or frame.delta is None
        )
        cloud = frame.cloud if keyframe else frame.delta
        total += message_size(len(cloud))
    return total * 8.0 * rate_hz / (len(frames) * 1e6)
