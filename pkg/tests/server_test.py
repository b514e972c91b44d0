import socket
import time
import unittest
from threading import Thread
from typing import Iterator, List, Tuple
from unittest.mock import PropertyMock, patch

import numpy as np

from longwall_fusion.exception import WireException
from longwall_fusion.filters import ColoredCloud
from longwall_fusion.geometry import Timestamp
from longwall_fusion.governor import (
    BandwidthStats,
    Governor,
    GovernorPolicy,
    GovernorState,
)
from longwall_fusion.pipeline import FusedFrame
from longwall_fusion.server import (
    FrameServer,
    Reconstruction,
    planned_mbps,
    serve,
    subscribe,
)
from longwall_fusion.wire import (
    FrameDecoder,
    encode_cloud,
    frame_message,
    message_size,
)


def cloud(n: int, value: float = 0.0) -> ColoredCloud:
    return ColoredCloud(
        np.full((n, 3), value), np.full((n, 3), 7, dtype=np.uint8)
    )


def fused(frame_id: int, n: int = 10, d: int = 2) -> FusedFrame:
    return FusedFrame(
        frame_id,
        Timestamp(frame_id * 100_000_000),
        cloud(n, float(frame_id)),
        delta=cloud(d, float(frame_id)),
    )


class Collector(Thread):
    """Subscribes in the background and keeps every frame received."""

    def __init__(self, address) -> None:
        super().__init__(daemon=True)
        self.address = address
        self.frames: List[FusedFrame] = []

    def run(self) -> None:
        for frame in subscribe(*self.address, timeout_s=10.0):
            self.frames.append(frame)


class SlowCollector(Collector):
    def __init__(self, address, pause_s: float) -> None:
        super().__init__(address)
        self.pause_s = pause_s

    def run(self) -> None:
        for frame in subscribe(*self.address, timeout_s=10.0):
            self.frames.append(frame)
            time.sleep(self.pause_s)


class RecordingServer:
    """
    Stands in for FrameServer on a simulated clock.

    Every published payload counts as delivered at the current time, so
    the bandwidth seen by the governor is exactly what serve produced.
    """

    def __init__(self) -> None:
        self.now = 0.0
        self.sent: List[Tuple[float, int, bytes]] = []
        self.consulted: List[Tuple[float, BandwidthStats]] = []

    @property
    def clock(self):
        return lambda: self.now

    @property
    def subscriber_count(self) -> int:
        return 1

    def publish(self, payload: bytes) -> None:
        self.sent.append((self.now, len(payload), payload))

    def bandwidth_stats(self, window_s: float) -> BandwidthStats:
        recent = [
            size
            for stamp, size, _ in self.sent
            if self.now - window_s <= stamp <= self.now
        ]
        stats = BandwidthStats.from_bytes(window_s, sum(recent), len(recent))
        self.consulted.append((self.now, stats))
        return stats

    def drain(self, timeout_s: float = 5.0) -> bool:
        return True

    @property
    def bytes_sent(self) -> int:
        return sum(size for _, size, _ in self.sent)

    def frame_ids(self) -> List[int]:
        return [
            FrameDecoder().feed(frame_message(payload))[0].frame_id
            for _, _, payload in self.sent
        ]


def grid(side: int = 80, spacing: float = 0.005) -> ColoredCloud:
    """Points at the centres of a side x side grid in the z = 0 plane."""
    ticks = (np.arange(side) + 0.5) * spacing
    x, y = np.meshgrid(ticks, ticks)
    positions = np.column_stack(
        [x.ravel(), y.ravel(), np.zeros(side * side)]
    )
    return ColoredCloud(
        positions, np.full((side * side, 3), 90, dtype=np.uint8)
    )


def forced(state: GovernorState):
    return patch.object(
        Governor, "state", new_callable=PropertyMock, return_value=state
    )


class ServeDecimationTest(unittest.TestCase):
    def test_full_mode_sends_every_other_frame(self):
        server = RecordingServer()
        with forced(GovernorState(0.01, decimation=2)):
            summary = serve(
                server,
                [fused(k) for k in range(10)],
                GovernorPolicy(),
                mode="full",
                rate_hz=None,
            )
        self.assertEqual(10, summary.frames_in)
        self.assertEqual(5, summary.frames_sent)
        self.assertEqual([0, 2, 4, 6, 8], server.frame_ids())

    def test_delta_mode_keeps_keyframes(self):
        server = RecordingServer()
        with forced(GovernorState(0.01, decimation=2)):
            serve(
                server,
                [fused(k) for k in range(11)],
                GovernorPolicy(),
                mode="delta",
                keyframe_every=5,
                rate_hz=None,
            )
        # 5 is odd but scheduled as a keyframe
        self.assertEqual([0, 2, 4, 5, 6, 8, 10], server.frame_ids())
        decoded = [
            FrameDecoder().feed(frame_message(payload))[0]
            for _, _, payload in server.sent
        ]
        # frames 1 and 2 arrive merged into one delta
        self.assertTrue(decoded[1].is_delta)
        self.assertEqual(4, len(decoded[1]))
        self.assertFalse(decoded[3].is_delta)


class ServeGovernorTest(unittest.TestCase):
    """The governor closed around serve on thirty simulated seconds."""

    rate_hz = 10.0

    def frames(self, server: RecordingServer) -> Iterator[FusedFrame]:
        window = grid()
        for k in range(int(30 * self.rate_hz)):
            server.now = k / self.rate_hz
            yield FusedFrame(k, Timestamp(k * 100_000_000), window)

    def test_rate_settles_under_cap(self):
        full = len(encode_cloud(0, Timestamp(0), grid()))
        full_mbps = full * 8.0 * self.rate_hz / 1e6
        policy = GovernorPolicy(
            cap_mbps=full_mbps / 2.5,
            min_voxel_m=0.005,
            default_voxel_m=0.005,
            max_voxel_m=0.05,
            decimation_max=2,
        )
        server = RecordingServer()
        summary = serve(
            server, self.frames(server), policy, mode="full", rate_hz=None
        )
        self.assertEqual(300, summary.frames_in)
        # decimation first, then one voxel step
        self.assertEqual(2, summary.state.decimation)
        self.assertAlmostEqual(0.00625, summary.state.voxel_m)
        first = server.consulted[0][1]
        self.assertGreater(first.megabits_per_s, 2 * policy.cap_mbps)
        late = [s for t, s in server.consulted if t >= 8.0]
        self.assertTrue(late)
        for stats in late:
            self.assertLess(stats.megabits_per_s, policy.cap_mbps)
            self.assertGreater(stats.megabits_per_s, 0.6 * policy.cap_mbps)
        # coarser voxels shrink the outgoing frames
        self.assertEqual(4096, (server.sent[-1][1] - 24) // 16)


class ServerTest(unittest.TestCase):
    def setUp(self) -> None:
        self.server = FrameServer("127.0.0.1", port=0, queue_depth=64)
        self.server.start()

    def tearDown(self) -> None:
        self.server.close()

    def collectors(self, count: int) -> List[Collector]:
        collectors = [Collector(self.server.address) for _ in range(count)]
        for c in collectors:
            c.start()
        self.assertTrue(self.server.wait_for_subscribers(count, 5.0))
        return collectors

    def finish(self, collectors: List[Collector]) -> None:
        self.assertTrue(self.server.drain(5.0))
        self.server.close()
        for c in collectors:
            c.join(5.0)
            self.assertFalse(c.is_alive())

    def test_single_subscriber_receives_every_frame(self):
        (collector,) = self.collectors(1)
        for k in range(50):
            self.server.publish(
                encode_cloud(k, Timestamp(k), cloud(k % 7, float(k)))
            )
        self.finish([collector])
        received = [f.frame_id for f in collector.frames]
        self.assertEqual(list(range(50)), received)
        self.assertEqual(cloud(3, 10.0), collector.frames[10].cloud)

    def test_two_subscribers_see_the_same_stream(self):
        collectors = self.collectors(2)
        for k in range(20):
            self.server.publish(encode_cloud(k, Timestamp(k), cloud(5)))
        self.finish(collectors)
        self.assertEqual(20, len(collectors[0].frames))
        self.assertEqual(collectors[0].frames, collectors[1].frames)

    def test_bandwidth_accounting(self):
        (collector,) = self.collectors(1)
        for k in range(10):
            self.server.publish(encode_cloud(k, Timestamp(k), cloud(100)))
        self.assertTrue(self.server.drain(5.0))
        # the writer meters after sendall returns; give it a moment
        deadline = time.monotonic() + 5.0
        while (
            self.server.bytes_sent < 10 * message_size(100)
            and time.monotonic() < deadline
        ):
            time.sleep(0.01)
        self.assertEqual(10 * message_size(100), self.server.bytes_sent)
        stats = self.server.bandwidth_stats(30.0)
        self.assertEqual(10 * message_size(100), stats.bytes_sent)
        self.assertAlmostEqual(10 / 30.0, stats.frames_per_s)
        self.finish([collector])

    def test_slow_subscriber_drops_oldest(self):
        server = FrameServer("127.0.0.1", port=0, queue_depth=2).start()
        reader = socket.create_connection(server.address)
        try:
            self.assertTrue(server.wait_for_subscribers(1, 5.0))
            payload = encode_cloud(0, Timestamp(0), cloud(100_000))
            started = time.monotonic()
            for _ in range(40):
                server.publish(payload)
            # publishing never waits on the socket
            self.assertLess(time.monotonic() - started, 2.0)
            (subscriber,) = server._live()
            self.assertGreater(subscriber.dropped, 0)
            self.assertLessEqual(subscriber.pending, 2)
        finally:
            server.close()
            reader.close()

    def test_slow_subscriber_sees_newest_frames_in_order(self):
        server = FrameServer("127.0.0.1", port=0, queue_depth=2).start()
        collector = SlowCollector(server.address, pause_s=0.02)
        collector.start()
        try:
            self.assertTrue(server.wait_for_subscribers(1, 5.0))
            big = cloud(50_000)
            for k in range(60):
                server.publish(encode_cloud(k, Timestamp(k), big))
            self.assertTrue(server.drain(10.0))
        finally:
            server.close()
        collector.join(10.0)
        self.assertFalse(collector.is_alive())
        received = [f.frame_id for f in collector.frames]
        self.assertLess(len(received), 60)
        self.assertTrue(all(a < b for a, b in zip(received, received[1:])))
        self.assertEqual(59, received[-1])

    def test_subscribe_refused(self):
        spare = socket.socket()
        spare.bind(("127.0.0.1", 0))
        port = spare.getsockname()[1]
        spare.close()
        with self.assertRaises(WireException):
            next(subscribe("127.0.0.1", port, timeout_s=2.0))

    def test_bind_failure(self):
        host, port = self.server.address
        self.assertRaises(WireException, FrameServer(host, port).start)

    def test_serve_delta_stream(self):
        (collector,) = self.collectors(1)
        frames = [fused(k) for k in range(12)]
        summary = serve(
            self.server,
            frames,
            GovernorPolicy(),
            mode="delta",
            keyframe_every=5,
            rate_hz=None,
        )
        self.assertEqual(12, summary.frames_in)
        self.assertEqual(12, summary.frames_sent)
        self.finish([collector])
        received = collector.frames
        self.assertEqual(
            [k for k in range(12) if k % 5 == 0],
            [f.frame_id for f in received if not f.is_delta],
        )
        reconstruction = Reconstruction()
        for frame in received:
            reconstruction.apply(frame)
        self.assertEqual(11, reconstruction.frame_id)
        self.assertEqual(3, reconstruction.keyframes)
        self.assertEqual(9, reconstruction.deltas)
        # keyframe 10 plus the delta of frame 11
        self.assertEqual(12, len(reconstruction.cloud))

    def test_serve_full_stream(self):
        (collector,) = self.collectors(1)
        serve(
            self.server,
            [fused(k) for k in range(4)],
            GovernorPolicy(),
            mode="full",
            rate_hz=None,
        )
        self.finish([collector])
        self.assertEqual([10] * 4, [len(f) for f in collector.frames])
        self.assertFalse(any(f.is_delta for f in collector.frames))

    def test_serve_rejects_unknown_mode(self):
        self.assertRaises(
            WireException, serve, self.server, [], GovernorPolicy(), "udp"
        )

    def test_planned_rate(self):
        frames = [fused(k) for k in range(10)]
        # keyframes 0 and 5 carry 10 points, the rest 2
        expected = (2 * message_size(10) + 8 * message_size(2)) * 8e-6
        self.assertAlmostEqual(
            expected, planned_mbps(frames, 10.0, "delta", keyframe_every=5)
        )
        self.assertAlmostEqual(
            message_size(10) * 8e-5, planned_mbps(frames, 10.0, "full")
        )
        self.assertEqual(0.0, planned_mbps([], 10.0))


class ReconstructionTest(unittest.TestCase):
    def test_keyframe_replaces_and_delta_appends(self):
        reconstruction = Reconstruction()
        reconstruction.apply(FusedFrame(0, Timestamp(0), cloud(4)))
        reconstruction.apply(
            FusedFrame(1, Timestamp(1), cloud(2, 1.0), is_delta=True)
        )
        self.assertEqual(6, len(reconstruction.cloud))
        np.testing.assert_array_equal(
            [0.0] * 4 + [1.0] * 2, reconstruction.cloud.positions[:, 0]
        )
        reconstruction.apply(FusedFrame(2, Timestamp(2), cloud(3)))
        self.assertEqual(3, len(reconstruction.cloud))
        self.assertEqual(2, reconstruction.keyframes)
        self.assertEqual(1, reconstruction.deltas)
