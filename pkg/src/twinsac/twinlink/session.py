"""Publisher and follower ends of a twin-link session over TCP.

Each side runs a reader thread and a writer (the calling thread). The halves
exchange data only through queues, and each piece of mutable session state
(latency window, divergence counters) is owned by exactly one thread.
"""

from __future__ import annotations

import logging
import queue
import socket
import statistics
import threading
import time
from collections import deque
from dataclasses import asdict, dataclass, field

import numpy as np

from twinsac.kinematics import N_JOINTS, ArmModel, fk_raw
from twinsac.twinlink.protocol import FrameDecoder, MsgType, ProtocolError, SeqTracker, TwinFrame, encode_frame

log = logging.getLogger(__name__)

_T0_WALL = time.time_ns()
_T0_MONO = time.monotonic_ns()


def hybrid_ns() -> int:
    """Wall-clock epoch anchored once, advanced by the monotonic clock."""
    return _T0_WALL + (time.monotonic_ns() - _T0_MONO)


def parse_address(text: str, default_host: str = "127.0.0.1") -> tuple:
    host, sep, port = text.rpartition(":")
    if not sep:
        return default_host, int(text)
    return (host or default_host), int(port)


class LatencyStats:
    """Sliding window of ACK round trips; one-way latency is half the median."""

    def __init__(self, window: int = 64, budget_ms: float = 20.0):
        self.rtt_samples = deque(maxlen=window)
        self.budget_ms = budget_ms
        self.violations = 0
        self.count = 0

    def add_rtt(self, rtt_ms: float) -> None:
        rtt_ms = max(0.0, float(rtt_ms))
        self.rtt_samples.append(rtt_ms)
        self.count += 1
        if rtt_ms / 2.0 > self.budget_ms:
            self.violations += 1

    @property
    def one_way_estimate_ms(self) -> float:
        if not self.rtt_samples:
            return float("nan")
        return statistics.median(self.rtt_samples) / 2.0

    def to_dict(self) -> dict:
        return {
            "one_way_estimate_ms": self.one_way_estimate_ms,
            "median_rtt_ms": statistics.median(self.rtt_samples) if self.rtt_samples else None,
            "samples": self.count,
            "window": len(self.rtt_samples),
            "budget_ms": self.budget_ms,
            "violations": self.violations,
            "within_budget": bool(self.rtt_samples) and self.one_way_estimate_ms <= self.budget_ms,
        }


@dataclass
class PublishSummary:
    frames_sent: int
    acks_received: int
    duration_s: float
    follower_disconnected: bool
    latency: dict

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class DivergenceReport:
    max_abs_delta: list = field(default_factory=lambda: [0.0] * N_JOINTS)
    max_aperture_delta: float = 0.0
    end_effector_gap: float = 0.0
    frames_received: int = 0
    frames_dropped: int = 0
    out_of_order: int = 0
    clamped_frames: int = 0
    clamp_events: int = 0
    last_state: list | None = None

    def to_dict(self) -> dict:
        return asdict(self)


class TwinLinkError(RuntimeError):
    pass


def _configure(sock: socket.socket) -> None:
    sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)


def _recv_frames(sock: socket.socket, decoder: FrameDecoder, bufsize: int = 65536):
    """Yield decoded frames until EOF."""
    while True:
        try:
            data = sock.recv(bufsize)
        except (ConnectionResetError, OSError):
            return
        if not data:
            return
        yield from decoder.feed(data)


def _await_hello(sock: socket.socket, decoder: FrameDecoder, timeout: float) -> list:
    """Block until a HELLO arrives; returns any frames received after it."""
    sock.settimeout(timeout)
    try:
        while True:
            data = sock.recv(65536)
            if not data:
                raise TwinLinkError("peer closed before handshake")
            frames = decoder.feed(data)
            for i, f in enumerate(frames):
                if f.msg_type is MsgType.HELLO:
                    return frames[i + 1 :]
    except socket.timeout:
        raise TwinLinkError("handshake timed out") from None
    finally:
        sock.settimeout(None)


def publish(
    source,
    bind=("127.0.0.1", 0),
    rate_hz: float = 50.0,
    budget_ms: float = 20.0,
    accept_timeout: float = 10.0,
    ack_wait: float = 2.0,
    on_listening=None,
) -> PublishSummary:
    """Serve one follower, streaming each 7-value joint state from ``source``.

    ``on_listening`` is called with the bound ``(host, port)`` once the socket
    accepts connections; useful with port 0.
    """
    if rate_hz <= 0:
        raise ValueError("rate_hz must be positive")
    srv = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    srv.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    try:
        srv.bind(tuple(bind))
    except OSError as exc:
        srv.close()
        raise TwinLinkError(f"cannot bind {bind}: {exc}") from exc
    srv.listen(1)
    srv.settimeout(accept_timeout)
    if on_listening is not None:
        on_listening(srv.getsockname())
    try:
        conn, peer = srv.accept()
    except socket.timeout:
        raise TimeoutError(f"no follower connected within {accept_timeout} s") from None
    finally:
        srv.close()
    log.info("follower connected from %s", peer)
    _configure(conn)

    decoder = FrameDecoder()
    stats = LatencyStats(budget_ms=budget_ms)
    acks = queue.Queue()
    try:
        pending = _await_hello(conn, decoder, accept_timeout)
        conn.sendall(encode_frame(TwinFrame.hello(0, hybrid_ns())))
    except (TwinLinkError, OSError) as exc:
        conn.close()
        raise TwinLinkError(f"handshake failed: {exc}") from exc

    def reader():
        # sole owner of ``stats`` while the session runs
        try:
            for f in pending:
                _on_frame(f)
            for f in _recv_frames(conn, decoder):
                _on_frame(f)
        except ProtocolError as exc:
            log.warning("protocol error from follower: %s", exc)
        acks.put(None)

    def _on_frame(f: TwinFrame):
        if f.msg_type is MsgType.ACK:
            stats.add_rtt((hybrid_ns() - f.ack_timestamp_ns) / 1e6)
            acks.put(f.ack_seq)

    reader_thread = threading.Thread(target=reader, name="twinlink-pub-reader", daemon=True)
    reader_thread.start()

    sent = 0
    disconnected = False
    period = 1.0 / rate_hz
    t_start = time.monotonic()
    for i, joints in enumerate(source):
        delay = t_start + i * period - time.monotonic()
        if delay > 0:
            time.sleep(delay)
        frame = TwinFrame.joint_state(i, hybrid_ns(), np.asarray(joints, dtype=np.float64).ravel()[:7])
        try:
            conn.sendall(encode_frame(frame))
        except OSError:
            disconnected = True
            break
        sent += 1

    received = 0
    deadline = time.monotonic() + ack_wait
    reader_done = False
    while received < sent and not reader_done:
        remaining = deadline - time.monotonic()
        if remaining <= 0:
            break
        try:
            item = acks.get(timeout=remaining)
        except queue.Empty:
            break
        if item is None:
            reader_done = True
        else:
            received += 1
    try:
        conn.shutdown(socket.SHUT_WR)
    except OSError:
        pass
    reader_thread.join(timeout=ack_wait)
    conn.close()
    if reader_done and received < sent:
        disconnected = True
    duration = time.monotonic() - t_start
    return PublishSummary(sent, received, duration, disconnected, stats.to_dict())


def follow(address, model: ArmModel | None = None, connect_timeout: float = 5.0) -> DivergenceReport:
    """Mirror a publisher's joint stream onto a local replica of ``model``."""
    model = model or ArmModel()
    try:
        sock = socket.create_connection(tuple(address), timeout=connect_timeout)
    except OSError as exc:
        raise ConnectionError(f"cannot connect to {address[0]}:{address[1]}: {exc}") from exc
    sock.settimeout(None)
    _configure(sock)
    decoder = FrameDecoder()
    outbox = queue.Queue()
    report = DivergenceReport()
    tracker = SeqTracker(first_seq={MsgType.JOINT_STATE: 0})
    lo, hi = model.lower, model.upper

    def writer():
        seq = 1
        while True:
            item = outbox.get()
            if item is None:
                return
            ack_seq, ack_ts = item
            try:
                sock.sendall(encode_frame(TwinFrame.ack(seq, hybrid_ns(), ack_seq, ack_ts)))
            except OSError:
                return
            seq += 1

    try:
        sock.sendall(encode_frame(TwinFrame.hello(0, hybrid_ns())))
        pending = _await_hello(sock, decoder, connect_timeout)
    except (TwinLinkError, OSError) as exc:
        sock.close()
        raise ConnectionError(f"handshake with publisher failed: {exc}") from exc

    writer_thread = threading.Thread(target=writer, name="twinlink-follow-writer", daemon=True)
    writer_thread.start()

    def apply(f: TwinFrame):
        if f.msg_type is not MsgType.JOINT_STATE:
            return
        fresh = tracker.observe(MsgType.JOINT_STATE, f.seq)
        outbox.put((f.seq, f.send_timestamp_ns))
        report.frames_received += 1
        if not fresh:
            return
        received = np.asarray(f.joints, dtype=np.float64)
        angles = np.minimum(np.maximum(received[:N_JOINTS], lo), hi)
        aperture = min(max(received[N_JOINTS], 0.0), model.max_aperture)
        n_clamped = int(np.count_nonzero(angles != received[:N_JOINTS])) + int(aperture != received[N_JOINTS])
        if n_clamped:
            report.clamped_frames += 1
            report.clamp_events += n_clamped
        delta = np.abs(angles - received[:N_JOINTS])
        report.max_abs_delta = np.maximum(report.max_abs_delta, delta).tolist()
        report.max_aperture_delta = max(report.max_aperture_delta, abs(aperture - received[N_JOINTS]))
        if n_clamped:
            ee = fk_raw(model, np.stack([angles, received[:N_JOINTS]]))[:, 0:3]
            gap = float(np.linalg.norm(ee[0] - ee[1]))
            report.end_effector_gap = max(report.end_effector_gap, gap)
        report.last_state = angles.tolist() + [float(aperture)]

    try:
        for f in pending:
            apply(f)
        for f in _recv_frames(sock, decoder):
            apply(f)
    finally:
        outbox.put(None)
        writer_thread.join(timeout=2.0)
        sock.close()
    report.frames_dropped = tracker.dropped
    report.out_of_order = tracker.out_of_order
    return report


class DelayRelay:
    """TCP relay that holds every chunk for ``delay_ms`` in each direction.

    A stand-in for a slow network path: point the follower at the relay and
    the relay at the publisher.
    """

    def __init__(self, target, delay_ms: float, bind=("127.0.0.1", 0)):
        self.target = tuple(target)
        self.delay = delay_ms / 1000.0
        self._srv = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._srv.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._srv.bind(tuple(bind))
        self._srv.listen(1)
        self.address = self._srv.getsockname()
        self._threads = []
        t = threading.Thread(target=self._accept, name="twinlink-relay", daemon=True)
        t.start()
        self._threads.append(t)

    def _accept(self):
        try:
            down, _ = self._srv.accept()
        except OSError:
            return
        up = socket.create_connection(self.target)
        for s in (down, up):
            _configure(s)
        for src, dst in ((down, up), (up, down)):
            q = queue.Queue()
            for fn in (self._pump_in, self._pump_out):
                t = threading.Thread(target=fn, args=(src, dst, q), daemon=True)
                t.start()
                self._threads.append(t)

    def _pump_in(self, src, dst, q):
        while True:
            try:
                data = src.recv(65536)
            except OSError:
                data = b""
            q.put((time.monotonic() + self.delay, data))
            if not data:
                return

    def _pump_out(self, src, dst, q):
        while True:
            due, data = q.get()
            wait = due - time.monotonic()
            if wait > 0:
                time.sleep(wait)
            try:
                if not data:
                    dst.shutdown(socket.SHUT_WR)
                    return
                dst.sendall(data)
            except OSError:
                return

    def close(self):
        self._srv.close()
