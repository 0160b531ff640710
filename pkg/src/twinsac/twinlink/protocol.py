"""Twin-link wire format.

Every frame is a 4-byte big-endian payload length, an 18-byte header and the
payload::

    length u32 BE | "TWLK" | version u8 | msg_type u8 | seq u32 BE | send_ts_ns u64 BE | payload

Payloads are little-endian: JOINT_STATE carries 7 f64 (six joint angles in
radians, then gripper aperture in meters); ACK carries the echoed seq (u32)
and echoed send timestamp (u64); HEARTBEAT and HELLO are empty.

A protocol error is connection-fatal: the stream cannot be resynchronised
because the length prefix of a malformed frame cannot be trusted.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass

MAGIC = b"TWLK"
VERSION = 1
PREFIX = struct.Struct(">I")
HEADER = struct.Struct(">4sBBIQ")
PREFIX_SIZE = PREFIX.size
HEADER_SIZE = HEADER.size
FRAME_OVERHEAD = PREFIX_SIZE + HEADER_SIZE
MAX_PAYLOAD = 1 << 16

_JOINTS = struct.Struct("<7d")
_ACK = struct.Struct("<IQ")


class MsgType(enum.IntEnum):
    JOINT_STATE = 1
    HEARTBEAT = 2
    ACK = 3
    HELLO = 4


PAYLOAD_SIZE = {
    MsgType.JOINT_STATE: _JOINTS.size,
    MsgType.HEARTBEAT: 0,
    MsgType.ACK: _ACK.size,
    MsgType.HELLO: 0,
}


class ProtocolError(Exception):
    """Malformed bytes on the wire."""


class BadMagic(ProtocolError):
    pass


class UnsupportedVersion(ProtocolError):
    pass


class LengthMismatch(ProtocolError):
    pass


class UnknownMsgType(ProtocolError):
    pass


class IncompleteFrame(Exception):
    """More bytes are needed; ``needed`` is the minimum extra count."""

    def __init__(self, needed: int):
        self.needed = needed
        super().__init__(f"need {needed} more byte(s)")


@dataclass(frozen=True)
class TwinFrame:
    msg_type: MsgType
    seq: int
    send_timestamp_ns: int
    joints: tuple | None = None  # JOINT_STATE
    ack_seq: int | None = None  # ACK
    ack_timestamp_ns: int | None = None  # ACK
    version: int = VERSION

    @classmethod
    def joint_state(cls, seq: int, ts: int, joints) -> "TwinFrame":
        return cls(MsgType.JOINT_STATE, seq, ts, joints=tuple(float(v) for v in joints))

    @classmethod
    def ack(cls, seq: int, ts: int, ack_seq: int, ack_ts: int) -> "TwinFrame":
        return cls(MsgType.ACK, seq, ts, ack_seq=ack_seq, ack_timestamp_ns=ack_ts)

    @classmethod
    def heartbeat(cls, seq: int, ts: int) -> "TwinFrame":
        return cls(MsgType.HEARTBEAT, seq, ts)

    @classmethod
    def hello(cls, seq: int, ts: int) -> "TwinFrame":
        return cls(MsgType.HELLO, seq, ts)


def _payload(frame: TwinFrame) -> bytes:
    t = frame.msg_type
    if t is MsgType.JOINT_STATE:
        if frame.joints is None or len(frame.joints) != 7:
            raise ValueError("JOINT_STATE needs exactly 7 values")
        return _JOINTS.pack(*frame.joints)
    if t is MsgType.ACK:
        return _ACK.pack(frame.ack_seq, frame.ack_timestamp_ns)
    return b""


def encode_frame(frame: TwinFrame, payload: bytes | None = None) -> bytes:
    """Serialise ``frame``. ``payload`` overrides the typed payload (raw bytes)."""
    msg_type = MsgType(frame.msg_type)
    body = _payload(frame) if payload is None else bytes(payload)
    if len(body) > MAX_PAYLOAD:
        raise ValueError(f"payload of {len(body)} bytes exceeds {MAX_PAYLOAD}")
    if not 0 <= frame.seq < 1 << 32:
        raise ValueError("seq out of u32 range")
    if not 0 <= frame.send_timestamp_ns < 1 << 64:
        raise ValueError("timestamp out of u64 range")
    header = HEADER.pack(MAGIC, frame.version, msg_type, frame.seq, frame.send_timestamp_ns)
    return PREFIX.pack(len(body)) + header + body


def decode_frame(data, offset: int = 0) -> tuple:
    """Parse one frame starting at ``offset``.

    Returns ``(frame, consumed)``. Raises ``IncompleteFrame`` when the buffer
    ends early, or a ``ProtocolError`` subclass as soon as the available
    bytes prove the frame malformed. Nothing past the frame boundary is read.
    """
    view = memoryview(data)[offset:]
    n = len(view)
    if n < PREFIX_SIZE:
        raise IncompleteFrame(FRAME_OVERHEAD - n)
    (length,) = PREFIX.unpack_from(view)
    if length > MAX_PAYLOAD:
        raise LengthMismatch(f"declared payload {length} exceeds {MAX_PAYLOAD}")
    # validate header fields as soon as their bytes are present
    magic = bytes(view[PREFIX_SIZE : min(n, PREFIX_SIZE + 4)])
    if magic != MAGIC[: len(magic)]:
        raise BadMagic(f"bad magic {magic!r}")
    if n > PREFIX_SIZE + 4 and view[PREFIX_SIZE + 4] != VERSION:
        raise UnsupportedVersion(f"unsupported version {view[PREFIX_SIZE + 4]}")
    if n > PREFIX_SIZE + 5:
        raw_type = view[PREFIX_SIZE + 5]
        try:
            msg_type = MsgType(raw_type)
        except ValueError:
            raise UnknownMsgType(f"unknown message type {raw_type}") from None
        if PAYLOAD_SIZE[msg_type] != length:
            raise LengthMismatch(f"{msg_type.name} payload must be {PAYLOAD_SIZE[msg_type]} bytes, got {length}")
    total = FRAME_OVERHEAD + length
    if n < total:
        raise IncompleteFrame(total - n)

    _, version, raw_type, seq, ts = HEADER.unpack_from(view, PREFIX_SIZE)
    msg_type = MsgType(raw_type)
    body = view[FRAME_OVERHEAD:total]
    if msg_type is MsgType.JOINT_STATE:
        frame = TwinFrame(msg_type, seq, ts, joints=_JOINTS.unpack(body), version=version)
    elif msg_type is MsgType.ACK:
        ack_seq, ack_ts = _ACK.unpack(body)
        frame = TwinFrame(msg_type, seq, ts, ack_seq=ack_seq, ack_timestamp_ns=ack_ts, version=version)
    else:
        frame = TwinFrame(msg_type, seq, ts, version=version)
    return frame, total


class FrameDecoder:
    """Incremental decoder for a byte stream.

    After a protocol error the decoder stays failed and re-raises it; the
    caller is expected to drop the connection.
    """

    def __init__(self):
        self._buf = bytearray()
        self._error: ProtocolError | None = None

    @property
    def buffered(self) -> int:
        return len(self._buf)

    def feed(self, data: bytes) -> list:
        if self._error is not None:
            raise self._error
        self._buf += data
        snapshot = bytes(self._buf)
        frames = []
        pos = 0
        try:
            while True:
                try:
                    frame, used = decode_frame(snapshot, pos)
                except IncompleteFrame:
                    break
                frames.append(frame)
                pos += used
        except ProtocolError as exc:
            exc.frames = frames  # frames completed before the bad one
            self._error = exc
            del self._buf[:pos]
            raise
        del self._buf[:pos]
        return frames


class SeqTracker:
    """Per-message-type sequence accounting for one connection."""

    def __init__(self, first_seq: dict | None = None):
        # seeding with first_seq - 1 counts frames lost before the first arrival
        self._last: dict = {t: s - 1 for t, s in (first_seq or {}).items()}
        self.dropped = 0
        self.out_of_order = 0

    def observe(self, msg_type, seq: int) -> bool:
        """Record ``seq``; returns False if it is stale (not newer than the last)."""
        last = self._last.get(msg_type)
        if last is not None and seq <= last:
            self.out_of_order += 1
            return False
        if last is not None:
            self.dropped += seq - last - 1
        self._last[msg_type] = seq
        return True
