"""Length-prefixed binary wire format for the remote-append protocol.

Frame layout, all integers little-endian:

    u32  body length
    u8   message type (0x01 SizeRequest, 0x02 SizeReply,
                       0x03 AppendRequest, 0x04 AppendReply)
    ...  type-specific fields

Strings are u16 length + UTF-8 bytes; payloads are u32 length + bytes.
Every request carries a u64 request id that the matching reply echoes.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

from .errors import FrameError

TYPE_SIZE_REQUEST = 0x01
TYPE_SIZE_REPLY = 0x02
TYPE_APPEND_REQUEST = 0x03
TYPE_APPEND_REPLY = 0x04

STATUS_OK = 0
STATUS_UNKNOWN_LOG = 1
STATUS_PAYLOAD_TOO_LARGE = 2
STATUS_SIZE_MISMATCH = 3
STATUS_STORAGE_FAILURE = 4

STATUS_NAMES = {
    STATUS_OK: "ok",
    STATUS_UNKNOWN_LOG: "unknown-log",
    STATUS_PAYLOAD_TOO_LARGE: "payload-too-large",
    STATUS_SIZE_MISMATCH: "size-mismatch",
    STATUS_STORAGE_FAILURE: "storage-failure",
}

MAX_FRAME_BODY = 16 * 1024 * 1024


@dataclass(frozen=True)
class SizeRequest:
    request_id: int
    log_name: str


@dataclass(frozen=True)
class SizeReply:
    request_id: int
    status: int
    element_size: int


@dataclass(frozen=True)
class AppendRequest:
    request_id: int
    log_name: str
    message_id: bytes
    expected_element_size: int
    payload: bytes


@dataclass(frozen=True)
class AppendReply:
    request_id: int
    status: int
    seq: int  # 0 means "no sequence assigned"


Message = SizeRequest | SizeReply | AppendRequest | AppendReply


def _pack_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    if len(raw) > 0xFFFF:
        raise FrameError("string field too long")
    return struct.pack("<H", len(raw)) + raw


def _pack_bytes(b: bytes) -> bytes:
    return struct.pack("<I", len(b)) + b


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise FrameError("truncated frame body")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def u8(self) -> int:
        return self.take(1)[0]

    def u16(self) -> int:
        return struct.unpack("<H", self.take(2))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]

    def string(self) -> str:
        n = self.u16()
        try:
            return self.take(n).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FrameError("invalid UTF-8 in string field") from exc

    def blob(self) -> bytes:
        return self.take(self.u32())

    def done(self) -> None:
        if self.pos != len(self.buf):
            raise FrameError(f"{len(self.buf) - self.pos} trailing bytes in frame")


def encode(msg: Message) -> bytes:
    if isinstance(msg, SizeRequest):
        body = (bytes([TYPE_SIZE_REQUEST]) + struct.pack("<Q", msg.request_id)
                + _pack_str(msg.log_name))
    elif isinstance(msg, SizeReply):
        body = bytes([TYPE_SIZE_REPLY]) + struct.pack(
            "<QBI", msg.request_id, msg.status, msg.element_size)
    elif isinstance(msg, AppendRequest):
        if len(msg.message_id) != 16:
            raise FrameError("message_id must be 16 bytes")
        body = (bytes([TYPE_APPEND_REQUEST]) + struct.pack("<Q", msg.request_id)
                + _pack_str(msg.log_name) + bytes(msg.message_id)
                + struct.pack("<I", msg.expected_element_size)
                + _pack_bytes(msg.payload))
    elif isinstance(msg, AppendReply):
        body = bytes([TYPE_APPEND_REPLY]) + struct.pack(
            "<QBQ", msg.request_id, msg.status, msg.seq)
    else:
        raise FrameError(f"cannot encode {type(msg).__name__}")
    return struct.pack("<I", len(body)) + body


def decode(frame: bytes) -> Message:
    if len(frame) < 5:
        raise FrameError("frame shorter than header")
    (body_len,) = struct.unpack("<I", frame[:4])
    if body_len > MAX_FRAME_BODY:
        raise FrameError(f"frame body {body_len} exceeds limit")
    if len(frame) != 4 + body_len:
        raise FrameError(f"frame length mismatch: header says {body_len}, "
                         f"got {len(frame) - 4}")
    r = _Reader(frame[4:])
    mtype = r.u8()
    if mtype == TYPE_SIZE_REQUEST:
        msg: Message = SizeRequest(r.u64(), r.string())
    elif mtype == TYPE_SIZE_REPLY:
        msg = SizeReply(r.u64(), r.u8(), r.u32())
    elif mtype == TYPE_APPEND_REQUEST:
        msg = AppendRequest(r.u64(), r.string(), r.take(16), r.u32(), r.blob())
    elif mtype == TYPE_APPEND_REPLY:
        msg = AppendReply(r.u64(), r.u8(), r.u64())
    else:
        raise FrameError(f"unknown message type 0x{mtype:02x}")
    r.done()
    return msg
