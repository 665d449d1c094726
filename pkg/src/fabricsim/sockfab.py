"""Real-socket adapter: the same wire frames over a TCP byte stream.

Kept behind the same transport surface as the simulated channels; the server
side delegates to the shared RequestHandler, so a log served here behaves
identically to one reached through the simulator (dedup included). Blocking,
one thread per connection; meant for interop checks and small deployments,
not performance.
"""

from __future__ import annotations

import socket
import struct
import threading
import time

from . import framing
from .errors import FrameError, PayloadTooLarge, SizeMismatch, TransportError
from .framing import STATUS_OK, STATUS_SIZE_MISMATCH, AppendRequest, SizeRequest
from .logstore import LogRegistry
from .transport import RequestHandler, _STATUS_ERRORS


def _wall_clock_us() -> int:
    return int(time.time() * 1e6)


def read_frame(sock: socket.socket) -> bytes | None:
    header = _read_exact(sock, 4)
    if header is None:
        return None
    (body_len,) = struct.unpack("<I", header)
    if body_len > framing.MAX_FRAME_BODY:
        raise FrameError(f"frame body {body_len} exceeds limit")
    body = _read_exact(sock, body_len)
    if body is None:
        raise FrameError("connection closed mid-frame")
    return header + body


def _read_exact(sock: socket.socket, n: int) -> bytes | None:
    buf = b""
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            if buf:
                raise FrameError("connection closed mid-frame")
            return None  # clean EOF between frames
        buf += chunk
    return buf


class SocketLogServer:
    """Serves a log registry on a TCP port using the standard frames."""

    def __init__(self, registry: LogRegistry, host: str = "127.0.0.1",
                 port: int = 0):
        self.handler = RequestHandler(registry, clock_us=_wall_clock_us)
        self._listener = socket.create_server((host, port))
        self.address = self._listener.getsockname()
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._serve, daemon=True)

    def start(self) -> "SocketLogServer":
        self._thread.start()
        return self

    def _serve(self) -> None:
        self._listener.settimeout(0.1)
        workers = []
        while not self._stop.is_set():
            try:
                conn, _ = self._listener.accept()
            except socket.timeout:
                continue
            except OSError:
                break
            worker = threading.Thread(target=self._session, args=(conn,), daemon=True)
            worker.start()
            workers.append(worker)
        for w in workers:
            w.join(timeout=1.0)

    def _session(self, conn: socket.socket) -> None:
        with conn:
            while not self._stop.is_set():
                try:
                    frame = read_frame(conn)
                except (FrameError, OSError):
                    return
                if frame is None:
                    return
                try:
                    msg = framing.decode(frame)
                except FrameError:
                    return
                reply = self.handler.handle(msg)
                if reply is not None:
                    conn.sendall(framing.encode(reply))

    def close(self) -> None:
        self._stop.set()
        self._listener.close()
        self._thread.join(timeout=2.0)


class SocketClient:
    """Sequential request/reply against a SocketLogServer."""

    def __init__(self, address: tuple[str, int], timeout_s: float = 5.0):
        self._sock = socket.create_connection(address, timeout=timeout_s)
        self._request_ids = iter(range(1, 2**62))
        self._cache: dict[str, int] = {}

    def _roundtrip(self, msg):
        self._sock.sendall(framing.encode(msg))
        frame = read_frame(self._sock)
        if frame is None:
            raise TransportError("server closed the connection")
        reply = framing.decode(frame)
        if reply.request_id != msg.request_id:
            raise TransportError("reply correlation mismatch")
        return reply

    def element_size(self, log_name: str) -> int:
        reply = self._roundtrip(SizeRequest(next(self._request_ids), log_name))
        if reply.status != STATUS_OK:
            raise _STATUS_ERRORS[reply.status](log_name)
        return reply.element_size

    def remote_append(self, log_name: str, payload: bytes,
                      message_id: bytes, use_cache: bool = False) -> int:
        if use_cache and log_name in self._cache:
            size = self._cache[log_name]
        else:
            size = self.element_size(log_name)
            if use_cache:
                self._cache[log_name] = size
        if len(payload) > size:
            raise PayloadTooLarge(f"payload {len(payload)} > element size {size}")
        reply = self._roundtrip(AppendRequest(next(self._request_ids), log_name,
                                              message_id, size, payload))
        if reply.status == STATUS_SIZE_MISMATCH:
            self._cache.pop(log_name, None)
            raise SizeMismatch(f"element size of {log_name!r} changed server-side")
        if reply.status != STATUS_OK:
            raise _STATUS_ERRORS.get(reply.status, TransportError)(log_name)
        return reply.seq

    def close(self) -> None:
        self._sock.close()
