"""Ordered, reliable frame channels between two parties.

Two implementations share one interface: in-memory queues for tests and
benchmarks, and stream sockets for the demo. A channel endpoint carries whole
frames; ``abort`` wakes a blocked receiver so a failed time step does not hang
the other parties.
"""

from __future__ import annotations

import queue
import socket
import threading

from .errors import ProtocolError
from .messages import frame_length

DEFAULT_TIMEOUT = 5.0
_ABORT = object()


class ChannelTimeout(ProtocolError):
    pass


class MemoryChannel:
    def __init__(self, inbox: queue.Queue, outbox: queue.Queue):
        self._inbox = inbox
        self._outbox = outbox

    def send(self, frame: bytes) -> None:
        self._outbox.put(bytes(frame))

    def recv(self, timeout: float | None = DEFAULT_TIMEOUT) -> bytes:
        try:
            item = self._inbox.get(timeout=timeout)
        except queue.Empty:
            raise ChannelTimeout(f"no message within {timeout} s") from None
        if item is _ABORT:
            raise ProtocolError("channel aborted by a failing party")
        return item

    def abort(self) -> None:
        self._inbox.put(_ABORT)

    def pending(self) -> int:
        return self._inbox.qsize()

    def drain(self) -> None:
        while True:
            try:
                self._inbox.get_nowait()
            except queue.Empty:
                return

    def close(self) -> None:
        pass


def memory_pair() -> tuple[MemoryChannel, MemoryChannel]:
    a, b = queue.Queue(), queue.Queue()
    return MemoryChannel(a, b), MemoryChannel(b, a)


class SocketChannel(MemoryChannel):
    """Frames over a stream socket; a reader thread reassembles frames so sends never block on the peer."""

    def __init__(self, sock: socket.socket):
        super().__init__(queue.Queue(), None)
        self._sock = sock
        self._lock = threading.Lock()
        self._reader = threading.Thread(target=self._read_loop, daemon=True)
        self._reader.start()

    def _read_exact(self, n: int) -> bytes | None:
        buf = bytearray()
        while len(buf) < n:
            chunk = self._sock.recv(n - len(buf))
            if not chunk:
                return None
            buf += chunk
        return bytes(buf)

    def _read_loop(self):
        try:
            while True:
                head = self._read_exact(4)
                if head is None:
                    break
                rest = self._read_exact(frame_length(head) - 4)
                if rest is None:
                    break
                self._inbox.put(head + rest)
        except (OSError, ProtocolError):
            pass
        self._inbox.put(_ABORT)

    def send(self, frame: bytes) -> None:
        with self._lock:
            try:
                self._sock.sendall(frame)
            except OSError as exc:
                raise ProtocolError(f"socket send failed: {exc}") from None

    def close(self) -> None:
        try:
            self._sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self._sock.close()


def socket_pair() -> tuple[SocketChannel, SocketChannel]:
    a, b = socket.socketpair()
    return SocketChannel(a), SocketChannel(b)


def tcp_pair(host: str = "127.0.0.1") -> tuple[SocketChannel, SocketChannel]:
    """Two endpoints of a loopback TCP connection."""
    with socket.create_server((host, 0)) as server:
        client = socket.create_connection(server.getsockname())
        conn, _ = server.accept()
    for s in (client, conn):
        s.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
    return SocketChannel(client), SocketChannel(conn)


TRANSPORTS = {"memory": memory_pair, "socket": socket_pair, "tcp": tcp_pair}
