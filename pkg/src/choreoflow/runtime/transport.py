"""Reliable ordered channels between location instances.

Both transports deliver the same events into a receiving worker's inbox:
``("open", ch, None)`` when a sender connects, ``("data", ch, values)``
for a batch of decoded elements, ``("eos", ch, None)`` when a sender
finishes, and ``("error", ch, exc)`` when a connection fails.

The in-memory transport still runs every element through the codec so
both transports accept exactly the same values.
"""

from __future__ import annotations

import queue
import socket
import threading
import time

from . import codec
from .errors import BindError, ChannelClosed, DecodeError, HandshakeTimeout

FLUSH_BYTES = 1 << 16
FLUSH_ITEMS = 512
RECV_CHUNK = 1 << 18


class MemoryListener:
    def __init__(self, network: "MemoryTransport", key: str):
        self.network = network
        self.key = key
        self.inbox: queue.SimpleQueue = queue.SimpleQueue()

    def close(self) -> None:
        with self.network._lock:
            self.network._inboxes.pop(self.key, None)


class MemoryConnection:
    def __init__(self, inbox: queue.SimpleQueue, channel: int):
        self.inbox = inbox
        self.channel = channel
        self.sent = 0
        self._batch: list = []
        inbox.put(("open", channel, None))

    def send(self, value) -> None:
        self._batch.append(codec.decode(codec.encode(value)))
        self.sent += 1
        if len(self._batch) >= FLUSH_ITEMS:
            self.flush()

    def flush(self) -> None:
        if self._batch:
            self.inbox.put(("data", self.channel, self._batch))
            self._batch = []

    def close(self) -> None:
        self.flush()
        self.inbox.put(("eos", self.channel, None))

    def abort(self) -> None:
        self.inbox.put(("error", self.channel, ChannelClosed(f"sender on channel {self.channel} aborted")))


class MemoryTransport:
    """In-process network shared by worker threads of one run."""

    def __init__(self):
        self._lock = threading.Lock()
        self._inboxes: dict[str, queue.SimpleQueue] = {}

    def listen(self, key: str, addr: str, port: int) -> MemoryListener:
        listener = MemoryListener(self, key)
        with self._lock:
            if key in self._inboxes:
                raise BindError(f"{key} is already listening")
            self._inboxes[key] = listener.inbox
        return listener

    def connect(self, channel: int, key: str, addr: str, port: int, deadline: float) -> MemoryConnection:
        while True:
            with self._lock:
                inbox = self._inboxes.get(key)
            if inbox is not None:
                return MemoryConnection(inbox, channel)
            if time.monotonic() >= deadline:
                raise HandshakeTimeout(f"channel {channel}: {key} never came up")
            time.sleep(0.005)


class TcpListener:
    def __init__(self, key: str, addr: str, port: int):
        self.key = key
        self.inbox: queue.SimpleQueue = queue.SimpleQueue()
        self._closed = threading.Event()
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        try:
            self._sock.bind((addr, port))
            self._sock.listen(64)
        except OSError as exc:
            self._sock.close()
            raise BindError(f"{key} cannot listen on {addr}:{port}: {exc}") from None
        self._sock.settimeout(0.1)
        self._conns: list[socket.socket] = []
        self._thread = threading.Thread(target=self._accept_loop, name=f"accept-{key}", daemon=True)
        self._thread.start()

    def _accept_loop(self) -> None:
        while not self._closed.is_set():
            try:
                conn, _ = self._sock.accept()
            except socket.timeout:
                continue
            except OSError:
                return
            conn.settimeout(None)
            self._conns.append(conn)
            threading.Thread(target=self._read, args=(conn,), name=f"read-{self.key}", daemon=True).start()

    def _read(self, conn: socket.socket) -> None:
        put = self.inbox.put
        channel = None
        try:
            head = b""
            while b"\n" not in head:
                chunk = conn.recv(256)
                if not chunk:
                    return
                head += chunk
            line, _, rest = head.partition(b"\n")
            parts = line.split()
            if len(parts) != 2 or parts[0] != b"CHANNEL":
                put(("error", None, DecodeError(f"bad handshake {line!r}")))
                return
            channel = int(parts[1])
            put(("open", channel, None))
            dec = codec.FrameDecoder()
            decode = codec.decode
            eos = False
            data = rest
            while True:
                if data:
                    values = []
                    for payload in dec.feed(data):
                        if not payload:
                            eos = True
                            break
                        values.append(decode(payload))
                    if values:
                        put(("data", channel, values))
                    if eos:
                        put(("eos", channel, None))
                        return
                data = conn.recv(RECV_CHUNK)
                if not data:
                    break
            put(("error", channel, ChannelClosed(f"channel {channel} closed before end-of-stream")))
        except DecodeError as exc:
            put(("error", channel, exc))
        except OSError as exc:
            if not self._closed.is_set():
                put(("error", channel, ChannelClosed(f"channel {channel}: {exc}")))
        finally:
            conn.close()

    def close(self) -> None:
        self._closed.set()
        self._sock.close()
        self._thread.join(timeout=1.0)
        for c in self._conns:
            try:
                c.close()
            except OSError:
                pass


class TcpConnection:
    def __init__(self, channel: int, key: str, addr: str, port: int, deadline: float):
        self.channel = channel
        self.sent = 0
        self._buf = bytearray()
        while True:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise HandshakeTimeout(f"channel {channel}: no peer at {key} ({addr}:{port})")
            try:
                self._sock = socket.create_connection((addr, port), timeout=min(remaining, 1.0))
                break
            except OSError:
                time.sleep(min(0.02, max(remaining, 0)))
        self._sock.settimeout(None)
        self._sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self._sock.sendall(b"CHANNEL %d\n" % channel)

    def send(self, value) -> None:
        codec.append_frame(self._buf, value)
        self.sent += 1
        if len(self._buf) >= FLUSH_BYTES:
            self.flush()

    def flush(self) -> None:
        if self._buf:
            self._sock.sendall(self._buf)
            self._buf.clear()

    def close(self) -> None:
        self._buf += codec.EOS_FRAME
        self.flush()
        try:
            self._sock.shutdown(socket.SHUT_WR)
        except OSError:
            pass
        self._sock.close()

    def abort(self) -> None:
        self._sock.close()


class TcpTransport:
    def listen(self, key: str, addr: str, port: int) -> TcpListener:
        return TcpListener(key, _bind_addr(addr), port)

    def connect(self, channel: int, key: str, addr: str, port: int, deadline: float) -> TcpConnection:
        return TcpConnection(channel, key, addr, port, deadline)


def _bind_addr(addr: str) -> str:
    try:
        socket.inet_aton(addr)
        return addr
    except OSError:
        return "0.0.0.0"


def make_transport(name: str):
    if name in ("mem", "memory", "in-memory"):
        return MemoryTransport()
    if name in ("tcp", "tcp-localhost"):
        return TcpTransport()
    raise ValueError(f"unknown transport {name!r}; use 'mem' or 'tcp'")
