"""Frame transports between the three parties.

Both transports move opaque, already framed byte strings for one ordered pair
(sender, receiver) at a time. Accounting and framing live in the session; the
transports only deliver.

- InProcessTransport: one FIFO queue per ordered pair.
- TcpTransport: one loopback connection per ordered pair, each party listening
  on ``base_port + index``; sends run on a small thread pool so a large round
  cannot dead-lock on full socket buffers.
"""

import logging
import queue
import socket
import struct
from abc import ABC, abstractmethod
from concurrent.futures import Future, ThreadPoolExecutor
from typing import Dict, List, Optional, Tuple

from tenacity import retry, retry_if_exception_type, stop_after_attempt, wait_exponential

from ..core.errors import FrameError, TransportError

logger = logging.getLogger(__name__)

Pair = Tuple[int, int]

ORDERED_PAIRS: List[Pair] = [(s, r) for s in range(3) for r in range(3) if s != r]

FRAME_HEADER = struct.Struct("<IBBBBQ")


class Transport(ABC):
    """Delivers frames between parties."""

    kind: str = "abstract"

    @abstractmethod
    def open(self) -> None:
        """Bring up all channels."""

    @abstractmethod
    def send(self, sender: int, receiver: int, frame: bytes) -> None:
        """Queue a frame for delivery."""

    @abstractmethod
    def recv(self, sender: int, receiver: int) -> Optional[bytes]:
        """Next frame on the channel, or None when nothing was sent."""

    def flush(self) -> None:
        """Block until every queued send has left the sender."""

    def close(self) -> None:
        """Tear down all channels."""


class InProcessTransport(Transport):
    """Queue-backed channels inside one process."""

    kind = "in_process"

    def __init__(self):
        self._queues: Dict[Pair, "queue.Queue[bytes]"] = {}

    def open(self) -> None:
        self._queues = {pair: queue.Queue() for pair in ORDERED_PAIRS}

    def send(self, sender: int, receiver: int, frame: bytes) -> None:
        self._queues[(sender, receiver)].put(frame)

    def recv(self, sender: int, receiver: int) -> Optional[bytes]:
        try:
            return self._queues[(sender, receiver)].get_nowait()
        except queue.Empty:
            return None


class TcpTransport(Transport):
    """Loopback TCP channels, one connection per ordered pair."""

    kind = "tcp"

    def __init__(self, host: str = "127.0.0.1", base_port: int = 47000,
                 connect_host: Optional[str] = None, timeout: float = 30.0):
        self.host = host
        self.base_port = base_port
        self.connect_host = connect_host or host
        self.timeout = timeout
        self._listeners: List[socket.socket] = []
        self._out: Dict[Pair, socket.socket] = {}
        self._in: Dict[Pair, socket.socket] = {}
        self._pool: Optional[ThreadPoolExecutor] = None
        self._pending: List[Future] = []

    def open(self) -> None:
        logger.info(f"Opening tcp transport on {self.host}:{self.base_port}-{self.base_port + 2}")
        try:
            for party in range(3):
                listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
                listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
                listener.bind((self.host, self.base_port + party))
                listener.listen(2)
                listener.settimeout(self.timeout)
                self._listeners.append(listener)
            for sender, receiver in ORDERED_PAIRS:
                sock = self._connect(self.base_port + receiver)
                sock.sendall(bytes([sender]))
                self._out[(sender, receiver)] = sock
            for receiver, listener in enumerate(self._listeners):
                for _ in range(2):
                    conn, _ = listener.accept()
                    conn.settimeout(self.timeout)
                    conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
                    sender = self._read_exact(conn, 1)[0]
                    self._in[(sender, receiver)] = conn
        except OSError as exc:
            self.close()
            raise TransportError(f"tcp transport setup failed: {exc}") from exc
        self._pool = ThreadPoolExecutor(max_workers=6, thread_name_prefix="party-send")

    @retry(
        stop=stop_after_attempt(3),
        wait=wait_exponential(multiplier=0.1, min=0.1, max=1),
        retry=retry_if_exception_type(OSError),
        reraise=True,
    )
    def _connect(self, port: int) -> socket.socket:
        sock = socket.create_connection((self.connect_host, port), timeout=self.timeout)
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        return sock

    @staticmethod
    def _read_exact(conn: socket.socket, n: int) -> bytes:
        chunks = []
        remaining = n
        while remaining:
            chunk = conn.recv(min(remaining, 1 << 20))
            if not chunk:
                raise TransportError("peer closed the connection mid-frame")
            chunks.append(chunk)
            remaining -= len(chunk)
        return b"".join(chunks)

    def send(self, sender: int, receiver: int, frame: bytes) -> None:
        if self._pool is None:
            raise TransportError("transport is not open")
        sock = self._out[(sender, receiver)]
        self._pending.append(self._pool.submit(sock.sendall, frame))

    def recv(self, sender: int, receiver: int) -> Optional[bytes]:
        conn = self._in[(sender, receiver)]
        try:
            header = self._read_exact(conn, FRAME_HEADER.size)
            length = FRAME_HEADER.unpack(header)[0]
            if length % 8:
                raise FrameError(f"payload length {length} is not a whole number of ring words")
            return header + self._read_exact(conn, length)
        except socket.timeout:
            return None

    def flush(self) -> None:
        pending, self._pending = self._pending, []
        for future in pending:
            try:
                future.result(timeout=self.timeout)
            except OSError as exc:
                raise TransportError(f"send failed: {exc}") from exc

    def close(self) -> None:
        if self._pool is not None:
            self._pool.shutdown(wait=True)
            self._pool = None
        for sock in list(self._out.values()) + list(self._in.values()) + self._listeners:
            try:
                sock.close()
            except OSError:
                pass
        self._out.clear()
        self._in.clear()
        self._listeners.clear()
