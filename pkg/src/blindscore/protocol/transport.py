"""Point-to-point transports connecting the three protocol parties.

Two interchangeable implementations are provided:

* ``MemoryNetwork`` — in-process FIFO queues, the default for tests.
* ``SocketNetwork`` — real TCP connections over a loopback listener, for
  exercising the byte-level framing end to end.

Both expose the same two calls: ``send(src, dst, data)`` delivers one wire
frame, ``recv(dst, src, timeout)`` blocks for the next frame from ``src``
and raises ``Timeout`` when the deadline passes.
"""

from __future__ import annotations

import itertools
import queue
import socket
import struct
import threading

from ..errors import MalformedMessage, Timeout
from .messages import ROLES

__all__ = ["MemoryNetwork", "SocketNetwork", "make_network"]


class MemoryNetwork:
    """Queue-backed transport; one FIFO per ordered party pair."""

    def __init__(self, roles=ROLES):
        self._queues = {
            (src, dst): queue.Queue()
            for src, dst in itertools.permutations(roles, 2)
        }

    def send(self, src: str, dst: str, data: bytes) -> None:
        self._queues[(src, dst)].put(data)

    def recv(self, dst: str, src: str, timeout: float) -> bytes:
        try:
            return self._queues[(src, dst)].get(timeout=timeout)
        except queue.Empty:
            raise Timeout(f"{dst} timed out waiting for {src}") from None

    def close(self) -> None:  # interface parity with SocketNetwork
        pass


class _SocketEndpoint:
    """One end of a duplex TCP connection, with framed reads."""

    def __init__(self, sock: socket.socket):
        self._sock = sock
        self._send_lock = threading.Lock()
        self._recv_lock = threading.Lock()

    def send(self, data: bytes) -> None:
        with self._send_lock:
            self._sock.sendall(data)

    def _read_exact(self, count: int, timeout: float) -> bytes:
        chunks = []
        remaining = count
        self._sock.settimeout(timeout)
        while remaining:
            try:
                chunk = self._sock.recv(remaining)
            except socket.timeout:
                raise Timeout("socket read deadline exceeded") from None
            if not chunk:
                raise Timeout("peer closed the connection")
            chunks.append(chunk)
            remaining -= len(chunk)
        return b"".join(chunks)

    def recv_frame(self, timeout: float) -> bytes:
        with self._recv_lock:
            prefix = self._read_exact(4, timeout)
            (length,) = struct.unpack(">I", prefix)
            if length > (1 << 28):
                raise MalformedMessage("frame length prefix exceeds the hard cap")
            return prefix + self._read_exact(length, timeout)

    def close(self) -> None:
        try:
            self._sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self._sock.close()


class SocketNetwork:
    """TCP transport over a loopback listener.

    The constructor opens a listening socket on ``host:port`` (port 0 picks
    an ephemeral port), dials one connection per party pair, and hands each
    side of every connection to its party.  All parties live in one process
    as threads, so both endpoints of each connection are local.
    """

    def __init__(self, host: str = "127.0.0.1", port: int = 0, roles=ROLES):
        listener = socket.create_server((host, port))
        self.address = listener.getsockname()[:2]
        pairs = [tuple(sorted(p)) for p in itertools.combinations(roles, 2)]
        accepted = {}

        def _accept_all():
            for _ in pairs:
                conn, _addr = listener.accept()
                label = _SocketEndpoint(conn)._read_exact(32, timeout=10.0)
                accepted[label.rstrip(b" ").decode("ascii")] = conn

        acceptor = threading.Thread(target=_accept_all, daemon=True)
        acceptor.start()
        dialed = {}
        for pair in pairs:
            label = "|".join(pair).encode("ascii").ljust(32, b" ")
            sock = socket.create_connection(self.address, timeout=10.0)
            sock.sendall(label)
            dialed[pair] = sock
        acceptor.join(timeout=10.0)
        listener.close()
        if len(accepted) != len(pairs):
            raise Timeout("socket network setup did not complete")
        # The dialing side of pair (a, b) goes to role a, the accepting
        # side to role b; each endpoint is duplex.
        self._endpoints = {}
        for pair in pairs:
            a, b = pair
            self._endpoints[(a, b)] = _SocketEndpoint(dialed[pair])
            self._endpoints[(b, a)] = _SocketEndpoint(accepted["|".join(pair)])

    def _endpoint(self, me: str, peer: str) -> _SocketEndpoint:
        return self._endpoints[(me, peer)]

    def send(self, src: str, dst: str, data: bytes) -> None:
        self._endpoint(src, dst).send(data)

    def recv(self, dst: str, src: str, timeout: float) -> bytes:
        return self._endpoint(dst, src).recv_frame(timeout)

    def close(self) -> None:
        # (a, b) and (b, a) wrap the two distinct ends of one connection,
        # so every endpoint owns its own socket and must be closed.
        for endpoint in self._endpoints.values():
            endpoint.close()


def make_network(transport: str, host: str = "127.0.0.1", port: int = 0):
    """Build a transport by name: ``"memory"`` or ``"socket"``."""

    if transport == "memory":
        return MemoryNetwork()
    if transport == "socket":
        return SocketNetwork(host=host, port=port)
    raise ValueError(f"unknown transport: {transport!r}")
