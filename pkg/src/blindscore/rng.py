"""Deterministic byte-oriented RNG for protocol randomness.

SHA-256 in counter mode. Both parties, the dealer, and every test derive all
protocol randomness (commitment blinders, challenge indices, coin-flip
contributions) from DetRng instances so transcripts replay byte-identically
on any platform. numpy generators are used only for bulk test-data synthesis
and Monte-Carlo simulation, never for bytes that land on the wire.
"""

from __future__ import annotations

import hashlib


class DetRng:
    """Deterministic RNG seeded by bytes, with labeled child streams."""

    def __init__(self, seed: bytes, domain: bytes = b""):
        self._key = hashlib.sha256(b"rng:" + seed + b"/" + domain).digest()
        self._counter = 0
        self._buf = b""

    def take(self, n: int) -> bytes:
        while len(self._buf) < n:
            block = hashlib.sha256(
                self._key + self._counter.to_bytes(8, "big")
            ).digest()
            self._counter += 1
            self._buf += block
        out, self._buf = self._buf[:n], self._buf[n:]
        return out

    def randbelow(self, n: int) -> int:
        """Uniform integer in [0, n) via rejection sampling."""
        if n <= 0:
            raise ValueError("randbelow needs n >= 1")
        nbytes = (n.bit_length() + 7) // 8
        limit = (1 << (8 * nbytes)) - ((1 << (8 * nbytes)) % n)
        while True:
            v = int.from_bytes(self.take(nbytes), "big")
            if v < limit:
                return v % n

    def sample_distinct(self, n: int, k: int) -> list:
        """k distinct indices from [0, n), uniform without replacement."""
        if k > n:
            raise ValueError("sample larger than population")
        # partial Fisher-Yates with a sparse swap table
        swaps: dict = {}
        out = []
        for i in range(k):
            j = i + self.randbelow(n - i)
            out.append(swaps.get(j, j))
            swaps[j] = swaps.get(i, i)
        return out

    def spawn(self, label: bytes) -> "DetRng":
        """Independent child stream, domain-separated by label."""
        return DetRng(self._key, label)
