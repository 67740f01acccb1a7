"""Hash commitments and Merkle tree commitments with openings.

A plain commitment to message m with blinder r is sha256(0x02 || r || m).
Merkle leaves are domain-separated and position-bound:

    leaf_i = sha256(0x00 || enc64(i) || m_i)      enc64 = 8-byte big-endian
    node   = sha256(0x01 || left || right)

Trees pad to the next power of two (minimum width 2) with a constant
pad-leaf digest, so a single-leaf tree has height 1. Byte layouts of the
serialized records are documented in docs/FORMATS.md.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass

from .errors import (
    EmptyInput,
    IndexOutOfRange,
    MalformedMessage,
    UnsupportedLevel,
)
from .rng import DetRng

_TAG_LEAF = b"\x00"
_TAG_NODE = b"\x01"
_TAG_COMMIT = b"\x02"

PAD_LEAF = hashlib.sha256(_TAG_LEAF + b"\xff" * 8 + b"pad-leaf").digest()

_REC_COMMITMENT = 0x11
_REC_ROOT = 0x12
_REC_PATH = 0x13


@dataclass(frozen=True)
class CommitParams:
    """Public parameters: hash algorithm and blinder length in bytes."""

    hash_name: str = "sha256"
    rand_len: int = 32

    def hash(self, data: bytes) -> bytes:
        return hashlib.new(self.hash_name, data).digest()

    @property
    def digest_len(self) -> int:
        return hashlib.new(self.hash_name).digest_size


@dataclass(frozen=True)
class Commitment:
    digest: bytes


@dataclass(frozen=True)
class MerkleRoot:
    digest: bytes


@dataclass(frozen=True)
class MerklePath:
    """Authentication path for one leaf.

    Each element is (side, sibling_digest) where side says which side the
    *sibling* sits on: 0 = sibling is the left child (running value right),
    1 = sibling is the right child. The side bits are redundant with the
    leaf index and verification enforces that they agree.
    """

    index: int
    elements: tuple


class MerkleTree:
    """Internal state kept by the committer; immutable after build."""

    def __init__(self, pp: CommitParams, levels, n: int):
        self._pp = pp
        self._levels = levels
        self.n = n

    @property
    def root(self) -> MerkleRoot:
        return MerkleRoot(self._levels[-1][0])

    @property
    def height(self) -> int:
        return len(self._levels) - 1


def setup_com(security_level: int) -> CommitParams:
    """Public commitment parameters for a supported security level."""
    if security_level not in (128, 256):
        raise UnsupportedLevel(f"no parameter set for level {security_level}")
    # sha256 gives 256-bit digests, covering both supported levels; the
    # blinder is always 32 bytes.
    return CommitParams(hash_name="sha256", rand_len=32)


def commit(pp: CommitParams, m: bytes, rng: DetRng):
    """Commit to m; returns (Commitment, blinder). Blinder comes from rng."""
    r = rng.take(pp.rand_len)
    return Commitment(pp.hash(_TAG_COMMIT + r + m)), r


def open_com(pp: CommitParams, com: Commitment, m: bytes, r: bytes) -> bool:
    if len(r) != pp.rand_len:
        return False
    return pp.hash(_TAG_COMMIT + r + m) == com.digest


def leaf_hash(pp: CommitParams, index: int, m: bytes) -> bytes:
    return pp.hash(_TAG_LEAF + index.to_bytes(8, "big") + m)


def _node_hash(pp: CommitParams, left: bytes, right: bytes) -> bytes:
    return pp.hash(_TAG_NODE + left + right)


def mt_commit(pp: CommitParams, leaves) -> tuple:
    """Build a Merkle tree over the leaf messages; returns (root, tree)."""
    leaves = list(leaves)
    if not leaves:
        raise EmptyInput("merkle tree needs at least one leaf")
    n = len(leaves)
    width = 2
    while width < n:
        width *= 2
    level = [leaf_hash(pp, i, m) for i, m in enumerate(leaves)]
    level += [PAD_LEAF] * (width - n)
    levels = [level]
    while len(level) > 1:
        level = [
            _node_hash(pp, level[i], level[i + 1]) for i in range(0, len(level), 2)
        ]
        levels.append(level)
    tree = MerkleTree(pp, levels, n)
    return tree.root, tree


def mt_open(pp: CommitParams, tree: MerkleTree, index: int) -> MerklePath:
    """Authentication path for leaf `index`."""
    if not 0 <= index < tree.n:
        raise IndexOutOfRange(f"leaf {index} of {tree.n}")
    elements = []
    pos = index
    for level in tree._levels[:-1]:
        if pos % 2 == 0:
            elements.append((1, level[pos + 1]))  # sibling on the right
        else:
            elements.append((0, level[pos - 1]))  # sibling on the left
        pos //= 2
    return MerklePath(index, tuple(elements))


def mt_verify(
    pp: CommitParams, root: MerkleRoot, index: int, leaf: bytes, path: MerklePath
) -> bool:
    """1 iff `leaf` (the raw message) authenticates at `index` under `root`."""
    if index != path.index or index < 0:
        return False
    if index >= (1 << len(path.elements)):
        return False
    running = leaf_hash(pp, index, leaf)
    pos = index
    for side, sibling in path.elements:
        if side not in (0, 1) or side == (pos % 2):
            # side bit must complement the running node's own position
            return False
        if side == 1:
            running = _node_hash(pp, running, sibling)
        else:
            running = _node_hash(pp, sibling, running)
        pos //= 2
    return running == root.digest


# --- serialization (byte layouts in docs/FORMATS.md) ---


def encode_commitment(com: Commitment) -> bytes:
    return struct.pack(">BH", _REC_COMMITMENT, len(com.digest)) + com.digest


def decode_commitment(data: bytes) -> Commitment:
    if len(data) < 3 or data[0] != _REC_COMMITMENT:
        raise MalformedMessage("bad commitment record")
    (n,) = struct.unpack(">H", data[1:3])
    if len(data) != 3 + n:
        raise MalformedMessage("commitment record length mismatch")
    return Commitment(data[3:])


def encode_root(root: MerkleRoot) -> bytes:
    return struct.pack(">BH", _REC_ROOT, len(root.digest)) + root.digest


def decode_root(data: bytes) -> MerkleRoot:
    if len(data) < 3 or data[0] != _REC_ROOT:
        raise MalformedMessage("bad merkle root record")
    (n,) = struct.unpack(">H", data[1:3])
    if len(data) != 3 + n:
        raise MalformedMessage("merkle root record length mismatch")
    return MerkleRoot(data[3:])


def encode_path(path: MerklePath) -> bytes:
    out = struct.pack(">BQH", _REC_PATH, path.index, len(path.elements))
    for side, digest in path.elements:
        out += struct.pack(">BH", side, len(digest)) + digest
    return out


def decode_path(data: bytes) -> MerklePath:
    if len(data) < 11 or data[0] != _REC_PATH:
        raise MalformedMessage("bad merkle path record")
    index, count = struct.unpack(">QH", data[1:11])
    off = 11
    elements = []
    for _ in range(count):
        if len(data) < off + 3:
            raise MalformedMessage("truncated merkle path record")
        side, n = struct.unpack(">BH", data[off : off + 3])
        off += 3
        if len(data) < off + n:
            raise MalformedMessage("truncated merkle path digest")
        elements.append((side, data[off : off + n]))
        off += n
    if off != len(data):
        raise MalformedMessage("merkle path record length mismatch")
    return MerklePath(index, tuple(elements))
