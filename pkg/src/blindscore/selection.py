"""Dataset container, k-center selection, coverage tests, random projection.

Every distance comparison in the package uses one rule: compute the exact
floor integer square root of the Q32.32 squared distance (a Q16.16 raw
value) and compare it to the threshold with <=. Selection, the coverage
percentile, the challenge-response verifier, and the diversity subscore all
share that rule, so a radius derived here is honored bit-for-bit everywhere.
"""

from __future__ import annotations

import csv
import hashlib
import math
import struct
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import (
    DomainError,
    EmptyComplement,
    EmptyInput,
    KTooLarge,
    MalformedMessage,
    RowTooShort,
    ShapeMismatch,
)
from .fixedpoint import FixedTensor, check_raw_array, exact_matmul, from_float, shift_right
from .mathfx import dist_raw
from .rng import DetRng

_DATASET_MAGIC = b"FXD1"


@dataclass(frozen=True)
class Dataset:
    """Flat Q16.16 feature rows with integer class labels."""

    features: FixedTensor  # shape (n, dim)
    labels: tuple  # length n, each in [0, num_classes)
    num_classes: int

    def __post_init__(self):
        if len(self.features.shape) != 2:
            raise ShapeMismatch(f"features must be (n, dim), got {self.features.shape}")
        n = self.features.shape[0]
        if n == 0:
            raise EmptyInput("dataset needs at least one row")
        if len(self.labels) != n:
            raise ShapeMismatch(f"{len(self.labels)} labels for {n} rows")
        if self.num_classes < 1:
            raise DomainError("num_classes must be >= 1")
        for y in self.labels:
            if not 0 <= y < self.num_classes:
                raise DomainError(f"label {y} outside [0, {self.num_classes})")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def row(self, i: int) -> FixedTensor:
        return FixedTensor.from_raw(self.features.raw[i])

    def subset(self, indices) -> "Dataset":
        idx = list(indices)
        return Dataset(
            FixedTensor.from_raw(self.features.raw[idx]),
            tuple(self.labels[i] for i in idx),
            self.num_classes,
        )

    def to_bytes(self) -> bytes:
        head = _DATASET_MAGIC + struct.pack(">III", self.n, self.dim, self.num_classes)
        lab = np.asarray(self.labels, dtype="<i4").tobytes()
        return head + lab + self.features.raw.astype("<i4").tobytes()

    @classmethod
    def from_bytes(cls, data: bytes) -> "Dataset":
        if len(data) < 16 or data[:4] != _DATASET_MAGIC:
            raise MalformedMessage("bad dataset header")
        n, dim, num_classes = struct.unpack(">III", data[4:16])
        need = 16 + 4 * n + 4 * n * dim
        if len(data) != need:
            raise MalformedMessage(f"dataset length {len(data)}, expected {need}")
        labels = np.frombuffer(data, dtype="<i4", count=n, offset=16)
        feats = np.frombuffer(data, dtype="<i4", count=n * dim, offset=16 + 4 * n)
        return cls(
            FixedTensor((n, dim), feats.astype(np.int64).reshape(n, dim)),
            tuple(int(y) for y in labels),
            num_classes,
        )

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "Dataset":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())

    @classmethod
    def from_float_rows(cls, rows, labels, num_classes: int) -> "Dataset":
        arr = np.asarray(rows, dtype=float)
        if arr.ndim != 2:
            raise ShapeMismatch(f"rows must be 2-D, got shape {arr.shape}")
        raw = np.vectorize(from_float, otypes=[np.int64])(arr) if arr.size else arr.astype(np.int64)
        return cls(
            FixedTensor(tuple(arr.shape), raw),
            tuple(int(y) for y in labels),
            num_classes,
        )

    @classmethod
    def from_csv(cls, path, num_classes: int | None = None) -> "Dataset":
        """Rows of feature floats with the class label in the last column."""
        rows, labels = [], []
        with open(path, newline="") as fh:
            for lineno, cells in enumerate(csv.reader(fh), start=1):
                if not cells:
                    continue
                if lineno == 1 and not _numeric(cells[0]):
                    continue  # header
                if len(cells) < 2:
                    raise RowTooShort(f"line {lineno}: need >= 1 feature and a label")
                rows.append([float(c) for c in cells[:-1]])
                labels.append(int(cells[-1]))
                if len(rows[-1]) != len(rows[0]):
                    raise ShapeMismatch(f"line {lineno}: ragged row")
        if not rows:
            raise EmptyInput(f"{path}: no data rows")
        if num_classes is None:
            num_classes = max(labels) + 1
        return cls.from_float_rows(rows, labels, num_classes)


def _numeric(cell: str) -> bool:
    try:
        float(cell)
        return True
    except ValueError:
        return False


@dataclass(frozen=True)
class RepresentativeSet:
    """Indices chosen from a parent dataset of size parent_n."""

    indices: tuple
    parent_n: int

    def __post_init__(self):
        if len(set(self.indices)) != len(self.indices):
            raise DomainError("representative indices must be distinct")
        for i in self.indices:
            if not 0 <= i < self.parent_n:
                raise DomainError(f"index {i} outside parent of size {self.parent_n}")

    @property
    def k(self) -> int:
        return len(self.indices)


def _sq_dists_to(raw: np.ndarray, center: np.ndarray) -> np.ndarray:
    """Exact squared distances (Q32.32 ints) from every row to one row."""
    maxabs = int(np.abs(raw).max(initial=0)) + int(np.abs(center).max(initial=0))
    if maxabs * maxabs * raw.shape[1] <= (1 << 62):
        diff = raw - center[None, :]
        return (diff * diff).sum(axis=1)
    diff = raw.astype(object) - center.astype(object)[None, :]
    return (diff * diff).sum(axis=1)


def k_center_greedy(features: FixedTensor, k: int) -> RepresentativeSet:
    """Greedy k-center: start at row 0, repeatedly take the farthest point.

    Ties break to the lowest index; chosen rows are masked so indices stay
    distinct even among duplicate points.
    """
    if len(features.shape) != 2:
        raise ShapeMismatch(f"features must be (n, dim), got {features.shape}")
    n = features.shape[0]
    if n == 0:
        raise EmptyInput("cannot select from an empty dataset")
    if not 1 <= k <= n:
        raise KTooLarge(f"k={k} outside [1, {n}]")
    raw = features.raw
    chosen = [0]
    mind = _sq_dists_to(raw, raw[0])
    mind[0] = -1
    for _ in range(k - 1):
        nxt = int(np.argmax(mind))
        chosen.append(nxt)
        mind = np.minimum(mind, _sq_dists_to(raw, raw[nxt]))
        mind[nxt] = -1
    return RepresentativeSet(tuple(chosen), n)


def min_distances_raw(features: FixedTensor, rep: RepresentativeSet) -> np.ndarray:
    """Floor-isqrt distance from each non-representative row to the set."""
    if rep.parent_n != features.shape[0]:
        raise ShapeMismatch("representative set belongs to a different parent")
    raw = features.raw
    members = set(rep.indices)
    if len(members) == raw.shape[0]:
        return np.zeros(0, dtype=np.int64)
    sq = None
    for i in rep.indices:
        d = _sq_dists_to(raw, raw[i])
        sq = d if sq is None else np.minimum(sq, d)
    rest = [i for i in range(raw.shape[0]) if i not in members]
    return np.asarray([dist_raw(int(sq[i])) for i in rest], dtype=np.int64)


def representativeness(
    features: FixedTensor, rep: RepresentativeSet, d_raw: int, delta
) -> tuple:
    """Coverage test: at most a delta fraction of rows may sit farther than d.

    Returns (holds, outliers). A row is covered iff its floor-isqrt distance
    to the set is <= d_raw; the fraction test is exact rational arithmetic.
    """
    if d_raw < 0:
        raise DomainError("coverage radius must be >= 0")
    dists = min_distances_raw(features, rep)
    outliers = int((dists > d_raw).sum())
    holds = Fraction(outliers, features.shape[0]) <= Fraction(delta)
    return holds, outliers


def percentile_distance(features: FixedTensor, rep: RepresentativeSet, delta) -> int:
    """Nearest-rank (1 - delta) percentile of distances to the set.

    With delta = 0 this is the covering radius. The returned radius always
    satisfies the coverage test at the same delta.
    """
    fdelta = Fraction(delta)
    if not 0 <= fdelta < 1:
        raise DomainError("delta must be in [0, 1)")
    dists = min_distances_raw(features, rep)
    m = dists.size
    if m == 0:
        raise EmptyComplement("every row is in the representative set")
    rank = math.ceil((1 - fdelta) * m)
    return int(np.sort(dists)[rank - 1])


@dataclass(frozen=True)
class ProjectionMatrix:
    """Seeded sign matrix with entries +-1/sqrt(m) for distance sketching."""

    seed: bytes
    m: int
    dim: int

    def __post_init__(self):
        if self.m < 1 or self.dim < 1:
            raise DomainError("projection needs m >= 1 and dim >= 1")

    @property
    def mag_raw(self) -> int:
        """Q16.16 magnitude of one entry: floor(sqrt(2^32 / m))."""
        return math.isqrt((1 << 32) // self.m)

    def signs(self) -> np.ndarray:
        """The (m, dim) +-1 sign matrix, bit-decoded from a seeded stream."""
        count = self.m * self.dim
        stream = DetRng(self.seed, b"jl-signs").take((count + 7) // 8)
        bits = np.unpackbits(np.frombuffer(stream, dtype=np.uint8))[:count]
        return (1 - 2 * bits.astype(np.int64)).reshape(self.m, self.dim)


def jl_project(features: FixedTensor, pm: ProjectionMatrix) -> FixedTensor:
    """Project rows to m dimensions: exact signed sums, one floor rescale."""
    if len(features.shape) != 2 or features.shape[1] != pm.dim:
        raise ShapeMismatch(f"features {features.shape} do not match dim {pm.dim}")
    acc = exact_matmul(features.raw, pm.signs().T)
    if acc.dtype == np.int64:
        bound = int(np.abs(features.raw).max(initial=0)) * pm.dim
        if bound * pm.mag_raw > (1 << 62):
            acc = acc.astype(object)
    out = shift_right(acc * pm.mag_raw)
    return FixedTensor.from_raw(check_raw_array(np.asarray(out)))


def coin_flip_seed(contrib_a: bytes, contrib_b: bytes) -> bytes:
    """Combine both parties' revealed randomness into the projection seed."""
    if len(contrib_a) != 32 or len(contrib_b) != 32:
        raise DomainError("coin-flip contributions must be 32 bytes")
    return hashlib.sha256(contrib_a + contrib_b).digest()
