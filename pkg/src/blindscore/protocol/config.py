"""Public run configuration and the shared derivation helpers.

Everything in ``RunConfig`` is known to both parties and the neutral
evaluator before the run starts: selection size, coverage radius and
tolerance, challenge counts, audit plans, scoring method, the public
architecture of the output block, and the parties' seeds for their own
randomness.  Private inputs (weights, dataset) never appear here.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from fractions import Fraction

from ..errors import DomainError, PlanInvalid, ShapeMismatch
from ..layers import LayerSpec
from ..rng import DetRng
from ..scoring import ScoringConfig
from ..selection import Dataset, ProjectionMatrix, coin_flip_seed, jl_project, k_center_greedy
from ..splitmodel import SplitModel

__all__ = [
    "AuditSpec",
    "RunConfig",
    "AliceInputs",
    "BobInputs",
    "coin_contribution",
    "derive_projection_seed",
    "select_representatives",
    "label_bytes",
    "STAGE_COMMIT",
    "STAGE_SELECT",
    "STAGE_INFER",
    "STAGE_SCORE",
    "STAGE_NAMES",
]

# Protocol stage numbers, used in abort records.
STAGE_COMMIT = 0
STAGE_SELECT = 1
STAGE_INFER = 2
STAGE_SCORE = 3

STAGE_NAMES = {
    STAGE_COMMIT: "commit",
    STAGE_SELECT: "select",
    STAGE_INFER: "infer",
    STAGE_SCORE: "score",
}


@dataclass(frozen=True)
class AuditSpec:
    """Spot-check breadth: m audited inputs, s audited transitions each."""

    m: int
    s: int


@dataclass(frozen=True)
class RunConfig:
    """Public parameters fixed before the first message."""

    k: int  # representative subset size
    d_raw: int  # coverage radius (Q16.16)
    delta: float  # coverage tolerance in [0, 1)
    num_challenges: int  # coverage challenges |I|
    audit_b: AuditSpec  # spot-check plan for the data owner's block
    audit_c: AuditSpec  # spot-check plan for the model owner's output block
    part_c_specs: tuple  # public layer architecture of the output block
    input_shape: tuple  # model input tensor shape
    num_classes: int
    alice_seed: bytes
    bob_seed: bytes
    dealer_seed: bytes
    scoring: ScoringConfig = field(default_factory=ScoringConfig)
    jl_dim: int | None = None  # selection-space projection width; None = raw
    security_level: int = 128
    timeout: float = 30.0  # seconds a party waits for any one message
    host: str = "127.0.0.1"  # socket transport bind address
    port: int = 0  # 0 = ephemeral

    def validate(self) -> None:
        """Structural checks that need no private inputs."""

        if self.k < 1:
            raise DomainError("k must be at least 1")
        if self.d_raw < 0:
            raise DomainError("coverage radius must be non-negative")
        if not 0 <= Fraction(self.delta) < 1:
            raise DomainError("delta must be in [0, 1)")
        if self.num_challenges < 1:
            raise DomainError("need at least one coverage challenge")
        for spec in (self.audit_b, self.audit_c):
            if spec.m < 1 or spec.s < 1:
                raise PlanInvalid("audit plans need m >= 1 and s >= 1")
            if spec.m > self.k:
                raise PlanInvalid("cannot audit more inputs than were selected")
        if not self.part_c_specs or not all(
            isinstance(s, LayerSpec) for s in self.part_c_specs
        ):
            raise ShapeMismatch("part_c_specs must be a non-empty LayerSpec tuple")
        if self.audit_c.s > len(self.part_c_specs):
            raise PlanInvalid("audit_c.s exceeds the output block depth")
        if self.jl_dim is not None and self.jl_dim < 1:
            raise DomainError("projection width must be positive")
        if self.num_classes < 1:
            raise DomainError("need at least one class")
        if not self.input_shape:
            raise ShapeMismatch("input shape must be non-empty")
        if self.timeout <= 0:
            raise DomainError("timeout must be positive")
        for seed in (self.alice_seed, self.bob_seed, self.dealer_seed):
            if not isinstance(seed, bytes) or not seed:
                raise DomainError("party seeds must be non-empty bytes")

    @property
    def input_dim(self) -> int:
        dim = 1
        for s in self.input_shape:
            dim *= s
        return dim


@dataclass
class AliceInputs:
    """Model owner's private inputs: the split model (all three blocks)."""

    split: SplitModel


@dataclass
class BobInputs:
    """Data owner's private inputs: the labeled feature table."""

    dataset: Dataset


def coin_contribution(seed: bytes) -> bytes:
    """A party's 32-byte share of the joint projection seed."""

    return DetRng(seed, b"coin").take(32)


def derive_projection_seed(alice_seed: bytes, bob_seed: bytes) -> bytes:
    """The joint projection seed the commit-then-reveal coin flip yields."""

    return coin_flip_seed(coin_contribution(alice_seed), coin_contribution(bob_seed))


def select_representatives(dataset: Dataset, k: int, jl_dim, proj_seed):
    """Greedy covering selection, optionally in the projected sketch space."""

    feats = dataset.features
    if jl_dim is not None:
        feats = jl_project(feats, ProjectionMatrix(proj_seed, jl_dim, dataset.dim))
    return k_center_greedy(feats, k)


def label_bytes(label: int) -> bytes:
    """Canonical byte encoding of one class label for commitments."""

    return b"lbl" + int(label).to_bytes(4, "big")
