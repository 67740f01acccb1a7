"""blindscore: two-party blind dataset scoring at desk scale.

Fixed-point inference, hash/Merkle commitments, sampled audits of claimed
computation, representative-set selection, a two-party scoring protocol with
a trusted-dealer stand-in for the secure-computation steps, and an in-memory
marketplace ledger.
"""

from .fixedpoint import FixedScalar, FixedTensor

__all__ = ["FixedScalar", "FixedTensor"]
__version__ = "0.1.0"
