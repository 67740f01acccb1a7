"""Exception types shared across the library.

Every failure mode that a caller is expected to handle gets its own class so
tests can assert on the precise condition rather than matching message text.
"""

from __future__ import annotations


class BlindscoreError(Exception):
    """Base class for all library errors."""


# --- numeric substrate ---

class Overflow(BlindscoreError):
    """A fixed-point result fell outside the representable Q16.16 range."""


class DomainError(BlindscoreError):
    """An argument was outside the mathematical domain of the function."""


class ShapeMismatch(BlindscoreError):
    """Tensor shapes are inconsistent with the declared layer geometry."""


# --- commitments ---

class UnsupportedLevel(BlindscoreError):
    """Requested security level has no configured parameter set."""


class EmptyInput(BlindscoreError):
    """An operation that needs at least one element received none."""


class IndexOutOfRange(BlindscoreError):
    """Leaf or element index beyond the committed collection."""


class CommitmentMismatch(BlindscoreError):
    """A revealed value failed to open a previously published commitment."""


# --- selection ---

class KTooLarge(BlindscoreError):
    """Requested subset size exceeds the number of available points."""


class EmptyComplement(BlindscoreError):
    """parent minus rep is empty, so the statistic is undefined."""


# --- model splitting ---

class InvalidCut(BlindscoreError):
    """Split boundary is before the first activation or past the last layer."""


# --- audits ---

class PlanInvalid(BlindscoreError):
    """Audit plan parameters are out of range (m > N, s > L, bad rho...)."""


class Unachievable(BlindscoreError):
    """No audit plan reaches the requested detection probability."""


# --- scoring ---

class RowTooShort(BlindscoreError):
    """A probability row has fewer entries than the statistic needs."""


class TooFewPoints(BlindscoreError):
    """Pairwise statistic asked for on fewer than two points."""


# --- protocol engine ---

class MalformedMessage(BlindscoreError):
    """A frame or payload could not be decoded."""


class MalformedTranscript(BlindscoreError):
    """A transcript file or record sequence could not be parsed."""


class Timeout(BlindscoreError):
    """Peer did not produce the expected message within the deadline."""


class ProtocolAbort(BlindscoreError):
    """The run terminated on a protocol check.

    Parameters
    ----------
    stage:
        Protocol stage number (0..3) at which the abort fired.
    reason:
        Short machine-readable cause, e.g. "cp-shortfall".
    transcript:
        The transcript accumulated up to the abort, when available.
    """

    def __init__(self, stage: int, reason: str, transcript=None):
        super().__init__(f"abort at stage {stage}: {reason}")
        self.stage = stage
        self.reason = reason
        self.transcript = transcript


# --- marketplace ---

class TxRejected(BlindscoreError):
    """Ledger transition refused; the state is unchanged."""

    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


class WrongPreimage(BlindscoreError):
    """Revealed key does not hash to the registered lock value."""
