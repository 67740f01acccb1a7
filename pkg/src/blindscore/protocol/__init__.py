"""Two-party blind scoring protocol with a neutral evaluator.

The package wires the cryptographic building blocks into a runnable
three-role protocol: the model owner and the data owner commit to their
private inputs, jointly select a representative subset, audit its
coverage, run the split model across the trust boundary with spot-checked
execution traces, and receive a single aggregate score — nothing else —
from the neutral evaluator.

Entry points:

- :func:`run_protocol` — execute a full run over an in-memory or socket
  transport, returning the score report and the wire transcript.
- :func:`score_reference` — the same score computed in one process with
  no protocol, for equivalence testing.
- :func:`transcript_replay` — re-verify a saved transcript offline.
- :func:`scan_transcript` — search a transcript for secret material that
  must never cross a given party's wire.
- :data:`CATALOGUE` — scripted misbehaviors, each with the abort it must
  provoke.
"""

from .adversaries import CATALOGUE, AdversaryCase, adversary_names, get_adversary
from .config import (
    STAGE_COMMIT,
    STAGE_INFER,
    STAGE_NAMES,
    STAGE_SCORE,
    STAGE_SELECT,
    AliceInputs,
    AuditSpec,
    BobInputs,
    RunConfig,
    coin_contribution,
    derive_projection_seed,
    label_bytes,
    select_representatives,
)
from .dealer import DealerParty, f_inference, f_subscore
from .engine import run_protocol
from .messages import ALICE, BOB, DEALER, ROLES, Frame, MessageKind, decode_frame, encode_frame
from .parties import AliceParty, BobParty
from .reference import ReferenceDetails, score_reference
from .replay import ReplayContext, ReplayVerdict, transcript_replay
from .transcript import (
    LeakHit,
    SecretSpec,
    Transcript,
    TranscriptRecorder,
    scan_transcript,
)
from .transport import MemoryNetwork, SocketNetwork, make_network

__all__ = [
    "ALICE",
    "BOB",
    "DEALER",
    "ROLES",
    "STAGE_COMMIT",
    "STAGE_SELECT",
    "STAGE_INFER",
    "STAGE_SCORE",
    "STAGE_NAMES",
    "AdversaryCase",
    "AliceInputs",
    "AliceParty",
    "AuditSpec",
    "BobInputs",
    "BobParty",
    "CATALOGUE",
    "DealerParty",
    "Frame",
    "LeakHit",
    "MemoryNetwork",
    "MessageKind",
    "ReferenceDetails",
    "ReplayContext",
    "ReplayVerdict",
    "RunConfig",
    "SecretSpec",
    "SocketNetwork",
    "Transcript",
    "TranscriptRecorder",
    "adversary_names",
    "coin_contribution",
    "decode_frame",
    "derive_projection_seed",
    "encode_frame",
    "f_inference",
    "f_subscore",
    "get_adversary",
    "label_bytes",
    "make_network",
    "run_protocol",
    "scan_transcript",
    "score_reference",
    "select_representatives",
    "transcript_replay",
]
