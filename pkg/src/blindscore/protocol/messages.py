"""Wire format for the two-party scoring protocol.

Every message travels as a single length-prefixed frame:

    4 bytes  big-endian total length of everything after this prefix
    1 byte   message kind tag (``MessageKind`` value)
    8 bytes  big-endian per-sender sequence number
    1 byte   sender id length, then the sender id (ascii)
    1 byte   recipient id length, then the recipient id (ascii)
    rest     UTF-8 JSON body

Bodies are plain JSON objects.  Raw byte fields are base64 strings; every
body carries a ``"type"`` discriminator and a ``"stage"`` label.  Messages
whose body sets ``"transparent_audit": true`` are the explicitly sanctioned
audit revelations (challenge-response openings); the leakage scanner treats
them specially.
"""

from __future__ import annotations

import base64
import enum
import json
import struct
from dataclasses import dataclass

from ..errors import MalformedMessage

__all__ = [
    "MessageKind",
    "Frame",
    "ALICE",
    "BOB",
    "DEALER",
    "ROLES",
    "STAGES",
    "encode_frame",
    "decode_frame",
    "b64e",
    "b64d",
]

# Party identifiers used in routing headers.
ALICE = "alice"  # model owner (P1)
BOB = "bob"  # data owner (P2)
DEALER = "dealer"  # neutral evaluator for the two trusted-dealer calls

ROLES = (ALICE, BOB, DEALER)

# Protocol stages in choreography order.
STAGES = ("setup", "commit", "select", "infer", "score", "done", "aborted")


class MessageKind(enum.IntEnum):
    """Closed set of message kinds carried on the wire."""

    COMMITMENTS = 1
    INDICES = 2
    CHALLENGE = 3
    PROOF = 4
    ACTIVATIONS = 5
    WEIGHTS = 6
    SCORE = 7
    ABORT = 8


_HEADER = struct.Struct(">IBQ")  # length prefix, kind tag, sequence number
_MAX_FRAME = 1 << 28  # 256 MiB hard cap against nonsense length prefixes


def b64e(raw: bytes) -> str:
    """Encode bytes for a JSON body field."""

    return base64.b64encode(raw).decode("ascii")


def b64d(text: str) -> bytes:
    """Decode a base64 body field, raising ``MalformedMessage`` on garbage."""

    if not isinstance(text, str):
        raise MalformedMessage("expected a base64 string")
    try:
        return base64.b64decode(text.encode("ascii"), validate=True)
    except (ValueError, UnicodeEncodeError) as exc:
        raise MalformedMessage(f"invalid base64 field: {exc}") from exc


@dataclass(frozen=True)
class Frame:
    """One decoded protocol message."""

    kind: MessageKind
    seq: int
    sender: str
    recipient: str
    body: dict

    @property
    def msg_type(self) -> str:
        return self.body.get("type", "")

    @property
    def stage(self) -> str:
        return self.body.get("stage", "")


def _pack_id(name: str) -> bytes:
    raw = name.encode("ascii")
    if not 1 <= len(raw) <= 255:
        raise MalformedMessage("party id must be 1..255 ascii bytes")
    return bytes([len(raw)]) + raw


def encode_frame(kind: MessageKind, seq: int, sender: str, recipient: str, body: dict) -> bytes:
    """Serialize one message into its wire frame."""

    if not isinstance(kind, MessageKind):
        raise MalformedMessage(f"unknown message kind: {kind!r}")
    if not 0 <= seq < (1 << 64):
        raise MalformedMessage("sequence number out of range")
    payload = json.dumps(body, sort_keys=True, separators=(",", ":")).encode("utf-8")
    rest = (
        struct.pack(">BQ", int(kind), seq)
        + _pack_id(sender)
        + _pack_id(recipient)
        + payload
    )
    return struct.pack(">I", len(rest)) + rest


def decode_frame(data: bytes) -> Frame:
    """Parse a full wire frame (including the length prefix)."""

    if len(data) < 4:
        raise MalformedMessage("frame shorter than its length prefix")
    (length,) = struct.unpack_from(">I", data, 0)
    if length > _MAX_FRAME:
        raise MalformedMessage("frame length prefix exceeds the hard cap")
    if len(data) != 4 + length:
        raise MalformedMessage("frame length prefix does not match payload size")
    if length < 9 + 2 + 2:
        raise MalformedMessage("frame too short for its fixed header")
    kind_tag = data[4]
    try:
        kind = MessageKind(kind_tag)
    except ValueError as exc:
        raise MalformedMessage(f"unknown message kind tag {kind_tag}") from exc
    (seq,) = struct.unpack_from(">Q", data, 5)
    pos = 13
    ids = []
    for _ in range(2):
        if pos >= len(data):
            raise MalformedMessage("truncated routing header")
        id_len = data[pos]
        pos += 1
        if id_len == 0 or pos + id_len > len(data):
            raise MalformedMessage("truncated routing header")
        try:
            ids.append(data[pos : pos + id_len].decode("ascii"))
        except UnicodeDecodeError as exc:
            raise MalformedMessage("party id is not ascii") from exc
        pos += id_len
    try:
        body = json.loads(data[pos:].decode("utf-8"))
    except (ValueError, UnicodeDecodeError) as exc:
        raise MalformedMessage(f"frame body is not valid JSON: {exc}") from exc
    if not isinstance(body, dict):
        raise MalformedMessage("frame body must be a JSON object")
    return Frame(kind=kind, seq=seq, sender=ids[0], recipient=ids[1], body=body)
