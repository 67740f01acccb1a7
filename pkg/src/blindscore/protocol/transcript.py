"""Transcript capture, persistence, and the leakage scanner.

A transcript is the ordered list of every wire frame exchanged during one
protocol run, together with the run's outcome.  It is the unit of evidence:
the replayer re-verifies it offline and marketplace slashes reference
positions in it.

File format (NDJSON): the first line is a header object, each following
line holds one base64 frame.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field

import numpy as np

from ..errors import MalformedMessage, MalformedTranscript
from .messages import Frame, b64d, b64e, decode_frame

__all__ = [
    "Transcript",
    "TranscriptRecorder",
    "SecretSpec",
    "LeakHit",
    "scan_transcript",
]

_FORMAT = "bst1"


@dataclass
class Transcript:
    """Ordered wire frames plus the recorded outcome."""

    frames: list  # list[bytes], arrival order
    result: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.frames)

    def decoded(self) -> list:
        """Decode every frame; raises MalformedMessage on a corrupt frame."""

        return [decode_frame(raw) for raw in self.frames]

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            header = {"format": _FORMAT, "result": self.result, "frames": len(self.frames)}
            fh.write(json.dumps(header, sort_keys=True) + "\n")
            for raw in self.frames:
                fh.write(json.dumps({"frame": b64e(raw)}) + "\n")

    @classmethod
    def load(cls, path) -> "Transcript":
        try:
            with open(path, "r", encoding="utf-8") as fh:
                lines = fh.read().splitlines()
        except OSError as exc:
            raise MalformedTranscript(f"cannot read transcript: {exc}") from exc
        if not lines:
            raise MalformedTranscript("transcript file is empty")
        try:
            header = json.loads(lines[0])
        except ValueError as exc:
            raise MalformedTranscript(f"bad transcript header: {exc}") from exc
        if not isinstance(header, dict) or header.get("format") != _FORMAT:
            raise MalformedTranscript("unknown transcript format")
        count = header.get("frames")
        if not isinstance(count, int) or count != len(lines) - 1:
            raise MalformedTranscript("frame count does not match the file body")
        frames = []
        for lineno, line in enumerate(lines[1:], start=2):
            try:
                entry = json.loads(line)
                frames.append(b64d(entry["frame"]))
            except (ValueError, KeyError, TypeError, MalformedMessage) as exc:
                raise MalformedTranscript(f"bad frame on line {lineno}: {exc}") from exc
        result = header.get("result")
        if not isinstance(result, dict):
            raise MalformedTranscript("transcript result must be an object")
        return cls(frames=frames, result=result)


class TranscriptRecorder:
    """Thread-safe frame sink shared by all parties of one run."""

    def __init__(self):
        self._lock = threading.Lock()
        self._frames = []

    def record(self, raw: bytes) -> None:
        with self._lock:
            self._frames.append(raw)

    def finish(self, result: dict) -> Transcript:
        with self._lock:
            return Transcript(frames=list(self._frames), result=dict(result))


# --- leakage scanner ------------------------------------------------------------


@dataclass(frozen=True)
class SecretSpec:
    """One private value that a given viewer must never receive.

    ``needles`` are byte strings whose appearance (in any decoded form)
    inside a frame delivered to ``forbidden_viewer`` counts as a leak.
    ``allow_tagged`` permits appearances inside bodies explicitly marked
    ``"transparent_audit": true`` — the sanctioned challenge-response
    revelations.
    """

    name: str
    needles: tuple
    forbidden_viewer: str
    allow_tagged: bool = False


@dataclass(frozen=True)
class LeakHit:
    frame_index: int
    viewer: str
    secret: str
    tagged: bool


def _frame_byte_pools(frame: Frame, raw: bytes) -> list:
    """Every byte string a recipient could trivially extract from a frame.

    Includes the raw frame itself, every base64-decodable string field, and
    the little-endian int32 packing of every integer list (the library's
    tensor wire encoding) so a leak cannot hide behind JSON re-encoding.
    """

    pools = [raw]

    def walk(node):
        if isinstance(node, str):
            try:
                pools.append(b64d(node))
            except MalformedMessage:
                pools.append(node.encode("utf-8"))
        elif isinstance(node, dict):
            for value in node.values():
                walk(value)
        elif isinstance(node, list):
            if node and all(isinstance(v, int) and not isinstance(v, bool) for v in node):
                ints = np.array(node, dtype=object)
                if (np.abs(ints) < (1 << 31)).all():
                    pools.append(ints.astype("<i4").tobytes())
            for value in node:
                walk(value)

    walk(frame.body)
    return pools


def scan_transcript(transcript: Transcript, secrets) -> list:
    """Search every delivered frame for forbidden byte patterns.

    Returns a list of ``LeakHit``; an empty list means no secret reached a
    forbidden viewer.  Hits inside transparent-audit bodies are reported
    with ``tagged=True`` when the secret allows tagged appearances —
    callers decide whether those were the sanctioned revelations.
    """

    hits = []
    for idx, raw in enumerate(transcript.frames):
        try:
            frame = decode_frame(raw)
        except MalformedMessage:
            continue  # replay handles malformed frames; nothing to scan
        pools = None
        for secret in secrets:
            if frame.recipient != secret.forbidden_viewer:
                continue
            if pools is None:
                pools = _frame_byte_pools(frame, raw)
            tagged = bool(frame.body.get("transparent_audit")) and secret.allow_tagged
            for needle in secret.needles:
                if any(needle in pool for pool in pools):
                    hits.append(LeakHit(idx, frame.recipient, secret.name, tagged))
                    break
    return hits
