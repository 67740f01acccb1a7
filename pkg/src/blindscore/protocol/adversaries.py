"""Catalogue of misbehaving parties for abort-totality testing.

Each :class:`AdversaryCase` names one concrete deviation from the honest
protocol — a tampered message body, a swapped piece of private state, a
replay, an early stop — together with the party that performs it and the
abort the honest machines must produce in response: the stage number(s)
at which the run may die and a substring of the canonical abort reason.

The deviations are deterministic on purpose.  Where a single corrupted
item would only be caught when a random spot check happens to land on
it, the case corrupts *every* item instead, so the expected abort fires
on every run rather than with some probability.  (The probabilistic
guarantees for single-item cheating are measured separately by the
detection-rate harnesses; here we are testing abort plumbing, reason
strings, and stage attribution.)
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from ..commitments import MerkleRoot, encode_root
from ..fixedpoint import FixedTensor
from ..layers import Model
from .config import STAGE_INFER, STAGE_SCORE, STAGE_SELECT
from .messages import ALICE, BOB, MessageKind, b64d, b64e

__all__ = ["AdversaryCase", "CATALOGUE", "adversary_names", "get_adversary"]


@dataclass(frozen=True, eq=False)
class AdversaryCase:
    """One scripted misbehavior and the abort it must provoke."""

    name: str
    party: str  # role whose machine runs the hooks
    summary: str  # one line: what the cheater does
    stages: tuple  # acceptable abort stage numbers (usually one)
    reason: str  # required substring of the abort reason
    hooks: dict = field(default_factory=dict)


def _corrupt_b64(value: str, pos: int = 0, mask: int = 0xFF) -> str:
    """Flip bits at one position of a base64-encoded byte string."""

    raw = bytearray(b64d(value))
    raw[pos % len(raw)] ^= mask
    return b64e(bytes(raw))


def _xor_one(t: FixedTensor) -> FixedTensor:
    """Flip the low bit of every element: a minimal, overflow-safe change."""

    return FixedTensor.from_raw(t.raw ^ 1)


def _garbage_root() -> str:
    return b64e(encode_root(MerkleRoot(hashlib.sha256(b"not-the-real-tree").digest())))


def _tamper_first_weights(model: Model) -> Model:
    """Return a copy of `model` with the low bit flipped in the leading
    tensor of every parameterized layer (shapes, and hence the layer
    manifest, are unchanged — only the committed weight bytes differ)."""

    weights = []
    changed = False
    for ws in model.weights:
        ws = tuple(ws)
        if ws:
            ws = (_xor_one(ws[0]),) + ws[1:]
            changed = True
        weights.append(ws)
    if not changed:
        raise ValueError("model has no weights to tamper with")
    return Model(tuple(model.input_shape), list(model.layers), weights)


# --- model-owner deviations -------------------------------------------------


def _bad_model_open(party, body):
    # Stale blinder: the dealer's opening of the committed input block fails.
    body = dict(body)
    body["blinder"] = _corrupt_b64(body["blinder"])
    return body


def _rogue_mixer(party, body):
    # Hand over a middle block wired for a different channel shuffle than
    # the one committed to: permute the input axis of its first matrix.
    model = Model.from_bytes(b64d(body["theta_b"]))
    weights = [tuple(ws) for ws in model.weights]
    for li, ws in enumerate(weights):
        if ws and ws[0].raw.ndim >= 2 and ws[0].shape[1] >= 2:
            w = ws[0]
            perm = np.roll(np.arange(w.shape[1]), 1)
            weights[li] = (FixedTensor.from_raw(w.raw[:, perm]),) + ws[1:]
            break
    else:  # nothing permutable: flip bits instead, still a wrong block
        weights[0] = (_xor_one(weights[0][0]),) + weights[0][1:]
    rogue = Model(tuple(model.input_shape), list(model.layers), weights)
    body = dict(body)
    body["theta_b"] = b64e(rogue.to_bytes())
    return body


def _garbage_first_root(party, body):
    # Replace the input-level activation root in the trace commitment.
    # (The same message type also carries the later proof; leave that be.)
    if "level_roots" not in body:
        return body
    body = dict(body)
    roots = list(body["level_roots"])
    roots[0] = _garbage_root()
    body["level_roots"] = roots
    return body


def _wrong_output_model(party, model):
    return _tamper_first_weights(model)


def _shift_trace_inputs(party, tensors):
    return [_xor_one(t) for t in tensors]


def _rotate_score_outputs(party, body):
    # Present each output under the next point's leaf and path.
    body = dict(body)
    outs = [dict(o) for o in body["outputs"]]
    zs = [o["z"] for o in outs]
    paths = [o["path"] for o in outs]
    for i, entry in enumerate(outs):
        entry["z"] = zs[(i + 1) % len(outs)]
        entry["path"] = paths[(i + 1) % len(outs)]
    body["outputs"] = outs
    return body


def _wrong_kind(party, kind):
    return MessageKind.SCORE


# --- data-owner deviations ---------------------------------------------------


def _bad_row_open(party, body):
    body = dict(body)
    rows = [dict(r) for r in body["rows"]]
    rows[0]["r"] = _corrupt_b64(rows[0]["r"])
    body["rows"] = rows
    return body


def _duplicate_index(party, body):
    body = dict(body)
    indices = list(body["indices"])
    indices[0] = indices[1]
    body["indices"] = indices
    return body


def _forge_witnesses(party, witnesses):
    # Answer every coverage challenge with a row outside the announced
    # subset (its opening is genuine, but it proves nothing).
    chosen = set(party._rep.indices)
    outside = next(i for i in range(party.dataset.n) if i not in chosen)
    return tuple(outside for _ in witnesses)


def _bad_coverage_opening(party, body):
    body = dict(body)
    openings = [dict(o) for o in body["openings"]]
    openings[0]["r"] = _corrupt_b64(openings[0]["r"])
    body["openings"] = openings
    return body


def _tweak_block_outputs(party, body):
    # Report slightly-off middle-block outputs for every row (low byte of
    # the last element: a tiny raw perturbation that cannot overflow later).
    body = dict(body)
    outs = []
    for entry in body["outs"]:
        entry = dict(entry)
        raw = bytearray(b64d(entry["b"]))
        raw[-4] ^= 0x01
        entry["b"] = b64e(bytes(raw))
        outs.append(entry)
    body["outs"] = outs
    return body


def _substitute_inputs(party, tensors):
    # Run the middle block on different activations than the evaluator
    # delivered (the commitment openings pin the delivered ones).
    return [_xor_one(t) for t in tensors]


def _swap_labels(party, body):
    body = dict(body)
    labels = [dict(e) for e in body["labels"]]
    labels[0]["y"] = (labels[0]["y"] + 1) % party.config.num_classes
    body["labels"] = labels
    return body


def _swap_rows(party, body):
    body = dict(body)
    rows = [dict(r) for r in body["rows"]]
    rows[0]["x"], rows[1]["x"] = rows[1]["x"], rows[0]["x"]
    rows[0]["r"], rows[1]["r"] = rows[1]["r"], rows[0]["r"]
    body["rows"] = rows
    return body


def _divergent_seed(party, seed):
    return hashlib.sha256(b"divergent:" + seed).digest()


def _mangle_raw(party, raw):
    # Overwrite the frame tail with NUL bytes: same length, unparseable body.
    return raw[:-3] + b"\x00\x00\x00"


_CASES = [
    AdversaryCase(
        name="alice-bad-theta-a-open",
        party=ALICE,
        summary="input-block opening sent to the evaluator uses a stale blinder",
        stages=(STAGE_INFER,),
        reason="block-a-opening",
        hooks={"body:inference-model": _bad_model_open},
    ),
    AdversaryCase(
        name="alice-wrong-mixer",
        party=ALICE,
        summary="middle block handed over is channel-permuted vs. the commitment",
        stages=(STAGE_INFER,),
        reason="block-b-opening",
        hooks={"body:block-b": _rogue_mixer},
    ),
    AdversaryCase(
        name="bob-bad-x-open",
        party=BOB,
        summary="a selected row is opened to the evaluator with a wrong blinder",
        stages=(STAGE_INFER,),
        reason="data-opening",
        hooks={"body:inference-data": _bad_row_open},
    ),
    AdversaryCase(
        name="bob-bad-repset-indices",
        party=BOB,
        summary="announced subset repeats an index",
        stages=(STAGE_SELECT,),
        reason="selection-indices",
        hooks={"body:selection": _duplicate_index},
    ),
    AdversaryCase(
        name="bob-cp-bad-witness",
        party=BOB,
        summary="coverage witnesses all point outside the announced subset",
        stages=(STAGE_SELECT,),
        reason="coverage-failures",
        hooks={"bob:witnesses": _forge_witnesses},
    ),
    AdversaryCase(
        name="bob-cp-bad-opening",
        party=BOB,
        summary="a challenged row is opened with a corrupted blinder",
        stages=(STAGE_SELECT,),
        reason="coverage-opening",
        hooks={"body:coverage-response": _bad_coverage_opening},
    ),
    AdversaryCase(
        name="bob-b-root-garbage",
        party=BOB,
        summary="middle-block trace commitment carries a garbage input root",
        stages=(STAGE_INFER,),
        reason="trace-b-binding",
        hooks={"body:trace-b": _garbage_first_root},
    ),
    AdversaryCase(
        name="bob-b-output-mismatch",
        party=BOB,
        summary="reported middle-block outputs differ from the committed trace",
        stages=(STAGE_INFER,),
        reason="block-b-outputs",
        hooks={"body:block-b-outputs": _tweak_block_outputs},
    ),
    AdversaryCase(
        name="bob-input-substitution",
        party=BOB,
        summary="middle block is run on activations the evaluator never sent",
        stages=(STAGE_INFER,),
        reason="trace-b-input-binding",
        hooks={"bob:block-b-inputs": _substitute_inputs},
    ),
    AdversaryCase(
        name="alice-c-root-garbage",
        party=ALICE,
        summary="output-block trace commitment carries a garbage input root",
        stages=(STAGE_INFER,),
        reason="trace-c-inputs",
        hooks={"body:trace-c": _garbage_first_root},
    ),
    AdversaryCase(
        name="alice-wrong-theta-c",
        party=ALICE,
        summary="output block is evaluated with weights other than the committed ones",
        stages=(STAGE_INFER,),
        reason="block-c-weights",
        hooks={"alice:trace-c-model": _wrong_output_model},
    ),
    AdversaryCase(
        name="alice-yprime-commit-mismatch",
        party=ALICE,
        summary="output block is fed inputs that differ from the reported middle outputs",
        stages=(STAGE_INFER,),
        reason="trace-c-inputs",
        hooks={"alice:trace-c-inputs": _shift_trace_inputs},
    ),
    AdversaryCase(
        name="alice-subscore-yprime-swap",
        party=ALICE,
        summary="final outputs are presented to the evaluator under rotated leaves",
        stages=(STAGE_SCORE,),
        reason="score-output-binding",
        hooks={"body:model-scores": _rotate_score_outputs},
    ),
    AdversaryCase(
        name="bob-subscore-label-swap",
        party=BOB,
        summary="a label opened for scoring is shifted by one class",
        stages=(STAGE_SCORE,),
        reason="label-opening",
        hooks={"body:data-scores": _swap_labels},
    ),
    AdversaryCase(
        name="bob-subscore-x-swap",
        party=BOB,
        summary="two rows opened for scoring trade payloads but keep their indices",
        stages=(STAGE_SCORE,),
        reason="data-opening",
        hooks={"body:data-scores": _swap_rows},
    ),
    AdversaryCase(
        name="replay-message",
        party=BOB,
        summary="the selection frame is transmitted twice, byte for byte",
        stages=(STAGE_SELECT,),
        reason="replayed or stale",
        hooks={"dup:selection": True},
    ),
    AdversaryCase(
        name="early-termination",
        party=ALICE,
        summary="the model owner goes silent right after committing",
        stages=(STAGE_SELECT, STAGE_INFER),
        reason="timeout",
        hooks={"stop:after-commit": True},
    ),
    AdversaryCase(
        name="wrong-stage-message",
        party=ALICE,
        summary="the coin commitment is sent under the result message kind",
        stages=(STAGE_SELECT,),
        reason="unexpected message",
        hooks={"kind:coin-commit": _wrong_kind},
    ),
    AdversaryCase(
        name="malformed-payload",
        party=BOB,
        summary="the selection frame body is overwritten with unparseable bytes",
        stages=(STAGE_SELECT,),
        reason="malformed",
        hooks={"raw:selection": _mangle_raw},
    ),
    AdversaryCase(
        name="bob-jl-seed-mismatch",
        party=BOB,
        summary="selection is computed from a projection seed the coins never produced",
        stages=(STAGE_SELECT,),
        reason="projection-seed",
        # The cheater also skips their own radius self-check — an honest
        # machine would refuse to send a selection that bad.
        hooks={"bob:jl-seed": _divergent_seed, "bob:skip-dprime": True},
    ),
]

CATALOGUE = {case.name: case for case in _CASES}

if len(CATALOGUE) != len(_CASES):  # pragma: no cover - construction guard
    raise RuntimeError("duplicate adversary names")


def adversary_names() -> list:
    """All case names, in catalogue order."""

    return [case.name for case in _CASES]


def get_adversary(name: str) -> AdversaryCase:
    try:
        return CATALOGUE[name]
    except KeyError:
        raise KeyError(f"unknown adversary {name!r}; known: {', '.join(CATALOGUE)}")
