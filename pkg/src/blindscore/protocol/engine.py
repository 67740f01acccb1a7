"""Run orchestration: three party threads over one transport.

``run_protocol`` starts the model owner, data owner, and neutral evaluator
as threads, waits for all of them, and either returns the agreed score
report with the transcript or raises ``ProtocolAbort`` carrying the abort
stage, cause, and the transcript accumulated so far.
"""

from __future__ import annotations

from ..errors import ProtocolAbort, ShapeMismatch
from ..scoring import ScoreReport
from .config import AliceInputs, BobInputs, RunConfig
from .dealer import DealerParty
from .messages import MessageKind, decode_frame
from .parties import AliceParty, BobParty
from .transcript import Transcript, TranscriptRecorder
from .transport import make_network
from . import schema

__all__ = ["run_protocol"]


def _validate_inputs(config: RunConfig, alice: AliceInputs, bob: BobInputs) -> None:
    """Fail fast on parameter mistakes before any thread starts.

    These are setup errors (raised as plain exceptions), distinct from
    in-protocol aborts: an honest operator fixes the config instead of
    blaming a counterparty.
    """

    config.validate()
    split, dataset = alice.split, bob.dataset
    if tuple(split.input_shape) != tuple(config.input_shape):
        raise ShapeMismatch("split model input shape differs from the config")
    if tuple(split.part_c.layers) != tuple(config.part_c_specs):
        raise ShapeMismatch("output block architecture differs from the config")
    if tuple(split.output_shape) != (config.num_classes,):
        raise ShapeMismatch("model class count differs from the config")
    if dataset.dim != config.input_dim:
        raise ShapeMismatch("dataset rows do not fill the model input shape")
    if dataset.num_classes != config.num_classes:
        raise ShapeMismatch("dataset class count differs from the config")
    if dataset.n < config.k:
        raise ShapeMismatch("dataset smaller than the selection size")


def _first_abort(transcript: Transcript):
    """The earliest abort frame decides the canonical (stage, reason, by)."""

    for raw in transcript.frames:
        try:
            frame = decode_frame(raw)
        except Exception:
            continue
        if frame.kind == MessageKind.ABORT:
            try:
                info = schema.parse_abort(frame.body)
            except Exception:
                continue
            return info.stage_num, info.reason, info.by
    return None


def run_protocol(
    alice_inputs: AliceInputs,
    bob_inputs: BobInputs,
    config: RunConfig,
    transport: str = "memory",
    adversary=None,
):
    """Execute one full run; returns ``(ScoreReport, Transcript)``.

    ``adversary`` is an optional behavior catalogue entry (see
    ``adversaries.py``) whose hooks are installed into the named party.
    On any in-protocol violation the run raises ``ProtocolAbort`` with the
    first abort's stage and cause, never returning a wrong score.
    """

    _validate_inputs(config, alice_inputs, bob_inputs)
    hooks = {"alice": {}, "bob": {}, "dealer": {}}
    if adversary is not None:
        hooks[adversary.party] = adversary.hooks

    recorder = TranscriptRecorder()
    net = make_network(transport, host=config.host, port=config.port)
    try:
        alice = AliceParty(net, recorder, config, alice_inputs.split, hooks=hooks["alice"])
        bob = BobParty(net, recorder, config, bob_inputs.dataset, hooks=hooks["bob"])
        dealer = DealerParty(net, recorder, config, hooks=hooks["dealer"])
        parties = (alice, bob, dealer)
        for p in parties:
            p.start()
        # Generous budget: every party can hit its per-message timeout a
        # few times on the way out without the engine giving up on it.
        join_budget = config.timeout * 8 + 30
        for p in parties:
            p.join(timeout=join_budget)
        if any(p.is_alive() for p in parties):
            raise RuntimeError("a party thread failed to finish; transport wedged")
    finally:
        net.close()

    for p in parties:
        if p.outcome is not None and p.outcome.get("status") == "error":
            raise p.outcome["error"]

    outcomes = {p.role: (p.outcome or {"status": "silent"}) for p in parties}
    aborted = [o for o in outcomes.values() if o["status"] == "abort"]
    if aborted:
        first = _first_abort(recorder.finish({}))
        if first is None:  # abort outcome without an abort frame cannot happen
            first = (aborted[0]["stage"], aborted[0]["reason"], aborted[0]["by"])
        stage, reason, by = first
        transcript = recorder.finish(
            {"status": "abort", "stage": stage, "reason": reason, "by": by}
        )
        raise ProtocolAbort(stage, reason, transcript=transcript)

    if any(o["status"] != "ok" for o in outcomes.values()):
        transcript = recorder.finish({"status": "incomplete"})
        raise ProtocolAbort(0, "run ended without agreement", transcript=transcript)

    phis = {role: o["phi_raw"] for role, o in outcomes.items()}
    if len(set(phis.values())) != 1:
        raise RuntimeError(f"score disagreement across parties: {phis}")
    report: ScoreReport = dealer.report
    assert report is not None and report.score_raw == phis["dealer"]
    transcript = recorder.finish({"status": "accept", "phi_raw": report.score_raw})
    return report, transcript
