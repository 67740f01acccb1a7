"""Offline transcript re-verification for dispute resolution.

``transcript_replay`` walks a saved transcript with nothing but public
context (commitment parameters, the published run parameters, the output
block architecture) and re-checks everything that is checkable after the
fact: frame well-formedness, per-sender sequence numbers, per-channel
choreography, every commitment opening, both trace audits, and — because
the middle block and the selected rows are opened on the wire — a full
re-execution of the input and middle blocks plus the final score.

The verdict either confirms the transcript (including one that ends in a
well-formed abort) or pins the first provable violation to a frame and,
where the evidence allows, to the party that produced it.  A party that
simply goes silent cannot be convicted from a transcript alone; that case
surfaces as a consistent transcript ending in a timeout abort.
"""

from __future__ import annotations

import hashlib
from collections import deque
from dataclasses import dataclass
from fractions import Fraction

from ..audits import cnc_commit_trace, cnc_verify
from ..commitments import mt_verify, open_com, setup_com
from ..errors import BlindscoreError, MalformedMessage
from ..fixedpoint import tensor_from_bytes, tensor_to_bytes
from ..layers import Model
from ..rng import DetRng
from ..scoring import ScoringConfig
from ..selection import RepresentativeSet, coin_flip_seed
from .config import AuditSpec, RunConfig
from .dealer import f_inference, f_subscore
from .messages import ALICE, BOB, DEALER, ROLES, MessageKind, decode_frame
from .parties import LocalAbort, _pair_distance_ok
from .transcript import Transcript
from . import schema

__all__ = ["ReplayContext", "ReplayVerdict", "transcript_replay"]


@dataclass(frozen=True)
class ReplayContext:
    """The public run parameters an arbiter holds alongside a transcript."""

    k: int
    d_raw: int
    delta: float
    num_challenges: int
    audit_b: AuditSpec
    audit_c: AuditSpec
    part_c_specs: tuple
    input_shape: tuple
    num_classes: int
    jl_dim: int | None = None
    scoring: ScoringConfig = ScoringConfig()
    security_level: int = 128

    @classmethod
    def from_config(cls, config: RunConfig) -> "ReplayContext":
        """Extract the public slice of a run configuration (no seeds)."""

        return cls(
            k=config.k,
            d_raw=config.d_raw,
            delta=config.delta,
            num_challenges=config.num_challenges,
            audit_b=config.audit_b,
            audit_c=config.audit_c,
            part_c_specs=tuple(config.part_c_specs),
            input_shape=tuple(config.input_shape),
            num_classes=config.num_classes,
            jl_dim=config.jl_dim,
            scoring=config.scoring,
            security_level=config.security_level,
        )


@dataclass
class ReplayVerdict:
    """Outcome of re-verifying one transcript."""

    consistent: bool
    reason: str | None = None
    frame_index: int | None = None
    offender: str | None = None
    phi_raw: int | None = None
    abort: tuple | None = None  # (stage_num, reason, by) when the run aborted


class _Violation(Exception):
    def __init__(self, frame_index, offender, reason):
        super().__init__(reason)
        self.frame_index = frame_index
        self.offender = offender
        self.reason = reason


class _Aborted(Exception):
    def __init__(self, abort):
        super().__init__("run aborted")
        self.abort = abort


# Attribution for failures detected inside the reused evaluator cores:
# the reason prefixes name the message (and hence the sender) at fault.
_ALICE_REASONS = ("block-a", "mixer", "score-output", "model-scores")
_BOB_REASONS = ("data-opening", "inference-data", "inference failed",
                "feature row", "label", "data-scores")


def _attribute(reason: str) -> str | None:
    if reason.startswith(_ALICE_REASONS):
        return ALICE
    if reason.startswith(_BOB_REASONS):
        return BOB
    return None


class _Walker:
    """Per-channel cursor over a decoded transcript."""

    def __init__(self, frames):
        self.channels = {}
        self.first_abort = None  # (stage_num, reason, by) of the earliest abort
        for i, frame in enumerate(frames):
            self.channels.setdefault((frame.sender, frame.recipient), deque()).append((i, frame))
            if frame.kind == MessageKind.ABORT and self.first_abort is None:
                try:
                    info = schema.parse_abort(frame.body)
                    self.first_abort = (info.stage_num, info.reason, info.by)
                except MalformedMessage:
                    pass  # flagged when (and if) the walk reaches it
        self.pending = None  # a deferred violation: raised if the run continues

    def take(self, sender, recipient, kind, msg_type):
        """Pop the next frame on one channel; it must be the expected step
        of the honest choreography or a well-formed abort announcement."""

        queue = self.channels.get((sender, recipient))
        if not queue:
            if self.first_abort is not None:
                # The run died; nothing continued past the mandatory point.
                raise _Aborted(self.first_abort)
            if self.pending is not None:
                raise self.pending
            raise _Violation(None, None, f"transcript ends before {msg_type} from {sender}")
        index, frame = queue.popleft()
        if frame.kind == MessageKind.ABORT:
            try:
                info = schema.parse_abort(frame.body)
            except MalformedMessage as exc:
                raise _Violation(index, sender, f"malformed abort: {exc}")
            raise _Aborted((info.stage_num, info.reason, info.by))
        if self.pending is not None:
            # The protocol rule required an abort here; continuing is the proof.
            raise self.pending
        if frame.kind != kind or frame.msg_type != msg_type:
            raise _Violation(
                index,
                sender,
                f"unexpected message: wanted {msg_type}, got kind={int(frame.kind)} "
                f"type={frame.msg_type!r}",
            )
        return index, frame.body


def _parse(parser, body, index, sender, what):
    try:
        return parser(body)
    except MalformedMessage as exc:
        raise _Violation(index, sender, f"malformed {what}: {exc}")


def _check_challenge(challenge, spec, num_inputs, num_layers):
    """Structural contract for a spot-check challenge (the public plan)."""

    if len(challenge.points) != spec.m or len(set(challenge.points)) != spec.m:
        return "wrong point count"
    for point, levels in zip(challenge.points, challenge.levels):
        if not 0 <= point < num_inputs:
            return "point out of range"
        if len(levels) != spec.s or len(set(levels)) != spec.s:
            return "wrong level count"
        if any(not 1 <= lv <= num_layers for lv in levels):
            return "level out of range"
    return None


def transcript_replay(transcript: Transcript, context: ReplayContext) -> ReplayVerdict:
    """Re-verify a transcript; returns the verdict (never raises on bad data)."""

    frames = []
    for i, raw in enumerate(transcript.frames):
        try:
            frame = decode_frame(raw)
        except MalformedMessage as exc:
            return ReplayVerdict(False, f"malformed frame: {exc}", i, None)
        if frame.sender not in ROLES or frame.recipient not in ROLES:
            return ReplayVerdict(False, "frame between unknown roles", i, None)
        if frame.sender == frame.recipient:
            return ReplayVerdict(False, "frame sent to its own sender", i, frame.sender)
        frames.append(frame)

    last_seq = {}
    for i, frame in enumerate(frames):
        prev = last_seq.get(frame.sender)
        if prev is not None and frame.seq <= prev:
            return ReplayVerdict(
                False, "replayed or stale sequence number", i, frame.sender
            )
        last_seq[frame.sender] = frame.seq

    walker = _Walker(frames)
    pp = setup_com(context.security_level)
    try:
        phi = _verify(walker, context, pp)
    except _Aborted as ab:
        return ReplayVerdict(True, abort=ab.abort)
    except _Violation as v:
        return ReplayVerdict(False, v.reason, v.frame_index, v.offender)
    return ReplayVerdict(True, phi_raw=phi)


def _verify(w: _Walker, ctx: ReplayContext, pp) -> int:
    K = MessageKind

    # --- stage 0: both commitments, identically to both receivers --------
    i_mc, body = w.take(ALICE, BOB, K.COMMITMENTS, "model-commit")
    mc = _parse(schema.parse_model_commit, body, i_mc, ALICE, "model-commit")
    i_mcd, body = w.take(ALICE, DEALER, K.COMMITMENTS, "model-commit")
    mcd = _parse(schema.parse_model_commit, body, i_mcd, ALICE, "model-commit")
    if (
        mc.com_a != mcd.com_a
        or mc.com_b != mcd.com_b
        or mc.com_c_layers != mcd.com_c_layers
    ):
        raise _Violation(i_mcd, ALICE, "model-commit equivocation between receivers")
    if len(mc.com_c_layers) != len(ctx.part_c_specs):
        raise _Violation(i_mc, ALICE, "model-commit has the wrong output layer count")

    i_dc, body = w.take(BOB, ALICE, K.COMMITMENTS, "dataset-commit")
    dc = _parse(schema.parse_dataset_commit, body, i_dc, BOB, "dataset-commit")
    i_dcd, body = w.take(BOB, DEALER, K.COMMITMENTS, "dataset-commit")
    dcd = _parse(schema.parse_dataset_commit, body, i_dcd, BOB, "dataset-commit")
    if (
        dc.com_x != dcd.com_x
        or dc.com_y != dcd.com_y
        or dc.n != dcd.n
        or dc.dim != dcd.dim
        or dc.num_classes != dcd.num_classes
    ):
        raise _Violation(i_dcd, BOB, "dataset-commit equivocation between receivers")

    input_dim = 1
    for side in ctx.input_shape:
        input_dim *= side
    if dc.dim != input_dim or dc.num_classes != ctx.num_classes or dc.n < ctx.k:
        raise _Violation(i_dc, BOB, "dataset-commit violates the public parameters")
    n, com_x, com_y = dc.n, dc.com_x, dc.com_y

    # --- stage 1: coins, selection, coverage audit ------------------------
    proj_seed = None
    if ctx.jl_dim is not None:
        i_cc, body = w.take(ALICE, BOB, K.COMMITMENTS, "coin-commit")
        coin = _parse(schema.parse_coin_commit, body, i_cc, ALICE, "coin-commit")
        i_cr, body = w.take(BOB, ALICE, K.INDICES, "coin-reveal")
        reveal = _parse(schema.parse_coin_reveal, body, i_cr, BOB, "coin-reveal")
        i_co, body = w.take(ALICE, BOB, K.INDICES, "coin-open")
        opened = _parse(schema.parse_coin_open, body, i_co, ALICE, "coin-open")
        if not open_com(pp, coin.com_r, opened.r_a, opened.blinder):
            raise _Violation(i_co, ALICE, "coin-opening failed against the commitment")
        proj_seed = coin_flip_seed(opened.r_a, reveal.r_b)

    i_sel, body = w.take(BOB, ALICE, K.INDICES, "selection")
    sel = _parse(schema.parse_selection, body, i_sel, BOB, "selection")
    if len(sel.indices) != ctx.k:
        raise _Violation(i_sel, BOB, "selection-indices: wrong subset size")
    try:
        rep = RepresentativeSet(tuple(sel.indices), n)
    except BlindscoreError as exc:
        raise _Violation(i_sel, BOB, f"selection-indices: {exc}")
    expected_digest = hashlib.sha256(proj_seed).digest() if proj_seed is not None else b""
    if sel.seed_digest != expected_digest:
        raise _Violation(i_sel, BOB, "projection-seed mismatch")

    i_ch, body = w.take(ALICE, BOB, K.CHALLENGE, "coverage")
    chal = _parse(schema.parse_coverage_challenge, body, i_ch, ALICE, "coverage challenge")
    want = min(ctx.num_challenges, n)
    if (
        len(chal.indices) != want
        or len(set(chal.indices)) != want
        or any(not 0 <= i < n for i in chal.indices)
    ):
        raise _Violation(i_ch, ALICE, "coverage-challenge is malformed")

    i_cr2, body = w.take(BOB, ALICE, K.PROOF, "coverage-response")
    resp = _parse(schema.parse_coverage_response, body, i_cr2, BOB, "coverage-response")
    if len(resp.witnesses) != len(chal.indices):
        raise _Violation(i_cr2, BOB, "coverage-response: wrong witness count")
    rep_set = set(rep.indices)
    valid_witnesses = [wit for wit in resp.witnesses if wit in rep_set]
    opened_rows = {}
    for idx in set(chal.indices) | set(valid_witnesses):
        if idx not in resp.openings:
            raise _Violation(i_cr2, BOB, f"coverage-response: missing opening for row {idx}")
        x_bytes, r = resp.openings[idx]
        if not open_com(pp, com_x[idx], x_bytes, r):
            raise _Violation(i_cr2, BOB, f"coverage-opening failed for row {idx}")
        try:
            row = tensor_from_bytes(x_bytes)
        except (MalformedMessage, BlindscoreError) as exc:
            raise _Violation(i_cr2, BOB, f"coverage row {idx} malformed: {exc}")
        if row.shape != (dc.dim,):
            raise _Violation(i_cr2, BOB, f"coverage row {idx} has shape {row.shape}")
        opened_rows[idx] = row
    failures = 0
    for chal_idx, witness in zip(chal.indices, resp.witnesses):
        if witness not in rep_set:
            # An honest responder answers every challenge from the announced
            # subset; a witness outside it is a protocol violation, not just
            # an audit failure.
            raise _Violation(i_cr2, BOB, "coverage witness outside the announced subset")
        if not _pair_distance_ok(opened_rows[chal_idx], opened_rows[witness], ctx.d_raw):
            failures += 1
    if Fraction(failures) > Fraction(ctx.delta) * len(chal.indices):
        # Failing the audit is an outcome, not an offence — the offence is
        # continuing.  If the next frame is an abort, the run was honest.
        w.pending = _Violation(
            i_cr2,
            ALICE,
            f"coverage audit failed ({failures} of {len(chal.indices)} beyond radius) "
            "but the run continued",
        )

    # --- stage 2: middle block handover, trusted inference, both audits ---
    i_bb, body = w.take(ALICE, BOB, K.WEIGHTS, "block-b")
    bb = _parse(schema.parse_block_b, body, i_bb, ALICE, "block-b")
    if not open_com(pp, mc.com_b, bb.theta_b, bb.blinder):
        raise _Violation(i_bb, ALICE, "block-b-opening failed against the commitment")
    try:
        part_b = Model.from_bytes(bb.theta_b)
    except (MalformedMessage, BlindscoreError) as exc:
        raise _Violation(i_bb, ALICE, f"block-b-malformed: {exc}")

    i_im, body = w.take(ALICE, DEALER, K.WEIGHTS, "inference-model")
    im = _parse(schema.parse_inference_model, body, i_im, ALICE, "inference-model")
    i_id, body = w.take(BOB, DEALER, K.ACTIVATIONS, "inference-data")
    idata = _parse(schema.parse_inference_data, body, i_id, BOB, "inference-data")
    if tuple(i for i, _, _ in idata.rows) != rep.indices:
        raise _Violation(i_id, BOB, "inference-data rows must follow the selection order")
    try:
        acts, _, _ = f_inference(
            pp,
            mc.com_a,
            (im.theta_a, im.mixer, im.blinder),
            com_x,
            idata.rows,
            ctx.input_shape,
            DetRng(b"replay", b"unused-blinders"),
        )
    except LocalAbort as ab:
        offender = _attribute(ab.reason)
        raise _Violation(i_im if offender == ALICE else i_id, offender, ab.reason)

    i_ic, body = w.take(DEALER, ALICE, K.COMMITMENTS, "inference-outputs")
    icoms = _parse(schema.parse_inference_coms, body, i_ic, DEALER, "inference-outputs")
    if len(icoms.com_acts) != ctx.k:
        raise _Violation(i_ic, DEALER, "inference-outputs has the wrong count")
    i_ia, body = w.take(DEALER, BOB, K.ACTIVATIONS, "inference-outputs")
    iacts = _parse(schema.parse_inference_acts, body, i_ia, DEALER, "inference-outputs")
    if tuple(i for i, _, _ in iacts.acts) != rep.indices:
        raise _Violation(i_ia, DEALER, "inference-acts must follow the selection order")
    act_bytes_list = []
    for t, (idx, a_bytes, r_act) in enumerate(iacts.acts):
        if not open_com(pp, icoms.com_acts[t], a_bytes, r_act):
            raise _Violation(i_ia, DEALER, f"inference activation {t} does not open")
        if a_bytes != tensor_to_bytes(acts[t]):
            raise _Violation(i_ia, DEALER, f"inference activation {t} differs from the recomputation")
        act_bytes_list.append(a_bytes)

    i_bo, body = w.take(BOB, ALICE, K.ACTIVATIONS, "block-b-outputs")
    bouts = _parse(schema.parse_block_b_outputs, body, i_bo, BOB, "block-b-outputs")
    if tuple(i for i, _ in bouts.outs) != rep.indices:
        raise _Violation(i_bo, BOB, "block-b-outputs must follow the selection order")
    b_bytes_list = []
    for t, (_, b_bytes) in enumerate(bouts.outs):
        try:
            expected = part_b.forward(acts[t])
        except BlindscoreError as exc:
            raise _Violation(i_bo, None, f"middle block recomputation failed: {exc}")
        if b_bytes != tensor_to_bytes(expected):
            raise _Violation(i_bo, BOB, f"block-b-outputs differ from the recomputation at {t}")
        b_bytes_list.append(b_bytes)

    i_tb, body = w.take(BOB, ALICE, K.COMMITMENTS, "trace-b")
    tbc = _parse(lambda b: schema.parse_trace_commit(b, "b"), body, i_tb, BOB, "trace-b commitment")
    com_tb = tbc.com
    try:
        com_ref, _ = cnc_commit_trace(pp, part_b, acts, hide_weights=False)
    except BlindscoreError as exc:
        raise _Violation(i_tb, None, f"middle block recomputation failed: {exc}")
    if (
        com_tb.num_inputs != com_ref.num_inputs
        or com_tb.num_layers != com_ref.num_layers
        or com_tb.weight_root is not None
        or [r.digest for r in com_tb.level_roots] != [r.digest for r in com_ref.level_roots]
    ):
        raise _Violation(i_tb, BOB, "trace-b-binding: commitment differs from the recomputation")

    i_tbc, body = w.take(ALICE, BOB, K.CHALLENGE, "trace-b")
    tbch = _parse(lambda b: schema.parse_trace_challenge(b, "b"), body, i_tbc, ALICE, "trace-b challenge")
    defect = _check_challenge(tbch.challenge, ctx.audit_b, ctx.k, len(part_b.layers))
    if defect:
        raise _Violation(i_tbc, ALICE, f"trace-b-challenge: {defect}")

    i_tbp, body = w.take(BOB, ALICE, K.PROOF, "trace-b")
    tbp = _parse(lambda b: schema.parse_trace_proof(b, "b"), body, i_tbp, BOB, "trace-b proof")
    if tbp.bindings is None or [pt for pt, *_ in tbp.bindings] != list(tbch.challenge.points):
        raise _Violation(i_tbp, BOB, "trace-b-binding: wrong binding points")
    for point, a_bytes, path0, r_act, b_bytes, path_last in tbp.bindings:
        if not mt_verify(pp, com_tb.level_roots[0], point, a_bytes, path0):
            raise _Violation(i_tbp, BOB, "trace-b-binding fails the input root")
        if not open_com(pp, icoms.com_acts[point], a_bytes, r_act):
            raise _Violation(i_tbp, BOB, "trace-b-input-binding fails the delivered activation")
        if not mt_verify(pp, com_tb.level_roots[-1], point, b_bytes, path_last):
            raise _Violation(i_tbp, BOB, "trace-b-binding fails the output root")
        if b_bytes != b_bytes_list[point]:
            raise _Violation(i_tbp, BOB, "block-b-outputs differ from the audited trace")
    try:
        ok = cnc_verify(
            pp, com_tb, tbch.challenge, tbp.proof, list(part_b.layers), weights=list(part_b.weights)
        )
    except MalformedMessage as exc:
        raise _Violation(i_tbp, BOB, f"trace-b proof malformed: {exc}")
    if not ok:
        raise _Violation(i_tbp, BOB, "trace-b proof failed verification")

    i_tc, body = w.take(ALICE, BOB, K.COMMITMENTS, "trace-c")
    tcc = _parse(lambda b: schema.parse_trace_commit(b, "c"), body, i_tc, ALICE, "trace-c commitment")
    com_tc = tcc.com
    if com_tc.weight_root is None:
        raise _Violation(i_tc, ALICE, "trace-c must hide the output block weights")
    if com_tc.num_inputs != ctx.k or com_tc.num_layers != len(ctx.part_c_specs):
        raise _Violation(i_tc, ALICE, "trace-c commitment has the wrong dimensions")
    if tcc.input_openings is None or [t for t, _, _ in tcc.input_openings] != list(range(ctx.k)):
        raise _Violation(i_tc, ALICE, "trace-c-inputs: openings must cover every point")
    for t, leaf, path in tcc.input_openings:
        if not mt_verify(pp, com_tc.level_roots[0], t, leaf, path):
            raise _Violation(i_tc, ALICE, "trace-c-inputs: opening fails the input root")
        if leaf != b_bytes_list[t]:
            raise _Violation(
                i_tc, ALICE, "trace-c-inputs: committed input differs from the middle block output"
            )

    i_tcc, body = w.take(BOB, ALICE, K.CHALLENGE, "trace-c")
    tcch = _parse(lambda b: schema.parse_trace_challenge(b, "c"), body, i_tcc, BOB, "trace-c challenge")
    defect = _check_challenge(tcch.challenge, ctx.audit_c, ctx.k, len(ctx.part_c_specs))
    if defect:
        raise _Violation(i_tcc, BOB, f"trace-c-challenge: {defect}")

    i_tcp, body = w.take(ALICE, BOB, K.PROOF, "trace-c")
    tcp = _parse(lambda b: schema.parse_trace_proof(b, "c"), body, i_tcp, ALICE, "trace-c proof")
    audited_levels = sorted({lv for levels in tcch.challenge.levels for lv in levels})
    if tcp.layer_openings is None or sorted(lv for lv, _ in tcp.layer_openings) != audited_levels:
        raise _Violation(i_tcp, ALICE, "trace-c layer openings do not match the challenge")
    blinder_for = dict(tcp.layer_openings)
    for tr in tcp.proof.transitions:
        if tr.weight_bytes is None:
            raise _Violation(i_tcp, ALICE, "trace-c proof missing a weight opening")
        if tr.level not in blinder_for:
            raise _Violation(i_tcp, ALICE, "trace-c transition outside the challenge")
        if not open_com(pp, mc.com_c_layers[tr.level - 1], tr.weight_bytes, blinder_for[tr.level]):
            raise _Violation(i_tcp, ALICE, "block-c-weights differ from the committed output block")
    try:
        ok = cnc_verify(pp, com_tc, tcch.challenge, tcp.proof, list(ctx.part_c_specs))
    except MalformedMessage as exc:
        raise _Violation(i_tcp, ALICE, f"trace-c proof malformed: {exc}")
    if not ok:
        raise _Violation(i_tcp, ALICE, "trace-c proof failed verification")

    # --- stage 3: authenticated scoring --------------------------------
    i_ms, body = w.take(ALICE, DEALER, K.SCORE, "model-scores")
    ms = _parse(schema.parse_model_scores, body, i_ms, ALICE, "model-scores")
    i_ds, body = w.take(BOB, DEALER, K.SCORE, "data-scores")
    ds = _parse(schema.parse_data_scores, body, i_ds, BOB, "data-scores")
    final_digest = com_tc.level_roots[-1].digest
    if ms.root_final.digest != final_digest:
        raise _Violation(i_ms, ALICE, "score-root differs from the audited output root")
    if ds.root_final.digest != final_digest:
        raise _Violation(i_ds, BOB, "score-root differs from the audited output root")
    if tuple(ms.rep_indices) != rep.indices:
        raise _Violation(i_ms, ALICE, "score-rep differs from the selection")
    if tuple(ds.rep_indices) != rep.indices:
        raise _Violation(i_ds, BOB, "score-rep differs from the selection")
    try:
        report = f_subscore(pp, ctx, com_x, com_y, n, ms, ds)
    except LocalAbort as ab:
        offender = _attribute(ab.reason)
        raise _Violation(i_ds if offender == BOB else i_ms, offender, ab.reason)

    i_ra, body = w.take(DEALER, ALICE, K.SCORE, "result")
    res_a = _parse(schema.parse_result, body, i_ra, DEALER, "result")
    i_rb, body = w.take(DEALER, BOB, K.SCORE, "result")
    res_b = _parse(schema.parse_result, body, i_rb, DEALER, "result")
    if res_a.phi_raw != report.score_raw or res_b.phi_raw != report.score_raw:
        raise _Violation(i_rb, DEALER, "result differs from the recomputed score")
    return report.score_raw
