"""The two protocol parties as sequential state machines.

``AliceParty`` owns the split model (input block + mixer, middle block,
output block); ``BobParty`` owns the labeled dataset.  Each runs as a
thread over a shared transport, records every frame it sends, and either
finishes with the agreed score or aborts with a stage number and cause.

Misbehavior is injected through ``hooks`` — small named interception
points (mutate an outgoing body, swap private state, stop early).  The
honest machines never consult a hook that is not installed.
"""

from __future__ import annotations

import hashlib
import threading
from fractions import Fraction

import numpy as np

from ..audits import (
    CpChallenge,
    cnc_challenge,
    cnc_commit_trace,
    cnc_prove,
    cnc_verify,
    cp_check_pair,
    cp_respond,
    cp_sample,
    weights_to_bytes,
)
from ..commitments import commit, mt_open, mt_verify, open_com, setup_com
from ..errors import (
    BlindscoreError,
    EmptyComplement,
    MalformedMessage,
    Timeout,
)
from ..fixedpoint import FixedTensor, tensor_from_bytes, tensor_to_bytes
from ..layers import Model
from ..rng import DetRng
from ..selection import RepresentativeSet, coin_flip_seed, percentile_distance
from .config import (
    STAGE_COMMIT,
    STAGE_INFER,
    STAGE_SCORE,
    STAGE_SELECT,
    RunConfig,
    coin_contribution,
    label_bytes,
    select_representatives,
)
from .messages import ALICE, BOB, DEALER, MessageKind, decode_frame, encode_frame
from . import schema

__all__ = ["Party", "AliceParty", "BobParty", "LocalAbort", "PeerAbort", "SilentStop"]


class LocalAbort(Exception):
    """This party detected a violation and is aborting the run."""

    def __init__(self, stage_num: int, reason: str):
        super().__init__(f"stage {stage_num}: {reason}")
        self.stage_num = stage_num
        self.reason = reason


class PeerAbort(Exception):
    """Another party announced an abort; unwind quietly."""

    def __init__(self, stage_num: int, reason: str, by: str):
        super().__init__(f"peer {by} aborted at stage {stage_num}: {reason}")
        self.stage_num = stage_num
        self.reason = reason
        self.by = by


class SilentStop(Exception):
    """Adversary hook: stop participating without announcing anything."""


class Party(threading.Thread):
    """Shared plumbing: framed send/recv, sequence checks, abort handling."""

    role = "?"
    peers = ()

    def __init__(self, net, recorder, config: RunConfig, hooks=None):
        super().__init__(name=f"party-{self.role}", daemon=True)
        self.net = net
        self.recorder = recorder
        self.config = config
        self.hooks = dict(hooks or {})
        self.pp = setup_com(config.security_level)
        self._seq = 0
        self._last_seen = {}
        self.stage_num = STAGE_COMMIT
        self.outcome = None  # {"status": "ok"|"abort"|"silent"|"error", ...}

    # -- hook plumbing ---------------------------------------------------

    def hook(self, name: str, value):
        fn = self.hooks.get(name)
        return fn(self, value) if fn is not None else value

    # -- wire helpers ------------------------------------------------------

    def send(self, recipient: str, kind: MessageKind, body: dict) -> None:
        msg_type = body.get("type", "?")
        body = self.hook(f"body:{msg_type}", body)
        kind = self.hook(f"kind:{msg_type}", kind)
        raw = encode_frame(kind, self._seq, self.role, recipient, body)
        raw = self.hook(f"raw:{msg_type}", raw)
        self._seq += 1
        self._transmit(recipient, raw)
        if self.hooks.get(f"dup:{msg_type}"):
            self._transmit(recipient, raw)  # byte-identical replay
        if self.hooks.get(f"stop-after:{msg_type}"):
            raise SilentStop()

    def _transmit(self, recipient: str, raw: bytes) -> None:
        self.recorder.record(raw)
        self.net.send(self.role, recipient, raw)

    def recv(self, sender: str, kind: MessageKind, msg_type: str) -> dict:
        try:
            raw = self.net.recv(self.role, sender, self.config.timeout)
        except Timeout:
            raise LocalAbort(self.stage_num, f"timeout waiting for {msg_type} from {sender}")
        try:
            frame = decode_frame(raw)
        except MalformedMessage as exc:
            raise LocalAbort(self.stage_num, f"malformed frame from {sender}: {exc}")
        if frame.sender != sender or frame.recipient != self.role:
            raise LocalAbort(self.stage_num, f"misrouted frame from {sender}")
        last = self._last_seen.get(sender)
        if last is not None and frame.seq <= last:
            raise LocalAbort(self.stage_num, f"replayed or stale sequence from {sender}")
        self._last_seen[sender] = frame.seq
        if frame.kind == MessageKind.ABORT:
            try:
                info = schema.parse_abort(frame.body)
            except MalformedMessage:
                raise LocalAbort(self.stage_num, f"malformed abort from {sender}")
            raise PeerAbort(info.stage_num, info.reason, info.by)
        if frame.kind != kind or frame.msg_type != msg_type:
            raise LocalAbort(
                self.stage_num,
                f"unexpected message from {sender}: wanted {msg_type}, "
                f"got kind={int(frame.kind)} type={frame.msg_type!r}",
            )
        return frame.body

    def parse(self, parser, body: dict, what: str):
        """Run a schema parser, converting defects into a malformed-abort."""

        try:
            return parser(body)
        except MalformedMessage as exc:
            raise LocalAbort(self.stage_num, f"malformed {what}: {exc}")

    # -- abort handling -----------------------------------------------------

    def _broadcast_abort(self, stage_num: int, reason: str, by: str, skip=()) -> None:
        body = schema.build_abort(stage_num, reason, by)
        for peer in self.peers:
            if peer in skip:
                continue
            try:
                raw = encode_frame(MessageKind.ABORT, self._seq, self.role, peer, body)
                self._seq += 1
                self._transmit(peer, raw)
            except Exception:
                pass  # best effort; the peer may be gone

    def run(self) -> None:
        try:
            self.main()
        except LocalAbort as ab:
            self._broadcast_abort(ab.stage_num, ab.reason, self.role)
            self.outcome = {
                "status": "abort",
                "stage": ab.stage_num,
                "reason": ab.reason,
                "by": self.role,
            }
        except PeerAbort as ab:
            # Forward the announcement to peers that may not have heard it,
            # so nobody sits in a blocking recv until the timeout expires.
            self._broadcast_abort(ab.stage_num, ab.reason, ab.by, skip=(ab.by,))
            self.outcome = {
                "status": "abort",
                "stage": ab.stage_num,
                "reason": ab.reason,
                "by": ab.by,
            }
        except SilentStop:
            self.outcome = {"status": "silent"}
        except BaseException as exc:  # surfaced by the engine as a bug
            self.outcome = {"status": "error", "error": exc}

    def main(self) -> None:  # pragma: no cover - overridden
        raise NotImplementedError

    # -- small shared checks -------------------------------------------------

    def _check_tensor(self, data: bytes, shape: tuple, what: str) -> FixedTensor:
        try:
            t = tensor_from_bytes(data)
        except (MalformedMessage, BlindscoreError) as exc:
            raise LocalAbort(self.stage_num, f"malformed {what}: {exc}")
        if t.shape != tuple(shape):
            raise LocalAbort(self.stage_num, f"{what} has shape {t.shape}, wanted {tuple(shape)}")
        return t

    def _check_challenge_shape(self, challenge, spec, num_inputs, num_layers, what):
        """Reject spot-check challenges wider or deeper than the public plan.

        The cap is leakage-critical on the hidden-weights side: without it a
        malicious verifier could demand every layer of every input and walk
        away with the whole block.
        """

        if len(challenge.points) != spec.m or len(set(challenge.points)) != spec.m:
            raise LocalAbort(self.stage_num, f"{what}: wrong point count")
        for point, levels in zip(challenge.points, challenge.levels):
            if not 0 <= point < num_inputs:
                raise LocalAbort(self.stage_num, f"{what}: point out of range")
            if len(levels) != spec.s or len(set(levels)) != spec.s:
                raise LocalAbort(self.stage_num, f"{what}: wrong level count")
            if any(not 1 <= lv <= num_layers for lv in levels):
                raise LocalAbort(self.stage_num, f"{what}: level out of range")


def _pair_distance_ok(x_row: FixedTensor, w_row: FixedTensor, d_raw: int) -> bool:
    pair = FixedTensor.from_raw(np.stack([x_row.raw, w_row.raw]))
    _dist, ok = cp_check_pair(pair, 0, 1, d_raw)
    return ok


class AliceParty(Party):
    """Model owner: commits the blocks, audits coverage and the middle
    block, runs the output block under a hidden-weights spot check, and
    receives the final score from the neutral evaluator."""

    role = ALICE
    peers = (BOB, DEALER)

    def __init__(self, net, recorder, config, split, hooks=None):
        super().__init__(net, recorder, config, hooks)
        self.split = split
        self._blinders = DetRng(config.alice_seed, b"blinders")
        self.phi_raw = None

    # -- per-stage helpers ----------------------------------------------------

    def _validate_own_inputs(self) -> None:
        cfg, split = self.config, self.split
        if tuple(split.input_shape) != tuple(cfg.input_shape):
            raise LocalAbort(STAGE_COMMIT, "config: model input shape mismatch")
        if tuple(split.part_c.layers) != tuple(cfg.part_c_specs):
            raise LocalAbort(STAGE_COMMIT, "config: output block architecture mismatch")
        if tuple(split.output_shape) != (cfg.num_classes,):
            raise LocalAbort(STAGE_COMMIT, "config: class count mismatch")
        if cfg.audit_b.s > len(split.part_b.layers):
            raise LocalAbort(STAGE_COMMIT, "config: audit_b.s exceeds middle block depth")

    def main(self) -> None:
        cfg = self.config
        self._validate_own_inputs()

        # Stage 0: commit to every private model component.
        self.stage_num = STAGE_COMMIT
        block_a = self.split.block_a_bytes()
        theta_a = self.split.part_a.to_bytes()
        theta_b = self.split.part_b.to_bytes()
        com_a, r_a = commit(self.pp, block_a, self._blinders)
        com_b, r_b = commit(self.pp, theta_b, self._blinders)
        layer_blobs = [weights_to_bytes(ws) for ws in self.split.part_c.weights]
        com_c, r_c = [], []
        for blob in layer_blobs:
            c, r = commit(self.pp, blob, self._blinders)
            com_c.append(c)
            r_c.append(r)
        body = schema.build_model_commit("commit", com_a, com_b, com_c)
        self.send(BOB, MessageKind.COMMITMENTS, body)
        self.send(DEALER, MessageKind.COMMITMENTS, dict(body))
        if self.hooks.get("stop:after-commit"):
            raise SilentStop()

        ds = self.parse(
            schema.parse_dataset_commit,
            self.recv(BOB, MessageKind.COMMITMENTS, "dataset-commit"),
            "dataset-commit",
        )
        if ds.dim != cfg.input_dim:
            raise LocalAbort(STAGE_COMMIT, "dataset dim does not match the model input")
        if ds.num_classes != cfg.num_classes:
            raise LocalAbort(STAGE_COMMIT, "dataset class count does not match the model")
        if ds.n < cfg.k:
            raise LocalAbort(STAGE_COMMIT, "dataset smaller than the selection size")
        n = ds.n

        # Stage 1: joint projection seed, selection, coverage audit.
        self.stage_num = STAGE_SELECT
        proj_seed = None
        if cfg.jl_dim is not None:
            my_r = coin_contribution(cfg.alice_seed)
            com_coin, r_coin = commit(self.pp, my_r, self._blinders)
            self.send(BOB, MessageKind.COMMITMENTS, schema.build_coin_commit("select", com_coin))
            reveal = self.parse(
                schema.parse_coin_reveal,
                self.recv(BOB, MessageKind.INDICES, "coin-reveal"),
                "coin-reveal",
            )
            self.send(BOB, MessageKind.INDICES, schema.build_coin_open("select", my_r, r_coin))
            proj_seed = coin_flip_seed(my_r, reveal.r_b)

        sel = self.parse(
            schema.parse_selection,
            self.recv(BOB, MessageKind.INDICES, "selection"),
            "selection",
        )
        if len(sel.indices) != cfg.k:
            raise LocalAbort(STAGE_SELECT, "selection-indices: wrong subset size")
        try:
            rep = RepresentativeSet(tuple(sel.indices), n)
        except BlindscoreError as exc:
            raise LocalAbort(STAGE_SELECT, f"selection-indices: {exc}")
        expected_digest = hashlib.sha256(proj_seed).digest() if proj_seed is not None else b""
        if sel.seed_digest != expected_digest:
            raise LocalAbort(STAGE_SELECT, "projection-seed mismatch")

        cp_rng = DetRng(cfg.alice_seed, b"cp-challenge")
        challenge = cp_sample(cp_rng, n, cfg.num_challenges)
        self.send(
            BOB, MessageKind.CHALLENGE, schema.build_coverage_challenge("select", challenge.indices)
        )
        resp = self.parse(
            schema.parse_coverage_response,
            self.recv(BOB, MessageKind.PROOF, "coverage-response"),
            "coverage-response",
        )
        if len(resp.witnesses) != len(challenge.indices):
            raise LocalAbort(STAGE_SELECT, "coverage-response: wrong witness count")
        rep_set = set(rep.indices)
        # A witness outside the announced subset is an automatic failure;
        # only in-range rows can be opened, so gather those first.
        valid_witnesses = [w for w in resp.witnesses if w in rep_set]
        opened = {}
        for idx in set(challenge.indices) | set(valid_witnesses):
            if idx not in resp.openings:
                raise LocalAbort(STAGE_SELECT, f"coverage-response: missing opening for row {idx}")
            x_bytes, r = resp.openings[idx]
            if not open_com(self.pp, ds.com_x[idx], x_bytes, r):
                raise LocalAbort(STAGE_SELECT, f"coverage-opening failed for row {idx}")
            opened[idx] = self._check_tensor(x_bytes, (ds.dim,), "coverage row")
        failures = 0
        for chal_idx, witness in zip(challenge.indices, resp.witnesses):
            if witness not in rep_set:
                failures += 1
                continue
            if not _pair_distance_ok(opened[chal_idx], opened[witness], cfg.d_raw):
                failures += 1
        if Fraction(failures) > Fraction(cfg.delta) * len(challenge.indices):
            raise LocalAbort(
                STAGE_SELECT,
                f"coverage-failures: {failures} of {len(challenge.indices)} beyond radius",
            )

        # Stage 2: dealer inference on the input block, then both trace audits.
        self.stage_num = STAGE_INFER
        self.send(BOB, MessageKind.WEIGHTS, schema.build_block_b("infer", theta_b, r_b))
        self.send(
            DEALER,
            MessageKind.WEIGHTS,
            schema.build_inference_model("infer", theta_a, [int(p) for p in self.split.mixer_perm], r_a),
        )
        coms = self.parse(
            schema.parse_inference_coms,
            self.recv(DEALER, MessageKind.COMMITMENTS, "inference-outputs"),
            "inference-outputs",
        )
        if len(coms.com_acts) != cfg.k:
            raise LocalAbort(STAGE_INFER, "inference-outputs: wrong activation count")

        outs = self.parse(
            schema.parse_block_b_outputs,
            self.recv(BOB, MessageKind.ACTIVATIONS, "block-b-outputs"),
            "block-b-outputs",
        )
        if tuple(i for i, _ in outs.outs) != rep.indices:
            raise LocalAbort(STAGE_INFER, "block-b-outputs: row order does not match selection")
        c_in_shape = tuple(self.split.part_c.input_shape)
        b_bytes_list = [bb for _, bb in outs.outs]
        b_tensors = [self._check_tensor(bb, c_in_shape, "middle block output") for bb in b_bytes_list]

        tb_commit = self.parse(
            lambda b: schema.parse_trace_commit(b, "b"),
            self.recv(BOB, MessageKind.COMMITMENTS, "trace-b"),
            "trace-b commitment",
        )
        com_tb = tb_commit.com
        if com_tb.weight_root is not None:
            raise LocalAbort(STAGE_INFER, "trace-b must not hide the middle block weights")
        if com_tb.num_inputs != cfg.k or com_tb.num_layers != len(self.split.part_b.layers):
            raise LocalAbort(STAGE_INFER, "trace-b commitment has the wrong dimensions")

        tb_rng = DetRng(cfg.alice_seed, b"trace-b-challenge")
        tb_challenge = cnc_challenge(
            tb_rng, cfg.k, com_tb.num_layers, cfg.audit_b.m, cfg.audit_b.s
        )
        self.send(BOB, MessageKind.CHALLENGE, schema.build_trace_challenge("infer", "b", tb_challenge))
        tb_proof = self.parse(
            lambda b: schema.parse_trace_proof(b, "b"),
            self.recv(BOB, MessageKind.PROOF, "trace-b"),
            "trace-b proof",
        )
        if tb_proof.bindings is None or tuple(b[0] for b in tb_proof.bindings) != tb_challenge.points:
            raise LocalAbort(STAGE_INFER, "trace-b-malformed: bindings do not match the challenge")
        for point, a_bytes, path0, r_act, b_out, path_last in tb_proof.bindings:
            if not mt_verify(self.pp, com_tb.level_roots[0], point, a_bytes, path0):
                raise LocalAbort(STAGE_INFER, "trace-b-binding: input leaf fails its root")
            if not open_com(self.pp, coms.com_acts[point], a_bytes, r_act):
                raise LocalAbort(
                    STAGE_INFER, "trace-b-input-binding: leaf differs from the dealer commitment"
                )
            if not mt_verify(self.pp, com_tb.level_roots[-1], point, b_out, path_last):
                raise LocalAbort(STAGE_INFER, "trace-b-binding: output leaf fails its root")
            if b_out != b_bytes_list[point]:
                raise LocalAbort(STAGE_INFER, "block-b-outputs: sent outputs differ from the trace")
        try:
            ok = cnc_verify(
                self.pp,
                com_tb,
                tb_challenge,
                tb_proof.proof,
                self.split.part_b.layers,
                weights=self.split.part_b.weights,
            )
        except MalformedMessage as exc:
            raise LocalAbort(STAGE_INFER, f"trace-b-malformed: {exc}")
        if not ok:
            raise LocalAbort(STAGE_INFER, "trace-b-proof failed verification")

        # Output block: run, commit the trace, prove under Bob's challenge.
        model_c = self.hook("alice:trace-c-model", self.split.part_c)
        c_inputs = self.hook("alice:trace-c-inputs", b_tensors)
        try:
            com_tc, tc_state = cnc_commit_trace(self.pp, model_c, c_inputs, hide_weights=True)
        except BlindscoreError as exc:
            raise LocalAbort(STAGE_INFER, f"output block failed: {exc}")
        input_openings = [
            (t, tensor_to_bytes(c_inputs[t]), mt_open(self.pp, tc_state.level_trees[0], t))
            for t in range(cfg.k)
        ]
        self.send(
            BOB,
            MessageKind.COMMITMENTS,
            schema.build_trace_commit("infer", "c", com_tc, input_openings=input_openings),
        )
        tc_chal_msg = self.parse(
            lambda b: schema.parse_trace_challenge(b, "c"),
            self.recv(BOB, MessageKind.CHALLENGE, "trace-c"),
            "trace-c challenge",
        )
        tc_challenge = tc_chal_msg.challenge
        self._check_challenge_shape(
            tc_challenge, cfg.audit_c, cfg.k, len(self.split.part_c.layers), "trace-c-challenge"
        )
        tc_proof = cnc_prove(tc_state, tc_challenge)
        audited_levels = sorted({lv for levels in tc_challenge.levels for lv in levels})
        layer_openings = [(lv, r_c[lv - 1]) for lv in audited_levels]
        self.send(
            BOB,
            MessageKind.PROOF,
            schema.build_trace_proof("infer", "c", tc_proof, layer_openings=layer_openings),
        )

        # Stage 3: hand the authenticated outputs to the neutral evaluator.
        self.stage_num = STAGE_SCORE
        outputs = [
            (
                t,
                tensor_to_bytes(tc_state.trace[t][-1]),
                mt_open(self.pp, tc_state.level_trees[-1], t),
            )
            for t in range(cfg.k)
        ]
        self.send(
            DEALER,
            MessageKind.SCORE,
            schema.build_model_scores("score", com_tc.level_roots[-1], rep.indices, outputs),
        )
        result = self.parse(
            schema.parse_result,
            self.recv(DEALER, MessageKind.SCORE, "result"),
            "result",
        )
        self.phi_raw = result.phi_raw
        self.outcome = {"status": "ok", "phi_raw": result.phi_raw}


class BobParty(Party):
    """Data owner: commits every row and label, selects and defends the
    representative subset, runs the middle block under a spot check, and
    audits the model owner's output block."""

    role = BOB
    peers = (ALICE, DEALER)

    def __init__(self, net, recorder, config, dataset, hooks=None):
        super().__init__(net, recorder, config, hooks)
        self.dataset = dataset
        self._blinders = DetRng(config.bob_seed, b"blinders")
        self.phi_raw = None

    def _validate_own_inputs(self) -> None:
        cfg, ds = self.config, self.dataset
        if ds.dim != cfg.input_dim:
            raise LocalAbort(STAGE_COMMIT, "config: dataset dim does not fill the input shape")
        if ds.num_classes != cfg.num_classes:
            raise LocalAbort(STAGE_COMMIT, "config: dataset class count mismatch")
        if ds.n < cfg.k:
            raise LocalAbort(STAGE_COMMIT, "config: dataset smaller than the selection size")

    def main(self) -> None:
        cfg = self.config
        ds = self.dataset
        self._validate_own_inputs()
        n = ds.n

        # Stage 0: receive model commitments, commit every row and label.
        self.stage_num = STAGE_COMMIT
        model_coms = self.parse(
            schema.parse_model_commit,
            self.recv(ALICE, MessageKind.COMMITMENTS, "model-commit"),
            "model-commit",
        )
        if len(model_coms.com_c_layers) != len(cfg.part_c_specs):
            raise LocalAbort(STAGE_COMMIT, "model-commit: wrong output block depth")

        row_bytes = [tensor_to_bytes(ds.row(i)) for i in range(n)]
        com_x, r_x = [], []
        for rb in row_bytes:
            c, r = commit(self.pp, rb, self._blinders)
            com_x.append(c)
            r_x.append(r)
        com_y, r_y = [], []
        for y in ds.labels:
            c, r = commit(self.pp, label_bytes(y), self._blinders)
            com_y.append(c)
            r_y.append(r)
        body = schema.build_dataset_commit("commit", com_x, com_y, n, ds.dim, ds.num_classes)
        self.send(ALICE, MessageKind.COMMITMENTS, body)
        self.send(DEALER, MessageKind.COMMITMENTS, dict(body))

        # Stage 1: coin flip (optional), selection, self-check, coverage.
        self.stage_num = STAGE_SELECT
        proj_seed = None
        if cfg.jl_dim is not None:
            coin_com = self.parse(
                schema.parse_coin_commit,
                self.recv(ALICE, MessageKind.COMMITMENTS, "coin-commit"),
                "coin-commit",
            )
            my_r = coin_contribution(cfg.bob_seed)
            self.send(ALICE, MessageKind.INDICES, schema.build_coin_reveal("select", my_r))
            opened = self.parse(
                schema.parse_coin_open,
                self.recv(ALICE, MessageKind.INDICES, "coin-open"),
                "coin-open",
            )
            if not open_com(self.pp, coin_com.com_r, opened.r_a, opened.blinder):
                raise LocalAbort(STAGE_SELECT, "coin-opening failed")
            proj_seed = coin_flip_seed(opened.r_a, my_r)
        used_seed = self.hook("bob:jl-seed", proj_seed)
        rep = select_representatives(ds, cfg.k, cfg.jl_dim, used_seed)
        rep = self.hook("bob:selection-indices", rep)
        self._rep = rep  # exposed so misbehaviour hooks can see the live selection
        if not self.hooks.get("bob:skip-dprime") and cfg.k < n:
            try:
                d_prime = percentile_distance(ds.features, rep, cfg.delta)
            except EmptyComplement:
                d_prime = 0
            if d_prime > cfg.d_raw:
                raise LocalAbort(
                    STAGE_SELECT,
                    f"d-prime self-check: {d_prime} exceeds the public radius {cfg.d_raw}",
                )
        seed_digest = hashlib.sha256(used_seed).digest() if used_seed is not None else b""
        self.send(
            ALICE, MessageKind.INDICES, schema.build_selection("select", rep.indices, seed_digest)
        )

        chal = self.parse(
            schema.parse_coverage_challenge,
            self.recv(ALICE, MessageKind.CHALLENGE, "coverage"),
            "coverage challenge",
        )
        want = min(cfg.num_challenges, n)
        if (
            len(chal.indices) != want
            or len(set(chal.indices)) != want
            or any(not 0 <= i < n for i in chal.indices)
        ):
            raise LocalAbort(STAGE_SELECT, "coverage-challenge is malformed")
        witnesses = cp_respond(ds.features, rep, CpChallenge(chal.indices)).witnesses
        witnesses = self.hook("bob:witnesses", witnesses)
        reveal_rows = sorted(set(chal.indices) | set(witnesses))
        openings = [(i, row_bytes[i], r_x[i]) for i in reveal_rows]
        self.send(
            ALICE,
            MessageKind.PROOF,
            schema.build_coverage_response("select", witnesses, openings),
        )

        # Stage 2: receive the middle block, dealer inference, both audits.
        self.stage_num = STAGE_INFER
        bb = self.parse(
            schema.parse_block_b,
            self.recv(ALICE, MessageKind.WEIGHTS, "block-b"),
            "block-b",
        )
        if not open_com(self.pp, model_coms.com_b, bb.theta_b, bb.blinder):
            raise LocalAbort(STAGE_INFER, "block-b-opening failed against the commitment")
        try:
            part_b = Model.from_bytes(bb.theta_b)
        except (MalformedMessage, BlindscoreError) as exc:
            raise LocalAbort(STAGE_INFER, f"block-b-malformed: {exc}")
        if cfg.audit_b.s > len(part_b.layers):
            raise LocalAbort(STAGE_INFER, "audit plan deeper than the middle block")

        self.send(
            DEALER,
            MessageKind.ACTIVATIONS,
            schema.build_inference_data(
                "infer", [(i, row_bytes[i], r_x[i]) for i in rep.indices]
            ),
        )
        acts_msg = self.parse(
            schema.parse_inference_acts,
            self.recv(DEALER, MessageKind.ACTIVATIONS, "inference-outputs"),
            "inference-outputs",
        )
        if tuple(i for i, _, _ in acts_msg.acts) != rep.indices:
            raise LocalAbort(STAGE_INFER, "inference-outputs do not match the selection order")
        b_in_shape = tuple(part_b.input_shape)
        a_tensors = [self._check_tensor(ab, b_in_shape, "input block activation") for _, ab, _ in acts_msg.acts]
        act_blinders = [r for _, _, r in acts_msg.acts]
        a_tensors = self.hook("bob:block-b-inputs", a_tensors)

        try:
            com_tb, tb_state = cnc_commit_trace(self.pp, part_b, a_tensors, hide_weights=False)
        except BlindscoreError as exc:
            raise LocalAbort(STAGE_INFER, f"block-b-forward failed: {exc}")
        b_outs = [
            (rep.indices[t], tensor_to_bytes(tb_state.trace[t][-1])) for t in range(cfg.k)
        ]
        self.send(ALICE, MessageKind.ACTIVATIONS, schema.build_block_b_outputs("infer", b_outs))
        self.send(
            ALICE, MessageKind.COMMITMENTS, schema.build_trace_commit("infer", "b", com_tb)
        )
        tb_chal_msg = self.parse(
            lambda b: schema.parse_trace_challenge(b, "b"),
            self.recv(ALICE, MessageKind.CHALLENGE, "trace-b"),
            "trace-b challenge",
        )
        tb_challenge = tb_chal_msg.challenge
        self._check_challenge_shape(
            tb_challenge, cfg.audit_b, cfg.k, len(part_b.layers), "trace-b-challenge"
        )
        tb_proof = cnc_prove(tb_state, tb_challenge)
        bindings = [
            (
                t,
                tensor_to_bytes(tb_state.trace[t][0]),
                mt_open(self.pp, tb_state.level_trees[0], t),
                act_blinders[t],
                tensor_to_bytes(tb_state.trace[t][-1]),
                mt_open(self.pp, tb_state.level_trees[-1], t),
            )
            for t in tb_challenge.points
        ]
        self.send(
            ALICE,
            MessageKind.PROOF,
            schema.build_trace_proof("infer", "b", tb_proof, bindings=bindings),
        )

        # Audit the output block: bind its inputs to our outputs, challenge,
        # verify the openings against the stage-0 per-layer commitments.
        tc_commit = self.parse(
            lambda b: schema.parse_trace_commit(b, "c"),
            self.recv(ALICE, MessageKind.COMMITMENTS, "trace-c"),
            "trace-c commitment",
        )
        com_tc = tc_commit.com
        num_layers_c = len(cfg.part_c_specs)
        if com_tc.weight_root is None:
            raise LocalAbort(STAGE_INFER, "trace-c must hide the output block weights")
        if com_tc.num_inputs != cfg.k or com_tc.num_layers != num_layers_c:
            raise LocalAbort(STAGE_INFER, "trace-c commitment has the wrong dimensions")
        if tc_commit.input_openings is None or [t for t, _, _ in tc_commit.input_openings] != list(
            range(cfg.k)
        ):
            raise LocalAbort(STAGE_INFER, "trace-c-inputs: openings must cover every point")
        for t, leaf, path in tc_commit.input_openings:
            if not mt_verify(self.pp, com_tc.level_roots[0], t, leaf, path):
                raise LocalAbort(STAGE_INFER, "trace-c-inputs: opening fails the input root")
            if leaf != b_outs[t][1]:
                raise LocalAbort(
                    STAGE_INFER, "trace-c-inputs: committed input differs from the middle block output"
                )

        tc_rng = DetRng(cfg.bob_seed, b"trace-c-challenge")
        tc_challenge = cnc_challenge(tc_rng, cfg.k, num_layers_c, cfg.audit_c.m, cfg.audit_c.s)
        self.send(ALICE, MessageKind.CHALLENGE, schema.build_trace_challenge("infer", "c", tc_challenge))
        tc_proof = self.parse(
            lambda b: schema.parse_trace_proof(b, "c"),
            self.recv(ALICE, MessageKind.PROOF, "trace-c"),
            "trace-c proof",
        )
        audited_levels = sorted({lv for levels in tc_challenge.levels for lv in levels})
        if tc_proof.layer_openings is None or sorted(lv for lv, _ in tc_proof.layer_openings) != audited_levels:
            raise LocalAbort(STAGE_INFER, "trace-c-malformed: layer openings do not match the challenge")
        blinder_for = dict(tc_proof.layer_openings)
        for tr in tc_proof.proof.transitions:
            if tr.weight_bytes is None:
                raise LocalAbort(STAGE_INFER, "trace-c-malformed: missing weight opening")
            if tr.level not in blinder_for:
                raise LocalAbort(STAGE_INFER, "trace-c-malformed: transition outside the challenge")
            if not open_com(
                self.pp, model_coms.com_c_layers[tr.level - 1], tr.weight_bytes, blinder_for[tr.level]
            ):
                raise LocalAbort(
                    STAGE_INFER, "block-c-weights differ from the committed output block"
                )
        try:
            ok = cnc_verify(
                self.pp, com_tc, tc_challenge, tc_proof.proof, list(cfg.part_c_specs)
            )
        except MalformedMessage as exc:
            raise LocalAbort(STAGE_INFER, f"trace-c-malformed: {exc}")
        if not ok:
            raise LocalAbort(STAGE_INFER, "trace-c-proof failed verification")

        # Stage 3: give the evaluator the full table, selected labels, and
        # the output root we just audited.
        self.stage_num = STAGE_SCORE
        rows = [(i, row_bytes[i], r_x[i]) for i in range(n)]
        labels = [(i, int(ds.labels[i]), r_y[i]) for i in rep.indices]
        self.send(
            DEALER,
            MessageKind.SCORE,
            schema.build_data_scores("score", com_tc.level_roots[-1], rep.indices, rows, labels),
        )
        result = self.parse(
            schema.parse_result,
            self.recv(DEALER, MessageKind.SCORE, "result"),
            "result",
        )
        self.phi_raw = result.phi_raw
        self.outcome = {"status": "ok", "phi_raw": result.phi_raw}
