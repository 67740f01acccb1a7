"""The neutral evaluator: both trusted dealer calls of the protocol.

``f_inference`` opens the committed input block and the committed selected
rows, computes the channel-mixed activations, and splits the result
asymmetrically: the data owner receives the activations with commitment
openings, the model owner receives only the commitments.  ``f_subscore``
opens everything needed for the score — authenticated logits, selected
labels, the full feature table — computes the three subscores, and hands
both parties nothing but the aggregate.

Both cores are plain functions so tests can drive them directly;
``DealerParty`` wires them to the transport.
"""

from __future__ import annotations

import numpy as np

from ..commitments import commit, mt_verify, open_com
from ..errors import BlindscoreError, MalformedMessage
from ..fixedpoint import FixedTensor, tensor_from_bytes, tensor_to_bytes
from ..layers import Model
from ..rng import DetRng
from ..scoring import ScoreReport, subscore
from ..selection import RepresentativeSet
from .config import (
    STAGE_COMMIT,
    STAGE_INFER,
    STAGE_SCORE,
    RunConfig,
    label_bytes,
)
from .messages import ALICE, BOB, DEALER, MessageKind
from .parties import LocalAbort, Party
from . import schema

__all__ = ["DealerParty", "f_inference", "f_subscore"]


def f_inference(pp, com_a, model_open, com_x, row_openings, input_shape, blinder_rng):
    """Trusted inference over the committed input block.

    ``model_open`` is ``(theta_a_bytes, mixer, blinder)``; ``row_openings``
    is an ordered list of ``(row_index, row_bytes, blinder)``.  Returns
    ``(acts, commitments, openings)`` where ``acts[i]`` are the mixed
    activation tensors in input order.  Raises ``LocalAbort`` (stage 2) on
    any opening or shape failure — the caller delivers that to both sides.
    """

    theta_a, mixer, blinder = model_open
    block_a_bytes = theta_a + np.asarray(mixer, dtype=">u4").tobytes()
    if not open_com(pp, com_a, block_a_bytes, blinder):
        raise LocalAbort(STAGE_INFER, "block-a-opening failed against the commitment")
    try:
        part_a = Model.from_bytes(theta_a)
    except (MalformedMessage, BlindscoreError) as exc:
        raise LocalAbort(STAGE_INFER, f"block-a-malformed: {exc}")
    perm = np.asarray(mixer, dtype=np.int64)
    out_channels = part_a.shapes()[-1][0]
    if perm.shape != (out_channels,) or sorted(perm.tolist()) != list(range(out_channels)):
        raise LocalAbort(STAGE_INFER, "mixer is not a permutation of the output channels")

    if len(row_openings) == 0:
        raise LocalAbort(STAGE_INFER, "inference-data: no rows")
    seen = set()
    acts, coms, opens = [], [], []
    for idx, row_bytes, r in row_openings:
        if not 0 <= idx < len(com_x) or idx in seen:
            raise LocalAbort(STAGE_INFER, "inference-data: bad row index")
        seen.add(idx)
        if not open_com(pp, com_x[idx], row_bytes, r):
            raise LocalAbort(STAGE_INFER, f"data-opening failed for row {idx}")
        try:
            row = tensor_from_bytes(row_bytes)
            x = FixedTensor.from_raw(row.raw.reshape(tuple(input_shape)))
            a = part_a.forward(x)
        except (MalformedMessage, BlindscoreError, ValueError) as exc:
            raise LocalAbort(STAGE_INFER, f"inference failed on row {idx}: {exc}")
        mixed = FixedTensor.from_raw(a.raw[perm])
        act_bytes = tensor_to_bytes(mixed)
        com, blind = commit(pp, act_bytes, blinder_rng)
        acts.append(mixed)
        coms.append(com)
        opens.append((idx, act_bytes, blind))
    return acts, coms, opens


def f_subscore(pp, config: RunConfig, com_x, com_y, n, alice_msg, bob_msg):
    """Trusted scoring over authenticated inputs from both sides.

    Verifies: both parties name the same output root and selection, the
    logits open against that root leaf-by-leaf, every feature row opens
    against its registered commitment, and the selected labels open
    against theirs.  Returns the full ``ScoreReport``; only the aggregate
    may be sent back to the parties.
    """

    if alice_msg.root_final.digest != bob_msg.root_final.digest:
        raise LocalAbort(STAGE_SCORE, "score-root-mismatch between the parties")
    if alice_msg.rep_indices != bob_msg.rep_indices:
        raise LocalAbort(STAGE_SCORE, "score-rep-mismatch between the parties")
    try:
        rep = RepresentativeSet(tuple(bob_msg.rep_indices), n)
    except BlindscoreError as exc:
        raise LocalAbort(STAGE_SCORE, f"score-rep-invalid: {exc}")
    k = rep.k
    if k != config.k:
        raise LocalAbort(STAGE_SCORE, "score-rep-invalid: wrong subset size")

    if [t for t, _, _ in alice_msg.outputs] != list(range(k)):
        raise LocalAbort(STAGE_SCORE, "model-scores must cover every selected point in order")
    z_rows = []
    for t, z_bytes, path in alice_msg.outputs:
        if not mt_verify(pp, alice_msg.root_final, t, z_bytes, path):
            raise LocalAbort(STAGE_SCORE, f"score-output-binding failed at point {t}")
        try:
            z = tensor_from_bytes(z_bytes)
        except (MalformedMessage, BlindscoreError) as exc:
            raise LocalAbort(STAGE_SCORE, f"score-output malformed at point {t}: {exc}")
        if z.shape != (config.num_classes,):
            raise LocalAbort(STAGE_SCORE, f"score-output has shape {z.shape}")
        z_rows.append(z.raw)

    if [i for i, _, _ in bob_msg.rows] != list(range(n)):
        raise LocalAbort(STAGE_SCORE, "data-scores must open every row exactly once, in order")
    feat_rows = []
    dim = None
    for i, row_bytes, r in bob_msg.rows:
        if not open_com(pp, com_x[i], row_bytes, r):
            raise LocalAbort(STAGE_SCORE, f"data-opening failed for row {i}")
        try:
            row = tensor_from_bytes(row_bytes)
        except (MalformedMessage, BlindscoreError) as exc:
            raise LocalAbort(STAGE_SCORE, f"feature row {i} malformed: {exc}")
        if len(row.shape) != 1 or (dim is not None and row.shape != (dim,)):
            raise LocalAbort(STAGE_SCORE, f"feature row {i} has shape {row.shape}")
        dim = row.shape[0]
        feat_rows.append(row.raw)

    if [i for i, _, _ in bob_msg.labels] != list(rep.indices):
        raise LocalAbort(STAGE_SCORE, "data-scores labels must follow the selection order")
    labels = []
    for i, y, r in bob_msg.labels:
        if not 0 <= y < config.num_classes:
            raise LocalAbort(STAGE_SCORE, f"label for row {i} out of range")
        if not open_com(pp, com_y[i], label_bytes(y), r):
            raise LocalAbort(STAGE_SCORE, f"label-opening failed for row {i}")
        labels.append(y)

    features = FixedTensor.from_raw(np.stack(feat_rows))
    logits = FixedTensor.from_raw(np.stack(z_rows))
    try:
        report = subscore(logits, labels, features, rep, config.scoring)
    except BlindscoreError as exc:
        raise LocalAbort(STAGE_SCORE, f"score-computation failed: {exc}")
    return report


class DealerParty(Party):
    """Transport wiring for the two trusted calls."""

    role = DEALER
    peers = (ALICE, BOB)

    def __init__(self, net, recorder, config, hooks=None):
        super().__init__(net, recorder, config, hooks)
        self._act_blinders = DetRng(config.dealer_seed, b"act-blinders")
        self.report: ScoreReport | None = None
        self.phi_raw = None

    def main(self) -> None:
        cfg = self.config

        # Stage 0: collect both public commitment registries.
        self.stage_num = STAGE_COMMIT
        model_coms = self.parse(
            schema.parse_model_commit,
            self.recv(ALICE, MessageKind.COMMITMENTS, "model-commit"),
            "model-commit",
        )
        ds = self.parse(
            schema.parse_dataset_commit,
            self.recv(BOB, MessageKind.COMMITMENTS, "dataset-commit"),
            "dataset-commit",
        )
        if ds.dim != cfg.input_dim or ds.num_classes != cfg.num_classes or ds.n < cfg.k:
            raise LocalAbort(STAGE_COMMIT, "dataset parameters do not match the public config")

        # Stage 2: trusted inference over the input block.
        self.stage_num = STAGE_INFER
        model_msg = self.parse(
            schema.parse_inference_model,
            self.recv(ALICE, MessageKind.WEIGHTS, "inference-model"),
            "inference-model",
        )
        data_msg = self.parse(
            schema.parse_inference_data,
            self.recv(BOB, MessageKind.ACTIVATIONS, "inference-data"),
            "inference-data",
        )
        if len(data_msg.rows) != cfg.k:
            raise LocalAbort(STAGE_INFER, "inference-data: wrong row count")
        _acts, coms, opens = f_inference(
            self.pp,
            model_coms.com_a,
            (model_msg.theta_a, model_msg.mixer, model_msg.blinder),
            ds.com_x,
            data_msg.rows,
            cfg.input_shape,
            self._act_blinders,
        )
        self._inference_rows = tuple(i for i, _, _ in data_msg.rows)
        self.send(ALICE, MessageKind.COMMITMENTS, schema.build_inference_coms("infer", coms))
        self.send(BOB, MessageKind.ACTIVATIONS, schema.build_inference_acts("infer", opens))

        # Stage 3: trusted scoring; deliver only the aggregate.
        self.stage_num = STAGE_SCORE
        alice_msg = self.parse(
            schema.parse_model_scores,
            self.recv(ALICE, MessageKind.SCORE, "model-scores"),
            "model-scores",
        )
        bob_msg = self.parse(
            schema.parse_data_scores,
            self.recv(BOB, MessageKind.SCORE, "data-scores"),
            "data-scores",
        )
        if tuple(bob_msg.rep_indices) != self._inference_rows:
            raise LocalAbort(STAGE_SCORE, "score-rep-mismatch with the inference batch")
        report = f_subscore(self.pp, cfg, ds.com_x, ds.com_y, ds.n, alice_msg, bob_msg)
        self.report = report
        self.phi_raw = report.score_raw
        result = schema.build_result("score", report.score_raw)
        self.send(ALICE, MessageKind.SCORE, result)
        self.send(BOB, MessageKind.SCORE, dict(result))
        self.outcome = {"status": "ok", "phi_raw": report.score_raw}
