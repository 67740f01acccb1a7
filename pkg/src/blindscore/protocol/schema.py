"""Builders and strict parsers for every protocol message body.

Each message type has a ``build_*`` function producing the JSON body and a
``parse_*`` function that validates structure and types, returning decoded
values.  Parsers raise ``MalformedMessage`` on any structural defect; they
never verify commitments or recompute transitions — that is the caller's
job.  Both the live parties and the offline transcript replayer go through
these functions, so wire compatibility cannot drift between them.
"""

from __future__ import annotations

from types import SimpleNamespace

from ..commitments import (
    Commitment,
    MerklePath,
    MerkleRoot,
    decode_commitment,
    decode_path,
    decode_root,
    encode_commitment,
    encode_path,
    encode_root,
)
from ..audits import CncChallenge, CncCommitment, CncProof, TransitionProof
from ..errors import MalformedMessage
from .messages import b64d, b64e

__all__ = ["build", "parse"]

_MAX_COUNT = 1 << 20  # sanity cap for any list field


# --- field validators ---------------------------------------------------------


def _require(cond: bool, what: str) -> None:
    if not cond:
        raise MalformedMessage(what)


def _int(value, what: str, lo=None, hi=None) -> int:
    _require(isinstance(value, int) and not isinstance(value, bool), f"{what} must be an integer")
    if lo is not None:
        _require(value >= lo, f"{what} below {lo}")
    if hi is not None:
        _require(value <= hi, f"{what} above {hi}")
    return value


def _str(value, what: str) -> str:
    _require(isinstance(value, str), f"{what} must be a string")
    return value


def _list(value, what: str, length=None) -> list:
    _require(isinstance(value, list), f"{what} must be a list")
    _require(len(value) <= _MAX_COUNT, f"{what} is absurdly long")
    if length is not None:
        _require(len(value) == length, f"{what} must have {length} entries")
    return value


def _bytes(value, what: str, length=None) -> bytes:
    raw = b64d(_str(value, what))
    if length is not None:
        _require(len(raw) == length, f"{what} must be {length} bytes")
    return raw


def _field(body: dict, key: str):
    _require(isinstance(body, dict), "body must be a JSON object")
    _require(key in body, f"missing field {key!r}")
    return body[key]


def _com(value, what: str) -> Commitment:
    return decode_commitment(_bytes(value, what))


def _root(value, what: str) -> MerkleRoot:
    return decode_root(_bytes(value, what))


def _path(value, what: str) -> MerklePath:
    return decode_path(_bytes(value, what))


def _ints(value, what: str) -> tuple:
    return tuple(_int(v, f"{what} entry") for v in _list(value, what))


def _check_type(body: dict, expected: str) -> None:
    _require(_field(body, "type") == expected, f"body type is not {expected!r}")


# --- stage 0: commitments ------------------------------------------------------


def build_model_commit(stage, com_a, com_b, com_c_layers) -> dict:
    return {
        "type": "model-commit",
        "stage": stage,
        "com_a": b64e(encode_commitment(com_a)),
        "com_b": b64e(encode_commitment(com_b)),
        "com_c_layers": [b64e(encode_commitment(c)) for c in com_c_layers],
    }


def parse_model_commit(body: dict) -> SimpleNamespace:
    _check_type(body, "model-commit")
    return SimpleNamespace(
        com_a=_com(_field(body, "com_a"), "com_a"),
        com_b=_com(_field(body, "com_b"), "com_b"),
        com_c_layers=tuple(
            _com(v, "com_c_layers entry") for v in _list(_field(body, "com_c_layers"), "com_c_layers")
        ),
    )


def build_dataset_commit(stage, com_x, com_y, n, dim, num_classes) -> dict:
    return {
        "type": "dataset-commit",
        "stage": stage,
        "com_x": [b64e(encode_commitment(c)) for c in com_x],
        "com_y": [b64e(encode_commitment(c)) for c in com_y],
        "n": n,
        "dim": dim,
        "num_classes": num_classes,
    }


def parse_dataset_commit(body: dict) -> SimpleNamespace:
    _check_type(body, "dataset-commit")
    n = _int(_field(body, "n"), "n", lo=1)
    return SimpleNamespace(
        com_x=tuple(_com(v, "com_x entry") for v in _list(_field(body, "com_x"), "com_x", length=n)),
        com_y=tuple(_com(v, "com_y entry") for v in _list(_field(body, "com_y"), "com_y", length=n)),
        n=n,
        dim=_int(_field(body, "dim"), "dim", lo=1),
        num_classes=_int(_field(body, "num_classes"), "num_classes", lo=1),
    )


# --- stage 1: coin flip, selection, coverage ------------------------------------


def build_coin_commit(stage, com_r) -> dict:
    return {"type": "coin-commit", "stage": stage, "com_r": b64e(encode_commitment(com_r))}


def parse_coin_commit(body: dict) -> SimpleNamespace:
    _check_type(body, "coin-commit")
    return SimpleNamespace(com_r=_com(_field(body, "com_r"), "com_r"))


def build_coin_reveal(stage, r_b: bytes) -> dict:
    return {"type": "coin-reveal", "stage": stage, "r_b": b64e(r_b)}


def parse_coin_reveal(body: dict) -> SimpleNamespace:
    _check_type(body, "coin-reveal")
    return SimpleNamespace(r_b=_bytes(_field(body, "r_b"), "r_b", length=32))


def build_coin_open(stage, r_a: bytes, blinder: bytes) -> dict:
    return {"type": "coin-open", "stage": stage, "r_a": b64e(r_a), "blinder": b64e(blinder)}


def parse_coin_open(body: dict) -> SimpleNamespace:
    _check_type(body, "coin-open")
    return SimpleNamespace(
        r_a=_bytes(_field(body, "r_a"), "r_a", length=32),
        blinder=_bytes(_field(body, "blinder"), "blinder"),
    )


def build_selection(stage, indices, seed_digest: bytes) -> dict:
    return {
        "type": "selection",
        "stage": stage,
        "indices": list(indices),
        "seed_digest": b64e(seed_digest),
    }


def parse_selection(body: dict) -> SimpleNamespace:
    _check_type(body, "selection")
    return SimpleNamespace(
        indices=_ints(_field(body, "indices"), "indices"),
        seed_digest=_bytes(_field(body, "seed_digest"), "seed_digest"),
    )


def build_coverage_challenge(stage, indices) -> dict:
    return {"type": "coverage", "stage": stage, "indices": list(indices)}


def parse_coverage_challenge(body: dict) -> SimpleNamespace:
    _check_type(body, "coverage")
    return SimpleNamespace(indices=_ints(_field(body, "indices"), "indices"))


def build_coverage_response(stage, witnesses, openings) -> dict:
    """openings: iterable of (row_index, row_bytes, blinder)."""

    return {
        "type": "coverage-response",
        "stage": stage,
        "transparent_audit": True,
        "witnesses": list(witnesses),
        "openings": [
            {"index": i, "x": b64e(xb), "r": b64e(r)} for i, xb, r in openings
        ],
    }


def parse_coverage_response(body: dict) -> SimpleNamespace:
    _check_type(body, "coverage-response")
    openings = {}
    for entry in _list(_field(body, "openings"), "openings"):
        _require(isinstance(entry, dict), "opening entry must be an object")
        idx = _int(_field(entry, "index"), "opening index", lo=0)
        _require(idx not in openings, "duplicate opening index")
        openings[idx] = (
            _bytes(_field(entry, "x"), "opening x"),
            _bytes(_field(entry, "r"), "opening r"),
        )
    return SimpleNamespace(
        witnesses=_ints(_field(body, "witnesses"), "witnesses"),
        openings=openings,
    )


# --- stage 2: inference and trace audits ----------------------------------------


def build_block_b(stage, theta_b: bytes, blinder: bytes) -> dict:
    return {
        "type": "block-b",
        "stage": stage,
        "theta_b": b64e(theta_b),
        "blinder": b64e(blinder),
    }


def parse_block_b(body: dict) -> SimpleNamespace:
    _check_type(body, "block-b")
    return SimpleNamespace(
        theta_b=_bytes(_field(body, "theta_b"), "theta_b"),
        blinder=_bytes(_field(body, "blinder"), "blinder"),
    )


def build_inference_model(stage, theta_a: bytes, mixer, blinder: bytes) -> dict:
    return {
        "type": "inference-model",
        "stage": stage,
        "theta_a": b64e(theta_a),
        "mixer": list(mixer),
        "blinder": b64e(blinder),
    }


def parse_inference_model(body: dict) -> SimpleNamespace:
    _check_type(body, "inference-model")
    return SimpleNamespace(
        theta_a=_bytes(_field(body, "theta_a"), "theta_a"),
        mixer=_ints(_field(body, "mixer"), "mixer"),
        blinder=_bytes(_field(body, "blinder"), "blinder"),
    )


def build_inference_data(stage, rows) -> dict:
    """rows: iterable of (row_index, row_bytes, blinder)."""

    return {
        "type": "inference-data",
        "stage": stage,
        "rows": [{"index": i, "x": b64e(xb), "r": b64e(r)} for i, xb, r in rows],
    }


def parse_inference_data(body: dict) -> SimpleNamespace:
    _check_type(body, "inference-data")
    rows = []
    for entry in _list(_field(body, "rows"), "rows"):
        _require(isinstance(entry, dict), "row entry must be an object")
        rows.append(
            (
                _int(_field(entry, "index"), "row index", lo=0),
                _bytes(_field(entry, "x"), "row x"),
                _bytes(_field(entry, "r"), "row r"),
            )
        )
    return SimpleNamespace(rows=rows)


def build_inference_coms(stage, com_acts) -> dict:
    return {
        "type": "inference-outputs",
        "stage": stage,
        "com_acts": [b64e(encode_commitment(c)) for c in com_acts],
    }


def parse_inference_coms(body: dict) -> SimpleNamespace:
    _check_type(body, "inference-outputs")
    return SimpleNamespace(
        com_acts=tuple(
            _com(v, "com_acts entry") for v in _list(_field(body, "com_acts"), "com_acts")
        )
    )


def build_inference_acts(stage, acts) -> dict:
    """acts: iterable of (row_index, act_bytes, blinder)."""

    return {
        "type": "inference-outputs",
        "stage": stage,
        "acts": [{"index": i, "a": b64e(ab), "r": b64e(r)} for i, ab, r in acts],
    }


def parse_inference_acts(body: dict) -> SimpleNamespace:
    _check_type(body, "inference-outputs")
    acts = []
    for entry in _list(_field(body, "acts"), "acts"):
        _require(isinstance(entry, dict), "act entry must be an object")
        acts.append(
            (
                _int(_field(entry, "index"), "act index", lo=0),
                _bytes(_field(entry, "a"), "act a"),
                _bytes(_field(entry, "r"), "act r"),
            )
        )
    return SimpleNamespace(acts=acts)


def build_block_b_outputs(stage, outs) -> dict:
    """outs: iterable of (row_index, out_bytes)."""

    return {
        "type": "block-b-outputs",
        "stage": stage,
        "outs": [{"index": i, "b": b64e(bb)} for i, bb in outs],
    }


def parse_block_b_outputs(body: dict) -> SimpleNamespace:
    _check_type(body, "block-b-outputs")
    outs = []
    for entry in _list(_field(body, "outs"), "outs"):
        _require(isinstance(entry, dict), "out entry must be an object")
        outs.append(
            (
                _int(_field(entry, "index"), "out index", lo=0),
                _bytes(_field(entry, "b"), "out b"),
            )
        )
    return SimpleNamespace(outs=outs)


def _encode_cnc_commitment(com: CncCommitment) -> dict:
    return {
        "level_roots": [b64e(encode_root(r)) for r in com.level_roots],
        "weight_root": b64e(encode_root(com.weight_root)) if com.weight_root else None,
        "num_inputs": com.num_inputs,
        "num_layers": com.num_layers,
    }


def _decode_cnc_commitment(body: dict) -> CncCommitment:
    num_layers = _int(_field(body, "num_layers"), "num_layers", lo=1)
    roots = tuple(
        _root(v, "level_roots entry")
        for v in _list(_field(body, "level_roots"), "level_roots", length=num_layers + 1)
    )
    wr = _field(body, "weight_root")
    weight_root = _root(wr, "weight_root") if wr is not None else None
    return CncCommitment(
        level_roots=roots,
        weight_root=weight_root,
        num_inputs=_int(_field(body, "num_inputs"), "num_inputs", lo=1),
        num_layers=num_layers,
    )


def build_trace_commit(stage, block: str, com: CncCommitment, input_openings=None) -> dict:
    body = {"type": f"trace-{block}", "stage": stage}
    body.update(_encode_cnc_commitment(com))
    if input_openings is not None:
        body["input_openings"] = [
            {"point": t, "leaf": b64e(leaf), "path": b64e(encode_path(path))}
            for t, leaf, path in input_openings
        ]
    return body


def parse_trace_commit(body: dict, block: str) -> SimpleNamespace:
    _check_type(body, f"trace-{block}")
    com = _decode_cnc_commitment(body)
    input_openings = None
    if "input_openings" in body:
        input_openings = []
        for entry in _list(body["input_openings"], "input_openings"):
            _require(isinstance(entry, dict), "input opening must be an object")
            input_openings.append(
                (
                    _int(_field(entry, "point"), "opening point", lo=0),
                    _bytes(_field(entry, "leaf"), "opening leaf"),
                    _path(_field(entry, "path"), "opening path"),
                )
            )
    return SimpleNamespace(com=com, input_openings=input_openings)


def build_trace_challenge(stage, block: str, challenge: CncChallenge) -> dict:
    return {
        "type": f"trace-{block}",
        "stage": stage,
        "points": list(challenge.points),
        "levels": [list(l) for l in challenge.levels],
    }


def parse_trace_challenge(body: dict, block: str) -> SimpleNamespace:
    _check_type(body, f"trace-{block}")
    points = _ints(_field(body, "points"), "points")
    levels = tuple(
        _ints(l, "levels entry") for l in _list(_field(body, "levels"), "levels", length=len(points))
    )
    return SimpleNamespace(challenge=CncChallenge(points=points, levels=levels))


def _encode_transition(t: TransitionProof) -> dict:
    entry = {
        "point": t.point,
        "level": t.level,
        "prev": b64e(t.prev_bytes),
        "prev_path": b64e(encode_path(t.prev_path)),
        "out": b64e(t.out_bytes),
        "out_path": b64e(encode_path(t.out_path)),
    }
    if t.weight_bytes is not None:
        entry["weight"] = b64e(t.weight_bytes)
        entry["weight_path"] = b64e(encode_path(t.weight_path))
    return entry


def _decode_transition(entry) -> TransitionProof:
    _require(isinstance(entry, dict), "transition must be an object")
    has_weight = "weight" in entry or "weight_path" in entry
    if has_weight:
        _require("weight" in entry and "weight_path" in entry, "incomplete weight opening")
    return TransitionProof(
        point=_int(_field(entry, "point"), "transition point", lo=0),
        level=_int(_field(entry, "level"), "transition level", lo=1),
        prev_bytes=_bytes(_field(entry, "prev"), "transition prev"),
        prev_path=_path(_field(entry, "prev_path"), "transition prev_path"),
        out_bytes=_bytes(_field(entry, "out"), "transition out"),
        out_path=_path(_field(entry, "out_path"), "transition out_path"),
        weight_bytes=_bytes(entry["weight"], "transition weight") if has_weight else None,
        weight_path=_path(entry["weight_path"], "transition weight_path") if has_weight else None,
    )


def build_trace_proof(stage, block: str, proof: CncProof, bindings=None, layer_openings=None) -> dict:
    body = {
        "type": f"trace-{block}",
        "stage": stage,
        "transparent_audit": True,
        "transitions": [_encode_transition(t) for t in proof.transitions],
    }
    if bindings is not None:
        body["bindings"] = [
            {
                "point": t,
                "a": b64e(a),
                "path0": b64e(encode_path(p0)),
                "r_a": b64e(ra),
                "b": b64e(bb),
                "path_last": b64e(encode_path(pl)),
            }
            for t, a, p0, ra, bb, pl in bindings
        ]
    if layer_openings is not None:
        body["layer_openings"] = [
            {"level": lv, "r": b64e(r)} for lv, r in layer_openings
        ]
    return body


def parse_trace_proof(body: dict, block: str) -> SimpleNamespace:
    _check_type(body, f"trace-{block}")
    proof = CncProof(
        tuple(_decode_transition(e) for e in _list(_field(body, "transitions"), "transitions"))
    )
    bindings = None
    if "bindings" in body:
        bindings = []
        for entry in _list(body["bindings"], "bindings"):
            _require(isinstance(entry, dict), "binding must be an object")
            bindings.append(
                (
                    _int(_field(entry, "point"), "binding point", lo=0),
                    _bytes(_field(entry, "a"), "binding a"),
                    _path(_field(entry, "path0"), "binding path0"),
                    _bytes(_field(entry, "r_a"), "binding r_a"),
                    _bytes(_field(entry, "b"), "binding b"),
                    _path(_field(entry, "path_last"), "binding path_last"),
                )
            )
    layer_openings = None
    if "layer_openings" in body:
        layer_openings = []
        for entry in _list(body["layer_openings"], "layer_openings"):
            _require(isinstance(entry, dict), "layer opening must be an object")
            layer_openings.append(
                (
                    _int(_field(entry, "level"), "layer opening level", lo=1),
                    _bytes(_field(entry, "r"), "layer opening r"),
                )
            )
    return SimpleNamespace(proof=proof, bindings=bindings, layer_openings=layer_openings)


# --- stage 3: sub-score dealer call ----------------------------------------------


def build_model_scores(stage, root_final: MerkleRoot, rep_indices, outputs) -> dict:
    """outputs: iterable of (trace_point, z_bytes, merkle_path)."""

    return {
        "type": "model-scores",
        "stage": stage,
        "root_final": b64e(encode_root(root_final)),
        "rep_indices": list(rep_indices),
        "outputs": [
            {"point": t, "z": b64e(zb), "path": b64e(encode_path(p))} for t, zb, p in outputs
        ],
    }


def parse_model_scores(body: dict) -> SimpleNamespace:
    _check_type(body, "model-scores")
    outputs = []
    for entry in _list(_field(body, "outputs"), "outputs"):
        _require(isinstance(entry, dict), "output entry must be an object")
        outputs.append(
            (
                _int(_field(entry, "point"), "output point", lo=0),
                _bytes(_field(entry, "z"), "output z"),
                _path(_field(entry, "path"), "output path"),
            )
        )
    return SimpleNamespace(
        root_final=_root(_field(body, "root_final"), "root_final"),
        rep_indices=_ints(_field(body, "rep_indices"), "rep_indices"),
        outputs=outputs,
    )


def build_data_scores(stage, root_final: MerkleRoot, rep_indices, rows, labels) -> dict:
    """rows: (row_index, row_bytes, blinder); labels: (row_index, label, blinder)."""

    return {
        "type": "data-scores",
        "stage": stage,
        "root_final": b64e(encode_root(root_final)),
        "rep_indices": list(rep_indices),
        "rows": [{"index": i, "x": b64e(xb), "r": b64e(r)} for i, xb, r in rows],
        "labels": [{"index": i, "y": y, "r": b64e(r)} for i, y, r in labels],
    }


def parse_data_scores(body: dict) -> SimpleNamespace:
    _check_type(body, "data-scores")
    rows = []
    for entry in _list(_field(body, "rows"), "rows"):
        _require(isinstance(entry, dict), "row entry must be an object")
        rows.append(
            (
                _int(_field(entry, "index"), "row index", lo=0),
                _bytes(_field(entry, "x"), "row x"),
                _bytes(_field(entry, "r"), "row r"),
            )
        )
    labels = []
    for entry in _list(_field(body, "labels"), "labels"):
        _require(isinstance(entry, dict), "label entry must be an object")
        labels.append(
            (
                _int(_field(entry, "index"), "label index", lo=0),
                _int(_field(entry, "y"), "label y", lo=0),
                _bytes(_field(entry, "r"), "label r"),
            )
        )
    return SimpleNamespace(
        root_final=_root(_field(body, "root_final"), "root_final"),
        rep_indices=_ints(_field(body, "rep_indices"), "rep_indices"),
        rows=rows,
        labels=labels,
    )


def build_result(stage, phi_raw: int) -> dict:
    return {"type": "result", "stage": stage, "phi_raw": phi_raw}


def parse_result(body: dict) -> SimpleNamespace:
    _check_type(body, "result")
    return SimpleNamespace(phi_raw=_int(_field(body, "phi_raw"), "phi_raw"))


def build_abort(stage_num: int, reason: str, by: str) -> dict:
    return {"type": "abort", "stage": "aborted", "stage_num": stage_num, "reason": reason, "by": by}


def parse_abort(body: dict) -> SimpleNamespace:
    _check_type(body, "abort")
    return SimpleNamespace(
        stage_num=_int(_field(body, "stage_num"), "stage_num", lo=0, hi=3),
        reason=_str(_field(body, "reason"), "reason"),
        by=_str(_field(body, "by"), "by"),
    )
