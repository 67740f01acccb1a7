"""In-memory marketplace ledger: registries, quotes, escrow, hash-locks.

Models the on-chain side of the scoring marketplace as a deterministic
single-writer state machine.  There is no consensus, gas, or cryptography
beyond plain hashes: time is a logical block height advanced by ``tick``,
and signatures are modeled by the ``signer`` field (authority accounts
stand in for authority contract addresses).

Value accounting: every unit of value is either in an account balance, in
a held escrow, or nowhere.  ``total_value`` sums the first two; every
transition preserves it.  Escrows resolve exactly once — released (to the
holder or, for a hash-lock settlement, to the contractual payee) or
slashed (to the wronged counterparty).

Slashing is evidence-gated: a slash transaction must reference a protocol
transcript position and the offline replay verdict for that transcript
(see ``evidence_from_replay``), so punitive transfers are always anchored
to protocol-level proof of misbehavior.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field

from .errors import TxRejected, WrongPreimage

__all__ = [
    "TX_KINDS",
    "LedgerTx",
    "LedgerState",
    "genesis",
    "tick",
    "apply_tx",
    "run_script",
    "total_value",
    "dataset_fingerprint",
    "model_fingerprint",
    "evidence_from_replay",
    "proof_fee_tx",
    "hashlock_exchange",
    "fairness_hook",
    "honest_demo",
    "tx_to_json",
    "tx_from_json",
    "state_to_json",
    "state_from_json",
    "save_tx_log",
    "load_tx_log",
]

# The nine workflow transitions plus the proof-payment metering transfer.
TX_KINDS = (
    "register-data",
    "register-model",
    "request-quote",
    "submit-quote",
    "escrow",
    "slash",
    "post-hashlock",
    "reveal-key",
    "release",
    "fee",
)

# Flat price charged per requested audit proof (coverage or trace
# challenge); the workflow exposes it as a parameter, this is the default.
DEFAULT_PROOF_FEE = 1


@dataclass(frozen=True)
class LedgerTx:
    """One signed transition request."""

    kind: str
    signer: str
    payload: dict = field(default_factory=dict)


@dataclass(frozen=True)
class LedgerState:
    """Complete ledger contents at one block height.

    Immutable: every transition returns a fresh state.  Registry entries
    are append-only; escrow and lock records change only their ``status``.
    """

    height: int
    accounts: dict  # account id -> balance (non-negative int)
    data_registry: dict  # registry id -> {owner, com_x, com_y, authority}
    model_registry: dict  # registry id -> {owner, com_a, com_b, com_c, authority}
    quote_requests: dict  # request id -> {requester, model_ref, requirements, escrow}
    quote_submissions: dict  # quote id -> {request, contributor, data_ref, price, escrow}
    escrows: dict  # escrow id -> {holder, amount, condition, status, resolved_to}
    hashlocks: dict  # lock id -> {seller, buyer, hash, cipher_ref, price, deadline, status, escrow}
    data_authorities: frozenset
    model_authorities: frozenset


def genesis(balances, data_authorities=("data-authority",), model_authorities=("model-authority",)) -> LedgerState:
    """Initial state: funded accounts plus the recognized authorities."""

    accounts = {}
    for name, amount in dict(balances).items():
        if not isinstance(name, str) or not name:
            raise TxRejected("account ids must be non-empty strings")
        amount = _amount(amount, "genesis balance", minimum=0)
        accounts[name] = amount
    for authority in tuple(data_authorities) + tuple(model_authorities):
        accounts.setdefault(authority, 0)
    return LedgerState(
        height=0,
        accounts=accounts,
        data_registry={},
        model_registry={},
        quote_requests={},
        quote_submissions={},
        escrows={},
        hashlocks={},
        data_authorities=frozenset(data_authorities),
        model_authorities=frozenset(model_authorities),
    )


def tick(state: LedgerState, blocks: int = 1) -> LedgerState:
    """Advance the logical clock."""

    if not isinstance(blocks, int) or blocks < 1:
        raise TxRejected("clock advances by a positive whole number of blocks")
    return dataclasses.replace(state, height=state.height + blocks)


def total_value(state: LedgerState) -> int:
    """All value anywhere: balances plus held escrows (conserved quantity)."""

    held = sum(e["amount"] for e in state.escrows.values() if e["status"] == "held")
    return sum(state.accounts.values()) + held


# --- field validation helpers -------------------------------------------------


def _amount(value, what, minimum=1) -> int:
    if not isinstance(value, int) or isinstance(value, bool) or value < minimum:
        raise TxRejected(f"{what} must be an integer >= {minimum}")
    return value


def _text(value, what) -> str:
    if not isinstance(value, str) or not value:
        raise TxRejected(f"{what} must be a non-empty string")
    return value


def _hex_digest(value, what) -> str:
    value = _text(value, what)
    if len(value) != 64:
        raise TxRejected(f"{what} must be a 64-character hex digest")
    try:
        bytes.fromhex(value)
    except ValueError:
        raise TxRejected(f"{what} must be a 64-character hex digest")
    return value.lower()


def _known_account(state, name, what) -> str:
    name = _text(name, what)
    if name not in state.accounts:
        raise TxRejected(f"{what} {name!r} is not a known account")
    return name


def _fresh_id(table, value, what) -> str:
    value = _text(value, what)
    if value in table:
        raise TxRejected(f"{what} {value!r} already exists; entries are immutable")
    return value


def _debit(accounts: dict, name: str, amount: int) -> dict:
    if accounts[name] < amount:
        raise TxRejected(f"account {name!r} has insufficient funds")
    out = dict(accounts)
    out[name] -= amount
    return out


def _credit(accounts: dict, name: str, amount: int) -> dict:
    out = dict(accounts)
    out[name] = out.get(name, 0) + amount
    return out


def _valid_evidence(evidence) -> dict:
    """Structural check of a deviation-evidence record.

    Must name a transcript position (frame sequence number) and a reason;
    a replay verdict claiming consistency can never justify a slash.
    """

    if not isinstance(evidence, dict):
        raise TxRejected("slash requires a deviation evidence record")
    seq = evidence.get("seq")
    if not isinstance(seq, int) or isinstance(seq, bool) or seq < 0:
        raise TxRejected("evidence must reference a transcript sequence number")
    _text(evidence.get("reason"), "evidence reason")
    if evidence.get("consistent") is True:
        raise TxRejected("a consistent replay verdict cannot justify a slash")
    return evidence


def evidence_from_replay(seq: int, verdict) -> dict:
    """Package an offline replay verdict as slash evidence.

    ``verdict`` is a ``transcript_replay`` result; it must have found a
    violation.  ``seq`` is the sequence number of the offending frame (or
    of the last frame honestly delivered, for truncation evidence).
    """

    if verdict.consistent:
        raise TxRejected("replay found no violation; nothing to slash")
    return {
        "seq": int(seq),
        "offender": verdict.offender or "",
        "reason": verdict.reason or "protocol violation",
        "consistent": False,
        "frame_index": verdict.frame_index,
    }


def proof_fee_tx(verifier: str, prover: str, num_proofs: int, fee_per_proof: int = DEFAULT_PROOF_FEE, purpose: str = "audit-challenge") -> LedgerTx:
    """The proof-payment metering transfer, debited at challenge issuance."""

    num_proofs = _amount(num_proofs, "proof count")
    fee_per_proof = _amount(fee_per_proof, "fee per proof")
    return LedgerTx(
        "fee",
        verifier,
        {
            "payee": prover,
            "amount": num_proofs * fee_per_proof,
            "proofs": num_proofs,
            "purpose": purpose,
        },
    )


# --- fingerprints binding protocol commitments to registry entries -------------


def _digest_list_fingerprint(commitments) -> str:
    h = hashlib.sha256()
    for com in commitments:
        h.update(com.digest)
    return h.hexdigest()


def dataset_fingerprint(com_x, com_y) -> tuple:
    """Registry fingerprints of a dataset's per-row commitment lists."""

    return _digest_list_fingerprint(com_x), _digest_list_fingerprint(com_y)


def model_fingerprint(com_a, com_b, com_c_layers) -> tuple:
    """Registry fingerprints of the three committed model blocks."""

    return (
        com_a.digest.hex(),
        com_b.digest.hex(),
        _digest_list_fingerprint(com_c_layers),
    )


# --- the transition function ----------------------------------------------------


def apply_tx(state: LedgerState, tx: LedgerTx) -> LedgerState:
    """Apply one transaction; returns the next state or raises.

    ``TxRejected`` (and its special case ``WrongPreimage``) always leaves
    the input state untouched — validation happens before any copy is
    published.
    """

    if not isinstance(tx, LedgerTx):
        raise TxRejected("not a transaction")
    if tx.kind not in TX_KINDS:
        raise TxRejected(f"unknown transaction kind {tx.kind!r}")
    if not isinstance(tx.payload, dict):
        raise TxRejected("transaction payload must be an object")
    signer = _known_account(state, tx.signer, "signer")
    handler = _HANDLERS[tx.kind]
    return handler(state, signer, tx.payload)


def _tx_register_data(state, signer, p):
    if signer not in state.data_authorities:
        raise TxRejected(f"{signer!r} is not a recognized data authority")
    rid = _fresh_id(state.data_registry, p.get("registry_id"), "data registry id")
    owner = _known_account(state, p.get("owner"), "data owner")
    record = {
        "owner": owner,
        "com_x": _hex_digest(p.get("com_x"), "com_x"),
        "com_y": _hex_digest(p.get("com_y"), "com_y"),
        "authority": signer,
    }
    registry = dict(state.data_registry)
    registry[rid] = record
    return dataclasses.replace(state, data_registry=registry)


def _tx_register_model(state, signer, p):
    if signer not in state.model_authorities:
        raise TxRejected(f"{signer!r} is not a recognized model authority")
    rid = _fresh_id(state.model_registry, p.get("registry_id"), "model registry id")
    owner = _known_account(state, p.get("owner"), "model owner")
    record = {
        "owner": owner,
        "com_a": _hex_digest(p.get("com_a"), "com_a"),
        "com_b": _hex_digest(p.get("com_b"), "com_b"),
        "com_c": _hex_digest(p.get("com_c"), "com_c"),
        "authority": signer,
    }
    registry = dict(state.model_registry)
    registry[rid] = record
    return dataclasses.replace(state, model_registry=registry)


def _tx_request_quote(state, signer, p):
    qid = _fresh_id(state.quote_requests, p.get("request_id"), "quote request id")
    model_ref = _text(p.get("model_ref"), "model registry reference")
    record = state.model_registry.get(model_ref)
    if record is None:
        raise TxRejected(f"model reference {model_ref!r} is not registered")
    if record["owner"] != signer:
        raise TxRejected("quote requests must come from the registered model owner")
    amount = _amount(p.get("escrow"), "request escrow")
    eid = f"escrow:request:{qid}"
    if eid in state.escrows:
        raise TxRejected(f"escrow id {eid!r} already exists")
    accounts = _debit(state.accounts, signer, amount)
    escrows = dict(state.escrows)
    escrows[eid] = {
        "holder": signer,
        "amount": amount,
        "condition": f"honest-conduct:request:{qid}",
        "status": "held",
        "resolved_to": None,
    }
    requests = dict(state.quote_requests)
    requests[qid] = {
        "requester": signer,
        "model_ref": model_ref,
        "requirements": dict(p.get("requirements") or {}),
        "escrow": eid,
    }
    return dataclasses.replace(
        state, accounts=accounts, escrows=escrows, quote_requests=requests
    )


def _tx_submit_quote(state, signer, p):
    qid = _fresh_id(state.quote_submissions, p.get("quote_id"), "quote id")
    request_id = _text(p.get("request_id"), "request id")
    if request_id not in state.quote_requests:
        raise TxRejected(f"quote request {request_id!r} does not exist")
    data_ref = _text(p.get("data_ref"), "data registry reference")
    record = state.data_registry.get(data_ref)
    if record is None:
        raise TxRejected(f"data reference {data_ref!r} is not registered")
    # The submission's commitments must match the authority-published
    # record exactly, and the submitter must be its registered owner —
    # otherwise the quote is automatically rejected.
    com_x = _hex_digest(p.get("com_x"), "com_x")
    com_y = _hex_digest(p.get("com_y"), "com_y")
    if record["owner"] != signer:
        raise TxRejected("quote rejected: submitter does not own the registered data")
    if (record["com_x"], record["com_y"]) != (com_x, com_y):
        raise TxRejected("quote rejected: commitments do not match the registry")
    price = _amount(p.get("price"), "quoted price")
    amount = _amount(p.get("escrow"), "submission escrow")
    eid = f"escrow:quote:{qid}"
    if eid in state.escrows:
        raise TxRejected(f"escrow id {eid!r} already exists")
    accounts = _debit(state.accounts, signer, amount)
    escrows = dict(state.escrows)
    escrows[eid] = {
        "holder": signer,
        "amount": amount,
        "condition": f"honest-conduct:quote:{qid}",
        "status": "held",
        "resolved_to": None,
    }
    submissions = dict(state.quote_submissions)
    submissions[qid] = {
        "request": request_id,
        "contributor": signer,
        "data_ref": data_ref,
        "price": price,
        "escrow": eid,
    }
    return dataclasses.replace(
        state, accounts=accounts, escrows=escrows, quote_submissions=submissions
    )


def _tx_escrow(state, signer, p):
    eid = _fresh_id(state.escrows, p.get("escrow_id"), "escrow id")
    amount = _amount(p.get("amount"), "escrow amount")
    condition = _text(p.get("condition"), "escrow condition")

    hashlocks = state.hashlocks
    if condition.startswith("hashlock:"):
        # Funding a posted lock: the named buyer deposits exactly the price.
        lock_id = condition.split(":", 1)[1]
        lock = state.hashlocks.get(lock_id)
        if lock is None:
            raise TxRejected(f"hash-lock {lock_id!r} does not exist")
        if lock["status"] != "open":
            raise TxRejected(f"hash-lock {lock_id!r} is not open for funding")
        if lock["buyer"] != signer:
            raise TxRejected("only the named buyer can fund the lock")
        if amount != lock["price"]:
            raise TxRejected("lock funding must equal the posted price")
        if state.height >= lock["deadline"]:
            raise TxRejected("cannot fund a lock at or past its deadline")
        hashlocks = dict(state.hashlocks)
        hashlocks[lock_id] = dict(lock, status="funded", escrow=eid)

    accounts = _debit(state.accounts, signer, amount)
    escrows = dict(state.escrows)
    escrows[eid] = {
        "holder": signer,
        "amount": amount,
        "condition": condition,
        "status": "held",
        "resolved_to": None,
    }
    return dataclasses.replace(
        state, accounts=accounts, escrows=escrows, hashlocks=hashlocks
    )


def _tx_slash(state, signer, p):
    if signer not in state.data_authorities | state.model_authorities:
        raise TxRejected("slashing requires an authority signer")
    eid = _text(p.get("escrow_id"), "escrow id")
    escrow = state.escrows.get(eid)
    if escrow is None:
        raise TxRejected(f"escrow {eid!r} does not exist")
    if escrow["status"] != "held":
        raise TxRejected(f"escrow {eid!r} already resolved to {escrow['status']!r}")
    if escrow["condition"].startswith("hashlock:"):
        raise TxRejected("hash-locked deposits resolve only through their lock")
    counterparty = _known_account(state, p.get("counterparty"), "counterparty")
    if counterparty == escrow["holder"]:
        raise TxRejected("cannot slash an escrow to its own holder")
    _valid_evidence(p.get("evidence"))
    accounts = _credit(state.accounts, counterparty, escrow["amount"])
    escrows = dict(state.escrows)
    escrows[eid] = dict(escrow, status="slashed", resolved_to=counterparty)
    return dataclasses.replace(state, accounts=accounts, escrows=escrows)


def _tx_post_hashlock(state, signer, p):
    lid = _fresh_id(state.hashlocks, p.get("lock_id"), "hash-lock id")
    buyer = _known_account(state, p.get("buyer"), "buyer")
    if buyer == signer:
        raise TxRejected("a lock needs two distinct parties")
    deadline = p.get("deadline")
    if not isinstance(deadline, int) or isinstance(deadline, bool) or deadline <= state.height:
        raise TxRejected("deadline must be a future block height")
    record = {
        "seller": signer,
        "buyer": buyer,
        "hash": _hex_digest(p.get("hash"), "key hash"),
        "cipher_ref": _text(p.get("cipher_ref"), "ciphertext reference"),
        "price": _amount(p.get("price"), "lock price"),
        "deadline": deadline,
        "status": "open",
        "escrow": None,
    }
    hashlocks = dict(state.hashlocks)
    hashlocks[lid] = record
    return dataclasses.replace(state, hashlocks=hashlocks)


def _tx_reveal_key(state, signer, p):
    lid = _text(p.get("lock_id"), "lock id")
    lock = state.hashlocks.get(lid)
    if lock is None:
        raise TxRejected(f"hash-lock {lid!r} does not exist")
    if lock["seller"] != signer:
        raise TxRejected("only the seller can reveal the key")
    if lock["status"] != "funded":
        raise TxRejected(f"hash-lock {lid!r} is not funded")
    # Settlement needs strictly-before-deadline reveal; at the deadline
    # tick the exchange can only be refunded.
    if state.height >= lock["deadline"]:
        raise TxRejected("deadline reached; the lock can only be refunded")
    key_hex = _text(p.get("key"), "revealed key")
    try:
        key = bytes.fromhex(key_hex)
    except ValueError:
        raise TxRejected("revealed key must be hex")
    if hashlib.sha256(key).hexdigest() != lock["hash"]:
        raise WrongPreimage("revealed key does not match the registered hash")
    eid = lock["escrow"]
    escrow = state.escrows[eid]
    if escrow["status"] != "held":
        raise TxRejected(f"lock deposit {eid!r} is no longer held")
    accounts = _credit(state.accounts, signer, escrow["amount"])
    escrows = dict(state.escrows)
    escrows[eid] = dict(escrow, status="released", resolved_to=signer)
    hashlocks = dict(state.hashlocks)
    hashlocks[lid] = dict(lock, status="settled")
    return dataclasses.replace(state, accounts=accounts, escrows=escrows, hashlocks=hashlocks)


def _tx_release(state, signer, p):
    if "lock_id" in p:
        # Objective refund rule: a funded lock past its deadline returns
        # the deposit to the buyer; anyone may trigger it.
        lid = _text(p.get("lock_id"), "lock id")
        lock = state.hashlocks.get(lid)
        if lock is None:
            raise TxRejected(f"hash-lock {lid!r} does not exist")
        if state.height < lock["deadline"]:
            raise TxRejected("lock deadline has not passed")
        hashlocks = dict(state.hashlocks)
        if lock["status"] == "open":
            hashlocks[lid] = dict(lock, status="expired")
            return dataclasses.replace(state, hashlocks=hashlocks)
        if lock["status"] != "funded":
            raise TxRejected(f"hash-lock {lid!r} already resolved to {lock['status']!r}")
        eid = lock["escrow"]
        escrow = state.escrows[eid]
        if escrow["status"] != "held":
            raise TxRejected(f"lock deposit {eid!r} is no longer held")
        accounts = _credit(state.accounts, escrow["holder"], escrow["amount"])
        escrows = dict(state.escrows)
        escrows[eid] = dict(escrow, status="released", resolved_to=escrow["holder"])
        hashlocks[lid] = dict(lock, status="refunded")
        return dataclasses.replace(
            state, accounts=accounts, escrows=escrows, hashlocks=hashlocks
        )

    # Plain escrow release: an authority confirms the condition was met.
    if signer not in state.data_authorities | state.model_authorities:
        raise TxRejected("escrow release requires an authority signer")
    eid = _text(p.get("escrow_id"), "escrow id")
    escrow = state.escrows.get(eid)
    if escrow is None:
        raise TxRejected(f"escrow {eid!r} does not exist")
    if escrow["status"] != "held":
        raise TxRejected(f"escrow {eid!r} already resolved to {escrow['status']!r}")
    if escrow["condition"].startswith("hashlock:"):
        raise TxRejected("hash-locked deposits resolve only through their lock")
    accounts = _credit(state.accounts, escrow["holder"], escrow["amount"])
    escrows = dict(state.escrows)
    escrows[eid] = dict(escrow, status="released", resolved_to=escrow["holder"])
    return dataclasses.replace(state, accounts=accounts, escrows=escrows)


def _tx_fee(state, signer, p):
    payee = _known_account(state, p.get("payee"), "fee payee")
    if payee == signer:
        raise TxRejected("fee payer and payee must differ")
    amount = _amount(p.get("amount"), "fee amount")
    accounts = _debit(state.accounts, signer, amount)
    accounts = _credit(accounts, payee, amount)
    return dataclasses.replace(state, accounts=accounts)


_HANDLERS = {
    "register-data": _tx_register_data,
    "register-model": _tx_register_model,
    "request-quote": _tx_request_quote,
    "submit-quote": _tx_submit_quote,
    "escrow": _tx_escrow,
    "slash": _tx_slash,
    "post-hashlock": _tx_post_hashlock,
    "reveal-key": _tx_reveal_key,
    "release": _tx_release,
    "fee": _tx_fee,
}


def run_script(state: LedgerState, txs, strict: bool = True):
    """Apply a transaction sequence; returns ``(state, log)``.

    The log holds one entry per transaction with the height it executed
    at and its outcome.  With ``strict`` (the default) the first rejection
    raises ``TxRejected`` annotated with the script position; otherwise
    rejections are logged and skipped.  A ``tick`` pseudo-entry — a tx
    with kind ``"tick"`` and payload ``{"blocks": b}`` — advances the
    clock inside a script.
    """

    log = []
    for index, tx in enumerate(txs):
        if tx.kind == "tick":
            state = tick(state, tx.payload.get("blocks", 1))
            log.append({"index": index, "height": state.height, "tx": tx_to_json(tx), "status": "tick"})
            continue
        try:
            state = apply_tx(state, tx)
        except (TxRejected, WrongPreimage) as exc:
            entry = {
                "index": index,
                "height": state.height,
                "tx": tx_to_json(tx),
                "status": "rejected",
                "reason": str(exc),
            }
            log.append(entry)
            if strict:
                exc.script_index = index
                raise
            continue
        log.append(
            {"index": index, "height": state.height, "tx": tx_to_json(tx), "status": "applied"}
        )
    return state, log


# --- workflow drivers -----------------------------------------------------------


def hashlock_exchange(
    state: LedgerState,
    seller: str,
    buyer: str,
    cipher_ref: str,
    h_k: str,
    price: int,
    deadline: int,
    key: bytes | None = None,
    reveal_height: int | None = None,
    lock_id: str | None = None,
):
    """Drive one hash-locked data exchange; returns ``(state, outcome)``.

    Posts the lock and funds it, then either reveals ``key`` at
    ``reveal_height`` or lets the deadline pass.  Outcome is ``"settled"``
    when a correct key lands strictly before the deadline, ``"refunded"``
    otherwise (wrong preimage or no/late reveal — the deposit returns to
    the buyer once the deadline passes).
    """

    lid = lock_id or f"lock:{h_k[:16]}"
    state = apply_tx(
        state,
        LedgerTx(
            "post-hashlock",
            seller,
            {
                "lock_id": lid,
                "buyer": buyer,
                "hash": h_k,
                "cipher_ref": cipher_ref,
                "price": price,
                "deadline": deadline,
            },
        ),
    )
    state = apply_tx(
        state,
        LedgerTx(
            "escrow",
            buyer,
            {"escrow_id": f"escrow:{lid}", "amount": price, "condition": f"hashlock:{lid}"},
        ),
    )

    if key is not None:
        at = state.height if reveal_height is None else reveal_height
        if at > state.height:
            state = tick(state, at - state.height)
        try:
            state = apply_tx(
                state, LedgerTx("reveal-key", seller, {"lock_id": lid, "key": key.hex()})
            )
            return state, "settled"
        except (WrongPreimage, TxRejected):
            pass  # fall through to the refund path

    if state.height < deadline:
        state = tick(state, deadline - state.height)
    state = apply_tx(state, LedgerTx("release", buyer, {"lock_id": lid}))
    return state, "refunded"


def fairness_hook(
    state: LedgerState,
    holder: str,
    counterparty: str,
    escrow_id: str,
    final_message_commitment: bytes,
    deadline: int,
    reveal: bytes | None = None,
    reveal_height: int | None = None,
    final_seq: int = 0,
    arbiter: str | None = None,
):
    """Escrow-enforced delivery of the pre-committed final message.

    The last sender pre-committed (hash) to the final message and posted
    ``escrow_id``.  A timely reveal that matches the commitment releases
    the escrow (``"ok"``); no reveal by ``deadline``, or a reveal that
    does not match, slashes it to the counterparty (``"slashed"``).
    Returns ``(state, outcome)``.
    """

    if arbiter is None:
        pool = sorted(state.data_authorities | state.model_authorities)
        if not pool:
            raise TxRejected("no authority available to arbitrate")
        arbiter = pool[0]

    matched = False
    if reveal is not None:
        at = state.height if reveal_height is None else reveal_height
        if at > state.height:
            state = tick(state, at - state.height)
        matched = (
            state.height < deadline
            and hashlib.sha256(reveal).digest() == final_message_commitment
        )

    if matched:
        state = apply_tx(state, LedgerTx("release", arbiter, {"escrow_id": escrow_id}))
        return state, "ok"

    if state.height < deadline:
        state = tick(state, deadline - state.height)
    reason = (
        "final message does not match its pre-commitment"
        if reveal is not None
        else "final message not revealed by the deadline"
    )
    state = apply_tx(
        state,
        LedgerTx(
            "slash",
            arbiter,
            {
                "escrow_id": escrow_id,
                "counterparty": counterparty,
                "evidence": {"seq": final_seq, "offender": holder, "reason": reason},
            },
        ),
    )
    return state, "slashed"


def honest_demo(price: int = 240, request_escrow: int = 100, quote_escrow: int = 60, seed: bytes = b"market-demo"):
    """The complete honest workflow as (initial state, transaction script).

    Registers one dataset and one model through their authorities, runs
    the quote round, meters the audit proofs, releases both conduct
    escrows after the (off-ledger) evaluation, and settles a hash-locked
    transfer of the dataset key.  ``run_script`` on the pair ends with
    every escrow resolved and total value conserved.
    """

    def digest(tag: str) -> str:
        return hashlib.sha256(seed + b":" + tag.encode()).hexdigest()

    key = hashlib.sha256(seed + b":exchange-key").digest()
    state = genesis({"modelco": 1_000, "dataco": 1_000})
    deadline = 12
    txs = [
        LedgerTx(
            "register-data",
            "data-authority",
            {
                "registry_id": "data:dataco:1",
                "owner": "dataco",
                "com_x": digest("com-x"),
                "com_y": digest("com-y"),
            },
        ),
        LedgerTx(
            "register-model",
            "model-authority",
            {
                "registry_id": "model:modelco:1",
                "owner": "modelco",
                "com_a": digest("com-a"),
                "com_b": digest("com-b"),
                "com_c": digest("com-c"),
            },
        ),
        LedgerTx(
            "request-quote",
            "modelco",
            {
                "request_id": "request:1",
                "model_ref": "model:modelco:1",
                "requirements": {"classes": 4, "min_rows": 16},
                "escrow": request_escrow,
            },
        ),
        LedgerTx(
            "submit-quote",
            "dataco",
            {
                "quote_id": "quote:1",
                "request_id": "request:1",
                "data_ref": "data:dataco:1",
                "com_x": digest("com-x"),
                "com_y": digest("com-y"),
                "price": price,
                "escrow": quote_escrow,
            },
        ),
        # Evaluation round: each verifier pays for the proofs it demands.
        proof_fee_tx("modelco", "dataco", num_proofs=8, purpose="coverage-challenge"),
        proof_fee_tx("modelco", "dataco", num_proofs=2, purpose="middle-block-trace"),
        proof_fee_tx("dataco", "modelco", num_proofs=2, purpose="output-block-trace"),
        LedgerTx("tick", "modelco", {"blocks": 2}),
        # Honest completion: both conduct escrows come back.
        LedgerTx("release", "model-authority", {"escrow_id": "escrow:request:request:1"}),
        LedgerTx("release", "data-authority", {"escrow_id": "escrow:quote:quote:1"}),
        # Data transaction: hash-locked key exchange at the agreed price.
        LedgerTx(
            "post-hashlock",
            "dataco",
            {
                "lock_id": "lock:1",
                "buyer": "modelco",
                "hash": hashlib.sha256(key).hexdigest(),
                "cipher_ref": "cid:" + digest("ciphertext")[:32],
                "price": price,
                "deadline": deadline,
            },
        ),
        LedgerTx(
            "escrow",
            "modelco",
            {"escrow_id": "escrow:lock:1", "amount": price, "condition": "hashlock:lock:1"},
        ),
        LedgerTx("tick", "modelco", {"blocks": 3}),
        LedgerTx("reveal-key", "dataco", {"lock_id": "lock:1", "key": key.hex()}),
    ]
    return state, txs


# --- persistence ------------------------------------------------------------------


def tx_to_json(tx: LedgerTx) -> dict:
    return {"kind": tx.kind, "signer": tx.signer, "payload": tx.payload}


def tx_from_json(obj: dict) -> LedgerTx:
    if not isinstance(obj, dict):
        raise TxRejected("transaction record must be an object")
    kind = obj.get("kind")
    signer = obj.get("signer")
    payload = obj.get("payload", {})
    if not isinstance(kind, str) or not isinstance(signer, str):
        raise TxRejected("transaction record needs kind and signer strings")
    if not isinstance(payload, dict):
        raise TxRejected("transaction payload must be an object")
    return LedgerTx(kind, signer, payload)


def state_to_json(state: LedgerState) -> dict:
    return {
        "height": state.height,
        "accounts": dict(sorted(state.accounts.items())),
        "data_registry": {k: dict(v) for k, v in sorted(state.data_registry.items())},
        "model_registry": {k: dict(v) for k, v in sorted(state.model_registry.items())},
        "quote_requests": {k: dict(v) for k, v in sorted(state.quote_requests.items())},
        "quote_submissions": {k: dict(v) for k, v in sorted(state.quote_submissions.items())},
        "escrows": {k: dict(v) for k, v in sorted(state.escrows.items())},
        "hashlocks": {k: dict(v) for k, v in sorted(state.hashlocks.items())},
        "data_authorities": sorted(state.data_authorities),
        "model_authorities": sorted(state.model_authorities),
        "total_value": total_value(state),
    }


def state_from_json(obj: dict) -> LedgerState:
    try:
        state = LedgerState(
            height=int(obj["height"]),
            accounts=dict(obj["accounts"]),
            data_registry={k: dict(v) for k, v in obj["data_registry"].items()},
            model_registry={k: dict(v) for k, v in obj["model_registry"].items()},
            quote_requests={k: dict(v) for k, v in obj["quote_requests"].items()},
            quote_submissions={k: dict(v) for k, v in obj["quote_submissions"].items()},
            escrows={k: dict(v) for k, v in obj["escrows"].items()},
            hashlocks={k: dict(v) for k, v in obj["hashlocks"].items()},
            data_authorities=frozenset(obj["data_authorities"]),
            model_authorities=frozenset(obj["model_authorities"]),
        )
    except (KeyError, TypeError, ValueError, AttributeError) as exc:
        raise TxRejected(f"malformed ledger state: {exc}")
    recorded = obj.get("total_value")
    if recorded is not None and recorded != total_value(state):
        raise TxRejected("ledger state fails its own conservation record")
    return state


def save_tx_log(path, log) -> None:
    """Write a ``run_script`` log as newline-delimited JSON records."""

    with open(path, "w", encoding="utf-8") as fh:
        for entry in log:
            fh.write(json.dumps(entry, sort_keys=True) + "\n")


def load_tx_log(path) -> list:
    entries = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                entries.append(json.loads(line))
    return entries
