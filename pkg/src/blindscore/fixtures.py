"""Reproducible synthetic models and datasets for tests and demos.

Weight synthesis uses numpy's PCG64 stream (seeded from a DetRng digest) —
this is bulk test-data generation, not protocol randomness, and PCG64's
integer stream is stable across platforms. Weight magnitudes scale inversely
with fan-in so activations stay well inside the Q16.16 range through deep
stacks.
"""

from __future__ import annotations

import numpy as np

from .errors import DomainError, ShapeMismatch
from .fixedpoint import ONE, FixedTensor
from .layers import LayerSpec, Model, fold_batchnorm2d
from .rng import DetRng

ARCHITECTURES = ("lenet-xs", "lenet5", "cnn5")


def architecture(name: str):
    """Return (input_shape, [LayerSpec], cut_bc) for a named reference net.

    cut_bc is the suggested first layer of block C; block A always ends at
    the first activation.
    """
    if name == "lenet-xs":
        layers = [
            LayerSpec("conv2d", "conv1", in_channels=1, out_channels=3, kernel=5),
            LayerSpec("relu", "relu1"),
            LayerSpec("avgpool2d", "pool1", kernel=2, stride=2),
            LayerSpec("conv2d", "conv2", in_channels=3, out_channels=6, kernel=5),
            LayerSpec("relu", "relu2"),
            LayerSpec("avgpool2d", "pool2", kernel=2, stride=2),
            LayerSpec("adaptive-avgpool2d", "gap", output_size=4),
            LayerSpec("flatten", "flatten"),
            LayerSpec("linear", "fc1", in_features=96, out_features=32),
            LayerSpec("relu", "relu3"),
            LayerSpec("linear", "fc2", in_features=32, out_features=10),
        ]
        return (1, 28, 28), layers, 4
    if name == "lenet5":
        layers = [
            LayerSpec("conv2d", "conv1", in_channels=1, out_channels=6, kernel=5),
            LayerSpec("relu", "relu1"),
            LayerSpec("avgpool2d", "pool1", kernel=2, stride=2),
            LayerSpec("conv2d", "conv2", in_channels=6, out_channels=16, kernel=5),
            LayerSpec("relu", "relu2"),
            LayerSpec("avgpool2d", "pool2", kernel=2, stride=2),
            LayerSpec("flatten", "flatten"),
            LayerSpec("linear", "fc1", in_features=400, out_features=120),
            LayerSpec("relu", "relu3"),
            LayerSpec("linear", "fc2", in_features=120, out_features=84),
            LayerSpec("relu", "relu4"),
            LayerSpec("linear", "fc3", in_features=84, out_features=10),
        ]
        return (1, 32, 32), layers, 9
    if name == "cnn5":
        layers = []
        chans = [3, 32, 64, 128, 256, 512]
        for i in range(5):
            layers += [
                LayerSpec(
                    "conv2d",
                    f"conv{i + 1}",
                    in_channels=chans[i],
                    out_channels=chans[i + 1],
                    kernel=3,
                    padding=1,
                ),
                LayerSpec("relu", f"relu{i + 1}"),
                LayerSpec("batchnorm2d", f"bn{i + 1}", num_features=chans[i + 1]),
                LayerSpec("maxpool2d", f"pool{i + 1}", kernel=2, stride=2),
            ]
        layers += [
            LayerSpec("flatten", "flatten"),
            LayerSpec("dropout-identity", "drop1"),
            LayerSpec("linear", "fc1", in_features=512, out_features=256),
            LayerSpec("relu", "relu6"),
            LayerSpec("dropout-identity", "drop2"),
            LayerSpec("linear", "fc2", in_features=256, out_features=100),
        ]
        return (3, 32, 32), layers, 4
    raise DomainError(f"unknown architecture {name!r}; choose from {ARCHITECTURES}")


def _np_rng(seed: bytes, label: bytes) -> np.random.Generator:
    digest = DetRng(seed, label).take(8)
    return np.random.Generator(np.random.PCG64(int.from_bytes(digest, "big")))


def random_model(name: str, seed: bytes) -> Model:
    """A named architecture with deterministic pseudo-random Q16.16 weights."""
    input_shape, layers, _ = architecture(name)
    return fill_weights(input_shape, layers, seed)


def fill_weights(input_shape, layers, seed: bytes) -> Model:
    """Populate a layer stack with deterministic fan-in scaled raw weights."""
    gen = _np_rng(seed, b"weights")
    weights = []
    for spec in layers:
        if spec.kind == "conv2d":
            fan_in = spec.in_channels * spec.kernel * spec.kernel
            lim = max(2, (3 * ONE) // (2 * fan_in))
            w = gen.integers(-lim, lim + 1, size=spec.weight_shapes[0])
            b = gen.integers(-ONE // 20, ONE // 20 + 1, size=spec.weight_shapes[1])
            weights.append((FixedTensor.from_raw(w), FixedTensor.from_raw(b)))
        elif spec.kind == "linear":
            fan_in = spec.in_features
            lim = max(2, (3 * ONE) // (2 * fan_in))
            w = gen.integers(-lim, lim + 1, size=spec.weight_shapes[0])
            b = gen.integers(-ONE // 20, ONE // 20 + 1, size=spec.weight_shapes[1])
            weights.append((FixedTensor.from_raw(w), FixedTensor.from_raw(b)))
        elif spec.kind == "batchnorm2d":
            n = spec.num_features
            gamma = FixedTensor.from_raw(gen.integers(ONE - ONE // 5, ONE + ONE // 5, size=n))
            beta = FixedTensor.from_raw(gen.integers(-ONE // 10, ONE // 10 + 1, size=n))
            mean = FixedTensor.from_raw(gen.integers(-ONE // 5, ONE // 5 + 1, size=n))
            var = FixedTensor.from_raw(gen.integers(ONE - ONE // 3, ONE + ONE // 3, size=n))
            _, folded = fold_batchnorm2d(spec.name, gamma, beta, mean, var)
            weights.append(folded)
        else:
            weights.append(())
    return Model(tuple(input_shape), list(layers), weights)


def random_inputs(shape, count: int, seed: bytes) -> list:
    """`count` tensors with raw values in [0, ONE) (unit-normalized pixels)."""
    gen = _np_rng(seed, b"inputs")
    return [
        FixedTensor.from_raw(gen.integers(0, ONE, size=tuple(shape)))
        for _ in range(count)
    ]


def temper_logits(model: Model, probes, max_spread_raw: int = 8 * ONE) -> Model:
    """Halve the final linear layer until logit spread on `probes` is bounded.

    A bounded spread keeps every softmax probability strictly positive in
    Q16.16, so cross-entropy stays inside its domain on these inputs.
    """
    last = len(model.layers) - 1
    if model.layers[last].kind != "linear":
        raise DomainError("temper_logits expects a final linear layer")
    model = Model(model.input_shape, list(model.layers), list(model.weights))
    for _ in range(40):
        spread = 0
        for x in probes:
            out = model.forward(x).raw
            spread = max(spread, int(out.max()) - int(out.min()))
        if spread <= max_spread_raw:
            return model
        w, b = model.weights[last]
        model.weights[last] = (
            FixedTensor.from_raw(w.raw >> 1),
            FixedTensor.from_raw(b.raw >> 1),
        )
    raise DomainError("could not temper final layer logits")


# --- datasets and ready-to-run protocol scenarios ---------------------------


def blob_dataset(n: int, dim: int, num_classes: int, seed: bytes) -> "Dataset":
    """Class-clustered rows: one random center per class plus small noise,
    clipped into [0, 1).  Clustered data gives the representative-subset
    machinery something real to do while staying conv-plausible."""

    from .selection import Dataset

    gen = _np_rng(seed, b"blob-dataset")
    centers = gen.integers(ONE // 4, (3 * ONE) // 4, size=(num_classes, dim))
    labels = gen.integers(0, num_classes, size=n)
    spread = ONE // 8
    raws = centers[labels] + gen.integers(-spread, spread + 1, size=(n, dim))
    raws = np.clip(raws, 0, ONE - 1)
    return Dataset(
        FixedTensor.from_raw(raws),
        tuple(int(y) for y in labels),
        num_classes,
    )


# Seven-segment bitmaps: which of segments a..g light up for each digit.
_SEGMENTS = {
    0: "abcdef", 1: "bc", 2: "abdeg", 3: "abcdg", 4: "bcfg",
    5: "acdfg", 6: "acdefg", 7: "abc", 8: "abcdefg", 9: "abcdfg",
}


def _glyph(digit: int) -> np.ndarray:
    """An 8x8 {0,1} seven-segment rendering of one decimal digit."""

    grid = np.zeros((8, 8), dtype=np.int64)
    on = _SEGMENTS[digit]
    if "a" in on:
        grid[0, 1:7] = 1
    if "g" in on:
        grid[3, 1:7] = 1
    if "d" in on:
        grid[7, 1:7] = 1
    if "f" in on:
        grid[0:4, 0] = 1
    if "b" in on:
        grid[0:4, 7] = 1
    if "e" in on:
        grid[4:8, 0] = 1
    if "c" in on:
        grid[4:8, 7] = 1
    return grid


def digit_dataset(n: int, input_shape, num_classes: int, seed: bytes) -> "Dataset":
    """Digit-like grayscale images on the model's input grid.

    Each row is an 8x8 seven-segment glyph of its class label, scaled to
    ``input_shape``'s spatial size (replicated across channels), with
    per-image brightness jitter and pixel noise, then flattened.  Labels
    are the rendered digits, so the images genuinely carry their classes.
    """

    from .selection import Dataset

    if not 2 <= num_classes <= 10:
        raise DomainError("digit images support 2..10 classes")
    if len(input_shape) != 3:
        raise ShapeMismatch(f"digit images need a (C, H, W) input, got {input_shape}")
    channels, height, width = input_shape
    gen = _np_rng(seed, b"digit-dataset")
    labels = gen.integers(0, num_classes, size=n)

    rows_idx = (np.arange(height) * 8) // height
    cols_idx = (np.arange(width) * 8) // width
    rows = np.empty((n, channels * height * width), dtype=np.int64)
    for i, digit in enumerate(labels):
        img = _glyph(int(digit))[np.ix_(rows_idx, cols_idx)]
        bright = gen.integers((3 * ONE) // 4, ONE)  # per-image foreground level
        pixels = img * bright + gen.integers(-ONE // 16, ONE // 16 + 1, size=img.shape)
        pixels = np.clip(pixels, 0, ONE - 1)
        rows[i] = np.broadcast_to(pixels, (channels, height, width)).reshape(-1)
    return Dataset(FixedTensor.from_raw(rows), tuple(int(y) for y in labels), num_classes)


def tiny_architecture(num_classes: int = 4):
    """A small convolutional stack for protocol-level tests.

    Returns (input_shape, layers, cut_bc).  The output block is two linear
    layers, so every audited transition there opens a weight commitment.
    """

    layers = [
        LayerSpec("conv2d", "conv1", in_channels=1, out_channels=4, kernel=3),
        LayerSpec("relu", "relu1"),
        LayerSpec("flatten", "flatten"),
        LayerSpec("linear", "fc1", in_features=144, out_features=16),
        LayerSpec("relu", "relu2"),
        LayerSpec("linear", "fc2", in_features=16, out_features=8),
        LayerSpec("linear", "fc3", in_features=8, out_features=num_classes),
    ]
    return (1, 8, 8), layers, 5


def protocol_fixture(
    n: int = 24,
    k: int = 4,
    num_classes: int = 4,
    num_challenges: int = 8,
    delta=0.0,
    jl_dim: int | None = None,
    seed: bytes = b"protocol-fixture",
    timeout: float = 20.0,
    architecture_name: str | None = None,
):
    """A complete honest scenario: split model, dataset, run parameters.

    Returns ``(AliceInputs, BobInputs, RunConfig)``.  The public radius is
    set to the covering radius of the selection the run will actually make
    (recomputed here from the same joint seed derivation), so an honest run
    always passes the coverage audit with zero failures.
    """

    if architecture_name is None:
        input_shape, layers, cut_bc = tiny_architecture(num_classes)
    else:
        input_shape, layers, cut_bc = architecture(architecture_name)
    dim = 1
    for side in input_shape:
        dim *= side

    dataset = blob_dataset(n, dim, num_classes, seed)
    model = fill_weights(input_shape, layers, DetRng(seed, b"model").take(16))
    probes = [
        FixedTensor.from_raw(dataset.features.raw[i].reshape(input_shape))
        for i in range(min(n, 8))
    ]
    model = temper_logits(model, probes)
    return scenario(
        model,
        dataset,
        cut_bc,
        k=k,
        num_challenges=num_challenges,
        delta=delta,
        jl_dim=jl_dim,
        seed=seed,
        timeout=timeout,
    )


def scenario(
    model: Model,
    dataset,
    cut_bc: int,
    *,
    k: int,
    num_challenges: int = 8,
    delta=0.0,
    jl_dim: int | None = None,
    seed: bytes = b"scenario",
    timeout: float = 20.0,
    audit_b=None,
    audit_c=None,
):
    """Assemble protocol inputs around a concrete model and dataset.

    Splits the model at ``cut_bc``, derives all party seeds from ``seed``,
    and sets the public coverage radius to the covering radius of the
    selection the run will make, so an honest run passes its audits.
    Returns ``(AliceInputs, BobInputs, RunConfig)``.  ``audit_b`` and
    ``audit_c`` take ``(m, s)`` pairs; the default plan audits up to two
    selected rows at up to two (middle) / one (output) transitions.
    """

    from .errors import EmptyComplement
    from .protocol.config import (
        AliceInputs,
        AuditSpec,
        BobInputs,
        RunConfig,
        derive_projection_seed,
        select_representatives,
    )
    from .selection import percentile_distance
    from .splitmodel import split_model

    split = split_model(model, cut_bc, mixer_seed=DetRng(seed, b"mixer").take(16))

    alice_seed = DetRng(seed, b"alice").take(32)
    bob_seed = DetRng(seed, b"bob").take(32)
    proj_seed = derive_projection_seed(alice_seed, bob_seed) if jl_dim is not None else None
    rep = select_representatives(dataset, k, jl_dim, proj_seed)
    try:
        d_raw = percentile_distance(dataset.features, rep, 0)
    except EmptyComplement:
        d_raw = 0

    part_b_depth = len(split.part_b.layers)
    config = RunConfig(
        k=k,
        d_raw=d_raw,
        delta=delta,
        num_challenges=num_challenges,
        audit_b=AuditSpec(*audit_b) if audit_b else AuditSpec(m=min(2, k), s=min(2, part_b_depth)),
        audit_c=AuditSpec(*audit_c) if audit_c else AuditSpec(m=min(2, k), s=1),
        part_c_specs=tuple(split.part_c.layers),
        input_shape=tuple(model.input_shape),
        num_classes=dataset.num_classes,
        alice_seed=alice_seed,
        bob_seed=bob_seed,
        dealer_seed=DetRng(seed, b"dealer").take(32),
        jl_dim=jl_dim,
        timeout=timeout,
    )
    return AliceInputs(split=split), BobInputs(dataset=dataset), config


def ledger_walk(seed: bytes = b"ledger-walk", steps: int = 60):
    """A deterministic pseudo-random marketplace transaction sequence.

    Mixes valid transitions with deliberately invalid ones (overdrafts,
    double releases, evidence-free slashes, wrong preimages, stale
    reveals) so invariant tests can check both that value is conserved on
    every applied transaction and that rejections leave the state intact.

    Returns ``(trace, applied, rejected)`` where ``trace`` is a list of
    ``(tx, status, state_after)`` triples (``status`` is ``"applied"``,
    ``"rejected"``, or ``"tick"``; a rejected entry's state is the
    untouched previous state).
    """

    import hashlib
    import random

    from .errors import TxRejected, WrongPreimage
    from . import ledger

    rng = random.Random(int.from_bytes(hashlib.sha256(seed).digest()[:8], "big"))
    parties = ("p1", "p2", "p3")
    state = ledger.genesis({name: 500 for name in parties})
    authority = "data-authority"
    keys = {}  # lock id -> correct key bytes
    counters = {"escrow": 0, "lock": 0, "data": 0, "model": 0, "request": 0, "quote": 0}

    def fresh(kind):
        counters[kind] += 1
        return f"{kind}:{counters[kind]}"

    def hexd(tag):
        return hashlib.sha256(seed + tag.encode()).hexdigest()

    trace = []
    for _ in range(steps):
        ops = ["escrow", "fee", "post-hashlock", "register", "tick"]
        held = [e for e, rec in state.escrows.items() if rec["status"] == "held"]
        open_locks = [l for l, rec in state.hashlocks.items() if rec["status"] == "open"]
        funded = [l for l, rec in state.hashlocks.items() if rec["status"] == "funded"]
        if held:
            ops += ["release", "slash"] * 2
        if open_locks:
            ops += ["fund-lock"] * 2
        if funded:
            ops += ["reveal", "refund"] * 2
        ops += ["invalid"] * 2
        op = rng.choice(ops)

        tx = None
        if op == "tick":
            state = ledger.tick(state, rng.randint(1, 3))
            trace.append((ledger.LedgerTx("tick", "p1", {}), "tick", state))
            continue
        if op == "escrow":
            tx = ledger.LedgerTx(
                "escrow",
                rng.choice(parties),
                {
                    "escrow_id": fresh("escrow"),
                    "amount": rng.randint(1, 40),
                    "condition": "honest-conduct:walk",
                },
            )
        elif op == "fee":
            payer, payee = rng.sample(parties, 2)
            tx = ledger.proof_fee_tx(payer, payee, rng.randint(1, 6))
        elif op == "register":
            if rng.random() < 0.5:
                rid = fresh("data")
                tx = ledger.LedgerTx(
                    "register-data",
                    authority,
                    {
                        "registry_id": rid,
                        "owner": rng.choice(parties),
                        "com_x": hexd(rid + "x"),
                        "com_y": hexd(rid + "y"),
                    },
                )
            else:
                rid = fresh("model")
                tx = ledger.LedgerTx(
                    "register-model",
                    "model-authority",
                    {
                        "registry_id": rid,
                        "owner": rng.choice(parties),
                        "com_a": hexd(rid + "a"),
                        "com_b": hexd(rid + "b"),
                        "com_c": hexd(rid + "c"),
                    },
                )
        elif op == "post-hashlock":
            seller, buyer = rng.sample(parties, 2)
            lid = fresh("lock")
            keys[lid] = hashlib.sha256(seed + lid.encode()).digest()
            tx = ledger.LedgerTx(
                "post-hashlock",
                seller,
                {
                    "lock_id": lid,
                    "buyer": buyer,
                    "hash": hashlib.sha256(keys[lid]).hexdigest(),
                    "cipher_ref": "cid:" + lid,
                    "price": rng.randint(1, 30),
                    "deadline": state.height + rng.randint(2, 6),
                },
            )
        elif op == "fund-lock":
            lid = rng.choice(open_locks)
            lock = state.hashlocks[lid]
            tx = ledger.LedgerTx(
                "escrow",
                lock["buyer"],
                {
                    "escrow_id": f"escrow:{lid}",
                    "amount": lock["price"],
                    "condition": f"hashlock:{lid}",
                },
            )
        elif op == "reveal":
            lid = rng.choice(funded)
            good = rng.random() < 0.7
            key = keys[lid] if good else b"not-the-key"
            tx = ledger.LedgerTx(
                "reveal-key", state.hashlocks[lid]["seller"], {"lock_id": lid, "key": key.hex()}
            )
        elif op == "refund":
            tx = ledger.LedgerTx("release", rng.choice(parties), {"lock_id": rng.choice(funded)})
        elif op == "release":
            tx = ledger.LedgerTx("release", authority, {"escrow_id": rng.choice(held)})
        elif op == "slash":
            eid = rng.choice(held)
            holder = state.escrows[eid]["holder"]
            others = [x for x in parties if x != holder]
            payload = {"escrow_id": eid, "counterparty": rng.choice(others)}
            if rng.random() < 0.8:
                payload["evidence"] = {"seq": rng.randint(0, 40), "reason": "walk deviation"}
            tx = ledger.LedgerTx("slash", authority, payload)
        else:  # deliberately invalid
            bad = rng.randint(0, 4)
            if bad == 0:
                tx = ledger.LedgerTx(
                    "escrow",
                    rng.choice(parties),
                    {"escrow_id": fresh("escrow"), "amount": 10**9, "condition": "overdraft"},
                )
            elif bad == 1:
                tx = ledger.LedgerTx("release", authority, {"escrow_id": "escrow:never"})
            elif bad == 2:
                tx = ledger.LedgerTx("reveal-key", "p1", {"lock_id": "lock:never", "key": "00"})
            elif bad == 3:
                tx = ledger.LedgerTx(
                    "register-data",
                    "p1",  # not an authority
                    {
                        "registry_id": fresh("data"),
                        "owner": "p1",
                        "com_x": hexd("zx"),
                        "com_y": hexd("zy"),
                    },
                )
            else:
                tx = ledger.LedgerTx("fee", "p1", {"payee": "p1", "amount": 5})

        try:
            state = ledger.apply_tx(state, tx)
            trace.append((tx, "applied", state))
        except (TxRejected, WrongPreimage):
            trace.append((tx, "rejected", state))

    applied = sum(1 for _, status, _ in trace if status == "applied")
    rejected = sum(1 for _, status, _ in trace if status == "rejected")
    return trace, applied, rejected
