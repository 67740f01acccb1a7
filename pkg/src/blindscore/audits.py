"""Probabilistic audits: coverage challenges and committed-trace spot checks.

Two games, both reduced to pure functions so the same code drives the
interactive engine, the planning CLI, and the statistical tests:

* Coverage challenge — a verifier samples dataset indices; the prover names,
  for each, a representative within radius d. Acceptance tolerates a delta
  fraction of failures, compared with exact rational arithmetic.

* Committed-trace spot check — the prover Merkle-commits every activation
  level of a model pass over N inputs (plus the weights, when those are the
  hidden side), then must open randomly chosen transitions, which the
  verifier re-executes bit-for-bit. One corrupted transition per tampered
  input is assumed when planning; detection probability is hypergeometric
  and computed exactly.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .commitments import (
    CommitParams,
    MerklePath,
    MerkleRoot,
    mt_commit,
    mt_open,
    mt_verify,
)
from .errors import (
    DomainError,
    MalformedMessage,
    PlanInvalid,
    Unachievable,
)
from .fixedpoint import FixedTensor, tensor_from_bytes, tensor_to_bytes
from .layers import LayerSpec, Model, layer_forward
from .mathfx import dist_raw
from .rng import DetRng
from .selection import RepresentativeSet, _sq_dists_to


# --- coverage challenge -----------------------------------------------------


@dataclass(frozen=True)
class CpChallenge:
    """Verifier-chosen dataset indices, in draw order."""

    indices: tuple


@dataclass(frozen=True)
class CpResponse:
    """Prover-named representative index for each challenged row."""

    witnesses: tuple


@dataclass(frozen=True)
class CpResult:
    accepted: bool
    failures: int
    sample_size: int
    pairs: tuple  # (challenged_index, witness_index, dist_raw, ok)


def cp_sample_size(n, delta, c: float = 1.0) -> int:
    """ceil(c * ln(n) / delta) challenges for size n and tolerance delta."""
    if n <= 1:
        raise DomainError("sample size needs a population larger than 1")
    if not 0 < delta <= 1:
        raise DomainError("delta must be in (0, 1]")
    if c <= 0:
        raise DomainError("challenge multiplier must be positive")
    return math.ceil(c * math.log(n) / delta)


def cp_sample(rng: DetRng, n: int, count: int) -> CpChallenge:
    """Draw `count` distinct row indices; capped at the population size."""
    return CpChallenge(tuple(rng.sample_distinct(n, min(count, n))))


def cp_respond(features: FixedTensor, rep: RepresentativeSet, challenge: CpChallenge) -> CpResponse:
    """Honest prover: name the nearest representative for each challenge."""
    raw = features.raw
    witnesses = []
    for i in challenge.indices:
        best, best_sq = rep.indices[0], None
        for j in rep.indices:
            sq = int(((raw[i] - raw[j]) ** 2).sum())
            if best_sq is None or sq < best_sq:
                best, best_sq = j, sq
        witnesses.append(best)
    return CpResponse(tuple(witnesses))


def cp_check_pair(features: FixedTensor, i: int, j: int, d_raw: int) -> tuple:
    """(floor-isqrt distance, within radius?) for one challenged pair."""
    sq = int(_sq_dists_to(features.raw[i : i + 1], features.raw[j])[0])
    dist = dist_raw(sq)
    return dist, dist <= d_raw


def cp_verify(
    features: FixedTensor,
    rep: RepresentativeSet,
    challenge: CpChallenge,
    response: CpResponse,
    d_raw: int,
    delta,
) -> CpResult:
    """Re-measure every challenged pair; accept iff failures <= delta * size."""
    if len(response.witnesses) != len(challenge.indices):
        raise MalformedMessage("one witness required per challenged index")
    members = set(rep.indices)
    pairs, failures = [], 0
    for i, j in zip(challenge.indices, response.witnesses):
        if j not in members:
            pairs.append((i, j, None, False))
            failures += 1
            continue
        dist, ok = cp_check_pair(features, i, j, d_raw)
        pairs.append((i, j, dist, ok))
        failures += 0 if ok else 1
    size = len(challenge.indices)
    accepted = Fraction(failures) <= Fraction(delta) * size
    return CpResult(accepted, failures, size, tuple(pairs))


def cp_run(
    features: FixedTensor,
    rep: RepresentativeSet,
    d_raw: int,
    delta,
    rng: DetRng,
    c: float = 1.0,
    sample_size: int | None = None,
) -> CpResult:
    """One full local round of the coverage game with an honest prover."""
    n = features.shape[0]
    size = cp_sample_size(n, delta, c) if sample_size is None else sample_size
    challenge = cp_sample(rng, n, size)
    response = cp_respond(features, rep, challenge)
    return cp_verify(features, rep, challenge, response, d_raw, delta)


# --- committed-trace spot check ----------------------------------------------


def weights_to_bytes(ws) -> bytes:
    """Length-prefixed concatenation of a layer's weight tensors."""
    out = struct.pack(">B", len(ws))
    for w in ws:
        blob = tensor_to_bytes(w)
        out += struct.pack(">I", len(blob)) + blob
    return out


def weights_from_bytes(data: bytes) -> tuple:
    if len(data) < 1:
        raise MalformedMessage("empty weight record")
    count = data[0]
    off, ws = 1, []
    for _ in range(count):
        if off + 4 > len(data):
            raise MalformedMessage("truncated weight record")
        (blen,) = struct.unpack(">I", data[off : off + 4])
        off += 4
        if off + blen > len(data):
            raise MalformedMessage("truncated weight tensor")
        ws.append(tensor_from_bytes(data[off : off + blen]))
        off += blen
    if off != len(data):
        raise MalformedMessage("trailing bytes in weight record")
    return tuple(ws)


@dataclass(frozen=True)
class CncCommitment:
    """Merkle roots binding a full batch trace (and optionally the weights)."""

    level_roots: tuple  # L+1 MerkleRoots; index l = activations after layer l
    weight_root: MerkleRoot | None  # present iff the weights are the hidden side
    num_inputs: int
    num_layers: int


@dataclass
class CncProverState:
    model: Model
    trace: list  # trace[i][l] = FixedTensor
    level_trees: list
    weight_tree: object
    pp: CommitParams


@dataclass(frozen=True)
class CncChallenge:
    """m input indices; for each, s transition levels in 1..L (no repeats)."""

    points: tuple
    levels: tuple  # levels[t] aligned with points[t]


@dataclass(frozen=True)
class TransitionProof:
    point: int
    level: int
    prev_bytes: bytes
    prev_path: MerklePath
    out_bytes: bytes
    out_path: MerklePath
    weight_bytes: bytes | None
    weight_path: MerklePath | None


@dataclass(frozen=True)
class CncProof:
    transitions: tuple


def cnc_commit_trace(pp: CommitParams, model: Model, inputs, hide_weights: bool):
    """Run the batch, build per-level trees (plus a weight tree if hidden).

    Returns (CncCommitment, CncProverState). Level l's tree has one leaf per
    input: the serialized activation after layer l (level 0 = the input).
    """
    inputs = list(inputs)
    trace = [model.trace(x) for x in inputs]
    num_layers = len(model.layers)
    level_trees = []
    level_roots = []
    for level in range(num_layers + 1):
        root, tree = mt_commit(pp, [tensor_to_bytes(acts[level]) for acts in trace])
        level_trees.append(tree)
        level_roots.append(root)
    weight_tree = None
    weight_root = None
    if hide_weights:
        weight_root, weight_tree = mt_commit(
            pp, [weights_to_bytes(ws) for ws in model.weights]
        )
    com = CncCommitment(tuple(level_roots), weight_root, len(inputs), num_layers)
    return com, CncProverState(model, trace, level_trees, weight_tree, pp)


def cnc_challenge(rng: DetRng, num_inputs: int, num_layers: int, m: int, s: int) -> CncChallenge:
    """Sample m distinct inputs, then s distinct transitions for each."""
    if not 1 <= m <= num_inputs:
        raise PlanInvalid(f"m={m} outside [1, {num_inputs}]")
    if not 1 <= s <= num_layers:
        raise PlanInvalid(f"s={s} outside [1, {num_layers}]")
    points = tuple(rng.sample_distinct(num_inputs, m))
    levels = tuple(
        tuple(1 + l for l in rng.sample_distinct(num_layers, s)) for _ in points
    )
    return CncChallenge(points, levels)


def cnc_prove(state: CncProverState, challenge: CncChallenge) -> CncProof:
    """Open every challenged transition against the committed roots."""
    transitions = []
    for point, levels in zip(challenge.points, challenge.levels):
        for level in levels:
            prev = tensor_to_bytes(state.trace[point][level - 1])
            out = tensor_to_bytes(state.trace[point][level])
            wbytes = wpath = None
            if state.weight_tree is not None:
                wbytes = weights_to_bytes(state.model.weights[level - 1])
                wpath = mt_open(state.pp, state.weight_tree, level - 1)
            transitions.append(
                TransitionProof(
                    point,
                    level,
                    prev,
                    mt_open(state.pp, state.level_trees[level - 1], point),
                    out,
                    mt_open(state.pp, state.level_trees[level], point),
                    wbytes,
                    wpath,
                )
            )
    return CncProof(tuple(transitions))


def cnc_verify(
    pp: CommitParams,
    com: CncCommitment,
    challenge: CncChallenge,
    proof: CncProof,
    layer_specs,
    weights=None,
) -> bool:
    """Recompute every challenged transition; all must hold bit-for-bit.

    Hidden-weights mode (com.weight_root set): weights come from the proof's
    openings. Hidden-data mode: the verifier passes the known `weights` list.
    Structural defects raise MalformedMessage; any verification failure
    returns False.
    """
    layer_specs = list(layer_specs)
    if len(layer_specs) != com.num_layers:
        raise MalformedMessage("layer description does not match commitment")
    if com.weight_root is None and weights is None:
        raise MalformedMessage("hidden-data verification needs the weights")
    expected = [
        (point, level)
        for point, levels in zip(challenge.points, challenge.levels)
        for level in levels
    ]
    if [(t.point, t.level) for t in proof.transitions] != expected:
        raise MalformedMessage("proof transitions do not match the challenge")
    for t in proof.transitions:
        if not 1 <= t.level <= com.num_layers or not 0 <= t.point < com.num_inputs:
            raise MalformedMessage("transition outside the committed trace")
        if not mt_verify(pp, com.level_roots[t.level - 1], t.point, t.prev_bytes, t.prev_path):
            return False
        if not mt_verify(pp, com.level_roots[t.level], t.point, t.out_bytes, t.out_path):
            return False
        if com.weight_root is not None:
            if t.weight_bytes is None or t.weight_path is None:
                raise MalformedMessage("hidden-weights proof must open the layer weights")
            if not mt_verify(pp, com.weight_root, t.level - 1, t.weight_bytes, t.weight_path):
                return False
            ws = weights_from_bytes(t.weight_bytes)
        else:
            if t.weight_bytes is not None or t.weight_path is not None:
                raise MalformedMessage("unexpected weight opening in hidden-data proof")
            ws = weights[t.level - 1]
        spec: LayerSpec = layer_specs[t.level - 1]
        prev = tensor_from_bytes(t.prev_bytes)
        got = layer_forward(spec, ws, prev)
        if tensor_to_bytes(got) != t.out_bytes:
            return False
    return True


# --- planning ----------------------------------------------------------------


@dataclass(frozen=True)
class AuditPlan:
    m: int
    s: int
    probability: Fraction

    @property
    def cost(self) -> int:
        return self.m * self.s


def _corrupted_count(num_inputs: int, rho) -> int:
    return math.floor(Fraction(rho) * num_inputs)


def detection_probability(num_inputs: int, rho, num_layers: int, m: int, s: int) -> Fraction:
    """Exact P[spot check catches >=1 tampered transition].

    Tampering model: a rho fraction (floored) of inputs each carry one bad
    transition at a fixed layer; the challenge samples m inputs without
    replacement and s of the L transitions per sampled input.
    """
    if num_inputs < 1 or num_layers < 1:
        raise PlanInvalid("need at least one input and one layer")
    if not 0 <= Fraction(rho) <= 1:
        raise PlanInvalid("rho must be in [0, 1]")
    if not 1 <= m <= num_inputs or not 1 <= s <= num_layers:
        raise PlanInvalid("m, s must satisfy 1 <= m <= N and 1 <= s <= L")
    bad = _corrupted_count(num_inputs, rho)
    if bad == 0:
        return Fraction(0)
    miss = Fraction(num_layers - s, num_layers)
    total = Fraction(0)
    for k in range(0, min(bad, m) + 1):
        pk = Fraction(
            math.comb(bad, k) * math.comb(num_inputs - bad, m - k),
            math.comb(num_inputs, m),
        )
        total += pk * miss**k
    return 1 - total


def plan_audit(num_inputs: int, rho, num_layers: int, target) -> AuditPlan:
    """Cheapest (m*s, then m) challenge meeting the detection target."""
    ftarget = Fraction(target)
    if not 0 < ftarget <= 1:
        raise PlanInvalid("target probability must be in (0, 1]")
    if num_inputs < 1 or num_layers < 1:
        raise PlanInvalid("need at least one input and one layer")
    if _corrupted_count(num_inputs, rho) == 0:
        raise Unachievable("no tampered inputs at this rho; nothing to detect")
    best = None
    for s in range(1, num_layers + 1):
        if detection_probability(num_inputs, rho, num_layers, num_inputs, s) < ftarget:
            continue
        lo, hi = 1, num_inputs
        while lo < hi:
            mid = (lo + hi) // 2
            if detection_probability(num_inputs, rho, num_layers, mid, s) >= ftarget:
                hi = mid
            else:
                lo = mid + 1
        key = (lo * s, lo, s)
        if best is None or key < best[0]:
            best = (key, AuditPlan(lo, s, detection_probability(num_inputs, rho, num_layers, lo, s)))
    if best is None:
        raise Unachievable("no challenge size meets the target")
    return best[1]


def simulate_detection(
    num_inputs: int, rho, num_layers: int, m: int, s: int, runs: int, seed: bytes
) -> float:
    """Monte-Carlo detection rate under the planning model (test-data RNG)."""
    if runs < 1:
        raise PlanInvalid("need at least one run")
    bad = _corrupted_count(num_inputs, rho)
    if bad == 0:
        return 0.0
    digest = DetRng(seed, b"mc-detect").take(8)
    gen = np.random.Generator(np.random.PCG64(int.from_bytes(digest, "big")))
    k = gen.hypergeometric(bad, num_inputs - bad, m, size=runs)
    hits = gen.binomial(k, s / num_layers)
    return float((hits >= 1).mean())
