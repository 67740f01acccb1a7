"""Monolithic ideal functionality: the whole pipeline in one trusted call.

This is the ground truth the interactive protocol must match bit-for-bit:
selection (optionally in the projected sketch space), the coverage
self-check and challenge audit, split-model inference through all three
blocks, and the sub-score aggregation.  It sees both parties' private
inputs directly and performs no commitments — a correctness oracle, not a
protocol.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

from ..audits import cp_run
from ..errors import EmptyComplement, ProtocolAbort
from ..rng import DetRng
from ..scoring import ScoreReport, subscore
from ..selection import percentile_distance
from ..fixedpoint import FixedTensor
from .config import (
    STAGE_SELECT,
    AliceInputs,
    BobInputs,
    RunConfig,
    derive_projection_seed,
    select_representatives,
)

import numpy as np

__all__ = ["ReferenceDetails", "score_reference"]


@dataclass(frozen=True)
class ReferenceDetails:
    """Intermediate values, for equivalence checks against the live run."""

    rep_indices: tuple
    projection_seed: bytes | None
    d_prime_raw: int
    coverage_failures: int


def score_reference(alice_inputs: AliceInputs, bob_inputs: BobInputs, config: RunConfig):
    """Run the ideal pipeline; returns ``(ScoreReport, ReferenceDetails)``.

    Uses the same derived randomness as the interactive run (the joint
    projection seed and the coverage challenge stream), so an honest
    interactive run must reproduce the identical score.  Raises
    ``ProtocolAbort`` exactly where the protocol would (the coverage
    self-check and the challenge audit).
    """

    config.validate()
    split = alice_inputs.split
    dataset = bob_inputs.dataset

    # Step 1-2: joint seed and greedy selection.
    proj_seed = None
    if config.jl_dim is not None:
        proj_seed = derive_projection_seed(config.alice_seed, config.bob_seed)
    rep = select_representatives(dataset, config.k, config.jl_dim, proj_seed)

    # Step 3: the data owner's percentile self-check on raw features.
    if config.k < dataset.n:
        try:
            d_prime = percentile_distance(dataset.features, rep, config.delta)
        except EmptyComplement:
            d_prime = 0
    else:
        d_prime = 0
    if d_prime > config.d_raw:
        raise ProtocolAbort(STAGE_SELECT, "d-prime self-check failed in the reference")

    # Step 4: the coverage challenge audit with the verifier's stream.
    result = cp_run(
        dataset.features,
        rep,
        config.d_raw,
        Fraction(config.delta),
        DetRng(config.alice_seed, b"cp-challenge"),
        sample_size=config.num_challenges,
    )
    if not result.accepted:
        raise ProtocolAbort(
            STAGE_SELECT,
            f"coverage-failures: {result.failures} of {result.sample_size} beyond radius",
        )

    # Step 5-6: split inference through all three blocks, in subset order.
    logit_rows = []
    for i in rep.indices:
        x = FixedTensor.from_raw(dataset.features.raw[i].reshape(tuple(config.input_shape)))
        a = split.forward_block("A", x)
        b = split.forward_block("B", a)
        z = split.forward_block("C", b)
        logit_rows.append(z.raw)
    logits = FixedTensor.from_raw(np.stack(logit_rows))
    labels = [int(dataset.labels[i]) for i in rep.indices]

    # Step 7: the sub-score aggregation.
    report = subscore(logits, labels, dataset.features, rep, config.scoring)
    details = ReferenceDetails(
        rep_indices=rep.indices,
        projection_seed=proj_seed,
        d_prime_raw=d_prime,
        coverage_failures=result.failures,
    )
    return report, details
