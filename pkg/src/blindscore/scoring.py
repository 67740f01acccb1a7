"""Dataset utility subscores and their fixed-point aggregation.

Three ingredients, each a Q16.16 raw value:
  l - mean cross-entropy of the scoring model on the selected rows,
  u - mean predictive uncertainty (entropy, or one minus the top-two margin),
  d - feature-space diversity of the dataset relative to the selected rows.
The published score is the weighted sum phi = a1*l + a2*u + a3*d computed
with the package's floor-rounding multiply, so every implementation that
follows this module's order of operations reproduces phi bit-for-bit.

Means over k rows are floor divisions of exact raw sums. Probability rows
must each sum to exactly 1.0 (the softmax here guarantees that); a zero
probability at a true label is a domain error, which callers avoid by
tempering logits, not by clamping.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, EmptyInput, ShapeMismatch, TooFewPoints
from .fixedpoint import ONE, FixedTensor, from_float, raw_add, raw_mul
from .layers import Model
from .mathfx import dist_raw, fx_softmax, ln_raw
from .selection import RepresentativeSet, _sq_dists_to, min_distances_raw

UNCERTAINTY_METHODS = ("entropy", "margin")
DIVERSITY_METHODS = ("maxmin", "meanpairwise", "featurestd")


@dataclass(frozen=True)
class ScoreWeights:
    """Aggregation weights (raw Q16.16); defaults favor diversity."""

    loss_raw: int = from_float(0.2)
    uncertainty_raw: int = from_float(0.1)
    diversity_raw: int = from_float(0.7)

    @classmethod
    def from_floats(cls, loss: float, uncertainty: float, diversity: float) -> "ScoreWeights":
        return cls(from_float(loss), from_float(uncertainty), from_float(diversity))


@dataclass(frozen=True)
class ScoringConfig:
    weights: ScoreWeights = ScoreWeights()
    uncertainty: str = "entropy"
    diversity: str = "maxmin"

    def __post_init__(self):
        if self.uncertainty not in UNCERTAINTY_METHODS:
            raise DomainError(f"uncertainty must be one of {UNCERTAINTY_METHODS}")
        if self.diversity not in DIVERSITY_METHODS:
            raise DomainError(f"diversity must be one of {DIVERSITY_METHODS}")


@dataclass(frozen=True)
class ScoreReport:
    """The three subscores and their aggregate, all raw Q16.16."""

    loss_raw: int
    uncertainty_raw: int
    diversity_raw: int
    score_raw: int
    uncertainty_method: str = "entropy"
    diversity_method: str = "maxmin"

    def to_json(self) -> str:
        body = {
            "loss_raw": self.loss_raw,
            "uncertainty_raw": self.uncertainty_raw,
            "diversity_raw": self.diversity_raw,
            "score_raw": self.score_raw,
            "uncertainty_method": self.uncertainty_method,
            "diversity_method": self.diversity_method,
            "loss": self.loss_raw / ONE,
            "uncertainty": self.uncertainty_raw / ONE,
            "diversity": self.diversity_raw / ONE,
            "score": self.score_raw / ONE,
        }
        return json.dumps(body, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ScoreReport":
        body = json.loads(text)
        return cls(
            body["loss_raw"],
            body["uncertainty_raw"],
            body["diversity_raw"],
            body["score_raw"],
            body.get("uncertainty_method", "entropy"),
            body.get("diversity_method", "maxmin"),
        )


def softmax_rows(logits: FixedTensor) -> FixedTensor:
    """Row-wise softmax over a (k, C) logit matrix."""
    if len(logits.shape) != 2:
        raise ShapeMismatch(f"expected (k, C) logits, got {logits.shape}")
    rows = [fx_softmax(FixedTensor.from_raw(logits.raw[i])).raw for i in range(logits.shape[0])]
    return FixedTensor.from_raw(np.stack(rows))


def _check_prob_rows(probs: FixedTensor) -> None:
    if len(probs.shape) != 2:
        raise ShapeMismatch(f"expected (k, C) probabilities, got {probs.shape}")
    if probs.shape[0] == 0:
        raise EmptyInput("no rows to score")
    if (probs.raw < 0).any():
        raise DomainError("probabilities must be nonnegative")
    sums = probs.raw.sum(axis=1)
    if not (sums == ONE).all():
        raise DomainError("each probability row must sum to exactly 1.0")


def loss_ce(probs: FixedTensor, labels) -> int:
    """Mean cross-entropy -ln p[true]; floor-divided exact raw sum."""
    _check_prob_rows(probs)
    labels = list(labels)
    k, c = probs.shape
    if len(labels) != k:
        raise ShapeMismatch(f"{len(labels)} labels for {k} rows")
    total = 0
    for i, y in enumerate(labels):
        if not 0 <= y < c:
            raise DomainError(f"label {y} outside [0, {c})")
        p = int(probs.raw[i, y])
        if p <= 0:
            raise DomainError(f"zero probability at true label of row {i}")
        total += -ln_raw(p)
    return total // k


def uncertainty_entropy(probs: FixedTensor) -> int:
    """Mean Shannon entropy -sum p ln p; zero-probability terms contribute 0."""
    _check_prob_rows(probs)
    k = probs.shape[0]
    total = 0
    for i in range(k):
        h = 0
        for p in (int(v) for v in probs.raw[i]):
            if p > 0:
                h -= raw_mul(p, ln_raw(p))
        total += h
    return total // k


def uncertainty_margin(probs: FixedTensor) -> int:
    """Mean of (1 - (top1 - top2)): larger when the top classes compete."""
    _check_prob_rows(probs)
    k, c = probs.shape
    if c < 2:
        raise DomainError("margin uncertainty needs at least two classes")
    total = 0
    for i in range(k):
        row = np.sort(probs.raw[i])
        total += ONE - (int(row[-1]) - int(row[-2]))
    return total // k


def diversity_maxmin(features: FixedTensor, rep: RepresentativeSet) -> int:
    """Covering radius: the farthest any row sits from the selected rows."""
    dists = min_distances_raw(features, rep)
    if dists.size == 0:
        return 0
    return int(dists.max())


def diversity_meanpairwise(features: FixedTensor, rep: RepresentativeSet) -> int:
    """Mean pairwise distance among the selected rows (floor mean)."""
    if rep.k < 2:
        raise TooFewPoints("mean pairwise distance needs k >= 2")
    raw = features.raw
    total, pairs = 0, 0
    for a in range(rep.k):
        i = rep.indices[a]
        sq = _sq_dists_to(raw[[rep.indices[b] for b in range(a + 1, rep.k)]], raw[i])
        for v in sq:
            total += dist_raw(int(v))
            pairs += 1
    return total // pairs


def diversity_featurestd(features: FixedTensor, rep: RepresentativeSet) -> int:
    """Mean per-dimension standard deviation over the selected rows."""
    if rep.k < 2:
        raise TooFewPoints("feature deviation needs k >= 2")
    raw = features.raw[list(rep.indices)]
    k, dim = raw.shape
    total = 0
    for j in range(dim):
        col = [int(v) for v in raw[:, j]]
        mean = sum(col) // k
        var32 = sum((v - mean) ** 2 for v in col) // k  # Q32.32
        total += dist_raw(var32)
    return total // dim


def aggregate(weights: ScoreWeights, loss_raw: int, uncertainty_raw: int, diversity_raw: int) -> int:
    """phi = a1*l + a2*u + a3*d with floor multiplies, overflow-checked adds."""
    return raw_add(
        raw_add(
            raw_mul(weights.loss_raw, loss_raw),
            raw_mul(weights.uncertainty_raw, uncertainty_raw),
        ),
        raw_mul(weights.diversity_raw, diversity_raw),
    )


def subscore(
    logits: FixedTensor,
    labels,
    features: FixedTensor,
    rep: RepresentativeSet,
    config: ScoringConfig,
) -> ScoreReport:
    """The scoring body shared by the neutral evaluator and the reference.

    `logits` are the model outputs on the selected rows (aligned with
    `labels`); `features`/`rep` give the full feature matrix and selection
    for the diversity term.
    """
    probs = softmax_rows(logits)
    l = loss_ce(probs, labels)
    if config.uncertainty == "entropy":
        u = uncertainty_entropy(probs)
    else:
        u = uncertainty_margin(probs)
    if config.diversity == "maxmin":
        d = diversity_maxmin(features, rep)
    elif config.diversity == "meanpairwise":
        d = diversity_meanpairwise(features, rep)
    else:
        d = diversity_featurestd(features, rep)
    phi = aggregate(config.weights, l, u, d)
    return ScoreReport(l, u, d, phi, config.uncertainty, config.diversity)


def rows_as_inputs(features: FixedTensor, indices, input_shape) -> list:
    """Reshape selected flat rows to a model's input tensor shape."""
    want = 1
    for s in input_shape:
        want *= s
    if features.shape[1] != want:
        raise ShapeMismatch(
            f"rows of dim {features.shape[1]} cannot fill input shape {tuple(input_shape)}"
        )
    return [
        FixedTensor.from_raw(features.raw[i].reshape(tuple(input_shape))) for i in indices
    ]


def model_logits(model: Model, features: FixedTensor, indices) -> FixedTensor:
    """Stack model outputs on the selected rows into a (k, C) logit matrix."""
    outs = [model.forward(x).raw for x in rows_as_inputs(features, indices, model.input_shape)]
    return FixedTensor.from_raw(np.stack(outs))


def score_multi_oracle(
    models,
    features: FixedTensor,
    labels,
    rep: RepresentativeSet,
    config: ScoringConfig,
) -> tuple:
    """Score one dataset against several scoring models.

    Returns one ScoreReport per model; the diversity term depends only on
    the features and selection, so it is identical across reports.
    """
    models = list(models)
    if not models:
        raise EmptyInput("need at least one scoring model")
    sel_labels = [labels[i] for i in rep.indices]
    reports = []
    for model in models:
        logits = model_logits(model, features, rep.indices)
        reports.append(subscore(logits, sel_labels, features, rep, config))
    return tuple(reports)
