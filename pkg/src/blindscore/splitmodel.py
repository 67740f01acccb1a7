"""Three-block model factorization C(B(A(x))) with a secret output mixer.

Block A runs through (and including) the first activation, then applies a
secret random channel permutation to its output. The inverse permutation is
never materialized as a layer: it is folded into the weights of the first
channel-absorbing layer downstream (a conv2d along its input-channel axis,
or a linear along its input features after a flatten). Layers between the
mixer and that absorber are permutation-equivariant (pools, relu, dropout)
or per-channel (batchnorm, whose parameters get permuted), so the folded
pipeline reproduces the unsplit model bit-exactly while block B alone is
useless without knowing the permutation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidCut, ShapeMismatch
from .fixedpoint import FixedTensor
from .layers import LayerSpec, Model, layer_forward
from .rng import DetRng


@dataclass
class ForwardTrace:
    """Per-layer activations for a batch: activations[i][l], l in 0..L."""

    num_layers: int
    activations: list

    def level(self, l: int) -> list:
        if not 0 <= l <= self.num_layers:
            raise ShapeMismatch(f"trace has levels 0..{self.num_layers}, asked {l}")
        return [acts[l] for acts in self.activations]

    @property
    def num_inputs(self) -> int:
        return len(self.activations)


def full_trace(model: Model, inputs) -> ForwardTrace:
    """Run every input through the model, recording all L+1 activations."""
    inputs = list(inputs)
    acts = [model.trace(x) for x in inputs]
    return ForwardTrace(len(model.layers), acts)


@dataclass
class SplitModel:
    """The factorization, with the mixer permutation over A's channels.

    mixer_perm maps mixed channel c to source channel mixer_perm[c]:
    mixed = a[mixer_perm]. part_b/part_c already absorb the inverse.
    """

    part_a: Model
    part_b: Model
    part_c: Model
    mixer_perm: np.ndarray
    cut_ab: int
    cut_bc: int

    @property
    def input_shape(self) -> tuple:
        return self.part_a.input_shape

    @property
    def output_shape(self) -> tuple:
        return self.part_c.output_shape

    def param_count(self) -> int:
        return self.part_a.param_count() + self.part_b.param_count() + self.part_c.param_count()

    def block_a_bytes(self) -> bytes:
        """Canonical encoding of A's weights plus the mixer (commitment body)."""
        return self.part_a.to_bytes() + self.mixer_perm.astype(">u4").tobytes()

    def forward(self, x: FixedTensor) -> FixedTensor:
        return self.forward_block("C", self.forward_block("B", self.forward_block("A", x)))

    def forward_block(self, block: str, x: FixedTensor) -> FixedTensor:
        if block == "A":
            out = self.part_a.forward(x)
            return FixedTensor.from_raw(out.raw[self.mixer_perm])
        if block == "B":
            return self.part_b.forward(x)
        if block == "C":
            return self.part_c.forward(x)
        raise ShapeMismatch(f"unknown block {block!r}")


def first_activation_index(layers) -> int:
    for i, spec in enumerate(layers):
        if spec.kind == "relu":
            return i
    raise InvalidCut("model has no activation layer to end block A at")


def _permute_pending(spec: LayerSpec, weights, pending, shape):
    """Carry a pending input permutation through one layer.

    Returns (new_weights, new_pending). pending is an index array over the
    layer's input channels (or flat features after a flatten); new_pending
    is None once an absorbing layer rewrites its weights.
    """
    k = spec.kind
    if k in ("relu", "dropout-identity", "maxpool2d", "avgpool2d", "adaptive-avgpool2d"):
        return weights, pending
    if k == "batchnorm2d":
        scale, shift = weights
        return (
            FixedTensor.from_raw(scale.raw[pending]),
            FixedTensor.from_raw(shift.raw[pending]),
        ), pending
    if k == "flatten":
        if len(shape) == 1:
            return weights, pending
        block = 1
        for d in shape[1:]:
            block *= d
        feat = (pending[:, None] * block + np.arange(block)[None, :]).reshape(-1)
        return weights, feat
    if k == "conv2d":
        w, b = weights
        return (FixedTensor.from_raw(w.raw[:, pending]), b), None
    if k == "linear":
        w, b = weights
        return (FixedTensor.from_raw(w.raw[:, pending]), b), None
    raise InvalidCut(f"cannot carry mixer through layer kind {spec.kind!r}")


def split_model(model: Model, cut_bc: int, mixer_seed: bytes | None = None) -> SplitModel:
    """Factor `model` at (first activation, cut_bc) with a seeded mixer.

    cut_bc is the index of block C's first layer. A seed of None forces the
    identity permutation (test hook).
    """
    n = len(model.layers)
    cut_ab = first_activation_index(model.layers) + 1
    if not (cut_ab < cut_bc < n):
        raise InvalidCut(f"cut_bc={cut_bc} outside ({cut_ab}, {n})")

    shapes = model.shapes()
    a_out_shape = shapes[cut_ab]
    channels = a_out_shape[0]
    if mixer_seed is None:
        perm = np.arange(channels)
    else:
        rng = DetRng(mixer_seed, b"mixer")
        order = list(range(channels))
        for i in range(channels - 1, 0, -1):
            j = rng.randbelow(i + 1)
            order[i], order[j] = order[j], order[i]
        perm = np.asarray(order)

    part_a = Model(model.input_shape, model.layers[:cut_ab], model.weights[:cut_ab])

    # fold the inverse permutation into the first absorbing layer downstream
    pending = perm
    tail_weights = []
    for idx in range(cut_ab, n):
        spec = model.layers[idx]
        weights = model.weights[idx]
        if pending is not None:
            weights, pending = _permute_pending(spec, weights, pending, shapes[idx])
        tail_weights.append(weights)
    if pending is not None:
        raise InvalidCut("no conv2d/linear after the mixer to absorb its inverse")

    nb = cut_bc - cut_ab
    part_b = Model(a_out_shape, model.layers[cut_ab:cut_bc], tail_weights[:nb])
    part_c = Model(shapes[cut_bc], model.layers[cut_bc:], tail_weights[nb:])
    return SplitModel(part_a, part_b, part_c, perm, cut_ab, cut_bc)
