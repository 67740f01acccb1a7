"""Three-block factorization: band boundaries, mixer folding, bit-exactness."""

import numpy as np
import pytest

from blindscore.errors import InvalidCut, ShapeMismatch
from blindscore.fixtures import architecture, random_inputs, random_model
from blindscore.layers import LayerSpec, Model
from blindscore.splitmodel import (
    SplitModel,
    first_activation_index,
    full_trace,
    split_model,
)


def small_flatten_model(seed=b"flat"):
    """conv -> relu -> avgpool -> flatten -> linear: absorber sits past a flatten."""
    from blindscore.fixtures import fill_weights

    layers = [
        LayerSpec("conv2d", "c", in_channels=1, out_channels=4, kernel=3),
        LayerSpec("relu", "r"),
        LayerSpec("avgpool2d", "p", kernel=2, stride=2),
        LayerSpec("flatten", "f"),
        LayerSpec("linear", "fc", in_features=36, out_features=5),
    ]
    return fill_weights((1, 8, 8), layers, seed)


class TestBands:
    def test_reference_cut_boundaries(self):
        for name, want_ab in [("lenet-xs", 2), ("lenet5", 2), ("cnn5", 2)]:
            _, layers, cut_bc = architecture(name)
            assert first_activation_index(layers) + 1 == want_ab
            assert want_ab < cut_bc < len(layers)

    def test_lenet_xs_band_contents(self):
        model = random_model("lenet-xs", b"bands")
        sm = split_model(model, cut_bc=4, mixer_seed=b"m")
        assert [s.kind for s in sm.part_a.layers] == ["conv2d", "relu"]
        assert [s.kind for s in sm.part_b.layers] == ["avgpool2d", "conv2d"]
        assert [s.kind for s in sm.part_c.layers] == [
            "relu",
            "avgpool2d",
            "adaptive-avgpool2d",
            "flatten",
            "linear",
            "relu",
            "linear",
        ]
        assert sm.part_a.param_count() == 78
        assert sm.part_b.param_count() == 456
        assert sm.part_c.param_count() == 3434

    def test_reference_parameter_totals(self):
        totals = {"lenet-xs": 3_968, "lenet5": 61_706, "cnn5": 1_727_588}
        for name, want in totals.items():
            model = random_model(name, b"params")
            assert model.param_count() == want
            _, _, cut_bc = architecture(name)
            sm = split_model(model, cut_bc, mixer_seed=b"m")
            assert sm.param_count() == want  # folding moves values, never counts


class TestMixerFolding:
    def test_identity_hook_preserves_weights(self):
        model = random_model("lenet-xs", b"ident")
        sm = split_model(model, cut_bc=4, mixer_seed=None)
        assert list(sm.mixer_perm) == list(range(3))
        for got, want in zip(sm.part_b.weights, model.weights[2:4]):
            for g, w in zip(got, want):
                assert np.array_equal(g.raw, w.raw)

    def test_split_equals_unsplit_bitexact(self):
        cases = [("lenet-xs", 3), ("lenet5", 3), ("cnn5", 1)]
        for name, count in cases:
            model = random_model(name, b"exact-" + name.encode())
            _, _, cut_bc = architecture(name)
            sm = split_model(model, cut_bc, mixer_seed=b"mix-" + name.encode())
            for x in random_inputs(model.input_shape, count, b"in-" + name.encode()):
                assert np.array_equal(sm.forward(x).raw, model.forward(x).raw), name

    def test_mixer_rearranges_absorber_weights(self):
        model = random_model("lenet-xs", b"absorb")
        sm = split_model(model, cut_bc=4, mixer_seed=b"shuffle")
        perm = sm.mixer_perm
        assert sorted(perm) == list(range(3)) and list(perm) != list(range(3))
        w_orig = model.weights[3][0].raw  # conv2 weight, first layer with channels
        w_folded = sm.part_b.weights[1][0].raw
        assert not np.array_equal(w_folded, w_orig)
        assert np.array_equal(w_folded, w_orig[:, perm])

    def test_mixer_flows_through_batchnorm_into_block_c(self):
        model = random_model("cnn5", b"bn-flow")
        sm = split_model(model, cut_bc=4, mixer_seed=b"bn-mix")
        perm = sm.mixer_perm
        scale_orig, shift_orig = (w.raw for w in model.weights[2])
        scale_fold, shift_fold = (w.raw for w in sm.part_b.weights[0])
        assert np.array_equal(scale_fold, scale_orig[perm])
        assert np.array_equal(shift_fold, shift_orig[perm])
        # the absorber is block C's leading conv
        assert np.array_equal(sm.part_c.weights[0][0].raw, model.weights[4][0].raw[:, perm])

    def test_mixer_crosses_flatten_into_linear(self):
        model = small_flatten_model()
        sm = split_model(model, cut_bc=3, mixer_seed=b"feat")
        perm = sm.mixer_perm
        block = 9  # 3x3 plane after the pool
        featperm = (perm[:, None] * block + np.arange(block)[None, :]).reshape(-1)
        assert np.array_equal(sm.part_c.weights[1][0].raw, model.weights[4][0].raw[:, featperm])
        for x in random_inputs(model.input_shape, 4, b"feat-in"):
            assert np.array_equal(sm.forward(x).raw, model.forward(x).raw)

    def test_block_chain_matches_forward(self):
        model = random_model("lenet-xs", b"chain")
        sm = split_model(model, cut_bc=4, mixer_seed=b"c")
        x = random_inputs(model.input_shape, 1, b"chain-in")[0]
        step = sm.forward_block("C", sm.forward_block("B", sm.forward_block("A", x)))
        assert np.array_equal(step.raw, sm.forward(x).raw)

    def test_block_b_output_hides_channel_order(self):
        model = random_model("lenet-xs", b"hide")
        plain = split_model(model, cut_bc=4, mixer_seed=None)
        mixed = split_model(model, cut_bc=4, mixer_seed=b"secret")
        x = random_inputs(model.input_shape, 1, b"hide-in")[0]
        a_plain = plain.forward_block("A", x)
        a_mixed = mixed.forward_block("A", x)
        assert not np.array_equal(a_plain.raw, a_mixed.raw)
        assert np.array_equal(a_plain.raw[mixed.mixer_perm], a_mixed.raw)


class TestInvalidCuts:
    def test_cut_bounds(self):
        model = random_model("lenet-xs", b"cuts")
        for bad in (0, 1, 2, 11, 12):
            with pytest.raises(InvalidCut):
                split_model(model, cut_bc=bad, mixer_seed=b"m")

    def test_no_activation(self):
        from blindscore.fixtures import fill_weights

        layers = [
            LayerSpec("linear", "a", in_features=4, out_features=4),
            LayerSpec("linear", "b", in_features=4, out_features=4),
            LayerSpec("linear", "c", in_features=4, out_features=2),
        ]
        model = fill_weights((4,), layers, b"noact")
        with pytest.raises(InvalidCut):
            split_model(model, cut_bc=2, mixer_seed=b"m")

    def test_mixer_never_absorbed(self):
        from blindscore.fixtures import fill_weights

        layers = [
            LayerSpec("conv2d", "c", in_channels=1, out_channels=4, kernel=3),
            LayerSpec("relu", "r"),
            LayerSpec("avgpool2d", "p", kernel=2, stride=2),
            LayerSpec("flatten", "f"),
        ]
        model = fill_weights((1, 8, 8), layers, b"noabsorb")
        with pytest.raises(InvalidCut):
            split_model(model, cut_bc=3, mixer_seed=b"m")


class TestTraceAndBytes:
    def test_full_trace_levels(self):
        model = random_model("lenet-xs", b"trace")
        xs = random_inputs(model.input_shape, 3, b"trace-in")
        tr = full_trace(model, xs)
        assert tr.num_inputs == 3 and tr.num_layers == 11
        assert len(tr.activations[0]) == 12
        assert all(a.shape == (10,) for a in tr.level(11))
        assert np.array_equal(tr.level(0)[1].raw, xs[1].raw)
        with pytest.raises(ShapeMismatch):
            tr.level(12)

    def test_block_a_bytes_binds_mixer(self):
        model = random_model("lenet-xs", b"bind")
        a = split_model(model, cut_bc=4, mixer_seed=b"shuffle")
        b = split_model(model, cut_bc=4, mixer_seed=b"shuffle")
        c = split_model(model, cut_bc=4, mixer_seed=None)
        assert a.block_a_bytes() == b.block_a_bytes()
        assert a.block_a_bytes() != c.block_a_bytes()

    def test_unknown_block_rejected(self):
        model = random_model("lenet-xs", b"blk")
        sm = split_model(model, cut_bc=4, mixer_seed=None)
        with pytest.raises(ShapeMismatch):
            sm.forward_block("D", random_inputs(model.input_shape, 1, b"x")[0])
