"""Transcendental approximations against a high-precision float oracle.

The oracle is the C-library double implementation (math.log / math.exp),
whose error is ~1e-16 relative: negligible next to the 2^-8 budgets under
test, so it serves as the independent reference.
"""

import math

import numpy as np
import pytest

from blindscore.errors import DomainError, Overflow
from blindscore.fixedpoint import ONE, FixedScalar, FixedTensor
from blindscore.mathfx import dist_raw, exp_raw, fx_ln, fx_softmax, ln_raw, sqrt_raw


def test_ln_of_one_is_zero():
    assert abs(fx_ln(FixedScalar.from_float(1.0)).value) <= 2**-8


def test_ln_of_e_is_one():
    e_q = FixedScalar.from_float(math.e)
    assert abs(fx_ln(e_q).value - 1.0) <= 2**-7


def test_ln_domain_error():
    with pytest.raises(DomainError):
        fx_ln(FixedScalar(0))
    with pytest.raises(DomainError):
        fx_ln(FixedScalar.from_float(-0.5))


def test_ln_absolute_error_over_working_range():
    # Budget: 2^-8 absolute on [2^-16, 8]. Sweep densely near zero where the
    # exponent term dominates, then coarsely up to 8.
    budget = 2**-8
    for raw in range(1, 4097):
        assert abs(ln_raw(raw) / ONE - math.log(raw / ONE)) <= budget
    for raw in range(4097, 8 * ONE + 1, 31):
        assert abs(ln_raw(raw) / ONE - math.log(raw / ONE)) <= budget


def test_exp_matches_oracle_on_negative_range():
    # Softmax only ever evaluates exp on t <= 0.
    for t_raw in range(0, -12 * ONE, -97):
        got = exp_raw(t_raw) / ONE
        want = math.exp(t_raw / ONE)
        assert abs(got - want) <= 2**-9


def test_exp_underflow_and_overflow():
    assert exp_raw(-20 * ONE) == 0
    assert exp_raw(0) == ONE
    with pytest.raises(Overflow):
        exp_raw(12 * ONE)  # e^12 > 32768


def test_exp_monotone_nondecreasing():
    prev = -1
    for t_raw in range(-5 * ONE, ONE, 257):
        cur = exp_raw(t_raw)
        assert cur >= prev
        prev = cur


def test_softmax_uniform_exact_quarters():
    out = fx_softmax(FixedTensor.from_float_array([0.0, 0.0, 0.0, 0.0]))
    assert out.raw.tolist() == [ONE // 4] * 4


def test_softmax_singleton_is_exact_one():
    out = fx_softmax(FixedTensor.from_float_array([5.0]))
    assert out.raw.tolist() == [ONE]


def test_softmax_two_logits_vs_oracle():
    out = fx_softmax(FixedTensor.from_float_array([2.0, 0.0])).to_float_array()
    ref = np.exp([2.0, 0.0])
    ref = ref / ref.sum()
    assert np.abs(out - ref).max() <= 2**-8


def test_softmax_normalization_and_argmax_on_random_vectors():
    rng = np.random.default_rng(2024)
    for _ in range(1000):
        c = int(rng.integers(2, 12))
        logits = rng.uniform(-8.0, 8.0, size=c)
        t = FixedTensor.from_float_array(logits)
        out = fx_softmax(t)
        raws = out.raw
        assert int(raws.sum()) == ONE
        assert int(raws.min()) >= 0
        # oracle on the quantized logits, so both sides see the same inputs
        ref = t.to_float_array()
        assert int(np.argmax(raws)) == int(np.argmax(ref))


def test_softmax_rejects_bad_shapes():
    with pytest.raises(DomainError):
        fx_softmax(FixedTensor.from_float_array([[1.0, 2.0]]))


def test_sqrt_is_floor_square_root():
    for x_raw in [0, 1, ONE, 2 * ONE, 9 * ONE, 12345678]:
        s = sqrt_raw(x_raw)
        assert s * s <= (x_raw << 16) < (s + 1) * (s + 1)
    with pytest.raises(DomainError):
        sqrt_raw(-1)


def test_sqrt_exact_on_perfect_squares():
    assert sqrt_raw(4 * ONE) == 2 * ONE
    assert sqrt_raw(ONE) == ONE


def test_dist_raw_floor_property():
    for sq in [0, 1, 2, ONE * ONE, 5 * ONE * ONE]:
        d = dist_raw(sq)
        assert d * d <= sq < (d + 1) * (d + 1)
    # unit vectors one apart in one coordinate: distance exactly 1.0
    assert dist_raw(ONE * ONE) == ONE
