"""Q16.16 scalar/tensor arithmetic rules and canonical serialization."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from blindscore.errors import MalformedMessage, Overflow, ShapeMismatch
from blindscore.fixedpoint import (
    ONE,
    RAW_MAX,
    RAW_MIN,
    FixedScalar,
    FixedTensor,
    exact_matmul,
    from_float,
    raw_div,
    raw_mul,
    shift_right,
    tensor_from_bytes,
    tensor_to_bytes,
)

raw_values = st.integers(min_value=RAW_MIN, max_value=RAW_MAX)


def test_float_roundtrip_exact_on_grid():
    for v in [0.0, 1.0, -1.0, 0.5, -0.5, 1.25, -3.75, 32767.0, -32768.0]:
        s = FixedScalar.from_float(v)
        assert s.value == v


def test_from_float_rounds_to_nearest():
    # 0.1 and 0.2 are not representable; nearest raw values are 6554 and 13107.
    assert from_float(0.1) == 6554
    assert from_float(0.2) == 13107
    assert from_float(0.7) == 45875


def test_add_sub_exact():
    a = FixedScalar.from_float(1.5)
    b = FixedScalar.from_float(-2.25)
    assert (a + b).value == -0.75
    assert (a - b).value == 3.75


def test_mul_truncates_toward_negative_infinity():
    # -1 ulp times 0.5 is -0.5 ulp; floor rounding pulls it down to -1 ulp.
    a = FixedScalar(-1)
    half = FixedScalar.from_float(0.5)
    assert (a * half).raw == -1
    # +1 ulp times 0.5 floors to 0.
    assert (FixedScalar(1) * half).raw == 0


@given(raw_values, raw_values)
@settings(max_examples=300)
def test_mul_matches_floor_of_exact_product(a, b):
    exact = (a * b) >> 16  # python ints shift toward -inf
    if RAW_MIN <= exact <= RAW_MAX:
        assert raw_mul(a, b) == exact
    else:
        with pytest.raises(Overflow):
            raw_mul(a, b)


@given(raw_values, raw_values.filter(lambda v: v != 0))
@settings(max_examples=300)
def test_div_is_floor_division(a, b):
    exact = (a << 16) // b
    if RAW_MIN <= exact <= RAW_MAX:
        assert raw_div(a, b) == exact
    else:
        with pytest.raises(Overflow):
            raw_div(a, b)


def test_overflow_is_an_error_never_a_wrap():
    with pytest.raises(Overflow):
        FixedScalar.from_float(40000.0)
    with pytest.raises(Overflow):
        FixedScalar.from_float(300.0) * FixedScalar.from_float(300.0)
    with pytest.raises(Overflow):
        FixedScalar(RAW_MAX) + FixedScalar(1)


def test_tensor_shape_validation():
    with pytest.raises(ShapeMismatch):
        FixedTensor((2, 3), np.zeros((3, 2), dtype=np.int64))
    with pytest.raises(Overflow):
        FixedTensor.from_raw(np.asarray([RAW_MAX + 1], dtype=np.int64))


def test_tensor_immutable_after_construction():
    t = FixedTensor.from_float_array([[1.0, 2.0]])
    with pytest.raises(ValueError):
        t.raw[0, 0] = 5


def test_tensor_serialization_roundtrip():
    rng = np.random.default_rng(7)
    for shape in [(3,), (2, 5), (4, 3, 2), (1, 1, 1, 1)]:
        raw = rng.integers(RAW_MIN, RAW_MAX, size=shape, dtype=np.int64)
        t = FixedTensor.from_raw(raw)
        back = tensor_from_bytes(tensor_to_bytes(t))
        assert back == t


def test_tensor_serialization_is_canonical():
    t = FixedTensor.from_float_array([1.0, -1.0])
    enc = tensor_to_bytes(t)
    assert enc[:4] == b"FXT1"
    assert enc[4] == 1
    assert enc[5:9] == (2).to_bytes(4, "big")
    assert enc[9:13] == (ONE).to_bytes(4, "little", signed=True)


def test_tensor_deserialization_rejects_garbage():
    t = FixedTensor.from_float_array([1.0, 2.0, 3.0])
    enc = tensor_to_bytes(t)
    for bad in [b"", b"XXXX" + enc[4:], enc[:-1], enc + b"\x00"]:
        with pytest.raises(MalformedMessage):
            tensor_from_bytes(bad)


def test_exact_matmul_matches_python_ints():
    rng = np.random.default_rng(3)
    a = rng.integers(-(1 << 20), 1 << 20, size=(4, 6), dtype=np.int64)
    b = rng.integers(-(1 << 20), 1 << 20, size=(6, 3), dtype=np.int64)
    got = exact_matmul(a, b)
    for i in range(4):
        for j in range(3):
            ref = sum(int(a[i, k]) * int(b[k, j]) for k in range(6))
            assert int(got[i, j]) == ref


def test_exact_matmul_bigint_fallback_is_exact():
    # Magnitudes near 2^30 with a long inner dimension overflow int64
    # accumulation, which must trigger the arbitrary-precision path.
    k = 16
    a = np.full((1, k), (1 << 30) - 3, dtype=np.int64)
    b = np.full((k, 1), (1 << 30) - 7, dtype=np.int64)
    got = exact_matmul(a, b)
    ref = k * ((1 << 30) - 3) * ((1 << 30) - 7)
    assert int(got[0, 0]) == ref
    assert ref > np.iinfo(np.int64).max  # the guard really was needed


def test_shift_right_floors_negatives():
    arr = np.asarray([-1, -65536, 65535, 1], dtype=np.int64)
    assert shift_right(arr).tolist() == [-1, -1, 0, 0]
    obj = arr.astype(object)
    assert shift_right(obj).tolist() == [-1, -1, 0, 0]


def test_determinism_across_evaluations():
    rng = np.random.default_rng(11)
    raw = rng.integers(-(1 << 24), 1 << 24, size=(5, 5), dtype=np.int64)
    t1 = FixedTensor.from_raw(raw)
    t2 = FixedTensor.from_raw(raw.copy())
    assert tensor_to_bytes(t1) == tensor_to_bytes(t2)


def test_exact_fraction_view():
    s = FixedScalar.from_float(0.5)
    assert s.exact() == math.isqrt(1) / 2 or float(s.exact()) == 0.5
    assert s.exact().denominator in (1, 2)
