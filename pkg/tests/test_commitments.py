"""Commitment and Merkle tree behavior: completeness, binding, tampering."""

import hashlib

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from blindscore.commitments import (
    PAD_LEAF,
    MerklePath,
    commit,
    decode_commitment,
    decode_path,
    decode_root,
    encode_commitment,
    encode_path,
    encode_root,
    leaf_hash,
    mt_commit,
    mt_open,
    mt_verify,
    open_com,
    setup_com,
)
from blindscore.errors import EmptyInput, IndexOutOfRange, MalformedMessage, UnsupportedLevel
from blindscore.rng import DetRng

PP = setup_com(128)


def test_setup_levels():
    assert setup_com(128).rand_len == 32
    pp256 = setup_com(256)
    assert pp256.rand_len == 32
    assert pp256.digest_len == 32
    with pytest.raises(UnsupportedLevel):
        setup_com(64)


def test_commit_open_completeness():
    rng = DetRng(b"t1")
    com, r = commit(PP, b"hello", rng)
    assert open_com(PP, com, b"hello", r)


def test_commit_fresh_randomness_gives_distinct_digests():
    rng = DetRng(b"t2")
    seen = set()
    for _ in range(10_000):
        com, _ = commit(PP, b"same message", rng)
        seen.add(com.digest)
    assert len(seen) == 10_000


def test_open_rejects_wrong_message_and_blinder():
    rng = DetRng(b"t3")
    com, r = commit(PP, b"payload", rng)
    assert not open_com(PP, com, b"payloae", r)
    bad_r = bytes([r[0] ^ 1]) + r[1:]
    assert not open_com(PP, com, b"payload", bad_r)
    assert not open_com(PP, com, b"payload", r[:-1])


def test_binding_spot_check_random_messages():
    rng = DetRng(b"t4")
    com, r = commit(PP, b"target", rng)
    for i in range(1000):
        other = f"candidate-{i}".encode()
        assert not open_com(PP, com, other, r)


def test_single_leaf_tree_pads_to_width_two():
    root, tree = mt_commit(PP, [b"only"])
    lh = leaf_hash(PP, 0, b"only")
    expect = hashlib.sha256(b"\x01" + lh + PAD_LEAF).digest()
    assert root.digest == expect
    assert tree.height == 1
    path = mt_open(PP, tree, 0)
    assert len(path.elements) == 1
    assert mt_verify(PP, root, 0, b"only", path)


def test_identical_leaves_have_distinct_hashes():
    assert leaf_hash(PP, 0, b"same") != leaf_hash(PP, 1, b"same")


def test_four_leaf_open_and_verify():
    leaves = [b"a", b"b", b"c", b"d"]
    root, tree = mt_commit(PP, leaves)
    path = mt_open(PP, tree, 2)
    assert mt_verify(PP, root, 2, b"c", path)


def test_empty_input_rejected():
    with pytest.raises(EmptyInput):
        mt_commit(PP, [])


def test_index_out_of_range():
    _, tree = mt_commit(PP, [b"a", b"b"])
    with pytest.raises(IndexOutOfRange):
        mt_open(PP, tree, 2)


@given(st.integers(min_value=1, max_value=64), st.integers(min_value=0, max_value=2**32))
@settings(max_examples=60, deadline=None)
def test_completeness_over_random_tree_shapes(n, seed):
    rng = DetRng(seed.to_bytes(8, "big"))
    leaves = [rng.take(5 + rng.randbelow(20)) for _ in range(n)]
    root, tree = mt_commit(PP, leaves)
    for i in range(n):
        assert mt_verify(PP, root, i, leaves[i], mt_open(PP, tree, i))


def test_path_at_wrong_index_rejected():
    leaves = [bytes([i]) * 4 for i in range(8)]
    root, tree = mt_commit(PP, leaves)
    path3 = mt_open(PP, tree, 3)
    assert not mt_verify(PP, root, 5, leaves[5], path3)
    # even reusing leaf 3's content at another index must fail
    assert not mt_verify(PP, root, 5, leaves[3], MerklePath(5, path3.elements))


def test_truncated_path_rejected():
    leaves = [bytes([i]) * 4 for i in range(8)]
    root, tree = mt_commit(PP, leaves)
    path = mt_open(PP, tree, 3)
    short = MerklePath(3, path.elements[:-1])
    assert not mt_verify(PP, root, 3, leaves[3], short)


def test_tampered_leaf_rejected():
    leaves = [bytes([i]) * 4 for i in range(8)]
    root, tree = mt_commit(PP, leaves)
    path = mt_open(PP, tree, 3)
    assert not mt_verify(PP, root, 3, b"\x99" * 4, path)


def test_flipped_side_bit_rejected():
    leaves = [bytes([i]) * 4 for i in range(4)]
    root, tree = mt_commit(PP, leaves)
    path = mt_open(PP, tree, 1)
    flipped = MerklePath(1, tuple((1 - s, d) for s, d in path.elements))
    assert not mt_verify(PP, root, 1, leaves[1], flipped)


def test_record_serialization_roundtrip():
    leaves = [bytes([i]) * 4 for i in range(5)]
    root, tree = mt_commit(PP, leaves)
    path = mt_open(PP, tree, 4)
    rng = DetRng(b"ser")
    com, _ = commit(PP, b"m", rng)
    assert decode_commitment(encode_commitment(com)) == com
    assert decode_root(encode_root(root)) == root
    assert decode_path(encode_path(path)) == path


def test_record_decoders_reject_garbage():
    rng = DetRng(b"ser2")
    com, _ = commit(PP, b"m", rng)
    enc = encode_commitment(com)
    for bad in [b"", enc[:-1], b"\x7f" + enc[1:], enc + b"\x00"]:
        with pytest.raises(MalformedMessage):
            decode_commitment(bad)
    root, tree = mt_commit(PP, [b"x", b"y"])
    p = encode_path(mt_open(PP, tree, 0))
    for bad in [p[:-1], b"\x7f" + p[1:], p + b"\x00"]:
        with pytest.raises(MalformedMessage):
            decode_path(bad)


def test_detrng_decoupled_streams():
    a = DetRng(b"seed", b"x")
    b = DetRng(b"seed", b"y")
    assert a.take(16) != b.take(16)
    c1 = DetRng(b"seed", b"x")
    assert DetRng(b"seed", b"x").take(16) == c1.take(16)


def test_detrng_sample_distinct_uniform_bounds():
    rng = DetRng(b"sample")
    for _ in range(200):
        got = rng.sample_distinct(10, 7)
        assert len(set(got)) == 7
        assert all(0 <= v < 10 for v in got)
    full = rng.sample_distinct(5, 5)
    assert sorted(full) == [0, 1, 2, 3, 4]
