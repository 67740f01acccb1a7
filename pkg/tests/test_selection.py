"""Selection: k-center oracle equivalence, coverage semantics, projection."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from blindscore.errors import (
    DomainError,
    EmptyComplement,
    EmptyInput,
    KTooLarge,
    MalformedMessage,
    RowTooShort,
    ShapeMismatch,
)
from blindscore.fixedpoint import ONE, FixedTensor, raw_mul
from blindscore.selection import (
    Dataset,
    ProjectionMatrix,
    RepresentativeSet,
    coin_flip_seed,
    jl_project,
    k_center_greedy,
    min_distances_raw,
    percentile_distance,
    representativeness,
)


def tensor(rows):
    return FixedTensor.from_raw(np.asarray(rows, dtype=np.int64))


def brute_k_center(rows, k):
    """Reference greedy with Python ints and first-max tie-breaking."""
    n = len(rows)

    def sqd(a, b):
        return sum((int(u) - int(v)) ** 2 for u, v in zip(a, b))

    chosen = [0]
    mind = [sqd(r, rows[0]) for r in rows]
    mind[0] = -1
    for _ in range(k - 1):
        best, bv = 0, -2
        for i in range(n):
            if mind[i] > bv:
                best, bv = i, mind[i]
        chosen.append(best)
        for i in range(n):
            mind[i] = min(mind[i], sqd(rows[i], rows[best]))
        mind[best] = -1
    return chosen


points_strategy = st.integers(1, 5).flatmap(
    lambda width: st.lists(
        st.lists(st.integers(-(1 << 20), 1 << 20), min_size=width, max_size=width),
        min_size=2,
        max_size=25,
    )
)


class TestKCenter:
    @settings(max_examples=60, deadline=None)
    @given(points_strategy, st.data())
    def test_matches_bruteforce(self, rows, data):
        k = data.draw(st.integers(1, len(rows)))
        got = k_center_greedy(tensor(rows), k)
        assert list(got.indices) == brute_k_center(rows, k)
        assert got.parent_n == len(rows) and got.k == k

    def test_duplicates_yield_distinct_indices(self):
        feats = tensor([[5, 5]] * 4)
        assert k_center_greedy(feats, 3).indices == (0, 1, 2)

    def test_farthest_point_first(self):
        feats = tensor([[0, 0], [ONE, 0], [10 * ONE, 0], [2 * ONE, 0]])
        assert k_center_greedy(feats, 2).indices == (0, 2)

    def test_k_bounds(self):
        feats = tensor([[0], [ONE]])
        for bad in (0, 3, -1):
            with pytest.raises(KTooLarge):
                k_center_greedy(feats, bad)
        with pytest.raises(EmptyInput):
            k_center_greedy(FixedTensor.from_raw(np.zeros((0, 3), dtype=np.int64)), 1)
        with pytest.raises(ShapeMismatch):
            k_center_greedy(FixedTensor.from_raw(np.zeros(4, dtype=np.int64)), 1)

    def test_representative_set_validation(self):
        with pytest.raises(DomainError):
            RepresentativeSet((0, 0), 3)
        with pytest.raises(DomainError):
            RepresentativeSet((0, 5), 3)


class TestCoverage:
    def line(self):
        # rows at 0, 1, 2, 10 on a line (Q16.16)
        return tensor([[0], [ONE], [2 * ONE], [10 * ONE]])

    def test_outlier_counting(self):
        rep = RepresentativeSet((0,), 4)
        holds, outliers = representativeness(self.line(), rep, 2 * ONE, 0.25)
        assert holds and outliers == 1  # only the point at 10 is uncovered
        holds, outliers = representativeness(self.line(), rep, 2 * ONE, 0.2)
        assert not holds and outliers == 1

    def test_boundary_distance_is_covered(self):
        rep = RepresentativeSet((0,), 4)
        _, outliers = representativeness(self.line(), rep, ONE, 0.5)
        assert outliers == 2  # the row exactly at distance ONE counts as covered

    def test_floor_isqrt_distances(self):
        feats = tensor([[0, 0], [ONE, ONE]])
        rep = RepresentativeSet((0,), 2)
        dists = min_distances_raw(feats, rep)
        assert list(dists) == [math.isqrt(2 * ONE * ONE)] == [92681]

    def test_percentile_nearest_rank(self):
        feats = tensor([[0], [ONE], [2 * ONE], [3 * ONE], [4 * ONE]])
        rep = RepresentativeSet((0,), 5)
        expect = {0.0: 4 * ONE, 0.25: 3 * ONE, 0.5: 2 * ONE, 0.75: ONE}
        for delta, want in expect.items():
            assert percentile_distance(feats, rep, delta) == want

    def test_percentile_empty_complement(self):
        feats = tensor([[0], [ONE]])
        with pytest.raises(EmptyComplement):
            percentile_distance(feats, RepresentativeSet((0, 1), 2), 0.0)
        with pytest.raises(DomainError):
            percentile_distance(feats, RepresentativeSet((0,), 2), 1.0)

    @settings(max_examples=40, deadline=None)
    @given(points_strategy, st.data())
    def test_derived_radius_always_covers(self, rows, data):
        k = data.draw(st.integers(1, len(rows) - 1))
        delta = data.draw(st.sampled_from([0, 0.125, 0.25, 0.5]))
        feats = tensor(rows)
        rep = k_center_greedy(feats, k)
        d = percentile_distance(feats, rep, delta)
        holds, _ = representativeness(feats, rep, d, delta)
        assert holds

    def test_radius_zero_with_duplicate_rows(self):
        feats = tensor([[7, 7], [7, 7], [7, 7]])
        rep = RepresentativeSet((0,), 3)
        assert percentile_distance(feats, rep, 0.0) == 0
        assert representativeness(feats, rep, 0, 0)[0]


class TestProjection:
    def test_magnitude_values(self):
        assert ProjectionMatrix(b"s", 64, 100).mag_raw == 8192
        assert ProjectionMatrix(b"s", 1, 10).mag_raw == 65536
        assert ProjectionMatrix(b"s", 3, 10).mag_raw == 37837

    def test_signs_shape_and_determinism(self):
        pm = ProjectionMatrix(b"seed", 16, 32)
        s1, s2 = pm.signs(), ProjectionMatrix(b"seed", 16, 32).signs()
        assert s1.shape == (16, 32)
        assert set(np.unique(s1)) <= {-1, 1}
        assert np.array_equal(s1, s2)
        assert not np.array_equal(s1, ProjectionMatrix(b"other", 16, 32).signs())

    def test_sign_balance(self):
        s = ProjectionMatrix(b"balance", 64, 128).signs()
        assert abs(float(s.mean())) < 0.05

    def test_project_matches_scalar_oracle(self):
        pm = ProjectionMatrix(b"oracle", 8, 6)
        rng = np.random.Generator(np.random.PCG64(7))
        feats = FixedTensor.from_raw(rng.integers(-3 * ONE, 3 * ONE, size=(5, 6)))
        signs = pm.signs()
        got = jl_project(feats, pm)
        for i in range(5):
            for j in range(8):
                acc = sum(int(signs[j, t]) * int(feats.raw[i, t]) for t in range(6))
                assert got.raw[i, j] == raw_mul(acc, pm.mag_raw)

    def test_project_shape_mismatch(self):
        pm = ProjectionMatrix(b"s", 4, 7)
        with pytest.raises(ShapeMismatch):
            jl_project(tensor([[0, 0]]), pm)

    def test_distance_sketch_quality(self):
        rng = np.random.Generator(np.random.PCG64(11))
        feats = FixedTensor.from_raw(rng.integers(-2 * ONE, 2 * ONE, size=(30, 256)))
        proj = jl_project(feats, ProjectionMatrix(b"quality", 64, 256))
        errs = []
        for i in range(30):
            for j in range(i + 1, 30):
                d0 = math.sqrt(float(((feats.raw[i] - feats.raw[j]) ** 2).sum()))
                d1 = math.sqrt(float(((proj.raw[i] - proj.raw[j]) ** 2).sum()))
                errs.append(abs(d1 - d0) / d0)
        errs = np.asarray(errs)
        assert float(np.median(errs)) < 0.15
        assert float(errs.max()) < 0.6

    def test_coin_flip_seed(self):
        a, b = bytes(32), bytes(range(32))
        s = coin_flip_seed(a, b)
        assert len(s) == 32
        assert s == coin_flip_seed(a, b)
        assert s != coin_flip_seed(b, a)
        with pytest.raises(DomainError):
            coin_flip_seed(b"short", b)


class TestDataset:
    def sample(self):
        rows = [[0.5, -1.25, 2.0], [1.0, 0.0, -0.5], [0.25, 0.75, 1.5]]
        return Dataset.from_float_rows(rows, [0, 2, 1], num_classes=3)

    def test_roundtrip_bytes(self):
        ds = self.sample()
        back = Dataset.from_bytes(ds.to_bytes())
        assert np.array_equal(back.features.raw, ds.features.raw)
        assert back.labels == ds.labels and back.num_classes == 3
        assert back.to_bytes() == ds.to_bytes()

    def test_file_roundtrip(self, tmp_path):
        ds = self.sample()
        p = tmp_path / "data.fxd"
        ds.save(p)
        back = Dataset.load(p)
        assert back.to_bytes() == ds.to_bytes()

    def test_from_bytes_rejects_garbage(self):
        ds = self.sample()
        with pytest.raises(MalformedMessage):
            Dataset.from_bytes(b"JUNK" + ds.to_bytes()[4:])
        with pytest.raises(MalformedMessage):
            Dataset.from_bytes(ds.to_bytes()[:-4])

    def test_csv_import(self, tmp_path):
        p = tmp_path / "rows.csv"
        p.write_text("f0,f1,label\n0.5,1.5,0\n-0.25,0.75,1\n")
        ds = Dataset.from_csv(p)
        assert ds.n == 2 and ds.dim == 2 and ds.num_classes == 2
        assert ds.labels == (0, 1)
        assert ds.features.raw[0, 0] == ONE // 2

    def test_csv_errors(self, tmp_path):
        short = tmp_path / "short.csv"
        short.write_text("0.5,1\n7\n")
        with pytest.raises(RowTooShort):
            Dataset.from_csv(short)
        ragged = tmp_path / "ragged.csv"
        ragged.write_text("0.5,1.5,0\n0.25,1\n")
        with pytest.raises(ShapeMismatch):
            Dataset.from_csv(ragged)
        empty = tmp_path / "empty.csv"
        empty.write_text("f0,f1,label\n")
        with pytest.raises(EmptyInput):
            Dataset.from_csv(empty)

    def test_label_validation(self):
        with pytest.raises(DomainError):
            Dataset.from_float_rows([[0.0]], [5], num_classes=3)
        with pytest.raises(ShapeMismatch):
            Dataset.from_float_rows([[0.0], [1.0]], [0], num_classes=1)

    def test_subset(self):
        ds = self.sample()
        sub = ds.subset([2, 0])
        assert sub.n == 2 and sub.labels == (1, 0)
        assert np.array_equal(sub.features.raw[0], ds.features.raw[2])
