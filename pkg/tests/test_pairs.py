import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from pairq.data import DMOS
from pairq.pairs import (PairSample, combine, load_pairs, sample_pairs, save_pairs,
                         std_normal_cdf, thurstone_probability, uncertainty_label)

from conftest import make_database
from oracles import phi_highprec

finite_mu = st.floats(-1e4, 1e4)
finite_sigma = st.floats(0.0, 1e3)


class TestStdNormalCdf:
    def test_zero_is_half(self):
        assert std_normal_cdf(0.0) == 0.5

    def test_one_matches_highprec_oracle(self):
        # frozen from the arbitrary-precision oracle
        assert std_normal_cdf(1.0) == pytest.approx(0.8413447460685429, abs=1e-9)
        assert std_normal_cdf(1.0) == pytest.approx(phi_highprec(1.0), abs=1e-7)

    @given(st.floats(-8, 8))
    def test_symmetry(self, z):
        assert std_normal_cdf(z) + std_normal_cdf(-z) == pytest.approx(1.0, abs=1e-12)

    def test_monotone_on_grid(self):
        grid = np.linspace(-8, 8, 2001)
        values = std_normal_cdf(grid)
        assert np.all(np.diff(values) >= 0.0)

    def test_against_oracle_grid(self):
        for z in np.linspace(-6, 6, 500):
            assert abs(std_normal_cdf(float(z)) - phi_highprec(float(z))) <= 1e-7

    def test_rejects_nan(self):
        with pytest.raises(ValueError):
            std_normal_cdf(float("nan"))


class TestThurstoneProbability:
    def test_equal_means(self):
        assert thurstone_probability(50.0, 5.0, 50.0, 5.0) == 0.5

    def test_unit_z_score(self):
        # 6^2 + 8^2 = 100, so the standardized difference is exactly 1
        assert thurstone_probability(60.0, 6.0, 50.0, 8.0) == pytest.approx(
            0.8413447460685429, abs=1e-9)

    def test_zero_variance_step(self):
        assert thurstone_probability(70.0, 0.0, 50.0, 0.0) == 1.0
        assert thurstone_probability(50.0, 0.0, 70.0, 0.0) == 0.0
        assert thurstone_probability(50.0, 0.0, 50.0, 0.0) == 0.5

    def test_negative_sigma_rejected(self):
        with pytest.raises(ValueError):
            thurstone_probability(0.0, -1.0, 0.0, 1.0)

    @given(finite_mu, finite_sigma, finite_mu, finite_sigma)
    def test_antisymmetry(self, mx, sx, my, sy):
        p = thurstone_probability(mx, sx, my, sy)
        q = thurstone_probability(my, sy, mx, sx)
        assert abs(p + q - 1.0) <= 1e-12

    @given(finite_mu, st.floats(0.1, 100), finite_sigma.filter(lambda s: s > 0),
           st.floats(0.1, 1e3))
    def test_scale_equivariance(self, mx, sx, my, k):
        sy = 2.0 * sx
        p = thurstone_probability(mx, sx, my, sy)
        pk = thurstone_probability(k * mx, k * sx, k * my, k * sy)
        assert abs(p - pk) <= 1e-12

    def test_monotone_in_mu_x(self):
        grid = np.linspace(-5, 5, 101)
        values = [thurstone_probability(m, 1.0, 0.0, 2.0) for m in grid]
        assert all(b > a for a, b in zip(values, values[1:]))


class TestUncertaintyLabel:
    def test_definition(self):
        assert uncertainty_label(3.0, 2.0) == 1
        assert uncertainty_label(2.0, 3.0) == -1

    def test_tie_is_plus_one(self):
        assert uncertainty_label(2.0, 2.0) == 1


class TestSamplePairs:
    def test_pool_of_two_forces_the_single_pair(self):
        db = make_database(n=2)
        pairs = sample_pairs(db, db.ids(), 3, seed=0)
        assert len(pairs) == 3
        assert all({p.x_id, p.y_id} == db.ids() for p in pairs)
        expected_p = {
            (pairs[0].x_id, pairs[0].y_id): pairs[0].p for _ in range(1)}
        for p in pairs:
            # consistent p and t for the same orientation
            if (p.x_id, p.y_id) in expected_p:
                assert p.p == expected_p[(p.x_id, p.y_id)]

    def test_deterministic(self, small_db):
        a = sample_pairs(small_db, small_db.ids(), 50, seed=3)
        b = sample_pairs(small_db, small_db.ids(), 50, seed=3)
        assert a == b

    def test_within_pool_only(self, small_db):
        pool = frozenset(sorted(small_db.ids())[:4])
        pairs = sample_pairs(small_db, pool, 100, seed=0)
        for p in pairs:
            assert p.x_id in pool and p.y_id in pool and p.x_id != p.y_id

    def test_uniform_over_unordered_pairs(self):
        db = make_database(n=100)
        n = 10_000
        pairs = sample_pairs(db, db.ids(), n, seed=11)
        target = frozenset({"demo-000", "demo-001"})
        count = sum(1 for p in pairs if {p.x_id, p.y_id} == target)
        n_pairs = 100 * 99 // 2
        expect = n / n_pairs
        bound = 5.0 * math.sqrt(n * (1 / n_pairs) * (1 - 1 / n_pairs))
        assert abs(count - expect) <= bound

    def test_rejects_small_pool(self, small_db):
        with pytest.raises(ValueError, match="2 items"):
            sample_pairs(small_db, frozenset(list(small_db.ids())[:1]), 5, seed=0)

    def test_rejects_dmos(self):
        db = make_database(n=4, polarity=DMOS)
        with pytest.raises(ValueError, match="polarity"):
            sample_pairs(db, db.ids(), 5, seed=0)

    def test_labels_match_item_stats(self, small_db):
        item_map = small_db.item_map()
        for p in sample_pairs(small_db, small_db.ids(), 30, seed=5):
            x, y = item_map[p.x_id], item_map[p.y_id]
            assert p.p == thurstone_probability(x.mu, x.sigma, y.mu, y.sigma)
            assert p.t == uncertainty_label(x.sigma, y.sigma)


class TestCombine:
    def test_concatenation_and_counts(self, small_db):
        a = sample_pairs(small_db, small_db.ids(), 100, seed=0)
        other = make_database(n=5, db="other")
        b = sample_pairs(other, other.ids(), 50, seed=1)
        ts = combine([a, b], seeds={"demo": 0, "other": 1})
        assert len(ts) == 150
        assert ts.counts == {"demo": 100, "other": 50}

    def test_single_database_identity(self, small_db):
        a = sample_pairs(small_db, small_db.ids(), 10, seed=0)
        assert combine([a]).pairs == a

    def test_all_pairs_within_database(self, small_db):
        other = make_database(n=5, db="other")
        ts = combine([sample_pairs(small_db, small_db.ids(), 40, seed=0),
                      sample_pairs(other, other.ids(), 40, seed=1)])
        valid = {"demo": small_db.ids(), "other": other.ids()}
        for p in ts.pairs:
            assert p.x_id in valid[p.db] and p.y_id in valid[p.db]


class TestPairFile:
    def test_round_trip(self, small_db, tmp_path):
        ts = combine([sample_pairs(small_db, small_db.ids(), 25, seed=2)],
                     seeds={"demo": 2})
        path = tmp_path / "pairs.jsonl"
        save_pairs(ts, path)
        loaded = load_pairs(path)
        assert loaded.pairs == ts.pairs
        assert loaded.counts == ts.counts and loaded.seeds == ts.seeds

    def test_pair_validation(self):
        with pytest.raises(ValueError):
            PairSample(x_id="a", y_id="a", db="d", p=0.5, t=1)
        with pytest.raises(ValueError):
            PairSample(x_id="a", y_id="b", db="d", p=1.5, t=1)
        with pytest.raises(ValueError):
            PairSample(x_id="a", y_id="b", db="d", p=0.5, t=0)
