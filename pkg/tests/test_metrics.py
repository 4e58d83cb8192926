import numpy as np
import pytest

import retrocast as rc

from .oracles import average_ranks_oracle, spearman_oracle


class TestPointwiseErrors:
    def test_mse_hand_values(self):
        assert rc.mse([1.0, 2.0, 3.0], [1.0, 4.0, 3.0]) == pytest.approx(4.0 / 3.0)
        assert rc.mse(np.zeros((2, 3)), np.ones((2, 3))) == 1.0

    def test_mae_hand_values(self):
        assert rc.mae([1.0, -2.0], [0.0, 2.0]) == pytest.approx(2.5)
        assert rc.mae(np.full((3, 4), 2.0), np.zeros((3, 4))) == 2.0

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            rc.mse(np.zeros(3), np.zeros(4))
        with pytest.raises(ValueError):
            rc.mae(np.zeros((2, 2)), np.zeros(4))

    def test_zero_on_perfect_forecast(self):
        x = np.random.default_rng(0).normal(size=(5, 7))
        assert rc.mse(x, x) == 0.0
        assert rc.mae(x, x) == 0.0


class TestAverageRanks:
    def test_distinct_values(self):
        got = rc.average_ranks([30.0, 10.0, 20.0])
        assert got.tolist() == [3.0, 1.0, 2.0]

    def test_ties_share_mean_rank(self):
        got = rc.average_ranks([5.0, 1.0, 5.0, 1.0, 9.0])
        assert got.tolist() == [3.5, 1.5, 3.5, 1.5, 5.0]

    def test_matches_oracle_on_random_data(self):
        rng = np.random.default_rng(1)
        for _ in range(30):
            n = int(rng.integers(2, 40))
            # quantised draws force tie blocks of varied width
            a = np.round(rng.normal(size=n), 1)
            assert np.array_equal(rc.average_ranks(a), average_ranks_oracle(a))

    def test_all_equal(self):
        got = rc.average_ranks(np.full(4, 7.0))
        assert got.tolist() == [2.5, 2.5, 2.5, 2.5]

    def test_rejects_matrices(self):
        with pytest.raises(ValueError):
            rc.average_ranks(np.zeros((2, 2)))


class TestSpearman:
    def test_matches_oracle_on_100_random_columns(self):
        rng = np.random.default_rng(2)
        for trial in range(100):
            n = int(rng.integers(3, 60))
            x = rng.normal(size=n)
            y = rng.normal(size=n)
            if trial % 3 == 0:  # exercise tie handling too
                x = np.round(x, 1)
                y = np.round(y, 1)
            assert rc.spearman(x, y) == pytest.approx(spearman_oracle(x, y),
                                                      abs=1e-12)

    def test_monotone_transforms_score_one(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=25)
        assert rc.spearman(x, np.exp(x)) == pytest.approx(1.0, abs=1e-12)
        assert rc.spearman(x, -(x**3)) == pytest.approx(-1.0, abs=1e-12)

    def test_constant_column_scores_zero(self):
        x = np.arange(5.0)
        assert rc.spearman(x, np.full(5, 2.0)) == 0.0
        assert rc.spearman(np.full(5, 2.0), x) == 0.0

    def test_validation(self):
        with pytest.raises(ValueError):
            rc.spearman(np.zeros(3), np.zeros(4))
        with pytest.raises(ValueError):
            rc.spearman(np.zeros(1), np.zeros(1))
        with pytest.raises(ValueError):
            rc.spearman(np.zeros((2, 2)), np.zeros((2, 2)))
