import numpy as np
import pytest
import scipy.stats
from hypothesis import given, settings
from hypothesis import strategies as st

from gdekit.core import (
    LabelVector,
    Population,
    PredictionMatrix,
    RandomSource,
    ensemble_from_predictions,
)
from gdekit.errors import ClassRangeError, DegenerateError, SizeError
from gdekit.metrics import (
    bootstrap_std,
    bootstrap_std_of_mean,
    compute_gde_report,
    disagreement,
    expected_disagreement,
    expected_test_error,
    gde_gap,
    pairwise_disagreement,
    per_model_test_errors,
    scatter_stats,
)
from gdekit.metrics import test_error as model_error


def random_matrix(seed, n=20, m=4, k=3):
    rng = np.random.default_rng(seed)
    matrix = PredictionMatrix(rng.integers(0, k, size=(n, m)), n_classes=k)
    labels = LabelVector(rng.integers(0, k, size=n))
    return matrix, labels


class TestTestError:
    def test_perfect_predictions(self):
        m = PredictionMatrix(np.array([[0], [1], [2]]))
        y = LabelVector(np.array([0, 1, 2]))
        assert model_error(m, y, 0) == 0.0

    def test_one_of_two_wrong(self):
        m = PredictionMatrix(np.array([[0], [0]]), n_classes=2)
        y = LabelVector(np.array([0, 1]))
        assert model_error(m, y, 0) == 0.5

    def test_alignment_is_by_id(self):
        m = PredictionMatrix(np.array([[0], [1]]), point_ids=("a", "b"))
        y = LabelVector(np.array([1, 0]), point_ids=("b", "a"))
        assert model_error(m, y, 0) == 0.0

    def test_label_outside_class_range(self):
        m = PredictionMatrix(np.array([[0], [1]]), n_classes=2)
        with pytest.raises(ClassRangeError):
            model_error(m, LabelVector(np.array([0, 5])), 0)

    def test_bad_model_index(self):
        m, y = random_matrix(0)
        with pytest.raises(IndexError):
            model_error(m, y, 99)

    def test_hard_points_error_rate(self):
        # hypotheses picking uniformly at random among K=10 classes err at 9/10
        rng = np.random.default_rng(7)
        n = 200_000
        m = PredictionMatrix(rng.integers(0, 10, size=(n, 1)), n_classes=10)
        y = LabelVector(rng.integers(0, 10, size=n))
        assert abs(model_error(m, y, 0) - 0.9) < 3 * np.sqrt(0.9 * 0.1 / n)


class TestDisagreement:
    def test_identical_columns(self):
        m = PredictionMatrix(np.array([[1, 1], [0, 0]]))
        assert disagreement(m, 0, 1) == 0.0

    def test_complementary_columns(self):
        m = PredictionMatrix(np.array([[0, 1], [1, 0]]))
        assert disagreement(m, 0, 1) == 1.0

    def test_symmetry_and_index_errors(self):
        m, _ = random_matrix(1)
        assert disagreement(m, 0, 2) == disagreement(m, 2, 0)
        with pytest.raises(IndexError):
            disagreement(m, 0, 0)
        with pytest.raises(IndexError):
            disagreement(m, 0, 9)

    def test_independent_uniform_ten_class_rate(self):
        # oracle: two independent uniform draws agree w.p. sum_k 1/K^2 = 1/K
        k, n = 10, 200_000
        expected = sum((1 / k) * (1 - 1 / k) for _ in range(k))
        rng = np.random.default_rng(11)
        m = PredictionMatrix(rng.integers(0, k, size=(n, 2)), n_classes=k)
        assert abs(disagreement(m, 0, 1) - expected) < 3 * np.sqrt(0.09 / n)

    @given(st.integers(0, 2**32))
    @settings(max_examples=40, deadline=None)
    def test_triangle_inequality(self, seed):
        m, y = random_matrix(seed)
        for i in range(m.n_models):
            for j in range(i + 1, m.n_models):
                d = disagreement(m, i, j)
                assert 0.0 <= d <= model_error(m, y, i) + model_error(m, y, j) + 1e-15


class TestPairwiseDisagreement:
    def test_two_models_mean_is_single_pair(self):
        m, _ = random_matrix(2, m=2)
        pd = pairwise_disagreement(m)
        assert pd.mean_over_pairs == disagreement(m, 0, 1)

    def test_identical_columns_zero_matrix(self):
        m = PredictionMatrix(np.tile(np.array([[0], [1], [2]]), (1, 3)))
        pd = pairwise_disagreement(m)
        np.testing.assert_array_equal(pd.matrix, np.zeros((3, 3)))

    def test_mean_over_known_pair_rates(self):
        # 10 points engineered so the three pair rates are 0.1, 0.2, 0.3
        cols = np.zeros((10, 3), dtype=int)
        cols[0] = (0, 1, 0)   # models 0/1 and 1/2 differ
        cols[1] = (0, 0, 1)   # models 0/2 and 1/2 differ
        cols[2] = (0, 0, 1)
        m = PredictionMatrix(cols)
        pd = pairwise_disagreement(m)
        assert pd.matrix[0, 1] == 0.1 and pd.matrix[0, 2] == 0.2 and pd.matrix[1, 2] == 0.3
        assert abs(pd.mean_over_pairs - 0.2) < 1e-15

    def test_single_model_rejected(self):
        with pytest.raises(SizeError):
            pairwise_disagreement(PredictionMatrix(np.array([[0], [1]])))


class TestExpectedRates:
    def test_one_hot_correct_profile_zero_error(self):
        m = PredictionMatrix(np.array([[0, 0], [1, 1]]))
        y = LabelVector(np.array([0, 1]))
        assert expected_test_error(ensemble_from_predictions(m), y) == 0.0
        assert expected_disagreement(ensemble_from_predictions(m)) == 0.0

    def test_two_level_set_binary_population(self):
        # calibrated level sets at q = 0.3 and 0.8: ETE = mean of 2q(1-q) = 0.37
        pop = Population(
            weights=np.array([0.5, 0.5]),
            hhat=np.array([[0.3, 0.7], [0.8, 0.2]]),
            label_dist=np.array([[0.3, 0.7], [0.8, 0.2]]),
        )
        assert expected_test_error(pop) == pytest.approx(0.37, abs=1e-12)
        assert expected_disagreement(pop) == pytest.approx(0.37, abs=1e-12)

    def test_uniform_rows_ten_classes(self):
        prof = ensemble_from_predictions(
            PredictionMatrix(np.tile(np.arange(10), (4, 1)), n_classes=10)
        )
        assert expected_disagreement(prof) == pytest.approx(0.9, abs=1e-12)

    def test_population_rejects_extra_labels(self):
        pop = Population(np.array([1.0]), np.array([[0.5, 0.5]]), np.array([[1.0, 0.0]]))
        with pytest.raises(TypeError):
            expected_test_error(pop, LabelVector(np.array([0])))

    @given(st.integers(0, 2**32), st.integers(1, 5), st.integers(1, 20), st.integers(2, 4))
    @settings(max_examples=60, deadline=None)
    def test_ete_is_mean_of_per_model_errors(self, seed, n_models, n, k):
        rng = np.random.default_rng(seed)
        m = PredictionMatrix(rng.integers(0, k, size=(n, n_models)), n_classes=k)
        y = LabelVector(rng.integers(0, k, size=n))
        ete = expected_test_error(ensemble_from_predictions(m), y)
        assert abs(ete - per_model_test_errors(m, y).mean()) <= 1e-12

    @given(st.integers(0, 2**32), st.integers(2, 5), st.integers(1, 20), st.integers(2, 4))
    @settings(max_examples=60, deadline=None)
    def test_edr_is_ordered_pair_mean(self, seed, n_models, n, k):
        rng = np.random.default_rng(seed)
        m = PredictionMatrix(rng.integers(0, k, size=(n, n_models)), n_classes=k)
        # brute-force mean over ordered pairs including i = j
        total = 0.0
        for i in range(n_models):
            for j in range(n_models):
                total += np.mean(m.labels[:, i] != m.labels[:, j])
        ordered_mean = total / n_models**2
        edr = expected_disagreement(ensemble_from_predictions(m))
        assert abs(edr - ordered_mean) <= 1e-12
        unordered = pairwise_disagreement(m).mean_over_pairs
        assert abs(edr - (n_models - 1) / n_models * unordered) <= 1e-12


class TestGdeGap:
    def test_values(self):
        assert gde_gap(0.25, 0.25) == 0.0
        assert gde_gap(0.336, 0.348) == pytest.approx(0.012, abs=1e-12)
        assert gde_gap(0.0, 1.0) == 1.0

    def test_range_check(self):
        with pytest.raises(ValueError):
            gde_gap(-0.1, 0.5)


class TestBootstrapStd:
    def test_constant_metric_zero(self):
        assert bootstrap_std(lambda idx: 1.0, 50, 100, RandomSource(0)) == 0.0

    def test_deterministic_given_source(self):
        vals = np.random.default_rng(0).random(100)
        a = bootstrap_std_of_mean(vals, 200, RandomSource(9))
        b = bootstrap_std_of_mean(vals, 200, RandomSource(9))
        assert a == b

    def test_bernoulli_matches_analytic_std(self):
        # oracle: std of the mean of Bernoulli(1/2) over N points = sqrt(p(1-p)/N)
        n = 10_000
        vals = np.random.default_rng(3).integers(0, 2, size=n).astype(float)
        est = bootstrap_std_of_mean(vals, 1000, RandomSource(4))
        oracle = np.sqrt(0.25 / n)
        assert abs(est - oracle) / oracle < 0.2

    def test_invariant_under_point_permutation(self):
        vals = np.random.default_rng(1).random(64)
        perm = np.random.default_rng(2).permutation(64)
        permuted = vals[perm]
        inv = np.argsort(perm)
        # same per-resample index draws, indices mapped through the permutation
        a = bootstrap_std(lambda idx: float(vals[idx].mean()), 64, 300, RandomSource(5))
        b = bootstrap_std(lambda idx: float(permuted[inv[idx]].mean()), 64, 300, RandomSource(5))
        assert a == b

    def test_too_few_resamples(self):
        with pytest.raises(SizeError):
            bootstrap_std(lambda idx: 0.0, 10, 1, RandomSource(0))


class TestScatterStats:
    def test_perfect_monotone(self):
        s = scatter_stats([0.1, 0.2, 0.3], [0.1, 0.2, 0.3])
        assert s.r_squared == pytest.approx(1.0, abs=1e-12)
        assert s.kendall_tau == 1.0

    def test_perfect_anti_monotone(self):
        s = scatter_stats([0.1, 0.2, 0.3], [0.9, 0.8, 0.7])
        assert s.r_squared == pytest.approx(1.0, abs=1e-12)
        assert s.kendall_tau == -1.0

    def test_tau_brute_force_oracle(self):
        xs, ys = (1.0, 2.0, 3.0), (1.0, 3.0, 2.0)
        concordant = discordant = 0
        for i in range(3):
            for j in range(i + 1, 3):
                s = (xs[i] - xs[j]) * (ys[i] - ys[j])
                concordant += s > 0
                discordant += s < 0
        expected = (concordant - discordant) / 3
        assert expected == pytest.approx(1 / 3)
        assert scatter_stats(xs, ys).kendall_tau == pytest.approx(expected, abs=1e-15)

    def test_ties_count_as_neither(self):
        s = scatter_stats([1.0, 1.0, 2.0], [1.0, 2.0, 3.0])
        # only the two untied pairs contribute, both concordant: tau = 2/3
        assert s.kendall_tau == pytest.approx(2 / 3, abs=1e-15)

    def test_matches_scipy_without_ties(self):
        rng = np.random.default_rng(12)
        xs = rng.random(40)
        ys = rng.random(40)
        s = scatter_stats(xs, ys)
        assert s.kendall_tau == pytest.approx(scipy.stats.kendalltau(xs, ys).statistic, abs=1e-12)
        assert s.r_squared == pytest.approx(scipy.stats.pearsonr(xs, ys).statistic ** 2, abs=1e-12)

    def test_constant_series_degenerate(self):
        with pytest.raises(DegenerateError):
            scatter_stats([0.5, 0.5], [0.1, 0.2])


class TestGdeReport:
    def test_gap_matches_means(self):
        m, y = random_matrix(4, n=60, m=5, k=3)
        rep = compute_gde_report(m, y, RandomSource(0), n_resamples=100)
        assert rep.gap == abs(rep.test_err_mean - rep.dis_mean)
        assert 0.0 <= rep.dis_mean <= 1.0
        assert rep.test_err_mean == pytest.approx(per_model_test_errors(m, y).mean())

    def test_without_labels(self):
        m, _ = random_matrix(5, m=3)
        rep = compute_gde_report(m, rng=RandomSource(0), n_resamples=100)
        assert rep.test_err_mean is None and rep.gap is None
        assert rep.bootstrap_std_dis > 0.0
