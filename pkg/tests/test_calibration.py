import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gdekit.calibration import (
    cace_binned,
    cace_exact,
    cace_refined,
    class_aggregated_curve,
    class_wise_curve,
    ece_binned,
    max_classwise_deviation,
    top_class_curve,
)
from gdekit.core import (
    LabelVector,
    Population,
    PredictionMatrix,
    ProbabilityProfile,
    RandomSource,
    ensemble_from_predictions,
)
from gdekit.metrics import expected_disagreement, expected_test_error
from gdekit.theory import gen_random_population, uncalibrated_gde_population


def cace_oracle(pop, refined=False):
    """Independent enumeration of the class-aggregated calibration error.

    Walks (atom, class) pairs with plain dict grouping by confidence value;
    deliberately shares no code with the library implementation.
    """
    mass, hits = {}, {}
    for w, hhat, label in zip(pop.weights, pop.hhat, pop.label_dist):
        for k in range(pop.n_classes):
            q = float(hhat[k])
            mass[q] = mass.get(q, 0.0) + float(w)
            hits[q] = hits.get(q, 0.0) + float(w) * float(label[k])
    total = 0.0
    for q in mass:
        if mass[q] == 0.0:
            continue
        term = abs(hits[q] / mass[q] - q) * mass[q]
        if refined:
            term *= 1.0 - q
        total += term
    return total


def two_level_binary_population():
    return Population(
        weights=np.array([0.5, 0.5]),
        hhat=np.array([[0.3, 0.7], [0.8, 0.2]]),
        label_dist=np.array([[0.3, 0.7], [0.8, 0.2]]),
    )


class TestClassAggregatedCurve:
    def test_calibrated_population_bins_on_diagonal(self):
        curve = class_aggregated_curve(two_level_binary_population(), n_bins=10)
        assert curve.bins
        for b in curve.bins:
            assert b.accuracy == pytest.approx(b.mean_confidence, abs=1e-12)

    def test_uncalibrated_population_bin_at_02(self):
        curve = class_aggregated_curve(uncalibrated_gde_population(0.25, 0.0), n_bins=10)
        bin02 = next(b for b in curve.bins if b.lower <= 0.2 < b.upper)
        assert bin02.accuracy == 0.0
        assert bin02.mean_confidence == pytest.approx(0.2, abs=1e-15)

    def test_one_hot_correct_ensemble_single_top_bin(self):
        m = PredictionMatrix(np.array([[1, 1], [0, 0]]))
        y = LabelVector(np.array([1, 0]))
        curve = class_aggregated_curve(ensemble_from_predictions(m), y, n_bins=10)
        top = [b for b in curve.bins if b.upper == 1.0]
        assert top and top[0].accuracy == 1.0
        zero = [b for b in curve.bins if b.lower == 0.0]
        assert zero and zero[0].accuracy == 0.0

    def test_masses_sum_to_k(self):
        pop = gen_random_population(4, 17, RandomSource(0))
        curve = class_aggregated_curve(pop, n_bins=7)
        assert curve.total_mass == pytest.approx(4.0, abs=1e-12)

    def test_aggregated_is_massweighted_average_of_classwise(self):
        pop = gen_random_population(3, 11, RandomSource(5))
        agg = class_aggregated_curve(pop, n_bins=10)
        per_class = [class_wise_curve(pop, k=k, n_bins=10) for k in range(3)]
        for b in agg.bins:
            mass_k = hits_k = 0.0
            for c in per_class:
                match = [cb for cb in c.bins if cb.lower == b.lower]
                if match:
                    mass_k += match[0].mass
                    hits_k += match[0].hits
            assert mass_k == pytest.approx(b.mass, abs=1e-12)
            assert hits_k == pytest.approx(b.hits, abs=1e-12)


class TestClassWiseCurve:
    def test_classwise_calibrated_population(self):
        pop = two_level_binary_population()
        for k in range(2):
            for b in class_wise_curve(pop, k=k, n_bins=10).bins:
                assert b.accuracy == pytest.approx(b.mean_confidence, abs=1e-12)

    def test_uncalibrated_class0_bin_at_01(self):
        curve = class_wise_curve(uncalibrated_gde_population(0.25, 0.0), k=0, n_bins=10)
        bin01 = next(b for b in curve.bins if b.lower <= 0.1 < b.upper)
        assert bin01.accuracy == pytest.approx(0.25, abs=1e-15)

    def test_binary_mirror_symmetry(self):
        pop = two_level_binary_population()
        c0 = class_wise_curve(pop, k=0, n_bins=10)
        c1 = class_wise_curve(pop, k=1, n_bins=10)
        # class 1 confidences are 1 - class 0 confidences, so bins mirror
        for b in c0.bins:
            mirrored = [m for m in c1.bins if m.mean_confidence == pytest.approx(1 - b.mean_confidence, abs=1e-12)]
            assert mirrored and mirrored[0].mass == pytest.approx(b.mass, abs=1e-12)

    def test_classwise_masses_sum_to_one(self):
        pop = gen_random_population(5, 9, RandomSource(2))
        assert class_wise_curve(pop, k=3, n_bins=10).total_mass == pytest.approx(1.0, abs=1e-12)


class TestCaceExact:
    def test_calibrated_population_zero(self):
        assert cace_exact(two_level_binary_population()) <= 1e-15

    def test_uncalibrated_gde_value(self):
        pop = uncalibrated_gde_population(0.25, 0.0)
        assert cace_exact(pop) == pytest.approx(0.35, abs=1e-12)
        assert cace_exact(pop) == pytest.approx(cace_oracle(pop), abs=1e-15)

    def test_uniform_binary_ensemble_pinned(self):
        # with both classes at q = 0.5, the aggregated accuracy is 1/2 for any
        # labels, so the aggregated error is identically 0 in the binary case
        for label in ([1.0, 0.0], [0.3, 0.7], [0.0, 1.0]):
            pop = Population(np.array([1.0]), np.array([[0.5, 0.5]]), np.array([label]))
            assert cace_exact(pop) <= 1e-15

    def test_confidently_wrong_reaches_k(self):
        pop = Population(np.array([1.0]), np.array([[1.0, 0.0]]), np.array([[0.0, 1.0]]))
        assert cace_exact(pop) == 2.0  # the K upper end of the range

    def test_half_wrong_gives_one(self):
        pop = Population(np.array([1.0]), np.array([[1.0, 0.0]]), np.array([[0.5, 0.5]]))
        assert cace_exact(pop) == pytest.approx(1.0, abs=1e-15)

    @given(st.integers(0, 2**32))
    @settings(max_examples=80, deadline=None)
    def test_matches_oracle_and_range(self, seed):
        rng = np.random.default_rng(seed)
        pop = gen_random_population(int(rng.integers(2, 6)), int(rng.integers(1, 20)), RandomSource(seed))
        val = cace_exact(pop)
        assert val == pytest.approx(cace_oracle(pop), abs=1e-12)
        assert 0.0 <= val <= pop.n_classes


class TestCaceRefined:
    def test_uncalibrated_gde_value(self):
        # per-atom: sum of mass * |acc - q| * (1 - q) over q in {.1,.2,.8,.9}
        pop = uncalibrated_gde_population(0.25, 0.0)
        oracle = (
            0.5 * 0.15 * 0.9 + 0.5 * 0.2 * 0.8 + 0.5 * 0.2 * 0.2 + 0.5 * 0.15 * 0.1
        )
        assert oracle == pytest.approx(0.175, abs=1e-15)
        assert cace_refined(pop) == pytest.approx(oracle, abs=1e-12)
        assert cace_refined(pop) == pytest.approx(cace_oracle(pop, refined=True), abs=1e-15)

    def test_one_hot_correct_zero(self):
        m = PredictionMatrix(np.array([[1, 1], [0, 0]]))
        y = LabelVector(np.array([1, 0]))
        assert cace_refined(ensemble_from_predictions(m), y) == 0.0

    @given(st.integers(0, 2**32))
    @settings(max_examples=80, deadline=None)
    def test_refined_below_unrefined(self, seed):
        rng = np.random.default_rng(seed)
        pop = gen_random_population(int(rng.integers(2, 6)), int(rng.integers(1, 20)), RandomSource(seed))
        assert cace_refined(pop) <= cace_exact(pop) + 1e-15


class TestCaceBinned:
    def test_one_hot_correct_zero(self):
        m = PredictionMatrix(np.array([[1, 1], [0, 0]]))
        y = LabelVector(np.array([1, 0]))
        assert cace_binned(ensemble_from_predictions(m), y) == 0.0

    def test_matches_exact_when_bins_isolate_atoms(self):
        # every confidence value sits in its own bin, so binning loses nothing
        pop = uncalibrated_gde_population(0.25, 0.0)
        assert cace_binned(pop, n_bins=10) == pytest.approx(cace_exact(pop), abs=1e-12)

    def test_fine_bins_recover_exact_on_gridded_atoms(self):
        n_bins = 64
        qs = np.array([(2 * i + 1) / (2 * n_bins) for i in (3, 17, 40)])  # bin centers
        hhat = np.stack([qs, 1.0 - qs], axis=1)
        label = np.array([[0.9, 0.1], [0.2, 0.8], [0.55, 0.45]])
        pop = Population(np.full(3, 1 / 3), hhat, label)
        assert cace_binned(pop, n_bins=n_bins) == pytest.approx(cace_exact(pop), abs=1e-13)

    def test_sampled_estimator_converges(self):
        pop = uncalibrated_gde_population(0.25, 0.0)
        profile, labels = pop.sample(100_000, RandomSource(17))
        assert abs(cace_binned(profile, labels, 10) - cace_exact(pop)) < 0.02


class TestEceBinned:
    def test_one_hot_correct_zero(self):
        m = PredictionMatrix(np.array([[1, 1], [0, 0]]))
        y = LabelVector(np.array([1, 0]))
        assert ece_binned(ensemble_from_predictions(m), y) == 0.0

    def test_uniform_binary_balanced_labels(self):
        # argmax ties break to class 0; its confidence is 0.5 and accuracy 0.5
        profile = ProbabilityProfile(np.full((10, 2), 0.5))
        y = LabelVector(np.array([0, 1] * 5))
        assert ece_binned(profile, y) == pytest.approx(0.0, abs=1e-15)

    def test_tie_breaks_to_lowest_class(self):
        profile = ProbabilityProfile(np.full((4, 2), 0.5))
        curve = top_class_curve(profile, LabelVector(np.array([0, 0, 0, 0])))
        assert len(curve.bins) == 1
        assert curve.bins[0].accuracy == 1.0  # all labels equal the tie-broken class 0

    def test_bounded_by_one_and_masses_sum_to_one(self):
        rng = np.random.default_rng(8)
        probs = rng.dirichlet(np.ones(4), size=50)
        y = LabelVector(rng.integers(0, 4, size=50))
        profile = ProbabilityProfile(probs)
        assert ece_binned(profile, y) <= 1.0
        assert top_class_curve(profile, y).total_mass == pytest.approx(1.0, abs=1e-12)


class TestDeviationBoundOnRandomPopulations:
    @given(st.integers(0, 2**32))
    @settings(max_examples=100, deadline=None)
    def test_gap_bounded_by_both_errors(self, seed):
        rng = np.random.default_rng(seed)
        pop = gen_random_population(int(rng.integers(2, 7)), int(rng.integers(1, 30)), RandomSource(seed))
        gap = abs(expected_test_error(pop) - expected_disagreement(pop))
        assert gap <= cace_exact(pop) + 1e-12
        assert gap <= cace_refined(pop) + 1e-12


class TestMaxClasswiseDeviation:
    def test_calibrated_is_zero(self):
        assert max_classwise_deviation(two_level_binary_population()) <= 1e-15

    def test_uncalibrated_gde_deviation(self):
        # class 0 at q = 0.1 has conditional accuracy 0.25, at 0.2 it has 0
        assert max_classwise_deviation(uncalibrated_gde_population(0.25, 0.0)) == pytest.approx(
            0.2, abs=1e-12
        )
