"""Test error, disagreement, their ensemble expectations, and scatter statistics.

The two empirical rates are fractions over test points: ``test_error``
compares one model column against labels, ``disagreement`` compares two model
columns against each other.  Their population-level counterparts
``expected_test_error`` and ``expected_disagreement`` are the exact closed
forms used by the theorem checks:

    ETE = E[1 - hhat_Y(X)]          EDR = E[sum_k hhat_k(X) (1 - hhat_k(X))]

and the equality of the two is the generalization disagreement equality.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .core import (
    LabelVector,
    Population,
    PredictionMatrix,
    ProbabilityProfile,
    RandomSource,
    align_labels,
    as_random_source,
)
from .errors import ClassRangeError, DegenerateError, SizeError


def _aligned_labels(ids, y, n_classes: int) -> np.ndarray:
    if isinstance(y, LabelVector):
        labels = align_labels(ids, y)
    else:
        labels = np.asarray(y, dtype=np.int64)
        if labels.shape != (len(ids),):
            raise SizeError(f"got {labels.shape[0]} labels for {len(ids)} points")
    if labels.max() >= n_classes:
        raise ClassRangeError(
            f"label {labels.max()} outside [0, {n_classes - 1}]"
        )
    return labels


def test_error(m: PredictionMatrix, y: LabelVector, model: int) -> float:
    """Fraction of points where ``model``'s prediction differs from the label."""
    if not 0 <= model < m.n_models:
        raise IndexError(f"model index {model} out of range [0, {m.n_models})")
    labels = _aligned_labels(m.point_ids, y, m.n_classes)
    return float(np.mean(m.labels[:, model] != labels))


def per_model_test_errors(m: PredictionMatrix, y: LabelVector) -> np.ndarray:
    """Test error of every model column, id-aligned once."""
    labels = _aligned_labels(m.point_ids, y, m.n_classes)
    return (m.labels != labels[:, None]).mean(axis=0)


def disagreement(m: PredictionMatrix, i: int, j: int) -> float:
    """Fraction of points where the predictions of models ``i`` and ``j`` differ.

    Symmetric in (i, j); this is the unlabeled-data estimator of test error.
    """
    for idx in (i, j):
        if not 0 <= idx < m.n_models:
            raise IndexError(f"model index {idx} out of range [0, {m.n_models})")
    if i == j:
        raise IndexError("disagreement requires two distinct model indices")
    return float(np.mean(m.labels[:, i] != m.labels[:, j]))


@dataclass(frozen=True)
class PairwiseDisagreement:
    """Symmetric M x M disagreement matrix with its unordered-pair mean."""

    matrix: np.ndarray
    mean_over_pairs: float

    @property
    def n_models(self) -> int:
        return self.matrix.shape[0]


def pairwise_disagreement(m: PredictionMatrix) -> PairwiseDisagreement:
    """Disagreement for every model pair plus the mean over unordered pairs."""
    mm = m.n_models
    if mm < 2:
        raise SizeError(f"pairwise disagreement needs at least 2 models, got {mm}")
    mat = np.zeros((mm, mm))
    for i in range(mm):
        diff = (m.labels[:, i + 1:] != m.labels[:, i:i + 1]).mean(axis=0)
        mat[i, i + 1:] = diff
        mat[i + 1:, i] = diff
    mat.setflags(write=False)
    iu = np.triu_indices(mm, k=1)
    return PairwiseDisagreement(mat, float(mat[iu].mean()))


def _population_expectation(pop: Population, per_atom: Callable[[np.ndarray, np.ndarray], float]) -> float:
    # fsum keeps theorem identities exact to ~1e-15 over many atoms
    return math.fsum(
        float(w) * per_atom(h, l) for w, h, l in zip(pop.weights, pop.hhat, pop.label_dist)
    )


def expected_test_error(
    p: Union[ProbabilityProfile, Population], y: Optional[LabelVector] = None
) -> float:
    """Expected test error of the ensemble: mean of ``1 - hhat_Y(X)``.

    For a :class:`Population` the labels live in the atoms' label
    distributions and ``y`` must be omitted; for a profile, ``y`` supplies
    the per-point labels.
    """
    if isinstance(p, Population):
        if y is not None:
            raise TypeError("a Population carries its own label distributions")
        # elementwise multiply + pairwise sum: same rounding as the EDR path,
        # so the calibrated-population identity holds bitwise
        return _population_expectation(p, lambda h, l: float((l * (1.0 - h)).sum()))
    labels = _aligned_labels(p.point_ids, y, p.n_classes)
    return float(np.mean(1.0 - p.probs[np.arange(p.n_points), labels]))


def expected_disagreement(p: Union[ProbabilityProfile, Population]) -> float:
    """Expected disagreement rate of two i.i.d. draws from the ensemble.

    Equals the mean of ``sum_k hhat_k (1 - hhat_k)`` over points (atoms).
    """
    if isinstance(p, Population):
        return _population_expectation(p, lambda h, l: float((h * (1.0 - h)).sum()))
    return float(np.mean(np.sum(p.probs * (1.0 - p.probs), axis=1)))


def gde_gap(ete: float, edr: float) -> float:
    """Absolute gap between expected test error and expected disagreement."""
    for name, v in (("ete", ete), ("edr", edr)):
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"{name}={v} outside [0, 1]")
    return abs(ete - edr)


def bootstrap_std(
    metric: Callable[[np.ndarray], float],
    n_points: int,
    n_resamples: int = 1000,
    rng: Union[RandomSource, int] = 0,
) -> float:
    """Bootstrap standard deviation of a point-wise metric.

    ``metric`` receives an index array (a with-replacement resample of
    ``range(n_points)``) and returns a scalar.  Each resample draws its
    indices from an independent derived stream, so the result is
    deterministic for a given ``rng`` and stable under parallel evaluation.
    """
    if n_resamples < 2:
        raise SizeError(f"need at least 2 resamples, got {n_resamples}")
    if n_points < 1:
        raise SizeError("need at least one point")
    source = as_random_source(rng)
    vals = np.empty(n_resamples)
    for r in range(n_resamples):
        idx = source.child(r).rng().integers(0, n_points, size=n_points)
        vals[r] = metric(idx)
    return float(vals.std(ddof=1))


def bootstrap_std_of_mean(
    values: Sequence[float],
    n_resamples: int = 1000,
    rng: Union[RandomSource, int] = 0,
) -> float:
    """Bootstrap std of the mean of per-point values (common special case)."""
    arr = np.asarray(values, dtype=np.float64)
    return bootstrap_std(lambda idx: float(arr[idx].mean()), arr.shape[0], n_resamples, rng)


@dataclass(frozen=True)
class ScatterStats:
    """Squared Pearson correlation and Kendall rank correlation of a scatter."""

    r_squared: float
    kendall_tau: float


def scatter_stats(xs: Sequence[float], ys: Sequence[float]) -> ScatterStats:
    """Correlation statistics for a disagreement vs test-error scatter.

    ``r_squared`` is the squared Pearson correlation.  ``kendall_tau`` is the
    simple tie-ignoring form: (concordant - discordant) / (n(n-1)/2), with
    tied pairs counted as neither.

    Raises DegenerateError when either series is constant, since the Pearson
    correlation is undefined there.
    """
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise SizeError(f"mismatched scatter shapes {x.shape} vs {y.shape}")
    n = x.shape[0]
    if n < 2:
        raise SizeError(f"need at least 2 points, got {n}")
    if np.all(x == x[0]) or np.all(y == y[0]):
        raise DegenerateError("constant series: correlation undefined")
    r = np.corrcoef(x, y)[0, 1]
    dx = np.sign(x[:, None] - x[None, :])
    dy = np.sign(y[:, None] - y[None, :])
    iu = np.triu_indices(n, k=1)
    tau = float(np.sum(dx[iu] * dy[iu]) / (n * (n - 1) / 2))
    return ScatterStats(r_squared=float(r * r), kendall_tau=tau)


@dataclass(frozen=True)
class GdeReport:
    """Summary statistics for one prediction matrix (and optional labels).

    Rates are in [0, 1].  ``gap`` is ``|test_err_mean - dis_mean|`` and is
    None when no labels were supplied.  ``r_squared`` / ``kendall_tau`` are
    filled only when the report comes from a scatter of several
    configurations.
    """

    dis_mean: float
    dis_std: float
    bootstrap_std_dis: float
    test_err_mean: Optional[float] = None
    test_err_std: Optional[float] = None
    bootstrap_std_test: Optional[float] = None
    gap: Optional[float] = None
    r_squared: Optional[float] = None
    kendall_tau: Optional[float] = None


def compute_gde_report(
    m: PredictionMatrix,
    y: Optional[LabelVector] = None,
    rng: Union[RandomSource, int] = 0,
    n_resamples: int = 1000,
) -> GdeReport:
    """Build a :class:`GdeReport` from a prediction matrix.

    Means and stds are taken over models (test error) and over unordered
    model pairs (disagreement); bootstrap deviations resample test points.
    """
    source = as_random_source(rng)
    pd = pairwise_disagreement(m)
    iu = np.triu_indices(m.n_models, k=1)
    pair_vals = pd.matrix[iu]
    dis_std = float(pair_vals.std(ddof=1)) if pair_vals.size > 1 else 0.0
    per_point_dis = np.zeros(m.n_points)
    for i in range(m.n_models):
        per_point_dis += (m.labels[:, i + 1:] != m.labels[:, i:i + 1]).sum(axis=1)
    per_point_dis /= m.n_models * (m.n_models - 1) / 2
    boot_dis = bootstrap_std_of_mean(per_point_dis, n_resamples, source.child(1))

    if y is None:
        return GdeReport(
            dis_mean=pd.mean_over_pairs, dis_std=dis_std, bootstrap_std_dis=boot_dis
        )
    errs = per_model_test_errors(m, y)
    te_std = float(errs.std(ddof=1)) if errs.size > 1 else 0.0
    labels = _aligned_labels(m.point_ids, y, m.n_classes)
    per_point_err = (m.labels != labels[:, None]).mean(axis=1)
    boot_te = bootstrap_std_of_mean(per_point_err, n_resamples, source.child(2))
    te_mean = float(errs.mean())
    return GdeReport(
        dis_mean=pd.mean_over_pairs,
        dis_std=dis_std,
        bootstrap_std_dis=boot_dis,
        test_err_mean=te_mean,
        test_err_std=te_std,
        bootstrap_std_test=boot_te,
        gap=abs(te_mean - pd.mean_over_pairs),
    )
