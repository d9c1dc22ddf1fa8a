"""Constructive checks of the calibration/disagreement identities.

The checks run on finite :class:`~gdekit.core.Population` objects where the
expected test error (ETE) and expected disagreement rate (EDR) have exact
closed forms, so the identities can be verified to 1e-12 rather than
statistically:

* class-wise calibration implies ETE = EDR (checked on generated populations);
* the weaker class-aggregated calibration also implies it, strictly more
  generally for K >= 3;
* without any calibration, |ETE - EDR| is bounded by the class-aggregated
  calibration error, and equality of ETE and EDR can hold with large
  calibration error (explicit two-atom counterexample);
* the variance of pairwise disagreement is bounded through the pair
  structure constant kappa.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from .calibration import cace_exact, cace_refined, max_classwise_deviation
from .core import (
    LabelVector,
    Population,
    ProbabilityProfile,
    RandomSource,
    _readonly,
    as_random_source,
)
from .errors import (
    ConstraintError,
    ConstructionError,
    KappaRangeError,
    SizeError,
)
from .metrics import expected_disagreement, expected_test_error

THEOREM_TOL = 1e-12


class GdeCheck(NamedTuple):
    gap: float
    holds: bool


class DeviationBoundCheck(NamedTuple):
    gap: float
    cace: float
    refined_cace: float
    ok: bool
    ok_refined: bool


def check_gde(pop: Population, tol: float = THEOREM_TOL) -> GdeCheck:
    """Gap |ETE - EDR| via exact closed forms, and whether it is within ``tol``."""
    gap = abs(expected_test_error(pop) - expected_disagreement(pop))
    return GdeCheck(gap=gap, holds=gap <= tol)


def check_deviation_bound(pop: Population, slack: float = THEOREM_TOL) -> DeviationBoundCheck:
    """Check |ETE - EDR| <= CACE, and the tighter (1 - q)-weighted variant."""
    gap = abs(expected_test_error(pop) - expected_disagreement(pop))
    cace = cace_exact(pop)
    refined = cace_refined(pop)
    return DeviationBoundCheck(
        gap=gap,
        cace=cace,
        refined_cace=refined,
        ok=gap <= cace + slack,
        ok_refined=gap <= refined + slack,
    )


def gen_classwise_calibrated(K: int, n_atoms: int, rng) -> Population:
    """Random population that is class-wise calibrated by construction.

    Atom weights and confidence vectors are Dirichlet draws; each atom's
    label distribution is set equal to its confidence vector, which enforces
    p(Y = k | hhat_k = q) = q at every confidence atom.  Consequently the
    exact class-aggregated calibration error is 0 and ETE = EDR.
    """
    if K < 2:
        raise SizeError(f"need K >= 2, got {K}")
    if n_atoms < 1:
        raise SizeError(f"need at least one atom, got {n_atoms}")
    gen = as_random_source(rng).rng()
    weights = gen.dirichlet(np.ones(n_atoms)) if n_atoms > 1 else np.ones(1)
    hhat = gen.dirichlet(np.ones(K), size=n_atoms)
    return Population(weights, hhat, hhat.copy())


def gen_random_population(K: int, n_atoms: int, rng) -> Population:
    """Random population with independent confidence and label distributions."""
    if K < 2:
        raise SizeError(f"need K >= 2, got {K}")
    if n_atoms < 1:
        raise SizeError(f"need at least one atom, got {n_atoms}")
    gen = as_random_source(rng).rng()
    weights = gen.dirichlet(np.ones(n_atoms)) if n_atoms > 1 else np.ones(1)
    hhat = gen.dirichlet(np.ones(K), size=n_atoms)
    label = gen.dirichlet(np.ones(K), size=n_atoms)
    return Population(weights, hhat, label)


def gen_aggregated_not_classwise(
    K: int,
    rng,
    n_atoms: Optional[int] = None,
    min_deviation: float = 0.05,
    max_attempts: int = 100,
) -> Population:
    """Population satisfying class-aggregated but not class-wise calibration.

    Construction: start from a class-wise calibrated population and, in at
    least one atom, force two classes i != j onto a shared confidence value
    m, then move label mass ``delta`` from class j to class i.  At the
    shared value the aggregated hit mass stays m * (2 * weight), so
    class-aggregated calibration survives, while class i is now
    over-accurate by ``delta`` (and j under-accurate).  In the binary case
    the two classes' confidences are complementary, the pairing collapses,
    and no such separation exists, so K = 2 raises ConstructionError.

    Every candidate is verified (exact calibration error 0, class-wise
    deviation >= min_deviation, exact ETE = EDR) before being returned;
    failures retry up to ``max_attempts`` times.
    """
    if K < 3:
        raise ConstructionError(
            "class-aggregated and class-wise calibration coincide for K = 2; "
            "a separating population needs K >= 3"
        )
    source = as_random_source(rng)
    for attempt in range(max_attempts):
        gen = source.child(attempt).rng()
        atoms = n_atoms if n_atoms is not None else int(gen.integers(2, 7))
        weights = gen.dirichlet(np.ones(atoms)) if atoms > 1 else np.ones(1)
        hhat = gen.dirichlet(np.ones(K), size=atoms)
        label = hhat.copy()
        n_swapped = int(gen.integers(1, atoms + 1))
        swap_atoms = gen.choice(atoms, size=n_swapped, replace=False)
        ok = True
        for a in swap_atoms:
            i, j = gen.choice(K, size=2, replace=False)
            m = (hhat[a, i] + hhat[a, j]) / 2.0
            delta_max = min(1.0 - m, m) - 0.01
            if delta_max <= min_deviation:
                ok = False
                break
            delta = gen.uniform(min_deviation, delta_max)
            hhat[a, i] = m
            hhat[a, j] = m
            label[a] = hhat[a]
            label[a, i] = m + delta
            label[a, j] = m - delta
        if not ok:
            continue
        pop = Population(weights, hhat, label)
        if (
            cace_exact(pop) <= THEOREM_TOL
            and max_classwise_deviation(pop) >= min(min_deviation, 0.01)
            and check_gde(pop).holds
        ):
            return pop
    raise ConstructionError(
        f"no valid population after {max_attempts} attempts (K={K})"
    )


def uncalibrated_gde_population(eps1: float, eps2: float) -> Population:
    """Two-atom binary population with ETE = EDR = 0.25 for any feasible (eps1, eps2).

    The ensemble assigns class-0 confidence 0.1 on half the mass and 0.2 on
    the other half; ``eps1`` and ``eps2`` are the conditional probabilities
    that the true label is 0 on those halves.  Any pair on the line
    0.8 * eps1 + 0.6 * eps2 = 0.2 keeps expected test error equal to
    expected disagreement, but only (0.1, 0.2) is calibrated - so equality
    of the two rates does not require calibration.
    """
    for name, v in (("eps1", eps1), ("eps2", eps2)):
        if not 0.0 <= v <= 1.0:
            raise ConstraintError(f"{name}={v} outside [0, 1]")
    residual = 0.8 * eps1 + 0.6 * eps2 - 0.2
    if abs(residual) > 1e-12:
        raise ConstraintError(
            f"0.8*eps1 + 0.6*eps2 = {0.8 * eps1 + 0.6 * eps2!r}, expected 0.2"
        )
    return Population(
        weights=np.array([0.5, 0.5]),
        hhat=np.array([[0.1, 0.9], [0.2, 0.8]]),
        label_dist=np.array([[eps1, 1.0 - eps1], [eps2, 1.0 - eps2]]),
    )


def easy_hard_population(frac_hard: float, K: int) -> Population:
    """Population of 'easy' points (always classified right) and 'hard' ones.

    Hard atoms get a uniform confidence vector, so a sampled hypothesis
    picks a label uniformly at random there: the error and the pair
    disagreement both equal (K - 1) / K, and the equality holds pointwise.
    """
    if not 0.0 <= frac_hard <= 1.0:
        raise ConstraintError(f"frac_hard={frac_hard} outside [0, 1]")
    if K < 2:
        raise SizeError(f"need K >= 2, got {K}")
    easy_h = np.zeros(K)
    easy_h[0] = 1.0
    hard_h = np.full(K, 1.0 / K)
    hard_label = np.zeros(K)
    hard_label[0] = 1.0
    atoms = []
    if frac_hard < 1.0:
        atoms.append((1.0 - frac_hard, easy_h, easy_h.copy()))
    if frac_hard > 0.0:
        atoms.append((frac_hard, hard_h, hard_label))
    return Population.from_atoms(atoms)


@dataclass(frozen=True)
class HypothesisDistribution:
    """Finite distribution over deterministic classifiers on weighted points.

    ``predictions[i, x]`` is hypothesis i's class at point x and ``probs[i]``
    its probability.  The induced ensemble marginal at each point is exactly
    a probability-profile row (see :meth:`to_profile`).
    """

    probs: np.ndarray
    predictions: np.ndarray
    n_classes: int
    point_weights: np.ndarray = None

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=np.float64).reshape(-1)
        preds = np.asarray(self.predictions, dtype=np.int64)
        if preds.ndim != 2 or preds.shape[0] != probs.shape[0]:
            raise SizeError(
                f"predictions shape {preds.shape} inconsistent with {probs.shape[0]} hypotheses"
            )
        if probs.min() < 0 or abs(probs.sum() - 1.0) > 1e-9:
            raise ConstraintError("hypothesis probabilities must be a distribution")
        if preds.min() < 0 or preds.max() >= self.n_classes:
            raise ConstraintError("prediction outside [0, n_classes)")
        w = self.point_weights
        if w is None:
            w = np.full(preds.shape[1], 1.0 / preds.shape[1])
        else:
            w = np.asarray(w, dtype=np.float64).reshape(-1)
            if w.shape[0] != preds.shape[1] or w.min() < 0:
                raise ConstraintError("point weights must be nonnegative, one per point")
            w = w / w.sum()
        object.__setattr__(self, "probs", _readonly(probs))
        object.__setattr__(self, "predictions", _readonly(preds))
        object.__setattr__(self, "point_weights", _readonly(w))

    @property
    def n_hypotheses(self) -> int:
        return self.probs.shape[0]

    @property
    def n_points(self) -> int:
        return self.predictions.shape[1]

    def marginals(self) -> np.ndarray:
        """Per-point class marginals induced by the distribution, shape (N, K)."""
        n, k = self.n_points, self.n_classes
        marg = np.zeros((n, k))
        for i in range(self.n_hypotheses):
            marg[np.arange(n), self.predictions[i]] += self.probs[i]
        return marg

    def to_profile(self) -> ProbabilityProfile:
        return ProbabilityProfile(self.marginals())


@dataclass(frozen=True)
class KappaCertificate:
    """Certificate for the disagreement-variance bound.

    ``kappa_hat`` is the largest observed ratio Dis / (TestErr + TestErr')
    over support pairs, clamped into [1/2, 1]; the bound asserts
    Var(Dis) <= 2 kappa^2 Var(TestErr) + (4 kappa^2 - 1) ETE^2, which is
    guaranteed whenever ETE = EDR holds for the distribution.
    """

    kappa_hat: float
    var_dis: float
    var_err: float
    ete: float
    edr: float
    bound_rhs: float

    @property
    def bound_holds(self) -> bool:
        return self.var_dis <= self.bound_rhs + 1e-12

    @property
    def gde_gap(self) -> float:
        return abs(self.ete - self.edr)


def _label_matrix(labels, n_points: int, n_classes: int) -> np.ndarray:
    if isinstance(labels, LabelVector):
        labels = labels.labels
    arr = np.asarray(labels, dtype=np.float64)
    if arr.ndim == 1:
        idx = arr.astype(np.int64)
        if idx.shape[0] != n_points or idx.min() < 0 or idx.max() >= n_classes:
            raise ConstraintError("labels inconsistent with hypothesis distribution")
        mat = np.zeros((n_points, n_classes))
        mat[np.arange(n_points), idx] = 1.0
        return mat
    if arr.shape != (n_points, n_classes):
        raise SizeError(f"label matrix shape {arr.shape} != {(n_points, n_classes)}")
    return arr


def variance_certificate(hd: HypothesisDistribution, labels) -> KappaCertificate:
    """Exact variance bound certificate over a finite hypothesis distribution.

    ``labels`` is either a hard label per point or an (N, K) matrix of label
    distributions.  Test errors, the full pairwise disagreement matrix and
    all moments are enumerated exactly over the support.  Pairs with zero
    summed test error get ratio 1/2 (the infimum of the admissible range);
    a ratio above 1 is impossible by the triangle inequality and raises
    KappaRangeError, signalling corrupted input.
    """
    lab = _label_matrix(labels, hd.n_points, hd.n_classes)
    w = hd.point_weights
    h = hd.n_hypotheses
    n = np.arange(hd.n_points)
    errs = np.array([
        float(np.dot(w, 1.0 - lab[n, hd.predictions[i]])) for i in range(h)
    ])
    dis = np.zeros((h, h))
    for i in range(h):
        neq = hd.predictions[i][None, :] != hd.predictions
        dis[i] = neq @ w
    support = hd.probs > 0.0
    kappa = 0.5
    for i in range(h):
        if not support[i]:
            continue
        for j in range(h):
            if not support[j]:
                continue
            denom = errs[i] + errs[j]
            if denom <= 0.0:
                if dis[i, j] > 1e-12:
                    raise KappaRangeError(
                        f"pair ({i}, {j}) has zero test errors but disagreement "
                        f"{dis[i, j]!r}; input is inconsistent"
                    )
                ratio = 0.5
            else:
                ratio = dis[i, j] / denom
                if ratio > 1.0 + 1e-12:
                    raise KappaRangeError(
                        f"pair ({i}, {j}) has Dis/(TestErr+TestErr') = {ratio!r} > 1, "
                        "violating the triangle inequality; input is inconsistent"
                    )
            kappa = max(kappa, min(ratio, 1.0))
    p = hd.probs
    ete = float(p @ errs)
    var_err = float(p @ errs**2 - ete**2)
    edr = float(p @ dis @ p)
    e_dis2 = float(p @ dis**2 @ p)
    var_dis = e_dis2 - edr**2
    bound_rhs = 2.0 * kappa**2 * var_err + (4.0 * kappa**2 - 1.0) * ete**2
    return KappaCertificate(
        kappa_hat=kappa,
        var_dis=var_dis,
        var_err=var_err,
        ete=ete,
        edr=edr,
        bound_rhs=bound_rhs,
    )


def gen_random_hypothesis_distribution(
    K: int,
    n_hypotheses: int,
    n_points: int,
    rng,
) -> tuple[HypothesisDistribution, np.ndarray]:
    """Random finite hypothesis distribution plus labels under which ETE = EDR.

    Setting each point's label distribution to the induced prediction
    marginal makes the distribution class-wise calibrated, which is what
    puts the variance bound's premise in force.  Returns (distribution,
    label matrix).
    """
    gen = as_random_source(rng).rng()
    probs = gen.dirichlet(np.ones(n_hypotheses))
    preds = gen.integers(0, K, size=(n_hypotheses, n_points))
    weights = gen.dirichlet(np.ones(n_points))
    hd = HypothesisDistribution(
        probs=probs, predictions=preds, n_classes=K, point_weights=weights
    )
    return hd, hd.marginals()


class SampledGdeEstimate(NamedTuple):
    disagreement: float
    test_error: float
    stderr: float


def sampled_gde_gap(pop: Population, n_pairs: int, rng) -> SampledGdeEstimate:
    """Monte Carlo check that sampled pair disagreement tracks test error.

    For every atom, draws ``n_pairs`` independent hypothesis pairs from the
    atom's confidence vector plus a label from its label distribution, then
    weights the per-atom disagreement/error means by atom mass.  ``stderr``
    is the standard error of the difference of the two estimates (the
    per-pair indicators are paired, so their covariance is accounted for).
    """
    if n_pairs < 2:
        raise SizeError(f"need at least 2 pairs, got {n_pairs}")
    source = as_random_source(rng)
    dis_total = 0.0
    err_total = 0.0
    var_total = 0.0
    for a in range(pop.n_atoms):
        w = float(pop.weights[a])
        if w == 0.0:
            continue
        gen = source.child(a).rng()
        h1 = gen.choice(pop.n_classes, size=n_pairs, p=pop.hhat[a])
        h2 = gen.choice(pop.n_classes, size=n_pairs, p=pop.hhat[a])
        y = gen.choice(pop.n_classes, size=n_pairs, p=pop.label_dist[a])
        d = (h1 != h2).astype(np.float64)
        e = (h1 != y).astype(np.float64)
        dis_total += w * d.mean()
        err_total += w * e.mean()
        var_total += w * w * float((d - e).var(ddof=1)) / n_pairs
    return SampledGdeEstimate(
        disagreement=dis_total, test_error=err_total, stderr=math.sqrt(var_total)
    )
