"""Domain types, validation, and deterministic randomness.

Everything downstream (metrics, calibration, theory checks, the simulator)
works on the immutable types defined here: hard predictions of M models on N
points, labels aligned by point id, per-point probability profiles, and
finite weighted populations used for exact computations.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .errors import (
    AlignmentError,
    ClassRangeError,
    DuplicateIdError,
    NormalizationError,
    RangeError,
    SizeError,
)

#: Default tolerance for simplex checks; rows of ingested float data are
#: silently renormalized when they deviate from sum 1 by at most this much.
TOL_NORM = 1e-6

_MASK64 = (1 << 64) - 1


def _mix64(a: int, b: int) -> int:
    """Combine two 64-bit values into one (splitmix64 finalizer)."""
    x = (a * 0x9E3779B97F4A7C15 + b + 0x2545F4914F6CDD1D) & _MASK64
    x ^= x >> 30
    x = (x * 0xBF58476D1CE4E5B9) & _MASK64
    x ^= x >> 27
    x = (x * 0x94D049BB133111EB) & _MASK64
    x ^= x >> 31
    return x


@dataclass(frozen=True)
class RandomSource:
    """Deterministic randomness handle.

    Identical ``(seed, stream_id)`` pairs always yield identical draw
    sequences.  ``child(k)`` derives an independent stream, so parallel
    work items can each own a reproducible source.
    """

    seed: int
    stream_id: int = 0

    def rng(self) -> np.random.Generator:
        """Fresh generator for this (seed, stream_id) pair."""
        ss = np.random.SeedSequence(
            entropy=self.seed & _MASK64, spawn_key=(self.stream_id & _MASK64,)
        )
        return np.random.default_rng(ss)

    def child(self, k: int) -> "RandomSource":
        """Derived source with an independent stream id."""
        return RandomSource(self.seed, _mix64(self.stream_id & _MASK64, k))


def as_random_source(rng) -> RandomSource:
    """Coerce an int seed or RandomSource to a RandomSource."""
    if isinstance(rng, RandomSource):
        return rng
    if isinstance(rng, (int, np.integer)):
        return RandomSource(int(rng))
    raise TypeError(f"expected RandomSource or int seed, got {type(rng).__name__}")


def _as_point_ids(point_ids, n_points: int) -> tuple:
    if point_ids is None:
        return tuple(str(i) for i in range(n_points))
    ids = tuple(str(p) for p in point_ids)
    if len(ids) != n_points:
        raise SizeError(f"got {len(ids)} point ids for {n_points} points")
    if len(set(ids)) != len(ids):
        seen = set()
        dup = next(p for p in ids if p in seen or seen.add(p))
        raise DuplicateIdError(f"duplicate point id {dup!r}")
    return ids


def _readonly(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class PredictionMatrix:
    """Hard (top-class) predictions of ``n_models`` models on ``n_points`` points.

    ``labels[x, j]`` is the class index predicted by model ``j`` at point
    ``x``.  ``n_classes`` is inferred as ``1 + max`` observed class unless
    given explicitly; an explicit value smaller than an observed class is
    rejected.
    """

    labels: np.ndarray
    point_ids: tuple = None
    n_classes: int = None

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 2:
            raise SizeError(f"prediction matrix must be 2-D, got shape {labels.shape}")
        n_points, n_models = labels.shape
        if n_points < 1 or n_models < 1:
            raise SizeError(f"need at least one point and one model, got {labels.shape}")
        if not np.issubdtype(labels.dtype, np.integer):
            if not np.all(labels == labels.astype(np.int64)):
                raise ClassRangeError("predictions must be integer class indices")
        labels = labels.astype(np.int64)
        if labels.min() < 0:
            raise ClassRangeError(f"negative class index {labels.min()}")
        observed = int(labels.max()) + 1
        k = self.n_classes
        if k is None:
            k = max(observed, 2)
        elif k < observed:
            raise ClassRangeError(
                f"n_classes={k} but class {observed - 1} observed in predictions"
            )
        elif k < 2:
            raise ClassRangeError(f"n_classes must be at least 2, got {k}")
        object.__setattr__(self, "labels", _readonly(labels))
        object.__setattr__(self, "point_ids", _as_point_ids(self.point_ids, n_points))
        object.__setattr__(self, "n_classes", int(k))

    @property
    def n_points(self) -> int:
        return self.labels.shape[0]

    @property
    def n_models(self) -> int:
        return self.labels.shape[1]


@dataclass(frozen=True)
class LabelVector:
    """Ground-truth class per point, id-aligned with a PredictionMatrix."""

    labels: np.ndarray
    point_ids: tuple = None

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 1 or labels.shape[0] < 1:
            raise SizeError(f"label vector must be 1-D and nonempty, got {labels.shape}")
        labels = labels.astype(np.int64)
        if labels.min() < 0:
            raise ClassRangeError(f"negative label {labels.min()}")
        object.__setattr__(self, "labels", _readonly(labels))
        object.__setattr__(
            self, "point_ids", _as_point_ids(self.point_ids, labels.shape[0])
        )

    @property
    def n_points(self) -> int:
        return self.labels.shape[0]


def align_labels(reference_ids: Sequence[str], y: LabelVector) -> np.ndarray:
    """Label array reordered to match ``reference_ids``.

    Alignment is by point id, never by row order; a mismatched id set is a
    hard error because silent misalignment would corrupt every metric.
    """
    ref = tuple(str(p) for p in reference_ids)
    if ref == y.point_ids:
        return y.labels
    pos = {p: i for i, p in enumerate(y.point_ids)}
    if len(ref) != len(y.point_ids) or any(p not in pos for p in ref):
        missing = [p for p in ref if p not in pos][:3]
        extra = [p for p in y.point_ids if p not in set(ref)][:3]
        raise AlignmentError(
            f"point id sets differ (missing {missing!r}, unexpected {extra!r})"
        )
    perm = np.fromiter((pos[p] for p in ref), dtype=np.int64, count=len(ref))
    return y.labels[perm]


@dataclass(frozen=True)
class ProbabilityProfile:
    """Per-point class-probability vectors of an ensemble.

    Row ``x`` holds the probability the ensemble assigns to each of the K
    classes at point ``x``.  Construction checks shape only; ingestion paths
    call :func:`validate_profile` to enforce and repair simplex rows.
    """

    probs: np.ndarray
    point_ids: tuple = None

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=np.float64)
        if probs.ndim != 2:
            raise SizeError(f"probability profile must be 2-D, got shape {probs.shape}")
        n_points, n_classes = probs.shape
        if n_points < 1:
            raise SizeError("probability profile needs at least one point")
        if n_classes < 2:
            raise SizeError(f"need at least 2 classes, got {n_classes}")
        object.__setattr__(self, "probs", _readonly(probs))
        object.__setattr__(self, "point_ids", _as_point_ids(self.point_ids, n_points))

    @property
    def n_points(self) -> int:
        return self.probs.shape[0]

    @property
    def n_classes(self) -> int:
        return self.probs.shape[1]


def _repair_rows(rows: np.ndarray, tol: float, context: str, ids=None) -> np.ndarray:
    """Clamp near-boundary entries and renormalize rows within tolerance.

    Rows already within a few ulps of sum 1 are returned untouched, which
    makes repeated validation bitwise idempotent.
    """
    k = rows.shape[1]
    lo, hi = rows.min(), rows.max()
    if lo < -tol or hi > 1.0 + tol:
        where = np.unravel_index(np.argmin(rows) if lo < -tol else np.argmax(rows), rows.shape)
        ident = ids[where[0]] if ids is not None else where[0]
        raise RangeError(
            f"{context}: entry {rows[where]!r} at point {ident!r} outside [0, 1] "
            f"beyond tolerance {tol}"
        )
    sums = rows.sum(axis=1)
    bad = np.abs(sums - 1.0) > tol
    if bad.any():
        i = int(np.argmax(bad))
        ident = ids[i] if ids is not None else i
        raise NormalizationError(
            f"{context}: row for point {ident!r} sums to {sums[i]!r}, "
            f"off by more than tolerance {tol}"
        )
    skip_eps = 8.0 * k * np.finfo(np.float64).eps
    needs = np.abs(sums - 1.0) > skip_eps
    if not needs.any() and lo >= 0.0 and hi <= 1.0:
        return rows
    out = np.clip(rows, 0.0, 1.0)
    sums = out.sum(axis=1)
    needs = np.abs(sums - 1.0) > skip_eps
    if needs.any():
        out[needs] = out[needs] / sums[needs, None]
    return out


def validate_profile(p: ProbabilityProfile, tol: float = TOL_NORM) -> ProbabilityProfile:
    """Validated copy of ``p`` with rows repaired onto the simplex.

    Rows whose sum deviates from 1 by at most ``tol`` are renormalized
    (ingested float CSVs carry rounding noise); larger deviations raise
    NormalizationError, and entries outside ``[-tol, 1 + tol]`` raise
    RangeError.  Validating an already validated profile is the identity.
    """
    if not tol > 0:
        raise ValueError(f"tol must be positive, got {tol}")
    repaired = _repair_rows(
        np.array(p.probs), tol, "probability profile", ids=p.point_ids
    )
    if repaired is p.probs or np.array_equal(repaired, p.probs):
        return p
    return ProbabilityProfile(repaired, p.point_ids)


def ensemble_from_predictions(m: PredictionMatrix) -> ProbabilityProfile:
    """Ensemble profile induced by a prediction matrix.

    Entry ``(x, k)`` is the fraction of the M models predicting class ``k``
    at ``x``.  This is an average of one-hot predictions, not a plurality
    vote; rows are exact rationals ``count / M``.
    """
    n, m_models = m.labels.shape
    k = m.n_classes
    flat = m.labels + np.arange(n, dtype=np.int64)[:, None] * k
    counts = np.bincount(flat.ravel(), minlength=n * k).reshape(n, k)
    return ProbabilityProfile(counts / float(m_models), m.point_ids)


@dataclass(frozen=True)
class Population:
    """Finite weighted population of (confidence vector, label distribution) atoms.

    An exact, discretized stand-in for a data distribution together with an
    ensemble profile: atom ``a`` carries probability mass ``weights[a]``, the
    ensemble confidence vector ``hhat[a]`` and the conditional label
    distribution ``label_dist[a]``.  All expectation-level quantities (test
    error, disagreement rate, calibration error) are computable exactly on
    this type, which is what the theorem checks rely on.
    """

    weights: np.ndarray
    hhat: np.ndarray
    label_dist: np.ndarray
    tol: float = field(default=TOL_NORM, compare=False)

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64).reshape(-1)
        hhat = np.asarray(self.hhat, dtype=np.float64)
        label = np.asarray(self.label_dist, dtype=np.float64)
        if hhat.ndim != 2 or label.shape != hhat.shape or w.shape[0] != hhat.shape[0]:
            raise SizeError(
                f"inconsistent population shapes: weights {w.shape}, "
                f"hhat {hhat.shape}, label_dist {label.shape}"
            )
        if hhat.shape[0] < 1:
            raise SizeError("population needs at least one atom")
        if hhat.shape[1] < 2:
            raise SizeError(f"need at least 2 classes, got {hhat.shape[1]}")
        tol = self.tol
        if w.min() < -tol:
            raise RangeError(f"negative atom weight {w.min()!r}")
        w = np.clip(w, 0.0, None)
        total = w.sum()
        if abs(total - 1.0) > tol:
            raise NormalizationError(f"atom weights sum to {total!r}, not 1")
        if abs(total - 1.0) > 8.0 * w.shape[0] * np.finfo(np.float64).eps:
            w = w / total
        hhat = _repair_rows(np.array(hhat), tol, "hhat")
        label = _repair_rows(np.array(label), tol, "label_dist")
        object.__setattr__(self, "weights", _readonly(w))
        object.__setattr__(self, "hhat", _readonly(hhat))
        object.__setattr__(self, "label_dist", _readonly(label))

    @property
    def n_atoms(self) -> int:
        return self.weights.shape[0]

    @property
    def n_classes(self) -> int:
        return self.hhat.shape[1]

    @property
    def atoms(self) -> Iterator[tuple]:
        """Iterate (weight, hhat row, label_dist row) triples."""
        return zip(self.weights, self.hhat, self.label_dist)

    @classmethod
    def from_atoms(cls, atoms: Sequence[tuple], tol: float = TOL_NORM) -> "Population":
        w, hhat, label = zip(*atoms)
        return cls(np.array(w), np.array(hhat), np.array(label), tol=tol)

    def sample(self, n: int, rng) -> tuple[ProbabilityProfile, LabelVector]:
        """Draw ``n`` i.i.d. points: atom by weight, label by the atom's label_dist.

        The returned profile repeats the sampled atoms' confidence rows, so
        binned estimators evaluated on it converge to the population values.
        """
        if n < 1:
            raise SizeError("need at least one sample")
        gen = as_random_source(rng).rng()
        idx = gen.choice(self.n_atoms, size=n, p=self.weights / self.weights.sum())
        cum = np.cumsum(self.label_dist[idx], axis=1)
        u = gen.random(n)
        labels = (u[:, None] >= cum).sum(axis=1)
        labels = np.minimum(labels, self.n_classes - 1)
        return ProbabilityProfile(self.hhat[idx]), LabelVector(labels)
