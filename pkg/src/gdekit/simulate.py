"""Desk-scale stochastic learners for disagreement-vs-test-error experiments.

Tasks are Gaussian class-conditional mixtures (their Bayes-optimal posterior
is available in closed form, giving a calibrated reference ensemble), and
learners are small SGD-trained classifiers whose runs are fully determined
by three seeds: weight initialization, data ordering, and data draw.  A
stochasticity mode selects which of the three differ between two runs:

    alldiff    different init + disjoint data halves (+ different order)
    diffdata   disjoint data halves, shared init and order
    diffinit   different init, same data in the same order
    difforder  different order, same init and data
    samedata   same data, different init and different order
"""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence, Union

import numpy as np

from .core import (
    LabelVector,
    Population,
    PredictionMatrix,
    ProbabilityProfile,
    RandomSource,
    as_random_source,
)
from .errors import ConstraintError, ConvergenceWarning, DegenerateError, SizeError
from .metrics import (
    GdeReport,
    compute_gde_report,
    disagreement,
    scatter_stats,
    test_error,
)

MODES = ("alldiff", "diffdata", "diffinit", "difforder", "samedata")

#: Modes where the two runs train on disjoint halves of the pool.
_SPLIT_MODES = ("alldiff", "diffdata")

#: Train-accuracy threshold below which a ConvergenceWarning is recorded.
INTERPOLATION_THRESHOLD = 0.99


@dataclass(frozen=True)
class SyntheticTask:
    """Gaussian class-conditional mixture with equal class priors."""

    class_means: np.ndarray
    noise_scale: float
    n_train: int
    n_test: int

    def __post_init__(self):
        means = np.asarray(self.class_means, dtype=np.float64)
        if means.ndim != 2 or means.shape[0] < 2:
            raise SizeError(f"class_means must be (K >= 2, dim), got {means.shape}")
        if self.noise_scale <= 0:
            raise ConstraintError(f"noise_scale must be positive, got {self.noise_scale}")
        if self.n_train < 2 or self.n_test < 1:
            raise SizeError("need n_train >= 2 and n_test >= 1")
        object.__setattr__(self, "class_means", means)

    @property
    def n_classes(self) -> int:
        return self.class_means.shape[0]

    @property
    def dim(self) -> int:
        return self.class_means.shape[1]

    @classmethod
    def random(
        cls,
        n_classes: int,
        dim: int,
        separation: float,
        noise_scale: float,
        n_train: int,
        n_test: int,
        rng,
    ) -> "SyntheticTask":
        """Task with random unit-norm class means scaled by ``separation``."""
        gen = as_random_source(rng).rng()
        means = gen.standard_normal((n_classes, dim))
        means *= separation / np.linalg.norm(means, axis=1, keepdims=True)
        return cls(means, noise_scale, n_train, n_test)

    def sample(self, n: int, rng) -> tuple[np.ndarray, np.ndarray]:
        """Draw n labeled points: y uniform over classes, x = mean_y + noise."""
        gen = as_random_source(rng).rng()
        y = gen.integers(0, self.n_classes, size=n)
        x = self.class_means[y] + self.noise_scale * gen.standard_normal((n, self.dim))
        return x, y

    def posterior(self, x: np.ndarray) -> np.ndarray:
        """Exact Bayes posterior over classes at each row of x."""
        d2 = ((x[:, None, :] - self.class_means[None, :, :]) ** 2).sum(axis=2)
        logits = -d2 / (2.0 * self.noise_scale**2)
        logits -= logits.max(axis=1, keepdims=True)
        p = np.exp(logits)
        return p / p.sum(axis=1, keepdims=True)


@dataclass(frozen=True)
class LearnerSpec:
    """SGD learner hyperparameters; training is deterministic given seeds."""

    model: str = "linear-softmax"
    lr: float = 0.1
    epochs: int = 20
    batch_size: int = 32
    hidden: int = 16

    def __post_init__(self):
        if self.model not in ("linear-softmax", "one-hidden-layer"):
            raise ConstraintError(f"unknown model {self.model!r}")
        if self.lr <= 0 or self.epochs < 1 or self.batch_size < 1 or self.hidden < 1:
            raise ConstraintError("lr, epochs, batch_size and hidden must be positive")


class RunSeeds(NamedTuple):
    init_seed: int
    order_seed: int
    data_seed: int


@dataclass(frozen=True)
class StochasticityConfig:
    """Which stochasticity sources differ between the two runs of a pair."""

    mode: str
    run_seeds: tuple

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConstraintError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if len(self.run_seeds) != 2:
            raise SizeError("run_seeds must hold exactly two RunSeeds")
        self.validate()

    @property
    def split_data(self) -> bool:
        return self.mode in _SPLIT_MODES

    def validate(self):
        """Assert the seed equalities the mode's semantics require."""
        a, b = self.run_seeds
        if a.data_seed != b.data_seed:
            raise ConstraintError("runs must share the data pool seed")
        # mode -> (init seeds match, order seeds match)
        expected = {
            "alldiff": (False, False),
            "diffdata": (True, True),
            "diffinit": (False, True),
            "difforder": (True, False),
            "samedata": (False, False),
        }[self.mode]
        actual = (a.init_seed == b.init_seed, a.order_seed == b.order_seed)
        for name, want, got in zip(("init", "order"), expected, actual):
            if want != got:
                raise ConstraintError(
                    f"mode {self.mode}: {name} seeds must "
                    f"{'match' if want else 'differ'}"
                )

    @classmethod
    def from_mode(cls, mode: str, rng) -> "StochasticityConfig":
        """Draw run seeds wired to the mode's shared/different pattern."""
        gen = as_random_source(rng).rng()
        fresh = iter(int(v) for v in gen.integers(0, 2**63 - 1, size=6))
        data = next(fresh)
        i1, o1 = next(fresh), next(fresh)
        if mode in ("alldiff", "samedata"):
            i2, o2 = next(fresh), next(fresh)
        elif mode == "diffdata":
            i2, o2 = i1, o1
        elif mode == "diffinit":
            i2, o2 = next(fresh), o1
        elif mode == "difforder":
            i2, o2 = i1, next(fresh)
        else:
            raise ConstraintError(f"unknown mode {mode!r}; expected one of {MODES}")
        return cls(mode, (RunSeeds(i1, o1, data), RunSeeds(i2, o2, data)))


def _init_params(spec: LearnerSpec, dim: int, k: int, rng: np.random.Generator):
    if spec.model == "linear-softmax":
        return {
            "W": rng.standard_normal((dim, k)) / np.sqrt(dim),
            "b": np.zeros(k),
        }
    return {
        "W1": rng.standard_normal((dim, spec.hidden)) / np.sqrt(dim),
        "b1": np.zeros(spec.hidden),
        "W2": rng.standard_normal((spec.hidden, k)) / np.sqrt(spec.hidden),
        "b2": np.zeros(k),
    }


def _logits(params: dict, x: np.ndarray) -> np.ndarray:
    if "W" in params:
        return x @ params["W"] + params["b"]
    h = np.tanh(x @ params["W1"] + params["b1"])
    return h @ params["W2"] + params["b2"]


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _sgd_step(params: dict, x: np.ndarray, y: np.ndarray, k: int, lr: float):
    n = x.shape[0]
    if "W" in params:
        p = _softmax(x @ params["W"] + params["b"])
        p[np.arange(n), y] -= 1.0
        p /= n
        params["W"] -= lr * (x.T @ p)
        params["b"] -= lr * p.sum(axis=0)
        return
    pre = x @ params["W1"] + params["b1"]
    h = np.tanh(pre)
    p = _softmax(h @ params["W2"] + params["b2"])
    p[np.arange(n), y] -= 1.0
    p /= n
    dh = p @ params["W2"].T * (1.0 - h * h)
    params["W2"] -= lr * (h.T @ p)
    params["b2"] -= lr * p.sum(axis=0)
    params["W1"] -= lr * (x.T @ dh)
    params["b1"] -= lr * dh.sum(axis=0)


def _train_single(
    x: np.ndarray,
    y: np.ndarray,
    k: int,
    spec: LearnerSpec,
    init_seed: int,
    order_seed: int,
) -> tuple[dict, float]:
    params = _init_params(spec, x.shape[1], k, RandomSource(init_seed).rng())
    order_rng = RandomSource(order_seed).rng()
    n = x.shape[0]
    for _ in range(spec.epochs):
        perm = order_rng.permutation(n)
        for start in range(0, n, spec.batch_size):
            batch = perm[start:start + spec.batch_size]
            _sgd_step(params, x[batch], y[batch], k, spec.lr)
    train_acc = float(np.mean(_logits(params, x).argmax(axis=1) == y))
    return params, train_acc


def _train_runs(
    task: SyntheticTask,
    spec: LearnerSpec,
    mode: str,
    seeds: Sequence[RunSeeds],
    split_data: bool,
) -> tuple[PredictionMatrix, LabelVector, tuple]:
    data_rs = RandomSource(seeds[0].data_seed)
    x_pool, y_pool = task.sample(task.n_train, data_rs.child(0))
    x_test, y_test = task.sample(task.n_test, data_rs.child(1))
    n_runs = len(seeds)
    if split_data:
        if n_runs != 2:
            # ensembles under data modes: independent half-size subsets per run
            subsets = [
                RandomSource(s.data_seed).child(100 + r).rng().permutation(task.n_train)[
                    : task.n_train // 2
                ]
                for r, s in enumerate(seeds)
            ]
        else:
            half = task.n_train // 2
            perm = data_rs.child(2).rng().permutation(task.n_train)
            subsets = [perm[:half], perm[half:2 * half]]
            assert not set(subsets[0]) & set(subsets[1]), "data halves must be disjoint"
    else:
        subsets = [np.arange(task.n_train) for _ in range(n_runs)]
        assert all(
            np.array_equal(np.sort(s), np.sort(subsets[0])) for s in subsets
        ), "non-split modes must train on identical example multisets"
    preds = np.zeros((task.n_test, n_runs), dtype=np.int64)
    accs = []
    for r, s in enumerate(seeds):
        idx = subsets[r]
        params, acc = _train_single(
            x_pool[idx], y_pool[idx], task.n_classes, spec, s.init_seed, s.order_seed
        )
        preds[:, r] = _logits(params, x_test).argmax(axis=1)
        accs.append(acc)
    low = [f"{a:.3f}" for a in accs if a < INTERPOLATION_THRESHOLD]
    if low:
        warnings.warn(
            f"{len(low)} of {n_runs} runs below train accuracy "
            f"{INTERPOLATION_THRESHOLD} ({', '.join(low)}); the near-interpolation "
            "regime is not reached",
            ConvergenceWarning,
            stacklevel=3,
        )
    matrix = PredictionMatrix(preds, n_classes=task.n_classes)
    return matrix, LabelVector(y_test), tuple(accs)


def train_run(
    task: SyntheticTask,
    spec: LearnerSpec,
    seeds: RunSeeds,
) -> np.ndarray:
    """Test-set predictions of a single run; a pure function of its seeds.

    Two runs with identical (init, order, data) seeds produce identical
    predictions, hence disagreement exactly 0 - the determinism every
    stochasticity mode builds on.
    """
    matrix, _, _ = _train_runs(task, spec, "samedata", [seeds], split_data=False)
    return matrix.labels[:, 0]


def train_pair(
    task: SyntheticTask,
    spec: LearnerSpec,
    cfg: Union[StochasticityConfig, str],
    rng=0,
) -> tuple[PredictionMatrix, LabelVector]:
    """Train two runs differing only in the sources the mode turns on.

    ``cfg`` is either a full StochasticityConfig or a mode name, in which
    case the run seeds are derived from ``rng``.  Returns the two runs'
    test-set predictions (M = 2 columns) and the test labels.  Runs whose
    train accuracy stays below the near-interpolation threshold emit a
    ConvergenceWarning but still return.
    """
    if isinstance(cfg, str):
        cfg = StochasticityConfig.from_mode(cfg, as_random_source(rng))
    matrix, labels, _ = _train_runs(task, spec, cfg.mode, cfg.run_seeds, cfg.split_data)
    return matrix, labels


@dataclass(frozen=True)
class SweepRow:
    """One trained pair: its stochasticity mode, config, and the two rates."""

    mode: str
    config_id: str
    pair_index: int
    test_err: float
    disagreement: float


def sweep(
    tasks: Sequence[SyntheticTask],
    specs: Sequence[LearnerSpec],
    modes: Sequence[str],
    n_pairs: int = 1,
    rng=0,
) -> list[SweepRow]:
    """Train pairs over the task x spec x mode grid.

    Each (task, spec, mode, pair) cell owns a derived random stream, so the
    table is reproducible and insensitive to iteration order.  The test
    error column is the first run's error, matching how disagreement would
    be used to estimate it.
    """
    if len(tasks) * len(specs) < 1 or n_pairs < 1:
        raise SizeError("need at least one task, spec and pair")
    source = as_random_source(rng)
    rows = []
    for (ti, task), (si, spec), (mi, mode) in itertools.product(
        enumerate(tasks), enumerate(specs), enumerate(modes)
    ):
        cid = f"task{ti}/{spec.model}/h{spec.hidden}/e{spec.epochs}/lr{spec.lr}/s{si}"
        for pair in range(n_pairs):
            child = source.child(ti).child(si).child(mi).child(pair)
            matrix, labels = train_pair(task, spec, mode, child)
            rows.append(
                SweepRow(
                    mode=mode,
                    config_id=cid,
                    pair_index=pair,
                    test_err=test_error(matrix, labels, 0),
                    disagreement=disagreement(matrix, 0, 1),
                )
            )
    return rows


@dataclass(frozen=True)
class ScatterSummary:
    """Scatter correlation per mode; degenerate inputs are flagged, not fatal."""

    mode: str
    n_points: int
    r_squared: Optional[float]
    kendall_tau: Optional[float]
    degenerate: bool = False


def summarize_scatter(rows: Sequence[SweepRow], average_pairs: int = 1) -> list[ScatterSummary]:
    """Scatter statistics per mode, optionally averaging pair replicates.

    With ``average_pairs = k``, consecutive groups of k pairs per config are
    averaged before computing correlations.  A constant column yields a
    summary flagged ``degenerate`` instead of an exception.
    """
    out = []
    for mode in sorted({r.mode for r in rows}):
        xs, ys = _scatter_points([r for r in rows if r.mode == mode], average_pairs)
        try:
            stats = scatter_stats(xs, ys)
            out.append(ScatterSummary(mode, len(xs), stats.r_squared, stats.kendall_tau))
        except DegenerateError:
            out.append(ScatterSummary(mode, len(xs), None, None, degenerate=True))
    return out


def _scatter_points(rows: Sequence[SweepRow], average_pairs: int) -> tuple[list, list]:
    if average_pairs < 1:
        raise SizeError("average_pairs must be >= 1")
    xs, ys = [], []
    by_config = {}
    for r in rows:
        by_config.setdefault(r.config_id, []).append(r)
    for cid in sorted(by_config):
        group = sorted(by_config[cid], key=lambda r: r.pair_index)
        for start in range(0, len(group) - average_pairs + 1, average_pairs):
            chunk = group[start:start + average_pairs]
            xs.append(float(np.mean([c.disagreement for c in chunk])))
            ys.append(float(np.mean([c.test_err for c in chunk])))
    return xs, ys


def normalized_deviation(test_err: float, dis: float) -> float:
    """|TestErr - Dis| / (0.5 (TestErr + Dis)); 0 when both rates are 0."""
    denom = 0.5 * (test_err + dis)
    if denom == 0.0:
        return 0.0
    return abs(test_err - dis) / denom


def mean_normalized_deviation(rows: Sequence[SweepRow], average_pairs: int = 1) -> float:
    """Mean normalized deviation over (optionally pair-averaged) estimates."""
    xs, ys = _scatter_points(rows, average_pairs)
    if not xs:
        raise SizeError("no complete pair groups to average")
    return float(np.mean([normalized_deviation(te, d) for te, d in zip(ys, xs)]))


@dataclass(frozen=True)
class EnsembleSweepResult:
    """Ensemble of M runs under one mode, with calibration at several sizes.

    ``cace_by_size[m]`` is the binned class-aggregated calibration error of
    the ensemble built from the first m runs; ``report`` carries the
    test-error/disagreement summary over all M runs.
    """

    mode: str
    n_models: int
    profile: ProbabilityProfile
    labels: LabelVector
    report: GdeReport
    cace_by_size: dict
    ece: float
    train_accuracies: tuple


def ensemble_sweep(
    task: SyntheticTask,
    spec: LearnerSpec,
    mode: str,
    n_models: int,
    rng=0,
    n_bins: int = 10,
    cace_sizes: Sequence[int] = (2, 5),
) -> EnsembleSweepResult:
    """Train M runs under one stochasticity mode and grade the ensemble.

    For the data-splitting modes each run beyond a pair draws its own
    half-size subset of the pool (M disjoint halves do not exist).
    """
    from .calibration import cace_binned, ece_binned
    from .core import ensemble_from_predictions

    if n_models < 2:
        raise SizeError(f"need at least 2 models, got {n_models}")
    source = as_random_source(rng)
    gen = source.rng()
    data = int(gen.integers(0, 2**63 - 1))
    split = mode in _SPLIT_MODES
    seeds = []
    init0 = int(gen.integers(0, 2**63 - 1))
    order0 = int(gen.integers(0, 2**63 - 1))
    for r in range(n_models):
        same_init = mode in ("diffdata", "difforder")
        same_order = mode in ("diffdata", "diffinit")
        seeds.append(
            RunSeeds(
                init_seed=init0 if same_init else int(gen.integers(0, 2**63 - 1)),
                order_seed=order0 if same_order else int(gen.integers(0, 2**63 - 1)),
                data_seed=data,
            )
        )
    matrix, labels, accs = _train_runs(task, spec, mode, seeds, split)
    sizes = sorted({min(s, n_models) for s in (*cace_sizes, n_models)})
    cace_by_size = {}
    for size in sizes:
        sub = PredictionMatrix(
            matrix.labels[:, :size], matrix.point_ids, matrix.n_classes
        )
        cace_by_size[size] = cace_binned(
            ensemble_from_predictions(sub), labels, n_bins
        )
    profile = ensemble_from_predictions(matrix)
    return EnsembleSweepResult(
        mode=mode,
        n_models=n_models,
        profile=profile,
        labels=labels,
        report=compute_gde_report(matrix, labels, source.child(999)),
        cace_by_size=cace_by_size,
        ece=ece_binned(profile, labels, n_bins),
        train_accuracies=accs,
    )


def calibrated_sampler_sweep(
    populations: Sequence[Population],
    n_points: int,
    rng=0,
) -> list[SweepRow]:
    """Scatter rows from the hypothesis-sampling learner on populations.

    For each population, draws ``n_points`` test points, then one label and
    two one-hot hypothesis predictions per point from the population's own
    distributions.  On calibrated populations the resulting scatter lies on
    the diagonal up to sampling error.
    """
    source = as_random_source(rng)
    rows = []
    for i, pop in enumerate(populations):
        gen = source.child(i).rng()
        atom = gen.choice(pop.n_atoms, size=n_points, p=pop.weights / pop.weights.sum())
        u_label = gen.random(n_points)
        u1 = gen.random(n_points)
        u2 = gen.random(n_points)
        cum_l = np.cumsum(pop.label_dist[atom], axis=1)
        cum_h = np.cumsum(pop.hhat[atom], axis=1)
        y = np.minimum((u_label[:, None] >= cum_l).sum(axis=1), pop.n_classes - 1)
        h1 = np.minimum((u1[:, None] >= cum_h).sum(axis=1), pop.n_classes - 1)
        h2 = np.minimum((u2[:, None] >= cum_h).sum(axis=1), pop.n_classes - 1)
        rows.append(
            SweepRow(
                mode="sampler",
                config_id=f"population{i}",
                pair_index=0,
                test_err=float(np.mean(h1 != y)),
                disagreement=float(np.mean(h1 != h2)),
            )
        )
    return rows


# (lr, epochs, batch_size, hidden) ladder from a single low-rate epoch up to
# interpolating-and-overfit wide nets; test error descends from roughly
# chance into the optimum and creeps back up, and disagreement tracks it.
_BUDGET_LADDER = (
    (0.02, 1, 16, 8), (0.04, 1, 16, 8), (0.07, 1, 16, 8), (0.05, 2, 16, 8),
    (0.08, 2, 16, 8), (0.12, 2, 16, 8), (0.10, 3, 16, 8), (0.10, 4, 16, 8),
    (0.10, 6, 16, 8), (0.10, 10, 16, 8), (0.10, 16, 16, 16), (0.15, 24, 16, 16),
    (0.20, 40, 16, 16), (0.20, 60, 16, 32), (0.30, 90, 16, 32), (0.30, 130, 16, 32),
    (0.30, 150, 16, 64), (0.50, 200, 16, 64), (0.50, 300, 16, 64), (0.80, 300, 8, 64),
)


def default_sweep_grid(rng=0, n_configs: int = 20) -> tuple[list, list]:
    """Default task and hyperparameter grid for scatter experiments.

    One moderately hard Gaussian mixture task (Bayes error around 0.2) and
    ``n_configs`` one-hidden-layer learners along a training-budget ladder,
    so test errors spread over a wide range while disagreement tracks them.
    """
    source = as_random_source(rng)
    task = SyntheticTask.random(
        n_classes=3,
        dim=12,
        separation=1.6,
        noise_scale=1.0,
        n_train=256,
        n_test=4096,
        rng=source.child(0),
    )
    ladder = list(_BUDGET_LADDER)
    while len(ladder) < n_configs:
        ladder.extend(
            (lr, e, b, h) for lr, e, b, h in _BUDGET_LADDER[: n_configs - len(ladder)]
        )
    grid = [
        LearnerSpec(model="one-hidden-layer", lr=lr, epochs=e, batch_size=b, hidden=h)
        for lr, e, b, h in ladder[:n_configs]
    ]
    return [task], grid
