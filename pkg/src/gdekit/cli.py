"""Command-line interface.

Subcommands: ``disagree`` (pairwise disagreement, plus test errors when
labels are given), ``calibrate`` (curves and calibration errors),
``verify-theory`` (the identity/bound checks on exact populations),
``simulate`` (stochastic-learner sweeps) and ``report`` (merge artifacts).

Exit codes: 0 success, 1 validation or usage error, 2 theory-check failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import calibration, io, metrics, simulate, theory
from .core import Population, RandomSource, ensemble_from_predictions
from .errors import GdekitError


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _add_common(p, bins=False, bootstrap=False):
    p.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.add_argument("--out", type=Path, default=None, help="output path (default stdout)")
    if bins:
        p.add_argument("--bins", type=int, default=10, help="number of confidence bins")
    if bootstrap:
        p.add_argument("--bootstrap", type=int, default=1000, help="bootstrap resamples")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="gdekit", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("disagree", help="pairwise disagreement of a prediction matrix")
    p.add_argument("--preds", type=Path, required=True)
    p.add_argument("--preds-format", choices=("wide-csv", "long-csv"), default="wide-csv")
    p.add_argument("--labels", type=Path, default=None)
    _add_common(p, bootstrap=True)

    p = sub.add_parser("calibrate", help="calibration curves, CACE and ECE")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--probs", type=Path)
    src.add_argument("--preds", type=Path)
    src.add_argument("--population", type=Path)
    p.add_argument("--preds-format", choices=("wide-csv", "long-csv"), default="wide-csv")
    p.add_argument("--labels", type=Path, default=None)
    _add_common(p, bins=True)

    p = sub.add_parser("verify-theory", help="run the identity and bound checks")
    p.add_argument("--sweeps", type=int, default=200, help="populations per randomized check")
    _add_common(p)

    p = sub.add_parser("simulate", help="stochastic-learner disagreement sweeps")
    p.add_argument("--mode", choices=simulate.MODES, required=True)
    p.add_argument("--configs", type=int, default=20, help="hyperparameter settings")
    p.add_argument("--pairs", type=int, default=1, help="pairs per setting")
    p.add_argument("--ensemble", type=int, default=0, help="also grade an ensemble of this many runs")
    _add_common(p, bins=True)

    p = sub.add_parser("report", help="merge command outputs into one report")
    p.add_argument("--merge", type=Path, nargs="+", required=True, help="report JSONs, later files win")
    _add_common(p)
    return parser


def _emit(args, doc: io.ReportDocument, csv_writer=None) -> None:
    if args.format == "csv" and csv_writer is not None:
        if args.out is None:
            csv_writer(sys.stdout)
        else:
            with open(args.out, "w", newline="") as fh:
                csv_writer(fh)
        return
    text = doc.to_json()
    if args.out is None:
        sys.stdout.write(text)
    else:
        Path(args.out).write_text(text)


def _cmd_disagree(args) -> int:
    m = io.load_predictions(args.preds, args.preds_format)
    inputs = {str(args.preds): io.file_digest(args.preds)}
    y = None
    if args.labels is not None:
        y = io.load_labels(args.labels)
        inputs[str(args.labels)] = io.file_digest(args.labels)
    report = metrics.compute_gde_report(
        m, y, rng=RandomSource(args.seed), n_resamples=args.bootstrap
    )
    pd = metrics.pairwise_disagreement(m)
    doc = io.ReportDocument(
        inputs=inputs,
        disagreement={
            "matrix": [[float(v) for v in row] for row in pd.matrix],
            "mean_over_pairs": pd.mean_over_pairs,
            "std_over_pairs": report.dis_std,
            "bootstrap_std": report.bootstrap_std_dis,
        },
    )
    if y is not None:
        errs = metrics.per_model_test_errors(m, y)
        doc.test_errors = [float(e) for e in errs]
        doc.gde = {
            "test_err_mean": report.test_err_mean,
            "test_err_std": report.test_err_std,
            "bootstrap_std_test": report.bootstrap_std_test,
            "dis_mean": report.dis_mean,
            "dis_std": report.dis_std,
            "bootstrap_std_dis": report.bootstrap_std_dis,
            "gap": report.gap,
        }

    def write_csv(fh):
        import csv as _csv

        w = _csv.writer(fh)
        w.writerow(["model_i", "model_j", "disagreement"])
        for i in range(pd.n_models):
            for j in range(i + 1, pd.n_models):
                w.writerow([i, j, repr(float(pd.matrix[i, j]))])

    _emit(args, doc, write_csv)
    return 0


def _cmd_calibrate(args) -> int:
    inputs = {}
    doc = io.ReportDocument(inputs=inputs)
    if args.population is not None:
        pop = io.load_population(args.population)
        inputs[str(args.population)] = io.file_digest(args.population)
        ete = metrics.expected_test_error(pop)
        edr = metrics.expected_disagreement(pop)
        curves = [calibration.class_aggregated_curve(pop, n_bins=args.bins)]
        doc.calibration = {
            "ete": ete,
            "edr": edr,
            "gap": abs(ete - edr),
            "cace_exact": calibration.cace_exact(pop),
            "cace_binned": calibration.cace_binned(pop, n_bins=args.bins),
            "cace_refined": calibration.cace_refined(pop),
            "max_classwise_deviation": calibration.max_classwise_deviation(pop),
        }
    else:
        if args.labels is None:
            raise GdekitError("--labels is required with --probs/--preds")
        y = io.load_labels(args.labels)
        inputs[str(args.labels)] = io.file_digest(args.labels)
        if args.probs is not None:
            profile = io.load_probabilities(args.probs)
            inputs[str(args.probs)] = io.file_digest(args.probs)
        else:
            m = io.load_predictions(args.preds, args.preds_format)
            inputs[str(args.preds)] = io.file_digest(args.preds)
            profile = ensemble_from_predictions(m)
        curves = [
            calibration.class_aggregated_curve(profile, y, n_bins=args.bins),
            calibration.top_class_curve(profile, y, n_bins=args.bins),
        ]
        doc.calibration = {
            "cace_binned": calibration.cace_binned(profile, y, n_bins=args.bins),
            "cace_refined": calibration.cace_refined(profile, y, n_bins=args.bins),
            "ece_binned": calibration.ece_binned(profile, y, n_bins=args.bins),
        }
    doc.curves = [io.curve_to_dict(c) for c in curves]

    def write_csv(fh):
        import csv as _csv

        w = _csv.writer(fh)
        w.writerow(["bin_lower", "bin_upper", "mean_confidence", "accuracy", "mass"])
        for b in curves[0].bins:
            w.writerow([repr(b.lower), repr(b.upper), repr(b.mean_confidence), repr(b.accuracy), repr(b.mass)])

    _emit(args, doc, write_csv)
    return 0


def run_theory_checks(seed: int = 0, sweeps: int = 200) -> dict:
    """Run every identity/bound check; returns a JSON-able pass/fail report."""
    rs = RandomSource(seed)
    checks = []

    def add(name, passed, **details):
        checks.append({"name": name, "pass": bool(passed), **details})

    worst = 0.0
    for i in range(sweeps):
        gen = rs.child(i).rng()
        k = int(gen.integers(2, 11))
        pop = theory.gen_classwise_calibrated(k, int(gen.integers(1, 101)), rs.child(i).child(1))
        worst = max(worst, theory.check_gde(pop).gap)
    add("classwise_calibration_implies_gde", worst <= theory.THEOREM_TOL, max_gap=worst, sweeps=sweeps)

    worst, min_dev = 0.0, 1.0
    failures = 0
    for i in range(sweeps):
        gen = rs.child(10_000 + i).rng()
        k = int(gen.integers(3, 7))
        try:
            pop = theory.gen_aggregated_not_classwise(k, rs.child(10_000 + i).child(1))
        except GdekitError:
            failures += 1
            continue
        worst = max(worst, theory.check_gde(pop).gap)
        min_dev = min(min_dev, calibration.max_classwise_deviation(pop))
    add(
        "class_aggregated_calibration_implies_gde",
        worst <= theory.THEOREM_TOL and min_dev >= 0.01 and failures == 0,
        max_gap=worst,
        min_classwise_deviation=min_dev,
        construction_failures=failures,
    )

    # ETE and EDR must coincide bitwise on every level set; they also equal
    # 2q(1-q) bitwise wherever q is a dyadic rational (exact float products),
    # and to within representation rounding on the decimal grid.
    identity_ok = True
    worst = 0.0
    for q in [i / 10 for i in range(11)] + [i / 8 for i in range(9)]:
        pop = Population(
            weights=np.array([1.0]),
            hhat=np.array([[q, 1.0 - q]]),
            label_dist=np.array([[q, 1.0 - q]]),
        )
        ete = metrics.expected_test_error(pop)
        edr = metrics.expected_disagreement(pop)
        identity_ok &= ete == edr
        worst = max(worst, abs(ete - 2.0 * q * (1.0 - q)))
        if (q * 8) == int(q * 8):
            identity_ok &= ete == 2.0 * q * (1.0 - q)
    add("binary_level_set_identity", identity_ok and worst <= 1e-15, max_error=worst)

    bound_ok = True
    worst_violation = 0.0
    for i in range(sweeps):
        gen = rs.child(20_000 + i).rng()
        k = int(gen.integers(2, 7))
        pop = theory.gen_random_population(k, int(gen.integers(1, 51)), rs.child(20_000 + i).child(1))
        res = theory.check_deviation_bound(pop)
        bound_ok &= res.ok and res.ok_refined
        worst_violation = max(worst_violation, res.gap - res.refined_cace)
    add("deviation_bound", bound_ok, sweeps=sweeps, worst_gap_minus_refined=worst_violation)

    pop = theory.uncalibrated_gde_population(0.25, 0.0)
    res = theory.check_gde(pop)
    cace = calibration.cace_exact(pop)
    calibrated = theory.uncalibrated_gde_population(0.1, 0.2)
    add(
        "gde_without_calibration",
        res.holds
        and abs(metrics.expected_test_error(pop) - 0.25) <= theory.THEOREM_TOL
        and abs(cace - 0.35) <= theory.THEOREM_TOL
        and calibration.cace_exact(calibrated) <= theory.THEOREM_TOL,
        gap=res.gap,
        cace=cace,
    )

    pop = theory.easy_hard_population(1.0, 10)
    add(
        "easy_hard_pointwise_gde",
        metrics.expected_test_error(pop) == 0.9 and metrics.expected_disagreement(pop) == 0.9,
        ete=metrics.expected_test_error(pop),
        edr=metrics.expected_disagreement(pop),
    )

    violations = 0
    for i in range(sweeps):
        gen = rs.child(30_000 + i).rng()
        hd, labels = theory.gen_random_hypothesis_distribution(
            K=int(gen.integers(2, 7)),
            n_hypotheses=int(gen.integers(2, 11)),
            n_points=int(gen.integers(2, 101)),
            rng=rs.child(30_000 + i).child(1),
        )
        cert = theory.variance_certificate(hd, labels)
        if not cert.bound_holds:
            violations += 1
    add("disagreement_variance_bound", violations == 0, sweeps=sweeps, violations=violations)

    pop = theory.gen_classwise_calibrated(5, 20, rs.child(40_000))
    est = theory.sampled_gde_gap(pop, n_pairs=10_000, rng=rs.child(40_001))
    add(
        "calibrated_sampler_gde",
        abs(est.disagreement - est.test_error) <= 3.0 * est.stderr,
        disagreement=est.disagreement,
        test_error=est.test_error,
        stderr=est.stderr,
    )

    return {
        "schema_version": io.SCHEMA_VERSION,
        "seed": seed,
        "checks": checks,
        "all_pass": all(c["pass"] for c in checks),
    }


def _cmd_verify_theory(args) -> int:
    result = run_theory_checks(args.seed, args.sweeps)
    doc = io.ReportDocument(theory=result)
    _emit(args, doc)
    ok = result["all_pass"]
    if not ok:
        failed = [c["name"] for c in result["checks"] if not c["pass"]]
        print(f"theory checks failed: {', '.join(failed)}", file=sys.stderr)
    return 0 if ok else 2


def _cmd_simulate(args) -> int:
    rs = RandomSource(args.seed)
    tasks, specs = simulate.default_sweep_grid(rs.child(0), n_configs=args.configs)
    rows = simulate.sweep(tasks, specs, [args.mode], n_pairs=args.pairs, rng=rs.child(1))
    summaries = simulate.summarize_scatter(rows)
    doc = io.ReportDocument(
        scatter=[
            {
                "mode": s.mode,
                "n_points": s.n_points,
                "r_squared": s.r_squared,
                "kendall_tau": s.kendall_tau,
                "degenerate": s.degenerate,
            }
            for s in summaries
        ]
    )
    if args.ensemble >= 2:
        res = simulate.ensemble_sweep(
            tasks[0], specs[0], args.mode, args.ensemble, rs.child(2), n_bins=args.bins
        )
        doc.calibration = {
            "cace_by_size": {str(k): v for k, v in res.cace_by_size.items()},
            "ece_binned": res.ece,
        }
        doc.gde = {
            "test_err_mean": res.report.test_err_mean,
            "dis_mean": res.report.dis_mean,
            "gap": res.report.gap,
        }

    def write_csv(fh):
        import csv as _csv

        w = _csv.writer(fh)
        w.writerow(["x", "y", "group", "bootstrap_std"])
        for r in rows:
            w.writerow([repr(r.disagreement), repr(r.test_err), f"{r.mode}/{r.config_id}", ""])

    _emit(args, doc, write_csv)
    return 0


def _cmd_report(args) -> int:
    merged = io.ReportDocument()
    for path in args.merge:
        doc = io.load_report(path)
        doc.inputs = {**doc.inputs, str(path): io.file_digest(path)}
        merged = merged.merged_with(doc)
    _emit(args, merged)
    return 0


_COMMANDS = {
    "disagree": _cmd_disagree,
    "calibrate": _cmd_calibrate,
    "verify-theory": _cmd_verify_theory,
    "simulate": _cmd_simulate,
    "report": _cmd_report,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except GdekitError as exc:
        print(f"gdekit {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
