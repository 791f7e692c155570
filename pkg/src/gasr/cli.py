"""Command line interface.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

import numpy as np

from . import __version__
from .data import ObservedMatrix, parse_targets, read_ratings, split
from .errors import ConfigError, DataError, NumericalError
from .evaluation import evaluate
from .gibbs import FactorState, predict_entries
from .posterior import recover_rank
from .runner import ExperimentCell, RunConfig, fit, run_missing_rate_experiment
from .synthetic import SyntheticSpec, generate_full
from .theory import run_trials

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3
_DELIMITERS = {"csv": ",", "movielens": "::", "tsv": "\t"}

logger = logging.getLogger("gasr")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _floats(text):
    return [float(x) for x in text.split(",") if x.strip()]


def _ints(text):
    return [int(x) for x in text.split(",") if x.strip()]


def _write(path, text):
    if path == "-":
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)


def _read_text(path):
    with open(path, encoding="utf-8") as fh:
        return fh.read()


def _predictions_csv(like: ObservedMatrix, rows, cols, values) -> str:
    pred = ObservedMatrix(like.m, like.n, rows, cols, values, like.row_ids, like.col_ids)
    return pred.to_csv(use_ids=like.row_ids is not None)


# ---------------------------------------------------------------------------
# subcommands

def cmd_synth(args):
    spec = SyntheticSpec(args.m, args.n, args.q, args.missing_rate, args.snr, args.seed, args.noise)
    synth = generate_full(spec)
    _write(args.observed, synth.observed.to_csv())
    if args.truth:
        np.savetxt(args.truth, synth.truth, delimiter=",", fmt="%.17g")
    if args.test:
        held = ~synth.mask if spec.missing_rate > 0 else np.ones_like(synth.mask)
        rows, cols = np.nonzero(held)
        test = ObservedMatrix(spec.m, spec.n, rows, cols, synth.truth[rows, cols])
        _write(args.test, test.to_csv())
    logger.info("wrote %d observed entries of a %dx%d rank-%d matrix",
                synth.observed.nnz, spec.m, spec.n, spec.q)
    return EXIT_OK


def _config(args) -> RunConfig:
    overrides = {
        "r": args.r, "sweeps": args.sweeps, "burn_in": args.burn_in, "seed": args.seed,
        "averaging": args.averaging, "em_window": args.em_window, "em_enabled": args.em,
        "init_norm": args.init_norm,
    }
    if args.config:
        return RunConfig.from_json(args.config, overrides)
    return RunConfig.from_dict({k: v for k, v in overrides.items() if v is not None})


def cmd_fit(args):
    config = _config(args)
    data = read_ratings(args.data, args.format, duplicates=args.duplicates)
    test = None
    if args.split:
        train, test = split(data, [1.0 - args.split, args.split], config.seed)
    else:
        train = data
    if args.targets:
        test = parse_targets(_read_text(args.targets), train, delimiter=_DELIMITERS[args.format])
    result = fit(train, config, targets=test, keep_samples=bool(args.samples))
    report = result.report
    report.modes["split"] = (f"global uniform {1 - args.split:g}/{args.split:g}" if args.split else "none")
    if test is not None:
        pred = result.accumulator.mean()
        value_range = tuple(args.range) if args.range else data.value_range()
        report.metrics = evaluate(pred, test, value_range).to_dict()
        if args.round:
            levels = np.arange(np.ceil(value_range[0]), np.floor(value_range[1]) + 1)
            report.metrics["rounded_metrics"] = evaluate(pred, test, value_range, round_to=levels).to_dict()
        if args.predictions:
            _write(args.predictions, _predictions_csv(train, test.rows, test.cols, pred))
    elif args.predictions:
        dense = result.accumulator.mean()
        rows, cols = np.indices(dense.shape).reshape(2, -1)
        _write(args.predictions, _predictions_csv(train, rows, cols, dense.reshape(-1)))
    if args.diagnostics:
        _write(args.diagnostics, report.trace_csv())
    if args.samples:
        np.savez_compressed(
            args.samples,
            d=np.stack([s.d for s in result.samples]),
            U=np.stack([s.U for s in result.samples]),
            V=np.stack([s.V for s in result.samples]),
            row_ids=np.array(train.row_ids if train.row_ids else range(train.m), dtype=str),
            col_ids=np.array(train.col_ids if train.col_ids else range(train.n), dtype=str),
        )
    _write(args.report, report.to_json() + "\n")
    return EXIT_OK


def cmd_predict(args):
    with np.load(args.samples) as z:
        d, U, V = z["d"], z["U"], z["V"]
        row_ids, col_ids = tuple(z["row_ids"].tolist()), tuple(z["col_ids"].tolist())
    like = ObservedMatrix(U.shape[2], V.shape[2], [], [], [], row_ids, col_ids)
    targets = parse_targets(_read_text(args.targets), like)
    total = np.zeros(targets.nnz)
    for k in range(len(d)):
        state = FactorState(d[k], U[k], V[k], np.ones(len(d[k])))
        total += predict_entries(state, targets.rows, targets.cols)
    _write(args.out, _predictions_csv(like, targets.rows, targets.cols, total / len(d)))
    return EXIT_OK


def cmd_eval(args):
    truth = read_ratings(args.truth, "csv")
    pred = parse_targets(_read_text(args.predictions), truth)
    value_range = tuple(args.range) if args.range else truth.value_range()
    out = {"raw": evaluate(pred, truth, value_range).to_dict()}
    if args.round:
        out["rounded"] = evaluate(pred, truth, value_range, round_to=_floats(args.round)).to_dict()
    print(json.dumps(out, indent=2))
    return EXIT_OK


def cmd_rank(args):
    if args.report:
        with open(args.report, encoding="utf-8") as fh:
            values = json.load(fh)["d_mean"]
    else:
        values = _floats(args.values)
    est = recover_rank(values)
    print(json.dumps({"rank": est.rank, "w": est.w, "kept": est.kept_values.tolist()}))
    return EXIT_OK


def cmd_check(args):
    summary = run_trials(args.trials, args.m, args.n, args.r, args.seed)
    print(f"nuclear bound: {summary.bound_holds}/{summary.trials} pass "
          f"({summary.strict} strict, max lhs-rhs {summary.max_violation:.3e})")
    print(f"svd-form equality: {summary.equality_holds}/{summary.equality_cases} pass "
          f"(max gap {summary.max_equality_gap:.3e})")
    print("PASS" if summary.passed else "FAIL")
    return EXIT_OK if summary.passed else EXIT_NUMERICAL


def cmd_experiment(args):
    cells = [ExperimentCell(args.m, args.n, args.r, args.q, mr) for mr in args.missing_rates]
    table = run_missing_rate_experiment(cells, seeds=args.seeds, sweeps=args.sweeps,
                                        snr=args.snr, noise=args.noise)
    if args.out:
        _write(args.out, json.dumps(table, indent=2) + "\n")
    print(f"{'missing':>8} {'rmse(Z)':>16} {'rmse(X)':>16} {'relative':>16}  ranks")
    for row in table:
        print(f"{row['missing_rate']:>8.0%} "
              f"{row['mean_rmse']:>8.4f}±{row['std_rmse']:<7.4f} "
              f"{row['mean_rmse_noisy']:>8.4f}±{row['std_rmse_noisy']:<7.4f} "
              f"{row['mean_relative']:>8.4f}±{row['std_relative']:<7.4f}  {row['ranks']}")
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="gasr", description="Bayesian matrix completion by Gibbs sampling "
                                          "under adaptive relaxed spectral regularization.")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="generate a synthetic low-rank problem")
    s.add_argument("--m", type=int, required=True)
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--q", type=int, required=True)
    s.add_argument("--missing-rate", type=float, default=0.0)
    s.add_argument("--snr", type=float, default=1.0)
    s.add_argument("--noise", choices=["frobenius", "standard"], default="frobenius")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--observed", required=True, help="observed entries CSV ('-' for stdout)")
    s.add_argument("--truth", help="dense noiseless matrix CSV")
    s.add_argument("--test", help="held-out cells with noiseless values, as CSV triplets")
    s.set_defaults(func=cmd_synth)

    f = sub.add_parser("fit", help="run the sampler on a ratings file")
    f.add_argument("--data", required=True)
    f.add_argument("--format", choices=["csv", "movielens", "tsv"], default="csv")
    f.add_argument("--duplicates", choices=["error", "keep_first"], default="error")
    f.add_argument("--config", help="JSON file with RunConfig keys")
    f.add_argument("--r", type=int)
    f.add_argument("--sweeps", type=int)
    f.add_argument("--burn-in", type=int)
    f.add_argument("--seed", type=int)
    f.add_argument("--averaging")
    f.add_argument("--em-window", type=int)
    f.add_argument("--init-norm", type=float)
    f.add_argument("--em", action=argparse.BooleanOptionalAction, default=None)
    f.add_argument("--split", type=float, help="hold out this fraction as a test set")
    f.add_argument("--targets", help="CSV triplets of cells to predict and score")
    f.add_argument("--range", type=float, nargs=2, metavar=("MIN", "MAX"))
    f.add_argument("--round", action="store_true", help="also score predictions rounded to integers")
    f.add_argument("--report", default="-")
    f.add_argument("--predictions")
    f.add_argument("--diagnostics")
    f.add_argument("--samples", help="save retained samples (.npz) for 'predict'")
    f.set_defaults(func=cmd_fit)

    pr = sub.add_parser("predict", help="posterior-mean predictions from saved samples")
    pr.add_argument("--samples", required=True)
    pr.add_argument("--targets", required=True)
    pr.add_argument("--out", default="-")
    pr.set_defaults(func=cmd_predict)

    e = sub.add_parser("eval", help="score predictions against held-out values")
    e.add_argument("--predictions", required=True)
    e.add_argument("--truth", required=True)
    e.add_argument("--range", type=float, nargs=2, metavar=("MIN", "MAX"))
    e.add_argument("--round", help="comma-separated rating levels to round to")
    e.set_defaults(func=cmd_eval)

    rk = sub.add_parser("rank", help="recover the rank from a report or a list of values")
    g = rk.add_mutually_exclusive_group(required=True)
    g.add_argument("--report")
    g.add_argument("--values")
    rk.set_defaults(func=cmd_rank)

    c = sub.add_parser("check", help="nuclear-norm bound trial battery")
    c.add_argument("--trials", type=int, default=1000)
    c.add_argument("--m", type=int, default=20)
    c.add_argument("--n", type=int, default=20)
    c.add_argument("--r", type=int, default=5)
    c.add_argument("--seed", type=int, default=0)
    c.set_defaults(func=cmd_check)

    x = sub.add_parser("experiment", help="missing-rate experiment on synthetic data")
    x.add_argument("--m", type=int, default=500)
    x.add_argument("--n", type=int, default=500)
    x.add_argument("--r", type=int, default=30)
    x.add_argument("--q", type=int, default=5)
    x.add_argument("--missing-rates", type=_floats, default=[0.9, 0.8, 0.5, 0.0])
    x.add_argument("--seeds", type=_ints, default=[0, 1, 2])
    x.add_argument("--sweeps", type=int, default=100)
    x.add_argument("--snr", type=float, default=1.0)
    x.add_argument("--noise", choices=["frobenius", "standard"], default="frobenius")
    x.add_argument("--out")
    x.set_defaults(func=cmd_experiment)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ValueError) as exc:
        if isinstance(exc, DataError):
            print(f"data error: {exc}", file=sys.stderr)
            return EXIT_DATA
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, KeyError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, ArithmeticError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
