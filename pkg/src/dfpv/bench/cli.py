"""Command-line entry point: ``dfpv <subcommand> [options]``.

Exit status is 0 on success, 1 for invalid input (bad flags, config or
arguments) and 2 when a numerical routine fails.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

from ..data import read_csv, write_csv
from ..datagen import DGPS, GroundTruth, generate, ground_truth, sidecar
from ..errors import DegenerateBandwidthError, DfpvError
from ..two_stage import FixedFeatureFitter, build_dictionaries, tune_lambdas
from .config import ESTIMATORS, POLICIES, ExperimentConfig, load_config
from .experiment import (
    BASELINE,
    fit_estimator,
    load_model,
    make_policy,
    ope_truth,
    ope_value,
    run_experiment,
    run_id,
    structural_mse,
)

logger = logging.getLogger("dfpv")

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse exits with status 2 on bad usage; here that status means a numerical failure."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _config(args, **overrides) -> ExperimentConfig:
    extra = {k: v for k, v in overrides.items() if v is not None}
    if args.config:
        return load_config(args.config, extra)
    return ExperimentConfig.from_dict(extra)


def _out(args) -> Path:
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _data(args, config: ExperimentConfig, n_eval: int = 0):
    if getattr(args, "data", None):
        return read_csv(args.data)
    return generate(config.dgp, args.size, args.size, args.seed, n_eval=n_eval, **config.dgp_options())


def cmd_gen(args) -> int:
    config = _config(args, dgp=args.dgp)
    data = generate(config.dgp, args.size, args.size, args.seed, n_eval=args.n_eval, **config.dgp_options())
    path = _out(args) / f"{config.dgp}-n{args.size}-s{args.seed}.csv"
    write_csv(data, path, sidecar(config.dgp, args.seed, data, **config.dgp_options()))
    print(path)
    return EXIT_OK


def cmd_train(args) -> int:
    config = _config(args, dgp=args.dgp)
    data = _data(args, config)
    model = fit_estimator(args.estimator, data, config, args.seed)
    mdir = _out(args) / "models"
    mdir.mkdir(exist_ok=True)
    path = mdir / f"{run_id(config.dgp, args.estimator, args.size, args.seed)}.json"
    path.write_text(json.dumps(model.to_dict(), sort_keys=True) + "\n")
    print(path)
    return EXIT_OK


def cmd_eval(args) -> int:
    if not args.model:
        raise UsageError("eval needs --model")
    model = load_model(json.loads(Path(args.model).read_text()))
    if args.truth:
        truth = GroundTruth.read_csv(args.truth)
    else:
        config = _config(args, dgp=args.dgp)
        truth = ground_truth(config.dgp, n_mc=config.n_mc, seed=config.truth_seed, **config.dgp_options())
    print(repr(structural_mse(model, truth)))
    return EXIT_OK


def cmd_ope(args) -> int:
    config = _config(args, dgp="demand", policies=[args.policy] if args.policy else None)
    if config.dgp != "demand":
        raise UsageError("ope is defined for the demand design only")
    data = generate("demand", args.size, args.size, args.seed, n_eval=args.size)
    model = fit_estimator(args.estimator, data, config, args.seed)
    truth = ope_truth(config)
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["policy", "value_hat", "value_true", "sq_error"])
    for p in config.policies:
        v = ope_value(model, make_policy(p), data)
        w.writerow([p, repr(v), repr(truth[p][0]), repr((v - truth[p][0]) ** 2)])
    return EXIT_OK


def cmd_tune(args) -> int:
    config = _config(args, dgp=args.dgp)
    data = _data(args, config)
    fitter = FixedFeatureFitter(data, build_dictionaries(data, config.n_centers, args.seed))
    kwargs = {} if config.tune is None else {"grid": config.tune}
    result = tune_lambdas(data, fit=lambda _, a, b: fitter.fit(a, b), **kwargs)
    if args.out:
        path = _out(args) / "tune.csv"
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["lambda1", "lambda2", "stage1_oos", "stage2_oos"])
            w.writerows([repr(x) for x in row] for row in result.scores)
    print(f"lambda1={result.lambda1!r} lambda2={result.lambda2!r}")
    return EXIT_OK


def cmd_bench(args) -> int:
    if not args.config:
        raise UsageError("bench needs --config")
    config = load_config(args.config)
    output = run_experiment(config, args.out)
    failed = sum(not r.ok for r in output.results)
    print(f"{len(output.results)} runs, {failed} failed; results in {output.files['results'].parent}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--dgp", choices=DGPS, default=None, help="data-generating process")
    common.add_argument("--size", type=int, default=1000, help="observations per stage")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--estimator", choices=ESTIMATORS + (BASELINE,), default="dfpv")
    common.add_argument("--config", help="TOML or JSON experiment config")
    common.add_argument("--out", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="dfpv", description="Proxy causal learning with learned or fixed features.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True
    p = sub.add_parser("gen", parents=[common], help="write a synthetic dataset as CSV plus JSON sidecar")
    p.add_argument("--n-eval", type=int, default=0, help="size of the policy-evaluation split (demand only)")
    p.set_defaults(func=cmd_gen)
    p = sub.add_parser("train", parents=[common], help="fit one model and write it as JSON")
    p.add_argument("--data", help="dataset CSV written by gen (default: generate from --dgp/--size/--seed)")
    p.set_defaults(func=cmd_train)
    p = sub.add_parser("eval", parents=[common], help="structural-function MSE of a saved model")
    p.add_argument("--model", help="model JSON written by train or bench")
    p.add_argument("--truth", help="truth CSV (default: recompute for --dgp)")
    p.set_defaults(func=cmd_eval)
    p = sub.add_parser("ope", parents=[common], help="off-policy evaluation on the demand design")
    p.add_argument("--policy", choices=POLICIES, help="evaluate one policy (default: all)")
    p.set_defaults(func=cmd_ope)
    p = sub.add_parser("tune", parents=[common], help="cross-stage lambda grid search (fixed features)")
    p.add_argument("--data", help="dataset CSV written by gen")
    p.set_defaults(func=cmd_tune)
    p = sub.add_parser("bench", parents=[common], help="run a full experiment from --config")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_INVALID
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ArithmeticError, DegenerateBandwidthError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (UsageError, DfpvError, ValueError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
