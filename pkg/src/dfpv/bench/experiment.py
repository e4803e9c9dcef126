"""Multi-seed experiments: structural-function MSE and off-policy evaluation.

Every run is a pure function of (config, size, seed, estimator). Runs may be
spread over a process pool; results are gathered in task order and all files
are written by the collecting process.
"""
from __future__ import annotations

import csv
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from ..causal import Policy, eval_structural, estimate_value, policy_contexts, structural_estimate
from ..data import ObservationSet
from ..datagen import (
    GroundTruth,
    demand_outcome_population_mean,
    gen_demand,
    generate,
    ground_truth,
    ope_truth_mc,
)
from ..errors import DfpvError, InvalidArgumentError
from ..features import RbfDictionary, build_rbf_dictionary, rbf_features
from ..two_stage import (
    FixedFeatureFitter,
    build_dictionaries,
    fit_stage2_weights,
    model_from_dict,
    train_dfpv,
    tune_lambdas,
)
from .config import ExperimentConfig

logger = logging.getLogger(__name__)

BASELINE = "direct_ridge"
CONSTANT = "constant"
RESULT_COLUMNS = ["dgp", "estimator", "size", "seed", "oos_mse", "wall_time_s", "l1", "l2", "lambda1", "lambda2"]
OPE_COLUMNS = ["dgp", "estimator", "policy", "size", "seed", "value_hat", "value_true", "sq_error", "wall_time_s", "lambda1", "lambda2"]
SUMMARY_COLUMNS = ["dgp", "estimator", "metric", "size", "n_ok", "n_failed", "median", "q25", "q75"]
BASELINE_LAMBDAS = (1e-4, 1e-3, 1e-2, 1e-1, 1.0, 10.0)


def run_id(dgp: str, estimator: str, size: int, seed: int, policy: Optional[str] = None) -> str:
    rid = f"{dgp}-{estimator}-n{size}-s{seed}"
    return rid if policy is None else f"{rid}-{policy}"


@dataclass
class RunResult:
    dgp: str
    estimator: str
    size: int
    seed: int
    oos_mse: float
    wall_time_s: float
    final_losses: Tuple[float, float] = (float("nan"), float("nan"))
    lambda_used: Tuple[float, float] = (float("nan"), float("nan"))
    error: Optional[str] = None

    def __post_init__(self):
        if self.error is None and not (self.oos_mse >= 0):
            raise InvalidArgumentError(f"oos_mse must be nonnegative, got {self.oos_mse}")

    @property
    def ok(self) -> bool:
        return self.error is None

    @property
    def run_id(self) -> str:
        return run_id(self.dgp, self.estimator, self.size, self.seed)


@dataclass
class OpeResult:
    dgp: str
    estimator: str
    policy: str
    size: int
    seed: int
    value_hat: float
    value_true: float
    wall_time_s: float
    lambda_used: Tuple[float, float] = (float("nan"), float("nan"))
    error: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.error is None

    @property
    def sq_error(self) -> float:
        return (self.value_hat - self.value_true) ** 2

    @property
    def run_id(self) -> str:
        return run_id(self.dgp, self.estimator, self.size, self.seed, self.policy)


@dataclass
class SummaryRow:
    dgp: str
    estimator: str
    metric: str
    size: int
    n_ok: int
    n_failed: int
    median: float
    q25: float
    q75: float


@dataclass
class ExperimentOutput:
    results: list
    summary: List[SummaryRow]
    files: Dict[str, Path] = field(default_factory=dict)


# -- direct-regression baseline -------------------------------------------------


@dataclass
class DirectRidgeModel:
    """Confounded baseline: ridge of ``Y`` on RBF features of the treatment only.

    The outcome is centered first, so the intercept is unpenalized as for DFPV.
    """

    dictionary: RbfDictionary
    u: np.ndarray
    lambda2: float
    y_offset: float = 0.0

    estimator = BASELINE

    def predict(self, a) -> np.ndarray:
        a = np.asarray(a, dtype=np.float64)
        if a.ndim == 1:
            a = a[:, None] if self.dictionary.input_dim == 1 else a[None, :]
        return self.y_offset + rbf_features(a, self.dictionary) @ self.u

    def to_dict(self) -> dict:
        return {
            "estimator": BASELINE,
            "dictionary": self.dictionary.to_dict(),
            "u": self.u.tolist(),
            "lambda2": self.lambda2,
            "y_offset": self.y_offset,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DirectRidgeModel":
        return cls(RbfDictionary.from_dict(d["dictionary"]), np.asarray(d["u"], dtype=np.float64), float(d["lambda2"]), float(d["y_offset"]))


def fit_direct_ridge(data: ObservationSet, n_centers: int = 30, seed: int = 0, lambdas: Sequence[float] = BASELINE_LAMBDAS) -> DirectRidgeModel:
    """Fit on stage 2; pick lambda by squared error on stage-1 outcomes when they exist.

    Ties go to the larger lambda.
    """
    dictionary = build_rbf_dictionary(data.a2, n_centers, seed)
    X = rbf_features(data.a2, dictionary)
    offset = float(np.mean(data.y2))
    yc = data.y2 - offset
    lambdas = sorted(set(float(l) for l in lambdas))
    if not lambdas:
        raise InvalidArgumentError("the baseline lambda grid is empty")
    if data.y1 is None or len(lambdas) == 1:
        lam = lambdas[-1] if data.y1 is None else lambdas[0]
    else:
        Xh = rbf_features(data.a1, dictionary)
        scores = [(float(np.mean((data.y1 - offset - Xh @ fit_stage2_weights(X, yc, l)) ** 2)), -l) for l in lambdas]
        lam = -min(scores)[1]
    return DirectRidgeModel(dictionary, fit_stage2_weights(X, yc, lam), lam, offset)


# -- model helpers ---------------------------------------------------------------


def load_model(d: dict):
    """Inverse of ``model.to_dict()`` for any estimator the harness writes."""
    if d.get("estimator") == BASELINE:
        return DirectRidgeModel.from_dict(d)
    return model_from_dict(d)


def predict_structural(model, grid) -> np.ndarray:
    grid = np.asarray(grid, dtype=np.float64)
    if isinstance(model, DirectRidgeModel):
        return model.predict(grid)
    return np.atleast_1d(eval_structural(structural_estimate(model), grid))


def structural_mse(model, truth: GroundTruth) -> float:
    """Mean squared error of the fitted structural function on the truth grid."""
    f = predict_structural(model, truth.grid)
    return float(np.mean((f - truth.values) ** 2))


def fit_estimator(estimator: str, data: ObservationSet, config: ExperimentConfig, seed: int):
    """Fit one estimator with the settings in ``config``; ``seed`` drives initialization."""
    if estimator == "dfpv":
        return train_dfpv(data, replace(config.train, seed=seed))
    if estimator == "fixed_feature":
        fitter = FixedFeatureFitter(data, build_dictionaries(data, config.n_centers, seed))
        l1, l2 = config.train.lambda1, config.train.lambda2
        if config.tune is not None:
            l1, l2 = tune_lambdas(data, config.tune, fit=lambda _, a, b: fitter.fit(a, b)).best
        return fitter.fit(l1, l2)
    if estimator == BASELINE:
        return fit_direct_ridge(data, config.n_centers, seed)
    raise InvalidArgumentError(f"unknown estimator {estimator!r}")


def _losses(model) -> Tuple[float, float]:
    return tuple(getattr(model, "final_losses", (float("nan"), float("nan"))))


def _lambdas(model) -> Tuple[float, float]:
    return (float(getattr(model, "lambda1", float("nan"))), float(model.lambda2))


_RUN_ERRORS = (DfpvError, ArithmeticError, ValueError, np.linalg.LinAlgError)


def _structural_task(args) -> Tuple[RunResult, Optional[dict]]:
    config_dict, estimator, size, seed, truth_grid, truth_values = args
    config = ExperimentConfig.from_dict(config_dict)
    truth = GroundTruth(truth_grid, truth_values, np.zeros(len(truth_values)))
    t0 = time.perf_counter()
    try:
        data = generate(config.dgp, size, size, seed, **config.dgp_options())
        model = fit_estimator(estimator, data, config, seed)
        mse = structural_mse(model, truth)
    except _RUN_ERRORS as exc:
        logger.warning("run %s failed: %s", run_id(config.dgp, estimator, size, seed), exc)
        return RunResult(config.dgp, estimator, size, seed, float("nan"), time.perf_counter() - t0, error=f"{type(exc).__name__}: {exc}"), None
    elapsed = time.perf_counter() - t0
    return RunResult(config.dgp, estimator, size, seed, mse, elapsed, _losses(model), _lambdas(model)), model.to_dict()


def _execute(fn, tasks: list, workers: int) -> list:
    if workers <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, tasks))


# -- summaries and files -----------------------------------------------------------


def percentile(values: Sequence[float], q: float) -> float:
    """Linear-interpolation percentile (``q`` in [0, 100])."""
    return float(np.percentile(np.asarray(values, dtype=np.float64), q))


def summarize(rows: Iterable, metric: str, value_of) -> List[SummaryRow]:
    """Median and quartiles per (dgp, estimator, size[, policy]) cell, in first-seen order."""
    cells: Dict[tuple, list] = {}
    for r in rows:
        key = (r.dgp, r.estimator, getattr(r, "policy", None), r.size)
        cells.setdefault(key, []).append(r)
    out = []
    for (dgp, est, policy, size), rs in cells.items():
        vals = [value_of(r) for r in rs if r.ok]
        name = metric if policy is None else f"{metric}_{policy}"
        stats = (percentile(vals, 50), percentile(vals, 25), percentile(vals, 75)) if vals else (float("nan"),) * 3
        out.append(SummaryRow(dgp, est, name, size, len(vals), len(rs) - len(vals), *stats))
    return out


def _full(x: float) -> str:
    return "" if x is None or not math.isfinite(x) else repr(float(x))


def _g(x: float) -> str:
    return "" if x is None or not math.isfinite(x) else "%.6g" % x


def _write_rows(path: Path, header: List[str], rows: Iterable[list]) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def write_summary(path: Path, summary: List[SummaryRow]) -> None:
    _write_rows(path, SUMMARY_COLUMNS, ([s.dgp, s.estimator, s.metric, s.size, s.n_ok, s.n_failed, _g(s.median), _g(s.q25), _g(s.q75)] for s in summary))


def read_results(path) -> List[dict]:
    with Path(path).open(newline="") as fh:
        return list(csv.DictReader(fh))


def _write_common(out: Path, config: ExperimentConfig, results: list, models: list) -> Dict[str, Path]:
    files = {}
    (out / "config.json").write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n")
    files["config"] = out / "config.json"
    if config.save_models:
        mdir = out / "models"
        mdir.mkdir(exist_ok=True)
        for r, m in zip(results, models):
            if m is not None:
                (mdir / f"{r.run_id}.json").write_text(json.dumps(m, sort_keys=True) + "\n")
    files["failures"] = out / "failures.csv"
    _write_rows(files["failures"], ["run_id", "error"], ([r.run_id, r.error] for r in results if not r.ok))
    files["timings"] = out / "timings.csv"
    _write_rows(files["timings"], ["run_id", "wall_time_s"], ([r.run_id, "%.3f" % r.wall_time_s] for r in results))
    return files


# -- structural experiment -----------------------------------------------------------


def run_structural_experiment(config: ExperimentConfig, output_dir=None) -> ExperimentOutput:
    """Fit every (size, seed, estimator) cell and score it against the DGP's truth grid.

    Writes ``truth.csv``, ``results.csv``, ``summary.csv``, ``failures.csv``,
    ``timings.csv``, ``models/<run-id>.json`` and one SVG per metric under
    ``output_dir`` (default ``config.output_dir``). A failing run is recorded
    and the remaining runs continue.
    """
    from .plots import emit_plots

    config.validate()
    out = Path(output_dir or config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    truth = ground_truth(config.dgp, n_mc=config.n_mc, seed=config.truth_seed, **config.dgp_options())
    truth.write_csv(out / "truth.csv")

    estimators = list(config.estimators) + ([BASELINE] if config.baseline else [])
    cfg = config.to_dict()
    tasks = [
        (cfg, est, size, seed, truth.grid, truth.values)
        for size in config.sizes
        for seed in config.seeds
        for est in estimators
    ]
    pairs = _execute(_structural_task, tasks, config.workers)
    results = [p[0] for p in pairs]

    files = _write_common(out, config, results, [p[1] for p in pairs])
    files["truth"] = out / "truth.csv"
    files["results"] = out / "results.csv"
    wall = config.record_wall_time
    _write_rows(
        files["results"],
        RESULT_COLUMNS,
        (
            [r.dgp, r.estimator, r.size, r.seed, _full(r.oos_mse), _full(r.wall_time_s) if wall else "",
             _full(r.final_losses[0]), _full(r.final_losses[1]), _full(r.lambda_used[0]), _full(r.lambda_used[1])]
            for r in results
        ),
    )
    summary = summarize(results, "oos_mse", lambda r: r.oos_mse)
    files["summary"] = out / "summary.csv"
    write_summary(files["summary"], summary)
    if config.plots:
        files.update(emit_plots(summary, out))
    return ExperimentOutput(results, summary, files)


# -- off-policy evaluation ------------------------------------------------------------------


def make_policy(name: str) -> Policy:
    return Policy(name)


def ope_value(model, policy: Policy, data: ObservationSet) -> float:
    """``v_hat`` on the evaluation split of ``data``."""
    if not data.has_eval_split:
        raise InvalidArgumentError("policy evaluation needs the third (evaluation) split")
    return estimate_value(model, policy, policy_contexts(policy, data.a3, data.z3), data.w3)


def ope_squared_error(model, policy: Policy, data: ObservationSet, value_true: float) -> float:
    return (ope_value(model, policy, data) - value_true) ** 2


def ope_truth(config: ExperimentConfig) -> Dict[str, Tuple[float, float]]:
    """True policy values plus the observational mean outcome (key ``constant``)."""
    truth = {p: ope_truth_mc(make_policy(p), config.n_mc, config.truth_seed) for p in config.policies}
    truth[CONSTANT] = demand_outcome_population_mean(config.n_mc, config.truth_seed)
    return truth


def _ope_task(args) -> Tuple[List[OpeResult], Optional[dict]]:
    config_dict, estimator, size, seed, truth = args
    config = ExperimentConfig.from_dict(config_dict)
    t0 = time.perf_counter()
    try:
        data = gen_demand(size, size, seed, n_eval=size)
        model = fit_estimator(estimator, data, config, seed)
        values = {p: ope_value(model, make_policy(p), data) for p in config.policies}
    except _RUN_ERRORS as exc:
        err = f"{type(exc).__name__}: {exc}"
        dt = time.perf_counter() - t0
        return [OpeResult("demand", estimator, p, size, seed, float("nan"), truth[p][0], dt, error=err) for p in config.policies], None
    dt = time.perf_counter() - t0
    lam = _lambdas(model)
    return [OpeResult("demand", estimator, p, size, seed, values[p], truth[p][0], dt, lam) for p in config.policies], model.to_dict()


def run_ope_experiment(config: ExperimentConfig, output_dir=None) -> ExperimentOutput:
    """Three-way split per seed: fit on stages 1-2, evaluate each policy on split 3.

    The ``constant`` rows use the population mean outcome as the value of
    every policy, a reference that ignores the policy altogether.
    """
    from .plots import emit_plots

    config.validate()
    if config.dgp != "demand":
        raise InvalidArgumentError("policy evaluation is defined for the demand design only")
    out = Path(output_dir or config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    truth = ope_truth(config)
    _write_rows(out / "ope_truth.csv", ["policy", "value", "mc_stderr"], ([k, _full(v), _full(s)] for k, (v, s) in truth.items()))

    cfg = config.to_dict()
    tasks = [(cfg, est, size, seed, truth) for size in config.sizes for seed in config.seeds for est in config.estimators]
    pairs = _execute(_ope_task, tasks, config.workers)
    results: List[OpeResult] = []
    models: list = []
    for size in config.sizes:
        for seed in config.seeds:
            for p in config.policies:
                results.append(OpeResult("demand", CONSTANT, p, size, seed, truth[CONSTANT][0], truth[p][0], 0.0))
                models.append(None)
    for rs, m in pairs:
        results.extend(rs)
        models.extend([m] + [None] * (len(rs) - 1))

    files = _write_common(out, config, results, models)
    if config.save_models:
        # one file per fitted model, not per policy
        for r, m in zip(results, models):
            if m is not None:
                src = out / "models" / f"{r.run_id}.json"
                src.rename(out / "models" / f"{run_id(r.dgp, r.estimator, r.size, r.seed)}.json")
    files["truth"] = out / "ope_truth.csv"
    files["results"] = out / "ope_results.csv"
    wall = config.record_wall_time
    _write_rows(
        files["results"],
        OPE_COLUMNS,
        (
            [r.dgp, r.estimator, r.policy, r.size, r.seed, _full(r.value_hat), _full(r.value_true),
             _full(r.sq_error) if r.ok else "", _full(r.wall_time_s) if wall else "", _full(r.lambda_used[0]), _full(r.lambda_used[1])]
            for r in results
        ),
    )
    summary = summarize(results, "ope_sq_error", lambda r: r.sq_error)
    files["summary"] = out / "summary.csv"
    write_summary(files["summary"], summary)
    if config.plots:
        files.update(emit_plots(summary, out))
    return ExperimentOutput(results, summary, files)


def run_experiment(config: ExperimentConfig, output_dir=None) -> ExperimentOutput:
    if config.experiment == "ope":
        return run_ope_experiment(config, output_dir)
    return run_structural_experiment(config, output_dir)
