"""Bootstrap intervals and the Monte Carlo benchmark harness."""
from __future__ import annotations

import csv
import dataclasses
import math
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .core import Dataset, ExtraConfounder, NoiseSpec, ScenarioSpec, standardize
from .dgp import make_rng, sample
from .errors import EuncError, TooManyFailures
from .estimators import PipelineConfig, eunc_pipeline, tsls_estimate

MIN_BOOTSTRAP = 100
MAX_FAIL_FRACTION = 0.10
BENCHMARK_B = 200
Z_975 = 1.959963984540054
ESTIMATORS = ("eunc", "2sls")


@dataclass
class BootstrapCI:
    """Percentile bootstrap interval for the raw-scale treatment effects."""

    lower: np.ndarray
    upper: np.ndarray
    level: float
    B: int
    n_failed: int = 0
    method: str = "percentile"

    def contains(self, value) -> np.ndarray:
        value = np.asarray(value, dtype=float)
        return (self.lower <= value) & (value <= self.upper)

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "level": self.level,
            "B": self.B,
            "n_failed": self.n_failed,
            "lower": [float(v) for v in self.lower],
            "upper": [float(v) for v in self.upper],
        }


def bootstrap_ci(
    raw: Dataset,
    config: Optional[PipelineConfig] = None,
    B: int = 500,
    seed=0,
    level: float = 0.95,
    rescreen: bool = False,
) -> BootstrapCI:
    """Case-resampling percentile interval with the pipeline refitted on every resample.

    Resamples contain duplicated rows, which inflates the normality tests'
    rejection rate far above nominal, so by default the screen is not rerun
    (``rescreen=False``); resamples whose second-stage design is collinear
    still count as failures. ``seed`` may be an int or a Generator.
    """
    if B < MIN_BOOTSTRAP:
        raise ValueError(f"bootstrap needs B >= {MIN_BOOTSTRAP}, got {B}")
    config = config or PipelineConfig()
    if not rescreen:
        config = dataclasses.replace(config, override_diagnostics=True)
    rng = seed if isinstance(seed, np.random.Generator) else make_rng(seed)
    n = raw.n
    draws = []
    failed = 0
    for _ in range(B):
        rows = rng.integers(0, n, size=n)
        try:
            rep = eunc_pipeline(raw.take(rows), config)
        except EuncError:
            failed += 1
            continue
        if rep.ok:
            draws.append(rep.alpha_raw)
        else:
            failed += 1
    if failed > MAX_FAIL_FRACTION * B:
        raise TooManyFailures(f"{failed} of {B} bootstrap resamples failed")
    draws = np.array(draws)
    tail = 50.0 * (1.0 - level)
    lower, upper = np.percentile(draws, [tail, 100.0 - tail], axis=0)
    return BootstrapCI(lower, upper, level, B, failed)


# Benchmark harness ----------------------------------------------------------


class _Task(NamedTuple):
    spec: ScenarioSpec
    n: int
    rep: int
    estimators: tuple
    master_seed: int
    config: PipelineConfig
    B: int
    bootstrap: bool


def _run_replication(task: _Task) -> list:
    """All estimator records for one (n, rep) cell; pure in its inputs."""
    data = sample(task.spec, task.n, make_rng(task.master_seed, task.n, task.rep, 0))
    p = task.spec.p
    out = []
    for est in task.estimators:
        t0 = time.perf_counter()
        alpha = lo = hi = np.full(p, np.nan)
        status = "OK"
        try:
            if est == "eunc":
                rep = eunc_pipeline(data, task.config)
                if rep.ok:
                    alpha = rep.alpha_raw
                    if task.bootstrap:
                        boot_rng = make_rng(task.master_seed, task.n, task.rep, 1)
                        try:
                            ci = bootstrap_ci(data, task.config, task.B, boot_rng)
                            lo, hi = ci.lower, ci.upper
                        except TooManyFailures:
                            pass
                    else:
                        lo = alpha - Z_975 * rep.se_raw
                        hi = alpha + Z_975 * rep.se_raw
                else:
                    status = "FAIL"
            elif est == "2sls":
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore")
                    rep = tsls_estimate(standardize(data), warn=False)
                alpha = rep.alpha_raw
                lo = alpha - Z_975 * rep.se_raw
                hi = alpha + Z_975 * rep.se_raw
            else:
                raise ValueError(f"unknown estimator {est!r}")
        except EuncError:
            status = "FAIL"
        out.append({
            "scenario": task.spec.name,
            "estimator": est,
            "n": task.n,
            "rep": task.rep,
            "status": status,
            "alpha": np.asarray(alpha, dtype=float),
            "ci_lower": np.asarray(lo, dtype=float),
            "ci_upper": np.asarray(hi, dtype=float),
            "wall_time": time.perf_counter() - t0,
        })
    return out


class EstimatorSummary(NamedTuple):
    """Aggregates over successful replications of one estimator."""

    estimator: str
    bias: np.ndarray
    sd: np.ndarray
    mae: np.ndarray
    rmse: np.ndarray
    coverage: np.ndarray
    n_success: int
    n_fail: int
    n_ci: int

    @property
    def replications(self) -> int:
        return self.n_success + self.n_fail

    def to_dict(self) -> dict:
        def vec(x):
            return [None if not np.isfinite(v) else float(v) for v in x]

        return {
            "estimator": self.estimator,
            "bias": vec(self.bias),
            "sd": vec(self.sd),
            "mae": vec(self.mae),
            "rmse": vec(self.rmse),
            "coverage": vec(self.coverage),
            "replications": self.replications,
            "successes": self.n_success,
            "failures": self.n_fail,
            "intervals": self.n_ci,
        }


@dataclass
class BenchmarkReport:
    """Bias, SD and coverage per estimator for one scenario at one sample size."""

    scenario: str
    n: int
    alpha_true: np.ndarray
    summaries: dict
    ci_method: dict
    elapsed: float = 0.0
    records: list = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "n": self.n,
            "alpha_true": [float(v) for v in self.alpha_true],
            "ci_method": dict(self.ci_method),
            "elapsed_seconds": self.elapsed,
            "estimators": {k: s.to_dict() for k, s in self.summaries.items()},
        }


def summarize(records: Sequence[dict], estimator: str, alpha_true) -> EstimatorSummary:
    """Two-pass aggregation over records in the order given."""
    alpha_true = np.asarray(alpha_true, dtype=float)
    rows = [r for r in records if r["estimator"] == estimator]
    ok = [r for r in rows if r["status"] == "OK"]
    p = alpha_true.size
    nan = np.full(p, np.nan)
    if not ok:
        return EstimatorSummary(estimator, nan, nan, nan, nan, nan, 0, len(rows), 0)
    err = np.array([r["alpha"] for r in ok]) - alpha_true
    sd = err.std(axis=0, ddof=1) if len(ok) > 1 else np.zeros(p)
    with_ci = [r for r in ok if np.all(np.isfinite(r["ci_lower"]))]
    if with_ci:
        lo = np.array([r["ci_lower"] for r in with_ci])
        hi = np.array([r["ci_upper"] for r in with_ci])
        cover = ((lo <= alpha_true) & (alpha_true <= hi)).mean(axis=0)
    else:
        cover = nan
    return EstimatorSummary(
        estimator,
        bias=err.mean(axis=0),
        sd=sd,
        mae=np.abs(err).mean(axis=0),
        rmse=np.sqrt((err**2).mean(axis=0)),
        coverage=cover,
        n_success=len(ok),
        n_fail=len(rows) - len(ok),
        n_ci=len(with_ci),
    )


def run_benchmark(
    scenario: ScenarioSpec,
    n_list: Sequence[int] = (500,),
    R: int = 300,
    estimators: Sequence[str] = ESTIMATORS,
    master_seed: int = 0,
    config: Optional[PipelineConfig] = None,
    B: int = BENCHMARK_B,
    bootstrap: bool = True,
    jobs: int = 1,
    records_path=None,
) -> list:
    """Monte Carlo replications for each sample size; one report per ``n``.

    EUNC intervals are bootstrap percentile intervals with ``B`` resamples, or
    the approximate sandwich when ``bootstrap`` is false; 2SLS intervals use
    conventional standard errors. Replication ``r`` at size ``n`` draws its
    data from stream ``(n, r)`` of ``master_seed``, so results do not depend
    on ``jobs``.
    """
    if R < 2:
        raise ValueError("a benchmark needs at least 2 replications")
    config = config or PipelineConfig()
    estimators = tuple(estimators)
    reports = []
    for n in n_list:
        t0 = time.perf_counter()
        tasks = [_Task(scenario, int(n), r, estimators, master_seed, config, B, bootstrap)
                 for r in range(R)]
        if jobs > 1:
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                chunks = list(pool.map(_run_replication, tasks, chunksize=max(1, R // (4 * jobs))))
        else:
            chunks = [_run_replication(t) for t in tasks]
        records = [rec for chunk in chunks for rec in chunk]
        if records_path is not None:
            write_records(records, records_path)
        summaries = {e: summarize(records, e, scenario.alpha) for e in estimators}
        ci_method = {e: ("bootstrap percentile, B=%d" % B if bootstrap else "sandwich (approximate)")
                     if e == "eunc" else "conventional asymptotic" for e in estimators}
        reports.append(BenchmarkReport(scenario.name, int(n), scenario.alpha.copy(), summaries,
                                       ci_method, time.perf_counter() - t0, records))
    return reports


# Per-replication record files -------------------------------------------------


def _record_header(p: int) -> list:
    cols = ["scenario", "estimator", "n", "rep", "status"]
    cols += [f"alpha{j + 1}" for j in range(p)]
    cols += [f"ci_lower{j + 1}" for j in range(p)]
    cols += [f"ci_upper{j + 1}" for j in range(p)]
    return cols + ["wall_time"]


def write_records(records: Sequence[dict], path) -> None:
    """Append records to a CSV file, writing the header if the file is new."""
    if not records:
        return
    path = Path(path)
    p = records[0]["alpha"].size
    header = _record_header(p)
    new = not path.exists() or path.stat().st_size == 0
    with path.open("a", newline="") as fh:
        w = csv.writer(fh)
        if new:
            w.writerow(header)
        for r in records:
            w.writerow([r["scenario"], r["estimator"], r["n"], r["rep"], r["status"]]
                       + [repr(float(v)) for v in r["alpha"]]
                       + [repr(float(v)) for v in r["ci_lower"]]
                       + [repr(float(v)) for v in r["ci_upper"]]
                       + [repr(float(r["wall_time"]))])


def read_records(path) -> list:
    """Inverse of :func:`write_records`."""
    out = []
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        p = sum(1 for c in reader.fieldnames if c.startswith("alpha"))
        for row in reader:
            def vec(prefix):
                return np.array([float(row[f"{prefix}{j + 1}"]) for j in range(p)])

            out.append({
                "scenario": row["scenario"],
                "estimator": row["estimator"],
                "n": int(row["n"]),
                "rep": int(row["rep"]),
                "status": row["status"],
                "alpha": vec("alpha"),
                "ci_lower": vec("ci_lower"),
                "ci_upper": vec("ci_upper"),
                "wall_time": float(row["wall_time"]),
            })
    return out


def streaming_summary(path, estimator: str, n: int, alpha_true) -> dict:
    """Recompute bias, SD and coverage in one pass over a record file.

    Uses Welford updates, independently of :func:`summarize`, as an audit of
    the reported aggregates.
    """
    alpha_true = np.asarray(alpha_true, dtype=float)
    count = 0
    mean = np.zeros(alpha_true.size)
    m2 = np.zeros(alpha_true.size)
    covered = np.zeros(alpha_true.size)
    n_ci = 0
    fails = 0
    for r in read_records(path):
        if r["estimator"] != estimator or r["n"] != n:
            continue
        if r["status"] != "OK":
            fails += 1
            continue
        count += 1
        e = r["alpha"] - alpha_true
        delta = e - mean
        mean += delta / count
        m2 += delta * (e - mean)
        if np.all(np.isfinite(r["ci_lower"])):
            n_ci += 1
            covered += (r["ci_lower"] <= alpha_true) & (alpha_true <= r["ci_upper"])
    return {
        "bias": mean,
        "sd": np.sqrt(m2 / (count - 1)) if count > 1 else np.zeros_like(mean),
        "coverage": covered / n_ci if n_ci else np.full_like(mean, np.nan),
        "successes": count,
        "failures": fails,
    }


# Sensitivity and rate --------------------------------------------------------

SENSITIVITY_AXES = ("epsA_student_t", "extra_confounder_t")
DEFAULT_NU_GRID = (5.0, 10.0, 15.0, 20.0, 30.0)
W_LOADING = 0.5


class SensitivityRow(NamedTuple):
    axis: str
    xi: float
    nu: float
    abs_bias: float
    mae: float
    n_success: int
    n_fail: int

    def to_dict(self) -> dict:
        return {k: (float(v) if isinstance(v, (float, np.floating)) else v)
                for k, v in self._asdict().items()}


def sensitivity_scenario(base: ScenarioSpec, axis: str, nu: float, xi: float) -> ScenarioSpec:
    """Variant of a single-treatment ``base`` for one point of a sensitivity sweep.

    ``nu = inf`` stands for the Gaussian limit of the t family.
    """
    if axis not in SENSITIVITY_AXES:
        raise ValueError(f"axis must be one of {SENSITIVITY_AXES}")
    t_noise = NoiseSpec.gaussian() if math.isinf(nu) else NoiseSpec.student_t(nu)
    sigma = np.full_like(base.sigma, xi)
    name = f"{base.name}_{axis}_nu{nu:g}_xi{xi:g}"
    if axis == "epsA_student_t":
        return base.replace(sigma=sigma, treatment_noise=(t_noise,) * base.p, name=name)
    w = ExtraConfounder(t_noise, np.full(base.p, W_LOADING), W_LOADING)
    return base.replace(sigma=sigma, extra_confounder=w, name=name)


def run_sensitivity(
    base: ScenarioSpec,
    axis: str,
    nu_grid: Sequence[float] = DEFAULT_NU_GRID,
    R: int = 300,
    seed: int = 0,
    n: int = 300,
    xi_values: Sequence[float] = (0.0, 0.5),
    config: Optional[PipelineConfig] = None,
    jobs: int = 1,
) -> list:
    """EUNC absolute bias over a grid of t degrees of freedom.

    Each row reports ``abs_bias = |mean(alpha_hat - alpha)|`` and the mean
    absolute error over successful replications of the first treatment. The
    sweep probes the estimator itself under violated assumptions, so unless a
    ``config`` is given the identifiability screen is overridden.
    """
    if any(nu <= 2 for nu in nu_grid):
        raise ValueError("nu_grid must lie in (2, inf]")
    if config is None:
        config = PipelineConfig(override_diagnostics=True)
    rows = []
    for xi in xi_values:
        for nu in nu_grid:
            spec = sensitivity_scenario(base, axis, nu, xi)
            (rep,) = run_benchmark(spec, [n], R, ("eunc",), seed, config, bootstrap=False, jobs=jobs)
            s = rep.summaries["eunc"]
            rows.append(SensitivityRow(axis, float(xi), float(nu), float(abs(s.bias[0])),
                                       float(s.mae[0]), s.n_success, s.n_fail))
    return rows


class RateResult(NamedTuple):
    slope: float
    n_grid: tuple
    rmse: np.ndarray
    failures: tuple
    degenerate: bool


def rate_check(
    scenario: ScenarioSpec,
    n_grid: Sequence[int] = (200, 400, 800, 1600, 3200),
    R: int = 200,
    seed: int = 0,
    estimator: str = "eunc",
    config: Optional[PipelineConfig] = None,
    jobs: int = 1,
) -> RateResult:
    """Least-squares slope of log RMSE against log n.

    An RMSE at or below 1e-12 at any ``n`` makes the slope meaningless; the
    result is then flagged ``degenerate`` with a NaN slope.
    """
    n_grid = tuple(int(v) for v in n_grid)
    if len(n_grid) < 4:
        raise ValueError("rate_check needs at least 4 sample sizes")
    reports = run_benchmark(scenario, n_grid, R, (estimator,), seed, config,
                            bootstrap=False, jobs=jobs)
    rmse = np.array([np.sqrt(np.mean(r.summaries[estimator].rmse ** 2)) for r in reports])
    fails = tuple(r.summaries[estimator].n_fail for r in reports)
    if not np.all(np.isfinite(rmse)) or np.any(rmse <= 1e-12):
        return RateResult(float("nan"), n_grid, rmse, fails, True)
    slope = float(np.polyfit(np.log(n_grid), np.log(rmse), 1)[0])
    return RateResult(slope, n_grid, rmse, fails, False)
