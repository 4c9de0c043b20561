"""Second-stage moment regression, the 2SLS baseline, and the end-to-end pipeline."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import condexp
from .core import Dataset, StandardizedDataset, destandardize_effect, standardize
from .diagnostics import (
    DEFAULT_ALPHA_LEVEL,
    DEFAULT_INDEPENDENCE_THRESHOLD,
    DiagnosticsReport,
    linear_independence_check,
    screen,
)
from .errors import (
    CollinearDesign,
    DimensionMismatch,
    InvalidDataset,
    RankDeficientInstruments,
    WeakFirstStage,
)

CONDITION_LIMIT = 1e10
MEAN_TOLERANCE = 1e-8
WEAK_F = 10.0


@dataclass
class EstimateReport:
    """Point estimates on both scales plus everything needed to audit them.

    ``status`` is ``"FAIL"`` when the identifiability screen rejected the data
    (no override) or the design was collinear; the estimate fields are then
    ``None``.
    """

    method: str
    n: int
    status: str = "OK"
    alpha_std: Optional[np.ndarray] = None
    alpha_raw: Optional[np.ndarray] = None
    h_std: Optional[np.ndarray] = None
    h_raw: Optional[np.ndarray] = None
    se_std: Optional[np.ndarray] = None
    se_raw: Optional[np.ndarray] = None
    alpha_block_std: Optional[np.ndarray] = None
    gram_matrix: Optional[np.ndarray] = None
    condition_number: Optional[float] = None
    diagnostics: Optional[DiagnosticsReport] = None
    metadata: dict = field(default_factory=dict)
    fail_reasons: list = field(default_factory=list)
    ci: Optional[object] = None

    @property
    def ok(self) -> bool:
        return self.status == "OK"

    def to_dict(self) -> dict:
        def vec(x):
            return None if x is None else [float(v) for v in np.ravel(x)]

        return {
            "method": self.method,
            "status": self.status,
            "n": int(self.n),
            "alpha_raw": vec(self.alpha_raw),
            "alpha_std": vec(self.alpha_std),
            "se_raw": vec(self.se_raw),
            "se_std": vec(self.se_std),
            "h_std": vec(self.h_std),
            "h_raw": vec(self.h_raw),
            "condition_number": self.condition_number,
            "ci": None if self.ci is None else self.ci.to_dict(),
            "diagnostics": None if self.diagnostics is None else self.diagnostics.to_dict(),
            "metadata": self.metadata,
            "fail_reasons": list(self.fail_reasons),
        }


def solve_moment_equations(a, m_hat, y, condition_limit: float = CONDITION_LIMIT):
    """Solve ``(1/n sum g g') theta = 1/n sum g y`` with ``g = (a, m_hat)``.

    Uses an SVD least-squares solve on the stacked design. Returns
    ``(theta, gram, condition_number)``; the first ``p`` entries of ``theta``
    are the treatment effects.
    """
    g = np.column_stack([np.asarray(a, dtype=float), np.asarray(m_hat, dtype=float)])
    y = np.asarray(y, dtype=float).ravel()
    n = g.shape[0]
    gram = g.T @ g / n
    cond = float(np.linalg.cond(gram))
    if not np.isfinite(cond) or cond > condition_limit:
        raise CollinearDesign(
            f"Gram matrix of (A, E(Z|A)) has condition number {cond:.3g} > {condition_limit:.0e}"
        )
    theta, *_ = np.linalg.lstsq(g, y, rcond=None)
    return theta, gram, cond


def block_form_alpha(a, m_hat, y) -> np.ndarray:
    """Treatment effects via the partitioned inverse of the empirical Gram.

    ``alpha = X11 (1/n sum A Y) + X12 (1/n sum m Y)`` with ``X`` the inverse of
    the Gram matrix of ``(A, m_hat)``. Kept as an independent cross-check of
    :func:`solve_moment_equations`.
    """
    a = np.asarray(a, dtype=float)
    a = a[:, None] if a.ndim == 1 else a
    m = np.asarray(m_hat, dtype=float)
    m = m[:, None] if m.ndim == 1 else m
    y = np.asarray(y, dtype=float).ravel()
    n, p = a.shape
    g = np.column_stack([a, m])
    x = np.linalg.inv(g.T @ g / n)
    return x[:p, :p] @ (a.T @ y / n) + x[:p, p:] @ (m.T @ y / n)


def eunc_estimate(
    data: StandardizedDataset,
    m_hat,
    condition_limit: float = CONDITION_LIMIT,
    diagnostics: Optional[DiagnosticsReport] = None,
    metadata: Optional[dict] = None,
) -> EstimateReport:
    """Regress standardized Y on (A, m_hat) and read off the A coefficients.

    ``m_hat`` holds fitted E(Z|A) at the sample points (standardized Z units);
    it is centered in-sample, which is equivalent to fitting an intercept
    since A and Y already have mean zero.
    """
    d = data.data
    m = np.asarray(m_hat, dtype=float)
    m = m[:, None] if m.ndim == 1 else m
    if m.shape[0] != d.n:
        raise DimensionMismatch(f"m_hat has {m.shape[0]} rows, data has {d.n}")
    means = np.abs(np.concatenate([d.a.mean(axis=0), [d.y.mean()]]))
    if np.any(means > MEAN_TOLERANCE):
        raise InvalidDataset("eunc_estimate expects standardized data (column means must be 0)")
    m = m - m.mean(axis=0)
    p = d.p
    theta, gram, cond = solve_moment_equations(d.a, m, d.y, condition_limit)
    g = np.column_stack([d.a, m])
    resid = d.y - g @ theta
    # Sandwich that treats m_hat as known.
    ginv = np.linalg.inv(gram)
    meat = (g * resid[:, None] ** 2).T @ g / d.n
    cov = ginv @ meat @ ginv / d.n
    se_std = np.sqrt(np.clip(np.diag(cov)[:p], 0.0, None))
    alpha_std = theta[:p]
    h_std = theta[p:]
    return EstimateReport(
        method="eunc",
        n=d.n,
        alpha_std=alpha_std,
        alpha_raw=destandardize_effect(alpha_std, data),
        h_std=h_std,
        h_raw=h_std * data.scale_y / data.scale_z[: h_std.size] if h_std.size == d.l else None,
        se_std=se_std,
        se_raw=se_std * data.scale_y / data.scale_a,
        alpha_block_std=block_form_alpha(d.a, m, d.y),
        gram_matrix=gram,
        condition_number=cond,
        diagnostics=diagnostics,
        metadata={"se": "sandwich (approximate, E(Z|A) treated as known)", **(metadata or {})},
    )


def tsls_estimate(data: StandardizedDataset, warn: bool = True) -> EstimateReport:
    """Two-stage least squares of Y on A with Z as instruments."""
    d = data.data
    n, p, l = d.n, d.p, d.l
    if l < p:
        raise RankDeficientInstruments(f"{l} instruments cannot identify {p} treatment effects")
    zz = d.z.T @ d.z
    if np.linalg.matrix_rank(zz) < l:
        raise RankDeficientInstruments("Z'Z is singular")
    coef_first = np.linalg.solve(zz, d.z.T @ d.a)
    a_hat = d.z @ coef_first
    aa = a_hat.T @ d.a
    if np.linalg.matrix_rank(aa) < p:
        raise RankDeficientInstruments("instruments carry no information on some treatment")
    alpha_std = np.linalg.solve(aa, a_hat.T @ d.y)
    resid = d.y - d.a @ alpha_std
    sigma2 = float(resid @ resid) / max(n - p, 1)
    cov = sigma2 * np.linalg.inv(a_hat.T @ a_hat)
    se_std = np.sqrt(np.clip(np.diag(cov), 0.0, None))

    first_resid = d.a - a_hat
    r2 = 1.0 - np.sum(first_resid**2, axis=0) / np.sum(d.a**2, axis=0)
    df = max(n - l - 1, 1)
    with np.errstate(divide="ignore"):
        f_stat = (r2 / l) / ((1.0 - r2) / df)
    weak = bool(np.any(f_stat < WEAK_F))
    if weak and warn:
        warnings.warn(
            f"first-stage F = {np.min(f_stat):.2f} < {WEAK_F:g}; 2SLS is unreliable",
            WeakFirstStage,
            stacklevel=2,
        )
    return EstimateReport(
        method="2sls",
        n=n,
        alpha_std=alpha_std,
        alpha_raw=destandardize_effect(alpha_std, data),
        se_std=se_std,
        se_raw=se_std * data.scale_y / data.scale_a,
        gram_matrix=a_hat.T @ a_hat / n,
        metadata={"first_stage_f": [float(v) for v in f_stat], "weak_first_stage": weak,
                  "se": "conventional homoskedastic"},
    )


@dataclass
class PipelineConfig:
    """Settings for one run of the estimation pipeline."""

    condexp_method: object = condexp.DEFAULT_METHOD
    condexp_params: dict = field(default_factory=dict)
    alpha_level: float = DEFAULT_ALPHA_LEVEL
    rank_policy: object = "numerical"
    independence_threshold: float = DEFAULT_INDEPENDENCE_THRESHOLD
    override_diagnostics: bool = False
    condition_limit: float = CONDITION_LIMIT
    seed: int = 0

    def make_condexp(self):
        params = dict(self.condexp_params)
        if self.condexp_method in ("kernel_nw", "local_linear", "boosted_stumps"):
            params.setdefault("seed", self.seed)
        return condexp.make_model(self.condexp_method, **params)


def _fail(n: int, diagnostics, reasons, metadata=None) -> EstimateReport:
    return EstimateReport(method="eunc", n=n, status="FAIL", diagnostics=diagnostics,
                          fail_reasons=list(reasons), metadata=metadata or {})


def eunc_pipeline(raw: Dataset, config: Optional[PipelineConfig] = None) -> EstimateReport:
    """Standardize, screen, fit E(Z|A), check collinearity, then estimate.

    Returns a ``FAIL`` report when a diagnostic fails and
    ``config.override_diagnostics`` is false, or when the second-stage design
    is numerically collinear.
    """
    config = config or PipelineConfig()
    data = standardize(raw)
    d = data.data
    report = screen(data, config.alpha_level, config.rank_policy)
    if not report.screen_pass and not config.override_diagnostics:
        return _fail(d.n, report, report.failures()[:-1])

    model = config.make_condexp().fit(d.a, d.z)
    m_hat = model.predict(d.a)
    independent, cond = linear_independence_check(d.a, m_hat, config.independence_threshold)
    report.linear_independence, report.condition_number = independent, cond
    meta = {"condexp": model.describe(), "override_diagnostics": config.override_diagnostics}
    if not report.overall_pass:
        if not config.override_diagnostics:
            return _fail(d.n, report, report.failures(), meta)
        report.messages.append("diagnostics overridden: " + "; ".join(report.failures()))
    try:
        return eunc_estimate(data, m_hat, config.condition_limit, report, meta)
    except CollinearDesign as exc:
        return _fail(d.n, report, [str(exc)], meta)
