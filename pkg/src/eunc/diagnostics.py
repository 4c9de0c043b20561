"""Identifiability diagnostics: normality screening, covariance rank, collinearity."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Union

import numpy as np
from scipy import special, stats

from .core import StandardizedDataset
from .errors import DimensionMismatch, SampleTooSmall

DEFAULT_ALPHA_LEVEL = 0.05
DEFAULT_INDEPENDENCE_THRESHOLD = 1e-6


def anderson_darling(sample) -> tuple:
    """Anderson-Darling test of normality with estimated mean and variance.

    Returns the small-sample adjusted statistic ``A*^2 = A^2 (1 + 0.75/n + 2.25/n^2)``
    and its p-value from the D'Agostino-Stephens piecewise approximation.
    """
    x = np.sort(np.asarray(sample, dtype=float).ravel())
    n = x.size
    if n < 8:
        raise SampleTooSmall(f"Anderson-Darling needs at least 8 observations, got {n}")
    sd = x.std(ddof=1)
    if not sd > 0:
        return float("inf"), 0.0
    w = (x - x.mean()) / sd
    i = np.arange(1, n + 1)
    s = np.sum((2 * i - 1) * (special.log_ndtr(w) + special.log_ndtr(-w[::-1])))
    a2 = -n - s / n
    a2_star = a2 * (1.0 + 0.75 / n + 2.25 / n**2)
    return float(a2_star), _ad_pvalue(a2_star)


def _ad_pvalue(a: float) -> float:
    if a >= 0.6:
        p = np.exp(1.2937 - 5.709 * a + 0.0186 * a**2)
    elif a >= 0.34:
        p = np.exp(0.9177 - 4.279 * a - 1.38 * a**2)
    elif a >= 0.2:
        p = 1.0 - np.exp(-8.318 + 42.796 * a - 59.938 * a**2)
    else:
        p = 1.0 - np.exp(-13.436 + 101.14 * a - 223.73 * a**2)
    return float(min(max(p, 0.0), 1.0))


class RankCheck(NamedTuple):
    rank: int
    full_row_rank: bool
    singular_values: np.ndarray
    note: str = ""


def _numerical_rank(mat: np.ndarray, threshold: Optional[float] = None) -> tuple:
    sv = np.linalg.svd(mat, compute_uv=False) if mat.size else np.zeros(0)
    if threshold is None:
        smax = sv[0] if sv.size else 0.0
        threshold = max(mat.shape) * np.finfo(float).eps * smax
    return int(np.sum(sv > threshold)), sv


def cov_rank_check(
    data: StandardizedDataset,
    tolerance_policy: Union[str, float] = "numerical",
    level: float = DEFAULT_ALPHA_LEVEL,
) -> RankCheck:
    """Numerical rank of the p x l sample cross-covariance of (A, Z).

    ``tolerance_policy`` is ``"numerical"`` (singular values above
    ``max(p, l) * eps * s_max``), ``"statistical"`` (above
    ``(sqrt(p) + sqrt(l) - 1) * z_{1-level/2} / sqrt(n)``, the noise floor of
    a sample correlation matrix under independence) or an absolute threshold.
    """
    d = data.data
    n, p, l = d.n, d.p, d.l
    cov = d.a.T @ d.z / (n - 1)
    if tolerance_policy == "numerical":
        threshold = None
    elif tolerance_policy == "statistical":
        threshold = (np.sqrt(p) + np.sqrt(l) - 1.0) * stats.norm.ppf(1 - level / 2) / np.sqrt(n)
    else:
        threshold = float(tolerance_policy)
    rank, sv = _numerical_rank(cov, threshold)
    if p > l:
        note = (f"{p} treatments but only {l} covariates: identification needs at least "
                f"min(p, t) Gaussian covariates and cov(A, Z) cannot have full row rank")
        return RankCheck(min(rank, l), False, sv, note)
    return RankCheck(rank, rank == p, sv)


def rank_condition_population(gamma, lam, sigma) -> bool:
    """Whether rank(G + L S', G S + L) equals rank(G + L S') for the true coefficients."""
    gamma = np.atleast_2d(np.asarray(gamma, dtype=float))
    lam = np.asarray(lam, dtype=float)
    p, l = gamma.shape
    lam = lam.reshape(p, -1)
    t = lam.shape[1]
    sigma = np.asarray(sigma, dtype=float)
    if sigma.size != l * t:
        raise DimensionMismatch(f"sigma must be {l}x{t} for gamma {gamma.shape} and lam {lam.shape}")
    sigma = sigma.reshape(l, t)
    cov_az = gamma + lam @ sigma.T
    cov_au = gamma @ sigma + lam
    augmented = np.hstack([cov_az, cov_au])
    # One shared threshold so both ranks are measured on the same scale.
    smax = np.linalg.norm(augmented, 2) if augmented.size else 0.0
    threshold = max(augmented.shape) * np.finfo(float).eps * max(smax, np.finfo(float).tiny)
    base, _ = _numerical_rank(cov_az, threshold)
    aug, _ = _numerical_rank(augmented, threshold)
    return aug == base


def linear_independence_check(a, m_hat, threshold: float = DEFAULT_INDEPENDENCE_THRESHOLD) -> tuple:
    """Collinearity test for the columns of ``[A, m_hat]``.

    Columns are scaled to unit norm; the stack counts as independent when the
    eigenvalue ratio min/max of its Gram matrix exceeds ``threshold``.
    Returns ``(independent, condition_number)``.
    """
    x = np.column_stack([np.asarray(a, dtype=float), np.asarray(m_hat, dtype=float)])
    norms = np.linalg.norm(x, axis=0)
    if np.any(norms == 0):
        return False, float("inf")
    eig = np.linalg.eigvalsh((x / norms).T @ (x / norms))
    lo, hi = eig[0], eig[-1]
    if lo <= 0:
        return False, float("inf")
    return bool(lo / hi > threshold), float(np.sqrt(hi / lo))


@dataclass
class DiagnosticsReport:
    """Outcome of the identifiability screen run before estimation."""

    ad_pvalues_z: np.ndarray
    ad_pvalues_a: np.ndarray
    cov_az_rank: int
    cov_az_full_row_rank: bool
    alpha_level: float = DEFAULT_ALPHA_LEVEL
    linear_independence: Optional[bool] = None
    condition_number: Optional[float] = None
    messages: list = field(default_factory=list)

    @property
    def z_gaussian(self) -> bool:
        # Bonferroni over the l covariate tests.
        return bool(np.all(self.ad_pvalues_z > self.alpha_level / len(self.ad_pvalues_z)))

    @property
    def a_non_gaussian(self) -> bool:
        return bool(np.any(self.ad_pvalues_a < self.alpha_level))

    @property
    def screen_pass(self) -> bool:
        """Normality and rank conditions, available before E(Z|A) is fitted."""
        return self.z_gaussian and self.a_non_gaussian and self.cov_az_full_row_rank

    @property
    def overall_pass(self) -> bool:
        return self.screen_pass and bool(self.linear_independence)

    def failures(self) -> list:
        out = []
        if not self.z_gaussian:
            out.append("normality rejected for covariate(s) Z")
        if not self.a_non_gaussian:
            out.append("no treatment column rejects normality")
        if not self.cov_az_full_row_rank:
            out.append("cov(A, Z) is not of full row rank")
        if self.linear_independence is False:
            out.append("A and E(Z|A) are linearly dependent")
        elif self.linear_independence is None:
            out.append("linear independence not checked")
        return out

    def to_dict(self) -> dict:
        return {
            "overall_pass": self.overall_pass,
            "alpha_level": self.alpha_level,
            "ad_pvalues_z": [float(v) for v in self.ad_pvalues_z],
            "ad_pvalues_a": [float(v) for v in self.ad_pvalues_a],
            "cov_az_rank": int(self.cov_az_rank),
            "cov_az_full_row_rank": bool(self.cov_az_full_row_rank),
            "linear_independence": self.linear_independence,
            "condition_number": self.condition_number,
            "messages": list(self.messages),
        }

    def to_text(self) -> str:
        d = self.to_dict()
        lines = []
        for key, value in d.items():
            if isinstance(value, list) and value and isinstance(value[0], float):
                value = ", ".join(f"{v:.4g}" for v in value)
            elif isinstance(value, list):
                value = "; ".join(value) if value else "-"
            lines.append(f"{key}: {value}")
        return "\n".join(lines)


def screen(
    data: StandardizedDataset,
    alpha_level: float = DEFAULT_ALPHA_LEVEL,
    rank_policy: Union[str, float] = "numerical",
) -> DiagnosticsReport:
    """Normality tests on every Z and A column plus the cov(A, Z) rank check."""
    d = data.data
    pz = np.array([anderson_darling(col)[1] for col in d.z.T])
    pa = np.array([anderson_darling(col)[1] for col in d.a.T])
    rank = cov_rank_check(data, rank_policy, alpha_level)
    report = DiagnosticsReport(pz, pa, rank.rank, rank.full_row_rank, alpha_level)
    if rank.note:
        report.messages.append(rank.note)
    gaussian_a = [d.column_names[d.l + j] for j in np.flatnonzero(pa >= alpha_level)]
    if gaussian_a and len(gaussian_a) < d.p:
        report.messages.append(f"treatment(s) consistent with normality: {', '.join(gaussian_a)}")
    return report
