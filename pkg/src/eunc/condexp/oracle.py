"""True E(Z | A = a) for single-treatment scenarios."""
from __future__ import annotations

import numpy as np
from scipy import stats

from ..core import ScenarioSpec
from ..errors import UnsupportedSpec

GH_NODES = 96


def _posterior_mean_signal(v: float, noise, a: np.ndarray) -> np.ndarray:
    """E(zeta | zeta + eps = a) for zeta ~ N(0, v) independent of eps."""
    sd = np.sqrt(v)
    fam, par = noise.family, noise.params
    if fam == "exponential":
        # zeta | a is N(rate * v, v) truncated to zeta <= a.
        loc = par[0] * v
        return stats.truncnorm.mean(-np.inf, (a - loc) / sd, loc=loc, scale=sd)
    if fam == "uniform":
        lo, hi = par
        return stats.truncnorm.mean((a - hi) / sd, (a - lo) / sd, loc=0.0, scale=sd)
    # Smooth densities: Gauss-Hermite against the N(0, v) weight.
    x, w = np.polynomial.hermite.hermgauss(GH_NODES)
    zeta = np.sqrt(2.0 * v) * x
    dens = noise.dist().pdf(a[:, None] - zeta[None, :]) * w
    return (dens @ zeta) / dens.sum(axis=1)


def oracle_condexp(spec: ScenarioSpec, a_query) -> np.ndarray:
    """Exact ``E(Z | A = a)`` on the raw scale, shape ``(m, l)``.

    With ``zeta = Gamma Z + Lambda U`` the covariate regression is linear in
    ``zeta``, so ``E(Z | a) = kappa * E(zeta | zeta + eps_A = a)`` with
    ``kappa = cov(Z, zeta) / var(zeta)``.
    """
    if spec.p != 1:
        raise UnsupportedSpec("the oracle covers single-treatment scenarios only")
    if spec.extra_confounder is not None or spec.treatment_dag is not None:
        raise UnsupportedSpec("the oracle needs A = Gamma Z + Lambda U + eps_A with no extra terms")
    a = np.atleast_1d(np.asarray(a_query, dtype=float)).ravel()
    g, lam, sig = spec.gamma[0], spec.lam[0], spec.sigma
    cov_z_zeta = g + sig @ lam
    v = float(g @ g + lam @ lam + 2.0 * g @ sig @ lam)
    noise = spec.treatment_noise[0]
    if v <= 0:
        return np.zeros((a.size, spec.l))
    post = _posterior_mean_signal(v, noise, a)
    return np.outer(post, cov_z_zeta / v)
