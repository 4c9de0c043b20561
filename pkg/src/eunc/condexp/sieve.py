"""Polynomial sieve regression."""
from __future__ import annotations

from itertools import combinations_with_replacement

import numpy as np
from numpy.polynomial import legendre

from ..errors import SingularBasis
from .base import CondExpModel

DEFAULT_DEGREE = 5
DEFAULT_RIDGE = 0.0
RANK_TOLERANCE = 1e-10


def _exponents(p: int, degree: int) -> list:
    out = [(0,) * p]
    for d in range(1, degree + 1):
        for combo in combinations_with_replacement(range(p), d):
            e = [0] * p
            for k in combo:
                e[k] += 1
            out.append(tuple(e))
    return out


class SievePoly(CondExpModel):
    """Least squares on all polynomials of total degree <= ``degree``.

    Inputs are mapped affinely to [-1, 1] with the training range and the
    basis is built from products of Legendre polynomials, which spans the
    same space as the monomials but is far better conditioned. The solve is
    an SVD least squares; ``ridge > 0`` adds a penalty on every non-constant
    coefficient. Queries outside the training range are evaluated directly.
    """

    method = "sieve_poly"

    def __init__(self, degree: int = DEFAULT_DEGREE, ridge: float = DEFAULT_RIDGE):
        super().__init__()
        if degree < 1:
            raise ValueError("sieve degree must be at least 1")
        self.degree = int(degree)
        self.ridge = float(ridge)

    def basis(self, a: np.ndarray) -> np.ndarray:
        u = (a - self._mid) / self._half
        per_dim = [legendre.legvander(u[:, k], self.degree) for k in range(a.shape[1])]
        cols = []
        for e in self._exps:
            col = np.ones(a.shape[0])
            for k, ek in enumerate(e):
                if ek:
                    col = col * per_dim[k][:, ek]
            cols.append(col)
        return np.column_stack(cols)

    def _fit(self, a, z):
        n, p = a.shape
        lo, hi = a.min(axis=0), a.max(axis=0)
        self._mid = (hi + lo) / 2
        self._half = np.where(hi > lo, (hi - lo) / 2, 1.0)
        self._exps = _exponents(p, self.degree)
        k = len(self._exps)
        n_distinct = np.unique(a, axis=0).shape[0]
        if n_distinct < k:
            raise SingularBasis(
                f"{n_distinct} distinct inputs cannot identify {k} degree-{self.degree} basis functions"
            )
        x = self.basis(a)
        design, target = x, z
        if self.ridge > 0:
            pen = np.sqrt(self.ridge * n) * np.eye(k)[1:]
            design = np.vstack([x, pen])
            target = np.vstack([z, np.zeros((k - 1, z.shape[1]))])
        u, sv, vt = np.linalg.svd(design, full_matrices=False)
        if sv[-1] <= RANK_TOLERANCE * sv[0]:
            raise SingularBasis(f"sieve basis is rank deficient (singular value ratio {sv[-1] / sv[0]:.2e})")
        self.coef_ = vt.T @ ((u.T @ target) / sv[:, None])
        resid = z - x @ self.coef_
        # Leave-one-out residuals from the hat-matrix diagonal.
        lev = np.sum(u[:n] ** 2, axis=1)
        loo = resid / np.clip(1.0 - lev, 1e-12, None)[:, None]
        self.fit_diagnostics = {
            "degree": self.degree,
            "n_basis": k,
            "in_sample_mse": float(np.mean(resid**2)),
            "cv_mse": float(np.mean(loo**2)),
        }

    def _predict(self, a):
        return self.basis(a) @ self.coef_
