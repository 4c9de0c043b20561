"""Common interface for fitted E(Z | A) regressors."""
from __future__ import annotations

import numpy as np

from ..errors import DimensionMismatch, TooFewSamples

MIN_SAMPLES = 20


class CondExpModel:
    """A fitted vector regressor ``m(a) ~ E(Z | A = a)``.

    Subclasses set ``method`` and implement ``_fit`` and ``_predict``; one
    regression is fitted per output column with shared hyperparameters.
    """

    method = "base"

    def __init__(self):
        self.input_dim = None
        self.output_dim = None
        self.fit_diagnostics = {}

    def fit(self, a, z):
        a, z = _as_2d(a), _as_2d(z)
        if a.shape[0] != z.shape[0]:
            raise DimensionMismatch(f"a has {a.shape[0]} rows but z has {z.shape[0]}")
        if a.shape[0] < MIN_SAMPLES:
            raise TooFewSamples(f"need at least {MIN_SAMPLES} rows to fit E(Z|A), got {a.shape[0]}")
        self.input_dim, self.output_dim = a.shape[1], z.shape[1]
        self._fit(a, z)
        return self

    def predict(self, a_query) -> np.ndarray:
        if self.input_dim is None:
            raise RuntimeError("model is not fitted")
        q = _as_2d(a_query)
        if q.shape[1] != self.input_dim:
            raise DimensionMismatch(f"queries have {q.shape[1]} columns, model expects {self.input_dim}")
        return self._predict(q)

    def _fit(self, a, z):
        raise NotImplementedError

    def _predict(self, a):
        raise NotImplementedError

    def describe(self) -> dict:
        return {"method": self.method, **self.fit_diagnostics}


class ExternalRegressor(CondExpModel):
    """Adapter for any object with scikit-learn style ``fit``/``predict``."""

    method = "external"

    def __init__(self, estimator):
        super().__init__()
        self.estimator = estimator
        self.method = f"external:{type(estimator).__name__}"

    def _fit(self, a, z):
        self.estimator.fit(a, z if z.shape[1] > 1 else z[:, 0])
        resid = z - self._predict(a)
        self.fit_diagnostics = {"in_sample_mse": float(np.mean(resid**2))}

    def _predict(self, a):
        return _as_2d(self.estimator.predict(a))


def _as_2d(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    return x
