"""Pluggable nonparametric estimators of E(Z | A)."""
from __future__ import annotations

import numpy as np

from .base import CondExpModel, ExternalRegressor
from .boosting import BoostedStumps
from .kernel import LocalLinear, NadarayaWatson, default_bandwidth_grid, select_bandwidth
from .oracle import oracle_condexp
from .sieve import SievePoly

METHODS = {
    "kernel_nw": NadarayaWatson,
    "local_linear": LocalLinear,
    "sieve_poly": SievePoly,
    "boosted_stumps": BoostedStumps,
}

DEFAULT_METHOD = "sieve_poly"


def make_model(method=DEFAULT_METHOD, **hyperparams) -> CondExpModel:
    """Unfitted model for a method name, or an adapter around a fit/predict object."""
    if isinstance(method, CondExpModel):
        return method
    if not isinstance(method, str):
        if not (hasattr(method, "fit") and hasattr(method, "predict")):
            raise TypeError("custom regressors need fit(a, z) and predict(a) methods")
        return ExternalRegressor(method)
    try:
        cls = METHODS[method]
    except KeyError:
        raise ValueError(f"unknown method {method!r}; choose from {sorted(METHODS)}") from None
    return cls(**hyperparams)


def fit(a, z, method=DEFAULT_METHOD, **hyperparams) -> CondExpModel:
    return make_model(method, **hyperparams).fit(a, z)


def predict(model: CondExpModel, a_query) -> np.ndarray:
    return model.predict(a_query)


__all__ = [
    "BoostedStumps",
    "CondExpModel",
    "DEFAULT_METHOD",
    "ExternalRegressor",
    "LocalLinear",
    "METHODS",
    "NadarayaWatson",
    "SievePoly",
    "default_bandwidth_grid",
    "fit",
    "make_model",
    "oracle_condexp",
    "predict",
    "select_bandwidth",
]
