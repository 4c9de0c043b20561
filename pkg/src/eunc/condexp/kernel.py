"""Nadaraya-Watson and local linear smoothers with a Gaussian product kernel."""
from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from .base import CondExpModel, _as_2d

DEFAULT_MULTIPLIERS = (0.5, 0.75, 1.0, 1.5, 2.0, 3.0)
MAX_KERNEL_DIM = 5
_CHUNK = 2048


def default_bandwidth_grid(a, multipliers: Sequence[float] = DEFAULT_MULTIPLIERS) -> list:
    """Candidates ``c * sd(A) * n^(-1/(4+p))``, one bandwidth vector per multiplier."""
    a = _as_2d(a)
    n, p = a.shape
    base = a.std(axis=0, ddof=1) * n ** (-1.0 / (4 + p))
    return [c * base for c in multipliers]


def _log_kernel(q: np.ndarray, a: np.ndarray, h: np.ndarray) -> np.ndarray:
    d = (q[:, None, :] - a[None, :, :]) / h
    return -0.5 * np.einsum("mnp,mnp->mn", d, d)


def nw_weights(q, a, h) -> np.ndarray:
    """Row-stochastic Nadaraya-Watson weight matrix, queries x training points."""
    logk = _log_kernel(q, a, h)
    logk -= logk.max(axis=1, keepdims=True)
    w = np.exp(logk)
    return w / w.sum(axis=1, keepdims=True)


def ll_weights(q, a, h, ridge: float = 1e-10) -> np.ndarray:
    """Equivalent-kernel weights of the local linear smoother.

    Each row sums to one and reproduces linear functions of ``a`` exactly.
    """
    logk = _log_kernel(q, a, h)
    logk -= logk.max(axis=1, keepdims=True)
    k = np.exp(logk)
    m, p = q.shape
    diff = a[None, :, :] - q[:, None, :]                     # m x n x p
    design = np.concatenate([np.ones(diff.shape[:2] + (1,)), diff], axis=2)
    gram = np.einsum("mn,mni,mnj->mij", k, design, design)
    scale = gram[:, 0, 0][:, None]
    gram[:, 1:, 1:] += ridge * scale[:, :, None] * np.eye(p)
    e1 = np.zeros((m, p + 1, 1))
    e1[:, 0, 0] = 1.0
    c = np.linalg.solve(gram, e1)[:, :, 0]                   # m x (p+1)
    return k * np.einsum("mni,mi->mn", design, c)


class _KernelSmoother(CondExpModel):
    weight_fn = staticmethod(nw_weights)

    def __init__(self, bandwidth=None, bandwidth_grid=None, folds: int = 5, seed: int = 0):
        super().__init__()
        self.bandwidth = None if bandwidth is None else np.atleast_1d(np.asarray(bandwidth, dtype=float))
        self.bandwidth_grid = bandwidth_grid
        self.folds = folds
        self.seed = seed

    def _fit(self, a, z):
        if a.shape[1] > MAX_KERNEL_DIM:
            raise ValueError(f"kernel smoothers support at most {MAX_KERNEL_DIM} treatments")
        self._a, self._z = a.copy(), z.copy()
        self._lo, self._hi = a.min(axis=0), a.max(axis=0)
        if self.bandwidth is None:
            grid = self.bandwidth_grid
            if grid is None:
                grid = default_bandwidth_grid(a)
            elif np.ndim(grid) == 1 and len(grid) and np.ndim(grid[0]) == 0 and a.shape[1] > 1:
                grid = [np.full(a.shape[1], g) for g in grid]
            h, losses = _select(a, z, grid, self.weight_fn, self.folds, self.seed)
            self.fit_diagnostics["cv_losses"] = [float(v) for v in losses]
            self.fit_diagnostics["cv_mse"] = float(np.min(losses))
        else:
            h = np.broadcast_to(self.bandwidth, (a.shape[1],)).astype(float)
        self.bandwidth_ = h
        self.fit_diagnostics["bandwidth"] = [float(v) for v in h]
        resid = z - self._predict(a)
        self.fit_diagnostics["in_sample_mse"] = float(np.mean(resid**2))

    def clamp(self, q: np.ndarray) -> np.ndarray:
        """Project queries onto the bounding box of the training inputs."""
        return np.clip(q, self._lo, self._hi)

    def smoother_weights(self, a_query) -> np.ndarray:
        q = self.clamp(_as_2d(a_query))
        return self.weight_fn(q, self._a, self.bandwidth_)

    def _predict(self, q):
        q = self.clamp(q)
        out = np.empty((q.shape[0], self._z.shape[1]))
        for start in range(0, q.shape[0], _CHUNK):
            sl = slice(start, start + _CHUNK)
            out[sl] = self.weight_fn(q[sl], self._a, self.bandwidth_) @ self._z
        return out


class NadarayaWatson(_KernelSmoother):
    method = "kernel_nw"
    weight_fn = staticmethod(nw_weights)


class LocalLinear(_KernelSmoother):
    method = "local_linear"
    weight_fn = staticmethod(ll_weights)


def _fold_ids(n: int, folds: int, seed: int) -> np.ndarray:
    perm = np.random.default_rng(seed).permutation(n)
    ids = np.empty(n, dtype=int)
    ids[perm] = np.arange(n) % folds
    return ids


def cv_losses(a, z, grid, weight_fn=nw_weights, folds: int = 5, seed: int = 0) -> np.ndarray:
    """Mean squared out-of-fold prediction error for every candidate bandwidth."""
    a, z = _as_2d(a), _as_2d(z)
    ids = _fold_ids(a.shape[0], folds, seed)
    losses = []
    for h in grid:
        h = np.broadcast_to(np.asarray(h, dtype=float), (a.shape[1],))
        sse = 0.0
        for f in range(folds):
            test, train = ids == f, ids != f
            at = a[train]
            q = np.clip(a[test], at.min(axis=0), at.max(axis=0))
            pred = weight_fn(q, at, h) @ z[train]
            sse += float(np.sum((z[test] - pred) ** 2))
        losses.append(sse / z.size)
    return np.array(losses)


def _select(a, z, grid, weight_fn, folds, seed):
    losses = cv_losses(a, z, grid, weight_fn, folds, seed)
    best = losses.min()
    # Ties (within rounding) go to the widest bandwidth.
    near = np.flatnonzero(losses <= best * (1 + 1e-9) + 1e-15)
    widths = [float(np.prod(np.broadcast_to(grid[k], (a.shape[1],)))) for k in near]
    pick = near[int(np.argmax(widths))]
    return np.broadcast_to(np.asarray(grid[pick], dtype=float), (a.shape[1],)).copy(), losses


def select_bandwidth(
    a,
    z,
    grid: Optional[Sequence] = None,
    method: str = "kernel_nw",
    folds: int = 5,
    seed: int = 0,
) -> np.ndarray:
    """Per-dimension bandwidths minimizing ``folds``-fold cross-validated MSE."""
    a = _as_2d(a)
    if grid is None:
        grid = default_bandwidth_grid(a)
    if len(grid) == 0:
        raise ValueError("bandwidth grid is empty")
    weight_fn = ll_weights if method == "local_linear" else nw_weights
    h, _ = _select(a, _as_2d(z), list(grid), weight_fn, folds, seed)
    return h
