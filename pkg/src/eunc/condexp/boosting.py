"""Stochastic gradient boosting with depth-1 regression trees (stumps)."""
from __future__ import annotations

import numpy as np

from .base import CondExpModel


def _best_stump(order, sorted_vals, resid, weight):
    """Best squared-error split over all features for one boosting round.

    ``weight`` is the 0/1 subsample indicator. Returns
    ``(feature, threshold, left_value, right_value)`` or ``None``.
    """
    best = None
    best_gain = -np.inf
    tot_r = np.dot(weight, resid)
    tot_n = weight.sum()
    for f in range(order.shape[1]):
        idx = order[:, f]
        w = weight[idx]
        cr = np.cumsum(w * resid[idx])[:-1]
        cn = np.cumsum(w)[:-1]
        vals = sorted_vals[:, f]
        ok = (vals[1:] > vals[:-1]) & (cn > 0) & (cn < tot_n)
        if not ok.any():
            continue
        rr, rn = tot_r - cr, tot_n - cn
        with np.errstate(divide="ignore", invalid="ignore"):
            gain = np.where(ok, cr**2 / cn + rr**2 / rn, -np.inf)
        i = int(np.argmax(gain))
        if gain[i] > best_gain:
            best_gain = gain[i]
            best = (f, 0.5 * (vals[i] + vals[i + 1]), cr[i] / cn[i], rr[i] / rn[i])
    return best


def _boost(a, z, rounds, learning_rate, subsample, rng, a_val=None, z_val=None, patience=None):
    n = a.shape[0]
    order = np.argsort(a, axis=0, kind="stable")
    sorted_vals = np.take_along_axis(a, order, axis=0)
    init = float(z.mean())
    pred = np.full(n, init)
    val_pred = None if a_val is None else np.full(a_val.shape[0], init)
    stumps = []
    val_loss = []
    k = max(1, int(round(subsample * n)))
    best_round, best_loss = 0, np.inf
    for m in range(rounds):
        weight = np.zeros(n)
        weight[rng.permutation(n)[:k]] = 1.0
        stump = _best_stump(order, sorted_vals, z - pred, weight)
        if stump is None:
            break
        f, thr, lv, rv = stump
        lv, rv = learning_rate * lv, learning_rate * rv
        stumps.append((f, thr, lv, rv))
        pred += np.where(a[:, f] <= thr, lv, rv)
        if val_pred is not None:
            val_pred += np.where(a_val[:, f] <= thr, lv, rv)
            loss = float(np.mean((z_val - val_pred) ** 2))
            val_loss.append(loss)
            if loss < best_loss - 1e-15:
                best_round, best_loss = m + 1, loss
            elif patience is not None and m + 1 - best_round >= patience:
                break
    return init, stumps, val_loss, best_round


class BoostedStumps(CondExpModel):
    """Gradient boosting with stumps, shrinkage and row subsampling.

    The number of rounds is chosen on a random ``validation_fraction`` holdout
    with early stopping after ``patience`` rounds without improvement, then the
    ensemble is refitted on all rows with that many rounds.
    """

    method = "boosted_stumps"

    def __init__(self, learning_rate: float = 0.1, subsample: float = 0.8,
                 max_rounds: int = 2000, patience: int = 25,
                 validation_fraction: float = 0.2, seed: int = 0):
        super().__init__()
        self.learning_rate = learning_rate
        self.subsample = subsample
        self.max_rounds = max_rounds
        self.patience = patience
        self.validation_fraction = validation_fraction
        self.seed = seed

    def _fit(self, a, z):
        rng = np.random.default_rng(self.seed)
        n = a.shape[0]
        n_val = max(1, int(round(self.validation_fraction * n)))
        perm = rng.permutation(n)
        val, train = perm[:n_val], perm[n_val:]
        self._models = []
        rounds_used, holdout = [], []
        for j in range(z.shape[1]):
            _, _, losses, best = _boost(
                a[train], z[train, j], self.max_rounds, self.learning_rate, self.subsample,
                rng, a[val], z[val, j], self.patience,
            )
            best = max(best, 1)
            init, stumps, _, _ = _boost(a, z[:, j], best, self.learning_rate, self.subsample, rng)
            self._models.append(_pack(init, stumps))
            rounds_used.append(best)
            holdout.append(losses[best - 1] if losses else float("nan"))
        resid = z - self._predict(a)
        self.fit_diagnostics = {
            "rounds": rounds_used,
            "cv_mse": float(np.mean(holdout)),
            "in_sample_mse": float(np.mean(resid**2)),
        }

    def _predict(self, a):
        out = np.empty((a.shape[0], len(self._models)))
        for j, (init, feat, thr, left, right) in enumerate(self._models):
            if feat.size == 0:
                out[:, j] = init
                continue
            goes_left = a[:, feat] <= thr
            out[:, j] = init + np.where(goes_left, left, right).sum(axis=1)
        return out


def _pack(init, stumps):
    if not stumps:
        empty = np.zeros(0)
        return init, empty.astype(int), empty, empty, empty
    f, t, lv, rv = (np.array(v) for v in zip(*stumps))
    return init, f.astype(int), t, lv, rv
