import numpy as np
import pytest
from scipy import stats

from eunc import condexp
from eunc.condexp import (
    BoostedStumps,
    LocalLinear,
    NadarayaWatson,
    SievePoly,
    default_bandwidth_grid,
    oracle_condexp,
    select_bandwidth,
)
from eunc.condexp.kernel import cv_losses, ll_weights, nw_weights
from eunc.core import NoiseSpec
from eunc.dgp import load_scenario, sample
from eunc.errors import DimensionMismatch, SingularBasis, TooFewSamples, UnsupportedSpec
from oracles import naive_ll_predict, naive_nw_predict, quad_condexp

METHODS = ["kernel_nw", "local_linear", "sieve_poly", "boosted_stumps"]


def _central(a, frac=0.9):
    lo, hi = np.quantile(a, [(1 - frac) / 2, 1 - (1 - frac) / 2])
    return (a >= lo) & (a <= hi)


class TestFitPredict:
    @pytest.mark.parametrize("method", METHODS)
    def test_noiseless_linear(self, method):
        a = np.random.default_rng(0).uniform(-2, 2, size=(2000, 1))
        model = condexp.fit(a, 2 * a, method)
        q = np.linspace(-1.5, 1.5, 41)[:, None]
        err = condexp.predict(model, q) - 2 * q
        if method == "sieve_poly":
            assert np.max(np.abs(err)) < 1e-6
        else:
            assert np.sqrt(np.mean(err**2)) < 0.05

    def test_sieve_interpolates_training_points(self):
        a = np.random.default_rng(1).exponential(size=(300, 1))
        z = np.column_stack([3 * a[:, 0] - 1, -a[:, 0]])
        model = SievePoly().fit(a, z)
        np.testing.assert_allclose(model.predict(a[:10]), z[:10], atol=1e-6)

    @pytest.mark.parametrize("method", METHODS)
    def test_pure_noise_predicts_mean(self, method):
        rng = np.random.default_rng(2)
        a, z = rng.standard_normal((1000, 1)), rng.standard_normal((1000, 1))
        pred = condexp.fit(a, z, method).predict(np.linspace(-1, 1, 11)[:, None])
        assert np.max(np.abs(pred - z.mean())) < 0.25

    def test_huge_bandwidth_is_constant(self):
        rng = np.random.default_rng(3)
        a, z = rng.standard_normal((200, 1)), rng.standard_normal((200, 2))
        pred = NadarayaWatson(bandwidth=1e8).fit(a, z).predict(rng.standard_normal((7, 1)))
        np.testing.assert_allclose(pred, np.broadcast_to(z.mean(axis=0), pred.shape), atol=1e-10)

    def test_sieve_vs_oracle_case1(self, case1):
        d = sample(case1, 5000, 21)
        model = SievePoly(degree=5).fit(d.a, d.z)
        keep = _central(d.a[:, 0])
        err = model.predict(d.a[keep]) - oracle_condexp(case1, d.a[keep, 0])
        assert np.sqrt(np.mean(err**2)) < 0.05

    def test_sieve_tracks_population_projection(self, case1):
        # The degree-5 span cannot represent this target closely, but the fit
        # converges to the best degree-5 approximation of it.
        big = sample(case1, 50_000, 77)
        proj = SievePoly(degree=5).fit(big.a, oracle_condexp(case1, big.a[:, 0]))
        d = sample(case1, 5000, 21)
        keep = _central(d.a[:, 0])
        fit = SievePoly(degree=5).fit(d.a, d.z).predict(d.a[keep])
        assert np.sqrt(np.mean((fit - proj.predict(d.a[keep])) ** 2)) < 0.05

    @pytest.mark.slow
    def test_sieve_rate(self, case1):
        sizes = (500, 2000, 8000)
        sup = []
        for n in sizes:
            errs = []
            for seed in range(5):
                d = sample(case1, n, 100 + seed)
                q = np.linspace(*np.quantile(d.a[:, 0], [0.05, 0.95]), 200)
                fit = SievePoly(degree=5).fit(d.a, d.z).predict(q[:, None])
                errs.append(np.max(np.abs(fit - oracle_condexp(case1, q))))
            sup.append(np.mean(errs))
        slope = np.polyfit(np.log(sizes), np.log(sup), 1)[0]
        assert slope <= -0.25

    @pytest.mark.parametrize("method", ["sieve_poly", "kernel_nw", "local_linear"])
    def test_affine_equivariance(self, method):
        rng = np.random.default_rng(4)
        a = rng.exponential(size=(400, 1))
        z = np.column_stack([np.sin(a[:, 0]), a[:, 0] ** 2]) + 0.1 * rng.standard_normal((400, 2))
        m = np.array([[2.0, -1.0], [0.5, 3.0]])
        b = np.array([1.0, -4.0])
        kw = {} if method == "sieve_poly" else {"bandwidth": 0.3}
        q = rng.exponential(size=(20, 1))
        base = condexp.fit(a, z, method, **kw).predict(q)
        moved = condexp.fit(a, z @ m.T + b, method, **kw).predict(q)
        np.testing.assert_allclose(moved, base @ m.T + b, atol=1e-7)

    def test_boosting_deterministic_and_accurate(self):
        rng = np.random.default_rng(5)
        a = rng.uniform(-2, 2, (800, 1))
        z = np.tanh(2 * a) + 0.1 * rng.standard_normal((800, 1))
        p1 = BoostedStumps(seed=3).fit(a, z).predict(a)
        p2 = BoostedStumps(seed=3).fit(a, z).predict(a)
        np.testing.assert_array_equal(p1, p2)
        assert np.sqrt(np.mean((p1 - np.tanh(2 * a)) ** 2)) < 0.08

    @pytest.mark.parametrize("method", METHODS)
    def test_two_treatments_finite(self, method):
        d = sample(load_scenario("example3"), 400, 6)
        model = condexp.fit(d.a, d.z, method)
        pred = model.predict(d.a * 3)  # far outside the hull
        assert pred.shape == (400, 2) and np.all(np.isfinite(pred))

    def test_guards(self):
        a = np.arange(30.0)[:, None]
        with pytest.raises(TooFewSamples):
            SievePoly().fit(a[:10], a[:10])
        with pytest.raises(DimensionMismatch):
            SievePoly().fit(a, a[:25])
        with pytest.raises(DimensionMismatch):
            SievePoly().fit(a, a).predict(np.ones((3, 2)))
        with pytest.raises(SingularBasis):
            SievePoly(degree=5).fit(np.tile([0.0, 1.0, 2.0], 10)[:, None], a)
        with pytest.raises(ValueError, match="unknown method"):
            condexp.make_model("forest")

    def test_external_regressor(self):
        class Linear:
            def fit(self, a, z):
                self.coef = np.linalg.lstsq(np.column_stack([np.ones(len(a)), a]), z, rcond=None)[0]
                return self

            def predict(self, a):
                return np.column_stack([np.ones(len(a)), a]) @ self.coef

        a = np.random.default_rng(0).standard_normal((50, 1))
        model = condexp.fit(a, 3 * a + 1, Linear())
        np.testing.assert_allclose(model.predict([[2.0]]), [[7.0]])
        assert model.describe()["method"] == "external:Linear"


class TestSmootherWeights:
    @pytest.mark.parametrize("weight_fn", [nw_weights, ll_weights])
    def test_rows_sum_to_one(self, weight_fn):
        rng = np.random.default_rng(7)
        a = rng.exponential(size=(150, 2))
        q = rng.exponential(size=(40, 2))
        w = weight_fn(q, a, np.array([0.3, 0.5]))
        np.testing.assert_allclose(w.sum(axis=1), 1.0, atol=1e-10)
        if weight_fn is nw_weights:
            assert np.all(w >= 0)

    def test_local_linear_reproduces_lines(self):
        rng = np.random.default_rng(8)
        a = rng.standard_normal((100, 2))
        q = rng.standard_normal((10, 2))
        w = ll_weights(q, a, np.array([0.7, 0.7]))
        np.testing.assert_allclose(w @ (a @ [2.0, -1.0] + 3.0), q @ [2.0, -1.0] + 3.0, atol=1e-8)

    @pytest.mark.parametrize("h", [0.1, 0.4, 2.0])
    def test_against_naive_loops(self, h):
        rng = np.random.default_rng(9)
        a = rng.uniform(-1, 1, 80)
        z = np.sin(3 * a) + 0.1 * rng.standard_normal(80)
        q = np.linspace(-0.9, 0.9, 15)
        np.testing.assert_allclose(nw_weights(q[:, None], a[:, None], np.array([h])) @ z,
                                   naive_nw_predict(a, z, q, h), rtol=1e-10)
        np.testing.assert_allclose(ll_weights(q[:, None], a[:, None], np.array([h])) @ z,
                                   naive_ll_predict(a, z, q, h), rtol=1e-6, atol=1e-8)


def _exhaustive_cv(a, z, grid, naive, folds=5, seed=0):
    from eunc.condexp.kernel import _fold_ids

    ids = _fold_ids(len(a), folds, seed)
    losses = []
    for h in grid:
        sse = 0.0
        for f in range(folds):
            tr, te = ids != f, ids == f
            q = np.clip(a[te], a[tr].min(), a[tr].max())
            sse += np.sum((z[te] - naive(a[tr], z[tr], q, h)) ** 2)
        losses.append(sse / len(a))
    return np.array(losses)


class TestBandwidth:
    def _grid(self, a):
        return [float(g[0]) for g in default_bandwidth_grid(a[:, None])]

    @pytest.mark.parametrize("method, naive", [("kernel_nw", naive_nw_predict),
                                               ("local_linear", naive_ll_predict)])
    @pytest.mark.parametrize("target", ["linear", "noise", "step"])
    def test_matches_exhaustive_oracle(self, method, naive, target):
        rng = np.random.default_rng(10)
        a = rng.standard_normal(200)
        z = {"linear": 2 * a, "noise": rng.standard_normal(200), "step": (a > 0).astype(float)}[target]
        grid = self._grid(a)
        ref = _exhaustive_cv(a, z, grid, naive)
        fast = cv_losses(a, z, grid, nw_weights if method == "kernel_nw" else ll_weights)
        np.testing.assert_allclose(fast, ref, rtol=1e-6)
        h = select_bandwidth(a, z, grid, method)[0]
        assert h == pytest.approx(grid[int(np.argmin(ref))]) or np.isclose(ref[grid.index(h)], ref.min())

    def test_linear_target_local_linear_takes_widest(self):
        a = np.random.default_rng(11).standard_normal(200)
        grid = self._grid(a)
        assert select_bandwidth(a, 2 * a, grid, "local_linear")[0] == pytest.approx(max(grid))

    @pytest.mark.parametrize("method", ["kernel_nw", "local_linear"])
    def test_noise_target_takes_widest(self, method):
        hits = 0
        for seed in range(10):
            rng = np.random.default_rng(seed)
            a = rng.standard_normal(200)
            grid = self._grid(a)
            hits += select_bandwidth(a, rng.standard_normal(200), grid, method)[0] == max(grid)
        assert hits >= 6

    def test_step_target_below_sd(self):
        a = np.random.default_rng(12).standard_normal(200)
        h = select_bandwidth(a, (a > 0).astype(float), self._grid(a))[0]
        assert h < a.std(ddof=1)

    def test_empty_grid(self):
        with pytest.raises(ValueError):
            select_bandwidth(np.arange(30.0), np.arange(30.0), [])


class TestOracle:
    @pytest.mark.parametrize("name", ["table1_case1", "table1_case4", "table1_case6", "example1"])
    def test_matches_quadrature(self, name):
        spec = load_scenario(name)
        q = np.array([-1.5, 0.0, 0.7, 3.0, 12.0, 30.0])
        if name == "example1":
            q = q[:4]  # A = zeta + U(-1, 1) has negligible density far out
        np.testing.assert_allclose(oracle_condexp(spec, q), quad_condexp(spec, q), rtol=1e-6, atol=1e-9)

    def test_t_noise_matches_quadrature(self, case1):
        spec = case1.replace(treatment_noise=(NoiseSpec.student_t(5),), sigma=np.array([[0.5]]))
        q = np.array([-4.0, -0.3, 0.0, 2.2])
        np.testing.assert_allclose(oracle_condexp(spec, q), quad_condexp(spec, q), rtol=1e-6, atol=1e-9)

    def test_gaussian_noise_is_linear(self, case1):
        spec = case1.replace(treatment_noise=(NoiseSpec.gaussian(0, 2),), sigma=np.array([[0.5]]))
        q = np.linspace(-3, 3, 7)
        v = 1 + 0.25 + 2 * 0.5 * 0.5
        kappa = (1 + 0.5 * 0.5) / v
        np.testing.assert_allclose(oracle_condexp(spec, q)[:, 0], kappa * v / (v + 4) * q, atol=1e-10)

    def test_example1(self):
        spec = load_scenario("example1")
        assert oracle_condexp(spec, [0.0])[0, 0] == pytest.approx(0.0, abs=1e-12)
        # Best linear coefficient of the oracle curve under the law of A.
        sd = np.sqrt(2.0)
        a = np.linspace(-12, 12, 40001)
        dens = (stats.norm.cdf((a + 1) / sd) - stats.norm.cdf((a - 1) / sd)) / 2
        m = oracle_condexp(spec, a)[:, 0]
        k = np.trapezoid(m * a * dens, a) / np.trapezoid(a * a * dens, a)
        assert k == pytest.approx(3 / 7, abs=1e-7)

    def test_unsupported(self):
        with pytest.raises(UnsupportedSpec):
            oracle_condexp(load_scenario("example3"), [0.0])
