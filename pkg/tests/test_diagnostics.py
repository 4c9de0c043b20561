import numpy as np
import pytest
from scipy import stats
from statsmodels.stats.diagnostic import normal_ad

from eunc.core import Dataset, standardize
from eunc.dgp import load_scenario, sample
from eunc.diagnostics import (
    DiagnosticsReport,
    anderson_darling,
    cov_rank_check,
    linear_independence_check,
    rank_condition_population,
    screen,
)
from eunc.errors import DimensionMismatch, SampleTooSmall


class TestAndersonDarling:
    def test_normal_quantiles_look_too_normal(self):
        x = stats.norm.ppf((np.arange(1, 102) - 0.5) / 101)
        assert anderson_darling(x)[1] > 0.5

    def test_exponential_rejected(self):
        x = np.random.default_rng(3).exponential(10.0, 500)
        assert anderson_darling(x)[1] < 0.001

    def test_alternating_rejected(self):
        assert anderson_darling(np.tile([0.0, 1.0], 50))[1] < 0.01

    @pytest.mark.parametrize("seed", range(8))
    @pytest.mark.parametrize("dist", ["norm", "t5", "uniform", "lognorm"])
    def test_matches_statsmodels(self, seed, dist):
        rng = np.random.default_rng(seed)
        n = 30 + 40 * seed
        x = {"norm": rng.standard_normal(n), "t5": rng.standard_t(5, n),
             "uniform": rng.uniform(size=n), "lognorm": np.exp(0.3 * rng.standard_normal(n))}[dist]
        a2_star, p = anderson_darling(x)
        ref_a2, ref_p = normal_ad(x)
        assert a2_star == pytest.approx(ref_a2 * (1 + 0.75 / n + 2.25 / n**2), rel=1e-10)
        # statsmodels does not clip tiny p-values at 0 in the far tail.
        assert p == pytest.approx(max(ref_p, 0.0), rel=1e-8, abs=1e-12)

    def test_guards(self):
        with pytest.raises(SampleTooSmall):
            anderson_darling([1.0, 2.0, 3.0])
        assert anderson_darling(np.ones(20)) == (float("inf"), 0.0)

    def test_location_scale_invariant(self):
        x = np.random.default_rng(1).gamma(3.0, size=200)
        assert anderson_darling(x) == pytest.approx(anderson_darling(5 - 3 * x), rel=1e-10)


class TestRank:
    def test_case1_full_rank(self, case1_data):
        r = cov_rank_check(standardize(case1_data))
        assert (r.rank, r.full_row_rank) == (1, True)

    def test_disconnected_rank_zero(self):
        rng = np.random.default_rng(2)
        d = Dataset(rng.standard_normal(500), rng.exponential(size=500), rng.standard_normal(500))
        r = cov_rank_check(standardize(d), "statistical")
        assert (r.rank, r.full_row_rank) == (0, False)
        # The machine-precision policy sees sampling noise as signal.
        assert cov_rank_check(standardize(d)).rank == 1
        assert cov_rank_check(standardize(d), 1.0).rank == 0

    def test_example3_full_rank(self):
        d = sample(load_scenario("example3"), 2000, 4)
        r = cov_rank_check(standardize(d))
        assert (r.rank, r.full_row_rank) == (2, True)

    def test_more_treatments_than_covariates(self):
        rng = np.random.default_rng(0)
        z = rng.standard_normal(100)
        a = np.column_stack([z + rng.exponential(size=100), z + rng.exponential(size=100)])
        r = cov_rank_check(standardize(Dataset(z, a, rng.standard_normal(100))))
        assert not r.full_row_rank and r.rank <= 1 and r.note

    def test_population_condition(self):
        rng = np.random.default_rng(5)
        assert rank_condition_population(np.eye(2), rng.standard_normal((2, 3)), np.zeros((2, 3)))
        assert not rank_condition_population(np.zeros((1, 1)), [[0.5]], [[0.0]])
        ex3 = load_scenario("example3")
        assert rank_condition_population(ex3.gamma, ex3.lam, ex3.sigma)
        with pytest.raises(DimensionMismatch):
            rank_condition_population(np.eye(2), np.ones((2, 1)), np.zeros((3, 1)))

    def test_population_condition_rotation_invariant(self):
        rng = np.random.default_rng(8)
        for _ in range(20):
            g = rng.standard_normal((2, 3)) * (rng.random((2, 3)) < 0.6)
            lam = rng.standard_normal((2, 2)) * (rng.random((2, 2)) < 0.6)
            sig = 0.3 * rng.standard_normal((3, 2)) * (rng.random((3, 2)) < 0.6)
            q, _ = np.linalg.qr(rng.standard_normal((3, 3)))
            # Rotating Z maps Gamma -> Gamma Q and Sigma -> Q' Sigma.
            assert rank_condition_population(g, lam, sig) == rank_condition_population(g @ q, lam, q.T @ sig)


class TestLinearIndependence:
    def test_scaled_copy(self):
        a = np.random.default_rng(0).exponential(size=(200, 1))
        for c in (1e-6, -3.0, 250.0):
            assert linear_independence_check(a, c * a)[0] is False

    def test_matrix_map(self):
        a = np.random.default_rng(1).exponential(size=(200, 2))
        assert linear_independence_check(a, a @ np.array([[1.0, 2.0], [0.5, -1.0]]))[0] is False

    def test_orthogonal(self):
        rng = np.random.default_rng(2)
        a = rng.standard_normal((300, 1))
        m = rng.standard_normal((300, 1))
        m -= a * (a[:, 0] @ m[:, 0]) / (a[:, 0] @ a[:, 0])
        ok, cond = linear_independence_check(a, m)
        assert ok and cond == pytest.approx(1.0, abs=1e-10)

    def test_zero_column(self):
        assert linear_independence_check(np.ones((10, 1)), np.zeros((10, 1))) == (False, float("inf"))


class TestScreen:
    def test_case1_passes(self, case1_data):
        r = screen(standardize(case1_data))
        assert r.screen_pass and r.z_gaussian and r.a_non_gaussian
        assert r.overall_pass is False  # independence not yet checked
        assert r.failures() == ["linear independence not checked"]

    def test_gaussian_treatment_fails(self):
        spec = load_scenario("table1_case1")
        from eunc.core import NoiseSpec
        d = sample(spec.replace(treatment_noise=(NoiseSpec.gaussian(),)), 500, 1)
        r = screen(standardize(d))
        assert not r.a_non_gaussian
        assert "no treatment column rejects normality" in r.failures()

    def test_bonferroni(self):
        r = DiagnosticsReport(np.array([0.03, 0.5]), np.array([0.001]), 1, True, 0.05)
        assert r.z_gaussian  # 0.03 > 0.05 / 2
        r = DiagnosticsReport(np.array([0.03]), np.array([0.001]), 1, True, 0.05)
        assert not r.z_gaussian

    def test_report_serialization(self, case1_data):
        r = screen(standardize(case1_data))
        r.linear_independence, r.condition_number = True, 3.0
        d = r.to_dict()
        assert d["overall_pass"] is True
        assert "cov_az_rank: 1" in r.to_text()
