from fractions import Fraction

import numpy as np
import pytest

from eunc.core import NoiseSpec, ScenarioSpec
from eunc.dgp import (
    bundled_scenarios,
    example3_condition_matrix,
    gaussian_moment,
    load_scenario,
    make_rng,
    population_moments,
    sample,
    spec_from_dict,
    spec_to_dict,
)
from eunc.errors import ConfigError, InvalidSpec, UnsupportedMoment
from oracles import EXAMPLE3_EXACT, fraction_det, mc_moment


def test_bundled_scenarios_present():
    names = bundled_scenarios()
    for k in range(1, 8):
        assert f"table1_case{k}" in names
    for k in range(1, 10):
        assert f"table23_case{k}" in names
    assert {"example1", "example3"} <= set(names)


def test_unknown_scenario():
    with pytest.raises(ConfigError):
        load_scenario("no_such_case")


@pytest.mark.parametrize("name", ["table1_case5", "table23_case9", "example3"])
def test_scenario_dict_round_trip(name):
    spec = load_scenario(name)
    back = spec_from_dict(spec_to_dict(spec))
    for key in ("gamma", "lam", "sigma", "alpha", "beta", "s"):
        np.testing.assert_array_equal(getattr(back, key), getattr(spec, key))
    assert back.treatment_noise == spec.treatment_noise


class TestSample:
    def test_bit_identical(self, case1):
        a, b = sample(case1, 300, 42), sample(case1, 300, 42)
        np.testing.assert_array_equal(a.to_matrix(), b.to_matrix())
        assert not np.array_equal(sample(case1, 300, 43).to_matrix(), a.to_matrix())

    def test_streams_independent_of_order(self, case1):
        x = [sample(case1, 50, make_rng(7, r)).to_matrix() for r in range(3)]
        y = [sample(case1, 50, make_rng(7, r)).to_matrix() for r in (2, 1, 0)][::-1]
        for u, v in zip(x, y):
            np.testing.assert_array_equal(u, v)

    def test_seed_range(self):
        with pytest.raises(ValueError):
            make_rng(-1)

    def test_case1_cov(self, case1):
        d = sample(case1, 500, 3)
        c = np.cov(d.z[:, 0], d.a[:, 0])[0, 1]
        # var(Z A) is about var(A) + 1 for this design.
        se = np.sqrt((np.var(d.a[:, 0]) + 1) / 500)
        assert abs(c - 1.0) < 3 * se
        assert d.to_matrix().shape[1] == 3

    def test_disconnected(self):
        spec = ScenarioSpec(gamma=[[0.0]], lam=[[0.0]], sigma=[[0.0]], alpha=[1.0], beta=[0.0],
                            s=[0.0], treatment_noise=NoiseSpec.gaussian())
        d = sample(spec, 20000, 1)
        assert abs(np.corrcoef(d.z[:, 0], d.a[:, 0])[0, 1]) < 0.03
        assert d.a.std() == pytest.approx(1.0, abs=0.03)

    def test_example3_second_moment(self):
        d = sample(load_scenario("example3"), 50000, 5)
        assert d.column_names == ("Z1", "Z2", "A1", "A2", "Y")
        m, se = mc_moment(d.to_matrix(), [2], [2])
        assert abs(m - 7 / 3) < 3 * se


class TestPopulationMoments:
    def test_example1(self):
        spec = load_scenario("example1")
        m = population_moments(spec, [[("Z1", 1), ("A1", 1)], [("A1", 2)],
                                      [("Z1", 1), ("A1", 3)], [("A1", 4)]])
        assert m[0] / m[1] == pytest.approx(3 / 7, abs=1e-12)
        assert m[2] / m[3] == pytest.approx(35 / 81, abs=1e-12)

    def test_all_zero_coefficients(self):
        spec = ScenarioSpec(gamma=[[0.0]], lam=[[0.0]], sigma=[[0.0]], alpha=[0.0], beta=[0.0],
                            s=[0.0], treatment_noise=NoiseSpec.uniform(-1, 1))
        assert population_moments(spec, [[("Z1", 1), ("A1", 1)]])[0] == 0.0

    def test_isserlis(self):
        cov = np.array([[2.0, 0.5], [0.5, 1.0]])
        assert gaussian_moment(cov, (4, 0)) == pytest.approx(3 * 4)
        assert gaussian_moment(cov, (1, 1)) == pytest.approx(0.5)
        # E(x^2 y^2) = s11 s22 + 2 s12^2
        assert gaussian_moment(cov, (2, 2)) == pytest.approx(2 + 2 * 0.25)
        assert gaussian_moment(cov, (2, 1)) == 0.0

    def test_degree_and_names(self, case1):
        with pytest.raises(UnsupportedMoment):
            population_moments(case1, [[("A1", 9)]])
        with pytest.raises(UnsupportedMoment):
            population_moments(case1, [[("U1", 1)]])

    def test_variance_identity(self):
        for name in ("table1_case1", "table1_case4", "table1_case6"):
            spec = load_scenario(name)
            g, lam, xi = spec.gamma[0, 0], spec.lam[0], spec.sigma[0]
            m2, m1 = population_moments(spec, [[("A1", 2)], [("A1", 1)]])
            closed = g**2 + lam @ lam + 2 * g * xi @ lam + spec.treatment_noise[0].variance
            assert m2 - m1**2 == pytest.approx(closed, rel=1e-12)

    @pytest.mark.slow
    @pytest.mark.parametrize("name", ["table1_case5", "example3"])
    def test_monte_carlo_agreement(self, name):
        spec = load_scenario(name)
        d = sample(spec, 200_000, 9)
        mat = d.to_matrix()
        cols = {c: k for k, c in enumerate(d.column_names)}
        monos = [[("A1", 2)], [("Z1", 1), ("A1", 1)], [("Z1", 1), ("A1", 3)],
                 [("Y", 1), ("A1", 1)], [("A1", 2), ("Y", 2)]]
        if spec.p == 2:
            monos += [[("A2", 3), ("Z2", 1)], [("A1", 1), ("A2", 3)]]
        exact = population_moments(spec, monos)
        for mono, ex in zip(monos, exact):
            est, se = mc_moment(mat, [cols[v] for v, _ in mono], [k for _, k in mono])
            assert abs(est - ex) < 4 * se, (mono, est, ex, se)


class TestExample3:
    def test_matches_exact_rationals(self):
        mat, det = example3_condition_matrix(load_scenario("example3"))
        np.testing.assert_allclose(mat, np.array(EXAMPLE3_EXACT, dtype=float), atol=1e-12)
        assert det == pytest.approx(float(fraction_det(EXAMPLE3_EXACT)), rel=1e-9)
        assert fraction_det(EXAMPLE3_EXACT) == Fraction(64, 225)

    def test_duplicate_treatment_is_singular(self):
        # A2 = A1 through the DAG with negligible own noise: a copy of A1.
        copy = load_scenario("example3").replace(
            gamma=np.array([[1.0, 0.0], [0.0, 0.0]]), lam=np.array([[1.0], [0.0]]),
            treatment_noise=(NoiseSpec.uniform(-1, 1), NoiseSpec.gaussian(0, 1e-300)),
            treatment_dag=np.array([[0.0, 0.0], [1.0, 0.0]]))
        _, det = example3_condition_matrix(copy)
        assert abs(det) < 1e-9

    def test_needs_two_by_two(self, case1):
        with pytest.raises(InvalidSpec):
            example3_condition_matrix(case1)
