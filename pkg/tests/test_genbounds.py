import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dualgap.errors import InputError
from dualgap.fgen import get_generator
from dualgap.genbounds import (SampledDistributionSpec, bound_term, concentration_check, covering_dimension_profile,
                               covering_number, empirical_ipm, empirical_ipm_curve, fit_loglog, fwae_empirical,
                               trial_rng, two_point_expected_ipm, verify_theorem4_structure)


def grid10():
    g = np.linspace(0, 1, 10)
    X, Y = np.meshgrid(g, g)
    return np.c_[X.ravel(), Y.ravel()]


class TestSpec:
    def test_validation(self):
        with pytest.raises(InputError):
            SampledDistributionSpec("gaussian")
        with pytest.raises(InputError):
            SampledDistributionSpec("mixture-of-points")
        with pytest.raises(InputError):
            SampledDistributionSpec("mixture-of-points", atoms=[[0.0], [1.0]], weights=[0.3, 0.3])

    def test_diameters(self):
        assert SampledDistributionSpec.two_point().diameter == 1.0
        assert SampledDistributionSpec("uniform-square").diameter == pytest.approx(math.sqrt(2))


class TestIPM:
    def test_point_mass_is_zero(self):
        spec = SampledDistributionSpec("mixture-of-points", atoms=[[0.5, 0.5]])
        assert all(empirical_ipm(spec, n, trial_rng(0, 0, 0)) == 0.0 for n in (1, 10, 100))

    def test_two_point_matches_binomial(self):
        # E |Bin(n, 1/2) / n - 1/2|, exact, against the simulated mean
        spec = SampledDistributionSpec.two_point()
        curve = empirical_ipm_curve(spec, [10, 100], trials=2000, seed=0, statistic="mean")
        _, means = curve.means()
        for n, m in zip((10, 100), means):
            exact = two_point_expected_ipm(n)
            sd = math.sqrt(0.25 / n) / math.sqrt(2000)
            assert abs(m - exact) <= 4 * sd

    def test_two_point_expected_closed_form(self):
        assert two_point_expected_ipm(1) == pytest.approx(0.5)
        assert two_point_expected_ipm(2) == pytest.approx(0.25)  # P(k=1) = 1/2 gives 0
        assert two_point_expected_ipm(10_000) == pytest.approx(math.sqrt(1 / (2 * math.pi * 10_000)), rel=1e-3)

    def test_uniform_grid_uses_dual(self):
        spec = SampledDistributionSpec("uniform-grid", grid=4)
        v = empirical_ipm(spec, 50, trial_rng(1, 0, 0))
        assert 0 < v < spec.diameter

    def test_curve_validation(self):
        spec = SampledDistributionSpec.two_point()
        with pytest.raises(InputError):
            empirical_ipm_curve(spec, [10, 10], 5, 0)
        with pytest.raises(InputError):
            empirical_ipm_curve(spec, [10, 20], 1, 0)

    def test_median_nonincreasing(self):
        spec = SampledDistributionSpec("uniform-square", grid=16)
        curve = empirical_ipm_curve(spec, [20, 60, 180, 540], trials=12, seed=4)
        _, med = curve.medians()
        inversions = sum(1 for a, b in zip(med, med[1:]) if b > a)
        assert inversions <= 1

    def test_fit_loglog(self):
        ns = np.array([10, 100, 1000])
        s, c = fit_loglog(ns, 3 * ns ** -0.5)
        assert s == pytest.approx(-0.5) and math.exp(c) == pytest.approx(3.0)

    def test_seeded(self):
        spec = SampledDistributionSpec("uniform-square", grid=8)
        a = empirical_ipm_curve(spec, [10, 20], 3, seed=9).rows
        b = empirical_ipm_curve(spec, [10, 20], 3, seed=9).rows
        assert a == b


class TestConcentration:
    def test_bound_term(self):
        assert bound_term(1.0, 100, 0.1) == pytest.approx(0.5 * math.sqrt(0.02 * math.log(10)))

    def test_two_point(self):
        res = concentration_check(SampledDistributionSpec.two_point(), 1000, 500, 0.1, seed=2)
        assert res.passed
        assert res.allowed == pytest.approx(0.1 + 2 * math.sqrt(0.09 / 500))

    def test_half_delta(self):
        res = concentration_check(SampledDistributionSpec.two_point(), 200, 100, 0.5, seed=3)
        assert res.violation_fraction <= 0.5 + 1e-12

    def test_validation(self):
        with pytest.raises(InputError):
            concentration_check(SampledDistributionSpec.two_point(), 10, 10, 1.5, 0)


class TestCovering:
    def test_examples(self):
        assert covering_number([[0.0]], 1.0).upper == 1
        r = covering_number([[0.0], [3.0]], 1.0)
        assert r.upper == r.lower == 2
        r = covering_number(grid10(), 0.5)
        assert r.upper <= 9
        # a 2 eta separated set of size 4 cannot fit in the unit square, so 3 is the best this bound can give
        assert r.lower >= 3

    def test_large_eta(self):
        pts = grid10()
        r = covering_number(pts, 2.0)
        assert r.upper == r.lower == 1

    @given(st.integers(1, 40), st.floats(0.05, 1.5), st.integers(0, 1000))
    def test_upper_at_least_lower(self, n, eta, seed):
        pts = np.random.default_rng(seed).uniform(size=(n, 2))
        r = covering_number(pts, eta)
        assert r.upper >= r.lower >= 1
        D = np.sqrt(((pts[:, None] - pts[None]) ** 2).sum(-1))
        assert np.all(D[:, list(r.centers)].min(axis=1) <= eta + 1e-12)

    def test_dimension_profile(self):
        rows, _ = covering_dimension_profile([[0.0], [1.0]], [0.5, 0.5], [0.25])
        assert rows[0][1] == 2 and rows[0][2] == pytest.approx(0.5)
        rows, d = covering_dimension_profile([[0.3, 0.3]], [1.0], [0.25, 0.1])
        assert d == 0.0 and all(r[1] == 1 for r in rows)

    def test_profile_validation(self):
        with pytest.raises(InputError):
            covering_dimension_profile([[0.0]], [1.0], [1.5])
        with pytest.raises(InputError):
            covering_dimension_profile([[0.0]], [1.0], [0.5], tau=1.0)


class TestTheorem4:
    def test_disjoint_supports_finite(self):
        rng = np.random.default_rng(0)
        x = rng.uniform(size=(20, 2))
        g = rng.uniform(size=(15, 2)) + 3.0
        for f in ("tv", "kl", "chi2"):
            assert math.isfinite(fwae_empirical(x, g, get_generator(f), 1.0))

    def test_equal_inputs(self):
        spec = SampledDistributionSpec("mixture-of-points", atoms=[[0.0], [1.0], [2.0]], weights=[0.2, 0.5, 0.3])
        out = verify_theorem4_structure(spec, spec, "tv", 1.0, [20, 200], 5, 0.1, seed=1)
        assert out["lhs"] == pytest.approx(0.0, abs=1e-12)
        assert out["passed"]

    def test_two_point(self):
        px = SampledDistributionSpec("mixture-of-points", atoms=[[0.0], [1.0]], weights=[0.7, 0.3])
        pg = SampledDistributionSpec("mixture-of-points", atoms=[[0.0], [1.0]], weights=[0.4, 0.6])
        out = verify_theorem4_structure(px, pg, "tv", 1.0, [10, 100, 1000], 20, 0.1, seed=2)
        assert out["lhs"] == pytest.approx(0.3, abs=1e-9)
        assert out["passed"] and out["per_trial_bound_checked"]
        allow = out["mean_allowance"]
        assert allow[0] > allow[1] > allow[2]

    def test_needs_discrete(self):
        with pytest.raises(InputError):
            verify_theorem4_structure(SampledDistributionSpec("uniform-square"), SampledDistributionSpec.two_point(),
                                      "tv", 1.0, [10], 2, 0.1, 0)
