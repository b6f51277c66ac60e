import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dualgap.duality import (Encoder, MarginalPenaltyProblem, SolverConfig, fgan_direct, fwae_objective, gamma_star,
                             lambda_star_estimate, reconstruction_bound_check, restricted_fgan,
                             solve_marginal_penalty, wae_objective)
from dualgap.errors import ContractError, ConvergenceError, InputError, UnsupportedGeneratorError
from dualgap.fgen import f_divergence, get_generator
from dualgap.oracle import brute_force_penalty
from dualgap.space import CostMatrix, FiniteMetricSpace, PushforwardMap, pushforward
from dualgap.transport import kantorovich_dual, wasserstein_value
from dualgap.theorems import make_map

from conftest import metric_space, simplex

TV, KL, CHI2, IND = (get_generator(n) for n in ("tv", "kl", "chi2", "indicator"))
PX, PG = np.array([0.7, 0.3]), np.array([0.4, 0.6])


def problem(p, C, r, f, lam):
    return MarginalPenaltyProblem(p, CostMatrix(C), f, lam, r)


class TestTwoPoint:
    """J(t) = |t - 0.3| + 2 lam |t - 0.6| over q = (1 - t, t), by hand."""

    def test_lambda_one(self, two_point):
        sol = solve_marginal_penalty(problem(PX, two_point.dist, PG, TV, 1.0))
        assert sol.value == pytest.approx(0.3, abs=1e-9)
        assert np.allclose(sol.q.weights, PG, atol=1e-9)
        assert sol.certified_gap <= 1e-9

    def test_lambda_quarter(self, two_point):
        sol = solve_marginal_penalty(problem(PX, two_point.dist, PG, TV, 0.25))
        assert sol.value == pytest.approx(0.15, abs=1e-9)
        assert np.allclose(sol.q.weights, PX, atol=1e-9)

    def test_objectives_agree(self, two_point):
        G = PushforwardMap.identity(2)
        assert restricted_fgan(PX, PG, TV, 1.0, two_point) == pytest.approx(0.3, abs=1e-9)
        assert wae_objective(PX, PG, G, two_point, TV, 1.0).value == pytest.approx(0.3, abs=1e-9)
        assert fwae_objective(PX, PG, G, two_point, TV, 1.0) == pytest.approx(0.3, abs=1e-9)

    def test_fgan_direct(self, two_point):
        v, pot = fgan_direct(PX, PG, TV, 1.0, two_point)
        assert v == pytest.approx(0.3, abs=1e-9)
        h = pot.h - pot.h.min()
        assert np.allclose(h, [1.0, 0.0])
        assert np.all(h <= 1.0 + 1e-12)

    def test_oracle_examples(self, two_point):
        for lam, want in ((1.0, 0.3), (0.25, 0.15)):
            v, _ = brute_force_penalty(problem(PX, two_point.dist, PG, TV, lam))
            assert v == pytest.approx(want, abs=1e-6)


class TestSolver:
    def test_indicator_fixes_reference(self):
        sp = FiniteMetricSpace.random_metric(4, np.random.default_rng(0))
        p, r = np.full(4, 0.25), np.array([0.1, 0.2, 0.3, 0.4])
        sol = solve_marginal_penalty(problem(p, sp.dist, r, IND, 3.0))
        assert np.array_equal(sol.q.weights, r)
        assert sol.value == pytest.approx(wasserstein_value(p, r, sp.dist), abs=1e-12)

    def test_equal_marginals_give_zero(self):
        sp = FiniteMetricSpace.random_metric(3, np.random.default_rng(1))
        p = np.array([0.2, 0.5, 0.3])
        for f in (TV, KL, CHI2, IND):
            assert restricted_fgan(p, p, f, 0.7, sp) == pytest.approx(0.0, abs=1e-8)

    def test_infinite_recession_forbids_mass(self):
        sp = FiniteMetricSpace.euclidean([[0.0], [1.0], [2.0]])
        sol = solve_marginal_penalty(problem([0.0, 0.0, 1.0], sp.dist, [0.5, 0.5, 0.0], KL, 0.1))
        assert sol.q.weights[2] == 0.0
        assert math.isfinite(sol.value)

    def test_finite_recession_allows_mass(self):
        sp = FiniteMetricSpace.euclidean([[0.0], [10.0]])
        # moving the point costs 10, paying the recession price costs 0.5 * 1
        sol = solve_marginal_penalty(problem([0.0, 1.0], sp.dist, [1.0, 0.0], TV, 0.5))
        assert sol.q.weights[1] == pytest.approx(1.0, abs=1e-9)
        assert sol.value == pytest.approx(1.0, abs=1e-9)

    def test_config_validation(self):
        with pytest.raises(InputError):
            SolverConfig(method="newton")
        with pytest.raises(InputError):
            SolverConfig(tol=0.0)
        with pytest.raises(InputError):
            problem(PX, np.zeros((2, 3)), PG, TV, 1.0)
        with pytest.raises(InputError):
            problem(PX, np.zeros((2, 2)), PG, TV, 0.0)

    def test_lp_path_rejects_smooth(self, two_point):
        with pytest.raises(UnsupportedGeneratorError):
            solve_marginal_penalty(problem(PX, two_point.dist, PG, KL, 1.0), SolverConfig(method="lp"))

    def test_mirror_descent(self):
        sp = FiniteMetricSpace.random_metric(3, np.random.default_rng(2))
        prob = problem([0.5, 0.3, 0.2], sp.dist, [0.2, 0.3, 0.5], KL, 1.0)
        exact = solve_marginal_penalty(prob)
        md = solve_marginal_penalty(prob, SolverConfig(method="mirror"))
        assert md.method == "mirror"
        assert md.value >= exact.lower_bound - 1e-12
        assert md.value - exact.value <= 1e-3

    def test_mirror_nonconvergence(self):
        sp = FiniteMetricSpace.random_metric(4, np.random.default_rng(3))
        prob = problem([0.7, 0.1, 0.1, 0.1], sp.dist, [0.1, 0.1, 0.1, 0.7], CHI2, 5.0)
        with pytest.raises(ConvergenceError) as err:
            solve_marginal_penalty(prob, SolverConfig(method="mirror", max_iters=2, mirror_tol=1e-12))
        assert err.value.best is not None

    @given(metric_space(max_n=5), st.sampled_from([TV, KL, CHI2, IND]), st.floats(0.1, 5.0), st.data())
    def test_certificate(self, sp, f, lam, data):
        p = data.draw(simplex(n=sp.n))
        r = data.draw(simplex(n=sp.n))
        sol = solve_marginal_penalty(problem(p, sp.dist, r, f, lam))
        assert sol.coupling.is_feasible()
        assert np.allclose(sol.coupling.matrix.sum(1), p, atol=1e-9)
        assert sol.value == pytest.approx(problem(p, sp.dist, r, f, lam).objective(sol.q), abs=1e-12)
        assert sol.lower_bound <= sol.value + 1e-12
        assert sol.certified_gap <= 1e-6

    def test_certificate_tight_on_inexact_conic_q(self):
        # the conic q is ~1e-8 off here; the derivative candidate alone certified only 1.4e-6
        D = np.array([[0.0, 0.31312946, 0.8029437], [0.31312946, 0.0, 0.48981425], [0.8029437, 0.48981425, 0.0]])
        r = np.array([0.28888889, 0.35555556, 0.35555556])
        sol = solve_marginal_penalty(problem(np.full(3, 1 / 3), D, r / r.sum(), KL, 2.0))
        assert sol.certified_gap <= 1e-9

    @given(metric_space(max_n=3), st.sampled_from([TV, KL, CHI2, IND]), st.floats(0.1, 3.0), st.data())
    def test_matches_brute_force(self, sp, f, lam, data):
        p = data.draw(simplex(n=sp.n))
        r = data.draw(simplex(n=sp.n))
        prob = problem(p, sp.dist, r, f, lam)
        assert abs(solve_marginal_penalty(prob).value - brute_force_penalty(prob)[0]) <= 1e-4

    def test_oracle_check_field(self, two_point):
        sol = solve_marginal_penalty(problem(PX, two_point.dist, PG, CHI2, 1.0), SolverConfig(oracle_check=True))
        assert sol.oracle_value == pytest.approx(sol.value, abs=1e-4)

    @given(metric_space(max_n=5), st.sampled_from([TV, KL, CHI2]), st.data())
    def test_weighted_cost(self, sp, f, data):
        # min_q gamma W + lam D = gamma * min_q (W + (lam / gamma) D)
        p = data.draw(simplex(n=sp.n))
        r = data.draw(simplex(n=sp.n))
        gamma = data.draw(st.floats(0.2, 5.0))
        lam = data.draw(st.floats(0.2, 3.0))
        lhs = solve_marginal_penalty(problem(p, gamma * sp.dist, r, f, lam))
        rhs = solve_marginal_penalty(problem(p, sp.dist, r, f, lam / gamma))
        assert lhs.value == pytest.approx(gamma * rhs.value, abs=1e-6)
        q = lhs.q.weights
        direct = gamma * wasserstein_value(p, q, sp.dist) + f_divergence(q, r, f.scaled(lam))
        assert lhs.value == pytest.approx(direct, abs=1e-12)


class TestGAN:
    def test_indicator_is_wasserstein(self):
        sp = FiniteMetricSpace.random_metric(5, np.random.default_rng(4))
        rng = np.random.default_rng(5)
        p, g = rng.dirichlet(np.ones(5)), rng.dirichlet(np.ones(5))
        w = wasserstein_value(p, g, sp.dist)
        assert restricted_fgan(p, g, IND, 2.0, sp) == pytest.approx(w, abs=1e-12)
        assert fgan_direct(p, g, IND, 2.0, sp)[0] == pytest.approx(kantorovich_dual(p, g, sp)[0], abs=1e-9)

    def test_direct_rejects_smooth(self, two_point):
        with pytest.raises(UnsupportedGeneratorError):
            fgan_direct(PX, PG, KL, 1.0, two_point)

    def test_direct_equal_inputs(self, two_point):
        assert fgan_direct(PX, PX, TV, 0.3, two_point)[0] == pytest.approx(0.0, abs=1e-12)

    def test_needs_metric(self):
        with pytest.raises(ContractError):
            restricted_fgan(PX, PG, TV, 1.0, CostMatrix([[0.0, 1.0], [1.0, 0.0]]))

    def test_decomposition_consistency(self):
        rng = np.random.default_rng(6)
        for k in range(200):
            n = int(rng.integers(2, 7))
            sp = FiniteMetricSpace.random_metric(n, rng)
            g = rng.dirichlet(np.ones(n))
            if k % 3 == 0:
                g[rng.integers(n)] = 0.0
                g /= g.sum()
            p = rng.dirichlet(np.ones(n))
            f = TV if k % 2 else IND
            lam = float(rng.uniform(0.1, 3.0))
            a = restricted_fgan(p, g, f, lam, sp)
            b, pot = fgan_direct(p, g, f, lam, sp)
            assert pot.is_feasible()
            assert abs(a - b) <= 1e-6, (k, a, b)


class TestWAE:
    def test_perfect_reconstruction(self):
        sp = FiniteMetricSpace.random_metric(3, np.random.default_rng(7))
        G = PushforwardMap([2, 0, 1])
        pz = np.array([0.2, 0.3, 0.5])
        px = pushforward(G, pz).weights
        for f in (TV, KL, CHI2):
            out = wae_objective(px, pz, G, sp, f, 1.0)
            assert out.value == pytest.approx(0.0, abs=1e-8)
            assert fwae_objective(px, pz, G, sp, f, 1.0) == pytest.approx(0.0, abs=1e-8)
        # the optimal encoder inverts G
        assert np.allclose(wae_objective(px, pz, G, sp, KL, 1.0).encoder.matrix[:, :], np.eye(3)[G.inverse().mapping],
                           atol=1e-6)

    def test_indicator_is_wasserstein(self):
        sp = FiniteMetricSpace.random_metric(4, np.random.default_rng(8))
        G = PushforwardMap([0, 1, 1, 3, 2], 4)
        rng = np.random.default_rng(9)
        px, pz = rng.dirichlet(np.ones(4)), rng.dirichlet(np.ones(5))
        w = wasserstein_value(px, pushforward(G, pz).weights, sp.dist)
        assert wae_objective(px, pz, G, sp, IND, 1.0).value == pytest.approx(w, abs=1e-10)
        assert fwae_objective(px, pz, G, sp, IND, 1.0) == pytest.approx(w, abs=1e-10)

    def test_encoder_rows(self):
        e = Encoder.from_coupling(np.array([[0.2, 0.2], [0.0, 0.0]]))
        assert np.allclose(e.matrix, [[0.5, 0.5], [0.5, 0.5]])
        with pytest.raises(InputError):
            Encoder([[0.5, 0.6]])

    def test_monotone_in_lambda(self):
        rng = np.random.default_rng(10)
        for _ in range(10):
            sp = FiniteMetricSpace.random_metric(4, rng)
            G = make_map("random-map", 5, 4, rng)
            px, pz = rng.dirichlet(np.ones(4)), rng.dirichlet(np.ones(5))
            for f in (TV, KL, CHI2):
                vals = [wae_objective(px, pz, G, sp, f, lam).value for lam in (0.1, 0.5, 1.0, 2.0, 8.0)]
                assert all(vals[k] <= vals[k + 1] + 1e-7 for k in range(4))

    def test_surjective_equality(self):
        # any P' << P_G is reached by q = P_Z * (P' / P_G) o G with the same divergence
        rng = np.random.default_rng(11)
        for _ in range(20):
            sp = FiniteMetricSpace.random_metric(3, rng)
            G = make_map("random-surjection", 5, 3, rng)
            px, pz = rng.dirichlet(np.ones(3)), rng.dirichlet(np.ones(5))
            pg = pushforward(G, pz).weights
            for f in (TV, KL, CHI2):
                gan = restricted_fgan(px, pg, f, 1.0, sp)
                wae = wae_objective(px, pz, G, sp, f, 1.0).value
                assert abs(gan - wae) <= 1e-5

    def test_non_surjective_can_be_strict(self):
        sp = FiniteMetricSpace.euclidean([[0.0], [1.0], [3.0]])
        G = PushforwardMap([0, 0], 3)  # never reaches points 1 and 2
        px, pz = np.array([0.1, 0.1, 0.8]), np.array([0.5, 0.5])
        gan = restricted_fgan(px, pushforward(G, pz), TV, 1.0, sp)
        wae = wae_objective(px, pz, G, sp, TV, 1.0).value
        assert wae - gan > 1e-3

    def test_shape_errors(self, two_point):
        with pytest.raises(InputError):
            wae_objective(PX, [1 / 3] * 3, PushforwardMap.identity(2), two_point, TV, 1.0)


class TestReconstruction:
    def test_inverse_encoder(self):
        sp = FiniteMetricSpace.random_metric(3, np.random.default_rng(12))
        G = PushforwardMap([1, 2, 0])
        E = Encoder(np.eye(3)[G.inverse().mapping])
        lhs, rhs, holds = reconstruction_bound_check(E, G, [0.2, 0.3, 0.5], sp)
        assert lhs == pytest.approx(0.0, abs=1e-15) and rhs == pytest.approx(0.0, abs=1e-15) and holds

    def test_point_mass_encoder(self):
        sp = FiniteMetricSpace.random_metric(4, np.random.default_rng(13))
        G = PushforwardMap([3, 1, 0], 4)
        px = np.array([0.1, 0.2, 0.3, 0.4])
        E = Encoder(np.tile([0.0, 1.0, 0.0], (4, 1)))
        lhs, rhs, holds = reconstruction_bound_check(E, G, px, sp)
        assert rhs == pytest.approx(px @ sp.dist[:, 1], abs=1e-15)
        assert lhs == pytest.approx(rhs, abs=1e-12)  # a point mass has one coupling
        assert holds

    def test_random_encoders(self):
        rng = np.random.default_rng(14)
        for _ in range(500):
            sp = FiniteMetricSpace.random_metric(4, rng)
            G = make_map("random-map", 3, 4, rng)
            E = Encoder(rng.dirichlet(np.ones(3), size=4))
            assert reconstruction_bound_check(E, G, rng.dirichlet(np.ones(4)), sp)[2]


class TestThresholds:
    def test_gamma_star(self):
        assert gamma_star([0.5, 0.5], [0.25, 0.75], CHI2) == pytest.approx(4.0, abs=1e-12)
        p = np.array([0.2, 0.3, 0.5])
        assert gamma_star(p, p, CHI2) == pytest.approx(abs(float(CHI2.deriv(1.0)) - float(CHI2.deriv(0.0))))
        assert gamma_star([0.5, 0.5], [0.25, 0.75], KL) == math.inf
        with pytest.raises(ContractError):
            gamma_star([0.5, 0.5], [1.0, 0.0], CHI2)

    def test_lambda_star_tv_discrete(self):
        rng = np.random.default_rng(15)
        for _ in range(5):
            n = int(rng.integers(2, 6))
            est = lambda_star_estimate(rng.dirichlet(np.ones(n)), TV, FiniteMetricSpace.discrete(n), rng=rng)
            assert est.value == pytest.approx(0.5, abs=1e-9)

    def test_lambda_star_two_point(self, two_point):
        assert lambda_star_estimate(PG, TV, two_point).value == pytest.approx(0.5, abs=1e-9)
        assert lambda_star_estimate(PG, IND, two_point).value == 0.0

    def test_lambda_star_smooth_is_unbounded(self, two_point):
        # W / D_chi2 = |t| / (4 t^2) on the two-point line, unbounded as t -> 0
        est = lambda_star_estimate([0.5, 0.5], CHI2, two_point)
        assert est.unbounded and est.value == math.inf

    def test_lambda_star_is_a_lower_bound(self):
        rng = np.random.default_rng(16)
        sp = FiniteMetricSpace.random_metric(4, rng)
        g = rng.dirichlet(np.ones(4))
        est = lambda_star_estimate(g, TV, sp, rng=rng)
        for _ in range(300):
            P = rng.dirichlet(np.ones(4))
            d = f_divergence(P, g, TV)
            assert wasserstein_value(P, g, sp.dist) <= est.value * d + 1e-9
