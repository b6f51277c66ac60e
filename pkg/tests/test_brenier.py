import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dualgap.brenier import (BrenierPotential, FitConfig, SemiDiscreteProblem, assign_cell, cell_masses,
                             dual_objective, finite_difference_gradient, fit_potential, masses_on, mc_sigma,
                             parse_box, pushforward_check)
from dualgap.errors import InputError

ATOMS = np.array([[1.0, 0.0], [-1.0, 0.0]])
BOX = ((-1.0, 1.0), (-1.0, 1.0))


def prob(nu=(0.5, 0.5), **kw):
    return SemiDiscreteProblem(ATOMS, np.array(nu), BOX, **kw)


class TestCells:
    def test_single_atom(self):
        p = SemiDiscreteProblem([[0.2, 0.1]], [1.0], BOX)
        assert assign_cell([3.0], [0.9, -0.4], p.atoms) == 0
        assert np.array_equal(cell_masses([0.0], p, 100, 0), [1.0])

    def test_assignment(self):
        assert assign_cell([0.0, 0.0], [0.3, 0.0], ATOMS) == 0
        assert assign_cell([0.0, 0.0], [-0.3, 0.0], ATOMS) == 1

    def test_tie_goes_to_lowest_index(self):
        assert assign_cell([0.0, 0.0], [0.0, 0.7], ATOMS) == 0

    def test_masses_sum_to_one(self):
        m = cell_masses([0.2, -0.1], prob(), 12345, 0)
        assert m.sum() == 1.0

    def test_symmetric_masses(self):
        n = 100_000
        m = cell_masses([0.0, 0.0], prob(), n, 0)
        assert np.all(np.abs(m - 0.5) <= 3 * mc_sigma([0.5, 0.5], n))

    def test_shifted_boundary(self):
        # cell of (+1, 0) is {x1 > 0.5}, a quarter of the box
        n = 100_000
        m = cell_masses([0.0, 1.0], prob(), n, 1)
        assert abs(m[0] - 0.25) <= 3 * mc_sigma([0.25], n)[0]

    @given(st.lists(st.floats(-2, 2), min_size=3, max_size=3), st.floats(-5, 5), st.integers(0, 100))
    def test_shift_invariance(self, h, c, seed):
        rng = np.random.default_rng(seed)
        atoms = rng.normal(size=(3, 2))
        X = rng.uniform(-1, 1, size=(500, 2))
        h = np.array(h)
        a = [assign_cell(h, x, atoms) for x in X]
        b = [assign_cell(h + c, x, atoms) for x in X]
        # exact up to rounding when two values are within an ulp of tying
        assert sum(i != j for i, j in zip(a, b)) <= 1

    def test_shift_invariance_masses(self):
        p = prob()
        X = p.sample(20_000, 3)
        assert np.array_equal(masses_on([0.1, 0.4], p, X), masses_on([2.1, 2.4], p, X))

    def test_phi_convex(self):
        rng = np.random.default_rng(0)
        pot = BrenierPotential(rng.normal(size=4))
        atoms = rng.normal(size=(4, 2))
        x, y = rng.uniform(-1, 1, size=(200, 2)), rng.uniform(-1, 1, size=(200, 2))
        assert np.all(pot.phi((x + y) / 2, atoms) <= (pot.phi(x, atoms) + pot.phi(y, atoms)) / 2 + 1e-12)
        assert np.allclose(BrenierPotential(pot.h + 3).phi(x, atoms), pot.phi(x, atoms) + 3)


class TestProblem:
    def test_validation(self):
        with pytest.raises(InputError):
            SemiDiscreteProblem(ATOMS, [0.5, 0.6], BOX)
        with pytest.raises(InputError):
            SemiDiscreteProblem([[0.0, 0.0], [0.0, 0.0]], [0.5, 0.5], BOX)
        with pytest.raises(InputError):
            SemiDiscreteProblem(ATOMS, [0.5, 0.5], ((-1.0, np.inf), (0.0, 1.0)))

    def test_grid_sampler(self):
        X = prob(sampler="uniform-grid", grid_per_dim=11).sample(1000, 0)
        assert np.allclose((X + 1) * 5, np.round((X + 1) * 5))

    def test_parse_box(self):
        assert parse_box("box:-1,1,-2,2") == ((-1.0, 1.0), (-2.0, 2.0))
        with pytest.raises(InputError):
            parse_box("box:0,1,2")
        with pytest.raises(InputError):
            parse_box("box:a,b")


class TestFit:
    def test_single_atom(self):
        p = SemiDiscreteProblem([[0.0, 0.0]], [1.0], BOX)
        res = fit_potential(p, FitConfig(n_samples=1000))
        assert res.converged and res.iters == 0 and np.array_equal(res.potential.h, [0.0])

    def test_quarter_three_quarters(self):
        res = fit_potential(prob((0.25, 0.75)), FitConfig(n_samples=100_000, seed=0))
        assert res.converged
        assert np.allclose(res.potential.normalized().h, [0.0, 1.0], atol=2e-2)
        tv, ok = pushforward_check(res.potential, prob((0.25, 0.75)), n_samples=100_000, seed=7, tol=2e-2)
        assert ok

    def test_unfitted_fails_check(self):
        tv, ok = pushforward_check([0.0, 0.0], prob((0.25, 0.75)), n_samples=100_000, seed=5, tol=2e-2)
        assert not ok and tv == pytest.approx(0.25, abs=1e-2)

    def test_monotone_residual(self):
        rng = np.random.default_rng(1)
        p = SemiDiscreteProblem(rng.normal(size=(4, 2)), rng.dirichlet(np.ones(4)), BOX)
        res = fit_potential(p, FitConfig(n_samples=20_000, seed=2, tol=1e-3))
        hist = res.history
        assert all(b <= a for a, b in zip(hist, hist[1:]))
        assert res.potential.h.min() == 0.0

    def test_config_validation(self):
        with pytest.raises(InputError):
            FitConfig(tol=0.0)


class TestGradient:
    def test_matches_finite_differences(self):
        rng = np.random.default_rng(3)
        n = 100_000
        for _ in range(3):
            p = SemiDiscreteProblem(rng.normal(size=(3, 2)), rng.dirichlet(np.ones(3)), BOX)
            h = rng.normal(scale=0.3, size=3)
            X = p.sample(n, int(rng.integers(1 << 30)))
            masses = masses_on(h, p, X)
            grad = p.weights - masses
            fd = finite_difference_gradient(h, p, X, delta=1e-4)
            # 1e-9 absorbs round-off when a cell is empty and sigma vanishes
            assert np.all(np.abs(fd - grad) <= 3 * mc_sigma(masses, n) + 1e-9)

    def test_dual_concave_along_line(self):
        p = prob((0.3, 0.7))
        X = p.sample(5000, 0)
        h0, d = np.array([0.0, 0.0]), np.array([1.0, -1.0])
        vals = [dual_objective(h0 + t * d, p, X) for t in (-1.0, 0.0, 1.0)]
        assert vals[1] >= (vals[0] + vals[2]) / 2 - 1e-12
