import math

import numpy as np
import pytest

from tricrit.core import GaussianTerm, PairPotential
from tricrit.twobody import (
    BracketError,
    ConditioningError,
    RadialGrid,
    bound_state_energy,
    bs_matrix,
    fiber_bs_resolvent,
    grid_for_potential,
    klaus_simon_check,
    radial_grid,
    radial_grid_gauss,
    top_eigenpair,
    tune_resonance,
)

import oracles

UNIT_WELL = PairPotential((GaussianTerm(1.0, 1.0),), "12")
ZERO_POT = PairPotential((), "12")


@pytest.fixture(scope="module")
def grid():
    return grid_for_potential(UNIT_WELL)


@pytest.fixture(scope="module")
def tuned(grid):
    return tune_resonance(UNIT_WELL, grid)


class TestRadialGrid:
    def test_node_and_weight_invariants(self):
        for g in (radial_grid(200, 30.0), radial_grid_gauss(120, 30.0)):
            assert np.all(np.diff(g.nodes) > 0)
            assert g.nodes[0] > 0 and g.nodes[-1] <= g.r_max
            assert np.all(g.weights > 0)

    def test_gauss_polynomial_exactness(self):
        # legendre polynomials of degree >= 1 integrate to zero exactly
        g = radial_grid_gauss(60, 17.0)
        t = 2.0 * g.nodes / g.r_max - 1.0
        for deg in (1, 5, 20, 60, 119):
            vals = np.polynomial.legendre.Legendre.basis(deg)(t)
            assert abs(np.sum(g.weights * vals)) < 1e-10 * g.r_max

    def test_uniform_rule_exact_for_linear(self):
        g = radial_grid(500, 12.0)
        # the origin sample of the trapezoid rule is dropped because reduced
        # functions vanish there; linear functions through zero are exact
        assert np.sum(g.weights * g.nodes) == pytest.approx(12.0**2 / 2.0, rel=1e-12)

    def test_rejects_bad_grids(self):
        with pytest.raises(ValueError):
            RadialGrid(np.array([0.0, 1.0]), np.array([1.0, 1.0]), 2.0)
        with pytest.raises(ValueError):
            RadialGrid(np.array([1.0, 0.5]), np.array([1.0, 1.0]), 2.0)
        with pytest.raises(ValueError):
            RadialGrid(np.array([0.5, 1.0]), np.array([1.0, -1.0]), 2.0)


class TestBSMatrix:
    def test_zero_potential_gives_zero_matrix(self, grid):
        kern = bs_matrix(ZERO_POT, 0.0, grid)
        assert np.all(kern.matrix == 0.0)

    def test_depth_linearity(self, grid):
        k1 = bs_matrix(UNIT_WELL, 0.3, grid).matrix
        k3 = bs_matrix(UNIT_WELL.scaled(3.0), 0.3, grid).matrix
        assert np.allclose(k3, 3.0 * k1, rtol=1e-13, atol=1e-250)

    def test_symmetric_and_nonnegative(self, grid):
        for z in (0.0, 0.2, 4.0):
            mat = bs_matrix(UNIT_WELL, z, grid).matrix
            assert np.abs(mat - mat.T).max() < 1e-12
            assert mat.min() >= 0.0

    def test_rejects_negative_z_and_empty_grid(self, grid):
        with pytest.raises(ValueError):
            bs_matrix(UNIT_WELL, -0.1, grid)
        with pytest.raises(ValueError):
            RadialGrid(np.array([]), np.array([]), 1.0)

    def test_top_eigenvalue_decreasing_in_z(self, grid):
        zs = [0.0, 1e-4, 1e-2, 0.3, 2.0]
        eps = [top_eigenpair(bs_matrix(UNIT_WELL, z, grid))[0] for z in zs]
        for a, b in zip(eps, eps[1:]):
            assert b < a

    def test_scaling_covariance(self):
        # V_s(r) = s^2 V(s r) has the same zero-energy spectrum
        s = 2.0
        pot_scaled = PairPotential((GaussianTerm(s * s, 1.0 / s),), "12")
        e1 = top_eigenpair(bs_matrix(UNIT_WELL, 0.0, radial_grid(1600, 40.0)))[0]
        e2 = top_eigenpair(bs_matrix(pot_scaled, 0.0, radial_grid(1600, 20.0)))[0]
        assert e2 == pytest.approx(e1, rel=1e-6)


class TestTopEigenpair:
    def test_zero_matrix(self, grid):
        val, vec = top_eigenpair(bs_matrix(ZERO_POT, 0.0, grid))
        assert val == 0.0

    def test_doubling_depth_doubles_eigenvalue(self, grid):
        v1 = top_eigenpair(bs_matrix(UNIT_WELL, 0.0, grid))[0]
        v2 = top_eigenpair(bs_matrix(UNIT_WELL.scaled(2.0), 0.0, grid))[0]
        assert v2 == pytest.approx(2.0 * v1, rel=1e-13)

    def test_residual_and_nonnegativity(self, grid):
        kern = bs_matrix(UNIT_WELL, 0.05, grid)
        val, vec = top_eigenpair(kern)
        assert np.all(vec >= 0.0)
        assert np.linalg.norm(kern.matrix @ vec - val * vec) <= 1e-10 * np.linalg.norm(vec)

    def test_matches_shooting_critical_depth(self, grid):
        # oracle: zero-energy Numerov shooting for the first binding coupling
        val = top_eigenpair(bs_matrix(UNIT_WELL, 0.0, grid))[0]
        mu_oracle = oracles.shooting_critical_coupling(lambda r: UNIT_WELL(r))
        assert 1.0 / val == pytest.approx(mu_oracle, rel=1e-3)


class TestTuneResonance:
    def test_no_resonance_for_zero_potential(self, grid):
        with pytest.raises(ValueError):
            tune_resonance(ZERO_POT, grid)

    def test_tuned_eigenvalue_is_one(self, grid, tuned):
        val = top_eigenpair(bs_matrix(tuned.pot, 0.0, grid))[0]
        assert val == pytest.approx(1.0, abs=1e-10)

    def test_idempotent(self, grid, tuned):
        again = tune_resonance(tuned.pot, grid)
        assert again.coupling == pytest.approx(1.0, abs=1e-8)

    def test_shooting_brackets_resonance(self, tuned):
        # oracle: bound state appears at mu*(1+1e-3) and not at mu*(1-1e-3)
        pot = tuned.pot
        assert oracles.shooting_has_bound_state(lambda r: pot(r), 1.0 + 1e-3)
        assert not oracles.shooting_has_bound_state(lambda r: pot(r), 1.0 - 1e-3)

    def test_normalization_and_positivity(self, grid, tuned):
        norm = float(np.sum(grid.weights * tuned.u0**2))
        assert norm == pytest.approx(1.0, abs=1e-10)
        assert np.all(tuned.u0 >= 0.0)
        assert tuned.a > 0 and math.isfinite(tuned.a)
        assert tuned.r0 > 0 and math.isfinite(tuned.r0)

    def test_refinement_stability(self, tuned):
        fine = tune_resonance(UNIT_WELL, radial_grid(1600, 40.0))
        assert abs(fine.coupling - tuned.coupling) / tuned.coupling < 1e-6

    def test_a_equals_eigenvalue_slope(self, grid, tuned):
        # finite-difference slope of the top eigenvalue in kappa at zero
        kap = 1e-6
        eps = top_eigenpair(bs_matrix(tuned.pot, kap * kap, grid))[0]
        slope = (1.0 - eps) / kap
        assert slope == pytest.approx(tuned.a, rel=1e-4)

    def test_constants_match_3d_quadrature(self, grid, tuned):
        # re-derivation check: a and r0 against direct 3-D radial quadrature
        # of the defining integrals with phi0 = u0 / (sqrt(4 pi) r) on an
        # independent (Gauss-Legendre) grid with interpolated u0
        from scipy.interpolate import CubicSpline

        gq = radial_grid_gauss(400, grid.r_max)
        u0 = CubicSpline(grid.nodes, tuned.u0)(gq.nodes)
        phi0 = u0 / (math.sqrt(4.0 * math.pi) * gq.nodes)
        sqv = np.sqrt(-tuned.pot(gq.nodes))
        shell = 4.0 * math.pi * gq.nodes**2 * gq.weights
        l1 = float(np.sum(shell * sqv * phi0))
        a_3d = (l1**2) / (4.0 * math.pi)
        r0_3d = float(np.sum(shell * sqv * phi0 / gq.nodes))
        assert a_3d == pytest.approx(tuned.a, rel=1e-4)
        assert r0_3d == pytest.approx(tuned.r0, rel=1e-4)


class TestBoundStateEnergy:
    def test_none_at_resonance_and_just_below(self, grid, tuned):
        assert bound_state_energy(tuned.pot, 1.0, grid) is None
        assert bound_state_energy(tuned.pot, 1.0 - 1e-6, grid) is None

    def test_bound_just_above(self, grid, tuned):
        e = bound_state_energy(tuned.pot, 1.0 + 1e-6, grid)
        assert e is not None and e < 0

    def test_klaus_simon_regime_value(self, grid, tuned):
        e = bound_state_energy(tuned.pot, 1.01, grid)
        assert e == pytest.approx(-1e-4 / tuned.a**2, rel=0.05)

    def test_monotone_in_coupling(self, grid, tuned):
        es = [bound_state_energy(tuned.pot, m, grid) for m in (1.005, 1.01, 1.02)]
        assert es[0] > es[1] > es[2]

    def test_deep_well_matches_shooting(self):
        deep = PairPotential((GaussianTerm(10.0, 1.0),), "12")
        g = radial_grid(1600, 15.0)
        e = bound_state_energy(deep, 1.0, g)
        e_oracle = oracles.shooting_ground_energy(lambda r: deep(r), 1.0,
                                                  r_max=25.0, n=25000)
        assert e == pytest.approx(e_oracle, rel=1e-6)

    def test_rejects_bad_coupling(self, grid):
        with pytest.raises(ValueError):
            bound_state_energy(UNIT_WELL, -1.0, grid)


class TestKlausSimon:
    def test_exponent_and_prefactor(self, grid, tuned):
        fit = klaus_simon_check(tuned, 1.0 + np.geomspace(1e-3, 1e-2, 8))
        assert fit.exponent == pytest.approx(2.0, abs=0.05)
        assert fit.prefactor == pytest.approx(1.0 / tuned.a**2, rel=0.03)

    def test_deep_well_breaks_the_law(self):
        # a well holding a deep bound state has e(mu) ~ e(1) + e'(1)(mu-1):
        # the log-log slope against (mu - 1) collapses toward zero
        deep = PairPotential((GaussianTerm(10.0, 1.0),), "12")
        g = radial_grid(800, 15.0)
        pair_like = tune_resonance(UNIT_WELL, g)  # only for the dataclass shape
        fit = klaus_simon_check(
            type(pair_like)(pot=deep, coupling=1.0, u0=pair_like.u0, grid=g,
                            a=pair_like.a, r0=pair_like.r0),
            1.0 + np.geomspace(1e-3, 1e-2, 6),
            g,
        )
        assert abs(fit.exponent - 2.0) > 1.5

    def test_error_names_unbound_coupling(self, grid, tuned):
        weak = tuned.pot.scaled(0.5)
        bad = type(tuned)(pot=weak, coupling=0.5, u0=tuned.u0, grid=grid,
                          a=tuned.a, r0=tuned.r0)
        with pytest.raises(ValueError, match="1.001"):
            klaus_simon_check(bad, [1.001, 1.002, 1.004, 1.008, 1.016, 1.032], grid)

    def test_validates_grid_of_couplings(self, tuned):
        with pytest.raises(ValueError):
            klaus_simon_check(tuned, [1.001, 1.002, 1.004])
        with pytest.raises(ValueError):
            klaus_simon_check(tuned, [0.9, 1.001, 1.002, 1.004, 1.008, 1.016])


class TestFiberResolvent:
    def test_zero_potential(self, grid):
        zero_pair_pot = ZERO_POT
        pair_like = tune_resonance(UNIT_WELL, grid)
        sandwich = fiber_bs_resolvent(
            type(pair_like)(pot=zero_pair_pot, coupling=1.0, u0=pair_like.u0,
                            grid=grid, a=1.0, r0=1.0),
            1.0,
            grid,
        )
        assert np.all(sandwich == 0.0)

    def test_neumann_regime_at_large_z(self, grid, tuned):
        z = 1e3
        kern = bs_matrix(tuned.pot, z, grid).matrix
        sandwich = fiber_bs_resolvent(tuned, z, grid)
        knorm = np.linalg.norm(kern, 2)
        assert np.linalg.norm(sandwich - kern, 2) <= 1.1 * knorm**2

    def test_resonant_growth_exponent(self, tuned):
        # top eigenvalue of the sandwich grows like 1/sqrt(z) at resonance
        import scipy.linalg

        zs = np.array([1e-6, 1e-5, 1e-4])
        tops = []
        for z in zs:
            d = fiber_bs_resolvent(tuned, z)
            n = d.shape[0]
            tops.append(scipy.linalg.eigh(d, eigvals_only=True,
                                          subset_by_index=(n - 1, n - 1))[0])
        slope = np.polyfit(np.log(zs), np.log(tops), 1)[0]
        assert slope == pytest.approx(-0.5, abs=0.05)

    def test_matches_fd_hamiltonian_quadratic_form(self, tuned):
        # independent oracle: dense finite-difference radial Hamiltonian,
        # Richardson-extrapolated in the mesh spacing
        z = 0.5
        probe = lambda r: r * np.exp(-0.5 * r**2)
        grid = radial_grid(3200, 15.0)
        d = fiber_bs_resolvent(tuned, z, grid)
        f = np.sqrt(grid.weights) * probe(grid.nodes)
        ours = float(f @ (d @ f))
        pot = tuned.pot
        coarse = oracles.fd_radial_hamiltonian_quadratic_form(
            lambda r: pot(r), z, probe, 15.0, 30000)
        fine = oracles.fd_radial_hamiltonian_quadratic_form(
            lambda r: pot(r), z, probe, 15.0, 60000)
        oracle = (4.0 * fine - coarse) / 3.0
        assert ours == pytest.approx(oracle, rel=1e-8)

    def test_conditioning_error_near_resonance(self, tuned):
        with pytest.raises((ConditioningError, ValueError)):
            fiber_bs_resolvent(tuned, 0.0)

    def test_invariant_no_binding_below_strengthening(self, grid, tuned):
        # resonance boundary: strengthened binds, weakened does not
        assert bound_state_energy(tuned.pot, 1.0 + 1e-6, grid) is not None
        assert bound_state_energy(tuned.pot, 1.0 - 1e-6, grid) is None
