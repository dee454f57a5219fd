"""Tests for the stick-prior tilt catalog and contaminated prior."""

import numpy as np
import pytest
from scipy.integrate import quad
from scipy.stats import beta as beta_dist

import jax
import jax.numpy as jnp

from bnpsens.model import StickPriorSpec
from bnpsens.objective import KLAssembly
from bnpsens.optimizer import optimize
from bnpsens.perturbations import (
    Perturbation,
    beta_swap,
    builtin_perturbations,
    contaminated_log_prior,
    exp_tilt,
    load_tabulated,
    log_normalizer,
    prior_swap,
)
from bnpsens.variational import flatten

GRID = np.linspace(0.01, 0.99, 100)


# ---------------------------------------------------------------------------
# built-in tilts
# ---------------------------------------------------------------------------

class TestBuiltins:
    def test_prior_swap_identity_is_zero(self):
        p = prior_swap(3.0, 3.0)
        assert np.max(np.abs(np.asarray(p.log_tilt(GRID)))) == 0.0

    def test_exp_tilt_zero_is_zero(self):
        p = exp_tilt(0.0)
        assert np.max(np.abs(np.asarray(p.log_tilt(GRID)))) == 0.0

    def test_beta_swap_matches_hand_ratio(self):
        # log phi = log Beta(nu; 2, 3) - log Beta(nu; 1, alpha0)
        alpha0 = 2.0
        p = beta_swap(2.0, 3.0, alpha0)
        hand = beta_dist.logpdf(GRID, 2, 3) - beta_dist.logpdf(GRID, 1, alpha0)
        assert np.max(np.abs(np.asarray(p.log_tilt(GRID)) - hand)) < 1e-12

    def test_prior_swap_matches_beta_ratio(self):
        p = prior_swap(2.0, 7.0)
        hand = beta_dist.logpdf(GRID, 1, 7.0) - beta_dist.logpdf(GRID, 1, 2.0)
        assert np.max(np.abs(np.asarray(p.log_tilt(GRID)) - hand)) < 1e-12

    def test_builtin_catalog(self):
        cat = builtin_perturbations(4.0)
        assert [p.name for p in cat] == \
            ["prior_swap(6)", "exp_tilt(2)", "beta_swap(2,3)"]
        assert cat[0].params["alpha1"] == 6.0
        assert cat[2].params["alpha0"] == 4.0

    def test_tilts_are_jit_traceable(self):
        for p in builtin_perturbations(3.0):
            val = jax.jit(lambda x, f=p.log_tilt: f(x).sum())(jnp.array([0.3, 0.6]))
            assert np.isfinite(float(val))
            g = jax.grad(lambda x, f=p.log_tilt: f(x))(0.4)
            assert np.isfinite(float(g))


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------

class TestValidation:
    def test_non_finite_tilt_rejected(self):
        with pytest.raises(ValueError, match="finite at nu=0.0"):
            Perturbation(name="bad", log_tilt=lambda nu: np.log(nu - 0.5))

    def test_non_elementwise_tilt_rejected(self):
        with pytest.raises(ValueError, match="elementwise"):
            Perturbation(name="bad", log_tilt=lambda nu: float(np.sum(nu)))


# ---------------------------------------------------------------------------
# contaminated prior
# ---------------------------------------------------------------------------

class TestContaminatedPrior:
    def test_delta_zero_endpoint(self):
        lp = contaminated_log_prior(GRID, 2.5, exp_tilt(1.3), 0.0)
        want = beta_dist.logpdf(GRID, 1, 2.5)
        assert np.max(np.abs(lp - want)) < 1e-12

    def test_prior_swap_full_delta_endpoint(self):
        # "swap the original prior for the new prior by taking delta -> 1"
        lp = contaminated_log_prior(GRID, 2.0, prior_swap(2.0, 5.0), 1.0)
        want = beta_dist.logpdf(GRID, 1, 5.0)
        assert np.max(np.abs(lp - want)) < 1e-12

    def test_exp_tilt_normalizer_closed_form(self):
        # at alpha = 1 the base prior is uniform, so Z = (e^c - 1)/c
        c = 1.7
        lz = log_normalizer(1.0, exp_tilt(c), 1.0)
        assert np.exp(lz) == pytest.approx((np.exp(c) - 1.0) / c, rel=1e-12)

    @pytest.mark.parametrize("delta", [0.0, 0.25, 0.5, 1.0])
    def test_density_normalized_for_every_builtin(self, delta):
        alpha0 = 3.0
        for pert in builtin_perturbations(alpha0):
            total, _ = quad(
                lambda v: np.exp(contaminated_log_prior(v, alpha0, pert, delta)),
                0.0, 1.0)
            assert total == pytest.approx(1.0, abs=1e-6)

    def test_scalar_and_domain_handling(self):
        p = exp_tilt(0.5)
        val = contaminated_log_prior(0.3, 2.0, p, 0.5)
        assert isinstance(val, float)
        with pytest.raises(ValueError, match="strictly"):
            contaminated_log_prior(np.array([0.0, 0.5]), 2.0, p, 0.5)
        with pytest.raises(ValueError, match="delta"):
            log_normalizer(2.0, p, 1.5)


# ---------------------------------------------------------------------------
# tabulated tilts
# ---------------------------------------------------------------------------

class TestTabulated:
    def make_table(self, tmp_path, knots, values, name="tilt.txt"):
        path = tmp_path / name
        np.savetxt(path, np.column_stack([knots, values]))
        return path

    def test_round_trip_linear_function(self, tmp_path):
        knots = np.linspace(0.001, 0.999, 400)
        path = self.make_table(tmp_path, knots, 1.3 * knots)
        tab = load_tabulated(path)
        # PCHIP reproduces a linear function exactly
        assert np.max(np.abs(np.asarray(tab.log_tilt(GRID)) - 1.3 * GRID)) < 1e-13
        assert tab.name == "tilt"

    def test_interpolates_smooth_tilt_accurately(self, tmp_path):
        knots = np.linspace(0.005, 0.995, 200)
        path = self.make_table(tmp_path, knots, np.sin(3.0 * knots))
        tab = load_tabulated(path, name="sin")
        # monotone cubics are locally third order, not spectral
        err = np.max(np.abs(np.asarray(tab.log_tilt(GRID)) - np.sin(3.0 * GRID)))
        assert err < 1e-4
        at_knots = np.asarray(tab.log_tilt(knots))
        assert np.max(np.abs(at_knots - np.sin(3.0 * knots))) < 1e-13
        assert tab.name == "sin"

    def test_clamps_beyond_knots(self, tmp_path):
        knots = np.array([0.2, 0.5, 0.8])
        path = self.make_table(tmp_path, knots, np.array([1.0, 2.0, -1.0]))
        tab = load_tabulated(path)
        assert float(tab.log_tilt(0.001)) == pytest.approx(1.0, abs=1e-14)
        assert float(tab.log_tilt(0.999)) == pytest.approx(-1.0, abs=1e-14)

    def test_monotone_data_stays_monotone(self, tmp_path):
        # the interpolant must not overshoot between knots
        knots = np.array([0.1, 0.3, 0.35, 0.7, 0.9])
        vals = np.array([0.0, 0.1, 2.0, 2.1, 2.2])
        tab = load_tabulated(self.make_table(tmp_path, knots, vals))
        fine = np.linspace(0.1, 0.9, 2000)
        out = np.asarray(tab.log_tilt(fine))
        assert np.all(np.diff(out) >= -1e-12)
        assert out.min() >= -1e-12 and out.max() <= 2.2 + 1e-12

    def test_rejects_non_finite_rows(self, tmp_path):
        path = self.make_table(tmp_path, np.array([0.2, 0.5, 0.8]),
                               np.array([0.0, np.nan, 1.0]))
        with pytest.raises(ValueError, match="row 2"):
            load_tabulated(path)

    def test_rejects_non_increasing_knots(self, tmp_path):
        path = self.make_table(tmp_path, np.array([0.2, 0.5, 0.5, 0.8]),
                               np.zeros(4))
        with pytest.raises(ValueError, match="rows 2 and 3"):
            load_tabulated(path)

    def test_rejects_out_of_range_knots(self, tmp_path):
        path = self.make_table(tmp_path, np.array([0.0, 0.5, 0.8]), np.zeros(3))
        with pytest.raises(ValueError, match=r"\(0, 1\)"):
            load_tabulated(path)

    def test_rejects_wrong_shape_and_short_tables(self, tmp_path):
        path = tmp_path / "three.txt"
        np.savetxt(path, np.ones((4, 3)))
        with pytest.raises(ValueError, match="two columns"):
            load_tabulated(path)
        path2 = self.make_table(tmp_path, np.array([0.5]), np.array([1.0]))
        with pytest.raises(ValueError, match="two rows"):
            load_tabulated(path2)

    def test_tabulated_tilt_jit_traceable(self, tmp_path):
        knots = np.linspace(0.01, 0.99, 50)
        tab = load_tabulated(self.make_table(tmp_path, knots, knots ** 2))
        val = jax.jit(lambda x: tab.log_tilt(x).sum())(jnp.array([0.3, 0.7]))
        assert np.isfinite(float(val))


# ---------------------------------------------------------------------------
# interaction with the objective
# ---------------------------------------------------------------------------

class TestObjectiveInteraction:
    def test_normalizer_shifts_kl_by_constant(self, line_problem, line_fit):
        # using the normalized contaminated prior inside the objective
        # would change the KL by exactly (K - 1) log Z, with no effect on
        # the gradient; the free sticks are the only ones carrying a prior
        data, model, _ = line_problem
        pert = exp_tilt(1.5)
        delta = 0.5
        log_z = log_normalizer(model.alpha0, pert, delta)

        def normalized_tilt(nu, base=pert.log_tilt):
            return base(nu) - log_z / delta

        asm_raw = KLAssembly(data, model, log_tilt=pert.log_tilt)
        asm_norm = KLAssembly(data, model, log_tilt=normalized_tilt)
        x = flatten(line_fit.eta_opt) + 0.05
        v_raw, g_raw = asm_raw.value_and_grad(x, alpha=model.alpha0, delta=delta)
        v_norm, g_norm = asm_norm.value_and_grad(x, alpha=model.alpha0, delta=delta)
        # the prior term enters the KL negatively, so normalizing the
        # tilt raises the KL by the constant
        shift = (model.K - 1) * log_z
        assert v_norm - v_raw == pytest.approx(shift, rel=1e-10)
        assert np.max(np.abs(g_norm - g_raw)) < 1e-10

    def test_prior_swap_refit_matches_direct_refit(self, line_problem, line_fit):
        # optimizing with the swap tilt at delta=1 must land on the same
        # optimum as optimizing directly under the new concentration
        data, model, assembly = line_problem
        alpha1 = 4.0
        swap = prior_swap(model.alpha0, alpha1)
        direct = optimize(line_fit.eta_opt, data, model,
                          pert=StickPriorSpec(alpha=alpha1),
                          tol=1e-9, assembly=assembly)
        tilted = optimize(line_fit.eta_opt, data, model,
                          pert=StickPriorSpec(alpha=model.alpha0,
                                              log_tilt=swap.log_tilt, delta=1.0),
                          tol=1e-9)
        assert direct.converged and tilted.converged
        gap = np.abs(flatten(direct.eta_opt) - flatten(tilted.eta_opt))
        assert np.max(gap) < 1e-6
