import math
from unittest.mock import patch

import numpy as np
import pytest
from scipy.optimize import brentq

from marginal_synth.exceptions import PrivacyError
from marginal_synth.marginal import MarginalSchema, MarginalTable
from marginal_synth.models import STRATEGIES, PrivacyParams
from marginal_synth.privacy import (
    ZcdpBudget,
    add_noise,
    advanced_composition_eps,
    advanced_eps_per,
    all_strategy_stds,
    strategy_budgets,
    crossover_k,
    gaussian_sigma,
    laplace_std,
    plan_noise,
    sensitivity,
    zcdp_from_dp,
)

SETTINGS = [(0.01, 1e-8), (0.01, 1e-12), (1.0, 1e-8), (1.0, 1e-12)]
PUBLISHED_CROSSOVERS = {(0.01, 1e-8): 18, (0.01, 1e-12): 28, (1.0, 1e-8): 19, (1.0, 1e-12): 28}


class TestMechanisms:
    def test_laplace_std(self):
        """Test the Laplace standard deviation formula."""
        assert laplace_std(1, 1) == pytest.approx(1.41421356, abs=1e-6)
        assert laplace_std(2, 1) == pytest.approx(laplace_std(1, 1) / 2)
        assert laplace_std(1, 2) == pytest.approx(2.82842712, abs=1e-6)

    def test_laplace_std_rejects_non_positive(self):
        """Test rejection of zero budget or sensitivity."""
        with pytest.raises(PrivacyError):
            laplace_std(0, 1)
        with pytest.raises(PrivacyError):
            laplace_std(1, -1)

    def test_gaussian_sigma(self):
        """Test the classic Gaussian calibration against its closed form."""
        base = gaussian_sigma(1, 1e-5, 1)
        assert base == pytest.approx(math.sqrt(2 * math.log(1.25e5)), rel=1e-12)
        assert base == pytest.approx(4.8448, abs=1e-4)
        assert gaussian_sigma(0.5, 1e-5, 1) == pytest.approx(2 * base)
        assert gaussian_sigma(1, 1e-5, math.sqrt(2)) == pytest.approx(math.sqrt(2) * base)

    def test_gaussian_sigma_rejects_bad_delta(self):
        """Test rejection of delta outside (0, 1)."""
        for delta in (0.0, 1.0, -0.1):
            with pytest.raises(PrivacyError):
                gaussian_sigma(1, delta, 1)

    def test_sensitivity(self):
        """Test the per-marginal sensitivities of both neighboring modes."""
        assert sensitivity("unbounded").l1 == 1 and sensitivity("unbounded").l2 == 1
        assert sensitivity("bounded").l1 == 2
        assert sensitivity("bounded").l2 == pytest.approx(math.sqrt(2))


class TestZcdp:
    def test_conversion_value(self):
        """Test the closed-form rho for (1, 1e-8)."""
        assert zcdp_from_dp(1, 1e-8).rho == pytest.approx(0.013228, abs=1e-4)

    def test_conversion_round_trip(self):
        """Test that converting rho back reproduces epsilon."""
        for eps, delta in SETTINGS + [(5.0, 1e-6)]:
            assert zcdp_from_dp(eps, delta).to_dp(delta) == pytest.approx(eps, abs=1e-9)

    def test_large_epsilon_asymptote(self):
        """Test that rho approaches epsilon for large epsilon."""
        assert zcdp_from_dp(1e3, 1e-8).rho / 1e3 > 0.7

    def test_composition_is_additive(self):
        """Test linear composition of zCDP budgets."""
        assert (ZcdpBudget(0.1) + ZcdpBudget(0.25)).rho == pytest.approx(0.35)
        assert ZcdpBudget(0.1).compose(ZcdpBudget(0.2)).rho == pytest.approx(0.3)

    def test_rho_must_be_positive(self):
        """Test rejection of a non-positive rho."""
        with pytest.raises(PrivacyError):
            ZcdpBudget(0.0)


class TestAdvancedComposition:
    def test_single_mechanism_residual(self):
        """Test that k=1 solves the defining equation."""
        eps0 = advanced_eps_per(1.0, 1e-8, 1)
        assert advanced_composition_eps(eps0, 1e-8, 1) <= 1.0
        assert abs(advanced_composition_eps(eps0, 1e-8, 1) - 1.0) <= 1e-9

    def test_monotone_in_k(self):
        """Test that more mechanisms get a smaller share."""
        assert advanced_eps_per(1.0, 1e-8, 10) > advanced_eps_per(1.0, 1e-8, 100)

    def test_grid_search_oracle(self):
        """Test agreement with a dense grid search."""
        grid = np.arange(1, 50_001) * 1e-6
        composed = grid * math.sqrt(2 * 100 * math.log(1e8)) + 100 * grid * np.expm1(grid)
        best = grid[composed <= 1.0].max()
        assert advanced_eps_per(1.0, 1e-8, 100) == pytest.approx(best, abs=1e-5)

    @pytest.mark.parametrize("eps,delta", SETTINGS)
    def test_root_fits_and_is_tight(self, eps, delta):
        """Test that the share fits the budget and sits within 1e-9 of the largest one that does."""
        for k in (1, 7, 50, 100):
            eps0 = advanced_eps_per(eps, delta, k)
            assert advanced_composition_eps(eps0, delta, k) <= eps
            assert advanced_composition_eps(eps0 * (1 + 1e-9), delta, k) > eps

    @patch("marginal_synth.privacy.brentq", wraps=brentq)
    def test_one_root_search_per_call(self, mock_brentq):
        """Test that each share costs a single root search."""
        advanced_eps_per(1.0, 1e-8, 50)
        assert mock_brentq.call_count == 1

    def test_invalid_inputs(self):
        """Test rejection of bad budgets and counts."""
        with pytest.raises(PrivacyError):
            advanced_eps_per(0.0, 1e-8, 3)
        with pytest.raises(PrivacyError):
            advanced_eps_per(1.0, 1e-8, 0)


class TestPlanNoise:
    @pytest.mark.parametrize("eps,delta", SETTINGS)
    def test_crossover_matches_published(self, eps, delta):
        """Test the gauss_zcdp / lap_basic crossover within one marginal."""
        found = crossover_k(PrivacyParams(epsilon=eps, delta=delta))
        assert abs(found - PUBLISHED_CROSSOVERS[(eps, delta)]) <= 1

    def test_crossover_at_unit_epsilon(self):
        """Test the exact crossover for (1, 1e-8)."""
        params = PrivacyParams(epsilon=1.0, delta=1e-8)
        assert crossover_k(params) == 19
        assert plan_noise(params, 18).strategy == "lap_basic"
        assert plan_noise(params, 19).strategy == "gauss_zcdp"

    @pytest.mark.parametrize("eps,delta", SETTINGS)
    def test_single_marginal_prefers_laplace(self, eps, delta):
        """Test that one marginal always uses the basic Laplace route."""
        assert plan_noise(PrivacyParams(epsilon=eps, delta=delta), 1).strategy == "lap_basic"

    @pytest.mark.parametrize("eps,delta", SETTINGS)
    def test_advanced_and_zcdp_laplace_are_close(self, eps, delta):
        """Test that the two Laplace routes stay within 10 of each other."""
        params = PrivacyParams(epsilon=eps, delta=delta)
        for k in range(1, 101):
            stds = all_strategy_stds(params, k)
            assert abs(stds["lap_adv"] - stds["lap_zcdp"]) < 10

    @pytest.mark.parametrize("eps,delta", SETTINGS)
    def test_chosen_is_minimum(self, eps, delta):
        """Test that the plan picks the smallest of the five stds."""
        params = PrivacyParams(epsilon=eps, delta=delta)
        for k in (1, 5, 18, 19, 50, 100):
            plan = plan_noise(params, k)
            assert plan.per_marginal_std == pytest.approx(min(v for v in plan.stds.values() if v is not None))
            assert set(plan.stds) == set(STRATEGIES)

    @pytest.mark.parametrize("eps,delta", SETTINGS)
    def test_monotone_in_k(self, eps, delta):
        """Test that every strategy's std grows with k."""
        params = PrivacyParams(epsilon=eps, delta=delta)
        previous = all_strategy_stds(params, 1)
        for k in range(2, 60):
            current = all_strategy_stds(params, k)
            for strategy in STRATEGIES:
                assert current[strategy] >= previous[strategy]
            previous = current

    def test_zcdp_laplace_is_lossy_for_one(self):
        """Test that the zCDP Laplace route never beats basic Laplace at k=1."""
        for eps in (0.01, 0.1, 1.0, 4.0):
            for delta in (1e-5, 1e-8, 1e-12):
                stds = all_strategy_stds(PrivacyParams(epsilon=eps, delta=delta), 1)
                assert stds["lap_zcdp"] >= stds["lap_basic"]

    def test_zero_delta_leaves_basic_laplace(self):
        """Test that delta=0 disables every route but lap_basic."""
        plan = plan_noise(PrivacyParams(epsilon=1.0, delta=0.0), 50)
        assert plan.strategy == "lap_basic"
        assert plan.distribution == "laplace"
        assert [s for s, v in plan.stds.items() if v is not None] == ["lap_basic"]
        assert plan.notes

    def test_bounded_doubles_laplace(self):
        """Test the bounded-mode sensitivity in the basic route."""
        unbounded = plan_noise(PrivacyParams(epsilon=1.0, delta=1e-8), 3)
        bounded = plan_noise(PrivacyParams(epsilon=1.0, delta=1e-8, neighboring="bounded"), 3)
        assert bounded.stds["lap_basic"] == pytest.approx(2 * unbounded.stds["lap_basic"])

    def test_budget_recorded(self):
        """Test that the plan records the per-marginal budget."""
        basic = plan_noise(PrivacyParams(epsilon=1.0, delta=1e-8), 4)
        assert basic.per_marginal_epsilon == pytest.approx(0.25)
        zcdp = plan_noise(PrivacyParams(epsilon=1.0, delta=1e-8), 50)
        assert zcdp.per_marginal_rho * 50 == pytest.approx(zcdp_from_dp(1.0, 1e-8).rho)

    def test_reuses_computed_budgets(self):
        """Test that passing the budgets skips the composition solves."""
        params = PrivacyParams(epsilon=1.0, delta=1e-8)
        budgets = strategy_budgets(params, 30)
        with patch("marginal_synth.privacy.advanced_eps_per") as mock_solve:
            plan = plan_noise(params, 30, budgets)
        mock_solve.assert_not_called()
        assert plan == plan_noise(params, 30)


class TestAddNoise:
    def setup_method(self):
        """Set up a zero table with a million cells."""
        self.table = MarginalTable(MarginalSchema((0,), (1_000_000,)), np.zeros(1_000_000))

    def test_zero_std_is_identity(self):
        """Test that std 0 leaves the counts alone."""
        small = MarginalTable(MarginalSchema((0,), (3,)), [1.0, 2.0, 3.0])
        noisy = add_noise(small, 0.0, "laplace", seed=1)
        assert noisy.counts.tolist() == [1.0, 2.0, 3.0]
        assert noisy.noise_std == 0.0

    def test_laplace_mean(self):
        """Test that Laplace noise is centred."""
        noisy = add_noise(self.table, 1.0, "laplace", seed=2)
        assert abs(noisy.counts.mean()) < 0.005
        assert noisy.counts.std() == pytest.approx(1.0, abs=0.01)
        assert noisy.noise_std == 1.0

    def test_gaussian_std(self):
        """Test the Gaussian standard deviation."""
        noisy = add_noise(self.table, 2.0, "gaussian", seed=3)
        assert noisy.counts.std() == pytest.approx(2.0, abs=0.01)

    def test_seeded(self):
        """Test that one seed gives one noise vector."""
        small = MarginalTable(MarginalSchema((0,), (5,)), np.zeros(5))
        a = add_noise(small, 1.0, "gaussian", seed=4)
        b = add_noise(small, 1.0, "gaussian", seed=4)
        assert np.array_equal(a.counts, b.counts)

    def test_rejections(self):
        """Test rejection of negative std and unknown distributions."""
        with pytest.raises(PrivacyError):
            add_noise(self.table, -1.0, "laplace", seed=0)
        with pytest.raises(PrivacyError):
            add_noise(self.table, 1.0, "cauchy", seed=0)
