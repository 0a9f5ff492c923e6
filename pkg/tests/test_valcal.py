"""Validation suite: KS, PP pairs, radiality tests, Bonferroni, recalibration."""

import numpy as np
import pytest
from scipy import special, stats

from udlflow.errors import ContractError
from udlflow.flows import build_flow
from udlflow.radial import NormDistribution, RadialBase
from udlflow.valcal import (Calibration, combine_bonferroni,
                            energy_statistic, kde_curve, kolmogorov_p,
                            ks_statistic, pp_plot_data,
                            projected_uniformity_test, recalibrate,
                            sign_symmetry_test, validate_latents)


def gamma_base(d=4, k=1):
    return RadialBase(d, k, NormDistribution.gamma(float(d), 1.0))


class TestKolmogorovP:
    def test_matches_scipy_survival_function(self):
        for lam in [0.1, 0.25, 0.39, 0.41, 0.5, 0.8, 1.0, 1.36, 2.0, 3.0]:
            assert kolmogorov_p(lam) == pytest.approx(
                float(special.kolmogorov(lam)), abs=1e-10)

    def test_limits(self):
        assert kolmogorov_p(1e-9) == 1.0
        assert kolmogorov_p(8.0) < 1e-20


class TestKsStatistic:
    def test_quantile_spaced_sample_hits_discreteness_floor(self):
        # a sample whose norms sit exactly at the mid-step quantiles is
        # the best any n-point empirical CDF can do: D = 1/(2n)
        base = gamma_base(3)
        n = 400
        radii = base.dist.quantile((np.arange(n) + 0.5) / n)
        latents = np.zeros((n, 3))
        latents[:, 0] = radii  # l1 norm = radius
        stat, p = ks_statistic(latents, base)
        assert stat == pytest.approx(0.5 / n, abs=1e-9)
        assert p > 0.999999

    def test_null_acceptance_rate(self):
        base = gamma_base(4)
        passed = 0
        for seed in range(20):
            latents = base.sample(1000, np.random.default_rng(seed))
            _, p = ks_statistic(latents, base)
            passed += p > 0.05
        assert passed >= 18

    def test_shifted_sample_rejected(self):
        base = gamma_base(4)
        latents = base.sample(1000, np.random.default_rng(0)) + 0.5
        _, p = ks_statistic(latents, base)
        assert p < 1e-6

    def test_needs_ten_samples(self):
        with pytest.raises(ContractError):
            ks_statistic(np.zeros((5, 2)), gamma_base(2))


class TestPpPlot:
    def test_grid_size_two_gives_exact_endpoints(self):
        base = gamma_base(2)
        latents = base.sample(50, np.random.default_rng(1))
        pairs = pp_plot_data(latents, base, grid_size=2)
        np.testing.assert_array_equal(pairs, [[0.0, 0.0], [1.0, 1.0]])

    def test_good_fit_stays_near_diagonal(self):
        base = gamma_base(3)
        n = 2000
        radii = base.dist.quantile((np.arange(n) + 0.5) / n)
        latents = np.zeros((n, 3))
        latents[:, 0] = radii
        pairs = pp_plot_data(latents, base, grid_size=64)
        assert np.abs(pairs[:, 0] - pairs[:, 1]).max() <= 1.0 / np.sqrt(n)

    def test_stochastically_larger_norms_sit_on_one_side(self):
        base = gamma_base(3)
        latents = base.sample(2000, np.random.default_rng(2)) * 1.5
        pairs = pp_plot_data(latents, base, grid_size=64)
        # inflated norms: empirical CDF lags the model CDF everywhere
        assert np.all(pairs[:, 0] <= pairs[:, 1] + 1e-12)
        assert np.any(pairs[:, 0] < pairs[:, 1] - 0.05)

    def test_grid_size_validated(self):
        with pytest.raises(ContractError):
            pp_plot_data(np.zeros((20, 2)), gamma_base(2), grid_size=1)


class TestSignSymmetry:
    def test_exact_balance_gives_p_one(self):
        latents = np.concatenate([np.ones((50, 1)), -np.ones((50, 1))])
        p, passes, threshold = sign_symmetry_test(latents)
        assert p[0] == pytest.approx(1.0)
        assert passes[0]
        assert threshold == pytest.approx(0.025)  # alpha/(2*1)

    def test_all_positive_tail(self):
        latents = np.ones((20, 1))
        p, _, _ = sign_symmetry_test(latents)
        assert p[0] == pytest.approx(2 * 0.5 ** 20, rel=1e-9)

    def test_zeros_excluded(self):
        latents = np.concatenate([np.ones((30, 1)), -np.ones((30, 1)),
                                  np.zeros((40, 1))])
        p, _, _ = sign_symmetry_test(latents)
        assert p[0] == pytest.approx(1.0)

    def test_matches_exact_binomial(self):
        rng = np.random.default_rng(3)
        latents = rng.normal(size=(200, 3))
        p, _, _ = sign_symmetry_test(latents)
        for j in range(3):
            pos = int((latents[:, j] > 0).sum())
            assert p[j] == pytest.approx(
                stats.binomtest(pos, 200, 0.5).pvalue, rel=1e-12)


class TestProjectedUniformity:
    def test_identical_samples_zero_statistic(self):
        x = np.random.default_rng(0).dirichlet(np.ones(3), size=50)
        assert energy_statistic(x, x) == pytest.approx(0.0, abs=1e-12)

    def test_null_acceptance(self):
        base = gamma_base(3)
        accepted = 0
        for seed in range(10):
            latents = base.sample(200, np.random.default_rng(seed))
            _, p, _ = projected_uniformity_test(latents, permutations=200,
                                                seed=seed)
            accepted += p > 0.05
        assert accepted >= 8

    def test_vertex_concentration_rejected(self):
        rng = np.random.default_rng(5)
        latents = np.abs(rng.normal(size=(200, 3))) * np.array([20.0, 0.1, 0.1])
        _, p, _ = projected_uniformity_test(latents, permutations=200, seed=0)
        assert p < 0.01

    def test_zero_rows_excluded_and_counted(self):
        base = gamma_base(3)
        latents = base.sample(50, np.random.default_rng(1))
        latents[7] = 0.0
        latents[21] = 0.0
        _, _, excluded = projected_uniformity_test(latents, permutations=20,
                                                   seed=0)
        assert excluded == 2

    def test_needs_twenty(self):
        with pytest.raises(ContractError):
            projected_uniformity_test(np.ones((10, 2)))


class TestBonferroni:
    def test_single_test_rejects(self):
        assert combine_bonferroni([0.04], alpha=0.05) is False

    def test_four_tests_accept(self):
        # 0.02 > 0.05/4 = 0.0125, so nothing rejects
        assert combine_bonferroni([0.02, 0.5, 0.9, 0.3], alpha=0.05) is True

    def test_four_tests_reject(self):
        assert combine_bonferroni([0.012, 0.5, 0.9, 0.3], alpha=0.05) is False

    def test_empty_rejected(self):
        with pytest.raises(ContractError):
            combine_bonferroni([])


class TestValidateLatents:
    def test_accepts_own_base(self):
        base = gamma_base(4)
        accepted = 0
        for seed in range(5):
            latents = base.sample(1000, np.random.default_rng(100 + seed))
            report = validate_latents(latents, base, permutations=100,
                                      seed=seed)
            accepted += report.verdict == "accept"
        assert accepted >= 4

    def test_shifted_base_rejected(self):
        base = gamma_base(4)
        latents = base.sample(1000, np.random.default_rng(0)) + 0.5
        report = validate_latents(latents, base, permutations=100, seed=0)
        assert report.verdict == "reject"

    def test_norm_ok_radiality_fail(self):
        # keep the norms exactly (sorted magnitudes) but break symmetry by
        # forcing every coordinate positive
        base = gamma_base(4)
        latents = np.abs(base.sample(1000, np.random.default_rng(1)))
        report = validate_latents(latents, base, permutations=100, seed=1)
        assert report.verdict == "norm-ok-radiality-fail"

    def test_report_text_fields(self):
        base = gamma_base(3)
        latents = base.sample(200, np.random.default_rng(2))
        report = validate_latents(latents, base, permutations=50, seed=2)
        text = report.to_text()
        for key in ("ks_stat=", "ks_p=", "sign_pass_count=", "energy_p=",
                    "verdict="):
            assert key in text


class TestRecalibration:
    def test_q_one_is_max_norm(self):
        flow = build_flow((2,), n_blocks=2, seed=0)  # identity
        cal = np.random.default_rng(0).normal(size=(100, 2))
        calib = recalibrate(flow, cal, [1.0])
        assert calib.radius(1.0) == pytest.approx(np.abs(cal).sum(axis=1).max())

    @pytest.mark.parametrize("q", [0.5, 0.9])
    def test_containment_exactly_ceil_qn(self, q):
        flow = build_flow((2,), n_blocks=2, seed=1)
        flow.perturb(np.random.default_rng(2), scale=0.4)
        cal = np.random.default_rng(3).normal(size=(173, 2))
        calib = recalibrate(flow, cal, [q])
        norms = flow.latent_norms(cal)
        inside = int(np.sum(norms <= calib.radius(q)))
        assert inside == int(np.ceil(q * 173))

    def test_radii_nondecreasing(self):
        flow = build_flow((3,), n_blocks=2, seed=4)
        cal = np.random.default_rng(5).normal(size=(400, 3))
        calib = recalibrate(flow, cal, np.linspace(0.1, 1.0, 10))
        assert np.all(np.diff(calib.radii) >= 0)

    def test_well_fit_flow_recovers_analytic_radius(self):
        flow = build_flow((3,), n_blocks=2, base_kind="gamma", seed=6)
        cal = flow.sample(4000, np.random.default_rng(7))
        calib = recalibrate(flow, cal, [0.5, 0.8])
        for q in (0.5, 0.8):
            assert calib.radius(q) == pytest.approx(
                flow.base.udl_radius(q), rel=0.06)

    def test_calibration_guards(self):
        with pytest.raises(ContractError):
            Calibration(q_grid=[0.1, 0.9], radii=[2.0, 1.0])
        calib = Calibration(q_grid=[0.2, 0.8], radii=[1.0, 2.0])
        with pytest.raises(ContractError):
            calib.radius(0.95)
        assert calib.radius(0.5) == pytest.approx(1.5)

    def test_empty_calibration_set(self):
        flow = build_flow((2,), n_blocks=2, seed=8)
        with pytest.raises(ContractError):
            recalibrate(flow, np.empty((0, 2)), [0.5])


def test_kde_curve_normalizes():
    values = np.random.default_rng(0).normal(size=500)
    grid, dens = kde_curve(values)
    total = np.trapezoid(dens, grid)
    assert total == pytest.approx(1.0, abs=0.02)
