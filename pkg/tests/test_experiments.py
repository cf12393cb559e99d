"""Experiments module: scaled families, free-energy integrals, breakdowns."""

import json
import math
import warnings

import numpy as np
import pytest

from hartree_scattering.experiments import (
    FitReport,
    FreeEnergyReport,
    OffOriginRow,
    OriginRow,
    ScalingExperiment,
    UnreliableTailWarning,
    admissible_exponent_window,
    breakdown_off_origin,
    breakdown_origin,
    fit_exponents,
    free_energy_integral,
    free_energy_report,
    make_scaled,
    mass_radius,
    sigma_law_horizon,
)
from hartree_scattering.functionals import weighted_norms
from hartree_scattering.propagator import SolverConfig
from hartree_scattering.spectral_core import (
    ComplexField,
    POSITION,
    dual_grid,
    make_grid,
    make_kernel,
)

from oracles import gaussian

GAMMA = 1.5


@pytest.fixture(scope="module")
def small_setup():
    grid = make_grid(2, 64, 12.0)
    return grid, make_kernel(grid, GAMMA)


@pytest.fixture(scope="module")
def wide_setup():
    """Box wide enough for sigma <= 2 dilations of a width-1 Gaussian."""
    grid = make_grid(2, 128, 36.0)
    return grid, make_kernel(grid, GAMMA)


@pytest.fixture(scope="module")
def cfg():
    return SolverConfig(dt=0.02, t_span=(0.0, 2.0), record_every=5,
                        tol_energy=1e-3, tol_wrap=0.5)


# ---------------------------------------------------------------------------
# exponent fits
# ---------------------------------------------------------------------------

class TestFitExponents:
    def test_exact_power_law(self):
        pts = [(1.0, s, 3.0 * s**0.5) for s in (2.0, 4.0, 8.0, 16.0)]
        fit = fit_exponents(pts, "sigma-power")
        assert abs(fit.slope - 0.5) < 1e-12
        assert fit.residual < 1e-12
        assert fit.confidence < 1e-10
        assert fit.n_points == 4

    def test_eps_power_law(self):
        pts = [(e, 3.0, 0.7 * e**4) for e in (0.1, 0.2, 0.4, 0.8)]
        fit = fit_exponents(pts, "eps-power")
        assert abs(fit.slope - 4.0) < 1e-12
        assert abs(math.exp(fit.intercept) - 0.7) < 1e-12

    def test_joint_model_recovers_both_exponents(self):
        pts = [(e, s, 2.0 * e**3 * s**0.5)
               for e in (0.05, 0.1, 0.2) for s in (2.0, 4.0, 8.0)]
        fit = fit_exponents(pts, "joint")
        assert abs(fit.slope - 3.0) < 1e-10
        assert abs(fit.slope_sigma - 0.5) < 1e-10

    def test_constant_data_fits_zero_slope(self):
        fit = fit_exponents([(1.0, s, 7.0) for s in (2.0, 4.0, 8.0)],
                            "sigma-power")
        assert abs(fit.slope) < 1e-12

    def test_one_percent_noise_slope_within_003(self):
        rng = np.random.default_rng(7)
        sigmas = np.logspace(0.0, 1.0, 5)   # five points over one decade
        pts = [(1.0, float(s), float(2.0 * s**0.5 * (1.0 + 0.01 * rng.uniform(-1, 1))))
               for s in sigmas]
        fit = fit_exponents(pts, "sigma-power")
        assert abs(fit.slope - 0.5) < 0.03
        assert fit.confidence < 0.05

    def test_too_few_points(self):
        with pytest.raises(ValueError, match="at least 3"):
            fit_exponents([(1.0, 2.0, 1.0), (1.0, 4.0, 2.0)], "sigma-power")

    def test_nonpositive_values(self):
        pts = [(1.0, 2.0, 1.0), (1.0, 4.0, -2.0), (1.0, 8.0, 3.0)]
        with pytest.raises(ValueError, match="positive"):
            fit_exponents(pts, "sigma-power")

    def test_unknown_model(self):
        pts = [(1.0, s, s) for s in (2.0, 4.0, 8.0)]
        with pytest.raises(ValueError, match="model"):
            fit_exponents(pts, "cubic-spline")


# ---------------------------------------------------------------------------
# scaled family
# ---------------------------------------------------------------------------

class TestMassRadius:
    def test_scales_with_width(self, small_setup):
        grid, _ = small_setup
        r1 = mass_radius(gaussian(grid, width=0.5))
        r2 = mass_radius(gaussian(grid, width=1.0))
        assert abs(r2 / r1 - 2.0) < 0.1

    def test_zero_field(self, small_setup):
        grid, _ = small_setup
        zero = ComplexField(grid, np.zeros(grid.shape, complex), POSITION)
        assert mass_radius(zero) == 0.0

    def test_fraction_validation(self, small_setup):
        grid, _ = small_setup
        with pytest.raises(ValueError, match="fraction"):
            mass_radius(gaussian(grid), fraction=1.5)


class TestMakeScaled:
    def test_identity_member(self, small_setup):
        grid, _ = small_setup
        v = gaussian(grid, width=1.0)
        same = make_scaled(v, 1.0, 1.0)
        assert float(np.max(np.abs(same.values - v.values))) < 1e-12

    def test_norm_scalings(self, wide_setup):
        grid, _ = wide_setup
        v = gaussian(grid, width=1.0)
        eps, sigma = 0.3, 2.0
        scaled = make_scaled(v, eps, sigma)
        base, got = weighted_norms(v).values, weighted_norms(scaled).values
        assert abs(got["L2"] - eps * base["L2"]) <= 1e-6 * eps * base["L2"]
        assert abs(got["grad_L2"] - eps / sigma * base["grad_L2"]) \
            <= 1e-4 * eps / sigma * base["grad_L2"]
        assert abs(got["x_L2"] - eps * sigma * base["x_L2"]) \
            <= 1e-4 * eps * sigma * base["x_L2"]

    def test_weighted_norm_grows_like_eps_sigma(self, wide_setup):
        grid, _ = wide_setup
        v = gaussian(grid, width=1.0)
        base = weighted_norms(v).values
        eps = 0.1
        for sigma in (1.5, 2.0):
            measured = weighted_norms(make_scaled(v, eps, sigma)).values["Sigma"]
            expected = eps * math.hypot(base["L2"], base["grad_L2"] / sigma) \
                + eps * sigma * base["x_L2"]
            assert measured == pytest.approx(expected, rel=1e-4)
        # the moment term carries eps*sigma, so the norm grows with sigma
        s1 = weighted_norms(make_scaled(v, eps, 1.5)).values["Sigma"]
        s2 = weighted_norms(make_scaled(v, eps, 2.0)).values["Sigma"]
        assert s2 > s1

    def test_parameter_validation(self, small_setup):
        grid, _ = small_setup
        v = gaussian(grid, width=1.0)
        with pytest.raises(ValueError, match="eps"):
            make_scaled(v, 0.0, 2.0)
        with pytest.raises(ValueError, match="sigma"):
            make_scaled(v, 0.1, 0.5)

    def test_sigma_too_large_for_box(self, small_setup):
        grid, _ = small_setup
        v = gaussian(grid, width=1.0)
        with pytest.raises(ValueError, match="too large for the box"):
            make_scaled(v, 0.1, 2.0)   # support radius ~4.3 vs L/4 = 3


# ---------------------------------------------------------------------------
# free-energy integral
# ---------------------------------------------------------------------------

class TestFreeEnergy:
    def test_zero_data_gives_zero(self, small_setup):
        grid, K = small_setup
        zero = ComplexField(grid, np.zeros(grid.shape, complex), POSITION)
        rep = free_energy_report(zero, K, 5.0)
        assert rep.value == 0.0
        assert rep.reliable

    def test_report_is_consistent(self, small_setup):
        grid, K = small_setup
        rep = free_energy_report(gaussian(grid, width=1.0), K, 20.0)
        assert rep.value == rep.partial + rep.tail_estimate
        assert rep.partial > 0.0
        assert rep.tail_estimate > 0.0
        assert len(rep.times) == len(rep.integrand)
        assert rep.horizon == pytest.approx(20.0)

    def test_quartic_homogeneity(self, small_setup):
        grid, K = small_setup
        v = gaussian(grid, width=1.0)
        full = free_energy_report(v, K, 40.0).value
        half = free_energy_report(make_scaled(v, 0.5, 1.0), K, 40.0).value
        assert abs(half - 0.5**4 * full) <= 1e-10 * 0.5**4 * full

    def test_quartic_exponent_fit(self, small_setup):
        grid, K = small_setup
        v = gaussian(grid, width=1.0)
        pts = []
        for eps in (0.1, 0.2, 0.4):
            val = free_energy_report(make_scaled(v, eps, 1.0), K, 40.0).value
            pts.append((eps, 1.0, val))
        fit = fit_exponents(pts, "eps-power")
        assert abs(fit.slope - 4.0) < 1e-3

    def test_unreliable_short_horizon_warns(self, small_setup):
        grid, K = small_setup
        v = gaussian(grid, width=1.0)
        with pytest.warns(UnreliableTailWarning):
            free_energy_integral(v, K, 2.0)

    def test_reliable_long_horizon_no_warning(self, small_setup):
        grid, K = small_setup
        v = gaussian(grid, width=1.0)
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            val = free_energy_integral(v, K, 150.0)
        assert val > 0.0

    def test_horizon_extension_is_consistent(self, small_setup):
        grid, K = small_setup
        v = gaussian(grid, width=1.0)
        early = free_energy_report(v, K, 50.0)
        late = free_energy_report(v, K, 200.0)
        assert abs(early.value - late.value) <= 0.05 * late.value
        assert late.tail_estimate < early.tail_estimate

    def test_horizon_validation(self, small_setup):
        grid, K = small_setup
        with pytest.raises(ValueError, match="horizon"):
            free_energy_report(gaussian(grid), K, 0.0)

    def test_sigma_law(self):
        grid = make_grid(2, 256, 72.0)
        K = make_kernel(grid, GAMMA)
        dualK = make_kernel(dual_grid(grid), GAMMA)
        v = gaussian(grid, width=1.0)
        pts = []
        for sigma in (1.5, 2.0, 3.0):
            vs = make_scaled(v, 1.0, sigma)
            rep = free_energy_report(vs, K, sigma_law_horizon(GAMMA, sigma),
                                     dual_kernel=dualK)
            assert rep.reliable
            pts.append((1.0, sigma, rep.value))
        fit = fit_exponents(pts, "sigma-power")
        assert abs(fit.slope - (2.0 - GAMMA)) < 0.05

    @pytest.mark.parametrize("gamma", [1.4, 1.5, 1.75])
    def test_sigma_law_horizon_hits_target_share(self, small_setup, gamma):
        grid, _ = small_setup
        K = make_kernel(grid, gamma)
        report = free_energy_report(gaussian(grid), K,
                                    sigma_law_horizon(gamma, 1.0))
        share = report.tail_estimate / report.partial
        assert report.reliable
        assert 0.035 < share < 0.05

    def test_sigma_law_horizon_scales_with_sigma_squared(self):
        base = sigma_law_horizon(1.5, 1.0)
        assert sigma_law_horizon(1.5, 4.0) == pytest.approx(16.0 * base)
        assert sigma_law_horizon(1.5, 1.0, width=2.0) == pytest.approx(4.0 * base)

    def test_sigma_law_horizon_grows_as_share_shrinks(self):
        loose = sigma_law_horizon(1.5, 1.0, tail_share=0.045)
        tight = sigma_law_horizon(1.5, 1.0, tail_share=0.01)
        assert tight > loose

    def test_sigma_law_horizon_validation(self):
        with pytest.raises(ValueError, match=r"gamma must lie in \(4/3, 2\)"):
            sigma_law_horizon(2.5, 1.0)
        with pytest.raises(ValueError, match="sigma must be >= 1"):
            sigma_law_horizon(1.5, 0.5)
        with pytest.raises(ValueError, match="width must be positive"):
            sigma_law_horizon(1.5, 1.0, width=0.0)
        with pytest.raises(ValueError, match="tail_share"):
            sigma_law_horizon(1.5, 1.0, tail_share=0.2)


# ---------------------------------------------------------------------------
# experiment container
# ---------------------------------------------------------------------------

def _dummy_rows(n):
    return tuple(OriginRow(sigma=2.0 * (i + 1), eps=0.01, eps_scaled=0.01,
                           l2_norm=0.01, main_term=1.0, remainder=0.1,
                           lower_bound=0.9, ratio=1.0, step_slope=0.0)
                 for i in range(n))


class TestScalingExperiment:
    def _make(self, epsilons, sigmas, j=math.nan):
        return ScalingExperiment(
            kind="origin-breakdown", epsilons=epsilons, sigmas=sigmas,
            j=j, s=2.9, gamma=GAMMA, rows=_dummy_rows(len(epsilons)),
            ledgers=(), fits={}, grid_shape=(64, 12.0))

    def test_eps_must_be_small(self):
        with pytest.raises(ValueError, match="eps=1.5 must stay below 1"):
            self._make((1.5, 0.1), (2.0, 4.0))

    def test_sigma_must_be_large(self):
        with pytest.raises(ValueError, match="sigma=0.5 must exceed 1"):
            self._make((0.1, 0.1), (0.5, 4.0))

    def test_product_must_be_small(self):
        with pytest.raises(ValueError, match=r"eps\*sigma"):
            self._make((0.3, 0.3), (2.0, 4.0))

    def test_coupled_schedule_enforced(self):
        with pytest.raises(ValueError, match="coupled schedule"):
            self._make((0.1, 0.1), (2.0, 4.0), j=2.3)
        ok = self._make((2.0**-2.3, 4.0**-2.3), (2.0, 4.0), j=2.3)
        assert ok.j == 2.3

    def test_j_must_exceed_one(self):
        with pytest.raises(ValueError, match="j=0.8 must exceed 1"):
            self._make((2.0**-0.8, 4.0**-0.8), (2.0, 4.0), j=0.8)


# ---------------------------------------------------------------------------
# origin breakdown
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def origin_run(small_setup, cfg):
    grid, K = small_setup
    v = gaussian(grid, width=1.0)
    return breakdown_origin(v, GAMMA, 2.3, [2.0, 3.0, 4.0], 2.9, K, cfg)


@pytest.fixture(scope="module")
def off_run(wide_setup, cfg):
    grid, K = wide_setup
    v = gaussian(grid, width=1.0)
    u0 = gaussian(grid, width=1.5, amp=0.1)
    return breakdown_off_origin(u0, v, GAMMA, 3.6, [1.5, 2.0], 2.9, K,
                                cfg, eps=0.05, radius=1.8)


class TestOriginBreakdown:
    def test_admissible_window_arithmetic(self):
        low, high = admissible_exponent_window(1.5, 2.9)
        assert low == pytest.approx(2.25)
        assert high == pytest.approx(5.0)
        assert low < 2.3 < high

    def test_s_threshold_rejected(self, small_setup, cfg):
        grid, K = small_setup
        v = gaussian(grid, width=1.0)
        threshold = (5.0 + 5.0 * GAMMA) / (3.0 + GAMMA)
        assert threshold == pytest.approx(2.7777777777777777)
        with pytest.raises(ValueError, match="no admissible j exists"):
            breakdown_origin(v, GAMMA, 2.3, [2.0, 4.0], 2.7, K, cfg)

    def test_j_window_enforced(self, small_setup, cfg):
        grid, K = small_setup
        v = gaussian(grid, width=1.0)
        with pytest.raises(ValueError, match=r"j must exceed \(3\+gamma\)/2"):
            breakdown_origin(v, GAMMA, 2.0, [2.0, 4.0], 2.9, K, cfg)
        with pytest.raises(ValueError, match="must stay below"):
            breakdown_origin(v, GAMMA, 6.0, [2.0, 4.0], 2.9, K, cfg)

    def test_all_violations_reported_together(self, small_setup, cfg):
        grid, K = small_setup
        v = gaussian(grid, width=1.0)
        wrong_K = make_kernel(grid, 1.6)
        with pytest.raises(ValueError) as err:
            breakdown_origin(v, GAMMA, 2.0, [0.5], 2.7, wrong_K, cfg)
        text = str(err.value)
        assert "kernel exponent" in text
        assert "no admissible j exists" in text
        assert "j must exceed" in text
        assert "sigma=0.5 must exceed 1" in text
        assert "at least two sigma" in text

    def test_zero_profile_rejected(self, small_setup, cfg):
        grid, K = small_setup
        zero = ComplexField(grid, np.zeros(grid.shape, complex), POSITION)
        with pytest.raises(ValueError, match="nonzero"):
            breakdown_origin(zero, GAMMA, 2.3, [2.0, 4.0], 2.9, K, cfg)

    def test_schedule_and_homothety_amplitudes(self, origin_run):
        for row in origin_run.rows:
            assert row.eps == pytest.approx(row.sigma ** -2.3)
            assert row.eps_scaled == pytest.approx(
                row.eps * row.sigma ** (0.5 * (2.0 - GAMMA)))

    def test_main_term_scaling_is_exact(self, origin_run):
        # eps^3 sigma^(2-gamma) with eps = sigma^-j gives slope -3j + 2 - gamma
        fit = origin_run.fits["main-sigma"]
        assert abs(fit.slope - (-3.0 * 2.3 + 2.0 - GAMMA)) < 1e-10
        assert fit.residual < 1e-10

    def test_remainder_becomes_subdominant(self, origin_run):
        fractions = [r.remainder / r.main_term for r in origin_run.rows]
        assert all(f2 < f1 for f1, f2 in zip(fractions, fractions[1:]))
        assert fractions[-1] < 0.05

    def test_ratio_grows_with_sigma(self, origin_run):
        ratios = [r.ratio for r in origin_run.rows]
        assert all(r > 0.0 for r in ratios)
        assert all(r2 > r1 for r1, r2 in zip(ratios, ratios[1:]))

    def test_step_slopes_recorded(self, origin_run):
        assert math.isnan(origin_run.rows[0].step_slope)
        assert all(math.isfinite(r.step_slope) for r in origin_run.rows[1:])

    def test_csv_and_json_outputs(self, origin_run, tmp_path):
        csv_path = origin_run.write_csv(tmp_path)
        json_path = origin_run.write_json(tmp_path)
        assert csv_path.name == "origin-breakdown_gamma1.5_j2.3_s2.9_n64_L12.csv"
        header, *lines = csv_path.read_text().strip().split("\n")
        assert header.startswith("eps,sigma,")
        assert "ratio" in header.split(",")
        assert len(lines) == 3
        payload = json.loads(json_path.read_text())
        assert payload["gamma"] == GAMMA
        assert payload["j"] == 2.3
        assert payload["grid"] == {"n": 64, "L": 12.0}
        assert "main-sigma" in payload["fits"]
        assert len(payload["rows"]) == 3
        assert len(payload["ledgers"]) == 3
        assert payload["rows"][0]["step_slope"] is None   # NaN encodes as null

    def test_deterministic_rerun(self, origin_run, small_setup, cfg):
        grid, K = small_setup
        v = gaussian(grid, width=1.0)
        again = breakdown_origin(v, GAMMA, 2.3, [2.0, 3.0, 4.0], 2.9, K, cfg)
        assert [r.ratio for r in again.rows] == [r.ratio for r in origin_run.rows]


# ---------------------------------------------------------------------------
# off-origin breakdown
# ---------------------------------------------------------------------------

class TestOffOriginBreakdown:
    def test_threshold_arithmetic(self):
        assert (4.0 + 4.0 * GAMMA) / (2.0 + GAMMA) == pytest.approx(20.0 / 7.0)

    def test_s_and_j_thresholds_enforced(self, wide_setup, cfg):
        grid, K = wide_setup
        v = gaussian(grid, width=1.0)
        u0 = gaussian(grid, width=1.5, amp=0.1)
        with pytest.raises(ValueError, match=r"s must exceed \(4\+4\*gamma\)"):
            breakdown_off_origin(u0, v, GAMMA, 3.6, [1.5, 2.0], 2.8, K, cfg,
                                 eps=0.05, radius=1.8)
        with pytest.raises(ValueError, match=r"j must exceed 2\+gamma"):
            breakdown_off_origin(u0, v, GAMMA, 3.4, [1.5, 2.0], 2.9, K, cfg,
                                 eps=0.05, radius=1.8)

    def test_background_radius_gate(self, wide_setup, cfg):
        grid, K = wide_setup
        v = gaussian(grid, width=1.0)
        big = gaussian(grid, width=1.5, amp=2.0)
        with pytest.raises(ValueError, match="small-data radius"):
            breakdown_off_origin(big, v, GAMMA, 3.6, [1.5, 2.0], 2.9, K, cfg,
                                 eps=0.05, radius=1.8)

    def test_schedule_violations_collected(self, wide_setup, cfg):
        grid, K = wide_setup
        v = gaussian(grid, width=1.0)
        u0 = gaussian(grid, width=1.5, amp=0.1)
        with pytest.raises(ValueError) as err:
            breakdown_off_origin(u0, v, GAMMA, 3.6, [2.5], 2.9, K, cfg,
                                 eps=0.45, radius=1.8)
        text = str(err.value)
        assert "eps*sigma" in text
        assert "at least two sigma" in text
        assert "too large for the box" in text

    def test_resonant_part_dominates_and_grows(self, off_run):
        for row in off_run.rows:
            assert row.resonant > row.mixed + row.background
        assert off_run.rows[1].dominance > off_run.rows[0].dominance

    def test_third_order_splits_into_parts(self, off_run):
        # the three parts reassemble the full coefficient up to cross terms
        for row in off_run.rows:
            parts_sum = row.resonant + row.mixed + row.background
            assert row.w3_plus <= parts_sum * (1.0 + 1e-6)
            assert row.w3_plus > 0.5 * row.resonant

    def test_frozen_eps_schedule(self, off_run):
        assert off_run.epsilons == (0.05, 0.05)
        assert math.isnan(off_run.j)
        assert off_run.stem().startswith("off-origin-breakdown_gamma1.5_jna")

    def test_scatter_ratio_tabulated(self, off_run):
        for row in off_run.rows:
            assert math.isfinite(row.scatter_ratio)
            assert row.scatter_ratio > 0.0

    def test_free_flow_onset_time_recorded(self, off_run, cfg):
        for row in off_run.rows:
            assert 0.0 <= row.tau <= cfg.t_span[1]

    def test_ledgers_match_scaled_data(self, off_run, wide_setup):
        grid, _ = wide_setup
        v = gaussian(grid, width=1.0)
        expected = weighted_norms(make_scaled(v, 0.05, 1.5)).values["Sigma"]
        assert off_run.ledgers[0].values["Sigma"] == pytest.approx(expected)

    def test_zero_background_reduces_to_origin(self, wide_setup, cfg):
        grid, K = wide_setup
        v = gaussian(grid, width=1.0)
        zero = ComplexField(grid, np.zeros(grid.shape, complex), POSITION)
        run = breakdown_off_origin(zero, v, GAMMA, 3.6, [1.5, 2.0], 2.9, K,
                                   cfg, eps=0.05, radius=1.8)
        for row in run.rows:
            assert row.mixed == 0.0
            assert row.background == 0.0
            assert math.isinf(row.dominance)
            # with no background the coefficient IS its resonant part
            assert row.w3_plus == pytest.approx(row.resonant, rel=1e-12)

    def test_resonant_sigma_law_with_matched_horizons(self, wide_setup, cfg):
        grid, K = wide_setup
        v = gaussian(grid, width=1.0)
        zero = ComplexField(grid, np.zeros(grid.shape, complex), POSITION)
        run = breakdown_off_origin(zero, v, GAMMA, 3.6, [1.5, 2.0], 2.9, K,
                                   cfg, eps=0.05, radius=1.8,
                                   horizon_scale=1.0)
        r1, r2 = run.rows
        slope = math.log(r2.resonant / r1.resonant) / math.log(r2.sigma / r1.sigma)
        assert abs(slope - (2.0 - GAMMA)) < 0.05

    def test_horizon_scale_validation(self, wide_setup, cfg):
        grid, K = wide_setup
        v = gaussian(grid, width=1.0)
        u0 = gaussian(grid, width=1.5, amp=0.1)
        with pytest.raises(ValueError, match="horizon_scale"):
            breakdown_off_origin(u0, v, GAMMA, 3.6, [1.5, 2.0], 2.9, K, cfg,
                                 eps=0.05, radius=1.8, horizon_scale=-1.0)
