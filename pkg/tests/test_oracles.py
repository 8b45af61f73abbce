"""
Tests for the independent oracles: Monte Carlo, Fourier pricing and limit fits.
"""

from __future__ import annotations

import math

import numpy as np
import pytest
from lsvx.errors import ConfigError, DomainError, UnsupportedModelError
from lsvx.generators import SVModel
from lsvx.oracles import (
    CharExponent,
    MCConfig,
    MCEstimate,
    Scheme,
    coefficient_fit,
    convergence_slope,
    estimate,
    fourier_call,
    fourier_density,
    fourier_put,
    mc_call,
    mc_martingale,
    merton_series_call,
    resolve_scheme,
    simulate_z,
    small_jump_cf,
    tail_bound_check,
)

# ---------------------------------------------------------------------------
# Characteristic exponents and Fourier pricing
# ---------------------------------------------------------------------------


class TestCharExponent:
    @pytest.mark.parametrize("name", ["kou", "merton", "cgmy"])
    def test_martingale_drift(self, request, name):
        density = request.getfixturevalue(name)
        char = CharExponent.from_density(density, sigma0=0.2)
        assert abs(complex(char.cumulant(1.0))) < 1e-10
        assert abs(complex(char.psi(0.0))) < 1e-14

    def test_outside_strip(self, kou):
        char = CharExponent.from_density(kou)
        with pytest.raises(DomainError, match="analyticity strip"):
            char.cumulant(6.0)

    def test_negative_sigma(self, kou):
        with pytest.raises(ConfigError, match="sigma0 must be >= 0"):
            CharExponent.from_density(kou, sigma0=-0.1)

    def test_atom_only_for_pure_jump_finite_activity(self, kou, cgmy):
        assert CharExponent.from_density(kou).atom is not None
        assert CharExponent.from_density(kou, sigma0=0.2).atom is None
        assert CharExponent.from_density(cgmy).atom is None


class TestFourier:
    @pytest.mark.parametrize("sigma0", [0.0, 0.2])
    def test_call_matches_merton_series(self, merton, sigma0):
        char = CharExponent.from_density(merton, sigma0=sigma0)
        for z in (-0.1, 0.1):
            price = fourier_call(char, z, 0.25).price
            expected = merton_series_call(1.0, -0.1, 0.15, sigma0, z, 0.25)
            assert price == pytest.approx(expected, rel=1e-7, abs=1e-12)

    def test_put_call_parity(self, kou):
        char = CharExponent.from_density(kou, sigma0=0.2)
        z, t = 0.1, 0.1
        call = fourier_call(char, z, t).price
        put = fourier_put(char, z, t).price
        assert call - put == pytest.approx(math.expm1(z), abs=1e-10)

    def test_density_small_time(self, cgmy):
        char = CharExponent.from_density(cgmy)
        t = 0.005
        value = fourier_density(char, 0.5, t).price
        assert value / t == pytest.approx(cgmy.scalar(0.5), rel=0.1)

    def test_guards(self, kou):
        char = CharExponent.from_density(kou, sigma0=0.2)
        with pytest.raises(DomainError, match="t > 0"):
            fourier_call(char, -0.1, 0.0)
        with pytest.raises(DomainError, match="damping must be > 0"):
            fourier_call(char, -0.1, 0.1, damping=-0.5)
        with pytest.raises(DomainError, match="put damping must be < -1"):
            fourier_put(char, 0.1, 0.1, damping=0.5)
        with pytest.raises(DomainError, match="outside the analyticity strip"):
            fourier_call(char, -0.1, 0.1, damping=5.0)
        with pytest.raises(DomainError, match="t > 0"):
            fourier_density(char, 0.1, 0.0)

    def test_small_jump_cf(self, kou_tail_model):
        assert small_jump_cf(kou_tail_model, 0.0, 1.0) == pytest.approx(1.0)
        assert abs(small_jump_cf(kou_tail_model, 3.0, 0.5)) <= 1.0


# ---------------------------------------------------------------------------
# Monte Carlo
# ---------------------------------------------------------------------------


class TestMCConfig:
    def test_guards(self):
        with pytest.raises(ConfigError, match="paths must be >= 1"):
            MCConfig(paths=0)
        with pytest.raises(ConfigError, match="workers must be >= 1"):
            MCConfig(workers=0)

    def test_steps(self):
        assert MCConfig().n_steps(0.01) == 200
        assert MCConfig().n_steps(0.0001) == 50
        assert MCConfig(steps_per_unit=1000).n_steps(0.005) == 5


class TestEstimate:
    def test_antithetic_pairs_are_averaged(self):
        est = estimate(np.array([1.0, 3.0, 5.0, 7.0]), MCConfig(antithetic=True))
        assert est.mean == pytest.approx(4.0)
        assert est.stderr == pytest.approx(2.0)
        assert est.n == 4

    def test_within(self):
        est = MCEstimate(mean=1.0, stderr=0.1, n=100, seed=0)
        assert est.within(1.25)
        assert not est.within(1.35)


class TestSimulation:
    def test_deterministic_by_seed(self, kou_tail_model, heston):
        cfg = MCConfig(paths=2000, seed=11, shard_size=512)
        a = simulate_z(kou_tail_model, heston, 0.01, cfg)
        b = simulate_z(kou_tail_model, heston, 0.01, cfg)
        np.testing.assert_array_equal(a, b)
        assert a.size == 2000
        c = simulate_z(kou_tail_model, heston, 0.01, MCConfig(paths=2000, seed=12, shard_size=512))
        assert not np.array_equal(a, c)

    def test_worker_count_does_not_change_samples(self, kou_tail_model):
        sv = SVModel.constant(0.2)
        one = simulate_z(kou_tail_model, sv, 0.05, MCConfig(paths=4096, shard_size=512))
        many = simulate_z(kou_tail_model, sv, 0.05, MCConfig(paths=4096, shard_size=512, workers=3))
        np.testing.assert_array_equal(one, many)

    def test_antithetic_diffusion_pairs(self, kou_tail_model):
        cfg = MCConfig(paths=1000, include_jumps=False)
        samples = simulate_z(kou_tail_model, SVModel.constant(0.2), 0.5, cfg)
        np.testing.assert_allclose(samples[0::2] + samples[1::2], -0.04 * 0.5, atol=1e-12)

    def test_martingale(self, kou_tail_model):
        mc = MCConfig(paths=40_000, seed=3)
        est = mc_martingale(kou_tail_model, SVModel.constant(0.2), 0.1, mc)
        assert est.within(1.0, n_se=4.0)

    def test_control_variate_identity(self, kou_call_model):
        sv = SVModel.constant(0.2)
        cfg = MCConfig(paths=4000, seed=5)
        z, t = 0.3, 0.05
        plain = mc_call(kou_call_model, sv, z, t, cfg)
        controlled = mc_call(kou_call_model, sv, z, t, cfg, control=True)
        drift = mc_martingale(kou_call_model, sv, t, cfg)
        assert plain.mean - controlled.mean == pytest.approx(
            math.exp(z) * (drift.mean - 1.0), rel=1e-9, abs=1e-13
        )
        assert controlled.stderr < plain.stderr

    def test_guards(self, kou_tail_model):
        sv = SVModel.constant(0.2)
        with pytest.raises(ConfigError, match="must be > 0"):
            simulate_z(kou_tail_model, sv, 0.0, MCConfig(paths=10))
        with pytest.raises(ConfigError, match="0 < delta < eps"):
            simulate_z(kou_tail_model, sv, 0.1, MCConfig(paths=10, delta=0.5))
        custom = SVModel.custom(
            sigma=lambda y, j: np.full(np.shape(y), 0.2 if j == 0 else 0.0),
            alpha=lambda y, j: np.zeros_like(y),
            gamma=lambda y, j: np.zeros_like(y),
            y0=0.0,
        )
        with pytest.raises(UnsupportedModelError, match="sigma bound"):
            simulate_z(kou_tail_model, custom, 0.1, MCConfig(paths=10))

    def test_scheme_defaults_follow_sv_kind(self, heston):
        exp_ou = SVModel.exp_ou(2.0, math.log(0.2), 0.3, math.log(0.25))
        assert resolve_scheme(heston, None) is Scheme.FULL_TRUNCATION_EULER
        assert resolve_scheme(exp_ou, None) is Scheme.EXACT_OU
        assert resolve_scheme(exp_ou, Scheme.FULL_TRUNCATION_EULER) is Scheme.FULL_TRUNCATION_EULER

    def test_exact_ou_needs_exp_ou_model(self, kou_tail_model, heston):
        with pytest.raises(ConfigError, match="exp_ou"):
            resolve_scheme(heston, Scheme.EXACT_OU)
        with pytest.raises(ConfigError, match="exp_ou"):
            simulate_z(kou_tail_model, heston, 0.01, MCConfig(paths=10, scheme=Scheme.EXACT_OU))
        constant = SVModel.constant(0.2)
        with pytest.raises(ConfigError, match="exp_ou"):
            simulate_z(kou_tail_model, constant, 0.01, MCConfig(paths=10, scheme=Scheme.EXACT_OU))

    def test_scheme_selects_volatility_step(self, kou_tail_model):
        exp_ou = SVModel.exp_ou(2.0, math.log(0.2), 0.3, math.log(0.25))

        def run(scheme):
            cfg = MCConfig(paths=2000, seed=4, include_jumps=False, scheme=scheme)
            return simulate_z(kou_tail_model, exp_ou, 0.05, cfg)

        default = run(None)
        np.testing.assert_array_equal(default, run(Scheme.EXACT_OU))
        euler = run(Scheme.FULL_TRUNCATION_EULER)
        assert not np.array_equal(default, euler)
        assert euler.mean() == pytest.approx(default.mean(), abs=0.01)

    def test_tail_bound_is_respected(self, kou_tail_model):
        report = tail_bound_check(kou_tail_model, 0.3, 0.1, MCConfig(paths=20_000, seed=2))
        assert 0.0 < report.bound <= 1.0
        assert report.holds


# ---------------------------------------------------------------------------
# Limit extraction
# ---------------------------------------------------------------------------


class TestCoefficientFit:
    def test_exact_polynomial(self):
        ts = np.geomspace(0.01, 0.1, 8)
        values = 2.0 * ts + 3.0 * ts**2 / 2 + 4.0 * ts**3 / 6
        fit = coefficient_fit(ts, values, 3)
        assert fit.values == pytest.approx((2.0, 3.0, 4.0), rel=1e-6)
        assert len(fit.errors) == 3

    def test_weighted(self):
        ts = np.geomspace(0.01, 0.1, 6)
        values = 0.5 * ts + 0.25 * ts**2
        fit = coefficient_fit(ts, values, 1, stderr=np.full(6, 1e-6))
        assert fit.values[0] == pytest.approx(0.5, rel=1e-8)

    def test_guards(self):
        with pytest.raises(ConfigError, match="1 <= n <= 3"):
            coefficient_fit([0.1] * 8, [0.0] * 8, 4)
        with pytest.raises(ConfigError, match="n \\+ 3 = 5"):
            coefficient_fit([0.1, 0.2, 0.3, 0.4], [0.0] * 4, 2)


class TestConvergenceSlope:
    def test_power_law(self):
        ts = np.geomspace(1e-3, 1e-1, 6)
        fit = convergence_slope(ts, 3.0 * ts**2.5)
        assert fit.slope == pytest.approx(2.5, abs=1e-10)
        assert fit.n_points == 6
        assert fit.halfwidth >= 0.0

    def test_guards(self):
        with pytest.raises(ConfigError, match="at least 4 points"):
            convergence_slope([0.1, 0.2, 0.3], [1.0, 2.0, 3.0])
        with pytest.raises(DomainError, match="positive residuals"):
            convergence_slope([0.1, 0.2, 0.3, 0.4], [1.0, 0.0, 3.0, 4.0])
