"""
Tests for expansion assembly: tails, calls, general payoffs, densities and the
SV correction terms.
"""

from __future__ import annotations

import math

import pytest
from lsvx.errors import ConfigError, ContractError, ModelConditionError, UnsupportedModelError
from lsvx.expansions import (
    EvaluationForm,
    Expansion,
    ExpansionKind,
    PayoffKind,
    PayoffSpec,
    call_expansion_itm,
    call_expansion_otm,
    call_leading_coefficient,
    default_epsilon,
    density_expansion,
    epsilon_bound,
    evaluate,
    exp_levy_expansion,
    expand_payoff,
    general_payoff_expansion,
    leading_call_price,
    measure_transform,
    normalize,
    payoff_integral,
    put_leading_coefficient,
    require_epsilon,
    sv_correction_terms,
    tail_expansion,
)
from lsvx.generators import DerivativeOracle, SVModel, sv_coefficients
from lsvx.levy_kernel import DensityKind, LevyDensity, levy_tail_mass, martingale_drift, split_levy
from scipy import integrate

KOU_TAIL = 0.6 * math.exp(-2.5)


def _expansion(prefactored, lam, itm_base=0.0):
    return Expansion(
        kind=ExpansionKind.TAIL,
        z=0.5,
        order=len(prefactored),
        epsilon=0.05,
        lambda_eps=lam,
        prefactored=tuple(prefactored),
        normalized=normalize(tuple(prefactored), lam),
        itm_base=itm_base,
    )


# ---------------------------------------------------------------------------
# Normalization and evaluation
# ---------------------------------------------------------------------------


class TestNormalize:
    def test_binomial_recombination(self):
        assert normalize((1.0, 2.0, 3.0), 0.5) == pytest.approx((1.0, 1.0, 0.75))

    def test_zero_intensity_is_identity(self):
        assert normalize((0.3, -0.2), 0.0) == pytest.approx((0.3, -0.2))

    def test_forms_agree_to_truncation_order(self):
        exp = _expansion((1.0, 2.0, 3.0), 0.5)
        t = 1e-2
        pre = evaluate(exp, t)
        norm = evaluate(exp, t, EvaluationForm.NORMALIZED)
        assert abs(pre - norm) < 1e-7

    def test_prefactor_sign(self):
        exp = _expansion((1.0,), 2.0)
        assert evaluate(exp, 0.1) == pytest.approx(0.1 * math.exp(-0.2))
        assert evaluate(exp, 0.1, prefactor_sign=1.0) == pytest.approx(0.1 * math.exp(0.2))

    def test_itm_base_is_added(self):
        exp = _expansion((1.0,), 0.0, itm_base=math.expm1(0.5))
        assert evaluate(exp, 0.0) == pytest.approx(math.expm1(0.5))
        assert evaluate(exp, 0.0, EvaluationForm.NORMALIZED) == pytest.approx(math.expm1(0.5))

    def test_negative_time_rejected(self):
        with pytest.raises(ConfigError, match="must be >= 0"):
            evaluate(_expansion((1.0,), 0.0), -0.1)

    def test_coefficient_accessor(self):
        exp = _expansion((1.0, 2.0), 0.5)
        assert exp.coefficient(2, EvaluationForm.PREFACTORED) == 2.0
        assert exp.coefficient(2) == pytest.approx(1.0)


# ---------------------------------------------------------------------------
# Truncation-level bounds
# ---------------------------------------------------------------------------


class TestEpsilonBounds:
    def test_bounds(self):
        assert epsilon_bound(ExpansionKind.TAIL, 0.5, 2) == pytest.approx(0.5 / 3)
        assert epsilon_bound(ExpansionKind.CALL_OTM, -0.5, 3) == pytest.approx(0.0625)
        assert epsilon_bound(ExpansionKind.CALL_ITM, 0.5, 1) == pytest.approx(0.125)
        assert epsilon_bound(ExpansionKind.TAIL, 4.0, 1) == 1.0

    def test_defaults(self):
        assert default_epsilon(ExpansionKind.TAIL, 0.5, 2) == pytest.approx(0.09)
        assert default_epsilon(ExpansionKind.CALL_OTM, -0.5, 3) == pytest.approx(0.05625)
        assert default_epsilon(ExpansionKind.DENSITY, 0.5, 2) == pytest.approx(0.5 / 6)

    def test_violation_quotes_inequality(self):
        with pytest.raises(ModelConditionError, match="requires 0 < ε < z₀/\\(n\\+1\\) ∧ 1"):
            require_epsilon(ExpansionKind.TAIL, 0.5, 2, 0.2)
        with pytest.raises(ModelConditionError, match="−z₀/\\(2\\(n\\+1\\)\\)"):
            require_epsilon(ExpansionKind.CALL_OTM, -0.5, 3, 0.07)

    def test_density_only_needs_eps_below_x(self):
        require_epsilon(ExpansionKind.DENSITY, 0.5, 4, 0.3)
        with pytest.raises(ModelConditionError, match="ε < \\|x\\|"):
            require_epsilon(ExpansionKind.DENSITY, 0.5, 1, 0.6)


# ---------------------------------------------------------------------------
# Tail expansions
# ---------------------------------------------------------------------------


class TestTailExpansion:
    def test_leading_coefficient(self, kou, kou_tail_model, heston):
        exp = tail_expansion(kou_tail_model, heston, None, 0.5, 1)
        assert exp.normalized[0] == pytest.approx(KOU_TAIL, rel=1e-6)
        assert exp.normalized[0] == pytest.approx(levy_tail_mass(kou, 0.5), rel=1e-6)
        assert exp.prefactored[0] == pytest.approx(exp.normalized[0])

    def test_small_time_value(self, kou_tail_model, heston):
        exp = tail_expansion(kou_tail_model, heston, None, 0.5, 1)
        expected = KOU_TAIL * 0.01 * math.exp(-kou_tail_model.lambda_eps * 0.01)
        assert evaluate(exp, 0.01) == pytest.approx(expected, rel=1e-6)

    def test_requires_positive_threshold(self, kou_tail_model, heston):
        with pytest.raises(ModelConditionError, match="z > 0"):
            tail_expansion(kou_tail_model, heston, None, -0.5, 1)

    def test_eps_too_large_for_threshold(self, kou_tail_model, heston):
        with pytest.raises(ModelConditionError, match="requires 0 < ε < z₀/\\(n\\+1\\)"):
            tail_expansion(kou_tail_model, heston, None, 0.2, 2)

    def test_order_checks(self, kou_tail_model, heston):
        with pytest.raises(ConfigError, match="n = 0"):
            tail_expansion(kou_tail_model, heston, None, 0.5, 0)
        with pytest.raises(ContractError, match="k_max"):
            tail_expansion(kou_tail_model, heston, None, 0.5, 5)

    def test_short_table_rejected(self, kou_tail_model, heston):
        table = sv_coefficients(heston, 1)
        with pytest.raises(ContractError, match="table has 1"):
            tail_expansion(kou_tail_model, heston, table, 0.5, 3)

    def test_brownian_part_rejected(self, kou_tail_model, heston):
        with pytest.raises(ConfigError, match="Brownian part"):
            tail_expansion(kou_tail_model.with_diffusion(0.2), heston, None, 0.5, 1)

    @pytest.mark.slow
    def test_normalized_coefficients_do_not_depend_on_eps(self, kou, kou_tail_model, heston):
        fine = split_levy(kou, kou_tail_model.epsilon / 2)
        a = tail_expansion(kou_tail_model, heston, None, 0.5, 2)
        b = tail_expansion(fine, heston, None, 0.5, 2)
        for j in range(2):
            assert a.normalized[j] == pytest.approx(b.normalized[j], rel=1e-4)


# ---------------------------------------------------------------------------
# Call expansions
# ---------------------------------------------------------------------------


class TestCallExpansions:
    def test_otm_leading_coefficient(self, kou, kou_call_model, heston):
        exp = call_expansion_otm(kou_call_model, heston, None, -0.5, 1)
        assert exp.kind is ExpansionKind.CALL_OTM
        assert exp.normalized[0] == pytest.approx(call_leading_coefficient(kou, -0.5), rel=1e-6)

    def test_one_sided_kou_closed_form(self):
        one_sided = LevyDensity.kou(1.0, 1.0, 3.0, 10.0)
        assert call_leading_coefficient(one_sided, -0.5) == pytest.approx(
            0.5 * math.exp(-1.5), rel=1e-10
        )
        assert leading_call_price(one_sided, -0.5, 0.01) == pytest.approx(
            0.005 * math.exp(-1.5), rel=1e-10
        )

    def test_payoff_integral(self):
        one_sided = LevyDensity.kou(1.0, 1.0, 3.0, 10.0)
        assert payoff_integral(one_sided, 0.5) == pytest.approx(0.5 * math.exp(-1.0), rel=1e-10)

    def test_sides_are_checked(self, kou_call_model, heston):
        with pytest.raises(ModelConditionError, match="at-the-money"):
            call_expansion_otm(kou_call_model, heston, None, 0.0, 1)
        with pytest.raises(ModelConditionError, match="z < 0"):
            call_expansion_otm(kou_call_model, heston, None, 0.5, 1)
        with pytest.raises(ModelConditionError, match="z > 0"):
            call_expansion_itm(kou_call_model, heston, None, -0.5, 1)
        with pytest.raises(ConfigError, match="z < 0"):
            call_leading_coefficient(LevyDensity.kou(1.0, 0.6, 5.0, 10.0), 0.5)

    def test_itm_put_leg(self, kou, kou_call_model, heston):
        exp = call_expansion_itm(kou_call_model, heston, None, 0.5, 1)
        assert exp.itm_base == pytest.approx(math.expm1(0.5))
        assert exp.normalized[0] == pytest.approx(put_leading_coefficient(kou, 0.5), rel=1e-6)
        assert evaluate(exp, 0.0) == pytest.approx(math.expm1(0.5))

    def test_low_orders_ignore_volatility_dynamics(self, kou_call_model, heston):
        flat = SVModel.constant(heston.sigma0)
        a = call_expansion_otm(kou_call_model, heston, None, -0.5, 2)
        b = call_expansion_otm(kou_call_model, flat, None, -0.5, 2)
        assert a.normalized[0] == pytest.approx(b.normalized[0], rel=1e-10)
        assert a.normalized[1] == pytest.approx(b.normalized[1], rel=1e-10)

    @pytest.mark.slow
    def test_third_order_sv_term(self, kou, kou_call_model, heston):
        chi, theta, y0 = 2.0, 0.09, 0.04
        a = call_expansion_otm(kou_call_model, heston, None, -0.5, 3)
        b = call_expansion_otm(kou_call_model, SVModel.constant(0.2), None, -0.5, 3)
        term = 1.5 * chi * (theta - y0) * kou.scalar(0.5)
        assert a.normalized[2] - b.normalized[2] == pytest.approx(term, rel=1e-5)

    def test_exp_levy_leading_coefficient(self, kou, kou_call_model):
        model = kou_call_model.with_diffusion(0.2)
        exp = exp_levy_expansion(model, -0.5, 1)
        assert exp.normalized[0] == pytest.approx(call_leading_coefficient(kou, -0.5), rel=1e-6)
        itm = exp_levy_expansion(model, 0.5, 1)
        assert itm.itm_base == pytest.approx(math.expm1(0.5))

    def test_exp_levy_rejects_atm(self, kou_call_model):
        with pytest.raises(ModelConditionError, match="at-the-money"):
            exp_levy_expansion(kou_call_model, 0.0, 1)


# ---------------------------------------------------------------------------
# General payoffs
# ---------------------------------------------------------------------------


class TestPayoffs:
    def test_spec_guards(self):
        with pytest.raises(ModelConditionError, match="at-the-money"):
            PayoffSpec(PayoffKind.CALL, 0.0)
        with pytest.raises(ConfigError, match="requires phi"):
            PayoffSpec(PayoffKind.SMOOTH_INDICATOR, 0.5)
        with pytest.raises(ContractError, match="requires z > 0"):
            PayoffSpec(PayoffKind.SMOOTH_INDICATOR, -0.5, DerivativeOracle.cosine())
        with pytest.raises(ModelConditionError, match="z > 0"):
            PayoffSpec(PayoffKind.INDICATOR, -0.5)
        PayoffSpec(PayoffKind.SMOOTH_INDICATOR, -0.5, DerivativeOracle.exponential(1.0))

    @pytest.mark.parametrize("n", [1, pytest.param(2, marks=pytest.mark.slow)])
    def test_constant_phi_reduces_to_indicator(self, kou_tail_model, heston, n):
        payoff = PayoffSpec(PayoffKind.SMOOTH_INDICATOR, 0.5, DerivativeOracle.constant(1.0))
        general = general_payoff_expansion(kou_tail_model, heston, None, payoff, n)
        tail = tail_expansion(kou_tail_model, heston, None, 0.5, n)
        assert general.kind is ExpansionKind.GENERAL_PAYOFF
        assert general.normalized == pytest.approx(tail.normalized, rel=1e-12)

    def test_cosine_leading_coefficient(self, kou, kou_tail_model, heston):
        payoff = PayoffSpec(PayoffKind.SMOOTH_INDICATOR, 0.5, DerivativeOracle.cosine())
        exp = general_payoff_expansion(kou_tail_model, heston, None, payoff, 1)
        expected, _ = integrate.quad(
            lambda u: math.cos(u) * kou.scalar(u), 0.5, math.inf, epsabs=0.0, epsrel=1e-12
        )
        assert exp.normalized[0] == pytest.approx(expected, rel=1e-6)

    def test_dispatch(self, kou_tail_model, kou_call_model, heston):
        tail = expand_payoff(kou_tail_model, heston, None, PayoffSpec(PayoffKind.INDICATOR, 0.5), 1)
        assert tail.kind is ExpansionKind.TAIL
        call = expand_payoff(kou_call_model, heston, None, PayoffSpec(PayoffKind.CALL, -0.5), 1)
        assert call.kind is ExpansionKind.CALL_OTM
        itm = expand_payoff(kou_call_model, heston, None, PayoffSpec(PayoffKind.CALL, 0.5), 1)
        assert itm.kind is ExpansionKind.CALL_ITM

    def test_general_requires_smooth_indicator(self, kou_tail_model, heston):
        with pytest.raises(ContractError, match="smooth_indicator"):
            general_payoff_expansion(
                kou_tail_model, heston, None, PayoffSpec(PayoffKind.INDICATOR, 0.5), 1
            )


# ---------------------------------------------------------------------------
# Densities
# ---------------------------------------------------------------------------


class TestDensityExpansion:
    def test_leading_coefficient_is_levy_density(self, cgmy, cgmy_density_model):
        exp = density_expansion(cgmy_density_model, 0.5, 1)
        assert exp.kind is ExpansionKind.DENSITY
        assert exp.normalized[0] == pytest.approx(cgmy.scalar(0.5), rel=1e-6)

    def test_finite_activity_rejected(self, merton_call_model):
        with pytest.raises(ModelConditionError, match="finite-activity"):
            density_expansion(merton_call_model, 0.5, 1)

    def test_origin_rejected(self, cgmy_density_model):
        with pytest.raises(ModelConditionError, match="x != 0"):
            density_expansion(cgmy_density_model, 0.0, 1)

    def test_eps_must_stay_below_x(self, cgmy_density_model):
        with pytest.raises(ModelConditionError, match="ε < \\|x\\|"):
            density_expansion(cgmy_density_model, 0.05, 1)


# ---------------------------------------------------------------------------
# Measure transform and SV corrections
# ---------------------------------------------------------------------------


class TestMeasureTransform:
    def test_drifts(self, kou, kou_call_model):
        transform = measure_transform(kou_call_model, 0.0)
        assert transform.b_tilde == pytest.approx(martingale_drift(kou))
        assert transform.nu_star.kind is DensityKind.TILTED
        shifted = measure_transform(kou_call_model, 0.2)
        assert shifted.b_tilde == pytest.approx(transform.b_tilde - 0.02)
        assert shifted.b_star == pytest.approx(transform.b_star + 0.02)

    def test_negative_sigma_rejected(self, kou_call_model):
        with pytest.raises(ConfigError, match="sigma0 must be >= 0"):
            measure_transform(kou_call_model, -0.1)


class TestSVCorrectionTerms:
    def test_constant_volatility_unsupported(self, kou_call_model):
        with pytest.raises(UnsupportedModelError, match="Heston and exp-OU"):
            sv_correction_terms(kou_call_model, SVModel.constant(0.2), -0.5)

    def test_requires_otm(self, kou_call_model, heston):
        with pytest.raises(ModelConditionError, match="z < 0"):
            sv_correction_terms(kou_call_model, heston, 0.5)

    @pytest.mark.slow
    def test_decomposition(self, kou_call_model, heston):
        report = sv_correction_terms(kou_call_model, heston, -0.5, with_parity=False)
        assert report.kappa == 0.5
        assert report.residual(2) == pytest.approx(0.0, abs=1e-8)
        spot = report.term("spot_vol")
        assert spot.price_value == pytest.approx(spot.value * math.exp(0.5))
        with pytest.raises(KeyError):
            report.term("missing")
