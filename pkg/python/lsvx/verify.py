"""Acceptance suite: each criterion checks an expansion against an independent oracle.

Criteria never raise. A library error inside a check becomes a failed
result whose ``error`` field carries the message, so one broken oracle does
not hide the others.
"""

from __future__ import annotations

import json
import logging
import math
import time
from abc import ABC, abstractmethod
from collections.abc import Callable, Sequence
from dataclasses import asdict, dataclass, field, replace

from lsvx.errors import LsvxError
from lsvx.expansions import (
    EvaluationForm,
    Expansion,
    ExpansionKind,
    call_expansion_itm,
    call_expansion_otm,
    closed_form_call_b2,
    closed_form_tail_a2,
    default_epsilon,
    density_expansion,
    evaluate,
    exp_levy_expansion,
    tail_expansion,
)
from lsvx.generators import DerivativeOracle, SVModel, iterated_generator_at, sv_coefficients
from lsvx.levy_kernel import LevyDensity, SplitLevyModel, levy_tail_mass, split_levy
from lsvx.oracles import (
    CharExponent,
    MCConfig,
    convergence_slope,
    fourier_call,
    fourier_density,
    mc_call,
    mc_tail,
    small_jump_cf,
)
from lsvx.smile import implied_vol, iv_first_order, iv_second_order

logger = logging.getLogger(__name__)


def kou_reference() -> LevyDensity:
    return LevyDensity.kou(1.0, 0.6, 5.0, 10.0)


def merton_reference() -> LevyDensity:
    return LevyDensity.merton(1.0, -0.1, 0.15)


def cgmy_reference() -> LevyDensity:
    return LevyDensity.cgmy(0.5, 3.0, 4.0, 0.8)


def heston_reference() -> SVModel:
    return SVModel.heston(chi=2.0, theta=0.09, v=0.3, y0=0.04)


# ---------------------------------------------------------------------------
# Results
# ---------------------------------------------------------------------------


@dataclass
class CriterionResult:
    """Outcome of one acceptance criterion."""

    criterion_id: int
    name: str
    passed: bool
    measured: float | None = None
    tolerance: str = ""
    details: dict[str, float] = field(default_factory=dict)
    error: str = ""
    duration_seconds: float = 0.0

    @property
    def failed(self) -> bool:
        return not self.passed


@dataclass
class VerifyReport:
    """Aggregate report over the selected criteria."""

    results: list[CriterionResult] = field(default_factory=list)
    total_duration: float = 0.0

    @property
    def all_passed(self) -> bool:
        return all(r.passed for r in self.results)

    @property
    def passed_count(self) -> int:
        return sum(1 for r in self.results if r.passed)

    @property
    def failed_count(self) -> int:
        return sum(1 for r in self.results if not r.passed)

    def summary(self) -> str:
        lines = [
            f"Verify Report: {self.passed_count}/{len(self.results)} passed "
            f"({self.total_duration:.2f}s)",
        ]
        for r in self.results:
            status = "PASS" if r.passed else "FAIL"
            measured = "n/a" if r.measured is None else f"{r.measured:.6g}"
            lines.append(
                f"  [{status}] {r.criterion_id:>2} {r.name}: {measured} ({r.tolerance}) "
                f"({r.duration_seconds:.2f}s)"
            )
            if r.error:
                lines.append(f"         {r.error}")
        return "\n".join(lines)

    def to_json(self) -> str:
        return json.dumps(
            {
                "all_passed": self.all_passed,
                "passed": self.passed_count,
                "failed": self.failed_count,
                "total_duration": self.total_duration,
                "results": [asdict(r) for r in self.results],
            },
            indent=2,
        )


# ---------------------------------------------------------------------------
# Context
# ---------------------------------------------------------------------------


@dataclass
class VerifyContext:
    """Shared settings and a model cache for one verification run.

    Attributes:
        mc: Monte Carlo settings (path count, seed, workers).
        corrupt: Relative perturbation applied to every computed coefficient;
            exercises the failure path of the suite.
        cache_dir: Kernel cache directory passed to ``split_levy``.
    """

    mc: MCConfig = field(default_factory=MCConfig)
    corrupt: float | None = None
    cache_dir: str | None = None
    _models: dict[tuple[str, float, float], SplitLevyModel] = field(
        default_factory=dict, repr=False
    )

    def model(self, density: LevyDensity, epsilon: float, sigma0: float = 0.0) -> SplitLevyModel:
        key = (density.cache_key or repr(density), epsilon, sigma0)
        if key not in self._models:
            base = split_levy(density, epsilon, cache_dir=self.cache_dir)
            self._models[key] = base.with_diffusion(sigma0) if sigma0 else base
        return self._models[key]

    def perturb(self, value: float) -> float:
        return value if self.corrupt is None else value * (1.0 + self.corrupt)

    def tamper(self, expansion: Expansion) -> Expansion:
        if self.corrupt is None:
            return expansion
        scale = 1.0 + self.corrupt
        return replace(
            expansion,
            prefactored=tuple(c * scale for c in expansion.prefactored),
            normalized=tuple(c * scale for c in expansion.normalized),
        )


Measurement = tuple[float, bool, str, dict[str, float]]


def _rel(a: float, b: float) -> float:
    return abs(a - b) / max(abs(b), 1e-300)


def _ladder(base: float, count: int, start: int = 0) -> list[float]:
    return [base * 2.0 ** (-i) for i in range(start, start + count)]


# ---------------------------------------------------------------------------
# Criteria
# ---------------------------------------------------------------------------


class Criterion(ABC):
    """One acceptance check."""

    criterion_id: int = 0
    name: str = ""

    @abstractmethod
    def measure(self, ctx: VerifyContext) -> Measurement:
        """Return (measured value, passed, tolerance text, details)."""
        ...

    def run(self, ctx: VerifyContext) -> CriterionResult:
        start = time.monotonic()
        try:
            measured, passed, tolerance, details = self.measure(ctx)
            error = ""
        except LsvxError as exc:
            logger.warning("criterion %d (%s) errored: %s", self.criterion_id, self.name, exc)
            measured, passed, tolerance, details, error = None, False, "", {}, str(exc)
        result = CriterionResult(
            criterion_id=self.criterion_id,
            name=self.name,
            passed=passed,
            measured=measured,
            tolerance=tolerance,
            details=details,
            error=error,
            duration_seconds=time.monotonic() - start,
        )
        logger.info(
            "criterion %d %s: %s", self.criterion_id, self.name, "pass" if passed else "fail"
        )
        return result


class LeadingTail(Criterion):
    criterion_id = 1
    name = "leading-order tail"

    def measure(self, ctx: VerifyContext) -> Measurement:
        density = kou_reference()
        z, t = 0.5, 0.005
        model = ctx.model(density, default_epsilon(ExpansionKind.TAIL, z, 1))
        exp = ctx.tamper(tail_expansion(model, heston_reference(), None, z, 1))
        reference = exp.normalized[0]
        est = mc_tail(model, heston_reference(), z, t, ctx.mc)
        gap = abs(est.mean / t - reference)
        passed = gap <= 3.0 * est.stderr / t and gap <= 0.05 * reference
        details = {
            "mc_over_t": est.mean / t,
            "se_over_t": est.stderr / t,
            "c1": reference,
            "nu_tail": levy_tail_mass(density, z),
        }
        return gap, passed, "<= 3 SE and <= 5% relative", details


def _slope(ts: Sequence[float], residuals: Sequence[float]) -> float:
    return convergence_slope(ts, residuals).slope


class ExpLevyRemainder(Criterion):
    criterion_id = 2
    name = "exp-Levy remainder order"

    def measure(self, ctx: VerifyContext) -> Measurement:
        z, sigma0 = -0.5, 0.2
        ts = _ladder(0.1, 6)
        char = CharExponent.from_density(merton_reference(), sigma0=sigma0)
        prices = [fourier_call(char, z, t).price for t in ts]
        slopes = {}
        for n, floor in ((1, 1.7), (2, 2.7)):
            eps = default_epsilon(ExpansionKind.CALL_OTM, z, n)
            model = ctx.model(merton_reference(), eps, sigma0)
            exp = ctx.tamper(exp_levy_expansion(model, z, n))
            residuals = [abs(p - evaluate(exp, t)) for p, t in zip(prices, ts)]
            slopes[f"slope_n{n}"] = _slope(ts, residuals)
            slopes[f"floor_n{n}"] = floor
        passed = slopes["slope_n1"] >= 1.7 and slopes["slope_n2"] >= 2.7
        return slopes["slope_n2"], passed, "slope >= 1.7 (n=1), >= 2.7 (n=2)", slopes


class SVRemainder(Criterion):
    criterion_id = 3
    name = "SV+jumps remainder order"

    def measure(self, ctx: VerifyContext) -> Measurement:
        z, n = -0.5, 2
        sv = heston_reference()
        model = ctx.model(merton_reference(), default_epsilon(ExpansionKind.CALL_OTM, z, n))
        exp = ctx.tamper(call_expansion_otm(model, sv, None, z, n))
        kept_t, kept_r = [], []
        for t in _ladder(0.4, 6):
            est = mc_call(model, sv, z, t, ctx.mc)
            resid = abs(est.mean - evaluate(exp, t))
            if resid >= 3.0 * est.stderr:
                kept_t.append(t)
                kept_r.append(resid)
        if len(kept_t) < 4:
            return float("nan"), False, "slope >= 2.5", {"resolved_points": float(len(kept_t))}
        slope = _slope(kept_t, kept_r)
        return slope, slope >= 2.5, "slope >= 2.5", {"resolved_points": float(len(kept_t))}


class ClosedFormSecondOrder(Criterion):
    criterion_id = 4
    name = "second-order closed forms"

    def measure(self, ctx: VerifyContext) -> Measurement:
        sv = heston_reference()
        table = sv_coefficients(sv, 2)
        tail_model = ctx.model(merton_reference(), default_epsilon(ExpansionKind.TAIL, 0.5, 2))
        a2 = ctx.perturb(tail_expansion(tail_model, sv, table, 0.5, 2).prefactored[1])
        a2_closed = closed_form_tail_a2(tail_model, sv, 0.5)
        call_model = ctx.model(merton_reference(), default_epsilon(ExpansionKind.CALL_OTM, -0.5, 2))
        b2 = ctx.perturb(call_expansion_otm(call_model, sv, table, -0.5, 2).prefactored[1])
        b2_closed = closed_form_call_b2(call_model, sv, -0.5)
        worst = max(_rel(a2, a2_closed), _rel(b2, b2_closed))
        details = {"a2": a2, "a2_closed": a2_closed, "b2": b2, "b2_closed": b2_closed}
        return worst, worst <= 1e-6, "<= 1e-6 relative", details


class SVTable(Criterion):
    criterion_id = 5
    name = "SV coefficient table"

    def measure(self, ctx: VerifyContext) -> Measurement:
        chi, theta, v = 2.0, 0.09, 0.3
        y0 = 0.04
        heston = sv_coefficients(SVModel.heston(chi, theta, v, y0), 2)
        expected = {
            (1, 1): y0 / 2,
            (1, 2): chi * (theta - y0) / 2,
            (2, 2): y0 * y0 / 4,
        }
        worst = 0.0
        details: dict[str, float] = {}
        for (j, k), value in expected.items():
            got = ctx.perturb(heston.B(j, k))
            details[f"heston_B{j}{k}"] = got
            worst = max(worst, abs(got - value))
        details["heston_B22_alternative"] = y0 * y0 / 2
        ou_theta, ou_y0 = math.log(0.2), math.log(0.25)
        ou = sv_coefficients(SVModel.exp_ou(chi, ou_theta, v, ou_y0), 2)
        e2 = math.exp(2 * ou_y0)
        ou_expected = {
            (1, 1): e2 / 2,
            (2, 2): e2 * e2 / 4,
            (1, 2): e2 * (v * v + chi * (ou_theta - ou_y0)),
        }
        for (j, k), value in ou_expected.items():
            got = ctx.perturb(ou.B(j, k))
            details[f"exp_ou_B{j}{k}"] = got
            worst = max(worst, abs(got - value))
        return worst, worst <= 1e-10, "<= 1e-10 absolute", details


class EpsilonInvariance(Criterion):
    criterion_id = 6
    name = "eps-invariance of normalized coefficients"

    def measure(self, ctx: VerifyContext) -> Measurement:
        sv = heston_reference()
        eps = default_epsilon(ExpansionKind.TAIL, 0.5, 2)
        worst = 0.0
        details: dict[str, float] = {}
        coarse = ctx.tamper(tail_expansion(ctx.model(kou_reference(), eps), sv, None, 0.5, 2))
        fine = tail_expansion(ctx.model(kou_reference(), eps / 2), sv, None, 0.5, 2)
        for j in range(2):
            dev = _rel(coarse.normalized[j], fine.normalized[j])
            details[f"tail_c{j + 1}"] = dev
            worst = max(worst, dev)
        eps_d = default_epsilon(ExpansionKind.DENSITY, 0.5, 2)
        d_coarse = ctx.tamper(density_expansion(ctx.model(cgmy_reference(), eps_d), 0.5, 2))
        d_fine = density_expansion(ctx.model(cgmy_reference(), eps_d / 2), 0.5, 2)
        for j in range(2):
            dev = _rel(d_coarse.normalized[j], d_fine.normalized[j])
            details[f"density_a{j + 1}"] = dev
            worst = max(worst, dev)
        return worst, worst <= 1e-4, "<= 1e-4 relative", details


class InTheMoney(Criterion):
    criterion_id = 7
    name = "in-the-money route"

    def measure(self, ctx: VerifyContext) -> Measurement:
        z, t, n = 0.5, 0.01, 2
        sv = heston_reference()
        density = LevyDensity.cgmy(1.0, 3.0, 4.0, 0.8)
        model = ctx.model(density, default_epsilon(ExpansionKind.CALL_ITM, z, n))
        exp = ctx.tamper(call_expansion_itm(model, sv, None, z, n))
        est = mc_call(model, sv, z, t, ctx.mc, control=True)
        right = evaluate(exp, t)
        wrong = evaluate(exp, t, prefactor_sign=1.0)
        gap = abs(right - est.mean)
        # the e^{+lambda_eps t} prefactor must be rejected by the same Monte Carlo run
        alt_gap = abs(wrong - est.mean)
        passed = gap <= 3.0 * est.stderr < alt_gap
        details = {
            "mc": est.mean,
            "se": est.stderr,
            "expansion": right,
            "alternative": wrong,
            "alternative_gap_in_se": alt_gap / est.stderr,
            "lambda_eps": model.lambda_eps,
        }
        return gap / est.stderr, passed, "<= 3 SE; e^{+lambda_eps t} alternative > 3 SE", details


class SVIndependence(Criterion):
    criterion_id = 8
    name = "SV-independence of low orders"

    def measure(self, ctx: VerifyContext) -> Measurement:
        z, n = -0.5, 3
        chi, theta, v, y0 = 2.0, 0.09, 0.3, 0.04
        model = ctx.model(kou_reference(), default_epsilon(ExpansionKind.CALL_OTM, z, n))
        sv = SVModel.heston(chi, theta, v, y0)
        heston = ctx.tamper(call_expansion_otm(model, sv, None, z, n))
        flat = call_expansion_otm(model, SVModel.constant(math.sqrt(y0)), None, z, n)
        kappa = -z
        term = 1.5 * chi * (theta - y0) * kou_reference().scalar(kappa)
        details = {
            "c1": _rel(heston.normalized[0], flat.normalized[0]),
            "c2": _rel(heston.normalized[1], flat.normalized[1]),
            "c3_term": _rel(heston.normalized[2] - flat.normalized[2], term),
            "term_price_scale": term * math.exp(kappa),
        }
        passed = details["c1"] <= 1e-8 and details["c2"] <= 1e-8 and details["c3_term"] <= 1e-5
        worst = max(details["c1"], details["c2"], details["c3_term"])
        return worst, passed, "c1, c2 <= 1e-8; c3 gap term <= 1e-5 relative", details


class DensityRemainder(Criterion):
    criterion_id = 9
    name = "density expansion remainder"

    def measure(self, ctx: VerifyContext) -> Measurement:
        x, n = 0.5, 2
        density = cgmy_reference()
        model = ctx.model(density, default_epsilon(ExpansionKind.DENSITY, x, n))
        exp = ctx.tamper(density_expansion(model, x, n))
        char = CharExponent.from_density(density)
        ts = _ladder(0.05, 5)
        residuals = [
            abs(fourier_density(char, x, t).price - evaluate(exp, t, EvaluationForm.NORMALIZED))
            for t in ts
        ]
        slope = _slope(ts, residuals)
        return slope, slope >= 2.5, "slope >= 2.5", {}


def smile_table(
    density: LevyDensity, kappa: float, taus: Sequence[float], sigma0: float = 0.0
) -> list[dict[str, float]]:
    """Implied variance from Fourier prices next to the first/second-order predictions."""
    char = CharExponent.from_density(density, sigma0=sigma0)
    rows = []
    for tau in taus:
        price = math.exp(kappa) * fourier_call(char, -kappa, tau).price
        sigma = implied_vol(price, 1.0, math.exp(kappa), 0.0, tau)
        asym = iv_second_order(kappa, tau, density)
        var = sigma * sigma
        rows.append(
            {
                "tau": tau,
                "price": price,
                "implied_var": var,
                "v0": asym.v0,
                "second_order": asym.second_order,
                "ratio": var / iv_first_order(kappa, tau),
            }
        )
    return rows


class SmileAsymptotics(Criterion):
    criterion_id = 10
    name = "implied-vol asymptotics"

    def measure(self, ctx: VerifyContext) -> Measurement:
        kappa = 0.1
        rows = smile_table(merton_reference(), kappa, [1e-2, 1e-3, 1e-4, 1e-5])
        distances = [abs(r["ratio"] - 1.0) for r in rows]
        narrowing = all(b <= a for a, b in zip(distances, distances[1:]))
        at_1e4 = ctx.perturb(rows[2]["ratio"])
        improved = all(
            abs(r["second_order"] - r["implied_var"]) < abs(r["v0"] - r["implied_var"])
            for r in rows
            if r["tau"] <= 1e-3
        )
        passed = 0.5 <= at_1e4 <= 1.5 and narrowing and improved
        details = {f"ratio_tau{r['tau']:g}": r["ratio"] for r in rows}
        details["narrowing"] = float(narrowing)
        details["second_order_improves"] = float(improved)
        return at_1e4, passed, "ratio in [0.5, 1.5] at 1e-4, narrowing, v1 improves", details


class DynkinIdentity(Criterion):
    criterion_id = 11
    name = "Dynkin expansion of E cos(X^eps)"

    def measure(self, ctx: VerifyContext) -> Measurement:
        model = ctx.model(kou_reference(), 0.1)
        g = DerivativeOracle.cosine(1.0)
        powers = [ctx.perturb(iterated_generator_at(model, g, k, 0.0)) for k in range(3)]
        ts = _ladder(0.1, 6)
        exact = [small_jump_cf(model, 1.0, t).real for t in ts]
        details: dict[str, float] = {}
        passed = True
        for n in (1, 2):
            approx = [
                sum(powers[k] * t**k / math.factorial(k) for k in range(n + 1)) for t in ts
            ]
            slope = _slope(ts, [abs(e - a) for e, a in zip(exact, approx)])
            details[f"slope_n{n}"] = slope
            passed = passed and slope >= n + 0.7
        return details["slope_n2"], passed, "slope >= n + 0.7", details


CRITERIA: dict[int, Callable[[], Criterion]] = {
    1: LeadingTail,
    2: ExpLevyRemainder,
    3: SVRemainder,
    4: ClosedFormSecondOrder,
    5: SVTable,
    6: EpsilonInvariance,
    7: InTheMoney,
    8: SVIndependence,
    9: DensityRemainder,
    10: SmileAsymptotics,
    11: DynkinIdentity,
}


def run_criteria(ids: Sequence[int], ctx: VerifyContext | None = None) -> VerifyReport:
    """Run the selected criteria in id order."""
    ctx = ctx or VerifyContext()
    start = time.monotonic()
    report = VerifyReport()
    for cid in sorted(set(ids)):
        report.results.append(CRITERIA[cid]().run(ctx))
    report.total_duration = time.monotonic() - start
    return report
