"""Small-time expansion coefficients for tails, calls, densities and payoffs.

Every family is assembled the same way: for a payoff h the large jumps are
conditioned on their count p, the small-jump generator L_eps and the
volatility recursion B_m^r act on the conditional payoffs f_p, and

    chat_j = sum_{p>=1, p+q+r=j} j!/(p! q! r!) sum_m B_m^r(y0) L_eps^q (D^2 - D)^m f_p (0)

gives E h(Z_t) = e^{-lambda_eps t} sum_j chat_j t^j / j!. The normalized
coefficients cbreve_k = sum_j binom(k, j) chat_j (-lambda_eps)^(k-j) are the
pure-power coefficients and do not depend on eps.

Usage:
    model = split_levy(LevyDensity.kou(1.0, 0.6, 5.0, 10.0), epsilon=0.1)
    sv = SVModel.heston(chi=2.0, theta=0.09, v=0.3, y0=0.04)
    exp = tail_expansion(model, sv, sv_coefficients(sv), z=0.5, n=2)
    evaluate(exp, t=0.01)
"""

from __future__ import annotations

import logging
import math
from collections.abc import Callable
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from lsvx.errors import ConfigError, ContractError, ModelConditionError, UnsupportedModelError
from lsvx.generators import (
    DerivativeOracle,
    GrowthTag,
    SVCoefficientTable,
    SVKind,
    SVModel,
    iterated_generator_at,
    l1_power,
    sv_coefficients,
)
from lsvx.levy_kernel import (
    Activity,
    FloatArray,
    GridConfig,
    LevyDensity,
    SplitLevyModel,
    exp_times,
    martingale_drift,
    quad_checked,
    singular_quad,
    split_levy,
)

logger = logging.getLogger(__name__)

OracleFactory = Callable[[int], DerivativeOracle]


class ExpansionKind(str, Enum):
    TAIL = "tail"
    CALL_OTM = "call_otm"
    CALL_ITM = "call_itm"
    DENSITY = "density"
    GENERAL_PAYOFF = "general_payoff"


class EvaluationForm(str, Enum):
    PREFACTORED = "prefactored"
    NORMALIZED = "normalized"


class PayoffKind(str, Enum):
    INDICATOR = "indicator"
    CALL = "call"
    SMOOTH_INDICATOR = "smooth_indicator"


@dataclass(frozen=True)
class Expansion:
    """Coefficients chat_1..chat_n (with e^{-lambda_eps t}) and cbreve_1..cbreve_n."""

    kind: ExpansionKind
    z: float
    order: int
    epsilon: float
    lambda_eps: float
    prefactored: tuple[float, ...]
    normalized: tuple[float, ...]
    itm_base: float = 0.0

    def coefficient(self, j: int, form: EvaluationForm = EvaluationForm.NORMALIZED) -> float:
        coeffs = self.normalized if form is EvaluationForm.NORMALIZED else self.prefactored
        return coeffs[j - 1]


@dataclass(frozen=True)
class PayoffSpec:
    """Payoff g_z(x) = phi(x) 1_{x >= z} (smooth indicator), 1_{x>=z}, or (e^{z+x} - 1)_+."""

    kind: PayoffKind
    z: float
    phi: DerivativeOracle | None = None

    def __post_init__(self) -> None:
        if self.z == 0.0:
            raise ModelConditionError("at-the-money z = 0 is outside the expansion")
        if self.kind is PayoffKind.SMOOTH_INDICATOR:
            if self.phi is None:
                raise ConfigError("smooth_indicator payoff requires phi")
            if self.phi.growth is GrowthTag.EXPONENTIAL:
                return
            if self.z < 0.0:
                raise ContractError(
                    f"phi with growth '{self.phi.growth.value}' requires z > 0; "
                    "only exponential-growth payoffs may use z < 0"
                )
        if self.kind is PayoffKind.INDICATOR and self.z < 0.0:
            raise ModelConditionError(f"tail expansion requires z > 0; got z = {self.z}")


@dataclass(frozen=True)
class MeasureTransform:
    """Drifts b_tilde, b_star and the tilted density nu*(dx) = e^x nu(dx)."""

    b_tilde: float
    b_star: float
    nu_star: LevyDensity
    sigma0: float


# ---------------------------------------------------------------------------
# Normalization and evaluation
# ---------------------------------------------------------------------------


def normalize(prefactored: tuple[float, ...], lambda_eps: float) -> tuple[float, ...]:
    """cbreve_k = sum_{j<=k} binom(k, j) chat_j (-lambda_eps)^(k-j), chat_0 = 0."""
    out = []
    for k in range(1, len(prefactored) + 1):
        out.append(
            sum(
                math.comb(k, j) * prefactored[j - 1] * (-lambda_eps) ** (k - j)
                for j in range(1, k + 1)
            )
        )
    return tuple(out)


def evaluate(
    expansion: Expansion,
    t: float,
    form: EvaluationForm = EvaluationForm.PREFACTORED,
    *,
    prefactor_sign: float = -1.0,
) -> float:
    """Value of the truncated expansion at time ``t``.

    ``prefactor_sign=+1`` evaluates e^{+lambda_eps t} instead of e^{-lambda_eps t};
    it exists only to check that alternative against an oracle.
    """
    if t < 0.0:
        raise ConfigError(f"evaluation time must be >= 0; got t = {t}")
    if form is EvaluationForm.NORMALIZED:
        series = sum(c * t**j / math.factorial(j) for j, c in enumerate(expansion.normalized, 1))
        return expansion.itm_base + series
    series = sum(c * t**j / math.factorial(j) for j, c in enumerate(expansion.prefactored, 1))
    return expansion.itm_base + math.exp(prefactor_sign * expansion.lambda_eps * t) * series


# ---------------------------------------------------------------------------
# Conditional payoff oracles
# ---------------------------------------------------------------------------


def _check_power(model: SplitLevyModel, p: int) -> None:
    if p < 1:
        raise ConfigError(f"convolution power p must be >= 1; got {p}")
    if p > model.k_max:
        raise ContractError(f"convolution power {p} exceeds precomputed k_max = {model.k_max}")


def fhat_tail(model: SplitLevyModel, p: int, z: float) -> DerivativeOracle:
    """f_p(y) = int_{z-y}^inf sbar^{*p}; f_p^{(j)}(y) = (-1)^(j-1) (sbar^{*p})^{(j-1)}(z - y)."""
    _check_power(model, p)
    base = model.power(p)

    def fn(j: int, y: FloatArray) -> FloatArray:
        if j == 0:
            return base.tail_integral(z - y)
        return (-1.0) ** (j - 1) * model.power(p, j - 1)(z - y)

    return DerivativeOracle(fn=fn, max_order=model.deriv_max + 1, label=f"tail[p={p}, z={z}]")


def fhat_call(model: SplitLevyModel, p: int, z: float) -> DerivativeOracle:
    """f_p(y) = int (e^{z+y+u} - 1)_+ sbar^{*p}(u) du.

    With a = -z - y and E_p(a) = int_a^inf e^u sbar^{*p}:
    f_p = e^{z+y} E_p(a) - T_p(a) and
    f_p^{(i)} = e^{z+y} E_p(a) + sum_{j=0}^{i-2} (-1)^j (sbar^{*p})^{(j)}(a).
    """
    _check_power(model, p)
    base = model.power(p)
    weighted = base.exp_weighted()

    def fn(i: int, y: FloatArray) -> FloatArray:
        a = -z - y
        lead = np.exp(z + y) * weighted.tail_integral(a)
        if i == 0:
            return lead - base.tail_integral(a)
        for j in range(i - 1):
            lead = lead + (-1.0) ** j * model.power(p, j)(a)
        return lead

    return DerivativeOracle(
        fn=fn,
        max_order=model.deriv_max + 2,
        growth=GrowthTag.EXPONENTIAL,
        label=f"call[p={p}, z={z}]",
    )


def ghat_put(model: SplitLevyModel, p: int, z: float) -> DerivativeOracle:
    """g_p(y) = int (e^{z+y+u} - 1)_- sbar^{*p}(u) du = f_p(y) - (e^{z+y} M^p - lambda^p)."""
    call = fhat_call(model, p, z)
    base = model.power(p)
    mass = base.total
    exp_mass = base.exp_weighted().total

    def fn(i: int, y: FloatArray) -> FloatArray:
        shift = np.exp(z + y) * exp_mass
        if i == 0:
            shift = shift - mass
        return call.eval(i, y) - shift

    return DerivativeOracle(fn=fn, max_order=call.max_order, label=f"put[p={p}, z={z}]")


def _panel_nodes(
    lo: float, hi: float, width: float, order: int = 8
) -> tuple[FloatArray, FloatArray]:
    panels = max(1, math.ceil((hi - lo) / width))
    edges = np.linspace(lo, hi, panels + 1)
    x, w = np.polynomial.legendre.leggauss(order)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    nodes = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    weights = (half[:, None] * w[None, :]).ravel()
    return nodes, weights


def fhat_payoff(model: SplitLevyModel, p: int, z: float, phi: DerivativeOracle) -> DerivativeOracle:
    """f_p(y) = int_{z-y}^inf phi(y + u) sbar^{*p}(u) du for a smooth indicator payoff.

    f_p^{(j)}(y) = int_z^inf phi^{(j)}(w) S(w - y) dw
                   + sum_{i<j} (-1)^i phi^{(j-1-i)}(z) S^{(i)}(z - y),
    with the integral written as phi^{(j)}(z) T(z - y) + int_z^inf phi^{(j+1)}(w) T(w - y) dw
    (T the tail integral of S), so phi = 1 reduces exactly to the indicator.
    """
    _check_power(model, p)
    assert model.mesh is not None
    base = model.power(p)
    x = model.mesh.x
    tails = base.tail_integral(x)
    alive = x[tails > 1e-15 * max(base.total, 1e-300)]
    u_cut = float(alive.max()) if alive.size else model.mesh.radius
    width = min(model.epsilon / 8, 0.02)
    phi_z = [float(phi.eval(i, np.array([z]))[0]) for i in range(phi.max_order + 1)]

    def fn(j: int, y: FloatArray) -> FloatArray:
        nodes, weights = _panel_nodes(z, max(z, u_cut + float(np.max(y))) + width, width)
        dphi = phi.eval(j + 1, nodes)
        out = phi_z[j] * base.tail_integral(z - y)
        step = max(1, (1 << 22) // nodes.size)
        flat = y.ravel()
        interior = np.empty(flat.size)
        for start in range(0, flat.size, step):
            block = flat[start : start + step]
            vals = base.tail_integral(nodes[None, :] - block[:, None])
            interior[start : start + step] = vals @ (dphi * weights)
        out = out + interior.reshape(y.shape)
        for i in range(j):
            out = out + (-1.0) ** i * phi_z[j - 1 - i] * model.power(p, i)(z - y)
        return out

    return DerivativeOracle(
        fn=fn,
        max_order=min(phi.max_order - 1, model.deriv_max + 1),
        growth=phi.growth,
        label=f"payoff[p={p}, z={z}, {phi.label}]",
    )


def shat_density(model: SplitLevyModel, i: int, x: float) -> DerivativeOracle:
    """s_i(u) = sbar^{*i}(x - u); derivatives (-1)^j (sbar^{*i})^{(j)}(x - u)."""
    _check_power(model, i)
    return DerivativeOracle(
        fn=lambda j, u: (-1.0) ** j * model.power(i, j)(x - u),
        max_order=model.deriv_max,
        label=f"density[i={i}, x={x}]",
    )


# ---------------------------------------------------------------------------
# Preconditions
# ---------------------------------------------------------------------------


def epsilon_bound(kind: ExpansionKind, z: float, n: int) -> float:
    """Upper bound on eps under which the expansion of order n holds."""
    if kind is ExpansionKind.TAIL:
        return min(z / (n + 1), 1.0)
    if kind is ExpansionKind.CALL_OTM:
        return min(-z / (2 * (n + 1)), 1.0)
    if kind in (ExpansionKind.CALL_ITM, ExpansionKind.GENERAL_PAYOFF):
        return min(abs(z) / (2 * (n + 1)), 1.0)
    return min(abs(z) / (2 * (n + 1)), 1.0)


def default_epsilon(kind: ExpansionKind, z: float, n: int) -> float:
    """min(bound, 0.1) * 0.9; for densities the bound |x| / (2(n+1)) itself."""
    if kind is ExpansionKind.DENSITY:
        return epsilon_bound(kind, z, n)
    if kind is ExpansionKind.GENERAL_PAYOFF and z > 0.0:
        return 0.9 * min(epsilon_bound(ExpansionKind.TAIL, z, n), 0.1)
    return 0.9 * min(epsilon_bound(kind, z, n), 0.1)


_BOUND_TEXT = {
    ExpansionKind.TAIL: "requires 0 < ε < z₀/(n+1) ∧ 1",
    ExpansionKind.CALL_OTM: "requires 0 < ε < −z₀/(2(n+1)) ∧ 1",
    ExpansionKind.CALL_ITM: "requires 0 < ε < z₀/(2(n+1)) ∧ 1",
    ExpansionKind.GENERAL_PAYOFF: "requires 0 < ε < |z₀|/(2(n+1)) ∧ 1",
}


def require_epsilon(kind: ExpansionKind, z: float, n: int, epsilon: float) -> None:
    """Raise ModelConditionError quoting the violated inequality when eps is too large."""
    if kind is ExpansionKind.DENSITY:
        if not epsilon < abs(z):
            raise ModelConditionError(f"density expansion requires ε < |x|; got ε = {epsilon:g}")
        return
    bound = epsilon_bound(kind, z, n)
    if not 0.0 < epsilon < bound:
        raise ModelConditionError(
            f"{_BOUND_TEXT[kind]}; got ε = {epsilon:g}, z = {z:g}, n = {n} (bound {bound:.6g})"
        )


def _check_epsilon(model: SplitLevyModel, kind: ExpansionKind, z: float, n: int) -> None:
    require_epsilon(kind, z, n, model.epsilon)


def _check_order(model: SplitLevyModel, n: int) -> None:
    if n < 1:
        raise ConfigError(f"expansion order must be >= 1; got n = {n}")
    if n > model.k_max:
        raise ContractError(
            f"order {n} needs convolution powers up to {n}; model has k_max = {model.k_max}"
        )


def _resolve_table(sv: SVModel, table: SVCoefficientTable | None, n: int) -> SVCoefficientTable:
    if table is None:
        return sv_coefficients(sv, max(n - 1, 1))
    if table.k_max < n - 1:
        raise ContractError(f"order {n} needs B_j^k for k <= {n - 1}; table has {table.k_max}")
    return table


def _check_pure_jump(model: SplitLevyModel) -> None:
    if model.sigma_sq != 0.0:
        raise ConfigError(
            "model carries a Brownian part; pass the diffusion through the SV model or "
            "use exp_levy_expansion"
        )


# ---------------------------------------------------------------------------
# Assembly
# ---------------------------------------------------------------------------


def _assemble(
    model: SplitLevyModel,
    table: SVCoefficientTable | None,
    factory: OracleFactory,
    n: int,
) -> tuple[float, ...]:
    """chat_1..chat_n; ``table=None`` means the Brownian part is inside the generator."""
    oracles: dict[int, DerivativeOracle] = {}
    powered: dict[tuple[int, int], DerivativeOracle] = {}
    terms: dict[tuple[int, int, int], float] = {}

    def term(p: int, m: int, q: int) -> float:
        key = (p, m, q)
        if key not in terms:
            if p not in oracles:
                oracles[p] = factory(p)
            if (p, m) not in powered:
                powered[(p, m)] = l1_power(oracles[p], m)
            terms[key] = iterated_generator_at(model, powered[(p, m)], q, 0.0)
        return terms[key]

    out = []
    for j in range(1, n + 1):
        total = 0.0
        for p in range(1, j + 1):
            for r in range(0, j - p + 1):
                q = j - p - r
                if table is None and r > 0:
                    continue
                weight = math.factorial(j) / (
                    math.factorial(p) * math.factorial(q) * math.factorial(r)
                )
                inner = 0.0
                for m in range(0, r + 1):
                    b = 1.0 if table is None else table.B(m, r)
                    if b == 0.0:
                        continue
                    inner += b * term(p, m, q)
                total += weight * inner
        out.append(total)
    return tuple(out)


def _build(
    kind: ExpansionKind,
    model: SplitLevyModel,
    z: float,
    n: int,
    prefactored: tuple[float, ...],
    itm_base: float = 0.0,
) -> Expansion:
    expansion = Expansion(
        kind=kind,
        z=z,
        order=n,
        epsilon=model.epsilon,
        lambda_eps=model.lambda_eps,
        prefactored=prefactored,
        normalized=normalize(prefactored, model.lambda_eps),
        itm_base=itm_base,
    )
    logger.info("%s expansion z=%g n=%d: cbreve=%s", kind.value, z, n, expansion.normalized)
    return expansion


def tail_expansion(
    model: SplitLevyModel,
    sv: SVModel,
    table: SVCoefficientTable | None,
    z: float,
    n: int,
) -> Expansion:
    """P(Z_t >= z) for z > 0."""
    if z <= 0.0:
        raise ModelConditionError(f"tail expansion requires z > 0; got z = {z}")
    _check_pure_jump(model)
    _check_order(model, n)
    _check_epsilon(model, ExpansionKind.TAIL, z, n)
    table = _resolve_table(sv, table, n)
    coeffs = _assemble(model, table, lambda p: fhat_tail(model, p, z), n)
    return _build(ExpansionKind.TAIL, model, z, n, coeffs)


def call_expansion_otm(
    model: SplitLevyModel,
    sv: SVModel,
    table: SVCoefficientTable | None,
    z: float,
    n: int,
) -> Expansion:
    """G_t(z) = E(e^{z + Z_t} - 1)_+ for z < 0."""
    if z == 0.0:
        raise ModelConditionError("at-the-money z = 0 is outside the expansion")
    if z > 0.0:
        raise ModelConditionError(f"out-of-the-money call requires z < 0; got z = {z}")
    _check_pure_jump(model)
    _check_order(model, n)
    _check_epsilon(model, ExpansionKind.CALL_OTM, z, n)
    sv.check_bounded()
    table = _resolve_table(sv, table, n)
    coeffs = _assemble(model, table, lambda p: fhat_call(model, p, z), n)
    return _build(ExpansionKind.CALL_OTM, model, z, n, coeffs)


def call_expansion_itm(
    model: SplitLevyModel,
    sv: SVModel,
    table: SVCoefficientTable | None,
    z: float,
    n: int,
) -> Expansion:
    """G_t(z) = e^z - 1 + put leg for z > 0, with prefactor e^{-lambda_eps t}."""
    if z == 0.0:
        raise ModelConditionError("at-the-money z = 0 is outside the expansion")
    if z < 0.0:
        raise ModelConditionError(f"in-the-money call requires z > 0; got z = {z}")
    _check_pure_jump(model)
    _check_order(model, n)
    _check_epsilon(model, ExpansionKind.CALL_ITM, z, n)
    sv.check_bounded()
    table = _resolve_table(sv, table, n)
    coeffs = _assemble(model, table, lambda p: ghat_put(model, p, z), n)
    return _build(ExpansionKind.CALL_ITM, model, z, n, coeffs, itm_base=math.expm1(z))


def general_payoff_expansion(
    model: SplitLevyModel,
    sv: SVModel,
    table: SVCoefficientTable | None,
    payoff: PayoffSpec,
    n: int,
) -> Expansion:
    """E phi(Z_t) 1_{Z_t >= z} for a smooth phi.

    Bounded phi needs z > 0 (tail bound on eps); phi with |phi^{(j)}| <= M_j e^u
    may use z < 0 and then follows the out-of-the-money bound.
    """
    if payoff.kind is not PayoffKind.SMOOTH_INDICATOR or payoff.phi is None:
        raise ContractError("general_payoff_expansion expects a smooth_indicator payoff")
    z = payoff.z
    _check_pure_jump(model)
    _check_order(model, n)
    bound_kind = ExpansionKind.TAIL
    if payoff.phi.growth is GrowthTag.EXPONENTIAL:
        bound_kind = ExpansionKind.CALL_OTM if z < 0 else ExpansionKind.CALL_ITM
        sv.check_bounded()
    _check_epsilon(model, bound_kind, z, n)
    table = _resolve_table(sv, table, n)
    phi = payoff.phi
    coeffs = _assemble(model, table, lambda p: fhat_payoff(model, p, z, phi), n)
    return _build(ExpansionKind.GENERAL_PAYOFF, model, z, n, coeffs)


def expand_payoff(
    model: SplitLevyModel,
    sv: SVModel,
    table: SVCoefficientTable | None,
    payoff: PayoffSpec,
    n: int,
) -> Expansion:
    """Dispatch a payoff to the matching expansion family."""
    if payoff.kind is PayoffKind.INDICATOR:
        return tail_expansion(model, sv, table, payoff.z, n)
    if payoff.kind is PayoffKind.CALL:
        if payoff.z < 0.0:
            return call_expansion_otm(model, sv, table, payoff.z, n)
        return call_expansion_itm(model, sv, table, payoff.z, n)
    return general_payoff_expansion(model, sv, table, payoff, n)


def density_expansion(model: SplitLevyModel, x: float, n: int) -> Expansion:
    """Transition density f_t(x) of the pure-jump process, |x| > eps.

    a_k(x) = sum_j binom(k, j) (-lambda)^(k-j) sum_{i<=j} binom(j, i) L^{j-i} s_i(0).
    """
    if model.density.activity is not Activity.INFINITE:
        raise ModelConditionError(
            "density expansion requires an infinite-activity density with "
            "liminf eta^(Y-2) int_{|z|<=eta} z^2 s(z) dz > 0; got a finite-activity density"
        )
    if x == 0.0:
        raise ModelConditionError("density expansion requires x != 0")
    _check_pure_jump(model)
    _check_order(model, n)
    require_epsilon(ExpansionKind.DENSITY, x, n, model.epsilon)
    oracles = {i: shat_density(model, i, x) for i in range(1, n + 1)}
    coeffs = []
    for j in range(1, n + 1):
        total = 0.0
        for i in range(1, j + 1):
            total += math.comb(j, i) * iterated_generator_at(model, oracles[i], j - i, 0.0)
        coeffs.append(total)
    return _build(ExpansionKind.DENSITY, model, x, n, tuple(coeffs))


def exp_levy_expansion(model: SplitLevyModel, z: float, n: int) -> Expansion:
    """Exponential Levy call expansion; the Brownian part lives in ``model``.

    c_j = sum_k binom(j, k) L^{j-k} h_k(0), with L the generator of the
    small jumps plus sigma0 W (see ``SplitLevyModel.with_diffusion``).
    """
    if z == 0.0:
        raise ModelConditionError("at-the-money z = 0 is outside the expansion")
    _check_order(model, n)
    if z < 0.0:
        _check_epsilon(model, ExpansionKind.CALL_OTM, z, n)
        coeffs = _assemble(model, None, lambda p: fhat_call(model, p, z), n)
        return _build(ExpansionKind.CALL_OTM, model, z, n, coeffs)
    _check_epsilon(model, ExpansionKind.CALL_ITM, z, n)
    coeffs = _assemble(model, None, lambda p: ghat_put(model, p, z), n)
    return _build(ExpansionKind.CALL_ITM, model, z, n, coeffs, itm_base=math.expm1(z))


# ---------------------------------------------------------------------------
# Closed forms
# ---------------------------------------------------------------------------


def call_leading_coefficient(density: LevyDensity, z: float) -> float:
    """int (e^{z+u} - 1)_+ s(u) du for z < 0."""
    if z >= 0.0:
        raise ConfigError(f"out-of-the-money leading coefficient requires z < 0; got {z}")

    def integrand(u: float) -> float:
        s = density.scalar(u)
        return exp_times(z + u, s) - s

    return quad_checked(integrand, -z, math.inf, what="b1")


def put_leading_coefficient(density: LevyDensity, z: float) -> float:
    """int (e^{z+u} - 1)_- s(u) du for z > 0."""
    if z <= 0.0:
        raise ConfigError(f"in-the-money put leg requires z > 0; got {z}")
    return quad_checked(
        lambda u: -math.expm1(z + u) * density.scalar(u), -math.inf, -z, what="put"
    )


def payoff_integral(density: LevyDensity, kappa: float) -> float:
    """int (e^u - e^kappa)_+ s(u) du = e^kappa * int (e^{u-kappa} - 1)_+ s(u) du."""
    return math.exp(kappa) * call_leading_coefficient(density, -kappa)


def leading_call_price(density: LevyDensity, z: float, t: float) -> float:
    """Leading small-time out-of-the-money price t * int (e^{z+u} - 1)_+ s(u) du."""
    return t * call_leading_coefficient(density, z)


def _sbar_scalar(model: SplitLevyModel, u: float) -> float:
    return float(model.trunc.cbar_eps(u)) * model.density.scalar(u)


def _sbar_tail(
    model: SplitLevyModel, x: float, weight: Callable[[float, float], float] | None = None
) -> float:
    """int_x^inf weight(u, sbar(u)) du, split at the truncation breakpoints.

    Without a weight this is the tail mass of sbar beyond x.
    """
    eps = model.epsilon

    def integrand(u: float) -> float:
        s = _sbar_scalar(model, u)
        return s if weight is None else weight(u, s)

    cuts = [c for c in (-eps, -eps / 2, eps / 2, eps) if c > x]
    edges = [x, *cuts]
    total = 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        total += quad_checked(integrand, lo, hi, what="sbar tail")
    total += quad_checked(integrand, edges[-1], math.inf, what="sbar tail")
    return total


def _small_jump_average(model: SplitLevyModel, inner: Callable[[float], float]) -> float:
    """int inner(u) u^2 c_eps(u) s(u) du over [-eps, eps]."""
    eps = model.epsilon
    dens = model.density

    def near(w: float) -> float:
        return w * w * (inner(w) * dens.scalar(w) + inner(-w) * dens.scalar(-w))

    def band(w: float) -> float:
        return w * w * float(model.trunc.c_eps(w)) * dens.scalar(w) * inner(w)

    total = singular_quad(near, eps / 2, dens.blumenthal_index, what="small-jump average")
    total += quad_checked(band, eps / 2, eps, what="small-jump average")
    total += quad_checked(band, -eps, -eps / 2, what="small-jump average")
    return total


def _beta_average(fn: Callable[[float], float]) -> float:
    """int_0^1 fn(beta) (1 - beta) d beta."""
    x, w = np.polynomial.legendre.leggauss(24)
    beta = 0.5 * (x + 1.0)
    return float(sum(0.5 * wi * (1.0 - b) * fn(float(b)) for b, wi in zip(beta, w)))


def closed_form_tail_a2(model: SplitLevyModel, sv: SVModel, z: float) -> float:
    """a2(z) = 2(b_eps s(z) - int int s'(z - beta u)(1 - beta) d beta u^2 c_eps s(u) du)
    - sigma^2(y0)(s'(z) + s(z)) + P(u1 + u2 >= z) under sbar x sbar."""
    dens = model.density
    jump = _small_jump_average(
        model, lambda u: _beta_average(lambda b: dens.scalar(z - b * u, 1))
    )
    sig2 = float(sv.sigma_squared(sv.y0))
    lead = 2.0 * (model.b_eps * dens.scalar(z) - jump)
    diff = -sig2 * (dens.scalar(z, 1) + dens.scalar(z))
    double = _double_tail(model, z)
    return lead + diff + double


def _double_tail(model: SplitLevyModel, z: float) -> float:
    eps = model.epsilon

    def outer(u: float) -> float:
        return _sbar_scalar(model, u) * _sbar_tail(model, z - u)

    edges = [-eps, -eps / 2, eps / 2, eps]
    total = quad_checked(outer, -math.inf, edges[0], what="double tail")
    total += quad_checked(outer, edges[0], edges[1], what="double tail")
    total += quad_checked(outer, edges[2], edges[3], what="double tail")
    total += quad_checked(outer, edges[3], math.inf, what="double tail")
    return total


def closed_form_call_b2(model: SplitLevyModel, sv: SVModel, z: float) -> float:
    """b2(z) = sigma^2(y0) s(-z) + 2 b_eps int_{-z}^inf e^{z+u} s(u) du
    + int int (e^{z+u1+u2} - 1)_+ sbar sbar
    + 2 int int (1 - beta)(int_{-z-beta u}^inf e^{z+beta u+w} s(w) dw + s(-z-beta u))
        d beta u^2 c_eps s(u) du."""
    dens = model.density
    eps = model.epsilon
    sig2 = float(sv.sigma_squared(sv.y0))

    def exp_tail(a: float) -> float:
        return quad_checked(lambda w: exp_times(w, dens.scalar(w)), a, math.inf, what="exp tail")

    first = sig2 * dens.scalar(-z)
    second = 2.0 * model.b_eps * math.exp(z) * exp_tail(-z)

    def call_single(x: float) -> float:
        return _sbar_tail(model, -x, lambda u, s: exp_times(x + u, s) - s)

    def outer(u: float) -> float:
        s = _sbar_scalar(model, u)
        return 0.0 if s == 0.0 else s * call_single(z + u)

    edges = [-eps, -eps / 2, eps / 2, eps]
    third = quad_checked(outer, -math.inf, edges[0], what="double call")
    third += quad_checked(outer, edges[0], edges[1], what="double call")
    third += quad_checked(outer, edges[2], edges[3], what="double call")
    third += quad_checked(outer, edges[3], math.inf, what="double call")

    def inner(u: float) -> float:
        def at(b: float) -> float:
            a = -z - b * u
            return math.exp(z + b * u) * exp_tail(a) + dens.scalar(a)

        return _beta_average(at)

    fourth = 2.0 * _small_jump_average(model, inner)
    return first + second + third + fourth


# ---------------------------------------------------------------------------
# Measure transform and SV corrections
# ---------------------------------------------------------------------------


def measure_transform(model: SplitLevyModel, sigma0: float) -> MeasureTransform:
    """b_tilde = -sigma0^2/2 - int (e^x - 1 - x 1_{|x|<=1}) nu(dx),
    b_star = sigma0^2/2 - int (e^x - 1 - x 1) nu(dx) + int_{|x|<=1} x (e^x - 1) nu(dx)."""
    if sigma0 < 0.0:
        raise ConfigError(f"sigma0 must be >= 0; got {sigma0}")
    dens = model.density
    drift = martingale_drift(dens)

    def near(w: float) -> float:
        return w * math.expm1(w) * dens.scalar(w) + w * -math.expm1(-w) * dens.scalar(-w)

    tilt = singular_quad(near, 1.0, dens.blumenthal_index, what="b_star")
    half = 0.5 * sigma0 * sigma0
    return MeasureTransform(
        b_tilde=-half + drift, b_star=half + drift + tilt, nu_star=dens.tilted(), sigma0=sigma0
    )


@dataclass(frozen=True)
class CorrectionTerm:
    label: str
    order: int
    value: float
    price_value: float


@dataclass(frozen=True)
class SVCorrectionReport:
    """Itemized order-2/3 decomposition of out-of-the-money call coefficients.

    Values are in units of G_t(z); ``price_value`` multiplies by e^kappa.
    """

    z: float
    kappa: float
    terms: tuple[CorrectionTerm, ...]
    targets: dict[int, float]
    parity: dict[int, tuple[float, float]] = field(default_factory=dict)

    def total(self, order: int) -> float:
        return sum(t.value for t in self.terms if t.order == order)

    def residual(self, order: int) -> float:
        return self.total(order) - self.targets[order]

    def term(self, label: str) -> CorrectionTerm:
        for t in self.terms:
            if t.label == label:
                return t
        raise KeyError(label)


def sv_correction_terms(
    model: SplitLevyModel,
    sv: SVModel,
    z: float,
    *,
    with_parity: bool = True,
) -> SVCorrectionReport:
    """Split cbreve_2, cbreve_3 of the OTM call into pure-jump and SV contributions."""
    if sv.kind not in (SVKind.HESTON, SVKind.EXP_OU):
        raise UnsupportedModelError(
            f"SV correction terms are available for Heston and exp-OU only; got {sv.kind.value}"
        )
    if z >= 0.0:
        raise ModelConditionError(f"SV correction terms require z < 0; got z = {z}")
    kappa = -z
    scale = math.exp(kappa)
    table = sv_coefficients(sv, 3)
    full = call_expansion_otm(model, sv, table, z, 3)
    flat_sv = SVModel.constant(0.0)
    pure = call_expansion_otm(model, flat_sv, sv_coefficients(flat_sv, 2), z, 3)

    dens = model.density
    s0, s1, s2 = (dens.scalar(kappa, j) for j in range(3))
    sig2 = float(sv.sigma_squared(sv.y0))
    lam = model.lambda_eps
    v_atoms, v_probs = model.shift_atoms
    jump_part = model.b3 * float(model.sbar(kappa - v_atoms, 2) @ v_probs)
    conv2 = float(model.power(2)(np.array([kappa]))[0])

    raw = [
        ("pure_jump_2", 2, pure.normalized[1]),
        ("spot_vol", 2, sig2 * s0),
        ("pure_jump_3", 3, pure.normalized[2]),
        ("sv_dynamics", 3, 3.0 * table.B(1, 2) * s0),
        ("sigma4", 3, 0.75 * sig2 * sig2 * (s2 + s1)),
        ("sigma_double_jump", 3, 1.5 * sig2 * conv2),
        ("sigma_drift", 3, -3.0 * sig2 * model.b_eps * s1),
        ("sigma_small_jumps", 3, 3.0 * sig2 * jump_part),
        ("sigma_intensity", 3, -3.0 * lam * sig2 * s0),
    ]
    if sv.kind is SVKind.HESTON:
        v = sv.params["v"]
        raw.append(("vol_of_vol", 4, v * v * sv.y0 * (s2 + s1)))
    terms = tuple(CorrectionTerm(label, order, value, value * scale) for label, order, value in raw)
    targets = {2: full.normalized[1], 3: full.normalized[2]}

    parity: dict[int, tuple[float, float]] = {}
    if with_parity:
        lhs = pure_jump_parity(model, kappa, 3)
        parity = {j: (lhs[j - 1], scale * pure.normalized[j - 1]) for j in range(1, 4)}
    return SVCorrectionReport(z=z, kappa=kappa, terms=terms, targets=targets, parity=parity)


def pure_jump_parity(
    model: SplitLevyModel, kappa: float, n: int, sigma0: float = 0.0
) -> tuple[float, ...]:
    """d_j(kappa; b*, sigma0, nu*) - e^kappa d_j(kappa; b_tilde, sigma0, nu) for j <= n.

    The d_j are tail coefficients of exponential Levy models; the difference
    equals e^kappa times the call coefficients (price scale).
    """
    transform = measure_transform(model, sigma0)
    flat = SVModel.constant(sigma0)
    table = sv_coefficients(flat, max(n - 1, 1))
    half = 0.5 * sigma0 * sigma0
    cfg = GridConfig(k_max=max(n, 1), deriv_max=max(model.deriv_max, 2 * n))
    base = split_levy(model.density, model.epsilon, cfg, drift=transform.b_tilde + half)
    tilted = split_levy(transform.nu_star, model.epsilon, cfg, drift=transform.b_star + half)
    d_base = tail_expansion(base, flat, table, kappa, n).normalized
    d_star = tail_expansion(tilted, flat, table, kappa, n).normalized
    scale = math.exp(kappa)
    return tuple(ds - scale * db for ds, db in zip(d_star, d_base))
