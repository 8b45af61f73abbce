"""Black-Scholes pricing, its small-time asymptotics and implied volatility.

Out-of-the-money prices are evaluated in log space through the Mills ratio
so implied volatilities stay well defined when the price itself is far below
double-precision resolution of the spot.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

from scipy import optimize, special
from scipy.stats import norm

from lsvx.errors import DomainError, NumericError
from lsvx.expansions import payoff_integral
from lsvx.levy_kernel import LevyDensity

logger = logging.getLogger(__name__)

_MIN_PRICE_RATIO = 1e-300
_SQRT_HALF_PI = math.sqrt(0.5 * math.pi)


@dataclass(frozen=True)
class BSQuote:
    """Spot, strike, rate, volatility and time to maturity."""

    s: float
    strike: float
    r: float
    sigma: float
    tau: float

    def __post_init__(self) -> None:
        for name in ("s", "strike", "sigma", "tau"):
            value = getattr(self, name)
            if not value > 0.0:
                raise DomainError(f"Black-Scholes quote requires {name} > 0; got {value}")
        if self.r < 0.0:
            raise DomainError(f"Black-Scholes quote requires r >= 0; got {self.r}")

    @property
    def kappa(self) -> float:
        """Log-moneyness ln(K/s)."""
        return math.log(self.strike / self.s)


@dataclass(frozen=True)
class BSAsymptotic:
    """Leading small-time term of an OTM call and the unit remainder envelope, in logs."""

    log_leading: float
    log_envelope: float

    @property
    def leading(self) -> float:
        return math.exp(self.log_leading)

    @property
    def envelope(self) -> float:
        return math.exp(self.log_envelope)


@dataclass(frozen=True)
class IVAsymptote:
    kappa: float
    tau: float
    v0: float
    v1: float

    @property
    def first_order(self) -> float:
        return self.v0

    @property
    def second_order(self) -> float:
        return self.v0 * (1.0 + self.v1)


# ---------------------------------------------------------------------------
# Pricing
# ---------------------------------------------------------------------------


def _mills(x: float) -> float:
    """Phi(-x) / phi(x)."""
    return _SQRT_HALF_PI * float(special.erfcx(x / math.sqrt(2.0)))


def _d1_d2(s: float, strike: float, r: float, sigma: float, tau: float) -> tuple[float, float]:
    sd = sigma * math.sqrt(tau)
    d1 = (math.log(s / strike) + (r + 0.5 * sigma * sigma) * tau) / sd
    return d1, d1 - sd


def _call_is_otm(s: float, strike: float, r: float, tau: float) -> bool:
    return s * math.exp(r * tau) <= strike


def log_otm_price(s: float, strike: float, r: float, sigma: float, tau: float) -> float:
    """log of the out-of-the-money option price (call if F <= K, else put)."""
    d1, d2 = _d1_d2(s, strike, r, sigma, tau)
    disc = strike * math.exp(-r * tau)
    if _call_is_otm(s, strike, r, tau):
        if d1 > -8.0:
            value = s * norm.cdf(d1) - disc * norm.cdf(d2)
            if value > 0.0:
                return math.log(value)
        diff = _mills(-d1) - _mills(-d2)
    else:
        if d2 < 8.0:
            value = disc * norm.cdf(-d2) - s * norm.cdf(-d1)
            if value > 0.0:
                return math.log(value)
        diff = _mills(d2) - _mills(d1)
    if not diff > 0.0:
        return -math.inf
    return math.log(s) + float(norm.logpdf(d1)) + math.log(diff)


def bs_price(q: BSQuote) -> float:
    """Black-Scholes call price."""
    otm = math.exp(log_otm_price(q.s, q.strike, q.r, q.sigma, q.tau))
    if _call_is_otm(q.s, q.strike, q.r, q.tau):
        return otm
    return otm + q.s - q.strike * math.exp(-q.r * q.tau)


def _vega_ratio(
    s: float, strike: float, r: float, sigma: float, tau: float, log_otm: float
) -> float:
    d1, _ = _d1_d2(s, strike, r, sigma, tau)
    return math.exp(math.log(s) + float(norm.logpdf(d1)) + 0.5 * math.log(tau) - log_otm)


def bs_asymptotic(q: BSQuote) -> BSAsymptotic:
    """Leading term of an out-of-the-money call,

        (2 pi)^{-1/2} K sigma^3 tau^{3/2} / kappa^2
            * e^{-kappa^2/(2 sigma^2 tau)} e^{-kappa/2 + r kappa/sigma^2}.

    The remainder is bounded by M tau^{5/2} e^{-kappa^2/(2 sigma^2 tau)};
    ``log_envelope`` carries the bound with M = 1.
    """
    kappa = q.kappa
    if kappa == 0.0:
        raise DomainError("Black-Scholes asymptotics exclude the at-the-money strike kappa = 0")
    sig2 = q.sigma * q.sigma
    gauss = -kappa * kappa / (2.0 * sig2 * q.tau)
    log_leading = (
        -0.5 * math.log(2.0 * math.pi)
        + math.log(q.strike)
        + 3.0 * math.log(q.sigma)
        + 1.5 * math.log(q.tau)
        - 2.0 * math.log(abs(kappa))
        + gauss
        - 0.5 * kappa
        + q.r * kappa / sig2
    )
    return BSAsymptotic(log_leading=log_leading, log_envelope=2.5 * math.log(q.tau) + gauss)


def fit_remainder_constant(quote: BSQuote) -> float:
    """M such that |price - leading| = M * envelope at ``quote``."""
    asym = bs_asymptotic(quote)
    log_price = log_otm_price(quote.s, quote.strike, quote.r, quote.sigma, quote.tau)
    gap = abs(math.expm1(asym.log_leading - log_price))
    return gap * math.exp(log_price - asym.log_envelope)


# ---------------------------------------------------------------------------
# Implied volatility
# ---------------------------------------------------------------------------


def implied_vol(
    price: float,
    s: float,
    strike: float,
    r: float,
    tau: float,
    *,
    max_iter: int = 100,
) -> float:
    """Invert the Black-Scholes call price by bracketed Newton on the log OTM price.

    Raises:
        DomainError: ``price`` is outside ((s - K e^{-r tau})_+, s) or below 1e-300 s.
    """
    if not (s > 0.0 and strike > 0.0 and tau > 0.0):
        raise DomainError("implied_vol requires s, K, tau > 0")
    disc = strike * math.exp(-r * tau)
    lower = max(s - disc, 0.0)
    if not lower < price < s:
        raise DomainError(
            f"no implied volatility: price {price:.6g} outside arbitrage bounds "
            f"({lower:.6g}, {s:.6g})"
        )
    call_otm = _call_is_otm(s, strike, r, tau)
    target = price if call_otm else price - (s - disc)
    if not target > _MIN_PRICE_RATIO * s:
        raise DomainError(f"no implied volatility: time value {target:.3g} below 1e-300 * s")
    log_target = math.log(target)

    def g(sigma: float) -> float:
        return log_otm_price(s, strike, r, sigma, tau) - log_target

    lo, hi = 1e-8, 1.0
    while g(hi) < 0.0:
        hi *= 2.0
        if hi > 1e4:
            raise DomainError("no implied volatility below sigma = 1e4")

    kappa = math.log(strike / s)
    sigma = 0.5 * (lo + hi)
    if tau < 0.1 and kappa != 0.0:
        sigma = min(max(math.sqrt(iv_first_order(kappa, tau)), lo), hi)

    for _ in range(max_iter):
        value = g(sigma)
        if value > 0.0:
            hi = sigma
        else:
            lo = sigma
        if abs(value) < 1e-14:
            break
        log_otm = value + log_target
        step = value / _vega_ratio(s, strike, r, sigma, tau, log_otm)
        candidate = sigma - step
        if not lo < candidate < hi:
            candidate = 0.5 * (lo + hi)
        if abs(candidate - sigma) <= 1e-15 * sigma:
            sigma = candidate
            break
        sigma = candidate
    else:
        logger.warning("implied_vol: Newton did not settle, polishing by bisection")

    if abs(math.expm1(g(sigma))) * target > 1e-12 * s:
        try:
            sigma = optimize.brentq(g, lo, hi, xtol=1e-16, rtol=4e-16, maxiter=500)
        except ValueError as exc:
            raise NumericError(f"implied volatility bracket lost: {exc}") from exc
    return float(sigma)


# ---------------------------------------------------------------------------
# Implied-volatility asymptotics
# ---------------------------------------------------------------------------


def _check_tau(tau: float) -> None:
    if not 0.0 < tau < 1.0:
        raise DomainError(f"implied-volatility asymptotics require 0 < tau < 1; got tau = {tau}")


def iv_first_order(kappa: float, tau: float) -> float:
    """v0 = kappa^2 / (-2 tau ln tau)."""
    _check_tau(tau)
    if kappa == 0.0:
        raise DomainError("implied-volatility asymptotics exclude kappa = 0")
    return kappa * kappa / (-2.0 * tau * math.log(tau))


def iv_second_order(kappa: float, tau: float, density: LevyDensity) -> IVAsymptote:
    """v1 = log(4 sqrt(pi) e^{-kappa/2} / kappa * I * log^{3/2}(1/tau)) / log(1/tau),
    I = int (e^u - e^kappa)_+ s(u) du; the prediction is v0 (1 + v1)."""
    if not kappa > 0.0:
        raise DomainError(
            f"second-order implied volatility needs an OTM call, kappa > 0; got {kappa}"
        )
    v0 = iv_first_order(kappa, tau)
    integral = payoff_integral(density, kappa)
    log_inv = -math.log(tau)
    arg = 4.0 * math.sqrt(math.pi) * math.exp(-0.5 * kappa) / kappa * integral * log_inv**1.5
    if not arg > 0.0:
        raise DomainError(
            f"second-order implied volatility: log argument {arg:.3g} <= 0 at tau = {tau}; "
            "use a smaller tau"
        )
    return IVAsymptote(kappa=kappa, tau=tau, v0=v0, v1=math.log(arg) / log_inv)
