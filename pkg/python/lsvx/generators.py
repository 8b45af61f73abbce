"""Jump generators, their iterates, and the stochastic-volatility coefficients.

The small-jump generator acting on a smooth g is

    L_eps g(y) = b_eps g'(y) + (sigma^2/2) g''(y)
                 + int int g''(y + beta w) (1 - beta) d beta w^2 c_eps(w) nu(dw)

and its k-th iterate is a sum over multi-indices (k0, ..., k4) of products
of the constants b0..b4 times expectations of g^{(l)} at randomly shifted
points. The SV part is summarized by the coefficients B_j^k(y0) of the
recursion B_j^k = L2 B_j^{k-1} + (sigma^2/2) B_{j-1}^{k-1}.
"""

from __future__ import annotations

import itertools
import logging
import math
from collections.abc import Callable
from dataclasses import dataclass, field
from enum import Enum
from typing import NamedTuple

import numpy as np
from numpy.polynomial import Chebyshev
from numpy.typing import ArrayLike

from lsvx.errors import ConfigError, ContractError, ModelConditionError, NumericError
from lsvx.levy_kernel import FloatArray, SplitLevyModel

logger = logging.getLogger(__name__)

OracleFn = Callable[[int, FloatArray], FloatArray]
CoefficientFn = Callable[[FloatArray, int], FloatArray]

_CHUNK = 1 << 22


class GrowthTag(str, Enum):
    BOUNDED = "bounded"
    SUBEXPONENTIAL = "subexponential"
    EXPONENTIAL = "exponential"


class GeneratorKind(str, Enum):
    """SMALL_JUMP is L_eps; FULL adds the large-jump legs (b0, b4) of X."""

    SMALL_JUMP = "small_jump"
    FULL = "full"


# ---------------------------------------------------------------------------
# Derivative oracles
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DerivativeOracle:
    """A function known through its derivatives g^{(j)}, j <= max_order."""

    fn: OracleFn = field(repr=False)
    max_order: int
    growth: GrowthTag = GrowthTag.BOUNDED
    label: str = ""

    def eval(self, j: int, x: ArrayLike) -> FloatArray:
        if j < 0 or j > self.max_order:
            raise ContractError(
                f"oracle {self.label or '<anonymous>'} has max_order {self.max_order}; "
                f"derivative {j} requested"
            )
        return np.asarray(self.fn(j, np.asarray(x, dtype=float)), dtype=float)

    def value(self, x: float, j: int = 0) -> float:
        return float(self.eval(j, np.array([x]))[0])

    def derivative(self, n: int) -> DerivativeOracle:
        """Oracle for g^{(n)}."""
        if n > self.max_order:
            raise ContractError(f"cannot differentiate {n} times; max_order {self.max_order}")
        parent = self
        return DerivativeOracle(
            fn=lambda j, x: parent.eval(j + n, x),
            max_order=self.max_order - n,
            growth=self.growth,
            label=f"D^{n} {self.label}",
        )

    # -- common test functions -------------------------------------------

    @classmethod
    def constant(cls, c: float, max_order: int = 16) -> DerivativeOracle:
        return cls(
            fn=lambda j, x: np.full(x.shape, c if j == 0 else 0.0),
            max_order=max_order,
            label=f"const({c})",
        )

    @classmethod
    def polynomial(cls, coeffs: ArrayLike, max_order: int = 16) -> DerivativeOracle:
        poly = np.polynomial.Polynomial(coeffs)
        return cls(
            fn=lambda j, x: poly.deriv(j)(x) if j else poly(x),
            max_order=max_order,
            growth=GrowthTag.SUBEXPONENTIAL,
            label=f"poly{tuple(poly.coef)}",
        )

    @classmethod
    def exponential(cls, rate: float, max_order: int = 16) -> DerivativeOracle:
        growth = GrowthTag.EXPONENTIAL if rate >= 1.0 else GrowthTag.SUBEXPONENTIAL
        return cls(
            fn=lambda j, x: rate**j * np.exp(rate * x),
            max_order=max_order,
            growth=growth,
            label=f"exp({rate}x)",
        )

    @classmethod
    def cosine(cls, freq: float = 1.0, max_order: int = 16) -> DerivativeOracle:
        return cls(
            fn=lambda j, x: freq**j * np.cos(freq * x + 0.5 * math.pi * j),
            max_order=max_order,
            label=f"cos({freq}x)",
        )


def l1_power(h: DerivativeOracle, m: int) -> DerivativeOracle:
    """Oracle for (D^2 - D)^m h = sum_i binom(m, i) (-1)^(m-i) D^(m+i) h."""
    if m == 0:
        return h
    if h.max_order < 2 * m:
        raise ContractError(f"(D^2 - D)^{m} needs max_order >= {2 * m}; oracle has {h.max_order}")
    weights = [(math.comb(m, i) * (-1) ** (m - i), m + i) for i in range(m + 1)]

    def fn(j: int, x: FloatArray) -> FloatArray:
        return sum((w * h.eval(order + j, x) for w, order in weights), np.zeros(x.shape))

    return DerivativeOracle(
        fn=fn, max_order=h.max_order - 2 * m, growth=h.growth, label=f"L1^{m} {h.label}"
    )


# ---------------------------------------------------------------------------
# Multi-indices and iterated generators
# ---------------------------------------------------------------------------


class MultiIndex(NamedTuple):
    k0: int
    k1: int
    k2: int
    k3: int
    k4: int

    @property
    def size(self) -> int:
        return sum(self)

    @property
    def derivative_order(self) -> int:
        """l_k = k1 + 2 k2 + 2 k3."""
        return self.k1 + 2 * self.k2 + 2 * self.k3

    @property
    def multinomial(self) -> int:
        out = math.factorial(self.size)
        for part in self:
            out //= math.factorial(part)
        return out


def enumerate_multiindices(k: int) -> list[MultiIndex]:
    """All compositions of k into five nonnegative parts, lexicographic."""
    if not 0 <= k <= 6:
        raise ConfigError(f"multi-index order must satisfy 0 <= k <= 6; got {k}")
    return [
        MultiIndex(*parts)
        for parts in itertools.product(range(k + 1), repeat=5)
        if sum(parts) == k
    ]


def _expect(
    g: DerivativeOracle, order: int, x: FloatArray, atoms: FloatArray, probs: FloatArray
) -> FloatArray:
    """E g^{(order)}(x + S) for S distributed on atoms, vectorized over x."""
    out = np.empty(x.shape)
    step = max(1, _CHUNK // max(1, atoms.size))
    flat = x.ravel()
    res = out.ravel()
    for start in range(0, flat.size, step):
        block = flat[start : start + step]
        values = g.eval(order, block[:, None] + atoms[None, :])
        res[start : start + step] = values @ probs
    return res.reshape(x.shape)


def _leg_expectation(
    model: SplitLevyModel, g: DerivativeOracle, order: int, x: FloatArray, k3: int, k4: int
) -> FloatArray:
    v_atoms, v_probs = model.shift_law(k3)
    if k4 == 0:
        return _expect(g, order, x, v_atoms, v_probs)
    u_atoms, u_probs = model.jump_law(k4)
    total = np.zeros(x.shape)
    for u, q in zip(u_atoms, u_probs):
        total += q * _expect(g, order, x + u, v_atoms, v_probs)
    return total


def _iterate(
    model: SplitLevyModel,
    g: DerivativeOracle,
    k: int,
    x: FloatArray,
    kind: GeneratorKind,
) -> FloatArray:
    if k == 0:
        return g.eval(0, x)
    if g.max_order < 2 * k:
        raise ContractError(
            f"L^{k} needs an oracle with max_order >= {2 * k}; {g.label or 'oracle'} has "
            f"{g.max_order}"
        )
    b = model.constants
    total = np.zeros(x.shape)
    for idx in enumerate_multiindices(k):
        if kind is GeneratorKind.SMALL_JUMP and (idx.k0 or idx.k4):
            continue
        coef = float(idx.multinomial)
        for bi, ki in zip(b, idx):
            coef *= bi**ki
        if coef == 0.0:
            continue
        total += coef * _leg_expectation(model, g, idx.derivative_order, x, idx.k3, idx.k4)
    return total


def iterated_generator_at(
    model: SplitLevyModel,
    g: DerivativeOracle,
    k: int,
    x: float,
    kind: GeneratorKind = GeneratorKind.SMALL_JUMP,
) -> float:
    """L^k g(x) through the multi-index representation.

    Raises:
        ContractError: ``g`` does not provide 2k derivatives.
    """
    return float(_iterate(model, g, k, np.array([float(x)]), kind)[0])


def generator_oracle(
    model: SplitLevyModel,
    g: DerivativeOracle,
    kind: GeneratorKind = GeneratorKind.SMALL_JUMP,
    power: int = 1,
) -> DerivativeOracle:
    """Oracle for L^power g; derivatives commute with L (translation invariance)."""
    if g.max_order < 2 * power:
        raise ContractError(f"L^{power} needs max_order >= {2 * power}; oracle has {g.max_order}")
    return DerivativeOracle(
        fn=lambda j, x: _iterate(model, g.derivative(j), power, x, kind),
        max_order=g.max_order - 2 * power,
        growth=g.growth,
        label=f"L^{power} {g.label}",
    )


def apply_generator(
    model: SplitLevyModel,
    g: DerivativeOracle,
    y: float,
    kind: GeneratorKind = GeneratorKind.SMALL_JUMP,
) -> float:
    """L g(y) = b_eps g' + (sigma^2/2) g'' + b3 E g''(y + V) (+ large-jump legs for FULL)."""
    if g.max_order < 2:
        raise ContractError("the generator needs an oracle with max_order >= 2")
    x = np.array([float(y)])
    v_atoms, v_probs = model.shift_atoms
    value = model.b1 * g.eval(1, x) + model.b2 * g.eval(2, x)
    value = value + model.b3 * _expect(g, 2, x, v_atoms, v_probs)
    if kind is GeneratorKind.FULL:
        u_atoms, u_probs = model.jump_law(1)
        value = value + model.b0 * g.eval(0, x) + model.b4 * _expect(g, 0, x, u_atoms, u_probs)
    return float(value[0])


# ---------------------------------------------------------------------------
# Stochastic volatility
# ---------------------------------------------------------------------------


class SVKind(str, Enum):
    HESTON = "heston"
    EXP_OU = "exp_ou"
    CONSTANT = "constant"
    CUSTOM = "custom"


def _zero(y: FloatArray, j: int) -> FloatArray:
    return np.zeros_like(y)


def _linear(a: float, b: float) -> CoefficientFn:
    """y -> a + b y with derivatives."""

    def fn(y: FloatArray, j: int) -> FloatArray:
        if j == 0:
            return a + b * y
        return np.full(y.shape, b if j == 1 else 0.0)

    return fn


def _scaled_sqrt(scale: float) -> CoefficientFn:
    def fn(y: FloatArray, j: int) -> FloatArray:
        falling = float(np.prod([0.5 - i for i in range(j)]))
        with np.errstate(divide="ignore", invalid="ignore"):
            out = scale * falling * np.where(y > 0, y, np.nan) ** (0.5 - j)
        return np.where(y > 0, out, 0.0)

    return fn


def _scaled_exp(scale: float, rate: float) -> CoefficientFn:
    return lambda y, j: scale * rate**j * np.exp(rate * y)


def _square(fn: CoefficientFn) -> CoefficientFn:
    def sq(y: FloatArray, j: int) -> FloatArray:
        return sum(
            (math.comb(j, i) * fn(y, i) * fn(y, j - i) for i in range(j + 1)), np.zeros(y.shape)
        )

    return sq


@dataclass(frozen=True)
class SVModel:
    """Volatility factor dY = alpha(Y) dt + gamma(Y) dW2 driving dU = -sigma^2/2 dt + sigma dW1.

    ``sigma_squared`` and ``gamma_squared`` are kept separately so Heston's
    y and v^2 y stay polynomial on windows that cross y = 0.
    """

    kind: SVKind
    params: dict[str, float]
    y0: float
    sigma_fn: CoefficientFn = field(repr=False, compare=False)
    alpha_fn: CoefficientFn = field(repr=False, compare=False)
    gamma_fn: CoefficientFn = field(repr=False, compare=False)
    sigma_sq_fn: CoefficientFn = field(repr=False, compare=False)
    gamma_sq_fn: CoefficientFn = field(repr=False, compare=False)
    sigma_bound: float | None = None

    def sigma(self, y: ArrayLike, j: int = 0) -> FloatArray:
        return self.sigma_fn(np.asarray(y, dtype=float), j)

    def alpha(self, y: ArrayLike, j: int = 0) -> FloatArray:
        return self.alpha_fn(np.asarray(y, dtype=float), j)

    def gamma(self, y: ArrayLike, j: int = 0) -> FloatArray:
        return self.gamma_fn(np.asarray(y, dtype=float), j)

    def sigma_squared(self, y: ArrayLike, j: int = 0) -> FloatArray:
        return self.sigma_sq_fn(np.asarray(y, dtype=float), j)

    def gamma_squared(self, y: ArrayLike, j: int = 0) -> FloatArray:
        return self.gamma_sq_fn(np.asarray(y, dtype=float), j)

    @property
    def sigma0(self) -> float:
        return float(self.sigma(self.y0))

    @property
    def is_builtin(self) -> bool:
        return self.kind is not SVKind.CUSTOM

    @property
    def is_constant(self) -> bool:
        return self.kind is SVKind.CONSTANT

    def window(self) -> tuple[float, float]:
        w = max(0.5, abs(self.y0))
        return (self.y0 - w, self.y0 + w)

    def check_bounded(self) -> None:
        """Check 0 < sigma(y) <= M on the y-window used by the expansions."""
        if self.kind is SVKind.CONSTANT:
            return
        if not self.sigma0 > 0.0:
            raise ModelConditionError(f"requires 0 < sigma(y0); got sigma(y0) = {self.sigma0}")
        lo, hi = self.window()
        sampled = np.sqrt(np.maximum(self.sigma_squared(np.linspace(lo, hi, 257)), 0.0))
        if not np.all(np.isfinite(sampled)):
            raise ModelConditionError(
                "requires 0 < sigma(y) <= M; sigma is not finite on the window"
            )
        if self.sigma_bound is not None and sampled.max() > self.sigma_bound:
            raise ModelConditionError(
                f"requires 0 < sigma(y) <= M = {self.sigma_bound:g}; "
                f"sigma reaches {sampled.max():.4g} on [{lo:g}, {hi:g}]"
            )

    # -- constructors -------------------------------------------------------

    @classmethod
    def heston(cls, chi: float, theta: float, v: float, y0: float) -> SVModel:
        """sigma = sqrt(y), alpha = chi (theta - y), gamma = v sqrt(y)."""
        if y0 <= 0.0:
            raise ConfigError(f"Heston requires y0 > 0; got {y0}")
        return cls(
            kind=SVKind.HESTON,
            params={"chi": chi, "theta": theta, "v": v},
            y0=y0,
            sigma_fn=_scaled_sqrt(1.0),
            alpha_fn=_linear(chi * theta, -chi),
            gamma_fn=_scaled_sqrt(v),
            sigma_sq_fn=_linear(0.0, 1.0),
            gamma_sq_fn=_linear(0.0, v * v),
        )

    @classmethod
    def exp_ou(cls, chi: float, theta: float, v: float, y0: float) -> SVModel:
        """sigma = e^y, alpha = chi (theta - y), gamma = v."""
        return cls(
            kind=SVKind.EXP_OU,
            params={"chi": chi, "theta": theta, "v": v},
            y0=y0,
            sigma_fn=_scaled_exp(1.0, 1.0),
            alpha_fn=_linear(chi * theta, -chi),
            gamma_fn=_linear(v, 0.0),
            sigma_sq_fn=_scaled_exp(1.0, 2.0),
            gamma_sq_fn=_linear(v * v, 0.0),
        )

    @classmethod
    def constant(cls, sigma0: float) -> SVModel:
        if sigma0 < 0.0:
            raise ConfigError(f"constant volatility requires sigma0 >= 0; got {sigma0}")
        return cls(
            kind=SVKind.CONSTANT,
            params={"sigma0": sigma0},
            y0=0.0,
            sigma_fn=_linear(sigma0, 0.0),
            alpha_fn=_zero,
            gamma_fn=_zero,
            sigma_sq_fn=_linear(sigma0 * sigma0, 0.0),
            gamma_sq_fn=_zero,
            sigma_bound=sigma0,
        )

    @classmethod
    def custom(
        cls,
        sigma: CoefficientFn,
        alpha: CoefficientFn,
        gamma: CoefficientFn,
        y0: float,
        sigma_bound: float | None = None,
    ) -> SVModel:
        """User coefficients; each callable maps (y, j) to the j-th y-derivative."""
        return cls(
            kind=SVKind.CUSTOM,
            params={},
            y0=y0,
            sigma_fn=sigma,
            alpha_fn=alpha,
            gamma_fn=gamma,
            sigma_sq_fn=_square(sigma),
            gamma_sq_fn=_square(gamma),
            sigma_bound=sigma_bound,
        )


@dataclass(frozen=True)
class SVCoefficientTable:
    """B_j^k(y0) for 0 <= j <= k <= k_max and their Chebyshev representations."""

    k_max: int
    y0: float
    values: FloatArray = field(repr=False)
    series: tuple[tuple[Chebyshev, ...], ...] = field(repr=False)
    closed_forms: dict[tuple[int, int], float] = field(default_factory=dict)

    def B(self, j: int, k: int) -> float:
        if not 0 <= k <= self.k_max:
            raise ContractError(f"B^{k} outside the table (k_max = {self.k_max})")
        if not 0 <= j <= k:
            return 0.0
        return float(self.values[k, j])

    def function(self, j: int, k: int) -> Chebyshev:
        return self.series[k][j]


def _chebyshev(
    fn: Callable[[FloatArray], FloatArray], window: tuple[float, float], deg: int, name: str
) -> Chebyshev:
    series = Chebyshev.interpolate(fn, deg, domain=list(window))
    coef = np.abs(series.coef)
    scale = max(coef.max(), 1e-300)
    tail = coef[-4:].max()
    if tail > 1e-10 * scale:
        raise NumericError(
            f"Chebyshev window {window} too small for spectral accuracy of {name}; "
            "widen the window or smooth the coefficient",
            tail / scale,
        )
    logger.debug("chebyshev %s: tail ratio %.2e", name, tail / scale)
    return series


def sv_coefficients(sv: SVModel, k_max: int = 4, deg: int = 64) -> SVCoefficientTable:
    """Build B_j^k with L2 = (gamma^2/2) D^2 + alpha D on a Chebyshev window around y0."""
    if k_max < 0:
        raise ConfigError(f"k_max must be >= 0; got {k_max}")
    if k_max > 4:
        logger.warning("sv_coefficients with k_max=%d > 4: high orders are noise-dominated", k_max)
    window = sv.window()
    half_sig2 = _chebyshev(lambda y: 0.5 * sv.sigma_squared(y), window, deg, "sigma^2")
    alpha = _chebyshev(lambda y: sv.alpha(y), window, deg, "alpha")
    half_gam2 = _chebyshev(lambda y: 0.5 * sv.gamma_squared(y), window, deg, "gamma^2")

    def trim(series: Chebyshev) -> Chebyshev:
        return series.truncate(deg + 1) if series.degree() > deg else series

    def l2(f: Chebyshev) -> Chebyshev:
        return trim(half_gam2 * f.deriv(2) + alpha * f.deriv(1))

    zero = Chebyshev([0.0], domain=list(window))
    rows: list[tuple[Chebyshev, ...]] = [(Chebyshev([1.0], domain=list(window)),)]
    for k in range(1, k_max + 1):
        prev = rows[-1]

        def prev_at(j: int, prev: tuple[Chebyshev, ...] = prev) -> Chebyshev:
            return prev[j] if 0 <= j < len(prev) else zero

        row = [zero]
        for j in range(1, k + 1):
            row.append(trim(l2(prev_at(j)) + half_sig2 * prev_at(j - 1)))
        rows.append(tuple(row))

    values = np.zeros((k_max + 1, k_max + 1))
    for k, row in enumerate(rows):
        for j, series in enumerate(row):
            values[k, j] = series(sv.y0)
    values.setflags(write=False)

    closed: dict[tuple[int, int], float] = {}
    if sv.is_builtin:
        closed = closed_form_coefficients(sv)
    return SVCoefficientTable(
        k_max=k_max, y0=sv.y0, values=values, series=tuple(rows), closed_forms=closed
    )


def closed_form_coefficients(sv: SVModel) -> dict[tuple[int, int], float]:
    """B_1^1, B_2^2 and B_1^2 at y0 from the generic second-order formulas.

    B_1^2 = (gamma^2/2)(sigma sigma'' + sigma'^2) + alpha sigma sigma', written
    through derivatives of sigma^2.
    """
    y = sv.y0
    s2 = float(sv.sigma_squared(y))
    ds2 = float(sv.sigma_squared(y, 1))
    d2s2 = float(sv.sigma_squared(y, 2))
    g2 = float(sv.gamma_squared(y))
    a = float(sv.alpha(y))
    return {
        (0, 0): 1.0,
        (1, 1): 0.5 * s2,
        (2, 2): 0.25 * s2 * s2,
        (1, 2): 0.25 * g2 * d2s2 + 0.5 * a * ds2,
    }
