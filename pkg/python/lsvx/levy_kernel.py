"""Levy densities, the smooth small/large jump split, and convolution grids.

A :class:`LevyDensity` carries a jump density ``s`` with analytic derivatives.
:func:`split_levy` cuts it with the smooth bump ``c_eps`` into a small-jump
part (kept inside the generator) and a compound Poisson part with density
``sbar = (1 - c_eps) s``, and precomputes the convolution powers
``sbar^{*k}`` together with their derivatives on a uniform mesh.

Usage:
    density = LevyDensity.kou(lam=1.0, p=0.6, eta1=5.0, eta2=10.0)
    model = split_levy(density, epsilon=0.1)
    model.lambda_eps               # intensity of the large jumps
    model.power(2).tail_integral(0.5)   # int_{0.5}^inf sbar^{*2}
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import warnings
from collections.abc import Callable
from dataclasses import dataclass, field, replace
from enum import Enum
from functools import cached_property, lru_cache
from pathlib import Path
from typing import Any

import numpy as np
from numpy.polynomial import Polynomial
from numpy.polynomial import hermite_e
from numpy.typing import ArrayLike, NDArray
from scipy import integrate, signal, special
from scipy.interpolate import CubicHermiteSpline, PchipInterpolator

from lsvx.errors import ConfigError, ContractError, ModelConditionError, NumericError

logger = logging.getLogger(__name__)

FloatArray = NDArray[np.float64]
DensityFn = Callable[[FloatArray, int], FloatArray]

# Exponential factors below e^{-_EXP_CUTOFF} are flushed to zero.
_EXP_CUTOFF = 700.0
_MAX_POINTS_LOG2 = 18
# Slowest exponential decay accepted when extrapolating grid functions past the mesh.
_MIN_TAIL_RATE = 0.5


class Activity(str, Enum):
    FINITE = "finite"
    INFINITE = "infinite"


class DensityKind(str, Enum):
    KOU = "kou"
    MERTON = "merton"
    CGMY = "cgmy"
    CUSTOM = "custom"
    TILTED = "tilted"


# ---------------------------------------------------------------------------
# Quadrature helpers
# ---------------------------------------------------------------------------


def quad_checked(
    func: Callable[[float], float],
    a: float,
    b: float,
    *,
    what: str = "integral",
    epsabs: float = 1e-14,
    epsrel: float = 1e-11,
    tol: float = 1e-9,
) -> float:
    """Adaptive quadrature that raises NumericError instead of warning."""
    if a == b:
        return 0.0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        value, err = integrate.quad(func, a, b, limit=400, epsabs=epsabs, epsrel=epsrel)
    if not math.isfinite(value) or err > max(tol, tol * abs(value)):
        raise NumericError(f"quadrature for {what} on [{a:g}, {b:g}] did not converge", err)
    return float(value)


def exp_times(a: float, s: float) -> float:
    """e^a * s as exp(a + log|s|); e^a alone may overflow where the product is tiny."""
    if s == 0.0:
        return 0.0
    log_mag = a + math.log(abs(s))
    if log_mag < -_EXP_CUTOFF:
        return 0.0
    if log_mag > _EXP_CUTOFF:
        return math.copysign(math.inf, s)
    return math.copysign(math.exp(log_mag), s)


def singular_quad(
    func: Callable[[float], float],
    a: float,
    index: float,
    *,
    what: str = "integral",
) -> float:
    """Integrate ``func`` over [0, a] when ``func(w)`` behaves like ``w^(1 - index)``.

    The substitution ``w = a * xi^(1 / (2 - index))`` turns the integrand into
    a bounded smooth function of ``xi`` on [0, 1].
    """
    power = 1.0 / (2.0 - index)

    def transformed(xi: float) -> float:
        if xi <= 0.0:
            return 0.0
        w = a * xi**power
        return func(w) * a * power * xi ** (power - 1.0)

    return quad_checked(transformed, 0.0, 1.0, what=what)


def _upper_gamma(a: float, x: float) -> float:
    """Upper incomplete gamma function for any real ``a`` and ``x > 0``."""
    if a > 0.0:
        return float(special.gammaincc(a, x) * special.gamma(a))
    if a == 0.0:
        return float(special.exp1(x))
    return (_upper_gamma(a + 1.0, x) - x**a * math.exp(-x)) / a


# ---------------------------------------------------------------------------
# Truncation
# ---------------------------------------------------------------------------


@lru_cache(maxsize=1)
def _bump_polynomials(n_max: int = 24) -> tuple[Polynomial, ...]:
    """P_n with d^n/dx^n exp(-1/x) = exp(-1/x) P_n(1/x)."""
    polys = [Polynomial([1.0])]
    u_squared = Polynomial([0.0, 0.0, 1.0])
    for _ in range(n_max):
        prev = polys[-1]
        polys.append(u_squared * (prev - prev.deriv()))
    return tuple(polys)


@dataclass(frozen=True)
class TruncationScheme:
    """Smooth symmetric bump with 1_{|z|<=eps/2} <= c_eps <= 1_{|z|<=eps}.

    c_eps(z) = rho(eps - |z|) / (rho(eps - |z|) + rho(|z| - eps/2)),
    rho(x) = exp(-1/x) for x > 0 and 0 otherwise.
    """

    epsilon: float

    def c_eps(self, z: ArrayLike, j: int = 0) -> FloatArray:
        """j-th derivative of c_eps at ``z``."""
        return self.c_eps_all(z, j)[j]

    def cbar_eps(self, z: ArrayLike, j: int = 0) -> FloatArray:
        """j-th derivative of 1 - c_eps at ``z``."""
        c = self.c_eps(z, j)
        return 1.0 - c if j == 0 else -c

    def c_eps_all(self, z: ArrayLike, j_max: int) -> FloatArray:
        """Rows 0..j_max of c_eps derivatives, shape (j_max + 1, *z.shape)."""
        arr = np.asarray(z, dtype=float)
        rows = self._derivatives(arr.ravel(), j_max)
        return rows.reshape((j_max + 1, *arr.shape))

    def _derivatives(self, z: FloatArray, j_max: int) -> FloatArray:
        polys = _bump_polynomials(max(24, j_max))
        eps = self.epsilon
        t = np.abs(z)
        out = np.zeros((j_max + 1, *z.shape))
        out[0] = np.where(t <= eps / 2, 1.0, 0.0)

        band = (t > eps / 2) & (t < eps)
        if not band.any():
            return out
        tb = t[band]
        ua = np.minimum(1.0 / (eps - tb), 1e6)
        ub = np.minimum(1.0 / (tb - eps / 2), 1e6)
        # log c and log(1 - c) from the logistic form c = 1 / (1 + exp(ua - ub))
        log_c = -np.logaddexp(0.0, ua - ub)
        log_cbar = -np.logaddexp(0.0, ub - ua)
        c = np.exp(log_c)

        # alpha_n = A^{(n)}/S and beta_n = B^{(n)}/S as functions of t = |z|
        sig = [np.ones_like(tb)]
        cd = [c]
        with np.errstate(over="ignore", invalid="ignore"):
            for n in range(1, j_max + 1):
                alpha = (-1.0) ** n * polys[n](ua) * c
                beta = polys[n](ub) * np.exp(log_cbar)
                alpha = np.where(np.isfinite(alpha), alpha, 0.0)
                beta = np.where(np.isfinite(beta), beta, 0.0)
                sig.append(alpha + beta)
                acc = alpha.copy()
                for k in range(n):
                    acc -= math.comb(n, k) * cd[k] * sig[n - k]
                cd.append(acc)

        sign = np.where(z[band] < 0, -1.0, 1.0)
        for n in range(j_max + 1):
            out[n][band] = cd[n] * sign**n
        return out


def build_truncation(epsilon: float) -> TruncationScheme:
    """Build the canonical smooth truncation for ``0 < epsilon < 1``."""
    if not 0.0 < epsilon < 1.0:
        raise ConfigError(f"truncation requires 0 < epsilon < 1; got epsilon = {epsilon}")
    return TruncationScheme(epsilon=float(epsilon))


# ---------------------------------------------------------------------------
# Levy densities
# ---------------------------------------------------------------------------


def _kou_derivative(lam: float, p: float, eta1: float, eta2: float) -> DensityFn:
    def fn(z: FloatArray, j: int) -> FloatArray:
        out = np.zeros_like(z)
        pos, neg = z > 0, z < 0
        out[pos] = lam * p * eta1 * (-eta1) ** j * np.exp(-eta1 * z[pos])
        out[neg] = lam * (1.0 - p) * eta2 * eta2**j * np.exp(eta2 * z[neg])
        return out

    return fn


def _merton_derivative(lam: float, m: float, delta: float) -> DensityFn:
    def fn(z: FloatArray, j: int) -> FloatArray:
        x = (z - m) / delta
        coeffs = np.zeros(j + 1)
        coeffs[j] = 1.0
        pdf = np.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)
        return lam / delta ** (j + 1) * (-1.0) ** j * hermite_e.hermeval(x, coeffs) * pdf

    return fn


def _cgmy_derivative(c: float, g: float, m: float, y: float) -> DensityFn:
    a = -1.0 - y

    def side(t: FloatArray, rate: float, j: int) -> FloatArray:
        total = np.zeros_like(t)
        for i in range(j + 1):
            falling = float(special.poch(a - i + 1.0, i))
            total += math.comb(j, i) * (-rate) ** (j - i) * falling * t ** (a - i)
        return c * total * np.exp(-rate * t)

    def fn(z: FloatArray, j: int) -> FloatArray:
        out = np.zeros_like(z)
        pos, neg = z > 0, z < 0
        out[pos] = side(z[pos], m, j)
        out[neg] = (-1.0) ** j * side(-z[neg], g, j)
        return out

    return fn


@dataclass(frozen=True)
class LevyDensity:
    """A Levy jump density ``s`` with analytic derivatives.

    Use the ``kou``, ``merton``, ``cgmy`` and ``custom`` constructors; they
    validate the parameters and the exponential-moment condition c > 2.
    """

    kind: DensityKind
    params: dict[str, float]
    exp_moment_bound: float
    activity: Activity
    blumenthal_index: float
    max_order: int
    derivative_fn: DensityFn = field(repr=False, compare=False)
    base: LevyDensity | None = field(default=None, repr=False, compare=False)

    def evaluate(self, z: ArrayLike, j: int = 0) -> FloatArray:
        """j-th derivative of s at ``z``; singular points evaluate to zero."""
        if j > self.max_order:
            raise ContractError(
                f"{self.kind.value} density provides derivatives up to order "
                f"{self.max_order}; order {j} requested"
            )
        arr = np.asarray(z, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            out = np.asarray(self.derivative_fn(np.atleast_1d(arr).copy(), j), dtype=float)
        out = np.where(np.isfinite(out), out, 0.0)
        return out.reshape(arr.shape)

    __call__ = evaluate

    def scalar(self, z: float, j: int = 0) -> float:
        return float(self.evaluate(np.array([z]), j)[0])

    @property
    def total_mass(self) -> float:
        """Total jump intensity; infinite for infinite activity."""
        if self.kind is DensityKind.KOU or self.kind is DensityKind.MERTON:
            return self.params["lam"]
        if self.activity is Activity.INFINITE:
            return math.inf
        return levy_tail_mass(self, 1e-300) + levy_tail_mass(self, -1e-300)

    @property
    def cache_key(self) -> str | None:
        """Stable identifier for builtin parameterizations; None for custom."""
        if self.kind is DensityKind.CUSTOM:
            return None
        if self.kind is DensityKind.TILTED:
            inner = self.base.cache_key if self.base is not None else None
            return None if inner is None else f"tilted({inner})"
        return json.dumps({"kind": self.kind.value, **self.params}, sort_keys=True)

    # -- constructors -------------------------------------------------------

    @classmethod
    def kou(cls, lam: float, p: float, eta1: float, eta2: float) -> LevyDensity:
        """Double-exponential lam (p eta1 e^{-eta1 z} 1_{z>0} + q eta2 e^{eta2 z} 1_{z<0})."""
        if lam <= 0.0 or not 0.0 <= p <= 1.0:
            raise ConfigError(f"Kou requires lam > 0 and p in [0, 1]; got lam={lam}, p={p}")
        if eta1 <= 2.0 or eta2 <= 2.0:
            raise ModelConditionError(
                f"Kou requires eta1 > 2 and eta2 > 2 (c > 2); got eta1={eta1}, eta2={eta2}"
            )
        return cls(
            kind=DensityKind.KOU,
            params={"lam": lam, "p": p, "eta1": eta1, "eta2": eta2},
            exp_moment_bound=min(eta1, eta2),
            activity=Activity.FINITE,
            blumenthal_index=0.0,
            max_order=8,
            derivative_fn=_kou_derivative(lam, p, eta1, eta2),
        )

    @classmethod
    def merton(cls, lam: float, m: float, delta: float) -> LevyDensity:
        """Gaussian jumps N(m, delta^2) arriving at rate lam."""
        if lam <= 0.0 or delta <= 0.0:
            raise ConfigError(
                f"Merton requires lam > 0 and delta > 0; got lam={lam}, delta={delta}"
            )
        return cls(
            kind=DensityKind.MERTON,
            params={"lam": lam, "m": m, "delta": delta},
            exp_moment_bound=math.inf,
            activity=Activity.FINITE,
            blumenthal_index=0.0,
            max_order=8,
            derivative_fn=_merton_derivative(lam, m, delta),
        )

    @classmethod
    def cgmy(cls, c: float, g: float, m: float, y: float) -> LevyDensity:
        """Tempered stable density C e^{-G|z|}|z|^{-1-Y} (z<0), C e^{-Mz} z^{-1-Y} (z>0)."""
        if c <= 0.0:
            raise ConfigError(f"CGMY requires C > 0; got C={c}")
        if not 0.0 < y < 2.0:
            raise ModelConditionError(f"CGMY requires Y in (0, 2); got Y={y}")
        if g <= 2.0 or m <= 2.0:
            raise ModelConditionError(f"CGMY requires G > 2 and M > 2 (c > 2); got G={g}, M={m}")
        return cls(
            kind=DensityKind.CGMY,
            params={"C": c, "G": g, "M": m, "Y": y},
            exp_moment_bound=min(g, m),
            activity=Activity.INFINITE,
            blumenthal_index=y,
            max_order=8,
            derivative_fn=_cgmy_derivative(c, g, m, y),
        )

    @classmethod
    def custom(
        cls,
        derivative: DensityFn,
        exp_moment_bound: float,
        activity: Activity = Activity.INFINITE,
        blumenthal_index: float = 0.0,
        max_order: int = 8,
    ) -> LevyDensity:
        """Wrap a user density; ``derivative(z, j)`` must return s^{(j)}(z)."""
        if exp_moment_bound <= 2.0:
            raise ModelConditionError(f"density requires c > 2; got c = {exp_moment_bound}")
        if not 0.0 <= blumenthal_index < 2.0:
            raise ConfigError(f"blumenthal index must lie in [0, 2); got {blumenthal_index}")
        return cls(
            kind=DensityKind.CUSTOM,
            params={},
            exp_moment_bound=exp_moment_bound,
            activity=Activity(activity),
            blumenthal_index=blumenthal_index,
            max_order=max_order,
            derivative_fn=derivative,
        )

    def tilted(self) -> LevyDensity:
        """Exponentially tilted density s*(z) = e^z s(z)."""
        base = self

        def fn(z: FloatArray, j: int) -> FloatArray:
            total = np.zeros_like(z)
            for i in range(j + 1):
                total += math.comb(j, i) * base.derivative_fn(z, i)
            return np.exp(z) * total

        return LevyDensity(
            kind=DensityKind.TILTED,
            params=dict(self.params),
            exp_moment_bound=self.exp_moment_bound - 1.0,
            activity=self.activity,
            blumenthal_index=self.blumenthal_index,
            max_order=self.max_order,
            derivative_fn=fn,
            base=self,
        )


def levy_tail_mass(density: LevyDensity, z: float) -> float:
    """nu([z, inf)) for z > 0 and nu((-inf, z]) for z < 0."""
    if z == 0.0:
        raise ConfigError("levy_tail_mass requires z != 0")
    prm = density.params
    if density.kind is DensityKind.KOU:
        if z > 0:
            return prm["lam"] * prm["p"] * math.exp(-prm["eta1"] * z)
        return prm["lam"] * (1.0 - prm["p"]) * math.exp(prm["eta2"] * z)
    if density.kind is DensityKind.MERTON:
        x = (z - prm["m"]) / prm["delta"]
        return prm["lam"] * float(special.ndtr(-x) if z > 0 else special.ndtr(x))
    if density.kind is DensityKind.CGMY:
        rate = prm["M"] if z > 0 else prm["G"]
        y = prm["Y"]
        return prm["C"] * rate**y * _upper_gamma(-y, rate * abs(z))
    if z > 0:
        return quad_checked(lambda u: density.scalar(u), z, math.inf, what="tail mass")
    return quad_checked(lambda u: density.scalar(u), -math.inf, z, what="tail mass")


def martingale_drift(density: LevyDensity) -> float:
    """b = -int (e^z - 1 - z 1_{|z|<=1}) nu(dz), making e^X a martingale."""
    if density.exp_moment_bound <= 1.0:
        raise ModelConditionError("martingale drift requires int_{z>1} e^z nu(dz) < inf (c > 1)")
    index = density.blumenthal_index

    def near(w: float) -> float:
        return (math.expm1(w) - w) * density.scalar(w) + (math.expm1(-w) + w) * density.scalar(-w)

    inner = singular_quad(near, 1.0, index, what="martingale drift")

    def far(u: float) -> float:
        s = density.scalar(u)
        return exp_times(u, s) - s

    right = quad_checked(far, 1.0, math.inf, what="drift")
    left = quad_checked(far, -math.inf, -1.0, what="drift")
    return -(inner + right + left)


# ---------------------------------------------------------------------------
# Mesh and grid functions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Mesh:
    """Symmetric uniform mesh on [-radius, radius] with 2^points_log2 + 1 nodes."""

    radius: float
    points_log2: int

    @property
    def n_points(self) -> int:
        return 2**self.points_log2 + 1

    @property
    def h(self) -> float:
        return 2.0 * self.radius / 2**self.points_log2

    @cached_property
    def x(self) -> FloatArray:
        return np.linspace(-self.radius, self.radius, self.n_points)


@dataclass(frozen=True)
class GridConfig:
    """Mesh parameters for :func:`split_levy`.

    Attributes:
        radius: Fixed half-width L; chosen from a Chernoff bound when None.
        points_log2: Fixed mesh exponent; chosen from ``band_points`` when None.
        band_points: Target number of nodes across the [eps/2, eps] band.
        tail_tol: Mass allowed beyond the mesh for the highest power.
        k_max: Highest convolution power kept.
        deriv_max: Highest derivative order of each power that is evaluated.
    """

    radius: float | None = None
    points_log2: int | None = None
    band_points: int = 64
    tail_tol: float = 1e-12
    k_max: int = 4
    deriv_max: int = 7


@dataclass(frozen=True)
class GridFunction:
    """Cubic Hermite interpolant of sampled values and exact slopes.

    Beyond each end of the mesh the function continues as the exponential
    ``f(+-L) e^{-rate (|x| - L)}`` whose log-slope matches the end point;
    an end whose log-slope decays slower than _MIN_TAIL_RATE continues as zero.
    Tail integrals include these exponential pieces.
    """

    mesh: Mesh
    values: FloatArray
    slopes: FloatArray

    @cached_property
    def _spline(self) -> CubicHermiteSpline:
        return CubicHermiteSpline(self.mesh.x, self.values, self.slopes, extrapolate=False)

    @cached_property
    def _antiderivative(self) -> Any:
        return self._spline.antiderivative()

    @cached_property
    def tail_rates(self) -> tuple[float, float]:
        """Decay rates (left, right) of the extrapolated tails; 0 means no tail."""
        rates = []
        for idx, outward in ((0, -1.0), (-1, 1.0)):
            value, slope = float(self.values[idx]), float(self.slopes[idx])
            rate = -outward * slope / value if value != 0.0 else 0.0
            rates.append(rate if math.isfinite(rate) and rate >= _MIN_TAIL_RATE else 0.0)
        return rates[0], rates[1]

    def _tail_mass(self, side: int, distance: FloatArray) -> FloatArray:
        """int of the side's tail from L + distance outward (side 0 left, 1 right)."""
        rate = self.tail_rates[side]
        if rate == 0.0:
            return np.zeros_like(distance)
        end = float(self.values[0 if side == 0 else -1])
        return end / rate * np.exp(-rate * distance)

    @cached_property
    def total(self) -> float:
        """Integral over the real line, extrapolated tails included."""
        r = self.mesh.radius
        inner = float(self._antiderivative(r) - self._antiderivative(-r))
        zero = np.zeros(1)
        return inner + float(self._tail_mass(0, zero)[0] + self._tail_mass(1, zero)[0])

    def __call__(self, x: ArrayLike) -> FloatArray:
        arr = np.asarray(x, dtype=float)
        r = self.mesh.radius
        inside = np.abs(arr) <= r
        out = np.zeros(arr.shape)
        if np.any(inside):
            out[inside] = self._spline(arr[inside])
        left_rate, right_rate = self.tail_rates
        left, right = arr < -r, arr > r
        if left_rate > 0.0 and np.any(left):
            out[left] = self.values[0] * np.exp(-left_rate * (-r - arr[left]))
        if right_rate > 0.0 and np.any(right):
            out[right] = self.values[-1] * np.exp(-right_rate * (arr[right] - r))
        return out

    def tail_integral(self, x: ArrayLike) -> FloatArray:
        """int_x^inf f(u) du."""
        arr = np.asarray(x, dtype=float)
        r = self.mesh.radius
        clipped = np.clip(arr, -r, r)
        inner = self._antiderivative(r) - self._antiderivative(clipped)
        right = self._tail_mass(1, np.maximum(arr - r, 0.0))
        beyond = self._tail_mass(0, np.maximum(-r - arr, 0.0))
        left = self._tail_mass(0, np.zeros_like(arr)) - beyond
        return np.asarray(inner + right + left, dtype=float)

    def exp_weighted(self) -> GridFunction:
        """The grid function u -> e^u f(u)."""
        ex = np.exp(self.mesh.x)
        return GridFunction(self.mesh, ex * self.values, ex * (self.values + self.slopes))


# ---------------------------------------------------------------------------
# Split model
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SplitLevyModel:
    """The eps-split of a Levy density and its precomputed grids.

    Immutable once built; cached properties are filled lazily and are safe
    to share between readers.
    """

    density: LevyDensity
    trunc: TruncationScheme
    lambda_eps: float
    b: float
    b_eps: float
    b3: float
    sigma_sq: float = 0.0
    mesh: Mesh | None = None
    powers: tuple[FloatArray, ...] = field(default=(), repr=False)

    @property
    def epsilon(self) -> float:
        return self.trunc.epsilon

    @property
    def b0(self) -> float:
        return -self.lambda_eps

    @property
    def b1(self) -> float:
        return self.b_eps

    @property
    def b2(self) -> float:
        return 0.5 * self.sigma_sq

    @property
    def b4(self) -> float:
        return self.lambda_eps

    @property
    def constants(self) -> tuple[float, float, float, float, float]:
        return (self.b0, self.b1, self.b2, self.b3, self.b4)

    @property
    def k_max(self) -> int:
        return len(self.powers)

    @property
    def deriv_max(self) -> int:
        return self.powers[0].shape[0] - 2 if self.powers else -1

    def with_diffusion(self, sigma0: float) -> SplitLevyModel:
        """Add a Brownian part sigma0 W, keeping e^X a martingale."""
        if sigma0 < 0.0:
            raise ConfigError(f"sigma0 must be >= 0; got {sigma0}")
        shift = 0.5 * sigma0**2 - 0.5 * self.sigma_sq
        return replace(
            self, sigma_sq=sigma0**2, b=self.b - shift, b_eps=self.b_eps - shift
        )

    def sbar(self, z: ArrayLike, j: int = 0) -> FloatArray:
        """j-th derivative of sbar = (1 - c_eps) s."""
        arr = np.asarray(z, dtype=float)
        return _sbar_rows(self.density, self.trunc, arr.ravel(), j)[j].reshape(arr.shape)

    def power(self, p: int, d: int = 0) -> GridFunction:
        """(sbar^{*p})^{(d)} as a grid function."""
        if self.mesh is None or not self.powers:
            raise ContractError("convolution grids not built; call convolve_powers first")
        if not 1 <= p <= self.k_max:
            raise ContractError(f"convolution power {p} outside 1..{self.k_max}")
        if not 0 <= d <= self.deriv_max:
            raise ContractError(
                f"derivative order {d} of sbar^{{*{p}}} exceeds precomputed {self.deriv_max}"
            )
        rows = self.powers[p - 1]
        return GridFunction(self.mesh, rows[d], rows[d + 1])

    @cached_property
    def exp_mass(self) -> float:
        """M = int e^u sbar(u) du."""
        return self.power(1).exp_weighted().total

    @cached_property
    def shift_atoms(self) -> tuple[FloatArray, FloatArray]:
        """Atoms (v, prob) of V = beta * w under (1/b3) w^2 c_eps nu(dw) (1 - beta) d beta."""
        return _small_jump_atoms(self)

    @cached_property
    def _law_cache(self) -> dict[tuple[str, int], tuple[FloatArray, FloatArray]]:
        return {}

    def shift_law(self, k: int) -> tuple[FloatArray, FloatArray]:
        """Atoms and probabilities of V_1 + ... + V_k for iid small-jump shifts.

        Two or more shifts are binned onto a lattice of spacing eps/2048
        (mass and mean preserving) and convolved.
        """
        if k == 0:
            return np.zeros(1), np.ones(1)
        if k == 1:
            return self.shift_atoms
        key = ("shift", k)
        if key not in self._law_cache:
            v, p = self.shift_atoms
            spacing = self.epsilon / 2048
            pos = v / spacing
            lo = np.floor(pos).astype(np.int64)
            frac = pos - lo
            offset = int(lo.min())
            hist = np.zeros(int(lo.max()) - offset + 2)
            np.add.at(hist, lo - offset, p * (1.0 - frac))
            np.add.at(hist, lo - offset + 1, p * frac)
            law = hist
            for _ in range(k - 1):
                law = np.convolve(law, hist)
            atoms = (np.arange(law.size) + k * offset) * spacing
            keep = law > 0.0
            self._law_cache[key] = (atoms[keep], law[keep] / law[keep].sum())
        return self._law_cache[key]

    def jump_law(self, k: int, nodes: int = 64) -> tuple[FloatArray, FloatArray]:
        """Atoms and probabilities of U_1 + ... + U_k, U_i ~ sbar / lambda_eps.

        Tensor midpoint inverse-CDF nodes for k <= 2, scrambled Sobol points
        (2^14, fixed seed) beyond.
        """
        if k == 0:
            return np.zeros(1), np.ones(1)
        key = ("jump", k)
        if key not in self._law_cache:
            quantile = self.jump_quantile
            if k <= 2:
                base = quantile((np.arange(nodes) + 0.5) / nodes)
                atoms = base
                for _ in range(k - 1):
                    atoms = np.add.outer(atoms, base).ravel()
            else:
                from scipy.stats import qmc

                points = qmc.Sobol(d=k, scramble=True, seed=0).random_base2(14)
                atoms = quantile(points).sum(axis=1)
            probs = np.full(atoms.size, 1.0 / atoms.size)
            self._law_cache[key] = (np.asarray(atoms, dtype=float), probs)
        return self._law_cache[key]

    @cached_property
    def jump_quantile(self) -> PchipInterpolator:
        """Inverse CDF of the large-jump law sbar / lambda_eps."""
        assert self.mesh is not None
        x = self.mesh.x
        cdf = np.maximum.accumulate(1.0 - self.power(1).tail_integral(x) / self.lambda_eps)
        keep = np.concatenate(([True], np.diff(cdf) > 1e-14))
        cdf, x = cdf[keep], x[keep]
        return PchipInterpolator(cdf, x, extrapolate=True)


def _sbar_rows(
    density: LevyDensity, trunc: TruncationScheme, z: FloatArray, j_max: int
) -> FloatArray:
    """Rows 0..j_max of sbar derivatives (Leibniz on cbar * s)."""
    crow = trunc.c_eps_all(z, j_max)
    cbar = -crow
    cbar[0] = 1.0 - crow[0]
    active = np.abs(z) > trunc.epsilon / 2
    srows = np.zeros((j_max + 1, *z.shape))
    for i in range(j_max + 1):
        srows[i][active] = density.evaluate(z[active], i)
    out = np.zeros((j_max + 1, *z.shape))
    for i in range(j_max + 1):
        for k in range(i + 1):
            out[i] += math.comb(i, k) * cbar[k] * srows[i - k]
    return out


def _small_jump_atoms(model: SplitLevyModel) -> tuple[FloatArray, FloatArray]:
    eps = model.epsilon
    power = 1.0 / (2.0 - model.density.blumenthal_index)
    xi, wxi = np.polynomial.legendre.leggauss(64)
    xi, wxi = 0.5 * (xi + 1.0), 0.5 * wxi

    inner_w = 0.5 * eps * xi**power
    inner_jac = 0.5 * eps * power * xi ** (power - 1.0) * wxi
    band_w = 0.5 * eps + 0.5 * eps * xi
    band_jac = 0.5 * eps * wxi

    nodes, weights = [], []
    for sign in (1.0, -1.0):
        for w, jac in ((inner_w, inner_jac), (band_w, band_jac)):
            z = sign * w
            weights.append(jac * w * w * model.trunc.c_eps(z) * model.density.evaluate(z))
            nodes.append(z)
    w_nodes = np.concatenate(nodes)
    w_probs = np.concatenate(weights)
    w_probs /= w_probs.sum()

    beta, wbeta = np.polynomial.legendre.leggauss(32)
    beta, wbeta = 0.5 * (beta + 1.0), 0.5 * wbeta
    beta_probs = 2.0 * (1.0 - beta) * wbeta
    shifts = np.outer(beta, w_nodes).ravel()
    probs = np.outer(beta_probs / beta_probs.sum(), w_probs).ravel()
    return shifts, probs


def _band_quad(func: Callable[[float], float], eps: float, what: str) -> float:
    """int over eps/2 < |z| < eps of func."""
    right = quad_checked(func, eps / 2, eps, what=what)
    return right + quad_checked(func, -eps, -eps / 2, what=what)


def _exp_moment(density: LevyDensity, trunc: TruncationScheme, theta: float) -> float:
    eps = trunc.epsilon

    def band(u: float) -> float:
        return exp_times(theta * u, float(trunc.cbar_eps(u)) * density.scalar(u))

    def outer(u: float) -> float:
        return exp_times(theta * u, density.scalar(u))

    total = _band_quad(band, eps, "exponential moment")
    total += quad_checked(outer, eps, math.inf, what="exponential moment", tol=1e-6)
    total += quad_checked(outer, -math.inf, -eps, what="exponential moment", tol=1e-6)
    return total


def choose_mesh(
    density: LevyDensity, trunc: TruncationScheme, cfg: GridConfig
) -> Mesh:
    """Pick L from a Chernoff bound on the tails of sbar^{*k} and e^u sbar^{*k}."""
    radius = cfg.radius
    if radius is None:
        c = min(density.exp_moment_bound, 40.0)
        log_tol = math.log(1.0 / cfg.tail_tol)
        best_right = best_left = math.inf
        for theta in np.linspace(0.05, 0.95, 19) * c:
            for sign, denom in ((-1.0, theta), (1.0, theta - 1.0)):
                if denom < 0.05:
                    continue
                try:
                    log_m = math.log(_exp_moment(density, trunc, sign * theta))
                except (NumericError, ValueError):
                    logger.debug("exponential moment at theta=%g skipped", sign * theta)
                    continue
                worst = max(k * log_m for k in range(1, cfg.k_max + 1))
                bound = (worst + log_tol) / denom
                if sign < 0:
                    best_left = min(best_left, bound)
                else:
                    best_right = min(best_right, bound)
        radius = float(np.clip(max(best_left, best_right), 2.0, 50.0))
    points_log2 = cfg.points_log2
    if points_log2 is None:
        needed = 2.0 * radius * cfg.band_points / (trunc.epsilon / 2)
        points_log2 = max(14, math.ceil(math.log2(needed)))
        if points_log2 > _MAX_POINTS_LOG2:
            raise NumericError(
                f"mesh for epsilon={trunc.epsilon:g}, L={radius:.3g} needs 2^{points_log2} "
                f"points; increase epsilon or fix GridConfig.radius"
            )
    return Mesh(radius=radius, points_log2=points_log2)


def convolve_powers(
    model: SplitLevyModel,
    k_max: int,
    deriv_max: int,
    mesh: Mesh | None = None,
    *,
    grid_cfg: GridConfig | None = None,
) -> SplitLevyModel:
    """Populate sbar^{*k} (k <= k_max) and derivatives up to deriv_max on the mesh.

    Derivatives use (sbar^{*k})^{(d)} = sbar^{*(k-1)} * sbar^{(d)} with the
    analytic derivative on one factor.
    """
    if k_max < 1:
        raise ConfigError(f"k_max must be >= 1; got {k_max}")
    cfg = grid_cfg or GridConfig(k_max=k_max, deriv_max=deriv_max)
    mesh = mesh or model.mesh or choose_mesh(model.density, model.trunc, cfg)
    band_nodes = (model.epsilon / 2) / mesh.h
    if band_nodes < 16:
        raise NumericError(
            f"mesh too coarse: {band_nodes:.1f} nodes across the eps/2 band (need 16); "
            "refine GridConfig.points_log2"
        )

    x = mesh.x
    base = _sbar_rows(model.density, model.trunc, x, deriv_max + 1)
    powers = [base]
    for k in range(2, k_max + 1):
        prev = powers[-1][0]
        rows = np.stack(
            [signal.fftconvolve(prev, base[d], mode="same") * mesh.h for d in range(deriv_max + 2)]
        )
        powers.append(rows)

    for k, rows in enumerate(powers, start=1):
        rows.setflags(write=False)
        mass = float(np.sum(rows[0]) * mesh.h)
        target = model.lambda_eps**k
        if abs(mass - target) > 1e-6 * target:
            raise NumericError(
                f"mass of sbar^{{*{k}}} is {mass:.10g}, expected {target:.10g}; "
                "refine the mesh or enlarge its radius",
                abs(mass - target) / target,
            )
    logger.info(
        "convolution grids: L=%.3f N=%d h=%.3g k_max=%d deriv_max=%d",
        mesh.radius, mesh.n_points, mesh.h, k_max, deriv_max,
    )
    return replace(model, mesh=mesh, powers=tuple(powers))


def split_levy(
    density: LevyDensity,
    epsilon: float,
    grid_cfg: GridConfig | None = None,
    *,
    drift: float | None = None,
    cache_dir: str | Path | None = None,
) -> SplitLevyModel:
    """Split ``density`` at ``epsilon`` and build the convolution grids.

    Args:
        density: Jump density of the pure-jump part.
        epsilon: Truncation level in (0, 1).
        grid_cfg: Mesh and precomputation parameters.
        drift: Replaces the martingale drift b (used for tilted measures,
            for which c > 1 suffices).
        cache_dir: Directory for LSVK grid caches; no caching when None.

    Raises:
        ModelConditionError: c too small, or lambda_eps = 0.
        NumericError: Quadrature or mesh failures.
    """
    trunc = build_truncation(epsilon)
    min_c = 1.0 if drift is not None else 2.0
    if density.exp_moment_bound <= min_c:
        raise ModelConditionError(
            f"requires c > {min_c:g} for int_{{|z|>1}} e^{{c|z|}} nu(dz) < inf; "
            f"got c = {density.exp_moment_bound:g}"
        )
    cfg = grid_cfg or GridConfig()
    eps = epsilon
    index = density.blumenthal_index

    def cbar_s(u: float) -> float:
        return float(trunc.cbar_eps(u)) * density.scalar(u)

    lam = _band_quad(cbar_s, eps, "lambda_eps")
    lam += levy_tail_mass(density, eps) + levy_tail_mass(density, -eps)
    if not lam > 0.0:
        raise ModelConditionError(
            "requires lambda_eps = int cbar_eps(z) nu(dz) > 0; the jump measure is empty "
            "outside [-eps/2, eps/2]"
        )

    b = martingale_drift(density) if drift is None else float(drift)
    compensator = _band_quad(lambda u: u * cbar_s(u), eps, "b_eps")
    compensator += quad_checked(lambda u: u * density.scalar(u), eps, 1.0, what="b_eps")
    compensator += quad_checked(lambda u: u * density.scalar(u), -1.0, -eps, what="b_eps")
    b_eps = b - compensator

    def w2_s(w: float) -> float:
        return w * w * (density.scalar(w) + density.scalar(-w))

    second = singular_quad(w2_s, eps / 2, index, what="b3")
    second += _band_quad(lambda w: w * w * float(trunc.c_eps(w)) * density.scalar(w), eps, "b3")
    model = SplitLevyModel(
        density=density, trunc=trunc, lambda_eps=lam, b=b, b_eps=b_eps, b3=0.5 * second
    )
    logger.info("split %s at eps=%g: lambda_eps=%.6g b=%.6g", density.kind.value, eps, lam, b)

    key = _cache_key(density, eps, drift, cfg)
    if cache_dir is not None and key is not None:
        from lsvx._serialization import load_kernel, save_kernel

        path = Path(cache_dir) / f"{key}.lsvk"
        if path.exists():
            try:
                mesh, powers = load_kernel(path)
                logger.info("kernel cache hit: %s", path)
                return replace(model, mesh=mesh, powers=powers)
            except (OSError, ValueError) as exc:
                logger.warning("ignoring unreadable kernel cache %s: %s", path, exc)
        built = convolve_powers(model, cfg.k_max, cfg.deriv_max, grid_cfg=cfg)
        assert built.mesh is not None
        path.parent.mkdir(parents=True, exist_ok=True)
        save_kernel(path, built.mesh, built.powers)
        return built
    return convolve_powers(model, cfg.k_max, cfg.deriv_max, grid_cfg=cfg)


def _cache_key(
    density: LevyDensity, epsilon: float, drift: float | None, cfg: GridConfig
) -> str | None:
    base = density.cache_key
    if base is None:
        return None
    blob = json.dumps(
        {"density": base, "epsilon": epsilon, "drift": drift, "grid": cfg.__dict__},
        sort_keys=True,
    )
    return hashlib.sha256(blob.encode()).hexdigest()[:24]
