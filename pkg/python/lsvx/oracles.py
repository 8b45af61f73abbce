"""Independent ground truth: Monte Carlo, Fourier pricing, limit extraction.

Monte Carlo draws Z_t = U_t + X_t with X split into large jumps (compound
Poisson from sbar / lambda_eps), mid-size small jumps in (delta, eps] and a
Gaussian for the jumps below delta. Paths run in shards; each shard draws
from its own Philox stream keyed by (seed, shard), so results do not depend
on the worker count.

Usage:
    cfg = MCConfig(paths=200_000, seed=7)
    est = mc_tail(model, SVModel.heston(2.0, 0.09, 0.3, 0.04), z=0.5, t=0.005, cfg=cfg)
    price = fourier_call(CharExponent.from_density(density, sigma0=0.2), z=-0.5, t=0.1)
"""

from __future__ import annotations

import logging
import math
from collections.abc import Callable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from typing import NamedTuple

import numpy as np
from numpy.typing import ArrayLike
from scipy import integrate, special, stats
from scipy.interpolate import PchipInterpolator

from lsvx.errors import ConfigError, DomainError, NumericError, UnsupportedModelError
from lsvx.generators import SVKind, SVModel
from lsvx.levy_kernel import (
    Activity,
    DensityKind,
    FloatArray,
    LevyDensity,
    SplitLevyModel,
    exp_times,
    quad_checked,
    singular_quad,
)

logger = logging.getLogger(__name__)

ComplexArray = np.ndarray


# ---------------------------------------------------------------------------
# Monte Carlo
# ---------------------------------------------------------------------------


class Scheme(str, Enum):
    FULL_TRUNCATION_EULER = "full_truncation_euler"
    EXACT_OU = "exact_ou"


@dataclass(frozen=True)
class MCConfig:
    """Monte Carlo settings.

    Attributes:
        paths: Number of samples (rounded up to even with antithetics).
        seed: Root seed; shard k draws from SeedSequence([seed, k]).
        steps_per_unit: Euler steps per unit time; None uses max(50, ceil(200 t / 0.01)).
        scheme: Volatility discretization; None picks the exact transition for
            exp-OU models and full-truncation Euler otherwise.
        delta: Cutoff below which small jumps are replaced by a Gaussian; None means eps/10.
        antithetic: Pair every Brownian draw with its negation.
        include_jumps: Disable both jump legs (pure diffusion paths) when False.
        workers: Thread count for shard generation.
        shard_size: Paths per shard.
    """

    paths: int = 100_000
    seed: int = 0
    steps_per_unit: int | None = None
    scheme: Scheme | None = None
    delta: float | None = None
    antithetic: bool = True
    include_jumps: bool = True
    workers: int = 1
    shard_size: int = 1 << 16

    def __post_init__(self) -> None:
        if self.paths < 1:
            raise ConfigError(f"paths must be >= 1; got {self.paths}")
        if self.workers < 1 or self.shard_size < 2:
            raise ConfigError("workers must be >= 1 and shard_size >= 2")

    def n_steps(self, t: float) -> int:
        if self.steps_per_unit is not None:
            return max(1, math.ceil(self.steps_per_unit * t))
        return max(50, math.ceil(200.0 * t / 0.01))


@dataclass(frozen=True)
class MCEstimate:
    mean: float
    stderr: float
    n: int
    seed: int

    def within(self, value: float, n_se: float = 3.0) -> bool:
        return abs(self.mean - value) <= n_se * self.stderr


@dataclass(frozen=True)
class _SmallJumpLaw:
    """Jumps of X^eps in (delta, eps]: rate, mean, side split and quantiles."""

    rate: float
    mean: float
    var_below: float
    p_right: float
    right: PchipInterpolator | None
    left: PchipInterpolator | None


def _side_quantile(
    model: SplitLevyModel, lo: float, hi: float, sign: float, n: int = 4096
) -> tuple[float, PchipInterpolator | None]:
    grid = np.linspace(lo, hi, n)
    dens = model.trunc.c_eps(sign * grid) * model.density.evaluate(sign * grid)
    cdf = integrate.cumulative_trapezoid(dens, grid, initial=0.0)
    mass = float(cdf[-1])
    if not mass > 0.0:
        return 0.0, None
    cdf = np.maximum.accumulate(cdf / mass)
    keep = np.concatenate(([True], np.diff(cdf) > 1e-14))
    return mass, PchipInterpolator(cdf[keep], sign * grid[keep])


def _small_jump_law(model: SplitLevyModel, delta: float) -> _SmallJumpLaw:
    eps = model.epsilon
    dens = model.density
    if not 0.0 < delta < eps:
        raise ConfigError(
            f"small-jump cutoff requires 0 < delta < eps; got delta = {delta}, eps = {eps}"
        )

    def cs(u: float) -> float:
        return float(model.trunc.c_eps(u)) * dens.scalar(u)

    var_below = singular_quad(
        lambda w: w * w * (cs(w) + cs(-w)), delta, dens.blumenthal_index, what="small-jump variance"
    )
    right_mass, right = _side_quantile(model, delta, eps, 1.0)
    left_mass, left = _side_quantile(model, delta, eps, -1.0)
    mean = quad_checked(lambda u: u * cs(u), delta, eps, what="mid jumps") + quad_checked(
        lambda u: u * cs(u), -eps, -delta, what="mid jumps"
    )
    rate = right_mass + left_mass
    return _SmallJumpLaw(
        rate=rate,
        mean=mean,
        var_below=var_below,
        p_right=right_mass / rate if rate > 0.0 else 0.0,
        right=right,
        left=left,
    )


def _shard_rng(seed: int, shard: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, shard])))


def _normals(rng: np.random.Generator, half: int, antithetic: bool) -> FloatArray:
    z = rng.standard_normal(half)
    if antithetic:
        return np.stack([z, -z], axis=1).ravel()
    return z


def _compound(
    rng: np.random.Generator, n: int, rate: float, draw: Callable[[int], FloatArray]
) -> FloatArray:
    counts = rng.poisson(rate, size=n)
    total = int(counts.sum())
    if total == 0:
        return np.zeros(n)
    owners = np.repeat(np.arange(n), counts)
    return np.bincount(owners, weights=draw(total), minlength=n)


def _sample_mid(rng: np.random.Generator, law: _SmallJumpLaw, size: int) -> FloatArray:
    u = rng.random(size)
    side = rng.random(size) < law.p_right
    out = np.empty(size)
    if law.right is not None:
        out[side] = law.right(u[side])
    if law.left is not None:
        out[~side] = law.left(u[~side])
    return out


def _repeat(values: FloatArray, antithetic: bool) -> FloatArray:
    return np.repeat(values, 2) if antithetic else values


def _simulate_x_shard(
    model: SplitLevyModel,
    law: _SmallJumpLaw,
    t: float,
    rng: np.random.Generator,
    half: int,
    antithetic: bool,
    large: bool,
) -> FloatArray:
    gauss = math.sqrt(t * law.var_below) * _normals(rng, half, antithetic)
    x = model.b_eps * t - t * law.mean + gauss
    mid = _compound(rng, half, law.rate * t, lambda k: _sample_mid(rng, law, k))
    x = x + _repeat(mid, antithetic)
    if large:
        quantile = model.jump_quantile
        big = _compound(rng, half, model.lambda_eps * t, lambda k: quantile(rng.random(k)))
        x = x + _repeat(big, antithetic)
    return x


def _simulate_u_shard(
    sv: SVModel, t: float, steps: int, cfg: MCConfig, rng: np.random.Generator, half: int
) -> FloatArray:
    anti = cfg.antithetic
    n = 2 * half if anti else half
    if sv.kind is SVKind.CONSTANT:
        sig2 = float(sv.sigma_squared(sv.y0))
        return -0.5 * sig2 * t + math.sqrt(sig2 * t) * _normals(rng, half, anti)
    dt = t / steps
    sq = math.sqrt(dt)
    y = np.full(n, sv.y0)
    u = np.zeros(n)
    exact_ou = resolve_scheme(sv, cfg.scheme) is Scheme.EXACT_OU
    if exact_ou:
        chi, theta, v = sv.params["chi"], sv.params["theta"], sv.params["v"]
        decay = math.exp(-chi * dt)
        spread = v * math.sqrt((1.0 - decay * decay) / (2.0 * chi)) if chi > 0 else v * sq
    for _ in range(steps):
        dw1 = _normals(rng, half, anti)
        dw2 = _normals(rng, half, anti)
        if sv.kind is SVKind.HESTON:
            y_pos = np.maximum(y, 0.0)
            sig2 = y_pos
            y = y + sv.alpha(y_pos) * dt + sv.gamma(y_pos) * sq * dw2
        elif exact_ou:
            sig2 = sv.sigma_squared(y)
            y = theta + (y - theta) * decay + spread * dw2
        else:
            sig2 = np.maximum(sv.sigma_squared(y), 0.0)
            y = y + sv.alpha(y) * dt + sv.gamma(y) * sq * dw2
        u = u - 0.5 * sig2 * dt + np.sqrt(sig2) * sq * dw1
    return u


def resolve_scheme(sv: SVModel, scheme: Scheme | None) -> Scheme:
    """The volatility step used for ``sv`` under the requested ``scheme``.

    Raises:
        ConfigError: ``EXACT_OU`` requested for a model that is not exp-OU.
    """
    if scheme is None:
        return Scheme.EXACT_OU if sv.kind is SVKind.EXP_OU else Scheme.FULL_TRUNCATION_EULER
    if scheme is Scheme.EXACT_OU and sv.kind is not SVKind.EXP_OU:
        raise ConfigError(
            f"scheme '{scheme.value}' needs an exp_ou volatility model; got '{sv.kind.value}'"
        )
    return scheme


def _check_sv(sv: SVModel, cfg: MCConfig) -> None:
    resolve_scheme(sv, cfg.scheme)
    if sv.kind is SVKind.CUSTOM and sv.sigma_bound is None:
        raise UnsupportedModelError("simulation of a custom SV model needs a sigma bound")


def _shards(cfg: MCConfig) -> list[tuple[int, int]]:
    """(shard index, half-size) pairs; half-size counts antithetic pairs."""
    unit = 2 if cfg.antithetic else 1
    total = math.ceil(cfg.paths / unit)
    per = max(1, cfg.shard_size // unit)
    out = []
    shard = 0
    while total > 0:
        size = min(per, total)
        out.append((shard, size))
        total -= size
        shard += 1
    return out


def _run_shards(cfg: MCConfig, job: Callable[[int, int], FloatArray]) -> FloatArray:
    shards = _shards(cfg)
    if cfg.workers == 1:
        parts = [job(k, half) for k, half in shards]
    else:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            parts = list(pool.map(lambda s: job(*s), shards))
    logger.debug("monte carlo: %d shards, %d samples", len(shards), sum(p.size for p in parts))
    return np.concatenate(parts)


def _delta(model: SplitLevyModel, cfg: MCConfig) -> float:
    return model.epsilon / 10.0 if cfg.delta is None else cfg.delta


def simulate_z(levy: SplitLevyModel, sv: SVModel, t: float, cfg: MCConfig) -> FloatArray:
    """Samples of Z_t = U_t + X_t; antithetic partners sit at adjacent indices."""
    if not t > 0.0:
        raise ConfigError(f"simulation time must be > 0; got t = {t}")
    _check_sv(sv, cfg)
    law = _small_jump_law(levy, _delta(levy, cfg))
    steps = cfg.n_steps(t)

    def job(shard: int, half: int) -> FloatArray:
        rng = _shard_rng(cfg.seed, shard)
        u = _simulate_u_shard(sv, t, steps, cfg, rng, half)
        if not cfg.include_jumps:
            return u
        return u + _simulate_x_shard(levy, law, t, rng, half, cfg.antithetic, large=True)

    return _run_shards(cfg, job)


def simulate_small_jumps(levy: SplitLevyModel, t: float, cfg: MCConfig) -> FloatArray:
    """Samples of X^eps_t alone (drift b_eps plus compensated jumps below eps)."""
    if not t > 0.0:
        raise ConfigError(f"simulation time must be > 0; got t = {t}")
    law = _small_jump_law(levy, _delta(levy, cfg))

    def job(shard: int, half: int) -> FloatArray:
        rng = _shard_rng(cfg.seed, shard)
        return _simulate_x_shard(levy, law, t, rng, half, cfg.antithetic, large=False)

    return _run_shards(cfg, job)


def estimate(values: FloatArray, cfg: MCConfig) -> MCEstimate:
    """Mean and standard error; antithetic pairs are averaged first."""
    data = values
    if cfg.antithetic and values.size % 2 == 0:
        data = 0.5 * (values[0::2] + values[1::2])
    se = float(data.std(ddof=1) / math.sqrt(data.size)) if data.size > 1 else math.inf
    return MCEstimate(mean=float(data.mean()), stderr=se, n=int(values.size), seed=cfg.seed)


def mc_tail(levy: SplitLevyModel, sv: SVModel, z: float, t: float, cfg: MCConfig) -> MCEstimate:
    """P(Z_t >= z)."""
    samples = simulate_z(levy, sv, t, cfg)
    return estimate((samples >= z).astype(float), cfg)


def mc_call(
    levy: SplitLevyModel,
    sv: SVModel,
    z: float,
    t: float,
    cfg: MCConfig,
    *,
    control: bool = False,
) -> MCEstimate:
    """G_t(z) = E(e^{z + Z_t} - 1)_+.

    With ``control`` the martingale e^{Z_t} - 1 (mean zero) is subtracted, which
    turns the estimator into e^z - 1 + (put payoff) for in-the-money strikes.
    """
    samples = simulate_z(levy, sv, t, cfg)
    payoff = np.maximum(np.expm1(z + samples), 0.0)
    if control:
        payoff = payoff - math.exp(z) * np.expm1(samples)
    return estimate(payoff, cfg)


def mc_martingale(levy: SplitLevyModel, sv: SVModel, t: float, cfg: MCConfig) -> MCEstimate:
    """E e^{Z_t}, which should be 1."""
    return estimate(np.exp(simulate_z(levy, sv, t, cfg)), cfg)


@dataclass(frozen=True)
class TailBoundReport:
    z: float
    t: float
    mc: MCEstimate
    bound: float

    @property
    def holds(self) -> bool:
        return self.mc.mean <= self.bound + 3.0 * self.mc.stderr


def _small_jump_cumulant(levy: SplitLevyModel, theta: float) -> float:
    """log E e^{theta X^eps_1} = theta b_eps + int (e^{theta u} - 1 - theta u) c_eps nu(du)."""
    eps = levy.epsilon
    dens = levy.density

    def near(w: float) -> float:
        cw = float(levy.trunc.c_eps(w))
        return cw * (
            (math.expm1(theta * w) - theta * w) * dens.scalar(w)
            + (math.expm1(-theta * w) + theta * w) * dens.scalar(-w)
        )

    return theta * levy.b_eps + singular_quad(near, eps, dens.blumenthal_index, what="cumulant")


def tail_bound_check(levy: SplitLevyModel, z: float, t: float, cfg: MCConfig) -> TailBoundReport:
    """Compare MC P(|X^eps_t| >= z) with the Chernoff bound
    inf_theta e^{-theta z} E(e^{theta X} + e^{-theta X}).

    Diagnostic only; nothing is gated on it.
    """
    samples = simulate_small_jumps(levy, t, cfg)
    mc = estimate((np.abs(samples) >= z).astype(float), cfg)
    thetas = np.geomspace(0.1, 20.0 / levy.epsilon, 40)
    best = math.inf
    for theta in thetas:
        pos = t * _small_jump_cumulant(levy, float(theta))
        neg = t * _small_jump_cumulant(levy, -float(theta))
        log_bound = -theta * z + np.logaddexp(pos, neg)
        best = min(best, float(np.exp(min(log_bound, 700.0))))
    report = TailBoundReport(z=z, t=t, mc=mc, bound=min(best, 1.0))
    logger.info("tail bound z=%g t=%g: mc=%.3g bound=%.3g", z, t, mc.mean, report.bound)
    return report


def small_jump_cf(levy: SplitLevyModel, u: float, t: float) -> complex:
    """E e^{i u X^eps_t} by quadrature of the small-jump exponent."""
    eps = levy.epsilon
    dens = levy.density

    def part(fn: Callable[[float], float]) -> float:
        def near(w: float) -> float:
            return float(levy.trunc.c_eps(w)) * (fn(w) * dens.scalar(w) + fn(-w) * dens.scalar(-w))

        return singular_quad(near, eps, dens.blumenthal_index, what="small-jump cf")

    re = part(lambda w: math.cos(u * w) - 1.0)
    im = part(lambda w: math.sin(u * w) - u * w)
    return complex(np.exp(t * complex(re, im + u * levy.b_eps)))


# ---------------------------------------------------------------------------
# Characteristic exponents and Fourier pricing
# ---------------------------------------------------------------------------


def _kou_jump_cumulant(prm: dict[str, float], w: ComplexArray) -> ComplexArray:
    lam, p, e1, e2 = prm["lam"], prm["p"], prm["eta1"], prm["eta2"]
    up = e1 / (e1 - w) - 1.0 - w / e1
    down = e2 / (e2 + w) - 1.0 + w / e2
    return lam * (p * up + (1.0 - p) * down)


def _merton_jump_cumulant(prm: dict[str, float], w: ComplexArray) -> ComplexArray:
    lam, m, d = prm["lam"], prm["m"], prm["delta"]
    return lam * (np.exp(m * w + 0.5 * d * d * w * w) - 1.0 - m * w)


def _cgmy_jump_cumulant(prm: dict[str, float], w: ComplexArray) -> ComplexArray:
    c, g, m, y = prm["C"], prm["G"], prm["M"], prm["Y"]
    scale = c * special.gamma(-y)
    core = (m - w) ** y - m**y + (g + w) ** y - g**y
    return scale * (core + w * y * (m ** (y - 1.0) - g ** (y - 1.0)))


def _quad_jump_cumulant(density: LevyDensity, w: complex) -> complex:
    index = density.blumenthal_index

    def value(x: float) -> complex:
        return complex(np.exp(w * x) - 1.0 - w * x)

    def far(x: float, imag: bool) -> float:
        s = density.scalar(x)
        if imag:
            return exp_times(w.real * x, s * math.sin(w.imag * x)) - s * w.imag * x
        return exp_times(w.real * x, s * math.cos(w.imag * x)) - s * (1.0 + w.real * x)

    def piece(imag: bool) -> float:
        def near(x: float) -> float:
            inside = value(x) * density.scalar(x) + value(-x) * density.scalar(-x)
            return inside.imag if imag else inside.real

        total = singular_quad(near, 1.0, index, what="jump cumulant")
        total += quad_checked(lambda x: far(x, imag), 1.0, math.inf, what="jump cumulant")
        total += quad_checked(lambda x: far(x, imag), -math.inf, -1.0, what="jump cumulant")
        return total

    return complex(piece(False), piece(True))


def _first_moment(density: LevyDensity) -> float:
    """int x nu(dx)."""
    prm = density.params
    if density.kind is DensityKind.KOU:
        return prm["lam"] * (prm["p"] / prm["eta1"] - (1.0 - prm["p"]) / prm["eta2"])
    if density.kind is DensityKind.MERTON:
        return prm["lam"] * prm["m"]
    def moment(x: float) -> float:
        return x * density.scalar(x)

    return quad_checked(moment, 0.0, math.inf, what="first moment") + quad_checked(
        moment, -math.inf, 0.0, what="first moment"
    )


@dataclass(frozen=True)
class CharExponent:
    """Cumulant kappa(w) = log E e^{w X_1}
    = drift w + sigma0^2 w^2 / 2 + int (e^{wx} - 1 - wx) nu(dx).

    ``psi(u) = kappa(i u)`` is the characteristic exponent. ``drift`` is the
    coefficient of w with jumps fully compensated; the default makes e^X a
    martingale, so psi(-i) = 0.
    """

    density: LevyDensity
    sigma0: float
    drift: float
    strip: tuple[float, float]
    _tilt_slope: float = field(default=0.0, repr=False)

    @classmethod
    def from_density(
        cls, density: LevyDensity, sigma0: float = 0.0, drift: float | None = None
    ) -> CharExponent:
        """Build from a density; ``drift`` uses the 1_{|x|<=1} truncation convention."""
        if sigma0 < 0.0:
            raise ConfigError(f"sigma0 must be >= 0; got {sigma0}")
        strip = _strip(density)
        slope = 0.0
        if density.kind is DensityKind.TILTED and density.base is not None:
            base = density.base

            def far(x: float) -> float:
                s = base.scalar(x)
                return x * (exp_times(x, s) - s)

            slope = quad_checked(far, 1.0, math.inf, what="tilt")
            slope += quad_checked(far, -math.inf, -1.0, what="tilt")
            slope += singular_quad(
                lambda x: x * math.expm1(x) * base.scalar(x) - x * math.expm1(-x) * base.scalar(-x),
                1.0,
                base.blumenthal_index,
                what="tilt",
            )
        trial = cls(density=density, sigma0=sigma0, drift=0.0, strip=strip, _tilt_slope=slope)
        if drift is None:
            if not strip[1] > 1.0:
                raise DomainError("martingale drift needs E e^X < inf (strip must contain 1)")
            jump = float(np.real(trial.jump_cumulant(np.array([1.0 + 0j]))[0]))
            b_c = -0.5 * sigma0 * sigma0 - jump
        else:
            def moment(x: float) -> float:
                return x * density.scalar(x)

            outside = quad_checked(moment, 1.0, math.inf, what="drift")
            outside += quad_checked(moment, -math.inf, -1.0, what="drift")
            b_c = float(drift) + outside
        return cls(density=density, sigma0=sigma0, drift=b_c, strip=strip, _tilt_slope=slope)

    def jump_cumulant(self, w: ArrayLike) -> ComplexArray:
        arr = np.asarray(w, dtype=complex)
        dens = self.density
        if dens.kind is DensityKind.TILTED and dens.base is not None:
            base = CharExponent(dens.base, 0.0, 0.0, _strip(dens.base))
            one = base.jump_cumulant(np.array([1.0 + 0j]))[0]
            return base.jump_cumulant(arr + 1.0) - one - arr * self._tilt_slope
        if dens.kind is DensityKind.KOU:
            return _kou_jump_cumulant(dens.params, arr)
        if dens.kind is DensityKind.MERTON:
            return _merton_jump_cumulant(dens.params, arr)
        if dens.kind is DensityKind.CGMY and dens.params["Y"] != 1.0:
            return _cgmy_jump_cumulant(dens.params, arr)
        flat = np.array([_quad_jump_cumulant(dens, complex(v)) for v in arr.ravel()])
        return flat.reshape(arr.shape)

    def cumulant(self, w: ArrayLike) -> ComplexArray:
        arr = np.asarray(w, dtype=complex)
        lo, hi = self.strip
        if np.any(arr.real <= lo) or np.any(arr.real >= hi):
            raise DomainError(f"Re(w) outside the analyticity strip ({lo:g}, {hi:g})")
        return self.drift * arr + 0.5 * self.sigma0**2 * arr * arr + self.jump_cumulant(arr)

    def psi(self, u: ArrayLike) -> ComplexArray:
        return self.cumulant(1j * np.asarray(u, dtype=complex))

    @cached_property
    def atom(self) -> tuple[float, float] | None:
        """(rate, drift) of the no-jump atom for finite-activity pure-jump laws."""
        if self.sigma0 > 0.0 or self.density.activity is not Activity.FINITE:
            return None
        rate = self.density.total_mass
        return rate, self.drift - _first_moment(self.density)

    def transform(self, w: ComplexArray, t: float) -> ComplexArray:
        """E e^{w X_t} with the no-jump atom removed when there is one."""
        value = np.exp(t * self.cumulant(w))
        if self.atom is not None:
            rate, drift = self.atom
            value = value - math.exp(-rate * t) * np.exp(w * drift * t)
        return value


def _strip(density: LevyDensity) -> tuple[float, float]:
    prm = density.params
    if density.kind is DensityKind.KOU:
        return (-prm["eta2"], prm["eta1"])
    if density.kind is DensityKind.MERTON:
        return (-math.inf, math.inf)
    if density.kind is DensityKind.CGMY:
        return (-prm["G"], prm["M"])
    if density.kind is DensityKind.TILTED and density.base is not None:
        lo, hi = _strip(density.base)
        return (lo - 1.0, hi - 1.0)
    c = density.exp_moment_bound
    return (-c, c)


class FourierPrice(NamedTuple):
    price: float
    error: float


_GL_X, _GL_W = np.polynomial.legendre.leggauss(32)


def _oscillatory_integral(
    fn: Callable[[FloatArray], FloatArray],
    *,
    width: float,
    tol: float,
    v_max: float = 1e7,
    block: int = 256,
) -> tuple[float, float]:
    """int_0^inf fn(v) dv by Gauss-Legendre panels until the tail is below ``tol``."""
    total = 0.0
    start = 0.0
    while start < v_max:
        edges = start + width * np.arange(block + 1)
        mid = 0.5 * (edges[1:] + edges[:-1])
        nodes = (mid[:, None] + 0.5 * width * _GL_X[None, :]).ravel()
        vals = fn(nodes).reshape(block, -1)
        panel = (vals @ _GL_W) * 0.5 * width
        total += float(panel.sum())
        tail = float(np.abs(vals[-1]).max()) * edges[-1]
        start = float(edges[-1])
        if tail < tol and abs(float(panel[-8:].sum())) < tol:
            return total, tail
        width = min(width * 1.5, 50.0) if start > 100 * width else width
    raise NumericError("Fourier integral did not decay within the truncation range", tail)


def _damped_price(char: CharExponent, k: float, t: float, alpha: float, tol: float) -> FourierPrice:
    lo, hi = char.strip
    if not lo < alpha + 1.0 < hi:
        raise DomainError(
            f"damping alpha + 1 = {alpha + 1.0:g} outside the analyticity strip ({lo:g}, {hi:g})"
        )
    scale = math.exp(-alpha * k) / math.pi

    def integrand(v: FloatArray) -> FloatArray:
        w = 1j * v + alpha + 1.0
        denom = alpha * alpha + alpha - v * v + 1j * (2.0 * alpha + 1.0) * v
        return np.real(np.exp(-1j * v * k) * char.transform(w, t) / denom)

    value, err = _oscillatory_integral(integrand, width=1.0, tol=tol / scale)
    return FourierPrice(scale * value, scale * err)


def _default_damping(char: CharExponent, put: bool) -> float:
    lo, hi = char.strip
    if put:
        return -1.0 - 0.5 * min(-lo, 5.0)
    return 0.5 * (min(hi, 5.0) - 1.0)


def fourier_call(
    char: CharExponent, z: float, t: float, *, damping: float | None = None, tol: float = 1e-13
) -> FourierPrice:
    """G_t(z) = E(e^{z + X_t} - 1)_+ for an exponential Levy model (Carr-Madan damping)."""
    if not t > 0.0:
        raise DomainError(f"Fourier pricing requires t > 0; got {t}")
    alpha = _default_damping(char, put=False) if damping is None else damping
    if not alpha > 0.0:
        raise DomainError(f"call damping must be > 0; got {alpha}")
    k = -z
    core = _damped_price(char, k, t, alpha, tol * math.exp(-z))
    price = core.price
    if char.atom is not None:
        rate, drift = char.atom
        price += math.exp(-rate * t) * max(math.exp(drift * t) - math.exp(k), 0.0)
    logger.debug(
        "fourier call z=%g t=%g alpha=%g: %.12g (+/- %.2g)", z, t, alpha, price, core.error
    )
    return FourierPrice(math.exp(z) * price, math.exp(z) * core.error)


def fourier_put(
    char: CharExponent, z: float, t: float, *, damping: float | None = None, tol: float = 1e-13
) -> FourierPrice:
    """E(e^{z + X_t} - 1)_- with damping alpha < -1."""
    if not t > 0.0:
        raise DomainError(f"Fourier pricing requires t > 0; got {t}")
    alpha = _default_damping(char, put=True) if damping is None else damping
    if not alpha < -1.0:
        raise DomainError(f"put damping must be < -1; got {alpha}")
    k = -z
    core = _damped_price(char, k, t, alpha, tol * math.exp(-z))
    price = core.price
    if char.atom is not None:
        rate, drift = char.atom
        price += math.exp(-rate * t) * max(math.exp(k) - math.exp(drift * t), 0.0)
    return FourierPrice(math.exp(z) * price, math.exp(z) * core.error)


def fourier_density(char: CharExponent, x: float, t: float, *, tol: float = 1e-14) -> FourierPrice:
    """f_t(x) = (1/pi) int_0^inf Re(e^{-iux} E e^{iuX_t}) du (continuous part)."""
    if not t > 0.0:
        raise DomainError(f"Fourier inversion requires t > 0; got {t}")

    def integrand(u: FloatArray) -> FloatArray:
        return np.real(np.exp(-1j * u * x) * char.transform(1j * u, t))

    value, err = _oscillatory_integral(integrand, width=2.0, tol=tol * math.pi)
    return FourierPrice(value / math.pi, err / math.pi)


def merton_series_call(
    lam: float, m: float, delta: float, sigma0: float, z: float, t: float, *, max_terms: int = 400
) -> float:
    """Merton's Poisson-weighted Black-Scholes sum for G_t(z) under the martingale drift."""
    drift = -0.5 * sigma0 * sigma0 - lam * math.expm1(m + 0.5 * delta * delta)
    strike = math.exp(-z)
    total = 0.0
    log_weight = -lam * t
    for n in range(max_terms):
        if n > 0:
            log_weight += math.log(lam * t / n)
        var = sigma0 * sigma0 * t + n * delta * delta
        mu = drift * t + n * m
        if var == 0.0:
            term = max(math.exp(mu) - strike, 0.0)
        else:
            sd = math.sqrt(var)
            d1 = (mu + var - math.log(strike)) / sd
            term = math.exp(mu + 0.5 * var) * stats.norm.cdf(d1) - strike * stats.norm.cdf(d1 - sd)
        contribution = math.exp(log_weight) * term
        total += contribution
        if n > lam * t and contribution < 1e-18 * max(total, 1e-300):
            break
    return math.exp(z) * total


# ---------------------------------------------------------------------------
# Coefficient extraction and convergence slopes
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CoefficientFit:
    values: tuple[float, ...]
    errors: tuple[float, ...]


def coefficient_fit(
    ts: Sequence[float],
    values: Sequence[float],
    n: int,
    stderr: Sequence[float] | None = None,
    degree: int = 2,
) -> CoefficientFit:
    """Extract cbreve_1..cbreve_n from v(t) ~ sum_j cbreve_j t^j / j! by successive limits.

    At step j the residual (v - sum_{i<j} cbreve_i t^i/i!) j! / t^j is fitted by a
    low-degree polynomial in t whose intercept is cbreve_j.
    """
    t = np.asarray(ts, dtype=float)
    v = np.asarray(values, dtype=float)
    if not 1 <= n <= 3:
        raise ConfigError(f"coefficient_fit supports 1 <= n <= 3; got {n}")
    if t.size < n + 3:
        raise ConfigError(f"coefficient_fit needs at least n + 3 = {n + 3} points; got {t.size}")
    se = None if stderr is None else np.asarray(stderr, dtype=float)
    deg = max(0, min(degree, t.size - 4))
    found: list[float] = []
    errors: list[float] = []
    for j in range(1, n + 1):
        resid = v - sum(c * t**i / math.factorial(i) for i, c in enumerate(found, 1))
        scale = math.factorial(j) / t**j
        r = resid * scale
        if se is not None:
            coef, cov = np.polyfit(t, r, deg, w=1.0 / (se * scale), cov="unscaled")
        else:
            coef, cov = np.polyfit(t, r, deg, cov=True)
        found.append(float(coef[-1]))
        errors.append(float(math.sqrt(max(cov[-1, -1], 0.0))))
    return CoefficientFit(values=tuple(found), errors=tuple(errors))


@dataclass(frozen=True)
class SlopeFit:
    slope: float
    stderr: float
    halfwidth: float
    n_points: int


def convergence_slope(
    ts: Sequence[float], residuals: Sequence[float], *, confidence: float = 0.95
) -> SlopeFit:
    """Least-squares slope of log|residual| against log t."""
    t = np.asarray(ts, dtype=float)
    r = np.asarray(residuals, dtype=float)
    if t.size < 4:
        raise ConfigError(f"convergence_slope needs at least 4 points; got {t.size}")
    if np.any(r <= 0.0):
        raise DomainError(
            "convergence_slope needs positive residuals; widen the tolerance or flag exact points"
        )
    fit = stats.linregress(np.log(t), np.log(r))
    quantile = float(stats.t.ppf(0.5 + 0.5 * confidence, t.size - 2))
    return SlopeFit(
        slope=float(fit.slope),
        stderr=float(fit.stderr),
        halfwidth=quantile * float(fit.stderr),
        n_points=int(t.size),
    )
