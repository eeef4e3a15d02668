#!/usr/bin/env python3
# -*- coding: utf-8 -*-

import logging
import math
import warnings
from dataclasses import dataclass
from typing import Callable, Iterable, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import integrate
from scipy.stats import norm

from utils import floor_int
from walk_core import averaged_kernel

logger = logging.getLogger(__name__)

# support of f is [-SUPPORT_HALF_WIDTH, SUPPORT_HALF_WIDTH]
SUPPORT_HALF_WIDTH = math.sqrt(2.0) / 2.0

# absolute tolerance and panel budget handed to QUADPACK
QUAD_EPSABS = 1e-10
QUAD_LIMIT = 200

ArrayLike = Union[float, Sequence[float], np.ndarray]


@dataclass(frozen=True)
class LimitDensityParams:
    """f has no parameters; only the half width of its support."""
    support_half_width: float = SUPPORT_HALF_WIDTH

    def front(self, t: float) -> float:
        """Position of the ballistic front at time t."""
        return t * self.support_half_width


LIMIT_DENSITY = LimitDensityParams()


@dataclass(frozen=True, eq=False)
class Profile:
    """
    Nonnegative piecewise-linear function with compact support.

    Linear interpolation between knots, zero outside [knots[0], knots[-1]].
    Both boundary values are zero so the profile is continuous.
    """
    knots: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        knots = np.asarray(self.knots, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if knots.ndim != 1 or knots.shape != values.shape:
            raise ValueError("knots and values must be 1-d sequences of equal length")
        if len(knots) < 2:
            raise ValueError("A profile needs at least two knots")
        if not (np.all(np.isfinite(knots)) and np.all(np.isfinite(values))):
            raise ValueError("Profile knots and values must be finite")
        if np.any(np.diff(knots) <= 0):
            raise ValueError("Profile knots must be strictly increasing")
        if np.any(values < 0):
            bad = int(np.argmax(values < 0))
            raise ValueError(f"Negative profile value {values[bad]} at x = {knots[bad]}")
        if values[0] != 0.0 or values[-1] != 0.0:
            raise ValueError("Profile must vanish at its first and last knot")
        knots.setflags(write=False)
        values.setflags(write=False)
        object.__setattr__(self, "knots", knots)
        object.__setattr__(self, "values", values)

    @classmethod
    def zero(cls) -> 'Profile':
        return cls(knots=np.array([-1.0, 1.0]), values=np.zeros(2))

    @classmethod
    def triangle(cls, left: float = -1.0, right: float = 1.0, peak: float = 1.0,
                 apex: Optional[float] = None) -> 'Profile':
        apex = 0.5 * (left + right) if apex is None else apex
        return cls(knots=np.array([left, apex, right]), values=np.array([0.0, peak, 0.0]))

    @classmethod
    def plateau(cls, left: float, right: float, height: float, ramp: float) -> 'Profile':
        """Constant height on [left, right] with linear ramps of the given width outside it."""
        return cls(knots=np.array([left - ramp, left, right, right + ramp]),
                   values=np.array([0.0, height, height, 0.0]))

    @property
    def support(self) -> Tuple[float, float]:
        return float(self.knots[0]), float(self.knots[-1])

    @property
    def max_value(self) -> float:
        return float(np.max(self.values))

    def is_zero(self) -> bool:
        return not np.any(self.values > 0)

    def evaluate(self, x: ArrayLike):
        """gamma(x); scalar in, float out; array in, array out."""
        result = np.interp(x, self.knots, self.values, left=0.0, right=0.0)
        if np.ndim(result) == 0:
            return float(result)
        return result

    __call__ = evaluate

    def integral(self) -> float:
        """Exact integral (trapezoid rule is exact on piecewise-linear functions)."""
        return float(np.sum(np.diff(self.knots) * (self.values[1:] + self.values[:-1]) * 0.5))

    def translated(self, dx: float) -> 'Profile':
        return Profile(knots=self.knots + dx, values=self.values.copy())

    def scaled(self, factor: float) -> 'Profile':
        if factor < 0:
            raise ValueError("Scale factor must be nonnegative")
        return Profile(knots=self.knots.copy(), values=self.values * factor)


def _quad(func: Callable[[float], float], a: float, b: float,
          points: Optional[Iterable[float]] = None, epsabs: float = QUAD_EPSABS,
          epsrel: float = 0.0, limit: int = QUAD_LIMIT) -> float:
    """scipy.integrate.quad with interior breakpoints, logging budget exhaustion."""
    if b <= a:
        return 0.0
    inner = None
    if points is not None:
        inner = sorted({float(p) for p in points if a < p < b})
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", integrate.IntegrationWarning)
        value, error = integrate.quad(func, a, b, points=inner or None,
                                      epsabs=epsabs, epsrel=epsrel, limit=limit)
    for warning in caught:
        logger.warning(f"Quadrature on [{a:.6g}, {b:.6g}] did not converge "
                       f"(error estimate {error:.2e}): {warning.message}")
    return value


def density_f(x: ArrayLike):
    """
    Limit density f(x) = 1 / (pi (1 - x^2) sqrt(1 - 2 x^2)) on the open support.

    Returns 0 for |x| >= sqrt(2)/2, endpoints included.
    """
    arr = np.asarray(x, dtype=float)
    out = np.zeros_like(arr)
    inside = np.abs(arr) < SUPPORT_HALF_WIDTH
    xs = arr[inside]
    out[inside] = 1.0 / (np.pi * (1.0 - xs * xs) * np.sqrt(1.0 - 2.0 * xs * xs))
    if out.ndim == 0:
        return float(out)
    return out


def density_f_t(t: float, x: ArrayLike):
    """Ballistic rescaling f_t(x) = f(x / t) / t, supported on [-t/sqrt(2), t/sqrt(2)]."""
    if not t > 0:
        raise ValueError(f"Time must be positive, got t = {t}")
    result = density_f(np.asarray(x, dtype=float) / t) / t
    if np.ndim(result) == 0:
        return float(result)
    return result


def _angle(u: float) -> float:
    """theta with u = sin(theta) / sqrt(2), clipped to [-pi/2, pi/2]."""
    s = min(1.0, max(-1.0, math.sqrt(2.0) * u))
    return math.asin(s)


def _angular_weight(theta: float) -> float:
    """f(u) du after u = sin(theta)/sqrt(2); bounded on [-pi/2, pi/2]."""
    s = math.sin(theta)
    return 1.0 / (math.pi * math.sqrt(2.0) * (1.0 - 0.5 * s * s))


def cdf_F(x: ArrayLike):
    """
    F(x) = integral of f up to x.

    The substitution x = sin(theta)/sqrt(2) removes the endpoint singularity.
    Arrays are integrated panel by panel between sorted points and accumulated.
    """
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0:
        return _cdf_scalar(float(arr))

    flat = arr.ravel()
    order = np.argsort(flat, kind="stable")
    out = np.empty_like(flat)
    previous_theta = -0.5 * math.pi
    running = 0.0
    for idx in order:
        theta = _angle(float(flat[idx]))
        if theta > previous_theta:
            running += _quad(_angular_weight, previous_theta, theta)
            previous_theta = theta
        out[idx] = min(1.0, max(0.0, running))
    return out.reshape(arr.shape)


def _cdf_scalar(x: float) -> float:
    if x <= -SUPPORT_HALF_WIDTH:
        return 0.0
    if x >= SUPPORT_HALF_WIDTH:
        return 1.0
    value = _quad(_angular_weight, -0.5 * math.pi, _angle(x))
    return min(1.0, max(0.0, value))


def moment_f(p: float) -> float:
    """Absolute moment of order p of the limit law, by the same substitution."""
    if p < 0:
        raise ValueError("Moment order must be nonnegative")

    def integrand(theta: float) -> float:
        return abs(math.sin(theta) / math.sqrt(2.0)) ** p * _angular_weight(theta)

    return 2.0 * _quad(integrand, 0.0, 0.5 * math.pi)


def rho_support(profile: Profile, t: float) -> Tuple[float, float]:
    """supp(gamma) + [-t/sqrt(2), t/sqrt(2)]."""
    if not t > 0:
        raise ValueError(f"Time must be positive, got t = {t}")
    lo, hi = profile.support
    spread = LIMIT_DENSITY.front(t)
    return lo - spread, hi + spread


def rho(profile: Profile, t: float, x: float) -> float:
    """
    Limit profile rho(t, x) = (gamma * f_t)(x).

    Written as the integral of gamma(x - t u) f(u) du and mapped to the angle
    variable, so the integrand is bounded; kinks of gamma become breakpoints.
    Exactly zero when x is farther than t/sqrt(2) from supp(gamma).
    """
    if not t > 0:
        raise ValueError(f"Time must be positive, got t = {t}")
    if profile.is_zero():
        return 0.0
    lo, hi = profile.support
    # gamma(x - t u) > 0 needs u in ((x - hi)/t, (x - lo)/t)
    u_lo = max((x - hi) / t, -SUPPORT_HALF_WIDTH)
    u_hi = min((x - lo) / t, SUPPORT_HALF_WIDTH)
    if u_lo >= u_hi:
        return 0.0

    theta_lo, theta_hi = _angle(u_lo), _angle(u_hi)
    breaks = [_angle((x - k) / t) for k in profile.knots]
    sqrt2 = math.sqrt(2.0)

    def integrand(theta: float) -> float:
        return profile.evaluate(x - t * math.sin(theta) / sqrt2) * _angular_weight(theta)

    return max(0.0, _quad(integrand, theta_lo, theta_hi, points=breaks))


def rho_integral(profile: Profile, t: float, weight: Optional[Profile] = None) -> float:
    """Integral of weight(x) * rho(t, x) over x (weight = 1 when omitted)."""
    lo, hi = rho_support(profile, t)
    spread = t * SUPPORT_HALF_WIDTH
    breaks = list(profile.knots - spread) + list(profile.knots) + list(profile.knots + spread)
    if weight is not None:
        if weight.is_zero():
            return 0.0
        w_lo, w_hi = weight.support
        lo, hi = max(lo, w_lo), min(hi, w_hi)
        breaks += list(weight.knots)

        def integrand(x: float) -> float:
            return weight.evaluate(x) * rho(profile, t, x)
    else:
        def integrand(x: float) -> float:
            return rho(profile, t, x)

    return _quad(integrand, lo, hi, points=breaks, epsabs=1e-9)


def heat_profile(profile: Profile, t: float, x: float) -> float:
    """
    Classical counterpart: gamma convolved with the Gaussian heat kernel of variance t.

    This is the limit profile of independent simple random walks under diffusive
    scaling; it is positive at every x once t > 0.
    """
    if not t > 0:
        raise ValueError(f"Time must be positive, got t = {t}")
    if profile.is_zero():
        return 0.0
    lo, hi = profile.support
    scale = math.sqrt(t)

    def integrand(y: float) -> float:
        return profile.evaluate(y) * norm.pdf(x - y, scale=scale)

    return _quad(integrand, lo, hi, points=profile.knots, epsabs=0.0, epsrel=1e-10)


def intensity_field(profile: Profile, n: int, steps: int) -> Tuple[int, np.ndarray]:
    """
    B(j, steps) for every site j where it can be nonzero.

    B(j) = sum_k gamma(k/n) q_steps(j - k) is a discrete convolution of the
    sampled profile with the averaged kernel.

    Returns:
        (offset, values) with values[i] = B(offset + i, steps)
    """
    if n < 1:
        raise ValueError(f"Scale must be positive, got n = {n}")
    if steps < 0:
        raise ValueError(f"Number of steps must be nonnegative, got {steps}")
    lo, hi = profile.support
    k_lo, k_hi = math.ceil(lo * n), floor_int(hi * n)
    if k_hi < k_lo or profile.is_zero():
        return 0, np.zeros(0)
    ks = np.arange(k_lo, k_hi + 1)
    gamma_k = profile.evaluate(ks / n)
    kernel = averaged_kernel(steps)
    values = np.convolve(gamma_k, kernel.probs)
    return k_lo + kernel.offset, values


def intensity_B(profile: Profile, n: int, t: float, j: int) -> float:
    """Exact Poisson parameter B(j, floor(t n)) at a single site."""
    if n < 1:
        raise ValueError(f"Scale must be positive, got n = {n}")
    if not t > 0:
        raise ValueError(f"Time must be positive, got t = {t}")
    return intensity_at(profile, n, floor_int(t * n), j)


def intensity_at(profile: Profile, n: int, steps: int, j: int) -> float:
    """B(j, steps) = sum over kernel sites m of gamma((j - m)/n) q_steps(m)."""
    kernel = averaged_kernel(steps)
    ks = j - kernel.sites
    return float(np.dot(profile.evaluate(ks / n), kernel.probs))
