#!/usr/bin/env python3
# -*- coding: utf-8 -*-

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy.stats import poisson

from analytics import Profile, cdf_F, density_f, intensity_field, intensity_at, rho, rho_integral
from ensemble import (FunctionalObserver, LaplaceObserver, WindowObserver, derive_seed,
                      histogram_from_windows, laplace_exact, mean_and_stderr, simulate)
from parallel_processing import ParallelProcessor
from utils import floor_int
from walk_core import PositionDistribution, averaged_kernel

logger = logging.getLogger(__name__)

POISSON_TAIL = 1e-12


@dataclass
class ConvergenceReport:
    """A metric tracked along increasing scales n, with a downward-trend verdict."""
    scale_points: List[int]
    metric_values: List[float]
    metric_name: str
    monotone_trend: bool
    stderrs: List[float] = field(default_factory=list)
    extras: Dict[str, List[float]] = field(default_factory=dict)

    def __post_init__(self):
        if len(self.scale_points) < 2:
            raise ValueError("A convergence report needs at least two scale points")
        if len(self.metric_values) != len(self.scale_points):
            raise ValueError("scale_points and metric_values must have equal length")
        if not self.stderrs:
            self.stderrs = [0.0] * len(self.scale_points)
        if len(self.stderrs) != len(self.scale_points):
            raise ValueError("stderrs must match scale_points in length")

    @classmethod
    def from_values(cls, scale_points: Sequence[int], metric_values: Sequence[float],
                    metric_name: str, stderrs: Optional[Sequence[float]] = None,
                    extras: Optional[Dict[str, List[float]]] = None) -> 'ConvergenceReport':
        """The verdict is a trend (last below first), not strict monotonicity."""
        values = [float(v) for v in metric_values]
        return cls(scale_points=[int(n) for n in scale_points], metric_values=values,
                   metric_name=metric_name, monotone_trend=bool(values[-1] < values[0]),
                   stderrs=[float(s) for s in (stderrs or [])], extras=dict(extras or {}))

    def strictly_decreasing(self) -> bool:
        return all(b < a for a, b in zip(self.metric_values, self.metric_values[1:]))

    def to_rows(self) -> List[Tuple[int, float, float]]:
        return list(zip(self.scale_points, self.metric_values, self.stderrs))

    def to_dict(self) -> Dict:
        return {
            "metric_name": self.metric_name,
            "scale_points": list(self.scale_points),
            "metric_values": list(self.metric_values),
            "stderrs": list(self.stderrs),
            "monotone_trend": self.monotone_trend,
            "extras": {k: list(v) for k, v in self.extras.items()},
        }

    def verdict(self) -> Dict:
        return {
            "metric": self.metric_name,
            "monotone_trend": self.monotone_trend,
            "strictly_decreasing": self.strictly_decreasing(),
            "first": self.metric_values[0],
            "last": self.metric_values[-1],
        }


@dataclass(frozen=True)
class PoissonFit:
    tv: float
    passed: bool


@dataclass(frozen=True)
class CovarianceCheck:
    covariance: float
    stderr: float
    passed: bool


def _check_pmf(pmf: Mapping[int, float], name: str) -> float:
    values = np.array(list(pmf.values()), dtype=float)
    if np.any(values < 0):
        raise ValueError(f"{name} has negative entries")
    return float(values.sum())


def tv_distance(p: Mapping[int, float], q: Mapping[int, float]) -> float:
    """
    Total variation distance between p and a possibly truncated q.

    Mass missing from q (the truncated tail of an infinite-support law) is
    counted as disagreement.
    """
    p_total = _check_pmf(p, "p")
    q_total = _check_pmf(q, "q")
    if abs(p_total - 1.0) > 1e-9:
        raise ValueError(f"p must sum to 1, got {p_total}")
    if q_total > 1.0 + 1e-9:
        raise ValueError(f"q must sum to at most 1, got {q_total}")
    support = set(p) | set(q)
    diff = sum(abs(p.get(k, 0.0) - q.get(k, 0.0)) for k in support)
    return min(1.0, 0.5 * diff + 0.5 * max(0.0, 1.0 - q_total))


def poisson_pmf_truncated(mean: float, tail: float = POISSON_TAIL) -> Dict[int, float]:
    """Poisson(mean) pmf up to the first point where the remaining tail is below `tail`."""
    if mean < 0:
        raise ValueError(f"Poisson mean must be nonnegative, got {mean}")
    if mean == 0:
        return {0: 1.0}
    cutoff = int(poisson.isf(tail, mean))
    while poisson.sf(cutoff, mean) >= tail:
        cutoff += 1
    ks = np.arange(cutoff + 1)
    return {int(k): float(p) for k, p in zip(ks, poisson.pmf(ks, mean))}


def empirical_pmf(histogram: Mapping[int, float]) -> Dict[int, float]:
    total = float(sum(histogram.values()))
    if total <= 0:
        raise ValueError("Histogram is empty")
    return {int(k): float(v) / total for k, v in histogram.items() if v}


def poisson_fit(histogram: Mapping[int, float], mean: float, threshold: float = 0.01) -> PoissonFit:
    """TV distance between an empirical count histogram and Poisson(mean)."""
    tv = tv_distance(empirical_pmf(histogram), poisson_pmf_truncated(mean))
    return PoissonFit(tv=tv, passed=tv <= threshold)


def poisson_tv(mean_a: float, mean_b: float) -> float:
    """TV distance between two Poisson laws."""
    p = poisson_pmf_truncated(mean_a)
    q = poisson_pmf_truncated(mean_b)
    # both truncations are in the 1e-12 tail
    return tv_distance({k: v / sum(p.values()) for k, v in p.items()}, q)


def tv_noise_floor(pmf: Mapping[int, float], replicas: int) -> float:
    """Approximate expected TV between a pmf and an empirical sample of it."""
    probs = np.array(list(pmf.values()), dtype=float)
    return float(0.5 * np.sum(np.sqrt(2.0 * probs * (1.0 - probs) / (math.pi * replicas))))


def ks_distance_to_limit(dist: PositionDistribution, n: int) -> float:
    """
    sup_x |F_n(x) - F(x)| between the law of X_n / n and the limit law.

    The empirical side is a step function, so the supremum is reached just
    before or at one of its jumps.
    """
    scale = n if n > 0 else 1
    support = dist.probs > 0
    sites = dist.sites[support]
    probs = dist.probs[support]
    after = np.cumsum(probs)
    before = after - probs
    limit = cdf_F(sites / scale)
    return float(max(np.max(np.abs(after - limit)), np.max(np.abs(before - limit))))


def lln_table(n: int) -> List[Tuple[float, float, float]]:
    """
    Rows (x, rescaled pmf, f(x)) comparing the law of X_n / n with the limit density.

    The pmf lives on one parity class, so sites are 2 apart and the density
    estimate is n q_n(m) / 2.
    """
    kernel = averaged_kernel(n)
    scale = max(n, 1)
    rows = []
    for site, prob in zip(kernel.sites, kernel.probs):
        if prob <= 0:
            continue
        x = site / scale
        rows.append((float(x), float(prob * scale / 2.0), float(density_f(x))))
    return rows


def functional_moments_exact(profile: Profile, test_fn: Profile, n: int,
                             steps: int) -> Tuple[float, float]:
    """
    Exact mean and variance of the empirical functional under independent Poisson marginals:

        mean = (1/n) sum_k H(k/n) B(k),  variance = (1/n^2) sum_k H(k/n)^2 B(k)
    """
    offset, intensities = intensity_field(profile, n, steps)
    if len(intensities) == 0:
        return 0.0, 0.0
    weights = test_fn.evaluate(np.arange(offset, offset + len(intensities)) / n)
    mean = float(np.dot(weights, intensities)) / n
    variance = float(np.dot(weights * weights, intensities)) / (n * n)
    return mean, variance


def functional_mean_exact(profile: Profile, test_fn: Profile, n: int, steps: int) -> float:
    return functional_moments_exact(profile, test_fn, n, steps)[0]


def functional_variance(profile: Profile, test_fn: Profile, n: int, steps: int) -> float:
    return functional_moments_exact(profile, test_fn, n, steps)[1]


def std_check(values: Sequence[float], exact_std: float, sigma: float = 3.0) -> Dict:
    """Compare the replica standard deviation with an exact value (normal-theory stderr)."""
    arr = np.asarray(values, dtype=float)
    if len(arr) < 2:
        raise ValueError("Need at least two replicas")
    std = float(arr.std(ddof=1))
    stderr = std / math.sqrt(2.0 * (len(arr) - 1))
    return {"std": std, "exact_std": exact_std, "stderr": stderr,
            "passed": abs(std - exact_std) <= sigma * stderr}


def covariance_check(samples_a: Sequence[float], samples_b: Sequence[float],
                     sigma: float = 3.0) -> CovarianceCheck:
    """Sample covariance of two count series and whether it is within sigma stderr of 0."""
    a = np.asarray(samples_a, dtype=float)
    b = np.asarray(samples_b, dtype=float)
    if a.shape != b.shape or len(a) < 2:
        raise ValueError("Need two equally long series of at least two replicas")
    products = (a - a.mean()) * (b - b.mean())
    cov = float(products.sum() / (len(a) - 1))
    stderr = float(products.std(ddof=1) / math.sqrt(len(a)))
    return CovarianceCheck(covariance=cov, stderr=stderr, passed=abs(cov) <= sigma * stderr)


def local_equilibrium_scan(profile: Profile, t: float, x: float, n_list: Sequence[int],
                           replicas: int, seed: int,
                           processor: Optional[ParallelProcessor] = None) -> ConvergenceReport:
    """
    TV distance between the count law at site floor(x n), time floor(t n), and Poisson(rho(t, x)).

    The target is the limiting intensity, so the distance combines the finite-n
    gap B - rho with Monte Carlo noise; the report's stderr column is the
    expected noise floor.
    """
    _check_scales(n_list, t)
    target = rho(profile, t, x)
    target_pmf = poisson_pmf_truncated(target)
    values, floors, intensities, tv_to_b = [], [], [], []
    for i, n in enumerate(n_list):
        steps, site = floor_int(t * n), floor_int(x * n)
        windows = simulate(profile, n, steps, replicas, derive_seed(seed, i), processor,
                           observer=WindowObserver(site, 0))
        histogram = histogram_from_windows(np.array(windows), 0)[0]
        intensity = intensity_at(profile, n, steps, site)
        empirical = empirical_pmf(histogram)
        values.append(tv_distance(empirical, target_pmf))
        tv_to_b.append(tv_distance(empirical, poisson_pmf_truncated(intensity)))
        floors.append(tv_noise_floor(target_pmf, replicas))
        intensities.append(intensity)
        logger.info(f"Local equilibrium n={n}: TV={values[-1]:.5f}, "
                    f"B={intensity:.6f}, rho={target:.6f}")
    return ConvergenceReport.from_values(n_list, values, "tv_to_poisson_rho", floors,
                                         extras={"intensity_B": intensities,
                                                 "rho": [target] * len(n_list),
                                                 "tv_to_poisson_B": tv_to_b})


def hydro_scan(profile: Profile, test_fn: Profile, t: float, n_list: Sequence[int],
               replicas: int, seed: int,
               processor: Optional[ParallelProcessor] = None) -> ConvergenceReport:
    """
    |replica mean of (1/n) sum H(k/n) eta(k) - integral of H rho(t, .)| along n_list.
    """
    _check_scales(n_list, t)
    target = rho_integral(profile, t, weight=test_fn)
    errors, stderrs, means, stds, exact_means, exact_stds = [], [], [], [], [], []
    for i, n in enumerate(n_list):
        steps = floor_int(t * n)
        functionals = simulate(profile, n, steps, replicas, derive_seed(seed, i), processor,
                               observer=FunctionalObserver(test_fn))
        mean, stderr = mean_and_stderr(functionals)
        exact_mean, exact_var = functional_moments_exact(profile, test_fn, n, steps)
        errors.append(abs(mean - target))
        stderrs.append(stderr)
        means.append(mean)
        stds.append(float(np.std(functionals, ddof=1)) if replicas > 1 else 0.0)
        exact_means.append(exact_mean)
        exact_stds.append(math.sqrt(exact_var))
        logger.info(f"Hydrodynamic functional n={n}: mean={mean:.6f}, target={target:.6f}, "
                    f"std={stds[-1]:.6f}")
    return ConvergenceReport.from_values(n_list, errors, "abs_error", stderrs,
                                         extras={"functional_mean": means,
                                                 "target": [target] * len(n_list),
                                                 "replica_std": stds,
                                                 "exact_mean": exact_means,
                                                 "exact_std": exact_stds})


def product_poisson_check(profile: Profile, n: int, steps: int, center_site: int,
                          probe_offsets: Sequence[int], replicas: int, seed: int,
                          processor: Optional[ParallelProcessor] = None,
                          threshold: float = 0.01, sigma: float = 3.0) -> Dict:
    """
    Finite-n local equilibrium: per-site TV to Poisson(B(j, steps)) at probe sites,
    plus the covariance between the outermost probes.
    """
    if not probe_offsets:
        raise ValueError("At least one probe offset is required")
    half_width = max(abs(o) for o in probe_offsets)
    windows = np.array(simulate(profile, n, steps, replicas, seed, processor,
                                observer=WindowObserver(center_site, half_width)))
    histograms = histogram_from_windows(windows, half_width)
    probes = []
    for offset in probe_offsets:
        intensity = intensity_at(profile, n, steps, center_site + offset)
        fit = poisson_fit(histograms[offset], intensity, threshold)
        probes.append({"site": center_site + offset, "intensity_B": intensity,
                       "tv": fit.tv, "passed": fit.passed})
    first, last = min(probe_offsets), max(probe_offsets)
    covariance = None
    if first != last:
        covariance = covariance_check(windows[:, first + half_width],
                                      windows[:, last + half_width], sigma)
    passed = all(p["passed"] for p in probes) and (covariance is None or covariance.passed)
    return {"probes": probes, "covariance": covariance, "passed": passed}


def laplace_check(profile: Profile, n: int, steps: int, lam: Mapping[int, float],
                  replicas: int, seed: int, processor: Optional[ParallelProcessor] = None,
                  sigma: float = 3.0) -> Dict:
    """Monte Carlo E[exp(-sum lambda eta)] against the exact product formula."""
    exact = laplace_exact(profile, n, steps, lam)
    statistics = simulate(profile, n, steps, replicas, seed, processor,
                          observer=LaplaceObserver(lam))
    mc, stderr = mean_and_stderr(statistics)
    gap = abs(mc - exact)
    return {"exact": exact, "monte_carlo": mc, "stderr": stderr, "gap": gap,
            "passed": gap <= sigma * stderr}


def _check_scales(n_list: Sequence[int], t: float) -> None:
    if not t > 0:
        raise ValueError(f"Time must be positive, got t = {t}")
    if len(n_list) < 2:
        raise ValueError("A scan needs at least two scales")
    if any(n < 1 for n in n_list) or any(b <= a for a, b in zip(n_list, n_list[1:])):
        raise ValueError(f"Scales must be positive and strictly increasing, got {list(n_list)}")
