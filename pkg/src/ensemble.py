#!/usr/bin/env python3
# -*- coding: utf-8 -*-

import logging
import math
from collections import Counter
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from analytics import Profile
from parallel_processing import ParallelProcessor
from utils import floor_int
from walk_core import CoinTag, chirality_kernel

logger = logging.getLogger(__name__)

UINT64_MASK = (1 << 64) - 1


@dataclass(frozen=True)
class RandomSource:
    """
    Identifies one reproducible random stream.

    The same (seed, stream_id) always yields the same draws; distinct stream
    ids are independent children of the same seed sequence.
    """
    seed: int
    stream_id: int = 0

    def generator(self) -> np.random.Generator:
        sequence = np.random.SeedSequence(entropy=self.seed & UINT64_MASK,
                                          spawn_key=(self.stream_id & UINT64_MASK,))
        return np.random.Generator(np.random.PCG64(sequence))


RandomLike = Union[RandomSource, np.random.Generator]


def _as_generator(rng: RandomLike) -> np.random.Generator:
    if isinstance(rng, RandomSource):
        return rng.generator()
    return rng


def derive_seed(seed: int, index: int) -> int:
    """Independent 64-bit seed for the index-th experiment run from one master seed."""
    sequence = np.random.SeedSequence(entropy=seed & UINT64_MASK, spawn_key=(1 << 32, index))
    return int(sequence.generate_state(1, dtype=np.uint64)[0])


@dataclass(frozen=True, eq=False)
class FieldConfiguration:
    """
    Initial numbers of walkers started from e_k (x) |+1> and e_k (x) |-1>.

    plus[i] / minus[i] are the counts at site offset + i; all other states hold
    no walkers.
    """
    offset: int
    plus: np.ndarray
    minus: np.ndarray
    scale_n: int = 1

    def __post_init__(self):
        plus = np.asarray(self.plus, dtype=np.int64)
        minus = np.asarray(self.minus, dtype=np.int64)
        if plus.ndim != 1 or plus.shape != minus.shape:
            raise ValueError("plus and minus counts must be 1-d arrays of equal length")
        if np.any(plus < 0) or np.any(minus < 0):
            raise ValueError("Walker counts must be nonnegative")
        if self.scale_n < 1:
            raise ValueError(f"Scale must be positive, got n = {self.scale_n}")
        object.__setattr__(self, "plus", plus)
        object.__setattr__(self, "minus", minus)

    @classmethod
    def empty(cls, scale_n: int = 1) -> 'FieldConfiguration':
        return cls(offset=0, plus=np.zeros(0, dtype=np.int64),
                   minus=np.zeros(0, dtype=np.int64), scale_n=scale_n)

    @classmethod
    def from_entries(cls, entries: Mapping[Tuple[int, CoinTag], int],
                     scale_n: int = 1) -> 'FieldConfiguration':
        """Build from a {(site, coin): count} map."""
        if not entries:
            return cls.empty(scale_n)
        sites = [site for site, _ in entries]
        lo, hi = min(sites), max(sites)
        plus = np.zeros(hi - lo + 1, dtype=np.int64)
        minus = np.zeros(hi - lo + 1, dtype=np.int64)
        for (site, coin), count in entries.items():
            target = plus if CoinTag.parse(coin) is CoinTag.PLUS else minus
            target[site - lo] += count
        return cls(offset=lo, plus=plus, minus=minus, scale_n=scale_n)

    def __len__(self) -> int:
        return len(self.plus)

    def sites(self) -> np.ndarray:
        return np.arange(self.offset, self.offset + len(self.plus))

    def count(self, site: int, coin: CoinTag) -> int:
        i = site - self.offset
        if i < 0 or i >= len(self.plus):
            return 0
        arr = self.plus if CoinTag.parse(coin) is CoinTag.PLUS else self.minus
        return int(arr[i])

    def entries(self) -> Dict[Tuple[int, CoinTag], int]:
        """Nonzero entries as a {(site, coin): count} map."""
        result = {}
        for site, p, m in zip(self.sites(), self.plus, self.minus):
            if p:
                result[(int(site), CoinTag.PLUS)] = int(p)
            if m:
                result[(int(site), CoinTag.MINUS)] = int(m)
        return result

    def total_walkers(self) -> int:
        return int(self.plus.sum() + self.minus.sum())


@dataclass(frozen=True, eq=False)
class OccupationField:
    """Measured number of walkers per site; counts[i] belongs to site offset + i."""
    offset: int
    counts: np.ndarray
    time_steps: int
    scale_n: int

    def __len__(self) -> int:
        return len(self.counts)

    def sites(self) -> np.ndarray:
        return np.arange(self.offset, self.offset + len(self.counts))

    def count(self, site: int) -> int:
        i = site - self.offset
        if i < 0 or i >= len(self.counts):
            return 0
        return int(self.counts[i])

    def total(self) -> int:
        return int(self.counts.sum())

    def window(self, center_site: int, half_width: int) -> np.ndarray:
        """Counts at center_site - half_width .. center_site + half_width."""
        out = np.zeros(2 * half_width + 1, dtype=np.int64)
        lo = center_site - half_width
        src_lo = max(lo, self.offset)
        src_hi = min(center_site + half_width, self.offset + len(self.counts) - 1)
        if src_hi >= src_lo:
            start = src_lo - self.offset
            out[src_lo - lo:src_hi - lo + 1] = self.counts[start:start + src_hi - src_lo + 1]
        return out

    def as_dict(self) -> Dict[int, int]:
        return {int(s): int(c) for s, c in zip(self.sites(), self.counts) if c}


def sample_field(profile: Profile, n: int, rng: RandomLike) -> FieldConfiguration:
    """
    Draw an initial configuration with slowly varying Poisson parameter.

    For each site k with gamma(k/n) > 0, the counts at e_k (x) |+1> and
    e_k (x) |-1> are independent Poisson(gamma(k/n) / 2).
    """
    if n < 1:
        raise ValueError(f"Scale must be positive, got n = {n}")
    gen = _as_generator(rng)
    lo, hi = profile.support
    ks = np.arange(math.ceil(lo * n), floor_int(hi * n) + 1)
    means = 0.5 * profile.evaluate(ks / n) if len(ks) else np.zeros(0)
    positive = np.nonzero(means > 0)[0]
    if len(positive) == 0:
        return FieldConfiguration.empty(scale_n=n)

    first, last = positive[0], positive[-1]
    ks = ks[first:last + 1]
    means = means[first:last + 1]
    plus = gen.poisson(means)
    minus = gen.poisson(means)
    config = FieldConfiguration(offset=int(ks[0]), plus=plus, minus=minus, scale_n=n)
    logger.debug(f"Sampled {config.total_walkers()} walkers over {len(ks)} sites at n={n}")
    return config


@lru_cache(maxsize=128)
def _position_cdf(steps: int, coin: CoinTag) -> np.ndarray:
    """Normalized cumulative law of the displacement after `steps`, for CDF inversion."""
    cdf = np.cumsum(chirality_kernel(steps, coin).probs)
    cdf /= cdf[-1]
    cdf.setflags(write=False)
    return cdf


def measure_field(config: FieldConfiguration, steps: int, rng: RandomLike) -> OccupationField:
    """
    Observe every walker after `steps` steps and count walkers per site.

    Displacements are drawn by inverting the exact cumulative law of a walker
    started at site 0 with the same coin; translation covariance places it at
    its own starting site.
    """
    if steps < 0:
        raise ValueError(f"Number of steps must be nonnegative, got {steps}")
    gen = _as_generator(rng)
    if len(config) == 0:
        return OccupationField(offset=0, counts=np.zeros(0, dtype=np.int64),
                               time_steps=steps, scale_n=config.scale_n)

    width = len(config) + 2 * steps
    counts = np.zeros(width, dtype=np.int64)
    for coin, walkers in ((CoinTag.PLUS, config.plus), (CoinTag.MINUS, config.minus)):
        total = int(walkers.sum())
        if total == 0:
            continue
        starts = np.repeat(np.arange(len(walkers)), walkers)
        displacement = np.searchsorted(_position_cdf(steps, coin), gen.random(total), side="right")
        counts += np.bincount(starts + displacement, minlength=width)
    return OccupationField(offset=config.offset - steps, counts=counts,
                           time_steps=steps, scale_n=config.scale_n)


def empirical_functional(field: OccupationField, test_fn: Profile) -> float:
    """(1/n) sum_k H(k/n) eta(k)."""
    if len(field) == 0:
        return 0.0
    n = field.scale_n
    weights = test_fn.evaluate(field.sites() / n)
    return float(np.dot(weights, field.counts)) / n


def window_histogram(fields: Sequence[OccupationField], center_site: int,
                     half_width: int) -> Dict[int, Counter]:
    """
    Per-offset histograms of counts across replicas.

    Returns:
        {offset: Counter(count -> number of replicas)} for offsets in
        [-half_width, half_width]
    """
    if half_width < 0:
        raise ValueError(f"half_width must be nonnegative, got {half_width}")
    if not fields:
        return {o: Counter() for o in range(-half_width, half_width + 1)}
    windows = np.array([f.window(center_site, half_width) for f in fields])
    return histogram_from_windows(windows, half_width)


def histogram_from_windows(windows: np.ndarray, half_width: int) -> Dict[int, Counter]:
    """Same as window_histogram, from an already extracted replicas x offsets array."""
    result = {}
    windows = np.asarray(windows).reshape(-1, 2 * half_width + 1)
    for column, offset in enumerate(range(-half_width, half_width + 1)):
        values, freq = np.unique(windows[:, column], return_counts=True)
        result[offset] = Counter({int(v): int(c) for v, c in zip(values, freq)})
    return result


def translate_field(field: OccupationField, k: int) -> OccupationField:
    """(tau_k eta)(j) = eta(j + k)."""
    return OccupationField(offset=field.offset - k, counts=field.counts.copy(),
                           time_steps=field.time_steps, scale_n=field.scale_n)


def configuration_distance(a: OccupationField, b: OccupationField) -> float:
    """sum_k 2^-|k| |a(k) - b(k)| / (1 + |a(k) - b(k)|), the product metric on N^Z."""
    if len(a) == 0 and len(b) == 0:
        return 0.0
    bounds = [(f.offset, f.offset + len(f) - 1) for f in (a, b) if len(f)]
    lo = min(x for x, _ in bounds)
    hi = max(y for _, y in bounds)
    half = max(abs(lo), abs(hi))
    diff = np.abs(a.window(0, half) - b.window(0, half)).astype(float)
    weights = np.exp2(-np.abs(np.arange(-half, half + 1)))
    return float(np.sum(weights * diff / (1.0 + diff)))


def _validate_lambda(lam: Mapping[int, float]) -> Tuple[np.ndarray, np.ndarray]:
    sites = np.array(sorted(int(j) for j in lam), dtype=np.int64)
    values = np.array([float(lam[j]) for j in sorted(lam)], dtype=float)
    if np.any(values < 0) or not np.all(np.isfinite(values)):
        raise ValueError("Laplace exponent weights must be finite and nonnegative")
    return sites, values


def beta_coefficients(steps: int, coin: CoinTag, lam: Mapping[int, float],
                      starts: np.ndarray) -> np.ndarray:
    """
    beta_k = E[exp(-lambda(X))] for a walker started at e_k (x) |coin>, for each k in starts.
    """
    kernel = chirality_kernel(steps, coin)
    sites, values = _validate_lambda(lam)
    starts = np.asarray(starts, dtype=np.int64)
    # displacement index of each (k, j) pair inside the kernel window
    idx = sites[None, :] - starts[:, None] - kernel.offset
    inside = (idx >= 0) & (idx < len(kernel.probs))
    probs = np.where(inside, kernel.probs[np.clip(idx, 0, len(kernel.probs) - 1)], 0.0)
    return 1.0 + probs @ np.expm1(-values)


def laplace_exact(profile: Profile, n: int, steps: int, lam: Mapping[int, float]) -> float:
    """
    E[exp(-sum_j lambda(j) eta(j))] from the kernels, with beta taken per chirality:

        exp( sum_k gamma(k/n)/2 (beta_k^+ - 1) + gamma(k/n)/2 (beta_k^- - 1) )
    """
    sites, _ = _validate_lambda(lam)
    if len(sites) == 0 or profile.is_zero():
        return 1.0
    lo, hi = profile.support
    k_lo = max(math.ceil(lo * n), int(sites[0]) - steps)
    k_hi = min(floor_int(hi * n), int(sites[-1]) + steps)
    if k_hi < k_lo:
        return 1.0
    ks = np.arange(k_lo, k_hi + 1)
    half_gamma = 0.5 * profile.evaluate(ks / n)
    exponent = 0.0
    for coin in (CoinTag.PLUS, CoinTag.MINUS):
        exponent += float(np.dot(half_gamma, beta_coefficients(steps, coin, lam, ks) - 1.0))
    return math.exp(exponent)


def laplace_statistic(field: OccupationField, lam: Mapping[int, float]) -> float:
    """exp(-sum_j lambda(j) eta(j)) for one measured field."""
    sites, values = _validate_lambda(lam)
    counts = np.array([field.count(int(j)) for j in sites], dtype=float)
    return math.exp(-float(np.dot(values, counts)))


def mean_and_stderr(values: Sequence[float]) -> Tuple[float, float]:
    arr = np.asarray(values, dtype=float)
    if len(arr) == 0:
        raise ValueError("Need at least one replica")
    if len(arr) == 1:
        return float(arr[0]), float("inf")
    return float(arr.mean()), float(arr.std(ddof=1) / math.sqrt(len(arr)))


def laplace_monte_carlo(fields: Sequence[OccupationField],
                        lam: Mapping[int, float]) -> Tuple[float, float]:
    """Monte Carlo mean of the Laplace statistic and its standard error."""
    return mean_and_stderr([laplace_statistic(f, lam) for f in fields])


class WindowObserver:
    """Keeps only the counts in a window around one site."""

    def __init__(self, center_site: int, half_width: int):
        self.center_site = center_site
        self.half_width = half_width

    def __call__(self, field: OccupationField) -> np.ndarray:
        return field.window(self.center_site, self.half_width)


class FunctionalObserver:
    """Keeps only the empirical functional of the field against a test function."""

    def __init__(self, test_fn: Profile):
        self.test_fn = test_fn

    def __call__(self, field: OccupationField) -> float:
        return empirical_functional(field, self.test_fn)


class LaplaceObserver:
    """Keeps only exp(-sum lambda eta)."""

    def __init__(self, lam: Mapping[int, float]):
        self.lam = dict(lam)

    def __call__(self, field: OccupationField) -> float:
        return laplace_statistic(field, self.lam)


class ReplicaTask:
    """One replica: sample the initial field, measure it, reduce it."""

    def __init__(self, profile: Profile, n: int, steps: int,
                 observer: Optional[Callable[[OccupationField], object]] = None):
        self.profile = profile
        self.n = n
        self.steps = steps
        self.observer = observer

    def __call__(self, source: RandomSource):
        gen = source.generator()
        config = sample_field(self.profile, self.n, gen)
        field = measure_field(config, self.steps, gen)
        if self.observer is None:
            return field
        return self.observer(field)


def simulate(profile: Profile, n: int, steps: int, replicas: int, seed: int,
             processor: Optional[ParallelProcessor] = None,
             observer: Optional[Callable[[OccupationField], object]] = None) -> List:
    """
    Run independent replicas of sample_field + measure_field.

    Args:
        profile: Initial profile gamma
        n: Scale parameter
        steps: Observation time in walk steps
        replicas: Number of replicas
        seed: Master seed; replica r uses RandomSource(seed, r)
        processor: Worker pool (sequential when omitted)
        observer: Optional reduction applied to each field inside the worker

    Returns:
        One OccupationField (or observer result) per replica, in replica order
    """
    if replicas < 0:
        raise ValueError(f"Number of replicas must be nonnegative, got {replicas}")
    processor = processor or ParallelProcessor(max_workers=1)
    if observer is None:
        per_field = 8 * (int(n * (profile.support[1] - profile.support[0])) + 2 * steps + 1)
        processor.check_memory(replicas * per_field)
    logger.info(f"Simulating {replicas} replicas at n={n}, steps={steps}")
    sources = [RandomSource(seed, r) for r in range(replicas)]
    return processor.map(ReplicaTask(profile, n, steps, observer), sources)
