#!/usr/bin/env python3
# -*- coding: utf-8 -*-

import logging
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from typing import Dict, Optional

import numpy as np

from utils import ensure_memory

logger = logging.getLogger(__name__)

SQRT1_2 = 1.0 / np.sqrt(2.0)

# Hadamard coin in the (|+1>, |-1>) basis
HADAMARD = SQRT1_2 * np.array([[1.0, 1.0], [1.0, -1.0]], dtype=np.complex128)


class CoinTag(Enum):
    """Basis states of the coin space."""
    PLUS = 1
    MINUS = -1

    @classmethod
    def parse(cls, value) -> 'CoinTag':
        """Accepts a CoinTag, its name, or the chirality sign (+1 / -1)."""
        if isinstance(value, CoinTag):
            return value
        text = str(value).strip().upper()
        if text in ("PLUS", "+", "+1", "1"):
            return cls.PLUS
        if text in ("MINUS", "-", "-1"):
            return cls.MINUS
        raise ValueError(f"Invalid coin tag: {value}")


@dataclass(frozen=True, eq=False)
class SpinorState:
    """
    Exact amplitudes of a single walker over a finite window of sites.

    plus[i] and minus[i] hold the |+1> and |-1> components at site offset + i.
    Sites outside the window carry zero amplitude.
    """
    offset: int
    plus: np.ndarray
    minus: np.ndarray
    steps_taken: int = 0

    def __post_init__(self):
        if self.plus.shape != self.minus.shape or self.plus.ndim != 1 or len(self.plus) < 1:
            raise ValueError("plus and minus must be 1-d arrays of equal length >= 1")
        if self.steps_taken < 0:
            raise ValueError(f"steps_taken must be nonnegative, got {self.steps_taken}")
        self.plus.setflags(write=False)
        self.minus.setflags(write=False)

    @property
    def width(self) -> int:
        return len(self.plus)

    @property
    def last_site(self) -> int:
        return self.offset + self.width - 1

    def amplitude(self, site: int, coin: CoinTag) -> complex:
        """Amplitude at (site, coin); zero outside the window."""
        i = site - self.offset
        if i < 0 or i >= self.width:
            return 0j
        return complex(self.plus[i] if coin is CoinTag.PLUS else self.minus[i])


@dataclass(frozen=True, eq=False)
class PositionDistribution:
    """Probability mass function over the sites offset, offset+1, ..."""
    offset: int
    probs: np.ndarray

    def __post_init__(self):
        if self.probs.ndim != 1:
            raise ValueError("probs must be a 1-d array")
        if np.any(self.probs < 0):
            raise ValueError("probabilities must be nonnegative")
        self.probs.setflags(write=False)

    @property
    def sites(self) -> np.ndarray:
        return np.arange(self.offset, self.offset + len(self.probs))

    def pmf(self, site: int) -> float:
        i = site - self.offset
        if i < 0 or i >= len(self.probs):
            return 0.0
        return float(self.probs[i])

    def total(self) -> float:
        return float(np.sum(self.probs))

    def support(self) -> np.ndarray:
        """Sites carrying nonzero probability."""
        return self.sites[self.probs > 0]

    def mean(self) -> float:
        return float(np.dot(self.sites, self.probs))

    def as_dict(self) -> Dict[int, float]:
        return {int(s): float(p) for s, p in zip(self.sites, self.probs) if p > 0}


def from_localized(site: int, coin: CoinTag) -> SpinorState:
    """The basis state e_site (x) |coin>."""
    coin = CoinTag.parse(coin)
    plus = np.zeros(1, dtype=np.complex128)
    minus = np.zeros(1, dtype=np.complex128)
    if coin is CoinTag.PLUS:
        plus[0] = 1.0
    else:
        minus[0] = 1.0
    return SpinorState(offset=int(site), plus=plus, minus=minus, steps_taken=0)


def from_spinor(site: int, plus_amp: complex, minus_amp: complex) -> SpinorState:
    """
    A walker localized at one site with coin state a|+1> + b|-1>.

    The coin vector is normalized; a zero vector is rejected.
    """
    a = complex(plus_amp)
    b = complex(minus_amp)
    norm = np.sqrt(abs(a) ** 2 + abs(b) ** 2)
    if norm == 0.0 or not np.isfinite(norm):
        raise ValueError("Coin state must be a finite nonzero vector")
    plus = np.array([a / norm], dtype=np.complex128)
    minus = np.array([b / norm], dtype=np.complex128)
    return SpinorState(offset=int(site), plus=plus, minus=minus, steps_taken=0)


def step(state: SpinorState) -> SpinorState:
    """
    Apply U = S o (Id (x) H) once.

    The coin mixes the two components at every site, then the |+1> part moves
    right and the |-1> part moves left, so the window grows by one site per side.
    """
    width = state.width + 2
    ensure_memory(4 * width * np.dtype(np.complex128).itemsize)
    plus = np.zeros(width, dtype=np.complex128)
    minus = np.zeros(width, dtype=np.complex128)
    plus[2:] = (state.plus + state.minus) * SQRT1_2
    minus[:-2] = (state.plus - state.minus) * SQRT1_2
    return SpinorState(offset=state.offset - 1, plus=plus, minus=minus,
                       steps_taken=state.steps_taken + 1)


def evolve(state: SpinorState, n: int) -> SpinorState:
    """
    Apply the walk n times.

    Args:
        state: Starting state
        n: Number of steps (>= 0)

    Returns:
        U^n applied to state; the same object when n == 0
    """
    if n < 0:
        raise ValueError(f"Number of steps must be nonnegative, got {n}")
    if n == 0:
        return state

    width = state.width + 2 * n
    # two working buffers per chirality
    ensure_memory(4 * width * np.dtype(np.complex128).itemsize)

    plus = np.zeros(width, dtype=np.complex128)
    minus = np.zeros(width, dtype=np.complex128)
    plus[n:n + state.width] = state.plus
    minus[n:n + state.width] = state.minus
    new_plus = np.zeros_like(plus)
    new_minus = np.zeros_like(minus)

    # live region [lo, hi) inside the preallocated window
    lo, hi = n, n + state.width
    for _ in range(n):
        new_plus[lo - 1:hi + 1] = 0.0
        new_minus[lo - 1:hi + 1] = 0.0
        new_plus[lo + 1:hi + 1] = (plus[lo:hi] + minus[lo:hi]) * SQRT1_2
        new_minus[lo - 1:hi - 1] = (plus[lo:hi] - minus[lo:hi]) * SQRT1_2
        plus, new_plus = new_plus, plus
        minus, new_minus = new_minus, minus
        lo, hi = lo - 1, hi + 1

    logger.debug(f"Evolved state by {n} steps, window width {width}")
    return SpinorState(offset=state.offset - n, plus=plus, minus=minus,
                       steps_taken=state.steps_taken + n)


def total_probability(state: SpinorState) -> float:
    return float(np.sum(np.abs(state.plus) ** 2) + np.sum(np.abs(state.minus) ** 2))


def check_unitarity(state: SpinorState, tolerance: float = 1e-9) -> float:
    """
    Return the drift |1 - total probability|.

    Raises:
        ArithmeticError: if the drift exceeds the tolerance
    """
    drift = abs(1.0 - total_probability(state))
    if drift > tolerance:
        raise ArithmeticError(f"Unitarity drift {drift:.3e} after {state.steps_taken} "
                              f"steps exceeds tolerance {tolerance:.1e}")
    return drift


def position_distribution(state: SpinorState) -> PositionDistribution:
    """Measurement law P(X = j) = |plus_j|^2 + |minus_j|^2 over the window."""
    probs = (state.plus.real ** 2 + state.plus.imag ** 2
             + state.minus.real ** 2 + state.minus.imag ** 2)
    return PositionDistribution(offset=state.offset, probs=probs)


@lru_cache(maxsize=64)
def chirality_kernel(n: int, coin: CoinTag) -> PositionDistribution:
    """p_n^coin(0, .): law of the walker started at e_0 (x) |coin> after n steps."""
    if n < 0:
        raise ValueError(f"Number of steps must be nonnegative, got {n}")
    coin = CoinTag.parse(coin)
    return position_distribution(evolve(from_localized(0, coin), n))


@lru_cache(maxsize=64)
def averaged_kernel(n: int) -> PositionDistribution:
    """
    Equal-weight mixture of the two chirality kernels from site 0.

    Each chirality on its own is skewed; the mixture is even in the site.
    """
    p_plus = chirality_kernel(n, CoinTag.PLUS)
    p_minus = chirality_kernel(n, CoinTag.MINUS)
    return PositionDistribution(offset=-n, probs=0.5 * (p_plus.probs + p_minus.probs))


def shifted(dist: PositionDistribution, m: int) -> PositionDistribution:
    """Translate a law by m sites."""
    return PositionDistribution(offset=dist.offset + m, probs=dist.probs.copy())


def dense_unitary(half_width: int) -> np.ndarray:
    """
    U as a dense matrix on the truncated space [-w, w] x {+1, -1}.

    Basis index 2 * (site + w) + c with c = 0 for |+1> and c = 1 for |-1>.
    Amplitude shifted past the edge is dropped.
    """
    size = 2 * half_width + 1
    right = np.eye(size, k=-1)
    left = np.eye(size, k=1)
    proj_plus = np.diag([1.0, 0.0])
    proj_minus = np.diag([0.0, 1.0])
    shift = np.kron(right, proj_plus) + np.kron(left, proj_minus)
    return shift @ np.kron(np.eye(size), HADAMARD)


def dense_position_distribution(site: int, coin: CoinTag, n: int,
                                half_width: Optional[int] = None) -> PositionDistribution:
    """Brute-force law after n steps by repeated dense matrix-vector products."""
    coin = CoinTag.parse(coin)
    if half_width is None:
        half_width = abs(site) + n + 1
    unitary = dense_unitary(half_width)
    psi = np.zeros(2 * (2 * half_width + 1), dtype=np.complex128)
    psi[2 * (site + half_width) + (0 if coin is CoinTag.PLUS else 1)] = 1.0
    for _ in range(n):
        psi = unitary @ psi
    amps = psi.reshape(-1, 2)
    probs = np.sum(np.abs(amps) ** 2, axis=1)
    return PositionDistribution(offset=-half_width, probs=probs)
