"""Hypergeometric model of the number of correctly labeled instances in a batch.

A batch of ``B`` instances is drawn without replacement from a pool of ``N``
weakly labeled instances of which ``K`` are expected to be correct.  The count
``S`` of correct instances in the batch is hypergeometric, and the weight
given to the instance ranked ``i`` (by descending confidence) is the tail
probability ``P(S >= i)``.
"""

from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
import math

import numpy as np
from scipy.special import gammaln

from .errors import ParameterError

__all__ = [
    "HypergeomParams",
    "BatchWeights",
    "correct_count",
    "pmf",
    "pmf_vector",
    "tail_weights",
]


def correct_count(population, accuracy):
    """Expected number of correct instances, ``round(N * p)`` rounded half up.

    ``accuracy`` is taken at its shortest decimal representation so that grid
    values such as 0.35 round exactly (0.35 * 10 = 3.5 -> 4).
    """
    if not 0.0 <= float(accuracy) <= 1.0:
        raise ParameterError(f"accuracy must lie in [0, 1], got {accuracy}")
    exact = Fraction(repr(float(accuracy))) * int(population)
    return math.floor(exact + Fraction(1, 2))


@dataclass(frozen=True)
class HypergeomParams:
    population: int
    correct: int
    batch: int

    def __post_init__(self):
        n, k, b = self.population, self.correct, self.batch
        if any(int(v) != v for v in (n, k, b)):
            raise ParameterError(f"counts must be integers, got N={n}, K={k}, B={b}")
        if k < 0 or k > n:
            raise ParameterError(f"need 0 <= K <= N, got K={k}, N={n}")
        if b < 1 or b > n:
            raise ParameterError(f"need 1 <= B <= N, got B={b}, N={n}")

    @classmethod
    def from_accuracy(cls, population, accuracy, batch):
        return cls(int(population), correct_count(population, accuracy), int(batch))

    @property
    def support(self):
        """Inclusive ``(low, high)`` bounds of the number of correct draws."""
        n, k, b = self.population, self.correct, self.batch
        return max(0, b - (n - k)), min(b, k)

    @property
    def mean(self):
        return self.batch * self.correct / self.population


@dataclass(frozen=True)
class BatchWeights:
    q: np.ndarray
    omega: np.ndarray

    @property
    def batch(self):
        return len(self.omega)


def _log_comb(n, k):
    return gammaln(n + 1.0) - gammaln(k + 1.0) - gammaln(n - k + 1.0)


def pmf(params, k):
    """``P(S = k)`` computed in log space; zero outside the support."""
    lo, hi = params.support
    if k < lo or k > hi:
        return 0.0
    n, kk, b = params.population, params.correct, params.batch
    log_p = _log_comb(kk, k) + _log_comb(n - kk, b - k) - _log_comb(n, b)
    return float(np.exp(log_p))


def pmf_vector(params):
    """``P(S = k)`` for every ``k = 0..B`` as a float array."""
    return _pmf_vector(params.population, params.correct, params.batch).copy()


@lru_cache(maxsize=256)
def _pmf_vector(n, kk, b):
    q = np.zeros(b + 1)
    lo = max(0, b - (n - kk))
    hi = min(b, kk)
    ks = np.arange(lo, hi + 1, dtype=float)
    log_p = _log_comb(kk, ks) + _log_comb(n - kk, b - ks) - _log_comb(n, b)
    # Exponentiate term by term; the support is short enough that no
    # log-sum-exp normalization is needed.
    q[lo:hi + 1] = np.exp(log_p)
    q.setflags(write=False)
    return q


def tail_weights(params):
    """Per-rank weights ``omega_i = sum_{k >= i} Q_k`` for ``i = 1..B``."""
    q = _pmf_vector(params.population, params.correct, params.batch)
    tails = np.cumsum(q[::-1])[::-1]
    omega = np.clip(tails[1:], 0.0, 1.0)
    return BatchWeights(q=q.copy(), omega=omega)
