"""
Deterministic, stream-splittable sampling for the benchmark generator.

Every stream is a Philox counter-based generator keyed by ``(seed, stream_id)``.
Forking derives a new key without touching the parent's counter, so instance
``i`` of a dataset draws the same numbers no matter how many instances are
generated or in which order.
"""
import math
from dataclasses import dataclass
from enum import Enum
from typing import Sequence, Union

import numpy as np

from .core import InvalidDistributionError, InvalidParameterError

MASK_64 = (1 << 64) - 1
_UNIT = 2.0 ** -53
_GOLDEN_GAMMA = 0x9E3779B97F4A7C15

# Sub-stream ids used when forking a per-instance stream
STREAM_SPLIT = 0x5F117


def splitmix64(value: int) -> int:
    """One round of the SplitMix64 finalizer."""
    z = (value + _GOLDEN_GAMMA) & MASK_64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK_64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK_64
    return z ^ (z >> 31)


def parse_seed(value: Union[int, str]) -> int:
    """Accept seeds as ints, decimal strings or 0x-prefixed hex strings."""
    seed = int(value, 0) if isinstance(value, str) else int(value)
    if not 0 <= seed <= MASK_64:
        raise InvalidParameterError(f"Seed must be a 64-bit unsigned integer, got {value}")
    return seed


class SeededRng:
    """
    A (seed, stream_id) keyed random stream.

    The only mutable state is the Philox counter; two objects built from the
    same key and asked for the same sequence of draws return identical values.
    """

    __slots__ = ("seed", "stream_id", "drawn", "_bitgen")

    def __init__(self, seed: int, stream_id: int = 0):
        self.seed = parse_seed(seed)
        self.stream_id = parse_seed(stream_id)
        self.drawn = 0
        key = np.array([self.seed, self.stream_id], dtype=np.uint64)
        self._bitgen = np.random.Philox(key=key)

    def __repr__(self) -> str:
        return f"SeededRng(seed={self.seed:#x}, stream_id={self.stream_id:#x})"

    @property
    def counter(self) -> int:
        """Number of 64-bit words drawn so far."""
        return self.drawn

    def units(self, n: int) -> np.ndarray:
        """``n`` doubles in [0, 1) built from the top 53 bits of raw 64-bit words."""
        raw = self._bitgen.random_raw(size=n)
        self.drawn += n
        return (raw >> np.uint64(11)).astype(np.float64) * _UNIT

    def unit(self) -> float:
        return float(self.units(1)[0])


def _check_interval(lo: float, hi: float) -> None:
    if not (math.isfinite(lo) and math.isfinite(hi)):
        raise InvalidDistributionError(f"Interval bounds must be finite, got [{lo}, {hi}]")
    if lo > hi:
        raise InvalidDistributionError(f"Invalid uniform interval: lo={lo} > hi={hi}")


def _scale_units(units: np.ndarray, lo: float, hi: float) -> np.ndarray:
    values = lo + (hi - lo) * units
    # rounding can land exactly on hi; keep the interval half-open
    return np.where(values >= hi, lo, values) if hi > lo else np.full_like(units, lo)


def next_uniform(rng: SeededRng, lo: float, hi: float) -> float:
    """One draw from U[lo, hi). ``lo == hi`` returns ``lo``."""
    _check_interval(lo, hi)
    return float(_scale_units(rng.units(1), lo, hi)[0])


def uniform_array(rng: SeededRng, lo: float, hi: float, n: int) -> np.ndarray:
    _check_interval(lo, hi)
    return _scale_units(rng.units(n), lo, hi)


def gaussian_array(rng: SeededRng, mu: float, sigma: float, n: int) -> np.ndarray:
    """
    ``n`` draws from N(mu, sigma^2) via the Box-Muller cosine branch.

    Always consumes exactly two uniforms per draw, including when sigma is 0.
    """
    if sigma < 0 or not math.isfinite(sigma):
        raise InvalidDistributionError(f"Gaussian sigma must be >= 0, got {sigma}")
    u = rng.units(2 * n).reshape(n, 2)
    if sigma == 0:
        return np.full(n, float(mu))
    radius = np.sqrt(-2.0 * np.log1p(-u[:, 0]))
    return mu + sigma * radius * np.cos(2.0 * math.pi * u[:, 1])


def next_gaussian(rng: SeededRng, mu: float, sigma: float) -> float:
    return float(gaussian_array(rng, mu, sigma, 1)[0])


def next_signed_uniform(rng: SeededRng, lo: float, hi: float) -> float:
    """``s * x`` with ``x ~ U[lo, hi)`` and an equiprobable sign ``s``."""
    if lo < 0:
        raise InvalidDistributionError(f"Signed uniform needs lo >= 0, got {lo}")
    _check_interval(lo, hi)
    u = rng.units(2)
    magnitude = float(_scale_units(u[:1], lo, hi)[0])
    return magnitude if u[1] < 0.5 else -magnitude


def next_index(rng: SeededRng, n: int) -> int:
    """Uniform integer in [0, n)."""
    if n <= 0:
        raise InvalidDistributionError(f"Index range must be positive, got {n}")
    return min(int(rng.unit() * n), n - 1)


def next_categorical(rng: SeededRng, probs: Sequence[float]) -> int:
    cumulative = np.cumsum(np.asarray(probs, dtype=np.float64))
    if len(cumulative) == 0 or cumulative[-1] <= 0:
        raise InvalidDistributionError("Categorical probabilities must have positive mass")
    u = rng.unit() * cumulative[-1]
    index = int(np.searchsorted(cumulative, u, side="right"))
    return min(index, len(cumulative) - 1)


def permutation(rng: SeededRng, n: int) -> np.ndarray:
    """Deterministic shuffle of ``range(n)``."""
    return np.argsort(rng.units(n), kind="stable")


def fork(rng: SeededRng, stream_id: int) -> SeededRng:
    """Independent child stream. The parent's state is not touched."""
    child_seed = splitmix64(rng.seed ^ splitmix64(rng.stream_id))
    return SeededRng(child_seed, parse_seed(stream_id))


def instance_stream(dataset_seed: int, stage: int, instance_id: int) -> SeededRng:
    """Stream keyed by (dataset seed, stage, instance index)."""
    return fork(fork(SeededRng(dataset_seed, 0), stage), instance_id)


class DistKind(str, Enum):
    UNIFORM = "uniform"
    GAUSSIAN = "gaussian"
    SIGNED_UNIFORM = "signed_uniform"


@dataclass(frozen=True)
class DistSpec:
    """A named distribution: U[p1, p2], N(p1, p2^2) or +-U[p1, p2]."""
    kind: DistKind
    p1: float
    p2: float

    def __post_init__(self):
        if self.kind == DistKind.GAUSSIAN:
            if self.p2 < 0:
                raise InvalidDistributionError(f"Gaussian sigma must be >= 0, got {self.p2}")
        elif self.p1 > self.p2:
            raise InvalidDistributionError(f"Invalid interval [{self.p1}, {self.p2}]")
        if self.kind == DistKind.SIGNED_UNIFORM and self.p1 < 0:
            raise InvalidDistributionError(f"Signed uniform needs p1 >= 0, got {self.p1}")

    def sample(self, rng: SeededRng) -> float:
        if self.kind == DistKind.UNIFORM:
            return next_uniform(rng, self.p1, self.p2)
        if self.kind == DistKind.GAUSSIAN:
            return next_gaussian(rng, self.p1, self.p2)
        return next_signed_uniform(rng, self.p1, self.p2)
