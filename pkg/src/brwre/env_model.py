"""Reproduction-law families and i.i.d. environment sampling.

A reproduction law describes one generation's point process: how many
children a particle spawns and where they land relative to the parent.  Two
families are built in:

  * :class:`DiscreteTable` -- a finite table of (weight, displacement tuple)
    outcomes; bounded, displacement may depend on the branching.
  * :class:`GaussianCount` -- a count distribution on small integers with
    i.i.d. Gaussian displacements independent of the count; continuous and
    unbounded.

An :class:`EnvironmentLaw` is a finite mixture over reproduction laws; an
:class:`EnvironmentRealization` is a frozen sequence of per-generation
reproduction laws drawn i.i.d. from it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np

from . import rng as rngmod
from .errors import DomainError, InvalidLawError

__all__ = [
    "DiscreteTable",
    "GaussianCount",
    "ReproductionParams",
    "EnvironmentLaw",
    "EnvironmentRealization",
    "sample_environment",
    "sample_reproduction",
    "kappa",
    "kappa_prime",
    "kappa_second",
    "expected_children_below",
    "sample_children_below",
]

_WEIGHT_TOL = 1e-12

# Effectively-infinite finiteness bound used when a family's transform is
# finite for every nonnegative argument.
THETA_BAR_UNBOUNDED = 1e6


def _check_weights(weights, what: str) -> None:
    w = np.asarray(weights, dtype=float)
    if w.size == 0:
        raise InvalidLawError(f"{what}: empty weight list")
    if np.any(w < 0):
        raise InvalidLawError(f"{what}: negative weight")
    if abs(float(w.sum()) - 1.0) > _WEIGHT_TOL:
        raise InvalidLawError(f"{what}: weights sum to {w.sum()!r}, not 1")


@dataclass(frozen=True)
class DiscreteTable:
    """Finite reproduction table: outcome k has probability ``weights[k]`` and
    children at displacements ``outcomes[k]`` (possibly the empty tuple)."""

    weights: tuple[float, ...]
    outcomes: tuple[tuple[float, ...], ...]

    def __post_init__(self) -> None:
        if len(self.weights) != len(self.outcomes):
            raise InvalidLawError("discrete table: weights/outcomes length mismatch")
        _check_weights(self.weights, "discrete table")
        for out in self.outcomes:
            if not all(math.isfinite(z) for z in out):
                raise InvalidLawError("discrete table: non-finite displacement")

    @property
    def mean_count(self) -> float:
        return float(sum(w * len(out) for w, out in zip(self.weights, self.outcomes)))

    @property
    def max_count(self) -> int:
        return max(len(out) for out in self.outcomes)

    def count_probs(self) -> dict[int, float]:
        probs: dict[int, float] = {}
        for w, out in zip(self.weights, self.outcomes):
            probs[len(out)] = probs.get(len(out), 0.0) + w
        return probs

    def _laplace_sums(self, theta: float) -> tuple[float, float, float]:
        # A = E sum e^{-theta z}, with first and second theta-derivatives.
        a = a1 = a2 = 0.0
        for w, out in zip(self.weights, self.outcomes):
            for z in out:
                e = w * math.exp(-theta * z)
                a += e
                a1 -= z * e
                a2 += z * z * e
        return a, a1, a2

    def kappa(self, theta: float) -> float:
        a, _, _ = self._laplace_sums(theta)
        return math.log(a) if a > 0.0 else float("-inf")

    def kappa_prime(self, theta: float) -> float:
        a, a1, _ = self._laplace_sums(theta)
        return a1 / a

    def kappa_second(self, theta: float) -> float:
        a, a1, a2 = self._laplace_sums(theta)
        return a2 / a - (a1 / a) ** 2

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        k = int(rng.choice(len(self.weights), p=self.weights))
        return np.array(self.outcomes[k], dtype=float)

    def expected_below(self, cutoff: float) -> float:
        """Expected number of children with displacement <= cutoff."""
        return float(
            sum(
                w * sum(1 for z in out if z <= cutoff)
                for w, out in zip(self.weights, self.outcomes)
            )
        )

    def sample_below(self, cutoff: float, size: int, rng: np.random.Generator) -> np.ndarray:
        """Draw ``size`` i.i.d. copies of #children below ``cutoff``."""
        below = np.array(
            [sum(1 for z in out if z <= cutoff) for out in self.outcomes], dtype=np.int64
        )
        ks = rng.choice(len(self.weights), p=self.weights, size=size)
        return below[ks]


@dataclass(frozen=True)
class GaussianCount:
    """Count distribution on small nonnegative integers with i.i.d. Gaussian
    child displacements, independent of the count."""

    count_probs: tuple[tuple[int, float], ...]
    mean: float = 0.0
    variance: float = 1.0

    def __post_init__(self) -> None:
        if self.variance <= 0.0:
            raise InvalidLawError("gaussian count: variance must be > 0")
        counts = [k for k, _ in self.count_probs]
        if any(k < 0 for k in counts) or len(set(counts)) != len(counts):
            raise InvalidLawError("gaussian count: counts must be distinct nonnegative ints")
        _check_weights([p for _, p in self.count_probs], "gaussian count")

    @staticmethod
    def fixed_count(count: int, mean: float = 0.0, variance: float = 1.0) -> "GaussianCount":
        return GaussianCount(((count, 1.0),), mean, variance)

    @property
    def mean_count(self) -> float:
        return float(sum(k * p for k, p in self.count_probs))

    @property
    def max_count(self) -> int:
        return max(k for k, _ in self.count_probs)

    def kappa(self, theta: float) -> float:
        m = self.mean_count
        if m <= 0.0:
            return float("-inf")
        return math.log(m) - theta * self.mean + 0.5 * theta**2 * self.variance

    def kappa_prime(self, theta: float) -> float:
        return -self.mean + theta * self.variance

    def kappa_second(self, theta: float) -> float:
        return self.variance

    def sample_counts(self, size: int, rng: np.random.Generator) -> np.ndarray:
        support = np.array([k for k, _ in self.count_probs], dtype=np.int64)
        probs = np.array([p for _, p in self.count_probs], dtype=float)
        if support.size == 1:
            return np.full(size, support[0])
        return support[rng.choice(support.size, p=probs, size=size)]

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        n = int(self.sample_counts(1, rng)[0])
        return rng.normal(self.mean, math.sqrt(self.variance), size=n)

    def expected_below(self, cutoff: float) -> float:
        z = (cutoff - self.mean) / math.sqrt(self.variance)
        return self.mean_count * 0.5 * (1.0 + math.erf(z / math.sqrt(2.0)))

    def sample_below(self, cutoff: float, size: int, rng: np.random.Generator) -> np.ndarray:
        # Children are i.i.d. and independent of the count, so the below-cutoff
        # count of a sampled brood is Binomial(count, P(child <= cutoff)).
        z = (cutoff - self.mean) / math.sqrt(self.variance)
        p = 0.5 * (1.0 + math.erf(z / math.sqrt(2.0)))
        return rng.binomial(self.sample_counts(size, rng), p)


ReproductionParams = Union[DiscreteTable, GaussianCount]


@dataclass(frozen=True)
class EnvironmentLaw:
    """Finite mixture over reproduction laws; generations are drawn i.i.d.

    ``theta_bar`` declares the finiteness bound of the mixture's log-Laplace
    transform.  Both built-in families are finite for every ``theta >= 0``, so
    the default is a large sentinel.
    """

    components: tuple[tuple[float, ReproductionParams], ...]
    theta_bar: float = THETA_BAR_UNBOUNDED

    def __post_init__(self) -> None:
        _check_weights([w for w, _ in self.components], "environment law")
        if self.theta_bar <= 0.0:
            raise InvalidLawError("environment law: theta_bar must be > 0")

    @staticmethod
    def degenerate(params: ReproductionParams, theta_bar: float = THETA_BAR_UNBOUNDED) -> "EnvironmentLaw":
        return EnvironmentLaw(((1.0, params),), theta_bar)

    def check_theta(self, theta: float) -> None:
        if not 0.0 <= theta <= self.theta_bar:
            raise DomainError(f"theta={theta!r} outside [0, {self.theta_bar!r}]")

    def draw(self, rng: np.random.Generator) -> ReproductionParams:
        weights = [w for w, _ in self.components]
        k = int(rng.choice(len(self.components), p=weights))
        return self.components[k][1]


@dataclass(frozen=True)
class EnvironmentRealization:
    """A frozen length-``horizon`` sequence of per-generation reproduction laws."""

    params: tuple[ReproductionParams, ...]
    seed: int
    offset: int = 0  # generations dropped from the front of the seeded sequence

    @property
    def horizon(self) -> int:
        return len(self.params)

    def window(self, start: int, length: int) -> "EnvironmentRealization":
        """The sub-environment covering generations start+1 .. start+length."""
        if start < 0 or start + length > self.horizon:
            raise IndexError("environment window out of range")
        return EnvironmentRealization(
            self.params[start : start + length], self.seed, self.offset + start
        )


def sample_environment(law: EnvironmentLaw, horizon: int, seed: int) -> EnvironmentRealization:
    """Draw an i.i.d. environment of ``horizon`` generations.

    Generation ``i`` is drawn from its own stream keyed ``(seed, "env", i)``,
    so the result is deterministic in ``(law, seed, horizon)`` and extending
    the horizon with the same seed preserves the prefix.
    """
    if horizon < 0:
        raise ValueError("horizon must be >= 0")
    entries = tuple(law.draw(rngmod.stream(seed, "env", i)) for i in range(horizon))
    return EnvironmentRealization(entries, seed)


def sample_reproduction(params: ReproductionParams, rng: np.random.Generator) -> np.ndarray:
    """Draw one brood: the array of child displacements (possibly empty)."""
    return params.sample(rng)


def kappa(params: ReproductionParams, theta: float) -> float:
    """Log-Laplace transform of the reproduction point process at ``theta``.

    Closed form per family; ``-inf`` when the law cannot produce a child.
    """
    if theta < 0.0:
        raise DomainError(f"theta={theta!r} must be >= 0")
    return params.kappa(theta)


def kappa_prime(params: ReproductionParams, theta: float) -> float:
    """First derivative of :func:`kappa` in ``theta``."""
    if theta < 0.0:
        raise DomainError(f"theta={theta!r} must be >= 0")
    return params.kappa_prime(theta)


def kappa_second(params: ReproductionParams, theta: float) -> float:
    """Second derivative of :func:`kappa` in ``theta`` (nonnegative by convexity)."""
    if theta < 0.0:
        raise DomainError(f"theta={theta!r} must be >= 0")
    return params.kappa_second(theta)


def expected_children_below(params: ReproductionParams, cutoff: float) -> float:
    """Expected number of children born at or below ``cutoff``."""
    return params.expected_below(cutoff)


def sample_children_below(
    params: ReproductionParams, cutoff: float, size: int, rng: np.random.Generator
) -> np.ndarray:
    """Thinned reproduction: i.i.d. counts of children at or below ``cutoff``."""
    return params.sample_below(cutoff, size, rng)
