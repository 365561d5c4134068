"""The spine walk: tilted step laws, exact change-of-measure checks, and
corridor probabilities of the associated walk.

Averaging a tilted weight over all tree paths equals averaging over a single
walk whose step/count pair is drawn from the per-generation tilted law.  On
discrete tables both sides are finite sums, so the identity can be verified to
floating-point accuracy by enumerating the product of outcome tables; that
enumeration doubles as the exact oracle for population means elsewhere.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Iterator, Optional, Sequence, Union

import numpy as np

from . import cgf, env_model, rng as rngmod
from .env_model import DiscreteTable, EnvironmentRealization, GaussianCount, ReproductionParams
from .errors import DegenerateLawError
from .cgf import Estimate

__all__ = [
    "DiscreteTiltedStepLaw",
    "GaussianTiltedStepLaw",
    "TiltedStepLaw",
    "SpinePath",
    "tilted_step_law",
    "sample_spine_walk",
    "iter_path_atoms",
    "tree_path_expectation",
    "partition_value",
    "verify_many_to_one",
    "corridor_probability",
    "CorridorEstimates",
    "first_second_moment_lower_bound",
    "estimate_fsm_inputs",
]


@dataclass(frozen=True)
class DiscreteTiltedStepLaw:
    """Finite tilted law on (displacement, sibling count) pairs."""

    atoms: tuple[tuple[float, int], ...]
    probs: tuple[float, ...]

    def sample(self, size: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        idx = rng.choice(len(self.probs), p=self.probs, size=size)
        disp = np.array([a[0] for a in self.atoms])[idx]
        sib = np.array([a[1] for a in self.atoms])[idx]
        return disp, sib


@dataclass(frozen=True)
class GaussianTiltedStepLaw:
    """Tilted law for count-independent Gaussian displacements: the count is
    size-biased and the displacement mean shifts down by tilt * variance."""

    count_atoms: tuple[int, ...]
    count_probs: tuple[float, ...]
    mean: float
    variance: float

    def sample(self, size: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        support = np.array(self.count_atoms, dtype=np.int64)
        if support.size == 1:
            sib = np.full(size, support[0])
        else:
            sib = support[rng.choice(support.size, p=self.count_probs, size=size)]
        disp = rng.normal(self.mean, math.sqrt(self.variance), size=size)
        return disp, sib


TiltedStepLaw = Union[DiscreteTiltedStepLaw, GaussianTiltedStepLaw]


@lru_cache(maxsize=4096)
def tilted_step_law(params: ReproductionParams, theta: float) -> TiltedStepLaw:
    """Tilted (displacement, sibling-count) law of one generation.

    Discrete table: each child slot of outcome k carries weight
    ``w_k * exp(-theta * z)`` and the pair is (z, len(outcome k)); weights are
    normalised by their total.  Gaussian-count family: the numerator
    factorises, so the count marginal is size-biased and the displacement
    marginal is Gaussian with mean shifted by ``-theta * variance``,
    independent of the count.
    """
    if isinstance(params, DiscreteTable):
        weights: dict[tuple[float, int], float] = {}
        total = 0.0
        for w, out in zip(params.weights, params.outcomes):
            for z in out:
                e = w * math.exp(-theta * z)
                key = (z, len(out))
                weights[key] = weights.get(key, 0.0) + e
                total += e
        if total <= 0.0:
            raise DegenerateLawError("no child has positive tilted weight")
        atoms = tuple(sorted(weights))
        probs = tuple(weights[a] / total for a in atoms)
        return DiscreteTiltedStepLaw(atoms, probs)
    mean_n = params.mean_count
    if mean_n <= 0.0:
        raise DegenerateLawError("zero mean offspring count")
    counts = tuple(k for k, _ in params.count_probs if k > 0)
    probs = tuple(k * p / mean_n for k, p in params.count_probs if k > 0)
    return GaussianTiltedStepLaw(counts, probs, params.mean - theta * params.variance, params.variance)


@dataclass(frozen=True)
class SpinePath:
    """One sampled spine: steps, sibling counts and the associated walk."""

    theta: float
    displacements: np.ndarray  # X_1..X_n
    sibling_counts: np.ndarray  # xi_1..xi_n
    positions: np.ndarray  # S_0..S_n
    walk: np.ndarray  # T_0..T_n with T_i = theta*S_i + K_i

    @property
    def length(self) -> int:
        return len(self.displacements)


def sample_spine_walk(
    env: EnvironmentRealization, theta: float, n: int, rng: np.random.Generator
) -> SpinePath:
    """Draw the spine for the first ``n`` generations of ``env``."""
    if n > env.horizon:
        raise ValueError("environment horizon shorter than requested walk")
    disp = np.empty(n)
    sib = np.empty(n, dtype=np.int64)
    for i in range(n):
        x, s = tilted_step_law(env.params[i], theta).sample(1, rng)
        disp[i], sib[i] = x[0], s[0]
    positions = np.concatenate(([0.0], np.cumsum(disp)))
    cum_k = cgf.cumulative_K(env.window(0, n), theta)
    return SpinePath(theta, disp, sib, positions, theta * positions + cum_k)


# ---------------------------------------------------------------------------
# Exact enumeration over discrete-table environments
# ---------------------------------------------------------------------------


def _require_discrete(env: EnvironmentRealization) -> None:
    if not all(isinstance(p, DiscreteTable) for p in env.params):
        raise TypeError("exact enumeration needs a discrete-table environment")


def iter_path_atoms(
    env: EnvironmentRealization, n: int
) -> Iterator[tuple[float, tuple[float, ...], tuple[int, ...]]]:
    """Enumerate ancestral-path atoms of a depth-``n`` discrete tree.

    Yields ``(weight, steps, parent_counts)`` where ``weight`` is the product
    of the chosen outcome probabilities, ``steps`` are the per-generation
    child displacements along the path and ``parent_counts[i]`` is the brood
    size produced by the path's generation-i parent.  Summing
    ``weight * g(...)`` over atoms is the exact expectation of
    ``sum over generation-n particles of g(path of u)``.
    """
    _require_discrete(env)
    if n > env.horizon:
        raise ValueError("environment horizon shorter than requested depth")
    per_gen: list[list[tuple[float, float, int]]] = []
    for p in env.params[:n]:
        slots = [
            (w, z, len(out))
            for w, out in zip(p.weights, p.outcomes)
            for z in out
        ]
        per_gen.append(slots)
    for combo in itertools.product(*per_gen):
        weight = 1.0
        for w, _, _ in combo:
            weight *= w
        yield weight, tuple(z for _, z, _ in combo), tuple(c for _, _, c in combo)


def tree_path_expectation(
    env: EnvironmentRealization,
    n: int,
    path_fn: Callable[[np.ndarray, tuple[int, ...]], float],
) -> float:
    """Exact value of ``E[sum over generation-n particles of path_fn(...)]``.

    ``path_fn`` receives the path's absolute positions ``V_1..V_n`` and the
    brood sizes along it.
    """
    total = 0.0
    for weight, steps, counts in iter_path_atoms(env, n):
        total += weight * path_fn(np.cumsum(steps), counts)
    return total


def partition_value(env: EnvironmentRealization, theta: float, n: int) -> float:
    """Exact ``E[sum over generation-n particles of exp(-theta * position)]``,
    the normaliser of the path change of measure (equals ``exp`` of the
    environment walk at ``n``)."""
    return tree_path_expectation(env, n, lambda v, _: math.exp(-theta * v[-1]))


def verify_many_to_one(
    env: EnvironmentRealization,
    theta: float,
    f: Callable[[np.ndarray], float],
    a_thresholds: Sequence[float],
    n: int,
) -> tuple[float, float, float]:
    """Exactly evaluate both sides of the change-of-measure identity.

    Left side: tilted average of ``f`` over tree paths with the brood size of
    each path's generation-(i-1) parent held at or below ``a_thresholds[i-1]``
    (that brood is the one drawn jointly with step i of the spine).  Right
    side: the same functional under the product of tilted step laws.  Both are
    exact finite sums; returns ``(lhs, rhs, abs_diff)``.
    """
    _require_discrete(env)
    if len(a_thresholds) < n:
        raise ValueError("need one threshold per generation")
    num = 0.0
    den = 0.0
    for weight, steps, counts in iter_path_atoms(env, n):
        positions = np.cumsum(steps)
        tilted = weight * math.exp(-theta * positions[-1])
        den += tilted
        if all(counts[i] <= a_thresholds[i] for i in range(n)):
            num += tilted * f(positions)
    if den <= 0.0:
        raise DegenerateLawError("tilted partition function vanishes")
    lhs = num / den

    laws = [tilted_step_law(env.params[i], theta) for i in range(n)]
    for law in laws:
        if not isinstance(law, DiscreteTiltedStepLaw):
            raise TypeError("exact enumeration needs a discrete-table environment")
    rhs = 0.0
    for combo in itertools.product(*(zip(law.atoms, law.probs) for law in laws)):
        prob = 1.0
        ok = True
        steps = np.empty(n)
        for i, ((z, sib), p) in enumerate(combo):
            prob *= p
            steps[i] = z
            if sib > a_thresholds[i]:
                ok = False
        if ok and prob > 0.0:
            rhs += prob * f(np.cumsum(steps))
    return lhs, rhs, abs(lhs - rhs)


# ---------------------------------------------------------------------------
# Corridor probabilities of the associated walk
# ---------------------------------------------------------------------------


def corridor_probability(
    env: EnvironmentRealization,
    theta: float,
    n: int,
    lower: Callable[[int], float],
    upper: Callable[[int], float],
    xi_threshold: float,
    replicates: int,
    seed: int,
    start: float = 0.0,
) -> Estimate:
    """Monte Carlo estimate of the walk staying inside the corridor.

    Estimates the probability that the associated walk started at ``start``
    satisfies ``lower(i) <= T_i <= upper(i)`` with sibling count at most
    ``xi_threshold`` for every ``1 <= i <= n``.  Replicates are vectorised
    generation by generation; generation ``g`` draws from the stream keyed
    ``(seed, "spine", g)`` with the replicate index as vector position.
    """
    if n > env.horizon:
        raise ValueError("environment horizon shorter than corridor length")
    walk = np.full(replicates, float(start))
    alive = np.ones(replicates, dtype=bool)
    for g in range(1, n + 1):
        gen = rngmod.stream(seed, "spine", g)
        params = env.params[g - 1]
        disp, sib = tilted_step_law(params, theta).sample(replicates, gen)
        walk = walk + theta * disp + env_model.kappa(params, theta)
        alive &= (walk >= lower(g)) & (walk <= upper(g)) & (sib <= xi_threshold)
        if not alive.any():
            break
    p_hat = float(alive.mean())
    return Estimate(p_hat, math.sqrt(p_hat * (1.0 - p_hat) / replicates))


@dataclass(frozen=True)
class CorridorEstimates:
    """Plug-in estimates feeding the first-second moment ratio.

    ``numerator`` estimates the walk-weighted corridor expectation
    ``E[exp(T_n) * 1{corridor, sibling cap}]``; ``tail_probs[j-1]`` bounds the
    best-start probability of staying in the sloped strip from generation j
    to n.
    """

    numerator: float
    tail_probs: np.ndarray


def first_second_moment_lower_bound(
    estimates: CorridorEstimates,
    n: int,
    b: float,
    d: float,
    a_n: float,
    theta: float,
) -> float:
    """Assemble the first-second-moment survival lower bound for the event
    that some generation-n particle stayed below the ``b*i/n**(2/3)`` line.

    The strip has width ``theta*d*n**(1/3)`` below the line ``theta*b*i/n**(2/3)``
    (the width carries the tilt factor, matching the strip used for the tail
    probabilities).  Raises ``ValueError`` on a nonpositive denominator.
    """
    if a_n < 1.0:
        raise ValueError("sibling cap a_n must be >= 1")
    tail = np.asarray(estimates.tail_probs, dtype=float)
    if tail.shape != (n,):
        raise ValueError(f"need {n} tail probabilities, got {tail.shape}")
    j = np.arange(1, n + 1)
    weights = np.exp(theta * (b * n ** (1.0 / 3.0) + d * n ** (1.0 / 3.0) - b * j / n ** (2.0 / 3.0)))
    denom = 1.0 + (a_n - 1.0) * float(np.sum(weights * tail))
    if denom <= 0.0:
        raise ValueError(f"nonpositive denominator {denom!r}: invalid plug-in estimates")
    return estimates.numerator / denom


def estimate_fsm_inputs(
    env: EnvironmentRealization,
    theta: float,
    n: int,
    b: float,
    d: float,
    a_n: float,
    replicates: int,
    seed: int,
    start_grid: int = 3,
) -> CorridorEstimates:
    """Monte Carlo plug-in estimates for :func:`first_second_moment_lower_bound`.

    The numerator reweights sampled spine walks by ``exp(T_n)`` on the strip
    event.  Each tail probability is a sup over the conditioning point,
    approximated by the max over ``start_grid`` starts across the strip plus
    two standard errors, clipped at 1 (overestimating a tail probability only
    weakens the returned bound, preserving its direction).
    """

    def line(i: int) -> float:
        return theta * b * i / n ** (2.0 / 3.0)

    width = theta * d * n ** (1.0 / 3.0)

    walk = np.zeros(replicates)
    inside = np.ones(replicates, dtype=bool)
    for g in range(1, n + 1):
        gen = rngmod.stream(seed, "fsm-num", g)
        params = env.params[g - 1]
        disp, sib = tilted_step_law(params, theta).sample(replicates, gen)
        walk = walk + theta * disp + env_model.kappa(params, theta)
        inside &= (walk <= line(g)) & (walk >= line(g) - width) & (sib <= a_n)
    numerator = float(np.mean(np.exp(walk) * inside))

    # The tail events carry no sibling cap: imposing one would shrink these
    # probabilities and inflate the assembled bound past its guarantee.
    tail = np.empty(n)
    tail[n - 1] = 1.0  # staying from n to n is certain
    fractions = np.linspace(0.25, 0.75, start_grid)
    for j in range(1, n):
        length = n - j
        sub_env = env.window(j, length)
        best = 0.0
        for k, frac in enumerate(fractions):
            start = line(j) - frac * width
            est = corridor_probability(
                sub_env,
                theta,
                length,
                lower=lambda i, j=j: line(j + i) - width,
                upper=lambda i, j=j: line(j + i),
                xi_threshold=float("inf"),
                replicates=replicates,
                seed=rngmod.derive_seed(seed, "fsm-tail", j, k),
                start=start,
            )
            best = max(best, min(1.0, est.value + 2.0 * est.stderr))
        tail[j - 1] = best
    return CorridorEstimates(numerator, tail)
