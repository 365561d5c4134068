"""Branching-process utilities: moment recursions, survival bounds, exact
enumeration oracles, and the auxiliary block process whose survival bounds
the barrier survival probability from below.

The auxiliary construction chops time into blocks.  Inside each block a
particle first has to drag one descendant below a gentle barrier segment
(probability p1), then that descendant's thinned offspring process has to
beat a deterministic target count (probability p2); treating each block as a
two-point offspring law feeds the harmonic-sum survival bound, which is a
lower bound for the barrier survival at a proportionally larger slope.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import cgf, env_model, rng as rngmod
from .cgf import BarrierSpec, Estimate
from .engine import estimate_quenched_survival
from .env_model import EnvironmentLaw, EnvironmentRealization, sample_environment
from .errors import ParameterError

__all__ = [
    "GenerationMoments",
    "moment_recursion",
    "paley_zygmund_bound",
    "agresti_lower_bound",
    "CountDistribution",
    "exact_population_distribution",
    "AuxiliaryBlockReport",
    "AuxiliaryBound",
    "build_auxiliary_bp",
]


@dataclass(frozen=True)
class GenerationMoments:
    """First derivative and second factorial moment of one generation's
    offspring generating function at 1."""

    mean: float  # f'(1) > 0
    second_factorial: float  # f''(1) >= 0

    def __post_init__(self) -> None:
        if self.mean <= 0.0:
            raise ValueError("offspring mean must be > 0")
        if self.second_factorial < 0.0:
            raise ValueError("second factorial moment must be >= 0")


def moment_recursion(moments: Sequence[GenerationMoments]) -> tuple[float, float]:
    """Population mean and normalised second factorial moment after n steps.

    Returns ``(E Z_n, E[Z_n (Z_n - 1)] / (E Z_n)^2)``; the ratio telescopes
    over generations as ``sum_i f''_i(1) / (prod_{k<i} f'_k(1) * f'_i(1)^2)``.
    """
    if not moments:
        raise ValueError("need at least one generation")
    mean = 1.0
    ratio = 0.0
    for gm in moments:
        ratio += gm.second_factorial / (mean * gm.mean**2)
        mean *= gm.mean
    return mean, ratio


def paley_zygmund_bound(moments: Sequence[GenerationMoments], b: float, n: int) -> float:
    """Second-moment lower bound for beating ``max(b**-n * E Z_n, 1)``.

    Combines the Paley-Zygmund inequality (for the ``b**-n E Z_n`` level) with
    Cauchy-Schwarz (for the level 1), so the value never exceeds the true
    probability of the max event.
    """
    if b <= 1.0:
        raise ValueError("b must be > 1")
    if not 1 <= n <= len(moments):
        raise ValueError("n outside the supplied moment sequence")
    mean, ratio = moment_recursion(moments[:n])
    second = ratio * mean**2 + mean  # E Z_n^2 from the factorial ratio
    return (1.0 - b**-n) ** 2 * mean**2 / second


def agresti_lower_bound(moments: Sequence[GenerationMoments]) -> float:
    """Harmonic-sum lower bound on survival of the time-inhomogeneous process.

    Value is ``[prod 1/f'_j + sum_i (f''_i/f'_i) * prod_{j<=i} 1/f'_j]**-1``
    clipped into [0, 1] (the raw value can exceed 1 only for moment pairs no
    offspring law attains)."""
    if not moments:
        raise ValueError("need at least one block")
    inv_prod = 1.0
    acc = 0.0
    for gm in moments:
        inv_prod /= gm.mean
        acc += (gm.second_factorial / gm.mean) * inv_prod
    return min(1.0, 1.0 / (inv_prod + acc))


# ---------------------------------------------------------------------------
# Exact enumeration oracle for small count distributions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CountDistribution:
    """Offspring-count distribution on 0..len(probs)-1."""

    probs: tuple[float, ...]

    def __post_init__(self) -> None:
        p = np.asarray(self.probs)
        if p.size == 0 or np.any(p < 0) or abs(float(p.sum()) - 1.0) > 1e-12:
            raise ValueError("probs must be nonnegative and sum to 1")

    def moments(self) -> GenerationMoments:
        ks = np.arange(len(self.probs))
        p = np.asarray(self.probs)
        return GenerationMoments(float((ks * p).sum()), float((ks * (ks - 1) * p).sum()))


def exact_population_distribution(dists: Sequence[CountDistribution]) -> np.ndarray:
    """Exact law of the generation-n population for a process started from one
    particle, generation i reproducing by ``dists[i]``.  Returned as the
    probability vector over 0..max possible size (convolution powers)."""
    pop = np.array([0.0, 1.0])  # P(Z_0 = k)
    for dist in dists:
        child = np.asarray(dist.probs)
        # conv_powers[z] = law of the sum of z i.i.d. offspring counts
        max_z = pop.size - 1
        conv = np.array([1.0])
        new = np.zeros(max_z * (child.size - 1) + 1)
        for z in range(max_z + 1):
            if pop[z] > 0.0:
                new[: conv.size] += pop[z] * conv
            if z < max_z:
                conv = np.convolve(conv, child)
        pop = new
    return pop


# ---------------------------------------------------------------------------
# Auxiliary block process
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AuxiliaryBlockReport:
    """Per-block ingredients of the auxiliary survival bound."""

    index: int
    start: int  # a_{n,l}: generation where the count phase begins
    end: int  # b_{n,l}: generation where the block ends
    p1: Estimate
    p2: Estimate
    target: float  # scaled product of expected thinned counts over the block
    target_clipped: float  # max(target, 1)
    offspring_mean: float  # p1 * p2 * ceil(target_clipped)


@dataclass(frozen=True)
class AuxiliaryBound:
    """Assembled survival lower bound with its truncation report."""

    blocks: tuple[AuxiliaryBlockReport, ...]
    lower_bound: float
    denominator: float
    tail_estimate: float
    depth: int  # per-slope horizon n of the schedule
    z_value: float
    supercritical: bool


def _block_boundaries(block: int, sn: int, zn: int) -> tuple[int, int]:
    # a_{n,l} = (l-1)(sn + zn) + sn, b_{n,l} = l(sn + zn)
    return (block - 1) * (sn + zn) + sn, block * (sn + zn)


def _simulate_count_phase(
    env: EnvironmentRealization,
    theta: float,
    a: float,
    start: int,
    length: int,
    target: float,
    replicates: int,
    cap: int,
    seed: int,
) -> Estimate:
    """Probability that the thinned count process run for ``length`` steps
    from one particle reaches ``target``.

    Step i reproduces by the thinned law of generation ``start + i``: a brood
    is sampled and only children at or below ``a`` minus the tilt-scaled
    transform survive.  Counts are truncated at ``cap``, which can only lower
    the estimate, preserving the bound direction.
    """
    if length == 0:
        return Estimate(1.0 if target <= 1.0 else 0.0, 0.0)
    cutoffs = []
    for i in range(1, length + 1):
        params = env.params[start + i - 1]
        cutoffs.append(a - env_model.kappa(params, theta) / theta)
    sizes = np.ones(replicates, dtype=np.int64)
    for i in range(1, length + 1):
        gen = rngmod.stream(seed, "aux-count", i)
        params = env.params[start + i - 1]
        alive = sizes > 0
        new = np.zeros_like(sizes)
        idx = np.nonzero(alive)[0]
        for r in idx:
            counts = env_model.sample_children_below(params, cutoffs[i - 1], int(sizes[r]), gen)
            new[r] = min(int(counts.sum()), cap)
        sizes = new
        if not sizes.any():
            break
    p_hat = float((sizes >= target).mean())
    return Estimate(p_hat, math.sqrt(p_hat * (1.0 - p_hat) / replicates))


def build_auxiliary_bp(
    law: EnvironmentLaw,
    env_seed: int,
    theta: float,
    epsilon: float,
    c: float,
    a: float,
    w: float,
    varsigma: int,
    blocks: int,
    replicates: int,
    cap: int,
    base_seed: int,
    threads: int = 1,
) -> AuxiliaryBound:
    """Estimate the auxiliary-process survival bound for slope ``c*epsilon``.

    The schedule sets ``z = (c-1)*varsigma*epsilon / (a - c*epsilon)`` and the
    per-slope horizon ``n = floor((varsigma + z) * epsilon**-1.5)``; block l
    spends ``varsigma*n`` generations on the descent phase (probability p1 of
    keeping a line below the slope-``epsilon`` barrier segment) and
    ``floor(z*n)`` generations on the count phase (probability p2 of beating
    the block target).  The harmonic series over blocks is truncated at
    ``blocks`` terms and closed with a geometric tail taken in the pessimistic
    direction; subcritical blocks make the tail infinite and the bound 0.
    """
    if not c > 1.0:
        raise ParameterError("c must be > 1")
    if epsilon <= 0.0 or a <= c * epsilon:
        raise ParameterError("need epsilon > 0 and a > c*epsilon for a positive schedule")
    if varsigma < 1 or blocks < 1:
        raise ParameterError("varsigma and blocks must be >= 1")
    m_at_a = cgf.m_of_a(law, theta, a)
    if not (m_at_a.value > 0.0 and 1.0 < w < math.exp(m_at_a.value)):
        raise ParameterError(
            f"w={w!r} outside (1, exp(m(a))={math.exp(m_at_a.value):.6g}); pick larger a or smaller w"
        )
    z = (c - 1.0) * varsigma * epsilon / (a - c * epsilon)
    n = int(math.floor((varsigma + z) * epsilon**-1.5))
    sn = varsigma * n
    zn = int(math.floor(z * n))
    horizon = blocks * (sn + zn)
    env = sample_environment(law, horizon, env_seed)

    # expected thinned counts per generation, accumulated per block in logs
    log_counts = np.empty(horizon)
    for i in range(1, horizon + 1):
        params = env.params[i - 1]
        cutoff = a - env_model.kappa(params, theta) / theta
        ec = env_model.expected_children_below(params, cutoff)
        log_counts[i - 1] = math.log(ec) if ec > 0.0 else float("-inf")

    reports = []
    for l in range(1, blocks + 1):
        start, end = _block_boundaries(l, sn, zn)
        descent_env = env.window(end - (sn + zn), sn)
        p1 = estimate_quenched_survival(
            descent_env,
            BarrierSpec(epsilon, 1.0, theta),
            sn,
            replicates,
            cap,
            rngmod.derive_seed(base_seed, "aux-p1", l),
            threads,
        )
        log_target = -zn * math.log(w) + float(np.sum(log_counts[start:end]))
        target = math.exp(log_target) if math.isfinite(log_target) else 0.0
        target_clipped = max(target, 1.0)
        p2 = _simulate_count_phase(
            env,
            theta,
            a,
            start,
            zn,
            target_clipped,
            replicates,
            cap,
            rngmod.derive_seed(base_seed, "aux-p2", l),
        )
        offspring_mean = p1.p_hat * p2.value * math.ceil(target_clipped)
        reports.append(
            AuxiliaryBlockReport(
                l,
                start,
                end,
                Estimate(p1.p_hat, p1.stderr),
                p2,
                target,
                target_clipped,
                offspring_mean,
            )
        )

    terms = []
    prod = 1.0
    for rep in reports:
        if rep.offspring_mean <= 0.0:
            terms.append(float("inf"))
            prod = 0.0
            continue
        prod *= rep.offspring_mean
        terms.append(math.ceil(rep.target_clipped) / prod)
    denominator = float(sum(terms))
    if len(terms) >= 2 and terms[-2] > 0.0 and math.isfinite(terms[-1]):
        ratio = terms[-1] / terms[-2]
    elif math.isfinite(terms[-1]):
        ratio = 1.0 / reports[-1].offspring_mean if reports[-1].offspring_mean > 0 else float("inf")
    else:
        ratio = float("inf")
    tail = terms[-1] * ratio / (1.0 - ratio) if 0.0 <= ratio < 1.0 else float("inf")
    total = denominator + tail
    bound = 0.0 if not math.isfinite(total) else min(1.0, 1.0 / total)
    return AuxiliaryBound(
        tuple(reports),
        bound,
        denominator,
        tail,
        n,
        z,
        supercritical=all(r.offspring_mean > 1.0 for r in reports),
    )
