"""Barrier-killed population simulation and survival estimation.

Particles are tracked relative to the killing line (position minus barrier),
which stays O(sqrt(n)) while absolute positions drift linearly; a particle is
alive iff its relative position is <= 0.  Populations above the cap are
uniformly subsampled, which can only under-count survivors, so every estimate
here keeps a lower-bound semantic with the cap hit recorded.

The common-random-numbers sweep never re-runs the tree per slope: each
particle carries the smallest barrier slope that would have kept its whole
ancestry alive, so survival indicators are exactly monotone in the slope and
in the depth, replicate by replicate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from . import cgf, env_model, rng as rngmod
from .cgf import BarrierSpec
from .env_model import (
    DiscreteTable,
    EnvironmentLaw,
    EnvironmentRealization,
    GaussianCount,
    ReproductionParams,
    sample_environment,
)

__all__ = [
    "Population",
    "SurvivalEstimate",
    "AnnealedSurvival",
    "ScalingRow",
    "simulate_to_depth",
    "estimate_quenched_survival",
    "estimate_annealed_survival",
    "coupled_survival_thresholds",
    "coupled_epsilon_sweep",
    "eq_depth_rule",
    "scaling_experiment",
]


@dataclass(frozen=True)
class Population:
    """Alive particles of one generation, positions relative to the barrier."""

    generation: int
    below_barrier: np.ndarray  # position - barrier height, all <= 0

    @property
    def size(self) -> int:
        return int(self.below_barrier.size)


@dataclass(frozen=True)
class SurvivalEstimate:
    """Binomial estimate of a finite-depth survival probability."""

    replicates: int
    successes: int
    p_hat: float
    stderr: float
    depth: int
    env_seed: int
    branch_seed: int
    cap_hits: int

    @staticmethod
    def from_counts(
        successes: int, replicates: int, depth: int, env_seed: int, branch_seed: int, cap_hits: int
    ) -> "SurvivalEstimate":
        p = successes / replicates
        se = math.sqrt(p * (1.0 - p) / replicates)
        return SurvivalEstimate(replicates, successes, p, se, depth, env_seed, branch_seed, cap_hits)


@dataclass(frozen=True)
class AnnealedSurvival:
    """Environment-averaged survival: pooled estimate plus the spread of the
    per-environment quenched estimates."""

    pooled: SurvivalEstimate
    quenched: tuple[SurvivalEstimate, ...]
    dispersion: float


def _spawn(
    params: ReproductionParams, parents: np.ndarray, rng: np.random.Generator
) -> np.ndarray:
    """Children positions given parent positions, one brood per parent."""
    m = parents.size
    if isinstance(params, DiscreteTable):
        ks = rng.choice(len(params.weights), p=params.weights, size=m)
        chunks = []
        for k, out in enumerate(params.outcomes):
            if not out:
                continue
            sel = parents[ks == k]
            if sel.size:
                chunks.append(np.repeat(sel, len(out)) + np.tile(np.array(out), sel.size))
        return np.concatenate(chunks) if chunks else np.empty(0)
    counts = params.sample_counts(m, rng)
    total = int(counts.sum())
    if total == 0:
        return np.empty(0)
    base = np.repeat(parents, counts)
    return base + rng.normal(params.mean, math.sqrt(params.variance), size=total)


def simulate_to_depth(
    env: EnvironmentRealization,
    spec: BarrierSpec,
    depth: int,
    cap: int,
    rng: np.random.Generator,
) -> tuple[bool, np.ndarray, bool]:
    """Run one barrier-killed population to ``depth`` generations.

    Children above the killing line are discarded the moment they are born;
    when the survivor count exceeds ``cap`` a uniform subset of size ``cap``
    is retained and the cap hit is reported.  Returns
    ``(survived, generation counts Y_0..Y_depth, cap_hit)``; the counts are
    post-subsampling, so they never over-state the population.
    """
    if depth > env.horizon:
        raise ValueError("environment horizon shorter than requested depth")
    if cap < 1:
        raise ValueError("cap must be >= 1")
    y = np.zeros(depth + 1, dtype=np.int64)
    y[0] = 1
    rel = np.zeros(1)  # root sits on the barrier: height 0 at generation 0
    cap_hit = False
    for g in range(1, depth + 1):
        params = env.params[g - 1]
        # barrier increment between generations g-1 and g
        step = -env_model.kappa(params, spec.theta) / spec.theta + spec.epsilon * (
            float(g) ** spec.alpha - float(g - 1) ** spec.alpha
        )
        children = _spawn(params, rel, rng) - step
        rel = children[children <= 0.0]
        if rel.size == 0:
            return False, y, cap_hit
        if rel.size > cap:
            rel = rng.choice(rel, size=cap, replace=False)
            cap_hit = True
        y[g] = rel.size
    return True, y, cap_hit


def estimate_quenched_survival(
    env: EnvironmentRealization,
    spec: BarrierSpec,
    depth: int,
    replicates: int,
    cap: int,
    branch_seed: int,
    threads: int = 1,
) -> SurvivalEstimate:
    """Estimate the chance the population survives to ``depth`` in the frozen
    environment.  Replicate r draws from the stream keyed
    ``(branch_seed, "branch", r)``, so the estimate is reproducible bit for
    bit at any worker count."""
    if replicates < 1:
        raise ValueError("replicates must be >= 1")

    def one(r: int) -> tuple[bool, bool]:
        survived, _, cap_hit = simulate_to_depth(
            env, spec, depth, cap, rngmod.stream(branch_seed, "branch", r)
        )
        return survived, cap_hit

    results = _map_indexed(one, replicates, threads)
    successes = sum(1 for s, _ in results if s)
    cap_hits = sum(1 for _, c in results if c)
    return SurvivalEstimate.from_counts(successes, replicates, depth, env.seed, branch_seed, cap_hits)


def _map_indexed(fn: Callable[[int], object], count: int, threads: int) -> list:
    """Apply ``fn`` to 0..count-1, results in index order regardless of scheduling."""
    if threads <= 1:
        return [fn(i) for i in range(count)]
    from concurrent.futures import ThreadPoolExecutor

    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, range(count)))


def annealed_seeds(base_seed: int, index: int) -> tuple[int, int]:
    """Deterministic (environment seed, branching seed) pair for outer draw ``index``."""
    return (
        rngmod.derive_seed(base_seed, "annealed-env", index),
        rngmod.derive_seed(base_seed, "annealed-branch", index),
    )


def estimate_annealed_survival(
    law: EnvironmentLaw,
    spec: BarrierSpec,
    depth: int,
    env_replicates: int,
    branching_replicates: int,
    cap: int,
    base_seed: int,
    threads: int = 1,
) -> AnnealedSurvival:
    """Average the quenched estimate over fresh environment draws.

    The pooled estimate merges successes across all environments; the
    dispersion is the standard deviation of the per-environment estimates
    (0 when a single environment is drawn).
    """
    if env_replicates < 1:
        raise ValueError("env_replicates must be >= 1")
    per_env: list[SurvivalEstimate] = []
    for j in range(env_replicates):
        env_seed, branch_seed = annealed_seeds(base_seed, j)
        env = sample_environment(law, depth, env_seed)
        per_env.append(
            estimate_quenched_survival(env, spec, depth, branching_replicates, cap, branch_seed, threads)
        )
    successes = sum(e.successes for e in per_env)
    total = env_replicates * branching_replicates
    pooled = SurvivalEstimate.from_counts(
        successes, total, depth, base_seed, base_seed, sum(e.cap_hits for e in per_env)
    )
    p_hats = np.array([e.p_hat for e in per_env])
    dispersion = float(p_hats.std(ddof=1)) if env_replicates > 1 else 0.0
    return AnnealedSurvival(pooled, tuple(per_env), dispersion)


# ---------------------------------------------------------------------------
# Common-random-numbers slope sweep
# ---------------------------------------------------------------------------


def _replicate_thresholds(
    env: EnvironmentRealization,
    theta: float,
    alpha: float,
    eps_max: float,
    depth: int,
    cap: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Per-generation minimal slope that keeps some particle alive.

    Expands the tree under the most permissive slope ``eps_max``, tracking for
    every particle the critical slope of its ancestry: the particle is alive
    under slope e iff its critical slope is <= e.  Entry g of the result is
    the minimum critical slope over generation g (inf once the tree is dead),
    nondecreasing in g, so survival indicators derived from it are exactly
    monotone in both slope and depth.
    """
    # state per particle: barrier-free height y = position + walk/theta, and
    # the critical slope of its ancestry so far
    ys = np.zeros(1)
    crit = np.full(1, float("-inf"))
    out = np.full(depth + 1, float("inf"))
    out[0] = float("-inf")  # the root is alive under every slope
    for g in range(1, depth + 1):
        params = env.params[g - 1]
        kap = env_model.kappa(params, theta)
        m = ys.size
        if isinstance(params, DiscreteTable):
            ks = rng.choice(len(params.weights), p=params.weights, size=m)
            child_y = []
            child_crit = []
            for k, outc in enumerate(params.outcomes):
                if not outc:
                    continue
                sel = ks == k
                if not sel.any():
                    continue
                arr = np.array(outc)
                child_y.append((ys[sel][:, None] + arr[None, :]).ravel())
                child_crit.append(np.repeat(crit[sel], len(outc)))
            ys_new = np.concatenate(child_y) if child_y else np.empty(0)
            crit_new = np.concatenate(child_crit) if child_crit else np.empty(0)
        else:
            counts = params.sample_counts(m, rng)
            total = int(counts.sum())
            if total == 0:
                ys_new = np.empty(0)
                crit_new = np.empty(0)
            else:
                ys_new = np.repeat(ys, counts) + rng.normal(
                    params.mean, math.sqrt(params.variance), size=total
                )
                crit_new = np.repeat(crit, counts)
        if ys_new.size == 0:
            break
        ys_new = ys_new + kap / theta
        # slope needed at generation g: (position + walk/theta) / g**alpha
        need = ys_new / float(g) ** alpha
        crit_new = np.maximum(crit_new, need)
        keep = crit_new <= eps_max
        ys, crit = ys_new[keep], crit_new[keep]
        if ys.size == 0:
            break
        if ys.size > cap:
            idx = rng.choice(ys.size, size=cap, replace=False)
            ys, crit = ys[idx], crit[idx]
        out[g] = float(crit.min())
    return out


def coupled_survival_thresholds(
    env: EnvironmentRealization,
    theta: float,
    alpha: float,
    eps_max: float,
    depth: int,
    replicates: int,
    cap: int,
    branch_seed: int,
) -> np.ndarray:
    """Matrix (replicates x depth+1) of per-generation critical slopes."""
    rows = [
        _replicate_thresholds(
            env, theta, alpha, eps_max, depth, cap, rngmod.stream(branch_seed, "sweep", r)
        )
        for r in range(replicates)
    ]
    return np.vstack(rows)


def coupled_epsilon_sweep(
    env: EnvironmentRealization,
    theta: float,
    eps_list: Sequence[float],
    alpha: float,
    depth: int,
    replicates: int,
    cap: int,
    branch_seed: int,
) -> list[SurvivalEstimate]:
    """Survival estimates across slopes with shared branching randomness.

    All slopes reuse the same trees, so the per-replicate survival indicator
    is nondecreasing in the slope by construction and the reported estimates
    are exactly ordered.
    """
    eps = [float(e) for e in eps_list]
    if any(b <= a for a, b in zip(eps, eps[1:])):
        raise ValueError("eps_list must be strictly increasing")
    thresholds = coupled_survival_thresholds(
        env, theta, alpha, eps[-1], depth, replicates, cap, branch_seed
    )
    final = thresholds[:, depth]
    out = []
    for e in eps:
        successes = int((final <= e).sum())
        out.append(
            SurvivalEstimate.from_counts(successes, replicates, depth, env.seed, branch_seed, 0)
        )
    return out


# ---------------------------------------------------------------------------
# Near-critical scaling experiment
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ScalingRow:
    epsilon: float
    depth: int
    p_hat: float
    stderr: float
    sqrt_eps_log_p: float
    flagged: bool


@dataclass(frozen=True)
class ScalingTable:
    rows: tuple[ScalingRow, ...]
    gamma_ref: Optional[float]


def eq_depth_rule(varsigma: int, c: float = 1.0, a: float = 1.0) -> Callable[[float], int]:
    """Depth schedule tying the horizon to the slope: for slope e, the depth is
    ``floor((varsigma + z) * e**(-3/2))`` with ``z = (c-1)*varsigma*e/(a-c*e)``."""

    def rule(eps: float) -> int:
        z = (c - 1.0) * varsigma * eps / (a - c * eps) if c > 1.0 else 0.0
        return int(math.floor((varsigma + z) * eps ** (-1.5)))

    return rule


def scaling_experiment(
    law: EnvironmentLaw,
    theta: float,
    eps_list: Sequence[float],
    varsigma: int,
    replicates: int,
    cap: int,
    seed: int,
    depth_rule: Optional[Callable[[float], int]] = None,
    max_depth: int = 100_000,
    gamma_ref: Optional[float] = None,
    alpha: float = 1.0,
    threads: int = 1,
) -> ScalingTable:
    """Tabulate ``sqrt(eps) * log p_hat`` along the depth schedule.

    All rows share one environment stream, so each row sees a prefix of the
    same realization.  Rows where every replicate dies or the schedule
    overflows ``max_depth`` are flagged rather than aborting the run.  The
    limit is asymptotic; this emits the finite-slope trend next to the
    ``gamma_ref`` line and makes no convergence claim.
    """
    rule = depth_rule or eq_depth_rule(varsigma)
    env_seed = rngmod.derive_seed(seed, "scaling-env")
    branch_seed = rngmod.derive_seed(seed, "scaling-branch")
    rows = []
    for eps in eps_list:
        depth = rule(eps)
        if depth > max_depth:
            rows.append(ScalingRow(eps, depth, float("nan"), float("nan"), float("nan"), True))
            continue
        env = sample_environment(law, depth, env_seed)
        est = estimate_quenched_survival(
            env, BarrierSpec(eps, alpha, theta), depth, replicates, cap, branch_seed, threads
        )
        if est.successes == 0:
            rows.append(ScalingRow(eps, depth, 0.0, 0.0, float("-inf"), True))
        else:
            rows.append(
                ScalingRow(
                    eps,
                    depth,
                    est.p_hat,
                    est.stderr,
                    math.sqrt(eps) * math.log(est.p_hat),
                    False,
                )
            )
    return ScalingTable(tuple(rows), gamma_ref)
