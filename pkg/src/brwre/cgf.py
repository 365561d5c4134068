"""Annealed cumulant calculus: the tilt, model constants and the barrier.

The environment-averaged log-Laplace transform ``mean_kappa`` drives
everything here: the tilt is the positive root of
``mean_kappa(t) = t * mean_kappa'(t)``, the environment walk accumulates the
per-generation transforms at the tilt, and the killing barrier follows that
walk with slope ``epsilon * i**alpha`` on top.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import env_model, rng as rngmod
from .env_model import EnvironmentLaw, EnvironmentRealization, ReproductionParams
from .errors import InvalidLawError, NoSignChangeError

__all__ = [
    "Estimate",
    "TiltSolution",
    "ModelConstants",
    "BarrierSpec",
    "mean_kappa",
    "mean_kappa_prime",
    "mean_kappa_second",
    "solve_tilt",
    "model_constants",
    "cumulative_K",
    "barrier_value",
    "m_of_a",
]


@dataclass(frozen=True)
class Estimate:
    """A point estimate with its standard error (0 for exact values)."""

    value: float
    stderr: float = 0.0

    @property
    def flagged(self) -> bool:
        return not math.isfinite(self.value)


@dataclass(frozen=True)
class TiltSolution:
    """Root of ``g(t) = mean_kappa(t) - t * mean_kappa'(t)`` on a bracket."""

    theta: float
    kappa_at_theta: float
    residual: float
    bracket: tuple[float, float]


@dataclass(frozen=True)
class ModelConstants:
    """Limit constants assembled from the law at the solved tilt.

    ``sigma_sq`` is the variance across environments of the quenched mean of
    the associated-walk step; ``sigma_star_sq`` the mean quenched variance.
    ``gamma`` is the negative limit constant of the near-critical survival
    decay, and ``speed`` the linear speed of the minimal displacement.
    """

    sigma_sq: float
    sigma_star_sq: float
    gamma_hat: float
    gamma_sigma: float
    gamma: float
    speed: float


@dataclass(frozen=True)
class BarrierSpec:
    """Killing line parameters: slope ``epsilon``, exponent ``alpha``, tilt ``theta``."""

    epsilon: float
    alpha: float = 1.0
    theta: float = 1.0

    def __post_init__(self) -> None:
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError("alpha must lie in (0, 1]")
        if self.theta == 0.0:
            raise ValueError("theta must be nonzero")


def _mix(law: EnvironmentLaw, fn) -> float:
    return float(sum(w * fn(p) for w, p in law.components))


def mean_kappa(
    law: EnvironmentLaw,
    theta: float,
    samples: Optional[int] = None,
    seed: Optional[int] = None,
) -> Estimate:
    """Environment-averaged log-Laplace transform at ``theta``.

    Analytic (exact over the finite mixture) when ``samples`` is None;
    otherwise a Monte Carlo mean over ``samples`` environment draws with its
    standard error.
    """
    law.check_theta(theta)
    if samples is None:
        return Estimate(_mix(law, lambda p: env_model.kappa(p, theta)))
    if seed is None:
        raise ValueError("monte-carlo mode requires an explicit seed")
    gen = rngmod.stream(seed, "mean-kappa")
    vals = np.array(
        [env_model.kappa(law.draw(gen), theta) for _ in range(samples)], dtype=float
    )
    return Estimate(float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(samples)))


def mean_kappa_prime(law: EnvironmentLaw, theta: float) -> float:
    law.check_theta(theta)
    return _mix(law, lambda p: env_model.kappa_prime(p, theta))


def mean_kappa_second(law: EnvironmentLaw, theta: float) -> float:
    law.check_theta(theta)
    return _mix(law, lambda p: env_model.kappa_second(p, theta))


def solve_tilt(
    law: EnvironmentLaw,
    bracket: Optional[tuple[float, float]] = None,
    tol: float = 1e-10,
) -> TiltSolution:
    """Bisect for the tilt: the root of ``g(t) = mean_kappa(t) - t*mean_kappa'(t)``.

    ``g`` is nonincreasing (its derivative is ``-t * mean_kappa''(t)``), so the
    root is unique on any sign-changing bracket.  Raises
    :class:`NoSignChangeError` when ``g`` has one sign on the whole bracket,
    which signals that the supercriticality assumption fails for this law.
    """
    if bracket is None:
        bracket = (1e-6, law.theta_bar * (1.0 - 1e-6))
    lo, hi = float(bracket[0]), float(bracket[1])
    if not 0.0 < lo < hi <= law.theta_bar:
        raise ValueError(f"invalid bracket {bracket!r}")

    def g(t: float) -> float:
        return mean_kappa(law, t).value - t * mean_kappa_prime(law, t)

    g_lo, g_hi = g(lo), g(hi)
    if not (math.isfinite(g_lo) and math.isfinite(g_hi)):
        raise InvalidLawError("tilt equation not finite on the bracket")
    if g_lo == 0.0:
        return TiltSolution(lo, mean_kappa(law, lo).value, 0.0, (lo, hi))
    if g_hi == 0.0:
        return TiltSolution(hi, mean_kappa(law, hi).value, 0.0, (lo, hi))
    if g_lo * g_hi > 0.0:
        raise NoSignChangeError(
            f"g has no sign change on {bracket!r}: g({lo})={g_lo:.6g}, g({hi})={g_hi:.6g}"
        )
    a, b = lo, hi
    for _ in range(200):
        mid = 0.5 * (a + b)
        g_mid = g(mid)
        if g_mid == 0.0 or (b - a) <= 1e-15 * max(1.0, abs(mid)):
            a = b = mid
            break
        if g_lo * g_mid < 0.0:
            b = mid
        else:
            a, g_lo = mid, g_mid
    root = 0.5 * (a + b)
    residual = abs(g(root))
    if residual > tol:
        raise RuntimeError(f"bisection stalled: residual {residual:.3e} > tol {tol:.3e}")
    return TiltSolution(root, mean_kappa(law, root).value, residual, (lo, hi))


def model_constants(
    law: EnvironmentLaw,
    tilt: TiltSolution,
    gamma_hat_value: float,
    samples: Optional[int] = None,
    seed: Optional[int] = None,
) -> ModelConstants:
    """Assemble the limit constants at the solved tilt.

    Exact over finite mixtures when ``samples`` is None, else Monte Carlo over
    environment draws.  ``gamma_hat_value`` must be the Brownian tube constant
    evaluated at ``sigma_sq / sigma_star_sq``.
    """
    t = tilt.theta

    def centered(p: ReproductionParams) -> float:
        return env_model.kappa(p, t) - t * env_model.kappa_prime(p, t)

    if samples is None:
        sigma_sq = _mix(law, lambda p: centered(p) ** 2)
        second = _mix(law, lambda p: env_model.kappa_second(p, t))
    else:
        if seed is None:
            raise ValueError("monte-carlo mode requires an explicit seed")
        gen = rngmod.stream(seed, "model-constants")
        draws = [law.draw(gen) for _ in range(samples)]
        sigma_sq = float(np.mean([centered(p) ** 2 for p in draws]))
        second = float(np.mean([env_model.kappa_second(p, t) for p in draws]))
    sigma_star_sq = t**2 * second
    if sigma_star_sq <= 0.0:
        raise InvalidLawError("sigma_star_sq <= 0: displacements carry no variance")
    gamma_sigma = sigma_star_sq * gamma_hat_value
    gamma = -math.sqrt(gamma_sigma / t)
    speed = -tilt.kappa_at_theta / t
    return ModelConstants(sigma_sq, sigma_star_sq, gamma_hat_value, gamma_sigma, gamma, speed)


def cumulative_K(env: EnvironmentRealization, theta: float) -> np.ndarray:
    """Partial sums of the per-generation transforms at ``theta``: the
    environment walk driving the barrier.  Entry 0 is 0, entry i covers the
    first i generations."""
    vals = np.empty(env.horizon + 1)
    vals[0] = 0.0
    for i, p in enumerate(env.params, start=1):
        vals[i] = vals[i - 1] + env_model.kappa(p, theta)
    return vals


def barrier_value(spec: BarrierSpec, cum_k: Sequence[float], i: int) -> float:
    """Height of the killing line at generation ``i``."""
    if i < 0 or i >= len(cum_k):
        raise IndexError(f"generation {i} outside the walk of length {len(cum_k)}")
    return -cum_k[i] / spec.theta + spec.epsilon * float(i) ** spec.alpha


def m_of_a(
    law: EnvironmentLaw,
    theta: float,
    a: float,
    samples: Optional[int] = None,
    seed: Optional[int] = None,
) -> Estimate:
    """Mean log of the expected first-generation population below ``a`` minus
    the (tilt-scaled) environment-walk step.

    Nondecreasing in ``a`` and tending to ``mean_kappa(0)`` as ``a`` grows.
    When some environment gives a zero inner expectation the value is the
    ``-inf`` sentinel (flagged on the estimate), not an error, so sweeps over
    ``a`` stay total.
    """

    def log_inner(p: ReproductionParams) -> float:
        cutoff = a - env_model.kappa(p, theta) / theta
        inner = env_model.expected_children_below(p, cutoff)
        return math.log(inner) if inner > 0.0 else float("-inf")

    if samples is None:
        vals = [log_inner(p) for _, p in law.components]
        if any(v == float("-inf") for v in vals):
            return Estimate(float("-inf"))
        return Estimate(float(sum(w * v for (w, _), v in zip(law.components, vals))))
    if seed is None:
        raise ValueError("monte-carlo mode requires an explicit seed")
    gen = rngmod.stream(seed, "m-of-a")
    vals = np.array([log_inner(law.draw(gen)) for _ in range(samples)], dtype=float)
    if np.any(np.isneginf(vals)):
        return Estimate(float("-inf"))
    return Estimate(float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(samples)))
