"""Smoothing parameter selection by generalised cross validation.

V(alpha) = n * RSS(alpha) / tr(I - A(alpha))^2 where A(alpha) maps responses to fitted values.
The trace is estimated with Rademacher probes pushed through the data block of the system,
each probe costing one extra solve with the factorisation already computed for alpha.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Tuple

import numpy as np
from scipy.optimize import minimize_scalar  # type: ignore

from .assembly import TpsfemSystem
from .solver import SaddleFactorization, factorize
from .tps_errors import ConfigurationError, GcvScoreError, SolverError

logger = logging.getLogger(__name__)

# Score given to alphas whose V is not finite so the bounded search moves away from them
_PENALTY = 1e300


@dataclass
class GcvConfig:
    """Search settings for alpha.

    Args:
        alpha_lo, alpha_hi (float): bracket of the initial bounded search.
        probes (int): Rademacher probes per trace estimate.
        seed (int): probe generator seed.
        r1, r2 (float): reduction ratios of the per-iteration update.
        max_evaluations (int): cap on V evaluations in the initial search.
    """
    alpha_lo: float = 1e-10
    alpha_hi: float = 1e-4
    probes: int = 16
    seed: int = 0
    r1: float = 0.1
    r2: float = 0.3
    max_evaluations: int = 25


    def validate(self) -> 'GcvConfig':
        if not (0 < self.alpha_lo < self.alpha_hi and math.isfinite(self.alpha_hi)):
            raise ConfigurationError('GCV bracket must satisfy 0 < alpha_lo < alpha_hi, got [{}, {}]'.format(
                self.alpha_lo, self.alpha_hi))
        if self.probes < 1:
            raise ConfigurationError('GCV needs at least one probe, got {}'.format(self.probes))
        if not (0 < self.r1 < 1 and 0 < self.r2 < 1):
            raise ConfigurationError('GCV ratios must lie in (0, 1), got r1={} r2={}'.format(self.r1, self.r2))
        if self.max_evaluations < 3:
            raise ConfigurationError('GCV search needs at least 3 evaluations, got {}'.format(self.max_evaluations))
        return self


@dataclass
class TraceEstimate:
    mean: float
    stderr: float
    probes: int


@dataclass
class GcvEvaluation:
    alpha: float
    score: float
    rss: float = float('nan')
    trace: float = float('nan')


@dataclass
class AlphaSearch:
    """Chosen alpha with every (alpha, V) pair evaluated on the way."""
    alpha: float
    score: float
    evaluations: List[Tuple[float, float]] = field(default_factory=list)


def rademacher(n: int, probes: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return rng.integers(0, 2, size=(n, probes)).astype(float) * 2.0 - 1.0


def hutchinson_trace(apply: Callable[[np.ndarray], np.ndarray], n: int, probes: int, seed: int) -> TraceEstimate:
    """Unbiased estimate of tr(M) from z'Mz over seeded Rademacher probes.

    Args:
        apply: maps an (n, k) block of probe columns to M times that block.
        n (int): dimension of M.
        probes (int): number of probes.
        seed (int): generator seed.
    """
    z = rademacher(n, probes, seed)
    samples = np.einsum('ij,ij->j', z, apply(z))
    stderr = float(np.std(samples, ddof=1) / math.sqrt(probes)) if probes > 1 else float('nan')
    return TraceEstimate(float(np.mean(samples)), stderr, probes)


def influence_apply(system: TpsfemSystem, fac: SaddleFactorization) -> Callable[[np.ndarray], np.ndarray]:
    """Returns z -> A z: fitted values at the data points when z replaces the responses."""
    def apply(z: np.ndarray) -> np.ndarray:
        d = (system.phi.T @ z) / system.n
        x = fac.solve(system.rhs(d), homogeneous=True)
        return system.phi @ x[:system.m]
    return apply


def gcv_score(system: TpsfemSystem, alpha: float, config: GcvConfig,
              factorization: Optional[SaddleFactorization] = None) -> GcvEvaluation:
    """V(alpha) for the system's data.

    Raises:
        GcvScoreError: If the estimated trace of I - A is not positive.
        SolverError: If the system cannot be solved for alpha.
    """
    fac = factorization if factorization is not None else factorize(system, alpha)
    c = fac.solve()[:system.m]
    rss = float(np.sum((system.phi @ c - system.y) ** 2))
    influence = influence_apply(system, fac)
    estimate = hutchinson_trace(lambda z: z - influence(z), system.n, config.probes, config.seed)
    if not estimate.mean > 0:
        raise GcvScoreError('trace estimate {:.3e} is not positive at alpha={:.3e}'.format(estimate.mean, alpha))
    score = system.n * rss / estimate.mean ** 2
    logger.debug('V({:.3e}) = {:.6e}, rss={:.6e}, trace={:.3f}'.format(alpha, score, rss, estimate.mean))
    return GcvEvaluation(alpha, score, rss, estimate.mean)


def _scorer(system: Optional[TpsfemSystem], config: GcvConfig,
            score: Optional[Callable[[float], float]]) -> Callable[[float], float]:
    if score is not None:
        return score
    if system is None:
        raise ConfigurationError('either a system or a score function is required')
    return lambda alpha: gcv_score(system, alpha, config).score


def alpha_initial(system: Optional[TpsfemSystem], config: GcvConfig,
                  score: Optional[Callable[[float], float]] = None) -> AlphaSearch:
    """Bounded Brent minimisation of V over log10(alpha) in the configured bracket.

    Args:
        system (TpsfemSystem): system to score; may be None when score is given.
        config (GcvConfig): bracket and evaluation cap.
        score (callable, optional): replaces V, mainly for tests.

    Returns:
        AlphaSearch: alpha within the bracket and the evaluation trace.

    Raises:
        ConfigurationError: If V is not finite anywhere the search looked. Trial alphas whose
            score or factorisation fails count as +inf.
    """
    config.validate()
    objective = _scorer(system, config, score)
    evaluations: List[Tuple[float, float]] = []

    def f(t: float) -> float:
        alpha = 10.0 ** t
        try:
            value = float(objective(alpha))
        except (GcvScoreError, SolverError) as e:
            logger.warning('GCV score failed at alpha={:.3e}: {}'.format(alpha, e))
            value = math.inf
        evaluations.append((alpha, value))
        return value if math.isfinite(value) else _PENALTY

    lo, hi = math.log10(config.alpha_lo), math.log10(config.alpha_hi)
    minimize_scalar(f, bounds=(lo, hi), method='bounded',
                    options={'maxiter': config.max_evaluations, 'xatol': 1e-5})
    finite = [(a, v) for a, v in evaluations if math.isfinite(v)]
    if not finite:
        raise ConfigurationError('GCV score is not finite anywhere in [{:.1e}, {:.1e}]'.format(
            config.alpha_lo, config.alpha_hi))
    best_alpha, best_score = min(finite, key=lambda item: item[1])
    best_alpha = min(max(best_alpha, config.alpha_lo), config.alpha_hi)
    logger.info('initial alpha {:.3e} after {} GCV evaluations'.format(best_alpha, len(evaluations)))
    return AlphaSearch(best_alpha, best_score, evaluations)


def update_candidates(alpha_prev: float, config: GcvConfig) -> List[float]:
    """alpha_prev and its two reductions, largest first."""
    return [alpha_prev, max(config.r1, config.r2) * alpha_prev, min(config.r1, config.r2) * alpha_prev]


def alpha_update(alpha_prev: float, system: Optional[TpsfemSystem], config: GcvConfig,
                 score: Optional[Callable[[float], float]] = None) -> AlphaSearch:
    """The candidate with the smallest V; ties keep the largest candidate.

    Raises:
        GcvScoreError: If a candidate cannot be scored.
    """
    if not alpha_prev > 0:
        raise ConfigurationError('alpha must be positive, got {}'.format(alpha_prev))
    objective = _scorer(system, config, score)
    evaluations = [(alpha, float(objective(alpha))) for alpha in update_candidates(alpha_prev, config)]
    values = np.array([v if math.isfinite(v) else np.inf for _, v in evaluations])
    if not np.isfinite(values).any():
        raise GcvScoreError('no finite GCV score among candidates of alpha={:.3e}'.format(alpha_prev))
    best = int(np.argmin(values))
    return AlphaSearch(evaluations[best][0], evaluations[best][1], evaluations)
