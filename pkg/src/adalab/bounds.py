"""Closed-form calculators and diagnostics for mechanism accuracy.

The positive side bounds the accuracy of the real mechanism by comparing
it to the oracle: per-query output laws of the unswitched hybrid and the
oracle differ by a bounded log ratio, the ratios compose over k rounds into
``composed_epsilon``, and the oracle itself fails only through noise tails
(``noise_escape_mass``) or concentration failures (k * gamma). The negative
side turns the attack analyses into round-count thresholds.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .attack import calibrated_attack_constant, instance_shape
from .core import FiniteDistribution, Query, Sample, Transcript, empirical_mean, true_mean
from .mechanisms import (
    MechanismState,
    NoiseSpec,
    answer_probability,
    output_distribution,
    quantize,
    sample_noise,
)

logger = logging.getLogger(__name__)

_DEFAULT_BUDGET = (0.25, 0.25, 0.25, 0.25)
_MAX_ROUNDS = 10**12


def composed_epsilon(k: int, eps: float, b: float, rho: float) -> float:
    """Divergence bound after k rounds of per-round log ratio at most eps/b.

    sqrt(2k ln(1/rho)) * (eps/b) + k * (eps/b) * (e^(eps/b) - 1); the first
    term is the martingale fluctuation at confidence rho, the second the
    accumulated per-round mean.
    """
    if k < 0:
        raise ValueError("round count must be non-negative")
    if eps < 0 or b <= 0:
        raise ValueError("need eps >= 0 and b > 0")
    if not (0.0 < rho < 1.0):
        raise ValueError("rho must lie in (0, 1)")
    ratio = eps / b
    return math.sqrt(2.0 * k * math.log(1.0 / rho)) * ratio + k * ratio * math.expm1(ratio)


def noise_escape_mass(k: int, alpha: float, b: float) -> float:
    """Chance that any of k Laplace draws at scale b exceeds alpha in size.

    1 - (1 - e^(-alpha/b))^k, from the unclipped Laplace tail.
    """
    if k < 0:
        raise ValueError("round count must be non-negative")
    if alpha < 0:
        raise ValueError("alpha must be non-negative")
    if b < 0:
        raise ValueError("scale must be non-negative")
    if k == 0 or b == 0.0:
        return 0.0
    if alpha == 0.0:
        return 1.0
    return -math.expm1(k * math.log1p(-math.exp(-alpha / b)))


@dataclass(frozen=True)
class AccuracyParams:
    """Inputs to the transferred accuracy bound for the real mechanism."""

    eps: float
    gamma: float
    alpha: float
    beta: float
    rho: float
    b: float
    k: int


def accuracy_lower_bound(params: AccuracyParams) -> float:
    """Transferred accuracy: e^(-composed) * (1 - k*gamma - escape - rho).

    At k = 0 the interaction is empty and trivially accurate, so the bound
    is 1 (no composition slack is charged).
    """
    if params.k == 0:
        return 1.0
    star = composed_epsilon(params.k, params.eps, params.b, params.rho)
    escape = noise_escape_mass(params.k, params.alpha, params.b)
    inner = 1.0 - params.k * params.gamma - escape - params.rho
    return max(0.0, math.exp(-star) * inner)


def accuracy_noise_scale(alpha: float, eps: float) -> float:
    """The positive result's Laplace scale alpha / (2 ln(1/eps))."""
    if not (0.0 < eps < 1.0):
        raise ValueError("eps must lie in (0, 1)")
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    return alpha / (2.0 * math.log(1.0 / eps))


def _budget_feasible(
    k: int, eps: float, gamma: float, alpha: float, beta: float, b: float, budget
) -> bool:
    rho = beta * budget[0]
    if k * gamma > beta * budget[2]:
        return False
    if noise_escape_mass(k, alpha, b) > beta * budget[1]:
        return False
    return composed_epsilon(k, eps, b, rho) <= beta * budget[3]


def max_accurate_rounds(
    eps: float,
    gamma: float,
    alpha: float,
    beta: float,
    budget: tuple[float, float, float, float] = _DEFAULT_BUDGET,
) -> int:
    """Largest k the accuracy bound certifies at failure level beta.

    Uses b = alpha / (2 ln(1/eps)) and requires each failure term (rho,
    escape mass, k*gamma, composed divergence) to stay within its share of
    beta; shares default to 1/4 each and must sum to at most 1. Every term
    grows with k, so the largest feasible k is found by bracket-and-bisect.
    Returns 0 with a diagnostic when even one round is infeasible.
    """
    if not (0.0 < eps < alpha):
        raise ValueError("need 0 < eps < alpha")
    if not (0.0 < gamma < 1.0) or not (0.0 < beta < 1.0) or not (0.0 < alpha <= 1.0):
        raise ValueError("gamma, beta in (0, 1) and alpha in (0, 1] required")
    if len(budget) != 4 or any(w <= 0 for w in budget) or sum(budget) > 1.0 + 1e-12:
        raise ValueError("budget must be four positive shares summing to at most 1")
    b = accuracy_noise_scale(alpha, eps)
    if not _budget_feasible(1, eps, gamma, alpha, beta, b, budget):
        rho = beta * budget[0]
        logger.info(
            "no accurate round budget at eps=%g alpha=%g beta=%g: "
            "one round already gives composed divergence %.3g (cap %.3g), "
            "escape mass %.3g (cap %.3g), gamma mass %.3g (cap %.3g)",
            eps, alpha, beta,
            composed_epsilon(1, eps, b, rho), beta * budget[3],
            noise_escape_mass(1, alpha, b), beta * budget[1],
            gamma, beta * budget[2],
        )
        return 0
    lo, hi = 1, 2
    while hi <= _MAX_ROUNDS and _budget_feasible(hi, eps, gamma, alpha, beta, b, budget):
        lo, hi = hi, hi * 2
    if hi > _MAX_ROUNDS:
        return _MAX_ROUNDS
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if _budget_feasible(mid, eps, gamma, alpha, beta, b, budget):
            lo = mid
        else:
            hi = mid
    return lo


def max_accurate_rounds_details(
    eps: float,
    gamma: float,
    alpha: float,
    beta: float,
    budget: tuple[float, float, float, float] = _DEFAULT_BUDGET,
) -> dict:
    """The search result plus the terms it balanced, for reports."""
    k = max_accurate_rounds(eps, gamma, alpha, beta, budget)
    b = accuracy_noise_scale(alpha, eps)
    rho = beta * budget[0]
    params = AccuracyParams(eps=eps, gamma=gamma, alpha=alpha, beta=beta, rho=rho, b=b, k=k)
    return {
        "k": k,
        "b": b,
        "rho": rho,
        "budget": list(budget),
        "composed_epsilon": composed_epsilon(k, eps, b, rho) if k else 0.0,
        "noise_escape_mass": noise_escape_mass(k, alpha, b),
        "gamma_mass": k * gamma,
        "accuracy_lower_bound": accuracy_lower_bound(params),
    }


def score_attack_rounds(eps: float, gamma: float, beta: float, constant: float) -> int:
    """Rounds after which the score attack identifies with chance >= 1 - beta.

    ceil(constant * r^2 * ln(support * r / (r * beta))) on the hard-instance
    shape at (eps, gamma).
    """
    if not (0.0 < beta < 1.0):
        raise ValueError("beta must lie in (0, 1)")
    if constant <= 0:
        raise ValueError("constant must be positive")
    r, population, _ = instance_shape(eps, gamma)
    return math.ceil(constant * r * r * math.log(population / (r * beta)))


def simple_attack_rounds(gamma: float) -> int:
    """Queries the block-scan attack needs: one per candidate block."""
    if not (0.0 < gamma <= 1.0):
        raise ValueError("gamma must lie in (0, 1]")
    return max(1, math.ceil(1.0 / gamma - 1e-9))


def breaking_rounds(
    eps: float, gamma: float, beta: float, constant: float | None = None
) -> int:
    """Round threshold at which some concentrated-query attack breaks accuracy.

    The cheaper of the block-scan attack (1/gamma queries, noise-free
    analysis) and the score attack. When no constant is supplied the score
    attack is costed at its noiseless calibration, the floor over noise
    scales; pass a mechanism-calibrated constant for a specific target.
    """
    if constant is None:
        r, _, _ = instance_shape(eps, gamma)
        constant = calibrated_attack_constant(r, noise_variance=0.0)
    return min(simple_attack_rounds(gamma), score_attack_rounds(eps, gamma, beta, constant))


def breaking_rounds_details(
    eps: float, gamma: float, beta: float, constant: float | None = None
) -> dict:
    r, population, support = instance_shape(eps, gamma)
    if constant is None:
        constant = calibrated_attack_constant(r, noise_variance=0.0)
    scan = simple_attack_rounds(gamma)
    score = score_attack_rounds(eps, gamma, beta, constant)
    return {
        "blocks": r,
        "population": population,
        "support": support,
        "constant": constant,
        "simple_attack_rounds": scan,
        "score_attack_rounds": score,
        "breaking_rounds": min(scan, score),
        "winner": "simple" if scan <= score else "score",
    }


# --- transcript predicates -----------------------------------------------------


def all_queries_good(queries, sample: Sample, dist: FiniteDistribution, eps: float) -> bool:
    """Every query's empirical mean within eps of its true mean."""
    return all(abs(empirical_mean(q, sample) - true_mean(q, dist)) <= eps for q in queries)


def transcript_accurate(transcript: Transcript, dist: FiniteDistribution, alpha: float) -> bool:
    """Every answer within alpha of the query's true mean."""
    return all(abs(a - true_mean(q, dist)) <= alpha for q, a in transcript.rounds)


# --- divergence diagnostics ----------------------------------------------------


@dataclass(frozen=True)
class DivergenceReport:
    max_divergence_ab: float
    max_divergence_ba: float
    kl_ab: float
    kl_ba: float


def _single_query_mean(mech: MechanismState, query: Query) -> float:
    kind = mech.kind.name
    if kind == "real":
        return empirical_mean(query, mech.sample)
    if kind == "oracle":
        return true_mean(query, mech.distribution)
    emp = empirical_mean(query, mech.sample)
    tru = true_mean(query, mech.distribution)
    if mech.switched or abs(emp - tru) > mech.kind.epsilon_switch:
        return tru
    return emp


def _max_log_ratio(p: np.ndarray, q: np.ndarray) -> float:
    live = p > 0.0
    if np.any(live & (q == 0.0)):
        return math.inf
    return float(np.max(np.log(p[live] / q[live])))


def _kl(p: np.ndarray, q: np.ndarray) -> float:
    live = p > 0.0
    if np.any(live & (q == 0.0)):
        return math.inf
    return float(np.sum(p[live] * np.log(p[live] / q[live])))


def divergence_diagnostics(
    mech_a: MechanismState, mech_b: MechanismState, query: Query
) -> DivergenceReport:
    """Exact divergences between two mechanisms' one-query output laws.

    Both mechanisms must share the same output grid. Per-answer
    probabilities come from the analytic noise CDF over each grid bin;
    support mismatches (one side gives an answer zero probability) report
    infinite divergence.
    """
    for spec_field in ("clip_lo", "clip_hi", "grid_step"):
        if getattr(mech_a.noise, spec_field) != getattr(mech_b.noise, spec_field):
            raise ValueError("mechanisms must share one output grid")
    p = output_distribution(mech_a.noise, _single_query_mean(mech_a, query))
    q = output_distribution(mech_b.noise, _single_query_mean(mech_b, query))
    return DivergenceReport(
        max_divergence_ab=_max_log_ratio(p, q),
        max_divergence_ba=_max_log_ratio(q, p),
        kl_ab=_kl(p, q),
        kl_ba=_kl(q, p),
    )


# --- composed log-likelihood-ratio experiment -----------------------------------


@dataclass(frozen=True)
class LlrReport:
    threshold: float
    frac_exceed_hybrid: float
    frac_exceed_oracle: float
    trials: int
    k: int


def run_llr_experiment(
    analyst,
    sample: Sample,
    dist: FiniteDistribution,
    k: int,
    eps: float,
    noise: NoiseSpec,
    rho: float,
    trials: int,
    seed: int,
    epsilon_switch: float | None = None,
) -> LlrReport:
    """Sample transcripts both ways and compare log ratios to the bound.

    For each transcript the exact log-likelihood ratio between the
    unswitched-hybrid law and the oracle law is the sum over rounds of
    per-answer log ratios; the report gives the fraction exceeding
    ``composed_epsilon(k, eps, b, rho)`` under either sampling direction,
    each of which the bound caps by rho. Requires a deterministic analyst
    (the per-round laws are then functions of the transcript prefix) and a
    coarse grid so bin probabilities are well separated from underflow.
    """
    if getattr(analyst, "deterministic", False) is not True:
        raise ValueError("log-ratio accounting requires a deterministic analyst")
    if noise.family != "laplace":
        raise ValueError("composition bound applies to Laplace noise")
    if noise.n_bins > 64:
        raise ValueError("use a coarse grid (at most 64 bins)")
    if trials < 1:
        raise ValueError("need at least one trial")
    switch_at = eps if epsilon_switch is None else epsilon_switch
    threshold = composed_epsilon(k, eps, noise.scale, rho)
    mean_cache: dict[int, tuple[float, float]] = {}

    def means_for(query: Query) -> tuple[float, float]:
        got = mean_cache.get(id(query))
        if got is None:
            got = (empirical_mean(query, sample), true_mean(query, dist))
            mean_cache[id(query)] = got
        return got

    def one_direction(sample_hybrid: bool, rng: np.random.Generator) -> float:
        exceed = 0
        for _ in range(trials):
            rounds: list[tuple[Query, float]] = []
            switched = False
            llr = 0.0
            for _ in range(k):
                query = analyst.next_query(tuple(rounds))
                emp, tru = means_for(query)
                if not switched and abs(emp - tru) > switch_at:
                    switched = True
                mean_h = tru if switched else emp
                drawn_mean = mean_h if sample_hybrid else tru
                observed = quantize(noise, drawn_mean + sample_noise(noise, rng))
                p_h = answer_probability(noise, mean_h, observed)
                p_o = answer_probability(noise, tru, observed)
                if sample_hybrid:
                    llr += math.log(p_h) - math.log(p_o)
                else:
                    llr += math.log(p_o) - math.log(p_h)
                rounds.append((query, observed))
            if llr > threshold:
                exceed += 1
        return exceed / trials

    rng_h = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(0,)))
    rng_o = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(1,)))
    return LlrReport(
        threshold=threshold,
        frac_exceed_hybrid=one_direction(True, rng_h),
        frac_exceed_oracle=one_direction(False, rng_o),
        trials=trials,
        k=k,
    )
