"""Noise-addition mechanisms over a fixed sample, an oracle, and a hybrid.

A mechanism answers bounded queries with noisy means rounded to a finite
grid. The real mechanism perturbs the sample's empirical mean, the oracle
perturbs the distribution's true mean, and the hybrid behaves like the real
mechanism until it sees a query whose empirical mean strays from the true
mean by more than ``epsilon_switch``, after which it permanently answers
like the oracle.

Randomness contract: real and hybrid draw from one sequential noise stream,
so a hybrid that never switches consumes draws in lockstep with a real
mechanism built from the same seed (their transcripts are then bit
identical). Oracle-branch draws come from an independent stream keyed by
the round index, so a switch never desynchronizes later rounds. Exactly one
noise value is consumed per answer, from the stream of the branch taken.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erfc

from .core import FiniteDistribution, Query, Sample, Transcript, empirical_mean, true_mean

_FAMILIES = ("laplace", "gaussian")
_GRID_REL_TOL = 1e-9


@dataclass(frozen=True)
class NoiseSpec:
    """Noise family, scale, and the finite output grid of the mechanism.

    ``scale == 0`` is the degenerate noiseless limit: draws are exactly 0
    but still consume one stream value per answer. The grid is the values
    ``clip_lo + i * grid_step`` for ``i = 0 .. span/grid_step``; answers are
    clipped to ``[clip_lo, clip_hi]`` before rounding.
    """

    family: str = "laplace"
    scale: float = 0.1
    clip_lo: float = -0.5
    clip_hi: float = 1.5
    grid_step: float = 2.0**-20
    tail_tolerance: float = 0.05

    def __post_init__(self) -> None:
        if self.family not in _FAMILIES:
            raise ValueError(f"unknown noise family {self.family!r}")
        if self.scale < 0 or not math.isfinite(self.scale):
            raise ValueError("noise scale must be a finite non-negative real")
        if not (self.clip_lo < 0.0 < 1.0 < self.clip_hi):
            raise ValueError("clip bounds must satisfy clip_lo < 0 < 1 < clip_hi")
        if self.grid_step <= 0:
            raise ValueError("grid_step must be positive")
        span = self.clip_hi - self.clip_lo
        bins = span / self.grid_step
        if abs(bins - round(bins)) > _GRID_REL_TOL * bins or round(bins) < 1:
            raise ValueError("grid_step must divide the clip interval into whole bins")
        tail = self.stray_tail_mass()
        if tail > self.tail_tolerance:
            raise ValueError(
                f"noise mass {tail:.3g} outside [clip_lo - 1, clip_hi] exceeds "
                f"tolerance {self.tail_tolerance:.3g}"
            )

    @property
    def n_bins(self) -> int:
        return round((self.clip_hi - self.clip_lo) / self.grid_step)

    def stray_tail_mass(self) -> float:
        """Noise mass outside [clip_lo - 1, clip_hi], computed analytically."""
        low = self.clip_lo - 1.0
        return float(noise_cdf(self, low) + (1.0 - noise_cdf(self, self.clip_hi)))

    def variance(self) -> float:
        if self.family == "laplace":
            return 2.0 * self.scale**2
        return self.scale**2


def noise_cdf(spec: NoiseSpec, x) -> np.ndarray | float:
    """CDF of the centered noise draw at x (step function when scale is 0)."""
    x = np.asarray(x, dtype=np.float64)
    if spec.scale == 0.0:
        return np.where(x >= 0.0, 1.0, 0.0)
    if spec.family == "laplace":
        return np.where(
            x < 0.0,
            0.5 * np.exp(x / spec.scale),
            1.0 - 0.5 * np.exp(-x / spec.scale),
        )
    return 0.5 * erfc(-x / (spec.scale * math.sqrt(2.0)))


def sample_noise(spec: NoiseSpec, rng: np.random.Generator) -> float:
    """One centered noise draw; always consumes exactly one stream value."""
    if spec.family == "laplace":
        return float(rng.laplace(0.0, spec.scale))
    return float(rng.normal(0.0, spec.scale))


def quantize(spec: NoiseSpec, value: float) -> float:
    """Clip to the output interval, then round to the nearest grid value.

    Exact half-bin ties go to the even bin index (banker's rounding on the
    index), i.e. toward ``clip_lo + even * grid_step``.
    """
    value = float(value)
    if math.isnan(value):
        raise ValueError("cannot quantize NaN")
    value = min(max(value, spec.clip_lo), spec.clip_hi)
    index = round((value - spec.clip_lo) / spec.grid_step)
    return spec.clip_lo + index * spec.grid_step


def grid_values(spec: NoiseSpec) -> np.ndarray:
    return spec.clip_lo + np.arange(spec.n_bins + 1) * spec.grid_step


def output_distribution(spec: NoiseSpec, mean: float) -> np.ndarray:
    """Exact law of ``quantize(mean + noise)`` over the grid values.

    Interior grid values collect the noise mass within half a step on either
    side; the two edge values also absorb the clipped tails. Requires a
    continuous noise family (scale > 0).
    """
    if spec.scale == 0.0:
        raise ValueError("exact output law needs scale > 0")
    edges = spec.clip_lo + (np.arange(spec.n_bins) + 0.5) * spec.grid_step
    cdf = np.asarray(noise_cdf(spec, edges - mean))
    probs = np.empty(spec.n_bins + 1, dtype=np.float64)
    probs[0] = cdf[0]
    probs[1:-1] = np.diff(cdf)
    probs[-1] = 1.0 - cdf[-1]
    return probs


def answer_probability(spec: NoiseSpec, mean: float, answer: float) -> float:
    """Probability that ``quantize(mean + noise)`` equals one grid value."""
    if spec.scale == 0.0:
        raise ValueError("exact output law needs scale > 0")
    index = round((answer - spec.clip_lo) / spec.grid_step)
    if not (0 <= index <= spec.n_bins):
        raise ValueError("answer is not on the output grid")
    step = spec.grid_step
    low = spec.clip_lo + (index - 0.5) * step - mean
    high = spec.clip_lo + (index + 0.5) * step - mean
    upper = 1.0 if index == spec.n_bins else float(noise_cdf(spec, high))
    lower = 0.0 if index == 0 else float(noise_cdf(spec, low))
    return upper - lower


@dataclass(frozen=True)
class MechanismKind:
    """Which mean a mechanism perturbs: sample, distribution, or switching."""

    name: str
    epsilon_switch: float | None = None

    def __post_init__(self) -> None:
        if self.name not in ("real", "oracle", "hybrid"):
            raise ValueError(f"unknown mechanism kind {self.name!r}")
        if self.name == "hybrid":
            if self.epsilon_switch is None or not (self.epsilon_switch > 0):
                raise ValueError("hybrid needs epsilon_switch > 0")
        elif self.epsilon_switch is not None:
            raise ValueError(f"{self.name} mechanism takes no epsilon_switch")

    @staticmethod
    def real() -> "MechanismKind":
        return MechanismKind("real")

    @staticmethod
    def oracle() -> "MechanismKind":
        return MechanismKind("oracle")

    @staticmethod
    def hybrid(epsilon_switch: float) -> "MechanismKind":
        return MechanismKind("hybrid", float(epsilon_switch))


class MechanismState:
    """One mechanism instance: kind, noise spec, data, and noise streams.

    The real mechanism holds only a sample (it can never read a
    distribution) and the oracle holds only a distribution (it can never
    read a sample); the hybrid holds both. ``switched`` is monotone: once
    the hybrid answers a round in oracle mode, all later rounds are oracle
    rounds.
    """

    def __init__(
        self,
        kind: MechanismKind,
        noise: NoiseSpec,
        *,
        sample: Sample | None = None,
        distribution: FiniteDistribution | None = None,
        real_rng: np.random.Generator | None = None,
        oracle_seed: int | None = None,
        label: int | None = None,
    ):
        needs_sample = kind.name in ("real", "hybrid")
        needs_dist = kind.name in ("oracle", "hybrid")
        if needs_sample and sample is None:
            raise ValueError(f"{kind.name} mechanism requires a sample")
        if needs_dist and distribution is None:
            raise ValueError(f"{kind.name} mechanism requires a distribution")
        if not needs_sample and sample is not None:
            raise ValueError("oracle mechanism never reads a sample; do not pass one")
        if not needs_dist and distribution is not None:
            raise ValueError("real mechanism never reads a distribution; do not pass one")
        if needs_sample and real_rng is None:
            raise ValueError(f"{kind.name} mechanism requires a real-noise stream")
        if needs_dist and oracle_seed is None:
            raise ValueError(f"{kind.name} mechanism requires an oracle-noise seed")
        if needs_dist and noise.family != "laplace":
            raise ValueError("oracle and hybrid mechanisms support only Laplace noise")
        if needs_sample and len(sample) == 0:
            raise ValueError("degenerate sample: mechanism needs at least one element")
        self.kind = kind
        self.noise = noise
        self.sample = sample
        self.distribution = distribution
        self.label = label
        self.switched = False
        self.switch_round: int | None = None
        self.rounds_answered = 0
        self._real_rng = real_rng
        self._oracle_seed = oracle_seed

    def _oracle_noise(self, round_index: int) -> float:
        seq = np.random.SeedSequence(entropy=self._oracle_seed, spawn_key=(round_index,))
        return sample_noise(self.noise, np.random.default_rng(seq))


def answer(state: MechanismState, query: Query) -> float:
    """Answer one query, mutating the state (round counter, switch flag)."""
    if not isinstance(query, Query):
        raise TypeError(f"expected a Query, got {type(query).__name__}")
    round_index = state.rounds_answered
    kind = state.kind.name
    if kind == "real":
        raw = empirical_mean(query, state.sample) + sample_noise(state.noise, state._real_rng)
    elif kind == "oracle":
        raw = true_mean(query, state.distribution) + state._oracle_noise(round_index)
    else:
        emp = empirical_mean(query, state.sample)
        tru = true_mean(query, state.distribution)
        if not state.switched and abs(emp - tru) > state.kind.epsilon_switch:
            state.switched = True
            state.switch_round = round_index
        if state.switched:
            raw = tru + state._oracle_noise(round_index)
        else:
            raw = emp + sample_noise(state.noise, state._real_rng)
    state.rounds_answered = round_index + 1
    return quantize(state.noise, raw)


def run_interaction(analyst, mech: MechanismState, k: int) -> Transcript:
    """Drive ``k`` rounds of analyst-vs-mechanism and collect the transcript.

    The analyst is any object with ``next_query(rounds) -> Query`` where
    ``rounds`` is the tuple of (query, answer) pairs so far. Deterministic
    given the analyst's own seeds, the mechanism seeds, and the sample.
    """
    if k < 0:
        raise ValueError("round count must be non-negative")
    rounds: list[tuple[Query, float]] = []
    for i in range(k):
        query = analyst.next_query(tuple(rounds))
        if not isinstance(query, Query):
            raise ValueError(
                f"analyst produced {type(query).__name__} instead of a Query at round {i}"
            )
        rounds.append((query, answer(mech, query)))
    return Transcript(rounds=tuple(rounds), mechanism=state_name(mech), seed=mech.label)


def state_name(mech: MechanismState) -> str:
    return mech.kind.name
