"""Concentrated-query attacks that break noise-addition mechanisms.

Two constructions are provided. The score attack builds a correlated hard
instance (every element of a sample repeats one hidden within-block slot),
issues oblivious randomized info queries on the first block, accumulates a
correlation score per candidate slot from the mechanism's answers, and
finishes with an indicator query on the identified slot whose empirical
mean is near 1 while its true mean is near 0. The block-scan attack simply
probes 1/gamma disjoint candidate samples with indicator queries; the one
matching the held sample answers near 1 against a true mean of gamma.

Both issue only queries whose deviation mass is tiny by construction, so
breaking the mechanism cannot be blamed on pathological queries.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import (
    FiniteDistribution,
    PartitionedDomain,
    Query,
    Sample,
    Transcript,
    empirical_mean,
    true_mean,
)
from .mechanisms import MechanismState, answer

# Variance of one score increment, decomposed as the noiseless part plus the
# noise contribution: Var(W_t) = (13/180)/r^2 + Var(noise)/3, obtained by
# integrating the score gap over p ~ U[0,1], Bernoulli tables, and centered
# noise. The Chernoff exponent k*mu^2/(2*Var) with signal mu = 1/(6r) then
# needs k >= 72*Var*r^2*ln(support/(blocks*beta)).
_NOISELESS_GAP_VARIANCE = 13.0 / 180.0
_SUPPORT_ELEMENT_LIMIT = 20_000_000


def _ceil(x: float) -> int:
    return math.ceil(x - 1e-9)


def instance_shape(eps: float, gamma: float) -> tuple[int, int, int]:
    """Blocks r, population N, and support size m of the hard instance."""
    if not (0.0 < eps <= 1.0):
        raise ValueError("eps must lie in (0, 1]")
    if not (0.0 < gamma <= 1.0):
        raise ValueError("gamma must lie in (0, 1]")
    r = max(1, round(1.0 / eps))
    population = max(_ceil(1.0 / eps**2), _ceil(1.0 / (eps * gamma)))
    population = r * _ceil(population / r)
    return r, population, population // r


class HardInstance:
    """Correlated population where one hidden slot determines the sample.

    The domain has r blocks of m slots. Support sample j consists of the
    slot-j element of every block, each repeated n/r times; the sampling
    distribution is uniform over the m slots.
    """

    def __init__(self, eps: float, gamma: float, n: int):
        r, population, m = instance_shape(eps, gamma)
        if n < r:
            raise ValueError("sample too small for 1/eps blocks")
        if n % r != 0:
            raise ValueError(f"sample size {n} must be a multiple of the block count {r}")
        self.eps = float(eps)
        self.gamma = float(gamma)
        self.n = int(n)
        self.population = population
        self.domain = PartitionedDomain(num_blocks=r, block_size=m)
        self.copies_per_block = n // r
        self._distribution: FiniteDistribution | None = None

    @property
    def num_blocks(self) -> int:
        return self.domain.num_blocks

    @property
    def support_size(self) -> int:
        return self.domain.block_size

    @property
    def final_true_mean(self) -> float:
        return 1.0 / self.support_size

    def make_sample(self, slot: int) -> Sample:
        if not (0 <= slot < self.support_size):
            raise ValueError(f"slot {slot} out of range")
        base = slot + self.support_size * np.arange(self.num_blocks, dtype=np.int64)
        return Sample(tuple(np.repeat(base, self.copies_per_block)))

    def draw_index(self, rng: np.random.Generator) -> int:
        return int(rng.integers(self.support_size))

    @property
    def distribution(self) -> FiniteDistribution:
        """Explicit uniform support; built lazily, large instances stay cheap."""
        if self._distribution is None:
            m = self.support_size
            if m * self.n > _SUPPORT_ELEMENT_LIMIT:
                raise ValueError(
                    f"instance support holds {m} samples of {self.n} elements, "
                    "too large to materialize; closed-form calculators cover this scale"
                )
            self._distribution = FiniteDistribution(
                [self.make_sample(j) for j in range(m)], np.full(m, 1.0 / m)
            )
        return self._distribution


def build_hard_instance(eps: float, gamma: float, n: int) -> HardInstance:
    return HardInstance(eps, gamma, n)


@dataclass
class AttackState:
    """Per-run attacker state: one score per candidate slot."""

    scores: np.ndarray
    rounds_done: int
    k: int
    rng_p: np.random.Generator
    rng_table: np.random.Generator
    rounds: list[tuple[Query, float]] = field(default_factory=list)
    last_increments: np.ndarray | None = None


def new_attack_state(
    inst: HardInstance, k: int, rng_p: np.random.Generator, rng_table: np.random.Generator
) -> AttackState:
    if k < 0:
        raise ValueError("round budget must be non-negative")
    return AttackState(
        scores=np.zeros(inst.support_size, dtype=np.float64),
        rounds_done=0,
        k=k,
        rng_p=rng_p,
        rng_table=rng_table,
    )


def make_info_query(inst: HardInstance, table: np.ndarray) -> Query:
    """Query holding a 0/1 table on the first block and 0 elsewhere."""
    overrides = {int(slot): 1.0 for slot in np.flatnonzero(table)}
    return Query(0.0, overrides)


def info_round(state: AttackState, inst: HardInstance, mech: MechanismState) -> AttackState:
    """One info round: random table on block one, then a score update.

    The per-slot increment is (answer - p/r) * (table[slot] - p); its mean
    is 1/(6r) on the hidden slot and 0 elsewhere. With p = 0 the table is
    all zeros and every increment vanishes.
    """
    p = float(state.rng_p.uniform())
    table = (state.rng_table.random(inst.support_size) < p).astype(np.float64)
    query = make_info_query(inst, table)
    observed = answer(mech, query)
    increments = (observed - p / inst.num_blocks) * (table - p)
    state.scores += increments
    state.last_increments = increments
    state.rounds.append((query, observed))
    state.rounds_done += 1
    return state


def final_query(state: AttackState, inst: HardInstance) -> Query:
    """Indicator of the best-scoring slot across all blocks; ties take the
    smallest slot."""
    guess = int(np.argmax(state.scores))
    elements = guess + inst.support_size * np.arange(inst.num_blocks, dtype=np.int64)
    return Query(0.0, {int(e): 1.0 for e in elements})


@dataclass(frozen=True)
class ScoreAttackResult:
    true_index: int
    guess_index: int
    success: bool
    final_answer: float
    final_deviation: float
    sample_deviation: float
    transcript: Transcript


def _hidden_slot(inst: HardInstance, sample: Sample) -> int:
    slots = {inst.domain.slot_of(e) for e in sample.elements}
    if len(slots) != 1:
        raise ValueError("mechanism sample is not a hard-instance support sample")
    return slots.pop()


def run_score_attack(
    inst: HardInstance,
    mech: MechanismState,
    k: int,
    rng_p: np.random.Generator,
    rng_table: np.random.Generator,
) -> ScoreAttackResult:
    """Full attack: k info rounds, then the identifying final query.

    The attacker side sees only its own queries and the answers; the held
    sample is read here only afterwards, to score the run. Reports both the
    noisy final deviation |answer - true mean| and the de-noised sample
    deviation |empirical mean - true mean|.
    """
    if k < 1:
        raise ValueError("score attack needs at least one info round")
    if mech.sample is None:
        raise ValueError("mechanism must hold a sample drawn from the instance")
    state = new_attack_state(inst, k, rng_p, rng_table)
    for _ in range(k):
        info_round(state, inst, mech)
    closing = final_query(state, inst)
    final_answer = answer(mech, closing)
    state.rounds.append((closing, final_answer))
    transcript = Transcript(tuple(state.rounds), mechanism=mech.kind.name, seed=mech.label)
    true_index = _hidden_slot(inst, mech.sample)
    guess_index = int(np.argmax(state.scores))
    target = inst.final_true_mean
    return ScoreAttackResult(
        true_index=true_index,
        guess_index=guess_index,
        success=guess_index == true_index,
        final_answer=final_answer,
        final_deviation=abs(final_answer - target),
        sample_deviation=abs(empirical_mean(closing, mech.sample) - target),
        transcript=transcript,
    )


class InfoRoundAnalyst:
    """Analyst issuing only the attack's oblivious info queries.

    Never reads answers, so two instances built from identically seeded
    generators produce identical query sequences; used for coupled runs and
    for accuracy experiments restricted to concentrated queries.
    """

    deterministic = False

    def __init__(
        self, inst: HardInstance, rng_p: np.random.Generator, rng_table: np.random.Generator
    ):
        self.inst = inst
        self.rng_p = rng_p
        self.rng_table = rng_table

    def next_query(self, rounds) -> Query:
        p = float(self.rng_p.uniform())
        table = (self.rng_table.random(self.inst.support_size) < p).astype(np.float64)
        return make_info_query(self.inst, table)


class FixedQueryAnalyst:
    """Replays a fixed query list; deterministic by construction."""

    deterministic = True

    def __init__(self, queries):
        self.queries = tuple(queries)

    def next_query(self, rounds) -> Query:
        return self.queries[len(rounds)]


# --- disjoint-block attack ---------------------------------------------------


class BlockInstance:
    """1/gamma disjoint candidate samples, one drawn uniformly."""

    def __init__(self, gamma: float, n: int):
        if not (0.0 < gamma <= 1.0):
            raise ValueError("gamma must lie in (0, 1]")
        if n < 1:
            raise ValueError("sample size must be at least 1")
        r = max(1, _ceil(1.0 / gamma))
        self.gamma = float(gamma)
        self.n = int(n)
        self.domain = PartitionedDomain(num_blocks=r, block_size=n)
        samples = [Sample(tuple(self.domain.block_elements(i))) for i in range(r)]
        self.distribution = FiniteDistribution(samples, np.full(r, 1.0 / r))

    @property
    def num_candidates(self) -> int:
        return self.domain.num_blocks

    def query_for_block(self, block: int) -> Query:
        return Query(0.0, {int(e): 1.0 for e in self.domain.block_elements(block)})


def build_block_instance(gamma: float, n: int) -> BlockInstance:
    return BlockInstance(gamma, n)


@dataclass(frozen=True)
class SimpleAttackResult:
    worst_deviation: float
    breaking_query_index: int
    deviations: tuple[float, ...]
    transcript: Transcript


def run_simple_attack(gamma: float, n: int, mech: MechanismState) -> SimpleAttackResult:
    """Probe every candidate block with its indicator query.

    The mechanism must hold a sample drawn from the matching block
    instance. Returns the worst |answer - true mean| over the 1/gamma
    queries and the index of the query whose empirical mean on the held
    sample equals 1.
    """
    inst = build_block_instance(gamma, n)
    if mech.sample is None:
        raise ValueError("mechanism must hold a sample drawn from the instance")
    rounds = []
    deviations = []
    breaking = -1
    for block in range(inst.num_candidates):
        query = inst.query_for_block(block)
        observed = answer(mech, query)
        rounds.append((query, observed))
        deviations.append(abs(observed - true_mean(query, inst.distribution)))
        if empirical_mean(query, mech.sample) == 1.0:
            breaking = block
    if breaking < 0:
        raise ValueError("held sample matches no candidate block")
    transcript = Transcript(tuple(rounds), mechanism=mech.kind.name, seed=mech.label)
    worst = int(np.argmax(deviations))
    return SimpleAttackResult(
        worst_deviation=float(deviations[worst]),
        breaking_query_index=breaking,
        deviations=tuple(float(d) for d in deviations),
        transcript=transcript,
    )


# --- attack round constants ---------------------------------------------------


def worst_case_attack_constant(clip_lo: float, clip_hi: float) -> float:
    """Constant from bounding one score gap by its worst clipped magnitude.

    Answers are clipped to [clip_lo, clip_hi], so one increment is at most
    a = 2*(max(|clip_lo|, clip_hi) + 1) in magnitude and the sub-Gaussian
    exponent k*(1/6r)^2 / (2a^2) yields k >= 72*a^2 * r^2 * ln(...).
    Conservative; calibrated_attack_constant is what experiments should use.
    """
    a = 2.0 * (max(abs(clip_lo), clip_hi) + 1.0)
    return 72.0 * a * a


def calibrated_attack_constant(r: int, noise_variance: float, safety: float = 2.0) -> float:
    """Constant from the exact per-round score-gap variance.

    72 * Var(W_t) with Var(W_t) = (13/180)/r^2 + noise_variance/3, scaled
    by a safety factor that absorbs clipping bias and the normal
    approximation.
    """
    if r < 1:
        raise ValueError("need at least one block")
    if noise_variance < 0:
        raise ValueError("noise variance must be non-negative")
    if safety <= 0:
        raise ValueError("safety factor must be positive")
    gap_variance = _NOISELESS_GAP_VARIANCE / (r * r) + noise_variance / 3.0
    return 72.0 * gap_variance * safety
