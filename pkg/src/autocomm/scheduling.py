"""Resource-block allocation: representation, objectives, validity checks,
and the classical references (round-robin, genetic algorithm, brute force).

An allocation is a length-num_rbs vector of 1-based robot ids: entry b is
the owner of RB b.  All search methods share one ranking: structurally
valid allocations that satisfy every QoS constraint outrank those that do
not, and ties inside a class are broken by score, then by lexicographically
smallest vector.  That keeps the GA, the brute-force oracle, and the
prompting loop comparable on identical inputs.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .configs import ObjectiveKind, ObjectiveSpec, SchedulingConfig
from .radio import SnrMap, rb_rate_matrix
from .rng import RngStream

Allocation = tuple[int, ...]

# Ranking levels: 0 = structurally invalid, 1 = valid but QoS-violating,
# 2 = fully feasible.  Lexicographic (level, score) ordering implements
# feasibility-first semantics.
LEVEL_INVALID = 0
LEVEL_QOS_VIOLATED = 1
LEVEL_OK = 2


class ViolationKind(str, enum.Enum):
    UNKNOWN_ROBOT = "UnknownRobot"
    EMPTY_BUFFER_ROBOT = "EmptyBufferRobot"
    WRONG_LENGTH = "WrongLength"
    QOS_VIOLATION = "QosViolation"
    EXCESSIVE_RBS = "ExcessiveRbs"


@dataclass(frozen=True)
class Violation:
    kind: ViolationKind
    detail: str
    robots: tuple[int, ...] = ()
    count: Optional[int] = None


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[Violation, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    def kinds(self) -> set[ViolationKind]:
        return {v.kind for v in self.violations}

    def structural_violations(self) -> tuple[Violation, ...]:
        return tuple(v for v in self.violations if v.kind != ViolationKind.QOS_VIOLATION)


class InvalidAllocationError(ValueError):
    def __init__(self, report: ValidationReport):
        self.report = report
        details = "; ".join(v.detail for v in report.violations)
        super().__init__(f"structurally invalid allocation: {details}")


@dataclass(frozen=True)
class GaParams:
    """Genetic-algorithm settings; defaults reach the brute-force optimum on
    all <=4-robot instances in preliminary sizing."""

    population: int = 100
    generations: int = 200
    tournament_size: int = 3
    crossover_prob: float = 0.9
    mutation_prob: float = 0.05
    elitism: int = 2
    restarts: int = 3

    def __post_init__(self):
        if self.population < 2:
            raise ValueError("population must be >= 2")
        if self.generations < 1:
            raise ValueError("generations must be >= 1")
        if self.tournament_size < 1:
            raise ValueError("tournament_size must be >= 1")
        if not 0.0 <= self.crossover_prob <= 1.0:
            raise ValueError("crossover_prob must be in [0, 1]")
        if not 0.0 <= self.mutation_prob <= 1.0:
            raise ValueError("mutation_prob must be in [0, 1]")
        if not 0 <= self.elitism <= self.population:
            raise ValueError("elitism must be in [0, population]")
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")


# ---------------------------------------------------------------------------
# Scoring


def _per_robot_rates(allocs: np.ndarray, snr: SnrMap, cfg: SchedulingConfig) -> np.ndarray:
    """Per-robot rates for a batch of allocations.

    allocs: [P, num_rbs] of robot ids.  Returns [P, num_robots] bits/s with
    empty-buffer robots forced to zero.  Ids outside 1..n contribute nothing.
    """
    rates_rb = rb_rate_matrix(snr, cfg)            # [n, m]
    n = snr.num_robots
    out = np.zeros((allocs.shape[0], n))
    for i in range(n):
        if not snr.buffer_nonempty[i]:
            continue
        mask = allocs == (i + 1)                   # [P, m]
        out[:, i] = mask @ rates_rb[i]
    return out


def evaluate_batch(allocs: np.ndarray, snr: SnrMap, cfg: SchedulingConfig,
                   objective: ObjectiveSpec) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized ranking of allocation candidates.

    allocs: [P, num_rbs] integer matrix of robot ids.  Returns
    (levels [P] in {0,1,2}, scores [P]).  Structurally invalid rows get
    level 0 and score -inf.
    """
    allocs = np.asarray(allocs)
    P = allocs.shape[0]
    n = snr.num_robots
    eligible = snr.buffer_nonempty

    valid_id = (allocs >= 1) & (allocs <= n)
    structural_bad = ~valid_id.all(axis=1)
    clipped = np.clip(allocs, 1, n)
    assigned_empty = (~eligible[clipped - 1]) & valid_id
    structural_bad |= assigned_empty.any(axis=1)
    cap = cfg.rb_cap
    if cap < cfg.num_rbs:
        for i in range(n):
            structural_bad |= (allocs == (i + 1)).sum(axis=1) > cap

    rates = _per_robot_rates(allocs, snr, cfg)     # [P, n]
    eps = objective.epsilon
    if objective.kind is ObjectiveKind.PF:
        scores = np.log2(np.maximum(rates[:, eligible], eps)).sum(axis=1)
    elif objective.kind is ObjectiveKind.QOS_SUM_RATE:
        clamped = np.where(rates < objective.min_rate_bps, 0.0, rates)
        scores = clamped.sum(axis=1)
    elif objective.kind is ObjectiveKind.QOS_PF:
        clamped = np.where(rates < objective.min_rate_bps, 0.0, rates)
        scores = np.log2(np.maximum(clamped[:, eligible], eps)).sum(axis=1)
    else:  # pragma: no cover - enum is closed
        raise ValueError(f"unknown objective kind {objective.kind}")

    levels = np.full(P, LEVEL_OK, dtype=np.int8)
    if objective.is_qos and eligible.any():
        violated = (rates[:, eligible] < objective.min_rate_bps).any(axis=1)
        levels[violated] = LEVEL_QOS_VIOLATED
    levels[structural_bad] = LEVEL_INVALID
    scores = np.where(structural_bad, -np.inf, scores)
    return levels, scores


def evaluate(alloc: Sequence[int], snr: SnrMap, cfg: SchedulingConfig,
             objective: ObjectiveSpec) -> float:
    """Objective score of one allocation.

    Raises InvalidAllocationError on structural violations; QoS shortfalls
    only affect the score through clamping, not validity here.
    """
    report = validate(alloc, snr, cfg, objective)
    structural = report.structural_violations()
    if structural:
        raise InvalidAllocationError(ValidationReport(structural))
    _, scores = evaluate_batch(np.asarray([list(alloc)]), snr, cfg, objective)
    return float(scores[0])


def allocation_rank(alloc: Sequence[int], snr: SnrMap, cfg: SchedulingConfig,
                    objective: ObjectiveSpec) -> tuple[int, float]:
    """(level, score) ranking key for one allocation; never raises."""
    if len(alloc) != cfg.num_rbs:
        return LEVEL_INVALID, float("-inf")
    levels, scores = evaluate_batch(np.asarray([list(alloc)]), snr, cfg, objective)
    return int(levels[0]), float(scores[0])


# ---------------------------------------------------------------------------
# Validation (the hallucination guard)


def validate(alloc: Sequence[int], snr: SnrMap, cfg: SchedulingConfig,
             objective: Optional[ObjectiveSpec] = None) -> ValidationReport:
    """Check an allocation against the scheduling description.

    Reports wrong length, unknown ids, empty-buffer assignments, per-robot
    RB counts above the cap, and, for QoS objectives on structurally valid
    vectors, the robots whose achieved rate is below the threshold.
    Validation never raises.
    """
    violations: list[Violation] = []
    n = snr.num_robots
    alloc = tuple(int(a) for a in alloc)

    if len(alloc) != cfg.num_rbs:
        violations.append(Violation(
            ViolationKind.WRONG_LENGTH,
            f"expected {cfg.num_rbs} entries, got {len(alloc)}"))

    unknown = sorted({a for a in alloc if not 1 <= a <= n})
    if unknown:
        violations.append(Violation(
            ViolationKind.UNKNOWN_ROBOT,
            f"ids not in this scenario: {unknown}", robots=tuple(unknown)))

    empty = sorted({a for a in alloc
                    if 1 <= a <= n and not snr.buffer_nonempty[a - 1]})
    if empty:
        violations.append(Violation(
            ViolationKind.EMPTY_BUFFER_ROBOT,
            f"robots with empty buffers assigned: {empty}", robots=tuple(empty)))

    cap = cfg.rb_cap
    for rid in sorted({a for a in alloc if 1 <= a <= n}):
        count = alloc.count(rid)
        if count > cap:
            violations.append(Violation(
                ViolationKind.EXCESSIVE_RBS,
                f"robot {rid} assigned {count} RBs, cap is {cap}",
                robots=(rid,), count=count))

    if objective is not None and objective.is_qos and not violations:
        levels, _ = evaluate_batch(np.asarray([list(alloc)]), snr, cfg, objective)
        if levels[0] == LEVEL_QOS_VIOLATED:
            rates = _per_robot_rates(np.asarray([list(alloc)]), snr, cfg)[0]
            bad = [i + 1 for i in range(n)
                   if snr.buffer_nonempty[i] and rates[i] < objective.min_rate_bps]
            violations.append(Violation(
                ViolationKind.QOS_VIOLATION,
                f"rate below threshold for robots: {bad}", robots=tuple(bad)))

    return ValidationReport(tuple(violations))


# ---------------------------------------------------------------------------
# Reference schedulers


def round_robin_alloc(cfg: SchedulingConfig, snr: SnrMap) -> Allocation:
    """RB b goes to eligible robot (b mod n_eligible), ids ascending."""
    eligible = snr.eligible_ids()
    if not eligible:
        raise ValueError("no eligible robots to schedule")
    return tuple(eligible[b % len(eligible)] for b in range(cfg.num_rbs))


def brute_force_optimal(cfg: SchedulingConfig, snr: SnrMap,
                        objective: ObjectiveSpec,
                        enumeration_cap: int = 1 << 24) -> tuple[Allocation, float]:
    """Exact argmax over all RB-owner vectors of eligible robots.

    Ties break toward the lexicographically smallest vector.  Feasible
    (level 2) allocations outrank QoS-violating ones, mirroring the shared
    ranking.  Raises if the instance exceeds the enumeration cap.
    """
    eligible = snr.eligible_ids()
    if not eligible:
        raise ValueError("no eligible robots to schedule")
    k, m = len(eligible), cfg.num_rbs
    total = k ** m
    if total > enumeration_cap:
        raise ValueError(
            f"instance too large to enumerate: {k}^{m} > {enumeration_cap}")

    ids = np.asarray(eligible)
    best: tuple[int, float, Optional[np.ndarray]] = (LEVEL_INVALID - 1, -np.inf, None)
    chunk = 1 << 16
    # Mixed-radix enumeration in lexicographic order; first occurrence of the
    # best (level, score) is therefore the lexicographically smallest winner.
    weights = k ** np.arange(m - 1, -1, -1, dtype=np.int64)
    for start in range(0, total, chunk):
        idx = np.arange(start, min(start + chunk, total), dtype=np.int64)
        genes = (idx[:, None] // weights[None, :]) % k
        allocs = ids[genes]
        levels, scores = evaluate_batch(allocs, snr, cfg, objective)
        order = np.lexsort((np.arange(len(idx)), -scores, -levels))
        p = order[0]
        if (int(levels[p]), float(scores[p])) > best[:2]:
            best = (int(levels[p]), float(scores[p]), allocs[p].copy())
    assert best[2] is not None
    return tuple(int(v) for v in best[2]), best[1]


def ga_schedule(cfg: SchedulingConfig, snr: SnrMap, objective: ObjectiveSpec,
                ga: GaParams, rng: RngStream) -> tuple[Allocation, float, int]:
    """Genetic search over RB-owner vectors.

    Tournament selection, uniform crossover, per-gene mutation, and elitism;
    candidates are built from eligible robots only, and the shared
    feasibility-first ranking orders the population, so the incumbent best
    never regresses and never violates validity.  The QoS clamp makes the
    landscape deceptive (dropping a robot below threshold zeroes its whole
    contribution), so the search runs `restarts` independent populations
    and keeps the best-ranked result; the first restart wins ties.

    Returns (best allocation, its score, total generations run).
    """
    best_alloc: Optional[Allocation] = None
    best_key = (LEVEL_INVALID - 1, -np.inf)
    total_gens = 0
    for r in range(ga.restarts):
        alloc, key, gens = _ga_run(cfg, snr, objective, ga,
                                   rng.substream(f"restart{r}"))
        total_gens += gens
        if key > best_key:
            best_key, best_alloc = key, alloc
    assert best_alloc is not None
    return best_alloc, best_key[1], total_gens


def _ga_run(cfg: SchedulingConfig, snr: SnrMap, objective: ObjectiveSpec,
            ga: GaParams, rng: RngStream
            ) -> tuple[Allocation, tuple[int, float], int]:
    eligible = snr.eligible_ids()
    if not eligible:
        raise ValueError("no eligible robots to schedule")
    ids = np.asarray(eligible)
    k, m = len(ids), cfg.num_rbs
    pop_n = ga.population

    genes = rng.integers(0, k, (pop_n, m))
    best_gene: Optional[np.ndarray] = None
    best_key = (LEVEL_INVALID - 1, -np.inf)

    def rank(gs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return evaluate_batch(ids[gs], snr, cfg, objective)

    generations_used = 0
    for _ in range(ga.generations):
        generations_used += 1
        levels, scores = rank(genes)

        order = np.lexsort((np.arange(pop_n), -scores, -levels))
        top = order[0]
        if (int(levels[top]), float(scores[top])) > best_key:
            best_key = (int(levels[top]), float(scores[top]))
            best_gene = genes[top].copy()

        # Tournament selection over the feasibility-first key.
        contenders = rng.integers(0, pop_n, (pop_n, ga.tournament_size))
        keys = levels.astype(np.float64) * 1e18 + np.where(
            np.isfinite(scores), scores, -1e17)
        winners = contenders[np.arange(pop_n), np.argmax(keys[contenders], axis=1)]
        parents = genes[winners]

        # Uniform crossover on consecutive pairs; a trailing unpaired parent
        # passes through unchanged.
        children = parents.copy()
        half = pop_n // 2
        do_cross = rng.random(half) < ga.crossover_prob
        swap_mask = rng.random((half, m)) < 0.5
        swap_mask &= do_cross[:, None]
        a = children[0:2 * half:2]
        b = children[1:2 * half:2]
        a_sw = np.where(swap_mask, b, a)
        b_sw = np.where(swap_mask, a, b)
        children[0:2 * half:2] = a_sw
        children[1:2 * half:2] = b_sw

        # Per-gene mutation redraws a uniform eligible robot.
        mut = rng.random((pop_n, m)) < ga.mutation_prob
        redraw = rng.integers(0, k, (pop_n, m))
        children = np.where(mut, redraw, children)

        # Elitism: the incumbent best replaces the tail of the new population.
        elite = [best_gene] + [genes[order[i]] for i in range(1, ga.elitism)]
        for j, e in enumerate(elite[: ga.elitism]):
            children[pop_n - 1 - j] = e
        genes = children

    levels, scores = rank(genes)
    order = np.lexsort((np.arange(pop_n), -scores, -levels))
    top = order[0]
    if (int(levels[top]), float(scores[top])) > best_key:
        best_key = (int(levels[top]), float(scores[top]))
        best_gene = genes[top].copy()

    assert best_gene is not None
    alloc = tuple(int(v) for v in ids[best_gene])
    return alloc, best_key, generations_used
