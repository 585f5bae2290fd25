"""Outer registration loop and its termination criteria."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .association import NoOverlapError, TDistribution, associate
from .geometry import RigidTransform, apply, compose
from .metrics import mse_between, mse_to_ground_truth, resolution
from .neighbor_search import SpatialIndex
from .optimizer import LmConfig, WeightedProblem, solve

log = logging.getLogger(__name__)

CONVERGED = "converged"
HIT_CAP = "hit-iteration-cap"
NO_OVERLAP = "no-overlap"


def _check_fraction(name, value):
    if not 0.0 < value < 1.0:
        raise ValueError(f"{name} must lie in (0, 1), got {value}")


@dataclass(frozen=True)
class FixedIterations:
    n: int = 100

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be >= 1")

    def fires(self, trace) -> bool:
        return len(trace) >= self.n


@dataclass(frozen=True)
class CostDrop:
    """Stop once every one of the last ``consecutive`` inner solves dropped
    the cost by less than ``relative_threshold`` times the very first
    initial cost."""

    relative_threshold: float = 0.01
    consecutive: int = 10

    def __post_init__(self):
        _check_fraction("relative_threshold", self.relative_threshold)
        if self.consecutive < 1:
            raise ValueError("consecutive must be >= 1")

    def holds(self, record, reference_cost: float) -> bool:
        if reference_cost <= 0.0:
            # nothing to reduce from the start; the drop is necessarily zero
            return True
        return record.cost_drop / reference_cost < self.relative_threshold

    def fires(self, trace) -> bool:
        if len(trace) < self.consecutive:
            return False
        ref = trace[0].initial_cost
        return all(self.holds(r, ref) for r in trace[-self.consecutive:])


@dataclass(frozen=True)
class RelativeMse:
    """Stop once the inter-iteration MSE stays below ``ratio_threshold``
    times its previous value for ``consecutive`` records."""

    ratio_threshold: float = 0.01
    consecutive: int = 10

    def __post_init__(self):
        _check_fraction("ratio_threshold", self.ratio_threshold)
        if self.consecutive < 1:
            raise ValueError("consecutive must be >= 1")

    def holds(self, record, previous) -> bool:
        if record.mse_prev is None:
            return False
        if record.mse_prev == 0.0:
            return True
        if previous is None or previous.mse_prev is None:
            return False
        return record.mse_prev < self.ratio_threshold * previous.mse_prev

    def fires(self, trace) -> bool:
        if len(trace) < self.consecutive:
            return False
        start = len(trace) - self.consecutive
        return all(
            self.holds(trace[i], trace[i - 1] if i > 0 else None)
            for i in range(start, len(trace))
        )


TerminationCriterion = FixedIterations | CostDrop | RelativeMse


def evaluate_criterion(criterion: TerminationCriterion, trace) -> bool:
    if not trace:
        raise ValueError("trace is empty")
    return criterion.fires(trace)


@dataclass(frozen=True)
class RegistrationConfig:
    max_neighbors: int = 10
    # None: ten times the target cloud's resolution
    max_neighbor_distance: float | None = None
    weight_model: object = field(default_factory=TDistribution)
    criterion: TerminationCriterion = field(default_factory=CostDrop)
    max_iterations: int = 100
    lm: LmConfig = field(default_factory=LmConfig)
    # inter-iteration MSE is always computed when the criterion needs it
    record_mse: bool = True

    def __post_init__(self):
        if self.max_neighbors < 1:
            raise ValueError("max_neighbors must be >= 1")
        if self.max_neighbor_distance is not None and not self.max_neighbor_distance > 0:
            raise ValueError("max_neighbor_distance must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")

    def iteration_limit(self) -> int:
        if isinstance(self.criterion, FixedIterations):
            return self.criterion.n
        return self.max_iterations


@dataclass
class IterationRecord:
    iteration: int
    initial_cost: float
    final_cost: float
    successful_steps: int
    lm_iterations: int
    n_associated: int
    increment: RigidTransform
    transform: RigidTransform
    mse_prev: float | None = None
    mse_ground_truth: float | None = None

    @property
    def cost_drop(self) -> float:
        return self.initial_cost - self.final_cost


@dataclass
class RegistrationResult:
    transform: RigidTransform
    trace: list
    termination_reason: str
    max_neighbor_distance: float = float("nan")

    @property
    def iterations(self) -> int:
        return len(self.trace)

    @property
    def converged(self) -> bool:
        return self.termination_reason == CONVERGED


def mse_between_iterations(current, previous) -> float:
    """MSE between the same cloud in two poses (points in matching order)."""
    return mse_between(current, previous)


def default_max_distance(target) -> float:
    return 10.0 * resolution(target)


def register(
    source,
    target,
    initial_guess: RigidTransform | None = None,
    config: RegistrationConfig | None = None,
    ground_truth: RigidTransform | None = None,
    index: SpatialIndex | None = None,
) -> RegistrationResult:
    """Align ``source`` to ``target``; the result maps source frame to target frame."""
    config = config or RegistrationConfig()
    src = np.asarray(source, dtype=float).reshape(-1, 3)
    tgt = np.asarray(target, dtype=float).reshape(-1, 3)
    if len(src) == 0 or len(tgt) == 0:
        raise ValueError("source and target clouds must be non-empty")
    current = initial_guess or RigidTransform.identity()
    index = index or SpatialIndex(tgt)
    max_dist = config.max_neighbor_distance
    if max_dist is None:
        max_dist = default_max_distance(tgt)
    need_mse = config.record_mse or isinstance(config.criterion, RelativeMse)

    trace = []
    reason = HIT_CAP
    moved = apply(current, src)
    for it in range(config.iteration_limit()):
        try:
            assoc = associate(src, index, current, config.max_neighbors, max_dist)
        except NoOverlapError:
            log.warning("no associations at iteration %d", it)
            reason = NO_OVERLAP
            break
        problem = WeightedProblem.from_associations(moved, tgt, assoc, config.weight_model)
        report = solve(problem, config.lm)
        current = compose(report.solution, current)
        prev_moved, moved = moved, apply(current, src)

        record = IterationRecord(
            iteration=it,
            initial_cost=report.initial_cost,
            final_cost=report.final_cost,
            successful_steps=report.successful_steps,
            lm_iterations=report.lm_iterations,
            n_associated=assoc.n_pairs,
            increment=report.solution,
            transform=current,
        )
        if need_mse and it > 0:
            record.mse_prev = mse_between_iterations(moved, prev_moved)
        if ground_truth is not None:
            record.mse_ground_truth = mse_to_ground_truth(src, current, ground_truth)
        trace.append(record)
        log.debug("iter %d cost %.6g -> %.6g (%d steps)", it, record.initial_cost,
                  record.final_cost, record.successful_steps)

        if evaluate_criterion(config.criterion, trace):
            reason = CONVERGED
            break

    return RegistrationResult(current, trace, reason, max_dist)


def replay(initial_guess: RigidTransform, trace) -> RigidTransform:
    """Left-fold the recorded increments over ``initial_guess``."""
    t = initial_guess
    for r in trace:
        t = compose(r.increment, t)
    return t
