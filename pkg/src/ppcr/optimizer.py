"""Iteratively reweighted Levenberg-Marquardt over a rigid increment.

The unknown is a transform increment ``D`` applied to source points that
have already been moved by the current outer-loop estimate.  Residuals are
``y_k - D(x_j)`` for every candidate pair; their weights are recomputed
from the current residuals at the start of each LM iteration.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .association import Associations, Gaussian, TDistribution
from .geometry import (
    RigidTransform,
    apply,
    compose,
    left_jacobian,
    params_to_transform,
    skew,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class LmConfig:
    max_lm_iterations: int = 50
    initial_damping: float = 1e-4
    damping_up: float = 10.0
    damping_down: float = 0.1
    step_tolerance: float = 1e-9
    function_tolerance: float = 1e-9
    max_damping: float = 1e16

    def __post_init__(self):
        for name in ("max_lm_iterations", "initial_damping", "damping_up",
                     "damping_down", "step_tolerance", "function_tolerance", "max_damping"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


@dataclass
class WeightedProblem:
    """Residual blocks on a padded layout.

    ``source`` is (n, 3); ``targets`` is (n, k, 3) with ``mask`` (n, k)
    marking which candidate slots are real.
    """

    source: np.ndarray
    targets: np.ndarray
    mask: np.ndarray
    model: Gaussian | TDistribution = field(default_factory=TDistribution)

    def __post_init__(self):
        self.source = np.asarray(self.source, dtype=float).reshape(-1, 3)
        self.targets = np.asarray(self.targets, dtype=float).reshape(len(self.source), -1, 3)
        self.mask = np.asarray(self.mask, dtype=bool).reshape(self.targets.shape[:2])
        if not np.any(self.mask):
            raise ValueError("a weighted problem needs at least one residual block")

    @classmethod
    def from_pairs(cls, source, target, model=None) -> WeightedProblem:
        """One-to-one blocks: ``source[i]`` paired with ``target[i]``."""
        source = np.asarray(source, dtype=float).reshape(-1, 3)
        target = np.asarray(target, dtype=float).reshape(-1, 1, 3)
        return cls(source, target, np.ones((len(source), 1), bool), model or Gaussian())

    @classmethod
    def from_associations(cls, moved_source, target_points, assoc: Associations, model) -> WeightedProblem:
        """Blocks for the source points in ``assoc``; ``moved_source`` is already under the current estimate."""
        moved_source = np.asarray(moved_source, dtype=float)
        mask = assoc.mask
        targets = np.asarray(target_points)[np.where(mask, assoc.target_index, 0)]
        return cls(moved_source[assoc.source_index], targets, mask, model)

    @property
    def n_blocks(self) -> int:
        return int(np.count_nonzero(self.mask))

    def residuals(self, increment: RigidTransform | None = None):
        """Residuals (n, k, 3) and their squared norms (n, k)."""
        moved = self.source if increment is None else apply(increment, self.source)
        res = self.targets - moved[:, None, :]
        sq = np.einsum("nki,nki->nk", res, res)
        return res, np.where(self.mask, sq, 0.0)

    def weights(self, increment: RigidTransform | None = None) -> np.ndarray:
        _, sq = self.residuals(increment)
        return self.model.weights(sq, self.mask)[1]


@dataclass
class InnerSolveReport:
    initial_cost: float
    final_cost: float
    successful_steps: int
    lm_iterations: int
    solution: RigidTransform
    # weighted cost after every accepted step, starting with the initial cost
    cost_history: list = field(default_factory=list)
    degenerate: bool = False


def _weighted_cost(problem: WeightedProblem, increment):
    res, sq = problem.residuals(increment)
    w = problem.model.weights(sq, problem.mask)[1]
    return float(np.sum(w * sq)), res, w


def cost(problem: WeightedProblem, increment: RigidTransform | None = None) -> float:
    """Weighted sum of squared errors with weights evaluated at ``increment``."""
    return _weighted_cost(problem, increment)[0]


def jacobian(source_point, params) -> np.ndarray:
    """Derivative (3x6) of ``y - exp(params)(x)`` with respect to ``params``.

    ``params`` is the axis-angle/translation 6-vector.  The target point
    drops out of the derivative, so only the source point is needed.
    """
    params = np.asarray(params, dtype=float)
    rx = apply(params_to_transform(params), source_point) - params[3:]
    j = np.empty((3, 6))
    j[:, :3] = skew(rx) @ left_jacobian(params[:3])
    j[:, 3:] = -np.eye(3)
    return j


def block_jacobians(points) -> np.ndarray:
    """Jacobians (n, 3, 6) at the zero increment for each moved source point.

    This is :func:`jacobian` with ``params = 0``, which the solver uses
    because every step is taken in a chart re-centred at the current estimate.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    n = len(pts)
    j = np.zeros((n, 3, 6))
    x, y, z = pts[:, 0], pts[:, 1], pts[:, 2]
    j[:, 0, 1], j[:, 0, 2] = -z, y
    j[:, 1, 0], j[:, 1, 2] = z, -x
    j[:, 2, 0], j[:, 2, 1] = -y, x
    j[:, 0, 3] = j[:, 1, 4] = j[:, 2, 5] = -1.0
    return j


def _normal_equations(problem: WeightedProblem, increment, res, w):
    moved = apply(increment, problem.source)
    jac = block_jacobians(moved)
    wsum = np.sum(w, axis=1)
    wres = np.einsum("nk,nki->ni", w, res)
    hess = np.einsum("n,nia,nib->ab", wsum, jac, jac)
    grad = np.einsum("nia,ni->a", jac, wres)
    return hess, grad


def _damped_step(hess, grad, lam):
    a = hess + lam * np.diag(np.diag(hess))
    try:
        step = np.linalg.solve(a, -grad)
    except np.linalg.LinAlgError:
        return None
    if not np.all(np.isfinite(step)) or np.linalg.cond(a) > 1e15:
        return None
    return step


def solve(problem: WeightedProblem, lm: LmConfig | None = None) -> InnerSolveReport:
    """Minimize the weighted cost starting from the zero increment."""
    lm = lm or LmConfig()
    increment = RigidTransform.identity()
    current, res, w = _weighted_cost(problem, increment)
    report = InnerSolveReport(current, current, 0, 0, increment, [current])
    lam = lm.initial_damping

    while report.lm_iterations < lm.max_lm_iterations:
        report.lm_iterations += 1
        # E-step already done: ``w`` belongs to ``increment``; rejected steps keep it
        hess, grad = _normal_equations(problem, increment, res, w)
        step = _damped_step(hess, grad, lam)
        if step is None:
            lam *= lm.damping_up
            if lam > lm.max_damping:
                if report.successful_steps == 0:
                    report.degenerate = True
                    log.debug("normal equations singular at maximum damping")
                break
            continue
        if np.linalg.norm(step) < lm.step_tolerance:
            break
        candidate = compose(params_to_transform(step), increment)
        cand_cost, cand_res, cand_w = _weighted_cost(problem, candidate)
        if cand_cost < current:
            rel = (current - cand_cost) / current
            increment, current, res, w = candidate, cand_cost, cand_res, cand_w
            report.successful_steps += 1
            report.cost_history.append(current)
            lam = max(lam * lm.damping_down, 1e-300)
            if rel < lm.function_tolerance:
                break
        else:
            lam *= lm.damping_up
            if lam > lm.max_damping:
                break

    report.final_cost = current
    report.solution = increment
    return report
