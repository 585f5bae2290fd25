"""Probabilistic data association (the expectation step).

Each source point is associated with up to ``k`` target points.  Weights
live on a padded ``(n, k)`` layout: row ``j`` holds the candidates of one
source point, ``mask`` marks the occupied slots.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import RigidTransform, apply
from .neighbor_search import SpatialIndex


class NoOverlapError(RuntimeError):
    """No source point has a target neighbour within the search radius."""


def _masked(sq_res, mask):
    sq_res = np.asarray(sq_res, dtype=float)
    if mask is None:
        mask = np.ones(sq_res.shape, dtype=bool)
    return sq_res, np.asarray(mask, dtype=bool)


def _normalize_log(logp, mask):
    # log-sum-exp shift per row so the best candidate has log-weight 0
    logp = np.where(mask, logp, -np.inf)
    top = np.max(logp, axis=-1, keepdims=True)
    top = np.where(np.isfinite(top), top, 0.0)
    e = np.where(mask, np.exp(logp - top), 0.0)
    s = np.sum(e, axis=-1, keepdims=True)
    return np.divide(e, s, out=np.zeros_like(e), where=s > 0)


@dataclass(frozen=True)
class Gaussian:
    """``w ~ exp(-r^2 / 2)``, normalized over the candidates of a source point."""

    def weights(self, sq_res, mask=None):
        """Return ``(p, w)``; for this model both are the normalized weights."""
        sq_res, mask = _masked(sq_res, mask)
        p = _normalize_log(-0.5 * sq_res, mask)
        return p, p


@dataclass(frozen=True)
class TDistribution:
    """Student-t membership probabilities with the EM precision correction."""

    nu: float = 5.0
    d: int = 3

    def __post_init__(self):
        if not self.nu > 0:
            raise ValueError(f"nu must be positive, got {self.nu}")
        if self.d != 3:
            raise ValueError("only 3-dimensional error terms are supported")

    def weights(self, sq_res, mask=None):
        sq_res, mask = _masked(sq_res, mask)
        nu, d = float(self.nu), float(self.d)
        safe = np.where(mask, sq_res, 0.0)
        logp = -0.5 * (nu + d) * np.log1p(safe / nu)
        p = _normalize_log(logp, mask)
        w = np.where(mask, p * (nu + d) / (nu + safe), 0.0)
        return p, w


WeightModel = Gaussian | TDistribution


def gaussian_weights(squared_residuals) -> np.ndarray:
    """Normalized Gaussian weights for the candidates of one source point."""
    r = np.asarray(squared_residuals, dtype=float)
    if r.ndim != 1 or len(r) == 0:
        raise ValueError("need a non-empty 1-D list of squared residuals")
    return Gaussian().weights(r)[1]


def t_weights(squared_residuals, nu: float, d: int = 3):
    """Membership probabilities ``p`` and weights ``w`` under the t model."""
    r = np.asarray(squared_residuals, dtype=float)
    if r.ndim != 1 or len(r) == 0:
        raise ValueError("need a non-empty 1-D list of squared residuals")
    return TDistribution(nu, d).weights(r)


@dataclass(frozen=True)
class Associations:
    """Candidate neighbours of the source points that found at least one.

    ``source_index[j]`` is the row's source point; ``target_index[j, :]``
    holds target indices (``-1`` in empty slots) and ``sqdist`` the squared
    distances at association time.
    """

    source_index: np.ndarray
    target_index: np.ndarray
    sqdist: np.ndarray
    n_source: int

    @property
    def mask(self) -> np.ndarray:
        return self.target_index >= 0

    @property
    def n_pairs(self) -> int:
        return int(np.count_nonzero(self.mask))

    def as_lists(self):
        """Per-source-point lists of ``(target_index, squared_distance)``."""
        out = [[] for _ in range(self.n_source)]
        for row, j in enumerate(self.source_index):
            m = self.target_index[row] >= 0
            out[j] = [(int(k), float(d)) for k, d in zip(self.target_index[row][m], self.sqdist[row][m])]
        return out


def associate(source, index: SpatialIndex, current: RigidTransform, k: int, max_dist: float) -> Associations:
    """Neighbours of every transformed source point within ``max_dist``.

    Source points without neighbours are dropped from the result.  Raises
    NoOverlapError when every source point comes back empty.
    """
    src = np.asarray(source, dtype=float).reshape(-1, 3)
    idx, d2 = index.query(apply(current, src), k, max_dist)
    hit = idx[:, 0] >= 0
    if not np.any(hit):
        raise NoOverlapError(f"no source point has a neighbour within {max_dist:g}")
    return Associations(np.flatnonzero(hit), idx[hit], d2[hit], len(src))
