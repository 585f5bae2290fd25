"""Exact bounded k-nearest-neighbor queries over a static target cloud.

The tree itself is scipy's ``cKDTree`` (median splits, exact search).  On
top of it this module fixes the result contract: squared distances are
recomputed in double precision from the stored points, the radius gate is
applied to those squared distances, and ties are broken by the smaller
original index.
"""

from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree

# neighbours whose squared distances differ by less than this (relative)
# are re-checked on the slow path so the tie rule is applied exactly
_TIE_RTOL = 1e-9


class EmptyCloudError(ValueError):
    pass


class SpatialIndex:
    """Immutable k-d tree over a set of 3D points."""

    def __init__(self, points):
        pts = np.array(points, dtype=float).reshape(-1, 3)
        if len(pts) == 0:
            raise EmptyCloudError("cannot build a spatial index over an empty cloud")
        if not np.all(np.isfinite(pts)):
            raise ValueError("cloud contains non-finite coordinates")
        pts.flags.writeable = False
        self.points = pts
        self._tree = cKDTree(pts, balanced_tree=True, compact_nodes=True)

    def __len__(self):
        return len(self.points)

    def _sqdist(self, queries, idx):
        diff = self.points[idx] - queries[:, None, :]
        sq = diff * diff
        # fixed summation order so distances are reproducible bit for bit
        return (sq[..., 0] + sq[..., 1]) + sq[..., 2]

    def _query_one_exact(self, q, k, max_sq, bound):
        """Slow path: gather every candidate up to ``bound`` and sort by (d2, index)."""
        cand = np.asarray(self._tree.query_ball_point(q, bound), dtype=np.intp)
        if len(cand) == 0:
            return cand, np.empty(0)
        d2 = self._sqdist(q[None, :], cand[None, :])[0]
        keep = d2 <= max_sq
        cand, d2 = cand[keep], d2[keep]
        order = np.lexsort((cand, d2))[:k]
        return cand[order], d2[order]

    def query(self, queries, k: int, max_dist: float):
        """Batched bounded k-NN.

        Returns ``(indices, sqdists)`` of shape (Q, k).  Missing entries have
        index -1 and squared distance ``inf``; valid entries come first in
        each row, sorted ascending by (squared distance, index).
        """
        if k < 1:
            raise ValueError("k must be >= 1")
        if not max_dist > 0:
            raise ValueError("max_dist must be positive")
        q = np.asarray(queries, dtype=float).reshape(-1, 3)
        n = len(self.points)
        max_sq = float(max_dist) ** 2
        kk = min(k + 1, n)
        # generous upper bound; the exact squared-distance gate comes after
        bound = max_dist * (1.0 + 1e-9) + 1e-300
        _, idx = self._tree.query(q, k=kk, distance_upper_bound=bound)
        idx = np.asarray(idx).reshape(len(q), kk)
        valid = idx < n
        safe = np.where(valid, idx, 0)
        d2 = np.where(valid, self._sqdist(q, safe), np.inf)
        d2 = np.where(d2 <= max_sq, d2, np.inf)
        idx = np.where(np.isfinite(d2), safe, n)

        order = np.lexsort((idx, d2)) if len(q) else np.empty((0, kk), int)
        idx = np.take_along_axis(idx, order, axis=1)
        d2 = np.take_along_axis(d2, order, axis=1)

        out_idx = np.full((len(q), k), -1, dtype=np.intp)
        out_d2 = np.full((len(q), k), np.inf)
        m = min(k, kk)
        out_idx[:, :m] = np.where(np.isfinite(d2[:, :m]), idx[:, :m], -1)
        out_d2[:, :m] = d2[:, :m]

        # a tie straddling the k-th slot may hide a smaller index outside the
        # returned set; rows with near-equal distances around the cut are redone
        if kk > k:
            kth, nxt = d2[:, k - 1], d2[:, k]
            both = np.isfinite(nxt) & np.isfinite(kth)
            gap = np.where(both, nxt - np.where(both, kth, 0.0), np.inf)
            suspicious = gap <= _TIE_RTOL * np.where(both, kth, 0.0)
        else:
            suspicious = np.zeros(len(q), dtype=bool)
        for row in np.flatnonzero(suspicious):
            r = np.sqrt(d2[row, k]) * (1.0 + 1e-6) + 1e-12
            ci, cd = self._query_one_exact(q[row], k, max_sq, r)
            out_idx[row] = -1
            out_d2[row] = np.inf
            out_idx[row, : len(ci)] = ci
            out_d2[row, : len(cd)] = cd
        return out_idx, out_d2


def build(points) -> SpatialIndex:
    return SpatialIndex(points)


def k_nearest_within(index: SpatialIndex, query, k: int, max_dist: float):
    """Up to ``k`` neighbours of ``query`` within ``max_dist``.

    Returns a list of ``(target_index, squared_distance)`` sorted ascending,
    ties broken by the smaller index.
    """
    idx, d2 = index.query(np.asarray(query, dtype=float)[None, :], k, max_dist)
    return [(int(i), float(d)) for i, d in zip(idx[0], d2[0]) if i >= 0]

