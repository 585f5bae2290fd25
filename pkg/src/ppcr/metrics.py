"""Ground-truth error, cloud resolution and aggregate statistics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .geometry import RigidTransform, apply


class DegenerateCloudError(ValueError):
    pass


def mse_between(a, b) -> float:
    """Mean squared distance between corresponding points of two equal-size clouds."""
    a = np.asarray(a, dtype=float).reshape(-1, 3)
    b = np.asarray(b, dtype=float).reshape(-1, 3)
    if a.shape != b.shape:
        raise ValueError(f"clouds differ in size: {len(a)} vs {len(b)}")
    if len(a) == 0:
        raise ValueError("empty clouds")
    d = a - b
    return float(np.einsum("ij,ij->", d, d) / len(a))


def mse_to_ground_truth(source, estimated: RigidTransform, truth: RigidTransform) -> float:
    return mse_between(apply(estimated, source), apply(truth, source))


def resolution(cloud) -> float:
    """Median distance from each point to its nearest neighbour at nonzero distance."""
    pts = np.asarray(cloud, dtype=float).reshape(-1, 3)
    if len(pts) < 2:
        raise DegenerateCloudError("resolution needs at least two points")
    tree = cKDTree(pts)
    k = 2
    while True:
        d, _ = tree.query(pts, k=min(k, len(pts)))
        d = d.reshape(len(pts), -1)
        # duplicates show up as zero distances; skip past them
        nz = np.where(d > 0, d, np.inf).min(axis=1)
        if np.all(np.isfinite(nz)) or k >= len(pts):
            break
        k *= 2
    if not np.any(np.isfinite(nz)):
        raise DegenerateCloudError("all points coincide")
    return float(np.median(nz[np.isfinite(nz)]))


@dataclass(frozen=True)
class EvaluationSummary:
    """Plain MSE-to-ground-truth statistics (not the benchmark's scaled MSE)."""

    values: tuple
    median: float
    q75: float
    q95: float
    mean_iterations: float

    @property
    def count(self) -> int:
        return len(self.values)


def aggregate(values, iterations) -> EvaluationSummary:
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise ValueError("nothing to aggregate")
    med, q75, q95 = np.quantile(v, [0.5, 0.75, 0.95], method="linear")
    return EvaluationSummary(
        tuple(float(x) for x in v), float(med), float(q75), float(q95),
        float(np.mean(np.asarray(iterations, dtype=float))),
    )
