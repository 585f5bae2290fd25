"""Seeded synthetic registration problems."""

from __future__ import annotations

import numpy as np

from .geometry import RigidTransform, apply, compose, rotation_about


def random_cube(n: int, seed: int) -> np.ndarray:
    """``n`` points uniform in the unit cube."""
    return np.random.default_rng(seed).random((n, 3))


def asymmetric_cloud(n: int, seed: int) -> np.ndarray:
    """A flat box with an off-centre blob; no rotational symmetry."""
    rng = np.random.default_rng(seed)
    n_blob = n // 4
    box = rng.random((n - n_blob, 3)) * [1.0, 0.5, 0.25]
    blob = rng.normal(size=(n_blob, 3)) * 0.05 + [0.9, 0.4, 0.2]
    return np.vstack([box, blob])


def random_motion(angle_deg: float, translation: float, seed: int) -> RigidTransform:
    """Rotation by ``angle_deg`` about a random axis, then a translation of
    length ``translation`` in a random direction."""
    rng = np.random.default_rng(seed)
    axis = rng.normal(size=3)
    direction = rng.normal(size=3)
    direction /= np.linalg.norm(direction)
    rot = rotation_about(axis, np.radians(angle_deg))
    return compose(RigidTransform.from_translation(translation * direction), rot)


def rotation_about_centroid(cloud, axis, angle: float) -> RigidTransform:
    c = np.asarray(cloud, dtype=float).mean(axis=0)
    return compose(
        RigidTransform.from_translation(c),
        compose(rotation_about(axis, angle), RigidTransform.from_translation(-c)),
    )


def make_problem(source, truth: RigidTransform):
    """Target cloud for ``source`` under the generating transform ``truth``."""
    return apply(truth, source)
