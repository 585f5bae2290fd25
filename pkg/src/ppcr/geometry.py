"""Rigid transforms in 3D and the axis-angle chart used by the optimizer."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# compositions allowed before the rotation is projected back onto SO(3)
REORTHONORMALIZE_EVERY = 100

_SMALL_ANGLE = 1e-6


class OutOfChartError(ValueError):
    """Raised when a rotation angle is too close to pi for the log map."""


def skew(v):
    """Cross-product matrix: ``skew(a) @ b == np.cross(a, b)``."""
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def nearest_rotation(m):
    """Project a 3x3 matrix onto the closest rotation (Frobenius norm)."""
    u, _, vt = np.linalg.svd(m)
    d = np.sign(np.linalg.det(u @ vt))
    return u @ np.diag([1.0, 1.0, d]) @ vt


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """Rotation ``R`` followed by translation ``T``: ``p -> R p + T``."""

    rotation: np.ndarray
    translation: np.ndarray
    _chain: int = field(default=0, repr=False)

    def __post_init__(self):
        r = np.array(self.rotation, dtype=float)
        t = np.array(self.translation, dtype=float).reshape(3)
        if r.shape != (3, 3):
            raise ValueError(f"rotation must be 3x3, got {r.shape}")
        if not (np.all(np.isfinite(r)) and np.all(np.isfinite(t))):
            raise ValueError("transform contains non-finite values")
        r.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> RigidTransform:
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_translation(cls, t) -> RigidTransform:
        return cls(np.eye(3), t)

    @classmethod
    def from_matrix(cls, m) -> RigidTransform:
        m = np.asarray(m, dtype=float)
        return cls(m[:3, :3], m[:3, 3])

    def matrix(self) -> np.ndarray:
        """4x4 homogeneous matrix."""
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def is_valid(self, tol: float = 1e-9) -> bool:
        r = self.rotation
        return bool(
            np.max(np.abs(r @ r.T - np.eye(3))) <= tol
            and abs(np.linalg.det(r) - 1.0) <= tol
        )

    def __matmul__(self, other: RigidTransform) -> RigidTransform:
        return compose(self, other)

    def __repr__(self):
        return f"RigidTransform(\n{np.array2string(self.matrix(), precision=6)})"


def apply(t: RigidTransform, p) -> np.ndarray:
    """Apply ``t`` to one point (shape (3,)) or a cloud (shape (N, 3))."""
    p = np.asarray(p, dtype=float)
    return p @ t.rotation.T + t.translation


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """Transform equivalent to applying ``b`` first, then ``a``."""
    r = a.rotation @ b.rotation
    chain = a._chain + b._chain + 1
    if chain > REORTHONORMALIZE_EVERY:
        r = nearest_rotation(r)
        chain = 0
    return RigidTransform(r, a.rotation @ b.translation + a.translation, chain)


def inverse(t: RigidTransform) -> RigidTransform:
    rt = t.rotation.T
    return RigidTransform(rt, -rt @ t.translation)


def rotation_about(axis, angle: float) -> RigidTransform:
    axis = np.asarray(axis, dtype=float)
    return params_to_transform(np.concatenate([axis / np.linalg.norm(axis) * angle, np.zeros(3)]))


def so3_exp(omega) -> np.ndarray:
    """Rodrigues formula: rotation matrix for the axis-angle vector ``omega``."""
    omega = np.asarray(omega, dtype=float)
    theta = np.linalg.norm(omega)
    k = skew(omega)
    if theta < _SMALL_ANGLE:
        # second-order Taylor terms keep this accurate to ~1e-18
        a = 1.0 - theta**2 / 6.0
        b = 0.5 - theta**2 / 24.0
    else:
        a = np.sin(theta) / theta
        b = (1.0 - np.cos(theta)) / theta**2
    return np.eye(3) + a * k + b * (k @ k)


def so3_log(r) -> np.ndarray:
    """Axis-angle vector of a rotation with angle strictly below pi."""
    r = np.asarray(r, dtype=float)
    cos_theta = np.clip((np.trace(r) - 1.0) / 2.0, -1.0, 1.0)
    theta = np.arccos(cos_theta)
    w = np.array([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]])
    if theta < _SMALL_ANGLE:
        return 0.5 * (1.0 + theta**2 / 6.0) * w
    sin_theta = np.sin(theta)
    if np.pi - theta < 1e-7 or sin_theta < 1e-7:
        raise OutOfChartError(f"rotation angle {theta!r} is not below pi")
    return theta / (2.0 * sin_theta) * w


def left_jacobian(omega) -> np.ndarray:
    """SO(3) left Jacobian: ``exp(omega + d) ~= exp(J d) exp(omega)``."""
    omega = np.asarray(omega, dtype=float)
    theta = np.linalg.norm(omega)
    k = skew(omega)
    if theta < _SMALL_ANGLE:
        b = 0.5 - theta**2 / 24.0
        c = 1.0 / 6.0 - theta**2 / 120.0
    else:
        b = (1.0 - np.cos(theta)) / theta**2
        c = (theta - np.sin(theta)) / theta**3
    return np.eye(3) + b * k + c * (k @ k)


def params_to_transform(params) -> RigidTransform:
    """Map ``(rx, ry, rz, tx, ty, tz)`` to a transform.

    The first three components are an axis-angle rotation (radians times
    unit axis), the last three the translation.
    """
    params = np.asarray(params, dtype=float)
    return RigidTransform(so3_exp(params[:3]), params[3:6])


def transform_to_params(t: RigidTransform) -> np.ndarray:
    """Inverse of :func:`params_to_transform`; raises OutOfChartError near pi."""
    return np.concatenate([so3_log(t.rotation), t.translation])


def rotation_angle(t: RigidTransform) -> float:
    return float(np.arccos(np.clip((np.trace(t.rotation) - 1.0) / 2.0, -1.0, 1.0)))


def point_action_distance(a: RigidTransform, b: RigidTransform, points) -> float:
    """Largest displacement between the images of ``points`` under ``a`` and ``b``."""
    return float(np.max(np.linalg.norm(apply(a, points) - apply(b, points), axis=-1)))
