"""Probabilistic point cloud registration with automatic termination."""

from .association import Gaussian, TDistribution, gaussian_weights, t_weights
from .geometry import RigidTransform, apply, compose, inverse, params_to_transform, transform_to_params
from .optimizer import LmConfig
from .registration import (
    CostDrop,
    FixedIterations,
    RegistrationConfig,
    RegistrationResult,
    RelativeMse,
    register,
)

__all__ = [
    "CostDrop",
    "FixedIterations",
    "Gaussian",
    "LmConfig",
    "RegistrationConfig",
    "RegistrationResult",
    "RelativeMse",
    "RigidTransform",
    "TDistribution",
    "apply",
    "compose",
    "gaussian_weights",
    "inverse",
    "params_to_transform",
    "register",
    "t_weights",
    "transform_to_params",
]
