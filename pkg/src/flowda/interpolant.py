"""Linear interpolant paths and their conditional velocity targets.

All functions accept either single samples (1-D arrays) or batches
(2-D arrays, one sample per row) and compute in float64.
"""

from dataclasses import dataclass

import numpy as np

from .errors import RejectedInput


@dataclass(frozen=True)
class InterpolantPoint:
    state: np.ndarray
    time: float | np.ndarray
    target_velocity: np.ndarray


def as_sample(z, name="z"):
    z = np.asarray(z, dtype=np.float64)
    if z.ndim == 0 or z.shape[-1] == 0:
        raise RejectedInput(f"{name} must have a positive dimension, got shape {z.shape}")
    if not np.all(np.isfinite(z)):
        raise RejectedInput(f"{name} contains non-finite values")
    return z


def _check_pair(z0, z1):
    z0 = as_sample(z0, "z0")
    z1 = as_sample(z1, "z1")
    if z0.shape != z1.shape:
        raise RejectedInput(f"dimension mismatch: {z0.shape} vs {z1.shape}")
    return z0, z1


def _check_time(t):
    t = np.asarray(t, dtype=np.float64)
    if np.any(~np.isfinite(t)) or np.any(t < 0.0) or np.any(t > 1.0):
        raise RejectedInput(f"t must lie in [0, 1], got {t}")
    return t


def interpolate(z0, z1, t):
    """Return ``(1 - t) * z0 + t * z1``.

    ``t`` may be a scalar or, for batches, one time per row.
    """
    z0, z1 = _check_pair(z0, z1)
    t = _check_time(t)
    if t.ndim == 1 and z0.ndim == 2:
        t = t[:, None]
    return (1.0 - t) * z0 + t * z1


def conditional_velocity(z0, z1):
    z0, z1 = _check_pair(z0, z1)
    return z1 - z0


def make_training_point(z0, z1, t):
    return InterpolantPoint(
        state=interpolate(z0, z1, t),
        time=_check_time(t) if np.ndim(t) else float(t),
        target_velocity=conditional_velocity(z0, z1),
    )
