"""Time grids and explicit Euler integration of a velocity field."""

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from . import codec as codecs
from .errors import NonFiniteError, RejectedInput
from .velocity import forward

FORWARD = "forward"  # t: 0 -> 1, target domain -> source domain
BACKWARD = "backward"  # t: 1 -> 0
DEFAULT_STEPS = 50
DEFAULT_KAPPA = 10.0


@dataclass(frozen=True)
class TimeGrid:
    times: np.ndarray
    kappa: float

    @property
    def steps(self):
        return len(self.times) - 1


def sigmoid_schedule(n, kappa=DEFAULT_KAPPA):
    """``n``-step grid on [0, 1] bunched near both ends; ``kappa=0`` is uniform."""
    if int(n) != n or n < 1:
        raise RejectedInput(f"need at least one step, got {n}")
    if kappa < 0:
        raise RejectedInput(f"kappa must be >= 0, got {kappa}")
    n = int(n)
    i = np.arange(n + 1)
    if kappa == 0:
        times = i / n
    else:
        lo, hi = expit(-kappa / 2), expit(kappa / 2)
        times = (expit(kappa * (i / n - 0.5)) - lo) / (hi - lo)
    times[0], times[-1] = 0.0, 1.0
    return TimeGrid(times, float(kappa))


def linear_schedule(n):
    return sigmoid_schedule(n, 0.0)


def integrate(velocity_fn, z_start, grid, direction=FORWARD, trajectory=False):
    """Explicit Euler along ``grid``.

    Forward steps evaluate ``v`` at the left (smaller) time of each
    interval; backward steps walk the reversed grid from t=1 and evaluate
    at the larger time, i.e. the start of each reversed interval.
    ``velocity_fn(t, z)`` must accept a batch. Returns ``(z_end, states)``
    where ``states`` lists every grid node when ``trajectory`` is set.
    """
    if direction not in (FORWARD, BACKWARD):
        raise RejectedInput(f"unknown direction {direction!r}")
    z = np.array(z_start, dtype=np.float64)
    times = grid.times if direction == FORWARD else grid.times[::-1]
    states = [z.copy()] if trajectory else None
    for i in range(len(times) - 1):
        t, dt = times[i], times[i + 1] - times[i]
        z = z + dt * velocity_fn(t, z)
        if not np.all(np.isfinite(z)):
            raise NonFiniteError(f"non-finite state after integration step {i}", step=i)
        if trajectory:
            states.append(z.copy())
    return z, states


def model_velocity(model):
    return lambda t, z: forward(model, t, z)


def translate(state, codec, x, direction=FORWARD, grid=None, use_ema=True):
    """Encode ``x``, integrate the learned flow, decode."""
    grid = grid if grid is not None else sigmoid_schedule(DEFAULT_STEPS, DEFAULT_KAPPA)
    model = state.ema_params if use_ema else state.params
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2 and len(x) == 0:
        return x.copy()
    z = codecs.encode(codec, x)
    z_end, _ = integrate(model_velocity(model), z, grid, direction)
    return codecs.decode(codec, z_end)
