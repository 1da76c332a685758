"""Pairings between two equal-size batches.

A plan maps row ``i`` of ``batch0`` to row ``pairing[i]`` of ``batch1``.
"""

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import ConfigurationError, RejectedInput

INDEPENDENT = "independent"
MINIBATCH_OT = "minibatch_ot"
DATA_DEPENDENT = "data_dependent"
STRATEGIES = (INDEPENDENT, MINIBATCH_OT, DATA_DEPENDENT)
DEFAULT_OT_CAP = 256


@dataclass(frozen=True)
class CouplingPlan:
    pairing: np.ndarray
    strategy: str
    cost: float

    def __len__(self):
        return len(self.pairing)


def _batches(batch0, batch1):
    b0 = np.atleast_2d(np.asarray(batch0, dtype=np.float64))
    b1 = np.atleast_2d(np.asarray(batch1, dtype=np.float64))
    if len(b0) != len(b1):
        raise RejectedInput(f"batch sizes differ: {len(b0)} vs {len(b1)}")
    if len(b0) == 0:
        raise RejectedInput("empty batch")
    if b0.shape[1:] != b1.shape[1:]:
        raise RejectedInput(f"sample dims differ: {b0.shape[1:]} vs {b1.shape[1:]}")
    return b0, b1


def sq_cost_matrix(b0, b1):
    """``C[i, j] = ||b0[i] - b1[j]||^2``, clamped at zero against round-off."""
    c = (b0 * b0).sum(1)[:, None] + (b1 * b1).sum(1)[None, :] - 2.0 * b0 @ b1.T
    return np.maximum(c, 0.0)


def plan_cost(b0, b1, pairing):
    d = np.asarray(b0, dtype=np.float64) - np.asarray(b1, dtype=np.float64)[pairing]
    return float(np.sum(d * d))


def couple_independent(batch0, batch1, seed=0):
    b0, b1 = _batches(batch0, batch1)
    pairing = np.random.default_rng(seed).permutation(len(b0))
    return CouplingPlan(pairing, INDEPENDENT, plan_cost(b0, b1, pairing))


def couple_minibatch_ot(batch0, batch1, ot_cap=DEFAULT_OT_CAP):
    """Exact minimum squared-Euclidean assignment between the two batches."""
    b0, b1 = _batches(batch0, batch1)
    if len(b0) > ot_cap:
        raise ConfigurationError(f"batch of {len(b0)} exceeds the OT cap of {ot_cap}")
    cost = sq_cost_matrix(b0, b1)
    rows, cols = linear_sum_assignment(cost)
    pairing = np.empty(len(b0), dtype=np.int64)
    pairing[rows] = cols
    pairing = _prefer_low_indices(cost, pairing)
    return CouplingPlan(pairing, MINIBATCH_OT, plan_cost(b0, b1, pairing))


def _prefer_low_indices(cost, pairing, rtol=1e-12):
    """Among equal-cost pairwise exchanges, move low columns to low rows.

    Repeats until no exchange of two rows keeps the cost and makes the
    pairing lexicographically smaller. Ties spanning longer cycles are
    left as the solver returned them.
    """
    n = len(pairing)
    if n < 2:
        return pairing
    scale = rtol * max(1.0, float(np.abs(cost).max()))
    upper = np.triu(np.ones((n, n), dtype=bool), 1)
    for _ in range(n * n):
        a = cost[:, pairing]  # a[i, j] = cost of row i taking row j's column
        d = np.diag(a)
        delta = a + a.T - d[:, None] - d[None, :]
        better = upper & (np.abs(delta) <= scale) & (pairing[None, :] < pairing[:, None])
        if not better.any():
            break
        i = int(np.argmax(better.any(axis=1)))
        cand = np.flatnonzero(better[i])
        j = int(cand[np.argmin(pairing[cand])])
        pairing[i], pairing[j] = pairing[j], pairing[i]
    return pairing


def couple_paired(batch0, batch1=None):
    """Diagonal plan: coregistered row ``i`` stays with row ``i``.

    Accepts either two arrays or an object carrying ``x0``/``x1`` arrays.
    """
    if batch1 is None:
        batch0, batch1 = batch0.x0, batch0.x1
    b0, b1 = _batches(batch0, batch1)
    pairing = np.arange(len(b0))
    return CouplingPlan(pairing, DATA_DEPENDENT, plan_cost(b0, b1, pairing))


def couple(strategy, batch0, batch1, seed=0, ot_cap=DEFAULT_OT_CAP):
    if strategy == INDEPENDENT:
        return couple_independent(batch0, batch1, seed)
    if strategy == MINIBATCH_OT:
        return couple_minibatch_ot(batch0, batch1, ot_cap)
    if strategy == DATA_DEPENDENT:
        return couple_paired(batch0, batch1)
    raise ConfigurationError(f"unknown coupling {strategy!r}; expected one of {STRATEGIES}")


def pairing_matrix(plan, n):
    if len(plan) != n:
        raise RejectedInput(f"plan covers {len(plan)} elements, not {n}")
    m = np.zeros((n, n), dtype=np.int8)
    m[np.arange(n), plan.pairing] = 1
    return m


def format_pairing_matrix(m):
    """Plain-text grid, one row per line, ``#`` for paired and ``.`` otherwise."""
    return "\n".join("".join("#" if v else "." for v in row) for row in m)
