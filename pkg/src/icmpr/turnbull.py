"""Turnbull nonparametric MLE of the survivor function for interval-censored data."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset
from .errors import NonIdentifiableError

log = logging.getLogger(__name__)


def turnbull_support(data: Dataset) -> np.ndarray:
    """Maximal intersections ``(l, r]`` of the observation intervals, as a ``k x 2`` array.

    An interval qualifies when a left endpoint is immediately followed by a
    right endpoint in the pooled, sorted endpoint list.  For half-open
    intervals a right endpoint sorts before a left endpoint at the same time.
    """
    if not np.any(np.isfinite(data.right)):
        raise NonIdentifiableError("all observations are right-censored; empty support")
    # (time, kind) with kind 0 = right endpoint, 1 = left endpoint
    ends = [(t, 1) for t in data.left] + [(t, 0) for t in data.right]
    ends.sort()
    support = []
    for (t0, k0), (t1, k1) in zip(ends, ends[1:]):
        if k0 == 1 and k1 == 0 and t0 < t1:
            support.append((t0, t1))
    return np.array(sorted(set(support)), dtype=float).reshape(-1, 2)


@dataclass
class TurnbullEstimate:
    support: np.ndarray
    masses: np.ndarray
    converged: bool
    iterations: int
    loglik_trace: list = field(default_factory=list, repr=False)

    def survivor(self, t):
        """Survivor bounds ``(upper, lower)`` at ``t``.

        They coincide outside the support intervals; inside one the NPMLE
        only fixes the total mass, so the pair brackets every solution.
        """
        t = np.atleast_1d(np.asarray(t, dtype=float))
        left, right = self.support[:, 0], self.support[:, 1]
        # upper counts every interval not wholly at or before t; lower only those starting at or after t
        upper = np.array([self.masses[(right > s)].sum() for s in t])
        lower = np.array([self.masses[(left >= s)].sum() for s in t])
        return np.clip(upper, 0, 1), np.clip(lower, 0, 1)

    def step_table(self) -> np.ndarray:
        """Rows ``(t, S_upper, S_lower)`` at every support endpoint.

        Each row brackets the survivor over the gap ending at ``t``: the
        upper value is the survivor just after the previous endpoint and the
        lower value the survivor at ``t``.
        """
        pts = np.unique(self.support.ravel())
        pts = pts[np.isfinite(pts)]
        # mass at or beyond each endpoint as a reverse cumulative sum, so the
        # column is nonincreasing exactly rather than up to summation rounding
        order = np.argsort(self.support[:, 0])
        lefts = self.support[order, 0]
        tail = np.concatenate([np.cumsum(self.masses[order][::-1])[::-1], [0.0]])
        at = np.clip(tail[np.searchsorted(lefts, pts, side="left")], 0.0, 1.0)
        prev = np.concatenate([[1.0], at[:-1]])
        return np.column_stack([pts, prev, at])


def _containment(data: Dataset, support: np.ndarray) -> np.ndarray:
    a = data.left[:, None]
    b = data.right[:, None]
    return ((support[None, :, 0] >= a) & (support[None, :, 1] <= b)).astype(float)


def turnbull_fit(data: Dataset, tol: float = 1e-8, max_iter: int = 10_000) -> TurnbullEstimate:
    """Self-consistency EM for the interval masses, from a uniform start."""
    support = turnbull_support(data)
    A = _containment(data, support)
    keep = A.sum(axis=1) > 0
    if not np.all(keep):
        warnings.warn(f"dropping {int((~keep).sum())} observation(s) containing no support interval")
        A = A[keep]
    n, k = A.shape
    q = np.full(k, 1.0 / k)
    trace = [float(np.sum(np.log(A @ q)))]
    converged = False
    it = 0
    while it < max_iter:
        it += 1
        denom = A @ q
        q_new = q * (A.T @ (1.0 / denom)) / n
        q_new /= q_new.sum()
        change = np.max(np.abs(q_new - q))
        q = q_new
        trace.append(float(np.sum(np.log(A @ q))))
        if change < tol:
            converged = True
            break
    return TurnbullEstimate(support, q, converged, it, trace)
