"""Interval-censored log-likelihood, analytic score and observed information.

Each subject contributes ``log pi_i`` with ``pi_i = S_m(a_i) - S_m(b_i)``.
The score has the common form

    sum_i (1/pi_i) {S_m(b)^(1+phi) w(b) - S_m(a)^(1+phi) w(a)} v_i

where ``v_i`` is the design row of the block and ``w`` the block's weight
function: ``Lambda(t)`` for the scale, ``Lambda(t) gamma log t`` for the
shape and ``Lambda(t) + S_m(t)^(-phi) log S_m(t)`` for the log frailty
variance.  All of it is evaluated in log space.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .data import Dataset
from .model import (
    ModelSpec,
    ParamTriple,
    Theta,
    _log_survivor_from_cumhaz,
    design_matrix,
    linear_predictors,
    log_marginal_survivor,
)

log = logging.getLogger(__name__)

__all__ = [
    "LogLikResult",
    "log_interval_prob",
    "log_likelihood",
    "score",
    "observed_information",
    "numerical_jacobian",
    "information_rank",
]

_SERIES_CUTOFF = 1e-4


@dataclass
class LogLikResult:
    value: float
    per_obs: np.ndarray


def _log_diff(la, lb):
    """log(exp(la) - exp(lb)) for la >= lb."""
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        out = la + np.log1p(-np.exp(lb - la))
    out = np.where(np.isneginf(lb), la, out)
    out = np.where(np.isneginf(la) | (lb >= la), -np.inf, out)
    return out


def log_interval_prob(p: ParamTriple, a, b):
    """``log[S_m(a) - S_m(b)]``; ``b = inf`` gives ``log S_m(a)``.

    Degenerate intervals (``a == b`` or survivors equal to machine
    precision) return ``-inf``.
    """
    la = log_marginal_survivor(p, a)
    lb = log_marginal_survivor(p, b)
    out = _log_diff(la, lb)
    if np.any(np.isneginf(out)):
        log.debug("degenerate interval: %d term(s) with zero probability",
                  int(np.sum(np.isneginf(out))))
    return out


def _dispersion_weight_ratio(x):
    """``1 - (1 + x) log1p(x) / x``, the dispersion weight divided by Lambda."""
    x = np.asarray(x, dtype=float)
    small = x < _SERIES_CUTOFF
    xs = np.where(small, 1.0, x)
    direct = 1.0 - (1.0 + xs) * np.log1p(xs) / xs
    series = x * (-0.5 + x * (1.0 / 6.0 - x / 12.0))
    return np.where(small, series, direct)


class _Evaluation:
    """Per-subject quantities shared by the log-likelihood and the score."""

    def __init__(self, spec: ModelSpec, theta_vec, data: Dataset):
        theta = Theta.unpack(spec, theta_vec)
        cov = data.covariates
        self.spec = spec
        self.X = design_matrix(cov, spec.scale_idx)
        self.Z = design_matrix(cov, spec.shape_idx)
        self.W = design_matrix(cov, spec.disp_idx) if spec.model_type.frailty else None
        eta_x, eta_z, eta_w = linear_predictors(spec, theta, cov)
        with np.errstate(over="ignore"):
            self.gamma = np.exp(eta_z)
            self.phi = np.exp(eta_w) if eta_w is not None else np.zeros(data.n)
        self.eta_x = eta_x
        self.a = self._endpoint(data.left)
        self.b = self._endpoint(data.right)
        self.log_pi = _log_diff(self.a["logS"], self.b["logS"])

    def _endpoint(self, t):
        zero = t == 0
        inf = np.isinf(t)
        safe_t = np.where(zero | inf, 1.0, t)
        logt = np.log(safe_t)
        with np.errstate(over="ignore", invalid="ignore"):
            log_cum = self.eta_x + self.gamma * logt
            cum = np.exp(log_cum)
        log_cum = np.where(zero, -np.inf, np.where(inf, np.inf, log_cum))
        cum = np.where(zero, 0.0, np.where(inf, np.inf, cum))
        logS = _log_survivor_from_cumhaz(cum, self.phi)
        return {"t": t, "zero": zero, "inf": inf, "logt": logt,
                "log_cum": log_cum, "cum": cum, "logS": logS}

    def _weighted(self, e, kind):
        """``S_m(t)^(1+phi) w(t) / pi`` for one endpoint, zero at t = 0 and t = inf."""
        dead = e["zero"] | e["inf"]
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            # S^(1+phi) * Lambda / pi, formed in log space
            base = np.exp((1.0 + self.phi) * e["logS"] + e["log_cum"] - self.log_pi)
            if kind == "beta":
                w = base
            elif kind == "alpha":
                w = base * self.gamma * e["logt"]
            else:
                w = base * _dispersion_weight_ratio(self.phi * e["cum"])
        return np.where(dead, 0.0, w)

    def score_vector(self):
        blocks = []
        for kind, D in (("beta", self.X), ("alpha", self.Z), ("psi", self.W)):
            if D is None:
                continue
            g = self._weighted(self.b, kind) - self._weighted(self.a, kind)
            blocks.append(D.T @ g)
        return np.concatenate(blocks)


def _vec(spec: ModelSpec, theta) -> np.ndarray:
    if isinstance(theta, Theta):
        theta.check(spec)
        return theta.pack()
    vec = np.asarray(theta, dtype=float)
    if vec.shape != (spec.n_params,):
        raise ValueError(f"theta has shape {vec.shape}, expected ({spec.n_params},)")
    return vec


def log_likelihood(spec: ModelSpec, theta, data: Dataset) -> LogLikResult:
    """Interval-censored log-likelihood at ``theta`` (a :class:`Theta` or packed vector)."""
    spec.validate_columns(data.covariates.shape[1])
    ev = _Evaluation(spec, _vec(spec, theta), data)
    per_obs = ev.log_pi
    value = float(np.sum(per_obs)) if np.all(np.isfinite(per_obs)) else -np.inf
    return LogLikResult(value, per_obs)


def score(spec: ModelSpec, theta, data: Dataset) -> np.ndarray:
    """Analytic gradient of the log-likelihood in packed parameter order."""
    spec.validate_columns(data.covariates.shape[1])
    ev = _Evaluation(spec, _vec(spec, theta), data)
    return ev.score_vector()


def loglik_and_score(spec: ModelSpec, theta, data: Dataset) -> tuple[float, np.ndarray]:
    ev = _Evaluation(spec, _vec(spec, theta), data)
    if not np.all(np.isfinite(ev.log_pi)):
        return -np.inf, np.full(spec.n_params, np.nan)
    return float(np.sum(ev.log_pi)), ev.score_vector()


def numerical_jacobian(fn: Callable[[np.ndarray], np.ndarray], x, rel_step=1e-5) -> np.ndarray:
    """Central-difference Jacobian of a vector function, step ``rel_step * max(1, |x_j|)``."""
    x = np.asarray(x, dtype=float)
    cols = []
    for j in range(x.size):
        h = rel_step * max(1.0, abs(x[j]))
        xp, xm = x.copy(), x.copy()
        xp[j] += h
        xm[j] -= h
        cols.append((np.asarray(fn(xp)) - np.asarray(fn(xm))) / (2.0 * h))
    return np.column_stack(cols)


def observed_information(spec: ModelSpec, theta, data: Dataset, score_fn=None) -> np.ndarray:
    """Negative Hessian of the log-likelihood by differencing the analytic score.

    ``score_fn`` replaces the analytic score (used to check the differencing
    on functions with known Hessians).  The result is symmetrised.
    """
    vec = _vec(spec, theta)
    if score_fn is None:
        def score_fn(v):
            return score(spec, v, data)
    H = numerical_jacobian(score_fn, vec)
    info = -(H + H.T) / 2.0
    rank = information_rank(info)
    if rank < info.shape[0]:
        log.warning("observed information is rank deficient (%d of %d)", rank, info.shape[0])
    return info


def information_rank(info: np.ndarray, rtol=1e-10) -> int:
    if not np.all(np.isfinite(info)):
        return 0
    return int(np.linalg.matrix_rank(info, tol=rtol * max(1.0, np.abs(info).max())))
