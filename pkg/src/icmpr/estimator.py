"""Maximum likelihood fitting, standard errors, Wald tests and median prediction."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy import stats

from .data import Dataset
from .errors import InvalidCovarianceError, NonIdentifiableError
from .likelihood import information_rank, loglik_and_score, observed_information
from .model import ModelSpec, Theta, design_matrix, evaluate_parameters, median_time

log = logging.getLogger(__name__)

__all__ = [
    "FitOptions",
    "FitResult",
    "MedianPrediction",
    "initialize",
    "fit",
    "wald_tests",
    "predict_median",
]

FRAILTY_ABSENT_LOG_PHI = -20.0


@dataclass
class FitOptions:
    max_iter: int = 200
    grad_tol: float = 1e-6
    step_tol: float = 1e-9
    # a stalled step still counts as converged when g' I^{-1} g is below this
    decrement_tol: float = 1e-10
    seed: int | None = None
    # Newton steps on the observed information once BFGS is close
    polish: bool = True

    def __post_init__(self):
        if self.max_iter < 1 or self.grad_tol <= 0 or self.step_tol <= 0:
            raise ValueError("max_iter must be >= 1 and tolerances > 0")


@dataclass
class FitResult:
    spec: ModelSpec
    theta_hat: Theta
    loglik: float
    covariance: np.ndarray | None
    se: np.ndarray
    converged: bool
    iterations: int
    grad_norm: float
    n_obs: int
    column_names: list[str] = field(default_factory=list)
    message: str = ""
    history: list[float] = field(default_factory=list)

    @property
    def k(self) -> int:
        return self.spec.n_params

    @property
    def aic(self) -> float:
        return -2.0 * self.loglik + 2.0 * self.k

    @property
    def bic(self) -> float:
        return -2.0 * self.loglik + np.log(self.n_obs) * self.k

    @property
    def covariance_valid(self) -> bool:
        return self.covariance is not None and bool(np.all(np.isfinite(self.covariance)))

    @property
    def param_names(self) -> list[str]:
        return self.spec.param_names(self.column_names or None)

    @property
    def frailty_absent(self) -> bool:
        """True when every subject's fitted frailty variance is negligible."""
        psi = self.theta_hat.psi
        return psi is None or (psi.size == 1 and psi[0] < FRAILTY_ABSENT_LOG_PHI)

    @classmethod
    def from_coefficients(cls, spec, theta, column_names=(), covariance=None, n_obs=0):
        """Wrap externally supplied coefficients (e.g. reference estimates)."""
        if not isinstance(theta, Theta):
            theta = Theta.unpack(spec, theta)
        se = (np.sqrt(np.diag(covariance)) if covariance is not None
              else np.full(spec.n_params, np.nan))
        return cls(spec, theta, np.nan, covariance, se, True, 0, np.nan, n_obs,
                   list(column_names), "supplied coefficients")


def initialize(spec: ModelSpec, data: Dataset) -> Theta:
    """Crude starting values: exponential rate from midpoint-imputed exposure.

    All covariate coefficients are zero, the shape intercept is zero
    (``gamma = 1``) and the frailty intercept is ``log 0.5``.
    """
    finite = ~data.right_censored
    n_events = int(finite.sum())
    if n_events == 0:
        raise NonIdentifiableError("all observations are right-censored")
    exposure = np.where(finite, 0.5 * (data.left + np.where(finite, data.right, 0.0)), data.left)
    theta = Theta.zeros(spec)
    theta.beta[0] = np.log(n_events / exposure.sum())
    if theta.psi is not None:
        theta.psi[0] = np.log(0.5)
    return theta


def _covariance(info):
    try:
        np.linalg.cholesky(info)
    except np.linalg.LinAlgError:
        return None
    return np.linalg.inv(info)


def fit(spec: ModelSpec, data: Dataset, opts: FitOptions | None = None, theta0=None) -> FitResult:
    """Maximise the interval-censored log-likelihood by BFGS with backtracking.

    Every accepted step satisfies an Armijo condition, so the log-likelihood
    never decreases.  When the gradient is small and the observed information
    is positive definite, Newton steps finish the job.
    """
    opts = opts or FitOptions()
    spec.validate_columns(data.covariates.shape[1])
    if theta0 is None:
        theta0 = initialize(spec, data)
    x = theta0.pack() if isinstance(theta0, Theta) else np.array(theta0, dtype=float)

    def objective(v):
        return loglik_and_score(spec, v, data)

    f, g = objective(x)
    if not np.isfinite(f):
        raise NonIdentifiableError("log-likelihood is -inf at the starting values")
    history = [f]
    n = x.size
    Hinv = None
    converged = False
    message = "maximum iterations reached"
    it = 0
    while it < opts.max_iter:
        gnorm = np.max(np.abs(g))
        if gnorm < opts.grad_tol:
            converged, message = True, "gradient tolerance reached"
            break
        it += 1
        direction = None
        if opts.polish and gnorm < 1e-2:
            info = observed_information(spec, x, data)
            try:
                np.linalg.cholesky(info)
                direction = np.linalg.solve(info, g)
            except np.linalg.LinAlgError:
                direction = None
        if direction is None:
            if Hinv is None:
                Hinv = np.eye(n) / max(1.0, gnorm)
            direction = Hinv @ g
            if direction @ g <= 0:
                Hinv = np.eye(n) / max(1.0, gnorm)
                direction = Hinv @ g
        slope = direction @ g
        step = 1.0
        accepted = False
        while step > 1e-16:
            xn = x + step * direction
            fn, gn = objective(xn)
            if np.isfinite(fn) and fn >= f + 1e-4 * step * slope:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            message = "line search failed"
            break
        s = xn - x
        y = g - gn  # gradient of the negative log-likelihood changes by -(gn - g)
        sy = s @ y
        if sy > 1e-12 * np.linalg.norm(s) * np.linalg.norm(y):
            if Hinv is None or it == 1:
                Hinv = np.eye(n) * sy / (y @ y)
            rho = 1.0 / sy
            V = np.eye(n) - rho * np.outer(s, y)
            Hinv = V @ Hinv @ V.T + rho * np.outer(s, s)
        small_step = np.max(np.abs(s)) < opts.step_tol * (1.0 + np.max(np.abs(x)))
        x, f, g = xn, fn, gn
        history.append(f)
        if small_step:
            if np.max(np.abs(g)) < opts.grad_tol:
                converged, message = True, "gradient tolerance reached"
            elif _newton_decrement(spec, x, data, g) < opts.decrement_tol:
                converged, message = True, "newton decrement tolerance reached"
            else:
                message = "step tolerance reached"
            break
    gnorm = float(np.max(np.abs(g)))
    if not converged and gnorm < opts.grad_tol:
        converged, message = True, "gradient tolerance reached"

    info = observed_information(spec, x, data)
    cov = _covariance(info)
    if cov is None:
        log.warning("observed information not positive definite (rank %d of %d)",
                    information_rank(info), n)
        se = np.full(n, np.nan)
    else:
        se = np.sqrt(np.diag(cov))
    return FitResult(
        spec=spec,
        theta_hat=Theta.unpack(spec, x),
        loglik=f,
        covariance=cov,
        se=se,
        converged=converged,
        iterations=it,
        grad_norm=gnorm,
        n_obs=data.n,
        column_names=list(data.column_names),
        message=message,
        history=history,
    )


def _newton_decrement(spec, x, data, g) -> float:
    info = observed_information(spec, x, data)
    try:
        np.linalg.cholesky(info)
    except np.linalg.LinAlgError:
        return np.inf
    return float(g @ np.linalg.solve(info, g))


def wald_tests(fit: FitResult, level: float = 0.05) -> pd.DataFrame:
    """Per-coefficient Wald z statistics and two-sided p-values."""
    if not fit.covariance_valid:
        raise InvalidCovarianceError("fit has no valid covariance matrix")
    est = fit.theta_hat.pack()
    z = est / fit.se
    p = 2.0 * stats.norm.sf(np.abs(z))
    return pd.DataFrame(
        {"estimate": est, "se": fit.se, "z": z, "p": p, "significant": p < level},
        index=pd.Index(fit.param_names, name="parameter"),
    )


@dataclass
class MedianPrediction:
    median: float
    lower: float | None = None
    upper: float | None = None


def _log_median_gradient(spec: ModelSpec, theta: Theta, row) -> np.ndarray:
    p = evaluate_parameters(spec, theta, row)
    log_med = float(np.log(median_time(p)))
    x = design_matrix(row, spec.scale_idx)[0]
    z = design_matrix(row, spec.shape_idx)[0]
    blocks = [-x / p.gamma, -log_med * z]
    if spec.model_type.frailty:
        w = design_matrix(row, spec.disp_idx)[0]
        u = float(p.phi) * np.log(2.0)
        # d log((2^phi - 1)/phi) / d log(phi)
        dlogc = u / 2.0 + u * u / 12.0 if u < 1e-6 else u / -np.expm1(-u) - 1.0
        blocks.append(dlogc / p.gamma * w)
    return np.concatenate(blocks)


def predict_median(fit: FitResult, row, level: float = 0.95) -> MedianPrediction:
    """Median survival time for one covariate row, with a delta-method CI on the log scale.

    The interval is omitted when the fit carries no valid covariance.
    """
    row = np.atleast_1d(np.asarray(row, dtype=float))
    p = evaluate_parameters(fit.spec, fit.theta_hat, row)
    med = float(median_time(p))
    if not fit.covariance_valid:
        return MedianPrediction(med)
    grad = _log_median_gradient(fit.spec, fit.theta_hat, row)
    se = float(np.sqrt(grad @ fit.covariance @ grad))
    q = stats.norm.ppf(0.5 + level / 2.0)
    return MedianPrediction(med, med * np.exp(-q * se), med * np.exp(q * se))
