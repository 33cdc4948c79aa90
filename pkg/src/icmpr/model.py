"""Weibull multi-parameter regression model with optional gamma frailty.

The conditional hazard is ``lam * gamma * t**(gamma - 1)`` with

    lam   = exp(x . beta)      (scale regression)
    gamma = exp(z . alpha)     (shape regression)
    phi   = exp(w . psi)       (frailty variance / dispersion regression)

and integrating out a mean-one gamma frailty with variance ``phi`` gives the
marginal survivor ``(1 + phi * Lambda(t)) ** (-1 / phi)``.  ``phi == 0``
encodes "no frailty" and every formula below takes the exponential limit on
that path.

Everything that depends on the Weibull form of the baseline lives in
:func:`cum_hazard` and :func:`hazard`; the likelihood only needs the
cumulative hazard and its derivatives with respect to the linear predictors,
so another baseline would slot in there.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DomainError, InvalidParameterError, SpecError

__all__ = [
    "ModelType",
    "ModelSpec",
    "Theta",
    "ParamTriple",
    "design_matrix",
    "evaluate_parameters",
    "hazard",
    "cum_hazard",
    "log_marginal_survivor",
    "marginal_survivor",
    "marginal_hazard",
    "median_time",
]

# below this value of phi * Lambda the log1p ratios switch to their series
_SERIES_CUTOFF = 1e-6


class ModelType(str, enum.Enum):
    PH = "PH"
    PHF = "PHF"
    PHDM = "PHDM"
    MPR = "MPR"
    MPRF = "MPRF"
    MPRDM = "MPRDM"

    @property
    def shape_regression(self) -> bool:
        return self in (ModelType.MPR, ModelType.MPRF, ModelType.MPRDM)

    @property
    def frailty(self) -> bool:
        return self not in (ModelType.PH, ModelType.MPR)

    @property
    def dispersion(self) -> bool:
        return self in (ModelType.PHDM, ModelType.MPRDM)

    @property
    def components(self) -> tuple[str, ...]:
        """Regression components that may carry covariates."""
        comps = ["scale"]
        if self.shape_regression:
            comps.append("shape")
        if self.dispersion:
            comps.append("disp")
        return tuple(comps)


def _as_index_tuple(idx) -> tuple[int, ...]:
    out = tuple(int(i) for i in idx)
    if any(i < 0 for i in out):
        raise SpecError(f"negative covariate index in {out}")
    if len(set(out)) != len(out):
        raise SpecError(f"duplicate covariate index in {out}")
    return out


@dataclass(frozen=True)
class ModelSpec:
    """Model type plus the covariate columns entering each regression.

    Index sets refer to columns of the dataset covariate matrix and never
    include the intercept, which is always present.
    """

    model_type: ModelType
    scale_idx: tuple[int, ...] = ()
    shape_idx: tuple[int, ...] = ()
    disp_idx: tuple[int, ...] = ()
    time_offset: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "model_type", ModelType(self.model_type))
        for name in ("scale_idx", "shape_idx", "disp_idx"):
            object.__setattr__(self, name, _as_index_tuple(getattr(self, name)))
        mt = self.model_type
        if self.shape_idx and not mt.shape_regression:
            raise SpecError(f"{mt.value} does not allow a shape regression")
        if self.disp_idx and not mt.dispersion:
            raise SpecError(f"{mt.value} does not allow a dispersion regression")
        if not np.isfinite(self.time_offset):
            raise SpecError("time_offset must be finite")

    @classmethod
    def coerce(cls, model_type, scale=(), shape=(), disp=(), time_offset=0.0) -> "ModelSpec":
        """Build a spec, silently emptying index sets the model type forbids."""
        mt = ModelType(model_type)
        return cls(
            mt,
            scale,
            shape if mt.shape_regression else (),
            disp if mt.dispersion else (),
            time_offset,
        )

    def validate_columns(self, n_columns: int) -> None:
        for name in ("scale_idx", "shape_idx", "disp_idx"):
            bad = [i for i in getattr(self, name) if i >= n_columns]
            if bad:
                raise SpecError(f"{name} refers to missing columns {bad} (have {n_columns})")

    def block_sizes(self) -> tuple[int, int, int]:
        return (
            1 + len(self.scale_idx),
            1 + len(self.shape_idx),
            1 + len(self.disp_idx) if self.model_type.frailty else 0,
        )

    @property
    def n_params(self) -> int:
        return sum(self.block_sizes())

    def index_set(self, component: str) -> tuple[int, ...]:
        return {"scale": self.scale_idx, "shape": self.shape_idx, "disp": self.disp_idx}[component]

    def with_index_set(self, component: str, idx) -> "ModelSpec":
        kw = {"scale": "scale_idx", "shape": "shape_idx", "disp": "disp_idx"}[component]
        return ModelSpec(
            self.model_type,
            **{
                "scale_idx": self.scale_idx,
                "shape_idx": self.shape_idx,
                "disp_idx": self.disp_idx,
                kw: tuple(sorted(idx)),
            },
            time_offset=self.time_offset,
        )

    def param_names(self, column_names: Sequence[str] | None = None) -> list[str]:
        """Names of the packed parameters, e.g. ``scale:(intercept)``, ``shape:dmf``."""

        def label(i):
            return column_names[i] if column_names is not None else f"x{i}"

        names = ["scale:(intercept)"] + [f"scale:{label(i)}" for i in self.scale_idx]
        names += ["shape:(intercept)"] + [f"shape:{label(i)}" for i in self.shape_idx]
        if self.model_type.frailty:
            names += ["disp:(intercept)"] + [f"disp:{label(i)}" for i in self.disp_idx]
        return names

    def describe(self, column_names: Sequence[str] | None = None) -> str:
        def fmt(idx):
            if column_names is None:
                return ",".join(str(i) for i in idx)
            return ",".join(column_names[i] for i in idx)

        parts = [f"scale=[{fmt(self.scale_idx)}]"]
        if self.model_type.shape_regression:
            parts.append(f"shape=[{fmt(self.shape_idx)}]")
        if self.model_type.dispersion:
            parts.append(f"disp=[{fmt(self.disp_idx)}]")
        return f"{self.model_type.value}({' '.join(parts)})"


@dataclass
class Theta:
    """Coefficient blocks ``beta`` (scale), ``alpha`` (shape), ``psi`` (log frailty variance)."""

    beta: np.ndarray
    alpha: np.ndarray
    psi: np.ndarray | None = None

    def __post_init__(self):
        self.beta = np.atleast_1d(np.asarray(self.beta, dtype=float))
        self.alpha = np.atleast_1d(np.asarray(self.alpha, dtype=float))
        if self.psi is not None:
            self.psi = np.atleast_1d(np.asarray(self.psi, dtype=float))

    def pack(self) -> np.ndarray:
        blocks = [self.beta, self.alpha]
        if self.psi is not None:
            blocks.append(self.psi)
        return np.concatenate(blocks)

    @classmethod
    def unpack(cls, spec: ModelSpec, vec) -> "Theta":
        vec = np.asarray(vec, dtype=float)
        nb, na, npsi = spec.block_sizes()
        if vec.shape != (nb + na + npsi,):
            raise SpecError(f"parameter vector has shape {vec.shape}, spec needs {nb + na + npsi}")
        return cls(
            vec[:nb].copy(),
            vec[nb:nb + na].copy(),
            vec[nb + na:].copy() if npsi else None,
        )

    @classmethod
    def zeros(cls, spec: ModelSpec) -> "Theta":
        return cls.unpack(spec, np.zeros(spec.n_params))

    def check(self, spec: ModelSpec) -> None:
        nb, na, npsi = spec.block_sizes()
        got = (self.beta.size, self.alpha.size, 0 if self.psi is None else self.psi.size)
        if got != (nb, na, npsi):
            raise SpecError(f"theta block sizes {got} do not match spec {(nb, na, npsi)}")


@dataclass(frozen=True)
class ParamTriple:
    """Per-subject Weibull scale, shape and frailty variance (arrays broadcast)."""

    lam: np.ndarray
    gamma: np.ndarray
    phi: np.ndarray = field(default=0.0)

    def __post_init__(self):
        for name in ("lam", "gamma", "phi"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        if np.any(self.lam <= 0) or np.any(self.gamma <= 0) or np.any(self.phi < 0):
            raise InvalidParameterError("need lam > 0, gamma > 0, phi >= 0")


def design_matrix(covariates: np.ndarray, idx: Sequence[int]) -> np.ndarray:
    """Prepend the intercept column to the selected covariate columns."""
    covariates = np.atleast_2d(np.asarray(covariates, dtype=float))
    n = covariates.shape[0]
    return np.column_stack([np.ones(n), covariates[:, list(idx)]]) if idx else np.ones((n, 1))


def linear_predictors(spec: ModelSpec, theta: Theta, covariates):
    """Return the scale, shape and dispersion linear predictors (``eta_w`` is None without frailty)."""
    X = design_matrix(covariates, spec.scale_idx)
    Z = design_matrix(covariates, spec.shape_idx)
    eta_x = X @ theta.beta
    eta_z = Z @ theta.alpha
    eta_w = None
    if spec.model_type.frailty:
        W = design_matrix(covariates, spec.disp_idx)
        eta_w = W @ theta.psi
    return eta_x, eta_z, eta_w


def evaluate_parameters(spec: ModelSpec, theta: Theta, covariates) -> ParamTriple:
    """Map coefficients and covariate row(s) to ``(lam, gamma, phi)``.

    ``covariates`` may be a single row (1-d) or an ``n x m`` matrix; the
    returned triple has scalar or length-``n`` fields accordingly.
    """
    theta.check(spec)
    cov = np.asarray(covariates, dtype=float)
    single = cov.ndim <= 1
    cov2 = np.atleast_2d(cov) if cov.size else np.zeros((1, 0))
    spec.validate_columns(cov2.shape[1])
    # overflow here yields non-finite predictors, which are rejected below
    with np.errstate(over="ignore", invalid="ignore"):
        eta_x, eta_z, eta_w = linear_predictors(spec, theta, cov2)
    for eta in (eta_x, eta_z, eta_w):
        if eta is not None and not np.all(np.isfinite(eta)):
            raise InvalidParameterError("non-finite linear predictor")
    lam, gamma = np.exp(eta_x), np.exp(eta_z)
    phi = np.exp(eta_w) if eta_w is not None else np.zeros_like(lam)
    if single:
        lam, gamma, phi = lam[0], gamma[0], phi[0]
    return ParamTriple(lam, gamma, phi)


def hazard(p: ParamTriple, t):
    """Conditional (frailty = 1) Weibull hazard ``lam * gamma * t**(gamma-1)``."""
    t = np.asarray(t, dtype=float)
    if np.any(t <= 0):
        raise DomainError("hazard requires t > 0")
    return p.lam * p.gamma * t ** (p.gamma - 1.0)


def cum_hazard(p: ParamTriple, t):
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise DomainError("cumulative hazard requires t >= 0")
    return p.lam * t ** p.gamma


def _log_survivor_from_cumhaz(Lam, phi):
    """log S_m given the cumulative hazard; handles Lam = inf and phi = 0."""
    Lam = np.asarray(Lam, dtype=float)
    phi = np.asarray(phi, dtype=float)
    x = phi * np.where(np.isinf(Lam), 0.0, Lam)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        series = -Lam * (1.0 - x / 2.0 + x * x / 3.0)
        direct = -np.log1p(phi * Lam) / np.where(phi > 0, phi, 1.0)
    use_series = (phi == 0) | (x < _SERIES_CUTOFF) & np.isfinite(Lam)
    out = np.where(use_series, series, direct)
    return np.where(np.isinf(Lam), -np.inf, out)


def log_marginal_survivor(p: ParamTriple, t):
    return _log_survivor_from_cumhaz(cum_hazard(p, t), p.phi)


def marginal_survivor(p: ParamTriple, t):
    """Marginal survivor after integrating out the gamma frailty."""
    return np.exp(log_marginal_survivor(p, t))


def marginal_hazard(p: ParamTriple, t):
    """Population-level hazard ``hazard(t) * S_m(t)**phi``."""
    h = hazard(p, t)
    return h * np.exp(p.phi * log_marginal_survivor(p, t))


def median_time(p: ParamTriple):
    """Time at which the marginal survivor equals one half."""
    # (2**phi - 1) / phi = log2 * expm1(u) / u with u = phi * log 2; limit log 2
    u = p.phi * np.log(2.0)
    small = u < 1e-8
    safe = np.where(small, 1.0, u)
    ratio = np.where(small, 1.0 + u / 2.0 + u * u / 6.0, np.expm1(safe) / safe)
    c = np.log(2.0) * ratio
    return np.exp((np.log(c) - np.log(p.lam)) / p.gamma)
