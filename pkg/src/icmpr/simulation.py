"""Simulation of interval-censored data from the frailty MPR model and replicate studies.

Subjects get covariates, an optional gamma frailty, a Weibull event time and
either an exponential right-censoring time (when it comes first) or an
inspection interval of random width around the event time.  The interval
width parameter ``c`` is tied to the mean survival time and the censoring
rate is calibrated so the expected censored fraction hits a target.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import pandas as pd
from scipy import integrate, optimize

from .data import Dataset
from .errors import DomainError, SpecError
from .estimator import FitOptions, fit
from .model import ModelSpec, ModelType, ParamTriple, Theta, evaluate_parameters, marginal_survivor

log = logging.getLogger(__name__)

N_CALIBRATION_DRAWS = 10_000


@dataclass(frozen=True)
class CovariateSpec:
    name: str
    dist: str  # "bernoulli" or "normal"
    p: float = 0.5
    mean: float = 0.0
    sd: float = 1.0

    def draw(self, rng, n):
        if self.dist == "bernoulli":
            return (rng.random(n) < self.p).astype(float)
        if self.dist == "normal":
            return rng.normal(self.mean, self.sd, n)
        raise SpecError(f"unknown covariate distribution {self.dist!r}")


DEFAULT_COVARIATES = (
    CovariateSpec("x1", "bernoulli", p=0.5),
    CovariateSpec("x2", "normal", mean=0.0, sd=0.5),
)


def draw_covariates(covariates, rng, n) -> np.ndarray:
    if not covariates:
        return np.zeros((n, 0))
    return np.column_stack([c.draw(rng, n) for c in covariates])


@dataclass
class Scenario:
    """One cell of a simulation study."""

    n: int
    truth_spec: ModelSpec
    truth: Theta
    d: float = 0.1
    p: float = 0.0
    replicates: int = 100
    seed: int = 0
    covariates: tuple[CovariateSpec, ...] = DEFAULT_COVARIATES

    def __post_init__(self):
        if self.d <= 0 or not 0 <= self.p < 1 or self.n < 2:
            raise SpecError("scenario needs d > 0, 0 <= p < 1, n >= 2")
        self.truth.check(self.truth_spec)
        self.truth_spec.validate_columns(len(self.covariates))

    @property
    def column_names(self):
        return [c.name for c in self.covariates]

    @cached_property
    def design(self) -> "SimulationDesign":
        return prepare_design(self)

    @classmethod
    def from_dict(cls, cfg: dict) -> "Scenario":
        covs = tuple(CovariateSpec(**c) for c in cfg.get("covariates", [])) or DEFAULT_COVARIATES
        names = [c.name for c in covs]

        def idx(key):
            try:
                return tuple(names.index(nm) for nm in cfg.get(key, []))
            except ValueError as e:
                raise SpecError(f"unknown covariate in {key!r}: {e}") from None

        spec = ModelSpec(cfg["model_type"], idx("scale"), idx("shape"), idx("disp"))
        t = cfg["truth"]
        theta = Theta(t["beta"], t["alpha"], t.get("psi"))
        return cls(
            n=int(cfg["n"]), truth_spec=spec, truth=theta, d=float(cfg.get("d", 0.1)),
            p=float(cfg.get("p", 0.0)), replicates=int(cfg.get("replicates", 100)),
            seed=int(cfg.get("seed", 0)), covariates=covs,
        )

    def to_dict(self) -> dict:
        names = self.column_names
        spec = self.truth_spec
        truth = {"beta": self.truth.beta.tolist(), "alpha": self.truth.alpha.tolist()}
        if self.truth.psi is not None:
            truth["psi"] = self.truth.psi.tolist()
        return {
            "n": self.n, "model_type": spec.model_type.value,
            "scale": [names[i] for i in spec.scale_idx],
            "shape": [names[i] for i in spec.shape_idx],
            "disp": [names[i] for i in spec.disp_idx],
            "truth": truth, "d": self.d, "p": self.p,
            "replicates": self.replicates, "seed": self.seed,
            "covariates": [c.__dict__ for c in self.covariates],
        }


def reference_truth(model_type="MPR") -> tuple[ModelSpec, Theta]:
    """The two-covariate truth used throughout the simulation study.

    Scale (2.0, 0.5, 0.3) and shape (2.0, 0.25, -0.1) on x1, x2; frailty
    variance 0.5, with dispersion slopes (0.15, -0.2) for the DM type.
    """
    mt = ModelType(model_type)
    spec = ModelSpec.coerce(mt, (0, 1), (0, 1), (0, 1))
    psi = None
    if mt.frailty:
        psi = [np.log(0.5)] + ([0.15, -0.2] if mt.dispersion else [])
    shape = [2.0, 0.25, -0.1] if mt.shape_regression else [2.0]
    return spec, Theta([2.0, 0.5, 0.3], shape, psi)


def draw_frailty(phi, rng, size=None):
    """Gamma frailty with mean one and variance ``phi``."""
    phi = np.asarray(phi, dtype=float)
    if np.any(phi <= 0):
        raise DomainError("frailty variance must be positive")
    return rng.gamma(shape=1.0 / phi, scale=phi, size=size)


def draw_survival_time(p: ParamTriple, u, rng, size=None):
    """Invert the conditional survivor ``exp(-u * Lambda(t))``."""
    v = 1.0 - rng.random(size if size is not None else np.broadcast(p.lam, u).shape)
    return (-np.log(v) / (u * p.lam)) ** (1.0 / p.gamma)


def make_interval(T, c, rng, u1=None, u2=None):
    """Non-informative inspection interval around ``T`` with maximum width ``c``.

    ``u1`` and ``u2`` default to independent Uniform(0, c) draws.  The left
    end is clamped at zero.
    """
    T = np.asarray(T, dtype=float)
    if c <= 0:
        raise DomainError("interval width parameter must be positive")
    if u1 is None:
        u1 = rng.uniform(0.0, c, T.shape)
    if u2 is None:
        u2 = rng.uniform(0.0, c, T.shape)
    a = np.maximum(T - u1, T + u2 - c)
    b = np.minimum(T + u2, T - u1 + c)
    return np.maximum(a, 0.0), b


def _check_tail(p: ParamTriple):
    # S_m(t) ~ t^(-gamma/phi): mean exists only if gamma > phi
    if np.any((p.phi > 0) & (p.gamma <= p.phi)):
        raise DomainError("mean survival time diverges (frailty variance >= shape)")


def mean_survival(spec: ModelSpec, theta: Theta, covariates: np.ndarray) -> float:
    """E(T) averaged over covariate draws: integral of the marginal survivor."""
    p = evaluate_parameters(spec, theta, covariates)
    _check_tail(p)
    # integrate on a per-draw time scale so one adaptive rule fits all draws
    scale = np.asarray(np.exp(-np.log(p.lam) / p.gamma))

    def integrand(s):
        return marginal_survivor(p, s * scale) * scale

    val, _ = integrate.quad_vec(integrand, 0.0, np.inf, epsrel=1e-10, epsabs=0)
    return float(np.mean(val))


def censored_fraction(eta: float, spec: ModelSpec, theta: Theta, covariates) -> float:
    """Expected fraction with exponential(eta) censoring time before the event time."""
    p = evaluate_parameters(spec, theta, covariates)

    def integrand(s):
        # substitute s = eta * t so the exponential density becomes exp(-s)
        return marginal_survivor(p, np.full_like(np.atleast_1d(p.lam), s / eta)) * np.exp(-s)

    val, _ = integrate.quad_vec(integrand, 0.0, np.inf, epsrel=1e-11, epsabs=1e-14)
    return float(np.mean(val))


def calibrate_censoring(p_target: float, spec: ModelSpec, theta: Theta, covariates) -> float | None:
    """Exponential censoring rate whose expected censored fraction is ``p_target``.

    Minimises the squared deviation over log-rate inside a bracket found by
    stepping outwards from rate one.  Returns None for ``p_target == 0``.
    """
    if p_target == 0:
        return None
    if not 0 < p_target < 1:
        raise DomainError("target censoring proportion must lie in [0, 1)")

    def frac(log_eta):
        return censored_fraction(np.exp(log_eta), spec, theta, covariates)

    def J(log_eta):
        return (frac(log_eta) - p_target) ** 2

    # the censored fraction increases with the rate: walk outwards to bracket
    lo = hi = 0.0
    f0 = frac(0.0)
    for _ in range(40):
        if f0 < p_target:
            lo, hi = hi, hi + 2.0
            if frac(hi) >= p_target:
                break
        else:
            lo, hi = lo - 2.0, lo
            if frac(lo) < p_target:
                break
    else:
        raise DomainError("could not bracket the censoring rate")
    res = optimize.minimize_scalar(J, bounds=(lo, hi), method="bounded",
                                   options={"xatol": 1e-12, "maxiter": 500})
    return float(np.exp(res.x))


@dataclass(frozen=True)
class SimulationDesign:
    mean_time: float
    c: float
    eta: float | None


def prepare_design(scenario: Scenario) -> SimulationDesign:
    rng = np.random.default_rng([scenario.seed, 2**31 - 1])
    cov = draw_covariates(scenario.covariates, rng, N_CALIBRATION_DRAWS)
    et = mean_survival(scenario.truth_spec, scenario.truth, cov)
    eta = calibrate_censoring(scenario.p, scenario.truth_spec, scenario.truth, cov)
    return SimulationDesign(et, 1.5 * scenario.d * et, eta)


def simulate_dataset(scenario: Scenario, replicate: int = 0) -> Dataset:
    """Draw one dataset; the stream depends only on (seed, replicate)."""
    rng = np.random.default_rng([scenario.seed, replicate])
    design = scenario.design
    n = scenario.n
    cov = draw_covariates(scenario.covariates, rng, n)
    p = evaluate_parameters(scenario.truth_spec, scenario.truth, cov)
    u = draw_frailty(p.phi, rng) if scenario.truth_spec.model_type.frailty else np.ones(n)
    T = draw_survival_time(p, u, rng, size=n)
    a, b = make_interval(T, design.c, rng)
    if design.eta is not None:
        C = rng.exponential(1.0 / design.eta, n)
        cens = C < T
        a = np.where(cens, C, a)
        b = np.where(cens, np.inf, b)
    meta = {"scenario": scenario.to_dict(), "replicate": replicate,
            "c": design.c, "eta": design.eta}
    return Dataset(a, b, cov, scenario.column_names, meta=meta)


@dataclass
class StudySummary:
    table: pd.DataFrame
    n_replicates: int
    n_converged: int
    censored_fraction: float
    design: SimulationDesign
    estimates: np.ndarray = field(repr=False, default=None)

    @property
    def convergence_rate(self) -> float:
        return self.n_converged / self.n_replicates

    def to_dict(self) -> dict:
        return {
            "n_replicates": self.n_replicates,
            "n_converged": self.n_converged,
            "convergence_rate": self.convergence_rate,
            "censored_fraction": self.censored_fraction,
            "mean_time": self.design.mean_time,
            "c": self.design.c,
            "eta": self.design.eta,
            "coefficients": json.loads(self.table.reset_index().to_json(orient="records")),
        }


def _run_one(args):
    scenario, fit_spec, opts, rep = args
    ds = simulate_dataset(scenario, rep)
    cens = float(np.mean(ds.right_censored))
    try:
        res = fit(fit_spec, ds, opts)
    except Exception as exc:  # a replicate failure is recorded, never fatal
        log.warning("replicate %d failed: %s", rep, exc)
        return rep, None, None, False, cens
    return rep, res.theta_hat.pack(), res.se, res.converged, cens


def run_study(scenario: Scenario, fit_spec: ModelSpec | None = None,
              opts: FitOptions | None = None, n_jobs: int = 1) -> StudySummary:
    """Fit every replicate and summarise estimates against the truth.

    The summary has one row per coefficient (plus ``phi`` for the frailty
    intercept on the variance scale): truth, median estimate, empirical SE,
    mean model-based SE and average percent bias, over converged replicates.
    """
    fit_spec = fit_spec or scenario.truth_spec
    opts = opts or FitOptions()
    scenario.design  # calibrate once before fanning out
    jobs = [(scenario, fit_spec, opts, r) for r in range(scenario.replicates)]
    if n_jobs == 1:
        results = [_run_one(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=n_jobs) as ex:
            results = list(ex.map(_run_one, jobs, chunksize=4))
    results.sort(key=lambda r: r[0])

    ok = [r for r in results if r[3]]
    cens = float(np.mean([r[4] for r in results]))
    names = fit_spec.param_names(scenario.column_names)
    truth = _truth_for(fit_spec, scenario)
    est = np.array([r[1] for r in ok]).reshape(len(ok), len(names))
    se = np.array([r[2] for r in ok]).reshape(len(ok), len(names))
    rows = list(names)
    if fit_spec.model_type.frailty:
        j = names.index("disp:(intercept)")
        rows.append("phi")
        est = np.column_stack([est, np.exp(est[:, j])])
        se = np.column_stack([se, np.exp(est[:, j]) * se[:, j]])
        truth = np.append(truth, np.exp(truth[j]))
    with np.errstate(divide="ignore", invalid="ignore"):
        bias = 100.0 * (est - truth) / truth
        table = pd.DataFrame({
            "truth": truth,
            "median": np.median(est, axis=0) if len(ok) else np.nan,
            "emp_se": est.std(axis=0, ddof=1) if len(ok) > 1 else np.nan,
            "mean_model_se": np.nanmean(se, axis=0) if len(ok) else np.nan,
            "pct_bias": np.where(truth != 0, bias.mean(axis=0), np.nan) if len(ok) else np.nan,
        }, index=pd.Index(rows, name="parameter"))
    return StudySummary(table, len(results), len(ok), cens, scenario.design, est)


def _truth_for(fit_spec: ModelSpec, scenario: Scenario) -> np.ndarray:
    """Truth in the fitted layout; coefficients absent from the truth are zero."""
    tspec, tth = scenario.truth_spec, scenario.truth
    out = []
    for comp, tblock in (("scale", tth.beta), ("shape", tth.alpha), ("disp", tth.psi)):
        if comp == "disp" and not fit_spec.model_type.frailty:
            continue
        tidx = tspec.index_set(comp)
        if tblock is None:
            tblock = np.array([-np.inf])  # fitted frailty where the truth has none
        out.append(tblock[0])
        for i in fit_spec.index_set(comp):
            out.append(tblock[1 + tidx.index(i)] if i in tidx else 0.0)
    return np.array(out, dtype=float)
