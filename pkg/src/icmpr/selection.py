"""Information criteria, the model-type by covariate-structure grid, and stepwise selection."""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .data import Dataset
from .estimator import FitOptions, FitResult, fit
from .model import ModelSpec, ModelType, Theta

log = logging.getLogger(__name__)

COMPONENT_ORDER = ("scale", "shape", "disp")


def information_criteria(loglik: float, k: int, n: int) -> tuple[float, float]:
    """AIC and BIC; ``n`` is the number of subjects."""
    if n < 1 or k < 0:
        raise ValueError("need n >= 1 and k >= 0")
    return -2.0 * loglik + 2.0 * k, -2.0 * loglik + k * np.log(n)


def _structure_triple(structure):
    """Accept a single index set (used for every component) or a (scale, shape, disp) triple."""
    if len(structure) == 3 and all(isinstance(s, (tuple, list)) for s in structure):
        return tuple(tuple(s) for s in structure)
    s = tuple(structure)
    return s, s, s


@dataclass
class ModelGridResult:
    table: pd.DataFrame
    type_means: pd.DataFrame
    fits: dict = field(repr=False, default_factory=dict)

    def best(self, criterion="AIC") -> str:
        return str(self.table[criterion].idxmin())


def fit_model_grid(data: Dataset, structures, types=tuple(ModelType), opts: FitOptions | None = None,
                   labels=None) -> ModelGridResult:
    """Fit every (type, structure) combination and tabulate the criteria.

    ``structures`` is a list of covariate index sets, or of
    (scale, shape, disp) triples; sets a type does not allow are dropped.
    Non-converged fits stay in the table, flagged, and are excluded from the
    minima used for dAIC/dBIC.
    """
    labels = labels or [_roman(i + 1) for i in range(len(structures))]
    rows, fits = [], {}
    for mt in types:
        mt = ModelType(mt)
        for label, structure in zip(labels, structures):
            sc, sh, dp = _structure_triple(structure)
            spec = ModelSpec.coerce(mt, sc, sh, dp)
            name = f"{mt.value}({label})"
            try:
                res = fit(spec, data, opts)
            except Exception as exc:
                log.warning("%s failed: %s", name, exc)
                rows.append({"model": name, "type": mt.value, "structure": label,
                             "covariates": spec.describe(data.column_names), "loglik": np.nan,
                             "k": spec.n_params, "AIC": np.nan, "BIC": np.nan, "converged": False})
                continue
            fits[name] = res
            aic, bic = information_criteria(res.loglik, spec.n_params, data.n)
            rows.append({"model": name, "type": mt.value, "structure": label,
                         "covariates": spec.describe(data.column_names), "loglik": res.loglik,
                         "k": spec.n_params, "AIC": aic, "BIC": bic, "converged": res.converged})
    table = pd.DataFrame(rows).set_index("model")
    ok = table["converged"]
    for crit in ("AIC", "BIC"):
        table["d" + crit] = table[crit] - table.loc[ok, crit].min()
    means = table.groupby("type", sort=False)[["AIC", "BIC", "dAIC", "dBIC"]].mean()
    return ModelGridResult(table, means, fits)


def _roman(i):
    return {1: "I", 2: "II", 3: "III", 4: "IV", 5: "V", 6: "VI", 7: "VII", 8: "VIII"}.get(i, str(i))


@dataclass
class Move:
    action: str  # "add" or "drop"
    covariate: int
    components: tuple[str, ...]
    spec: ModelSpec
    criterion: float
    k: int

    def describe(self, column_names=None):
        name = column_names[self.covariate] if column_names else str(self.covariate)
        return f"{self.action} {name} {'+'.join(self.components)}"


def candidate_moves(spec: ModelSpec, candidates):
    """All single- and multi-component add/drop moves for each candidate covariate.

    A multi-component move is only offered when the covariate is uniformly
    present (drop) or absent (add) in every component involved.
    """
    comps = spec.model_type.components
    for c in candidates:
        for r in range(1, len(comps) + 1):
            for subset in itertools.combinations(comps, r):
                present = [c in spec.index_set(comp) for comp in subset]
                if all(present):
                    action = "drop"
                elif not any(present):
                    action = "add"
                else:
                    continue
                new = spec
                for comp in subset:
                    idx = set(new.index_set(comp))
                    idx = idx - {c} if action == "drop" else idx | {c}
                    new = new.with_index_set(comp, idx)
                yield action, c, subset, new


def _warm_start(parent: FitResult, spec: ModelSpec) -> Theta:
    """Map parent estimates onto a neighbouring spec; new coefficients start at zero."""
    old = parent.spec
    blocks = []
    for comp, vals in (("scale", parent.theta_hat.beta), ("shape", parent.theta_hat.alpha),
                       ("disp", parent.theta_hat.psi)):
        if comp == "disp" and not spec.model_type.frailty:
            continue
        oidx = old.index_set(comp)
        new = [vals[0]] + [vals[1 + oidx.index(i)] if i in oidx else 0.0 for i in spec.index_set(comp)]
        blocks.append(np.array(new))
    return Theta(*blocks)


def stepwise(spec_start: ModelSpec, data: Dataset, candidates, criterion="BIC",
             opts: FitOptions | None = None, max_rounds: int = 50):
    """Greedy add/drop search minimising AIC or BIC.

    Returns the final fit and the list of accepted moves.  Ties go to the
    move with fewer parameters, then to the earlier component in
    scale < shape < dispersion order.
    """
    criterion = criterion.upper()
    col = 0 if criterion == "AIC" else 1
    cache: dict[ModelSpec, FitResult | None] = {}

    def score_of(res):
        return information_criteria(res.loglik, res.spec.n_params, data.n)[col]

    current = fit(spec_start, data, opts)
    cache[spec_start] = current
    trace: list[Move] = []
    for _ in range(max_rounds):
        best = None
        best_key = None
        for action, c, subset, new in candidate_moves(current.spec, candidates):
            if new not in cache:
                try:
                    res = fit(new, data, opts, theta0=_warm_start(current, new))
                    cache[new] = res if res.converged else None
                except Exception as exc:
                    log.info("move %s %s %s skipped: %s", action, c, subset, exc)
                    cache[new] = None
                if cache[new] is None:
                    log.info("move %s %s %s skipped: no convergence", action, c, subset)
            res = cache[new]
            if res is None:
                continue
            crit = score_of(res)
            key = (crit, new.n_params, tuple(COMPONENT_ORDER.index(s) for s in subset))
            if best_key is None or key < best_key:
                best_key = key
                best = Move(action, c, subset, new, crit, new.n_params)
        if best is None or best.criterion >= score_of(current):
            break
        trace.append(best)
        current = cache[best.spec]
    return current, trace
