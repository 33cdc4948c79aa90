"""Dataset ingestion and report/curve-data emission.

CSV data files carry ``left`` and ``right`` columns (``right`` blank, ``Inf``
or ``NA`` for right censoring); every other column is a numeric covariate.
Covariate lists may name interactions as ``a:b``; these become product
columns at load time.
"""

from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .data import Dataset
from .errors import DataError, SpecError
from .estimator import FitResult, wald_tests
from .model import ModelSpec, Theta

SCHEMA = "icmpr.fit/1"
_CENSORED_TOKENS = {"", "inf", "+inf", "infinity", "na", "nan"}


def _parse_float(text, row, column):
    try:
        return float(text)
    except ValueError:
        raise DataError(f"cannot parse {text!r} as a number", row=row, column=column) from None


def load_csv(path, time_offset: float = 0.0, clamp_left: bool = False) -> Dataset:
    """Read an interval-censored CSV file.

    ``time_offset`` is subtracted from both endpoints.  With ``clamp_left``
    negative left endpoints after the offset are set to zero, otherwise they
    are an error.  Row numbers in errors count data rows from 1.
    """
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise DataError(f"cannot open data file: {exc}") from None
    with fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError("empty data file") from None
        for req in ("left", "right"):
            if req not in header:
                raise DataError(f"missing required column {req!r}")
        il, ir = header.index("left"), header.index("right")
        cov_cols = [j for j, h in enumerate(header) if j not in (il, ir)]
        left, right, cov = [], [], []
        for r, rec in enumerate(reader, start=1):
            if not rec or all(not c.strip() for c in rec):
                continue
            if len(rec) != len(header):
                raise DataError(f"expected {len(header)} fields, got {len(rec)}", row=r)
            a = _parse_float(rec[il].strip(), r, "left") - time_offset
            rb = rec[ir].strip()
            b = np.inf if rb.lower() in _CENSORED_TOKENS else _parse_float(rb, r, "right") - time_offset
            if a < 0:
                if not clamp_left:
                    raise DataError(f"left endpoint {a} < 0 after offset", row=r, column="left")
                a = 0.0
            if not b > a:
                raise DataError("right endpoint must exceed left", row=r, column="right")
            row = []
            for j in cov_cols:
                val = rec[j].strip()
                if val.lower() in ("", "na", "nan"):
                    raise DataError("missing covariate value", row=r, column=header[j])
                row.append(_parse_float(val, r, header[j]))
            left.append(a)
            right.append(b)
            cov.append(row)
    if not left:
        raise DataError("data file has no rows")
    names = [header[j] for j in cov_cols]
    return Dataset(np.array(left), np.array(right), np.array(cov).reshape(len(left), len(names)), names,
                   meta={"time_offset": time_offset, "source": str(path)})


def with_terms(data: Dataset, terms: Iterable[str]) -> Dataset:
    """Add product columns for any ``a:b`` interaction terms not already present."""
    cov = data.covariates
    names = list(data.column_names)
    extra = []
    for term in terms:
        if term in names or term in [n for n, _ in extra]:
            continue
        if ":" not in term:
            raise SpecError(f"unknown covariate {term!r}")
        parts = term.split(":")
        for p in parts:
            if p not in names:
                raise SpecError(f"unknown covariate {p!r} in interaction {term!r}")
        extra.append((term, np.prod([cov[:, names.index(p)] for p in parts], axis=0)))
    if not extra:
        return data
    cov = np.column_stack([cov] + [v for _, v in extra])
    return Dataset(data.left, data.right, cov, names + [n for n, _ in extra], meta=data.meta)


def parse_terms(text: str | None) -> list[str]:
    if not text:
        return []
    return [t.strip() for t in text.split(",") if t.strip()]


def resolve_spec(data: Dataset, model_type, scale=(), shape=(), disp=(), time_offset=0.0):
    """Expand interaction terms and map covariate names to a :class:`ModelSpec`."""
    data = with_terms(data, [*scale, *shape, *disp])

    def idx(names):
        out = []
        for nm in names:
            if nm not in data.column_names:
                raise SpecError(f"unknown covariate {nm!r}")
            out.append(data.column_names.index(nm))
        return tuple(out)

    spec = ModelSpec(model_type, idx(scale), idx(shape), idx(disp), time_offset)
    return data, spec


def atomic_write(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        os.unlink(tmp)
        raise


def format_csv(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    """CSV text with floats at six significant digits; booleans as 0/1."""

    def cell(v):
        if isinstance(v, (bool, np.bool_)):
            return "1" if v else "0"
        if isinstance(v, (float, np.floating)):
            return "%.6g" % v
        return v

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows([cell(v) for v in row] for row in rows)
    return buf.getvalue()


def _jsonable(v):
    if isinstance(v, float) and not np.isfinite(v):
        return None
    return v


@dataclass
class ReportBundle:
    """Serializable summary of a fit: coefficients, criteria, covariance."""

    model_type: str
    scale: list[str]
    shape: list[str]
    disp: list[str]
    time_offset: float
    column_names: list[str]
    theta: list[float]
    covariance: list[list[float]] | None
    coefficients: list[dict]
    loglik: float
    k: int
    n: int
    aic: float
    bic: float
    converged: bool
    iterations: int
    grad_norm: float
    schema: str = SCHEMA
    extra: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True, allow_nan=True)

    @classmethod
    def from_json(cls, text: str) -> "ReportBundle":
        d = json.loads(text)
        if d.get("schema") != SCHEMA:
            raise DataError(f"unsupported bundle schema {d.get('schema')!r}")
        return cls(**d)

    def spec(self) -> ModelSpec:
        names = self.column_names
        return ModelSpec(self.model_type, tuple(names.index(n) for n in self.scale),
                         tuple(names.index(n) for n in self.shape),
                         tuple(names.index(n) for n in self.disp), self.time_offset)

    def to_fit(self) -> FitResult:
        spec = self.spec()
        cov = None if self.covariance is None else np.array(self.covariance, dtype=float)
        res = FitResult.from_coefficients(spec, Theta.unpack(spec, self.theta), self.column_names,
                                          cov, self.n)
        res.loglik = self.loglik
        res.converged = self.converged
        res.iterations = self.iterations
        res.grad_norm = self.grad_norm
        return res

    def coefficient_rows(self):
        keys = ["parameter", "estimate", "se", "z", "p", "significant"]
        return keys, [[c[k] if c[k] is not None else float("nan") for k in keys] for c in self.coefficients]


def bundle_from_fit(res: FitResult) -> ReportBundle:
    spec = res.spec
    names = res.column_names
    if res.covariance_valid:
        tbl = wald_tests(res)
        coefs = [{"parameter": p, "estimate": float(r.estimate), "se": float(r.se), "z": float(r.z),
                  "p": float(r.p), "significant": bool(r.significant and not p.endswith("(intercept)"))}
                 for p, r in tbl.iterrows()]
        cov = res.covariance.tolist()
    else:
        coefs = [{"parameter": p, "estimate": float(v), "se": None, "z": None, "p": None,
                  "significant": False} for p, v in zip(res.param_names, res.theta_hat.pack())]
        cov = None
    return ReportBundle(
        model_type=spec.model_type.value,
        scale=[names[i] for i in spec.scale_idx],
        shape=[names[i] for i in spec.shape_idx],
        disp=[names[i] for i in spec.disp_idx],
        time_offset=spec.time_offset,
        column_names=list(names),
        theta=res.theta_hat.pack().tolist(),
        covariance=cov,
        coefficients=coefs,
        loglik=float(res.loglik),
        k=spec.n_params,
        n=res.n_obs,
        aic=float(res.aic),
        bic=float(res.bic),
        converged=bool(res.converged),
        iterations=int(res.iterations),
        grad_norm=float(res.grad_norm),
    )


def parse_groups(text: str) -> dict[str, dict[str, float]]:
    """``"boy0=sex:0,dmf:0;girl1=sex:1,dmf:1"`` -> ``{"boy0": {"sex": 0, "dmf": 0}, ...}``."""
    groups = {}
    for chunk in text.split(";"):
        chunk = chunk.strip()
        if not chunk:
            continue
        if "=" not in chunk:
            raise SpecError(f"group definition {chunk!r} needs name=assignments")
        name, assigns = chunk.split("=", 1)
        vals = {}
        for a in assigns.split(","):
            a = a.strip()
            if not a:
                continue
            key, _, val = a.rpartition(":")
            if not key:
                raise SpecError(f"assignment {a!r} must look like covariate:value")
            try:
                vals[key.strip()] = float(val)
            except ValueError:
                raise SpecError(f"non-numeric value in {a!r}") from None
        groups[name.strip()] = vals
    if not groups:
        raise SpecError("no groups defined")
    return groups


def group_row(column_names: Sequence[str], assignment: dict[str, float], used: Iterable[int]) -> np.ndarray:
    """Covariate row for a group; interaction columns are products of their parts."""
    row = np.zeros(len(column_names))
    used = set(used)
    for j, name in enumerate(column_names):
        if name in assignment:
            row[j] = assignment[name]
        elif ":" in name and all(p in assignment for p in name.split(":")):
            row[j] = np.prod([assignment[p] for p in name.split(":")])
        elif j in used:
            raise SpecError(f"group assignment does not determine covariate {name!r}")
    return row


def parse_grid(text: str) -> np.ndarray:
    """``start:stop:num`` -> ``linspace``; the start must be positive (hazards need t > 0)."""
    try:
        start, stop, num = text.split(":")
        grid = np.linspace(float(start), float(stop), int(num))
    except ValueError:
        raise SpecError(f"grid {text!r} must look like start:stop:num") from None
    if grid.size == 0 or grid[0] <= 0:
        raise SpecError("grid must be non-empty with positive times")
    return grid
