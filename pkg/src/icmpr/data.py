"""Interval-censored dataset container."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DataError


@dataclass
class Dataset:
    """Censoring intervals ``(left, right]`` plus a covariate matrix.

    ``right == inf`` marks a right-censored subject.  Times are already
    offset-adjusted; see :func:`icmpr.io.load_csv` for ingestion.
    """

    left: np.ndarray
    right: np.ndarray
    covariates: np.ndarray | None = None
    column_names: list[str] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.left = np.asarray(self.left, dtype=float).ravel()
        self.right = np.asarray(self.right, dtype=float).ravel()
        n = self.left.size
        if self.covariates is None:
            self.covariates = np.zeros((n, 0))
        self.covariates = np.asarray(self.covariates, dtype=float)
        if self.covariates.ndim == 1:
            self.covariates = self.covariates[:, None]
        if not self.column_names:
            self.column_names = [f"x{j}" for j in range(self.covariates.shape[1])]
        self.column_names = list(self.column_names)
        self._validate()

    def _validate(self):
        n = self.left.size
        if self.right.size != n or self.covariates.shape[0] != n:
            raise DataError("left, right and covariates must have the same number of rows")
        if len(self.column_names) != self.covariates.shape[1]:
            raise DataError("column_names does not match the covariate matrix width")
        bad = np.flatnonzero(~np.isfinite(self.left) | (self.left < 0))
        if bad.size:
            raise DataError("left endpoint must be finite and >= 0", row=int(bad[0]), column="left")
        bad = np.flatnonzero(np.isnan(self.right) | ~(self.right > self.left))
        if bad.size:
            raise DataError("right endpoint must exceed left", row=int(bad[0]), column="right")
        bad = np.argwhere(~np.isfinite(self.covariates))
        if bad.size:
            i, j = bad[0]
            raise DataError("covariate value missing or not finite", row=int(i), column=self.column_names[j])

    @property
    def n(self) -> int:
        return self.left.size

    @property
    def right_censored(self) -> np.ndarray:
        return np.isinf(self.right)

    def column_index(self, name: str) -> int:
        try:
            return self.column_names.index(name)
        except ValueError:
            raise DataError(f"unknown covariate {name!r}") from None

    def indices(self, names: Sequence[str]) -> tuple[int, ...]:
        return tuple(self.column_index(nm) for nm in names)

    def subset(self, rows) -> "Dataset":
        return Dataset(self.left[rows], self.right[rows], self.covariates[rows], self.column_names)

    def permute_columns(self, order: Sequence[int]) -> "Dataset":
        order = list(order)
        return Dataset(self.left, self.right, self.covariates[:, order],
                       [self.column_names[j] for j in order])
