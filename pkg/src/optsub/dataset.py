"""Immutable column-typed data tables and their CSV representation."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .errors import ParseError, SchemaMismatch

DEFAULT_BLOCK = 8192


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Observation:
    """A single record ``(x, y)`` with an optional binomial trial count ``k``."""

    x: np.ndarray
    y: float
    k: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "x", np.atleast_1d(np.asarray(self.x, dtype=np.float64)))


@dataclass(frozen=True, eq=False)
class Dataset:
    """The full data: an ``n x d`` design, a response and optional trial counts.

    The design is used as given; no intercept column is ever added
    implicitly. Arrays are stored read-only.
    """

    X: np.ndarray
    y: np.ndarray
    k: np.ndarray | None = None
    names: tuple[str, ...] = ()
    rejected_rows: int = 0
    _row_norms: list = field(default_factory=list, repr=False, compare=False)

    def __post_init__(self):
        X = np.asarray(self.X, dtype=np.float64)
        if X.ndim == 1:
            X = X[:, None]
        y = np.asarray(self.y, dtype=np.float64).reshape(-1)
        if X.ndim != 2 or X.shape[0] != y.shape[0]:
            raise SchemaMismatch(f"design {X.shape} does not match response {y.shape}")
        if X.shape[0] < 1:
            raise SchemaMismatch("a dataset needs at least one row")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise SchemaMismatch("non-finite values in design or response")
        object.__setattr__(self, "X", _frozen(X))
        object.__setattr__(self, "y", _frozen(y))
        if self.k is not None:
            k = np.asarray(self.k, dtype=np.float64).reshape(-1)
            if k.shape != y.shape:
                raise SchemaMismatch("trial column length differs from response")
            if np.any(k <= 0) or np.any(k != np.round(k)):
                raise SchemaMismatch("trial counts must be positive integers")
            object.__setattr__(self, "k", _frozen(k))
        names = tuple(self.names) or tuple(f"x{j}" for j in range(X.shape[1]))
        if len(names) != X.shape[1]:
            raise SchemaMismatch("covariate name count differs from design width")
        object.__setattr__(self, "names", names)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def row(self, i: int) -> Observation:
        return Observation(self.X[i], float(self.y[i]), None if self.k is None else float(self.k[i]))

    def row_norms(self) -> np.ndarray:
        """Euclidean norms of the design rows (cached)."""
        if not self._row_norms:
            self._row_norms.append(_frozen(np.sqrt(np.einsum("ij,ij->i", self.X, self.X))))
        return self._row_norms[0]

    def blocks(self, size: int = DEFAULT_BLOCK) -> Iterator[tuple[int, np.ndarray, np.ndarray, np.ndarray | None]]:
        """Yield ``(start, X, y, k)`` views over consecutive row blocks."""
        for start in range(0, self.n, size):
            stop = min(start + size, self.n)
            k = None if self.k is None else self.k[start:stop]
            yield start, self.X[start:stop], self.y[start:stop], k

    def take(self, indices: Sequence[int] | np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray | None]:
        idx = np.asarray(indices, dtype=np.intp)
        return self.X[idx], self.y[idx], None if self.k is None else self.k[idx]

    def equals(self, other: "Dataset") -> bool:
        same_k = (self.k is None and other.k is None) or (
            self.k is not None and other.k is not None and np.array_equal(self.k, other.k)
        )
        return (
            self.names == other.names
            and np.array_equal(self.X, other.X)
            and np.array_equal(self.y, other.y)
            and same_k
        )


@dataclass(frozen=True)
class CsvSchema:
    """Column roles for :func:`load_csv`.

    Attributes:
        response: Name of the response column.
        covariates: Covariate column names, in design order. ``None`` means
            every column that is neither the response nor the trial column.
        trials: Optional binomial trial-count column.
        add_intercept: Prepend a column of ones. Off unless asked for.
        strict: Raise on the first malformed row instead of skipping it.
    """

    response: str = "y"
    covariates: tuple[str, ...] | None = None
    trials: str | None = None
    add_intercept: bool = False
    strict: bool = True


def load_csv(path: str | Path, schema: CsvSchema = CsvSchema()) -> Dataset:
    """Read a headed CSV file into a :class:`Dataset`.

    In non-strict mode malformed rows are skipped and counted in
    ``Dataset.rejected_rows``.

    Raises:
        ParseError: a row cannot be parsed (strict mode), with its line number.
        SchemaMismatch: named columns are missing from the header.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ParseError("empty file", line=1) from None
        col = {name: j for j, name in enumerate(header)}
        if len(col) != len(header):
            raise SchemaMismatch("duplicate column names in header")
        if schema.response not in col:
            raise SchemaMismatch(f"response column {schema.response!r} not in header")
        if schema.trials is not None and schema.trials not in col:
            raise SchemaMismatch(f"trial column {schema.trials!r} not in header")
        if schema.covariates is None:
            skip = {schema.response, schema.trials}
            covs = [h for h in header if h not in skip]
        else:
            covs = list(schema.covariates)
            missing = [c for c in covs if c not in col]
            if missing:
                raise SchemaMismatch(f"covariate columns not in header: {missing}")
        if not covs and not schema.add_intercept:
            raise SchemaMismatch("no covariate columns")
        xcols = [col[c] for c in covs]
        ycol = col[schema.response]
        kcol = None if schema.trials is None else col[schema.trials]

        xs, ys, ks = [], [], []
        rejected = 0
        for lineno, rec in enumerate(reader, start=2):
            if not rec or all(not f.strip() for f in rec):
                continue
            try:
                if len(rec) != len(header):
                    raise ValueError(f"expected {len(header)} fields, got {len(rec)}")
                x = [float(rec[j]) for j in xcols]
                y = float(rec[ycol])
                k = float(rec[kcol]) if kcol is not None else None
                if not all(np.isfinite(x)) or not np.isfinite(y) or (k is not None and not np.isfinite(k)):
                    raise ValueError("non-finite value")
            except ValueError as exc:
                if schema.strict:
                    raise ParseError(str(exc), line=lineno) from None
                rejected += 1
                continue
            xs.append(x)
            ys.append(y)
            ks.append(k)

    if not ys:
        raise ParseError("no data rows", line=None)
    X = np.array(xs, dtype=np.float64).reshape(len(ys), len(covs))
    names = tuple(covs)
    if schema.add_intercept:
        X = np.hstack([np.ones((X.shape[0], 1)), X])
        names = ("intercept",) + names
    k = np.array(ks, dtype=np.float64) if kcol is not None else None
    return Dataset(X, np.array(ys), k, names=names, rejected_rows=rejected)


def write_csv(data: Dataset, path: str | Path, response: str = "y", trials: str = "k") -> None:
    """Write ``data`` so that :func:`load_csv` restores it exactly."""
    header = list(data.names) + [response] + ([trials] if data.k is not None else [])
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(data.n):
            row = [repr(float(v)) for v in data.X[i]] + [repr(float(data.y[i]))]
            if data.k is not None:
                row.append(repr(float(data.k[i])))
            w.writerow(row)

