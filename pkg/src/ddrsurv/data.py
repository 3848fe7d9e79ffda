"""Observational records for left-truncated right-censored (LTRC) data.

A :class:`Dataset` stores its columns as read-only numpy arrays; individual
rows are materialised on demand as :class:`SubjectRecord` objects.
"""

from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Mapping, Sequence

import numpy as np

from .exceptions import ParseError, SchemaError, ValidationError

__all__ = [
    "SubjectRecord",
    "Dataset",
    "complete_case_indicator",
    "load_csv",
    "write_csv",
    "split_k",
]


def complete_case_indicator(t_obs, delta, tau):
    """Return the LTRC complete-case indicator ``delta_tau``.

    A record is a complete case when its event was observed at or after the
    truncation time: ``delta_tau = delta * 1{t_obs >= tau}``. With ``tau = 0``
    this reduces to the plain event indicator.
    """
    t_obs = np.asarray(t_obs, dtype=float)
    delta = np.asarray(delta, dtype=float)
    tau = np.asarray(tau, dtype=float)
    return ((delta == 1) & (t_obs >= tau)).astype(float)


@dataclass(frozen=True)
class SubjectRecord:
    """One observational unit."""

    x: np.ndarray
    z: np.ndarray
    r: np.ndarray
    a: int
    t_obs: float
    delta: int
    tau: float
    delta_tau: int


def _readonly(arr, dtype=float, ndim=1):
    arr = np.array(arr, dtype=dtype, copy=True)
    if ndim == 2 and arr.ndim == 1:
        arr = arr.reshape(-1, 1) if arr.size else arr.reshape(0, 0)
    arr.setflags(write=False)
    return arr


class Dataset:
    """Immutable column store of LTRC records.

    Parameters
    ----------
    x, z, r : array_like, shape (n, p), (n, q), (n, s)
        Survival, treatment-assignment and censoring covariates. ``r`` defaults
        to ``x`` when omitted.
    a : array_like of {0, 1}
        Treatment indicator.
    t_obs : array_like
        Observed time ``min(T, C)``.
    delta : array_like of {0, 1}
        Event indicator (1 = event observed).
    tau : float or array_like, default 0
        Truncation (study entry) time, per record.
    """

    def __init__(self, x, z, a, t_obs, delta, tau=0.0, r=None):
        t_obs = np.asarray(t_obs, dtype=float).reshape(-1)
        n = t_obs.shape[0]
        x = np.asarray(x, dtype=float).reshape(n, -1)
        z = np.asarray(z, dtype=float).reshape(n, -1)
        r_alias = r is None
        r = x if r is None else np.asarray(r, dtype=float).reshape(n, -1)
        a = np.asarray(a, dtype=float).reshape(-1)
        delta = np.asarray(delta, dtype=float).reshape(-1)
        tau = np.broadcast_to(np.asarray(tau, dtype=float), (n,))

        for name, col in (("treat", a), ("event", delta)):
            if col.shape[0] != n:
                raise ValidationError(f"column {name!r} has length {col.shape[0]}, expected {n}")
            if not np.all((col == 0) | (col == 1)):
                raise ValidationError(f"column {name!r} must be 0/1")
        for name, col in (("x", x), ("z", z), ("r", r)):
            if not np.all(np.isfinite(col)):
                raise ValidationError(f"covariates {name!r} contain non-finite values")
        if not np.all(np.isfinite(t_obs)) or np.any(t_obs < 0):
            raise ValidationError("observed times must be finite and nonnegative")
        if not np.all(np.isfinite(tau)) or np.any(tau < 0):
            raise ValidationError("truncation times must be finite and nonnegative")

        self.x = _readonly(x, ndim=2)
        self.z = _readonly(z, ndim=2)
        self.r = self.x if r_alias else _readonly(r, ndim=2)
        self.r_is_x = r_alias
        self.a = _readonly(a)
        self.t_obs = _readonly(t_obs)
        self.delta = _readonly(delta)
        self.tau = _readonly(tau)
        self.delta_tau = _readonly(complete_case_indicator(t_obs, delta, tau))

    @property
    def n(self):
        return self.t_obs.shape[0]

    @property
    def p(self):
        return self.x.shape[1]

    @property
    def q(self):
        return self.z.shape[1]

    @property
    def s(self):
        return self.r.shape[1]

    def __len__(self):
        return self.n

    def __getitem__(self, i) -> SubjectRecord:
        return SubjectRecord(
            x=self.x[i], z=self.z[i], r=self.r[i], a=int(self.a[i]),
            t_obs=float(self.t_obs[i]), delta=int(self.delta[i]),
            tau=float(self.tau[i]), delta_tau=int(self.delta_tau[i]),
        )

    def __iter__(self) -> Iterator[SubjectRecord]:
        return (self[i] for i in range(self.n))

    @property
    def records(self):
        return list(self)

    def subset(self, idx) -> "Dataset":
        """Rows ``idx`` (index array or boolean mask) as a new dataset."""
        idx = np.asarray(idx)
        return Dataset(
            x=self.x[idx], z=self.z[idx], a=self.a[idx], t_obs=self.t_obs[idx],
            delta=self.delta[idx], tau=self.tau[idx],
            r=None if self.r_is_x else self.r[idx],
        )

    def with_columns(self, **changes) -> "Dataset":
        cols = dict(x=self.x, z=self.z, a=self.a, t_obs=self.t_obs, delta=self.delta,
                    tau=self.tau, r=None if self.r_is_x else self.r)
        cols.update(changes)
        return Dataset(**cols)

    @classmethod
    def from_records(cls, records: Sequence[SubjectRecord]) -> "Dataset":
        if not records:
            raise ValidationError("no records")
        return cls(
            x=np.stack([rec.x for rec in records]),
            z=np.stack([rec.z for rec in records]),
            r=np.stack([rec.r for rec in records]),
            a=[rec.a for rec in records],
            t_obs=[rec.t_obs for rec in records],
            delta=[rec.delta for rec in records],
            tau=[rec.tau for rec in records],
        )

    def content_hash(self) -> str:
        """SHA-256 over all numeric columns; stable across runs and platforms."""
        h = hashlib.sha256()
        for col in (self.t_obs, self.delta, self.a, self.tau, self.x, self.z, self.r):
            h.update(np.ascontiguousarray(col, dtype="<f8").tobytes())
            h.update(repr(col.shape).encode())
        return h.hexdigest()

    def __repr__(self):
        return (f"Dataset(n={self.n}, p={self.p}, q={self.q}, s={self.s}, "
                f"events={int(self.delta.sum())}, treated={int(self.a.sum())})")


# -- CSV interchange ---------------------------------------------------------

DEFAULT_SCHEMA = {"time": "time", "event": "event", "treat": "treat", "tau": "tau"}


def _prefixed(header, prefix):
    cols = []
    k = 1
    while f"{prefix}{k}" in header:
        cols.append(f"{prefix}{k}")
        k += 1
    return cols


def load_csv(path, schema: Mapping | None = None) -> Dataset:
    """Read a dataset from a CSV file with a header row.

    Parameters
    ----------
    path : path-like
    schema : mapping, optional
        Maps the logical names ``time``, ``event``, ``treat`` and (optionally)
        ``tau`` to column names, and ``x``, ``z``, ``r`` to lists of column
        names. Unspecified covariate groups are discovered as ``x1..xp``,
        ``z1..zq``, ``r1..rs``; when no ``r`` columns exist, ``r`` aliases ``x``.

    Raises
    ------
    SchemaError
        A required column is absent; the message names it.
    ParseError
        A cell is not numeric; ``.row`` holds the 0-based data row index.
    ValidationError
        Negative times or non-binary indicators.
    """
    schema = {**DEFAULT_SCHEMA, **(schema or {})}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        rows = [row for row in reader if row]

    index = {name: j for j, name in enumerate(header)}
    for key in ("time", "event", "treat"):
        if schema[key] not in index:
            raise SchemaError(f"missing required column {schema[key]!r}")
    groups = {}
    for g in ("x", "z", "r"):
        cols = schema.get(g)
        cols = _prefixed(index, g) if cols is None else list(cols)
        for c in cols:
            if c not in index:
                raise SchemaError(f"missing covariate column {c!r}")
        groups[g] = cols

    n = len(rows)
    data = np.empty((n, len(header)))
    for i, row in enumerate(rows):
        if len(row) != len(header):
            raise ParseError(f"row {i}: expected {len(header)} fields, got {len(row)}", row=i)
        for j, cell in enumerate(row):
            try:
                data[i, j] = float(cell)
            except ValueError:
                raise ParseError(
                    f"row {i}, column {header[j]!r}: non-numeric value {cell!r}", row=i
                ) from None
            if math.isnan(data[i, j]):
                raise ParseError(f"row {i}, column {header[j]!r}: NaN", row=i)

    def col(name):
        return data[:, index[name]]

    t_obs = col(schema["time"])
    bad = np.flatnonzero(t_obs < 0)
    if bad.size:
        raise ValidationError(f"row {bad[0]}: negative observed time {t_obs[bad[0]]}")
    tau = col(schema["tau"]) if schema["tau"] in index else 0.0

    def block(g):
        cols = groups[g]
        return data[:, [index[c] for c in cols]] if cols else np.empty((n, 0))

    return Dataset(
        x=block("x"), z=block("z"), a=col(schema["treat"]), t_obs=t_obs,
        delta=col(schema["event"]), tau=tau, r=block("r") if groups["r"] else None,
    )


def _fmt(v):
    return f"{v:.12g}"


def write_csv(dataset: Dataset, path) -> Path:
    """Write ``dataset`` in the canonical column layout (12 significant digits)."""
    path = Path(path)
    header = ["time", "event", "treat", "tau"]
    header += [f"x{k + 1}" for k in range(dataset.p)]
    header += [f"z{k + 1}" for k in range(dataset.q)]
    if not dataset.r_is_x:
        header += [f"r{k + 1}" for k in range(dataset.s)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(dataset.n):
            row = [dataset.t_obs[i], int(dataset.delta[i]), int(dataset.a[i]), dataset.tau[i]]
            row += list(dataset.x[i]) + list(dataset.z[i])
            if not dataset.r_is_x:
                row += list(dataset.r[i])
            w.writerow([v if isinstance(v, int) else _fmt(v) for v in row])
    return path


def split_k(dataset: Dataset, k: int, seed: int) -> list[Dataset]:
    """Randomly partition ``dataset`` into ``k`` folds whose sizes differ by at most one."""
    return [dataset.subset(idx) for idx in split_indices(dataset.n, k, seed)]


def split_indices(n: int, k: int, seed: int) -> list[np.ndarray]:
    if k < 1:
        raise ValueError("k must be positive")
    if k > n:
        raise ValueError(f"cannot split {n} records into {k} folds")
    perm = np.random.default_rng(seed).permutation(n)
    return [np.sort(part) for part in np.array_split(perm, k)]
