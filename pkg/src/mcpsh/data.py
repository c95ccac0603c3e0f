"""Clustered competing-risks data model.

Status codes are 0 (censored), 1 (event of interest) and 2 (competing
event).  A :class:`Dataset` keeps its records as read-only numpy arrays,
sorted by center and, within a center, stably by ``(time, status)``.
"""

from __future__ import annotations

import csv
import enum
import re
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError, DimensionMismatch, NonPositiveTime, UnknownStatusCode

CENSORED, CAUSE1, CAUSE2 = 0, 1, 2


class ModelKind(str, enum.Enum):
    """Which likelihood is assembled and which censoring scope is used."""

    POOLED = "pooled"
    STRATIFIED_REGULAR = "stratified-regular"
    STRATIFIED_HIGH = "stratified-high"
    MARGINAL = "marginal"

    @property
    def stratified(self) -> bool:
        return self in (ModelKind.STRATIFIED_REGULAR, ModelKind.STRATIFIED_HIGH)

    @property
    def per_stratum_censoring(self) -> bool:
        return self is ModelKind.STRATIFIED_REGULAR

    @classmethod
    def parse(cls, value) -> "ModelKind":
        if isinstance(value, cls):
            return value
        aliases = {"stratified": cls.STRATIFIED_REGULAR, "regular": cls.STRATIFIED_REGULAR,
                   "high": cls.STRATIFIED_HIGH}
        value = str(value).lower()
        return aliases.get(value) or cls(value)


@dataclass(frozen=True)
class Subject:
    time: float
    status: int
    center: int
    covariates: np.ndarray

    @property
    def delta(self) -> int:
        return int(self.status != CENSORED)


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class Dataset:
    time: np.ndarray
    status: np.ndarray
    center: np.ndarray
    Z: np.ndarray
    ids: np.ndarray
    _strata: dict = field(repr=False, default_factory=dict)

    @property
    def n(self) -> int:
        return self.time.shape[0]

    @property
    def d(self) -> int:
        return self.Z.shape[1]

    @property
    def centers(self) -> np.ndarray:
        return np.array(list(self._strata))

    @property
    def K(self) -> int:
        return len(self._strata)

    @property
    def strata(self) -> dict:
        """Map center id -> indices of its subjects (a partition of 0..n-1)."""
        return self._strata

    @property
    def n_k(self) -> dict:
        return {k: len(v) for k, v in self._strata.items()}

    @property
    def subjects(self) -> list[Subject]:
        return [Subject(float(t), int(s), int(c), z)
                for t, s, c, z in zip(self.time, self.status, self.center, self.Z)]

    def subset(self, index) -> "Dataset":
        index = np.asarray(index)
        return _assemble(self.time[index], self.status[index], self.center[index],
                         self.Z[index], self.ids[index])

    def with_covariates(self, Z: np.ndarray) -> "Dataset":
        return _assemble(self.time, self.status, self.center, Z, self.ids)

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return all(np.array_equal(getattr(self, a), getattr(other, a))
                   for a in ("time", "status", "center", "Z", "ids"))

    __hash__ = None


def _assemble(time, status, center, Z, ids) -> Dataset:
    order = np.lexsort((status, time, center))
    time, status, center = time[order], status[order], center[order]
    Z, ids = Z[order], ids[order]
    strata = {}
    if len(center):
        starts = np.flatnonzero(np.r_[True, center[1:] != center[:-1]])
        stops = np.r_[starts[1:], len(center)]
        for a, b in zip(starts, stops):
            strata[int(center[a])] = _readonly(np.arange(a, b))
    return Dataset(_readonly(time.astype(float)), _readonly(status.astype(np.int64)),
                   _readonly(center.astype(np.int64)), _readonly(np.asarray(Z, dtype=float)),
                   _readonly(ids), strata)


def build_dataset(records: Iterable[Sequence], ids=None) -> Dataset:
    """Validate raw ``(time, status, center, covariates)`` records.

    Rows are numbered from 0 in error messages.
    """
    records = list(records)
    if not records:
        raise DataError("no records")
    d = None
    time = np.empty(len(records))
    status = np.empty(len(records), dtype=np.int64)
    center = np.empty(len(records), dtype=np.int64)
    rows = []
    for i, rec in enumerate(records):
        t, s, c, z = rec
        z = np.asarray(z, dtype=float).ravel()
        if d is None:
            d = z.size
        elif z.size != d:
            raise DimensionMismatch(f"row {i}: {z.size} covariates, expected {d}")
        t = float(t)
        if not np.isfinite(t) or t <= 0:
            raise NonPositiveTime(f"row {i}: time {t!r} is not a positive finite number")
        if s not in (0, 1, 2) or int(s) != s:
            raise UnknownStatusCode(f"row {i}: status {s!r} not in {{0, 1, 2}}")
        if not np.all(np.isfinite(z)):
            raise DataError(f"row {i}: non-finite covariate")
        time[i], status[i], center[i] = t, int(s), int(c)
        rows.append(z)
    Z = np.vstack(rows) if d else np.empty((len(records), 0))
    ids = np.arange(len(records)) if ids is None else np.asarray(ids)
    return _assemble(time, status, center, Z, ids)


def from_arrays(time, status, center, Z, ids=None) -> Dataset:
    """Vectorised :func:`build_dataset` for simulated data."""
    time = np.asarray(time, dtype=float)
    status = np.asarray(status)
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    if Z.shape[0] != time.shape[0]:
        raise DimensionMismatch("covariate rows do not match number of times")
    bad = np.flatnonzero(~np.isfinite(time) | (time <= 0))
    if bad.size:
        raise NonPositiveTime(f"row {bad[0]}: time {time[bad[0]]!r} is not positive")
    bad = np.flatnonzero(~np.isin(status, (0, 1, 2)))
    if bad.size:
        raise UnknownStatusCode(f"row {bad[0]}: status {status[bad[0]]!r}")
    ids = np.arange(time.size) if ids is None else np.asarray(ids)
    return _assemble(time, status.astype(np.int64), np.asarray(center, dtype=np.int64), Z, ids)


@dataclass(frozen=True)
class CovariateTransform:
    mean: np.ndarray
    scale: np.ndarray
    constant: np.ndarray  # bool flags for columns left untouched

    def coef_to_original(self, beta: np.ndarray) -> np.ndarray:
        return np.asarray(beta) / self.scale

    def cov_to_original(self, cov: np.ndarray, active=None) -> np.ndarray:
        s = self.scale if active is None else self.scale[np.asarray(active, dtype=int)]
        return cov / np.outer(s, s)


def standardize_covariates(ds: Dataset) -> tuple[Dataset, CovariateTransform]:
    """Center and scale columns to mean 0 and (sample) sd 1.

    Columns with zero sd are left unchanged and flagged in the transform.
    """
    mean = ds.Z.mean(axis=0)
    sd = ds.Z.std(axis=0, ddof=1) if ds.n > 1 else np.zeros(ds.d)
    constant = ~(sd > 0)
    if constant.any():
        warnings.warn(f"constant covariate columns left unscaled: {np.flatnonzero(constant).tolist()}")
    mean = np.where(constant, 0.0, mean)
    scale = np.where(constant, 1.0, sd)
    return ds.with_covariates((ds.Z - mean) / scale), CovariateTransform(mean, scale, constant)


_ZCOL = re.compile(r"^z(\d+)$")


def read_csv(path, allow_extra: bool = False) -> Dataset:
    """Read the ``id,center,time,status,z1,...,zd`` schema."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if header[:4] != ["id", "center", "time", "status"]:
            raise DataError(f"{path}: header must start with id,center,time,status")
        zcols, extra = [], []
        for j, name in enumerate(header[4:], start=4):
            m = _ZCOL.match(name)
            if m and int(m.group(1)) == len(zcols) + 1 and not extra:
                zcols.append(j)
            else:
                extra.append(name)
        if extra and not allow_extra:
            raise DataError(f"{path}: unexpected columns {extra} (use --allow-extra)")
        records, ids = [], []
        for lineno, row in enumerate(reader):
            if not row:
                continue
            if len(row) != len(header):
                raise DimensionMismatch(f"row {lineno}: {len(row)} fields, header has {len(header)}")
            try:
                status = int(row[3])
                records.append((float(row[2]), status, int(row[1]), [float(row[j]) for j in zcols]))
            except ValueError as exc:
                raise DataError(f"row {lineno}: {exc}") from None
            ids.append(row[0])
    return build_dataset(records, ids=np.array(ids, dtype=object))


def write_csv(ds: Dataset, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "center", "time", "status"] + [f"z{j + 1}" for j in range(ds.d)])
        for i in range(ds.n):
            w.writerow([ds.ids[i], int(ds.center[i]), repr(float(ds.time[i])), int(ds.status[i])]
                       + [repr(float(v)) for v in ds.Z[i]])


def drop_eventless_strata(ds: Dataset) -> Dataset:
    """Remove centers without a cause-1 event, with a warning."""
    keep = [k for k, idx in ds.strata.items() if np.any(ds.status[idx] == CAUSE1)]
    if len(keep) == ds.K:
        return ds
    warnings.warn(f"{ds.K - len(keep)} strata without cause-1 events dropped")
    return ds.subset(np.concatenate([ds.strata[k] for k in keep]))
