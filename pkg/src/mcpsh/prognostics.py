"""Prediction and evaluation of cumulative incidence models.

Covers the Breslow-type baseline cumulative subdistribution hazard, predicted
CIFs, the concordance index, the Royston-Sauerbrei D-index, IPCW prediction
error, a repeated split-sample protocol and scoring of published prognostic
indices from a coefficient table.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources
from typing import Callable, Mapping, Optional

import numpy as np
from scipy.stats import norm, rankdata

from .data import CAUSE1, CAUSE2, CENSORED, Dataset, ModelKind, from_arrays
from .errors import (DegeneratePI, HighStratificationUnsupported, HorizonBeyondSupport,
                     MCPSHError, MissingFactor, NoEvaluablePairs)
from .ipcw import km_censoring
from .objective import PSHProblem
from .solver import FitResult, fit_path, fit_unpenalized

KAPPA = math.sqrt(8.0 / math.pi)


# -- baseline and predicted CIF ---------------------------------------------

@dataclass(frozen=True)
class BaselineCumHazard:
    """Step function Lambda_0(t) per stratum (key ``None`` when pooled).

    ``steps[key]`` holds the sorted jump times and the cumulative hazard just
    after each of them.
    """

    model: ModelKind
    steps: dict

    @property
    def stratified(self) -> bool:
        return self.model.stratified

    def cumhaz(self, t, center: Optional[int] = None) -> np.ndarray:
        """Lambda_0(t); NaN for a stratum without a baseline."""
        key = int(center) if self.stratified else None
        t = np.asarray(t, dtype=float)
        if key not in self.steps:
            return np.full(t.shape, np.nan)
        times, cum = self.steps[key]
        idx = np.searchsorted(times, t, side="right")
        return np.r_[0.0, cum][idx]

    def cif(self, t, lp, center: Optional[int] = None) -> np.ndarray:
        """1 - exp(-Lambda_0(t) exp(lp)), broadcasting ``t`` against ``lp``."""
        return -np.expm1(-self.cumhaz(t, center) * np.exp(lp))

    def predict(self, Z: np.ndarray, beta: np.ndarray, centers=None) -> Callable:
        """Predictor mapping a time grid to the n x m matrix of CIFs."""
        lp = np.asarray(Z, dtype=float) @ np.asarray(beta, dtype=float)
        if self.stratified and centers is None:
            raise ValueError("centers are required for a stratified baseline")

        def predictor(grid):
            grid = np.asarray(grid, dtype=float)
            if not self.stratified:
                return self.cif(grid[None, :], lp[:, None])
            out = np.empty((lp.size, grid.size))
            for i, (k, e) in enumerate(zip(centers, lp)):
                out[i] = self.cif(grid, e, k)
            return out

        return predictor


def breslow_baseline(fit: FitResult, ds, G=None) -> BaselineCumHazard:
    """Weighted Breslow estimator at the fitted coefficients.

    Each cause-1 event contributes 1 / S0(beta, t_j) with S0 the
    IPCW-weighted risk sum of its unit (its stratum or the whole sample).
    """
    problem = ds if isinstance(ds, PSHProblem) else PSHProblem(ds, fit.model, G)
    if problem.model is ModelKind.STRATIFIED_HIGH:
        raise HighStratificationUnsupported(
            "no baseline estimate for highly stratified data; use stratified-regular, "
            "pooled or marginal")
    times, inc = problem.breslow_increments(fit.beta)
    steps = {}
    for k in range(len(problem.units)):
        rows = problem.event_unit == k
        order = np.argsort(times[rows], kind="stable")
        key = int(problem.ds.center[problem.units[k][0]]) if problem.model.stratified else None
        steps[key] = (times[rows][order], np.cumsum(inc[rows][order]))
    return BaselineCumHazard(problem.model, steps)


# -- discrimination ---------------------------------------------------------

def c_index(test: Dataset, PI, tau: Optional[float] = None) -> float:
    """Concordance over evaluable ordered pairs.

    (i, j) is evaluable when i has a cause-1 event at X_i <= tau and j is
    still event-free at X_i or already failed from the competing cause.
    The pair is concordant when PI_i > PI_j; ties in PI count one half.
    ``tau`` defaults to the last cause-1 time in ``test``.
    """
    PI = np.asarray(PI, dtype=float)
    if PI.shape != (test.n,):
        raise ValueError("PI must have one entry per test subject")
    events = np.flatnonzero(test.status == CAUSE1)
    if tau is None:
        tau = float(test.time[events].max()) if events.size else 0.0
    elif tau <= 0:
        raise ValueError("tau must be positive")
    X, st = test.time, test.status
    competing = st == CAUSE2
    num = den = 0.0
    for i in events[X[events] <= tau]:
        ok = (X > X[i]) | ((X == X[i]) & (st == CENSORED)) | (competing & (X <= X[i]))
        ok[i] = False
        m = int(ok.sum())
        if m == 0:
            continue
        den += m
        num += np.sum(PI[i] > PI[ok]) + 0.5 * np.sum(PI[i] == PI[ok])
    if den == 0:
        raise NoEvaluablePairs("no evaluable pairs before the horizon")
    return float(num / den)


def rankits(PI) -> np.ndarray:
    """Blom normal scores of the ranks of PI divided by sqrt(8/pi)."""
    PI = np.asarray(PI, dtype=float)
    r = rankdata(PI)
    return norm.ppf((r - 0.375) / (PI.size + 0.25)) / KAPPA


def d_index(test: Dataset, PI) -> float:
    """Royston-Sauerbrei D: the PSH coefficient of the scaled rankits of PI."""
    PI = np.asarray(PI, dtype=float)
    if PI.shape != (test.n,):
        raise ValueError("PI must have one entry per test subject")
    if np.unique(PI).size < 2:
        raise DegeneratePI("PI needs at least two distinct values")
    ds = from_arrays(test.time, test.status, np.ones(test.n, dtype=int), rankits(PI)[:, None])
    fit = fit_unpenalized(ds, ModelKind.POOLED)
    return abs(float(fit.beta[0]))


# -- prediction error ---------------------------------------------------------

def prediction_error(test: Dataset, predictor, t_star: float, G=None, grid=None) -> float:
    """Brier score of the cause-1 CIF integrated over [0, t_star].

    Subjects count with weight 1/G(X_i-) once they have failed from either
    cause, 1/G(t) while still under observation and 0 after censoring.  The
    score is integrated by the trapezoid rule on 0, the cause-1 times up to
    ``t_star`` and ``t_star``.  ``predictor`` maps a grid to an n x m array
    (or is such an array when ``grid`` is given).
    """
    if t_star <= 0:
        raise ValueError("t_star must be positive")
    G = km_censoring(test, "pooled") if G is None else G
    if float(G.left(t_star)) <= 0:
        raise HorizonBeyondSupport(f"censoring survival is zero before t*={t_star}")
    if grid is None:
        ev = test.time[(test.status == CAUSE1) & (test.time <= t_star)]
        grid = np.unique(np.r_[0.0, ev, t_star])
    grid = np.asarray(grid, dtype=float)
    F = predictor(grid) if callable(predictor) else np.asarray(predictor, dtype=float)
    if F.shape != (test.n, grid.size):
        raise ValueError(f"predictor returned shape {F.shape}, expected {(test.n, grid.size)}")
    X, st = test.time[:, None], test.status[:, None]
    failed = (X <= grid[None, :]) & (st != CENSORED)
    observing = X > grid[None, :]
    with np.errstate(divide="ignore"):
        w = np.where(failed, 1.0 / G.left(test.time)[:, None], 0.0)
        w = np.where(observing, 1.0 / G(grid)[None, :], w)
    y = (failed & (st == CAUSE1)).astype(float)
    keep = np.all(np.isfinite(F), axis=1)
    if not keep.any():
        raise ValueError("predictor gives no finite rows")
    bs = np.sum((w * (y - F) ** 2)[keep], axis=0) / keep.sum()
    return float(np.trapezoid(bs, grid))


# -- split-sample protocol ----------------------------------------------------

@dataclass
class SplitReport:
    """Per-split metrics and their mean and spread.

    ``se`` is the standard deviation of the per-split values.  ``pe`` is
    None where prediction error is unavailable (highly stratified model).
    """

    model: ModelKind
    penalty: str
    splits: int
    c: np.ndarray
    d: np.ndarray
    pe: Optional[np.ndarray]
    failed: int
    excluded: int = 0
    messages: list = field(default_factory=list)

    @staticmethod
    def _summary(x):
        x = x[np.isfinite(x)]
        if x.size == 0:
            return float("nan"), float("nan")
        return float(x.mean()), float(x.std(ddof=1)) if x.size > 1 else 0.0

    def summary(self) -> dict:
        out = {}
        for name, x in (("c_index", self.c), ("d_index", self.d), ("pe", self.pe)):
            if x is None:
                continue
            m, s = self._summary(x)
            out[name] = {"mean": m, "se": s}
        return out


def split_indices(ds: Dataset, model: ModelKind, train_fraction: float, rng) -> tuple:
    """Train/test indices: sampled within centers, or upon centers for the
    highly stratified and marginal models.  A fraction of 1 uses all data for
    both."""
    if train_fraction >= 1.0:
        idx = np.arange(ds.n)
        return idx, idx
    if model in (ModelKind.STRATIFIED_HIGH, ModelKind.MARGINAL):
        centers = ds.centers
        m = max(1, int(round(train_fraction * centers.size)))
        chosen = set(rng.choice(centers, size=m, replace=False).tolist())
        mask = np.isin(ds.center, list(chosen))
    else:
        mask = np.zeros(ds.n, dtype=bool)
        for idx in ds.strata.values():
            m = int(round(train_fraction * idx.size))
            mask[rng.choice(idx, size=m, replace=False)] = True
    return np.flatnonzero(mask), np.flatnonzero(~mask)


def split_eval(ds: Dataset, model, penalty: str = "scad", splits: int = 100,
               train_fraction: float = 0.8, seed: int = 0, horizon: Optional[float] = None,
               df: str = "trace", n_lambda: int = 50) -> SplitReport:
    """Repeated split-sample evaluation of C-index, D-index and PE.

    Split s uses the stream ``SeedSequence([seed, s])``.  ``horizon`` (the
    PE upper limit) defaults to the 75th percentile of cause-1 times in
    ``ds``.  Test subjects of strata without a training baseline are left
    out of PE and counted in ``excluded``.
    """
    model = ModelKind.parse(model)
    if splits < 1:
        raise ValueError("splits must be at least 1")
    if not 0 < train_fraction <= 1:
        raise ValueError("train_fraction must lie in (0, 1]")
    if horizon is None:
        horizon = float(np.quantile(ds.time[ds.status == CAUSE1], 0.75))
    with_pe = model is not ModelKind.STRATIFIED_HIGH
    c = np.full(splits, np.nan)
    dd = np.full(splits, np.nan)
    pe = np.full(splits, np.nan) if with_pe else None
    failed = excluded = 0
    messages = []
    for s in range(splits):
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), s]))
        tr, te = split_indices(ds, model, train_fraction, rng)
        train, test = ds.subset(tr), ds.subset(te)
        try:
            path = fit_path(train, model, penalty, n_lambda=n_lambda, df=df)
            fit = path.selected
            PI = test.Z @ fit.beta
            c[s] = c_index(test, PI)
            dd[s] = d_index(test, PI)
            if with_pe:
                base = breslow_baseline(fit, PSHProblem(train, model))
                if base.stratified:
                    known = np.isin(test.center, list(base.steps))
                    excluded += int((~known).sum())
                    test = test.subset(np.flatnonzero(known))
                if test.n:
                    pe[s] = prediction_error(test, base.predict(test.Z, fit.beta, test.center), horizon)
                else:
                    messages.append(f"split {s}: no test subject has a training baseline")
        except MCPSHError as exc:
            failed += 1
            messages.append(f"split {s}: {type(exc).__name__}: {exc}")
    return SplitReport(model, penalty, splits, c, dd, pe, failed, excluded, messages)


# -- prognostic index scoring -------------------------------------------------

FACTOR_KINDS = ("linear", "below", "above", "indicator")


def load_coefficient_table(path=None) -> dict:
    """Read a coefficient table; the bundled donor index when ``path`` is None."""
    if path is None:
        text = resources.files("mcpsh").joinpath("tables/kdgfi.json").read_text()
    else:
        with open(path) as fh:
            text = fh.read()
    table = json.loads(text)
    for f in table.get("factors", []):
        if f.get("kind") not in FACTOR_KINDS:
            raise ValueError(f"factor {f.get('name')!r}: kind must be one of {FACTOR_KINDS}")
    return table


def _term(f: Mapping, x: np.ndarray) -> np.ndarray:
    kind, coef = f["kind"], float(f["coefficient"])
    scale = float(f.get("scale", 1.0))
    if kind == "linear":
        return coef * (x - float(f["center"])) / scale
    if kind == "below":
        k = float(f["knot"])
        return np.where(x < k, coef * (x - k) / scale, 0.0)
    if kind == "above":
        k = float(f["knot"])
        return np.where(x > k, coef * (x - k) / scale, 0.0)
    return coef * (x != 0)


def _raw_index(table: Mapping, subjects: Mapping) -> np.ndarray:
    total = None
    for f in table["factors"]:
        name = f["covariate"]
        if name not in subjects:
            raise MissingFactor(f"covariate {name!r} needed by factor {f['name']!r}")
        x = np.asarray(subjects[name], dtype=float)
        if not np.all(np.isfinite(x)):
            raise MissingFactor(f"covariate {name!r} has missing values")
        t = _term(f, x)
        total = t if total is None else total + t
    return np.zeros(0) if total is None else np.asarray(total, dtype=float)


def score_prognostic_index(table: Mapping, subjects: Mapping, reference: Optional[Mapping] = None):
    """PI relative to the reference profile and the index exp(PI).

    Parameters
    ----------
    table : dict with ``factors`` (and optionally ``reference``)
    subjects : mapping covariate name -> scalar or array
    reference : reference profile; defaults to ``table["reference"]``

    Returns
    -------
    PI, index : arrays (scalars for scalar input)
    """
    ref = reference if reference is not None else table.get("reference")
    if ref is None:
        raise MissingFactor("no reference profile")
    scalar = all(np.ndim(v) == 0 for v in subjects.values())
    pi = _raw_index(table, subjects) - _raw_index(table, ref)
    index = np.exp(pi)
    if scalar:
        return float(pi), float(index)
    return pi, index


__all__ = ["BaselineCumHazard", "breslow_baseline", "c_index", "d_index", "rankits",
           "prediction_error", "SplitReport", "split_indices", "split_eval",
           "load_coefficient_table", "score_prognostic_index", "KAPPA"]
