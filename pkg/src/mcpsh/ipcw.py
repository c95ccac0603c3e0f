"""Kaplan-Meier estimate of the censoring distribution and IPCW weights."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import CAUSE1, CAUSE2, CENSORED, Dataset, Subject
from .errors import DegenerateStratum, ZeroDenominator


@dataclass(frozen=True)
class CensoringSurvival:
    """Right-continuous step function G(t) = P(C > t).

    ``times`` are the distinct censoring times, ``values`` the survival just
    after each of them.  ``scope`` is ``"pooled"`` or the center id.
    """

    times: np.ndarray
    values: np.ndarray
    scope: object = "pooled"

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.times, t, side="right")
        return np.r_[1.0, self.values][idx]

    def left(self, t):
        """G(t-), the product over censoring times strictly before t."""
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.times, t, side="left")
        return np.r_[1.0, self.values][idx]


def _km(time: np.ndarray, status: np.ndarray, scope) -> CensoringSurvival:
    # risk set at u is {X >= u}: subjects failing at u stay at risk for censoring at u
    cens_times, n_cens = np.unique(time[status == CENSORED], return_counts=True)
    sorted_time = np.sort(time)
    at_risk = time.size - np.searchsorted(sorted_time, cens_times, side="left")
    values = np.cumprod(1.0 - n_cens / at_risk)
    return CensoringSurvival(cens_times, values, scope)


def km_censoring(ds: Dataset, scope: str = "pooled", strata=None):
    """Kaplan-Meier estimate treating status 0 as the event.

    With ``scope="per-stratum"`` a dict ``center -> CensoringSurvival`` is
    returned; ``strata`` restricts which centers are estimated.
    """
    if scope == "pooled":
        return _km(ds.time, ds.status, "pooled")
    if scope != "per-stratum":
        raise ValueError(f"unknown scope {scope!r}")
    out = {}
    for k, idx in ds.strata.items():
        if strata is not None and k not in strata:
            continue
        if idx.size < 2:
            raise DegenerateStratum(f"center {k} has {idx.size} subject(s); need at least 2")
        out[k] = _km(ds.time[idx], ds.status[idx], k)
    return out


def ipcw_weight(subject: Subject, t: float, G: CensoringSurvival) -> float:
    """Return w(t)Y(t) for one subject at time t."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    if subject.time >= t:
        return 1.0
    if subject.status != CAUSE2:
        return 0.0
    den = float(G.left(subject.time))
    if den <= 0:
        raise ZeroDenominator(f"G({subject.time}-) = 0 for a competing-event subject")
    return float(G.left(t)) / den


def weight_block(t_events, time, status, G: CensoringSurvival) -> np.ndarray:
    """Matrix of w_i(t_j)Y_i(t_j) for events j (rows) and subjects i (columns)."""
    t_events = np.asarray(t_events, dtype=float)
    W = (time[None, :] >= t_events[:, None]).astype(float)
    c2 = np.flatnonzero(status == CAUSE2)
    if c2.size:
        den = G.left(time[c2])
        late = time[c2][None, :] < t_events[:, None]
        if np.any(late & (den[None, :] <= 0)):
            raise ZeroDenominator("G(X-) = 0 for a competing-event subject still weighted")
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = G.left(t_events)[:, None] / den[None, :]
        W[:, c2] = np.where(late, ratio, 1.0)
    return W


__all__ = ["CensoringSurvival", "km_censoring", "ipcw_weight", "weight_block",
           "CENSORED", "CAUSE1", "CAUSE2"]
