"""Weighted (pseudo-)partial likelihoods of the proportional subdistribution
hazards model, with score, observed information and influence terms.

Every cause-1 event j has weights ``W[j, i]`` = w_i(X_j) Y_i(X_j) over the
subjects i of its summation unit (its stratum, or the whole sample): 1 while
i is at risk, G(X_j-)/G(X_i-) once i has had a competing event, 0 otherwise.
Within a unit sorted by time these weights factor, so every risk-set sum is
a prefix or suffix sum and an evaluation costs O(n d).  Tied event times
share identical risk sets, which is Breslow's convention.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .data import CAUSE1, CAUSE2, CENSORED, Dataset, ModelKind
from .errors import NumericOverflow, ZeroDenominator
from .ipcw import km_censoring, weight_block


@dataclass(frozen=True)
class ObjectiveValue:
    loglik: float
    score: np.ndarray
    information: np.ndarray  # minus the Hessian, positive semidefinite


def _segment_cumsum(x: np.ndarray) -> np.ndarray:
    """Cumulative sum with a leading zero row."""
    out = np.zeros((x.shape[0] + 1,) + x.shape[1:])
    np.cumsum(x, axis=0, out=out[1:])
    return out


class PSHProblem:
    """Precomputed risk-set structure for one dataset and model kind.

    Parameters
    ----------
    ds : Dataset
    model : ModelKind or str
    G : CensoringSurvival or dict, optional
        Censoring survival; estimated by Kaplan-Meier when omitted
        (per stratum for ``stratified-regular``, pooled otherwise).
    """

    def __init__(self, ds: Dataset, model, G=None):
        self.ds = ds
        self.model = ModelKind.parse(model)
        self.Z = ds.Z
        n = ds.n
        if self.model.stratified:
            units = [idx for idx in ds.strata.values()]
        else:
            units = [np.argsort(ds.time, kind="stable")]
        with_events = [u for u in units if np.any(ds.status[u] == CAUSE1)]
        if self.model.stratified and len(with_events) < len(units):
            warnings.warn(f"{len(units) - len(with_events)} strata without cause-1 events "
                          "contribute nothing and are dropped")
        if G is None:
            if self.model.per_stratum_censoring:
                keep = {int(ds.center[u[0]]) for u in with_events}
                G = km_censoring(ds, "per-stratum", strata=keep)
            else:
                G = km_censoring(ds, "pooled")
        self.G = G
        self.units = with_events

        # perm lists unit members unit by unit, each unit sorted by time
        perm = np.concatenate(with_events) if with_events else np.empty(0, dtype=int)
        sizes = np.array([u.size for u in with_events], dtype=int)
        starts = np.r_[0, np.cumsum(sizes)[:-1]].astype(int)
        self.perm, self._sizes, self._offsets = perm, sizes, starts
        self._ends = starts + sizes
        unit_of_pos = np.repeat(np.arange(len(with_events)), sizes)
        time_p = ds.time[perm]
        status_p = ds.status[perm]

        ev_pos = np.flatnonzero(status_p == CAUSE1)
        self.events = perm[ev_pos]
        self.event_unit = unit_of_pos[ev_pos]
        t_ev = time_p[ev_pos]
        # first position in the unit with X >= t_j
        self._ev_first = np.array([starts[k] + np.searchsorted(time_p[starts[k]:self._ends[k]], t, "left")
                                   for k, t in zip(self.event_unit, t_ev)], dtype=int) \
            if ev_pos.size else np.empty(0, dtype=int)
        n_ev_unit = np.bincount(self.event_unit, minlength=len(with_events))
        self._ev_start = np.r_[0, np.cumsum(n_ev_unit)[:-1]].astype(int)
        self._ev_end = self._ev_start + n_ev_unit
        # number of events (global order) with t_j <= X_i in i's unit, per position
        self._ev_le = np.empty(perm.size, dtype=int)
        for k in range(len(with_events)):
            a, b = starts[k], self._ends[k]
            te = t_ev[self._ev_start[k]:self._ev_end[k]]
            self._ev_le[a:b] = self._ev_start[k] + np.searchsorted(te, time_p[a:b], "right")

        Gt = np.empty(ev_pos.size)
        inv_g = np.zeros(perm.size)
        for k in range(len(with_events)):
            a, b = starts[k], self._ends[k]
            Gu = G[int(ds.center[perm[a]])] if isinstance(G, dict) else G
            Gt[self._ev_start[k]:self._ev_end[k]] = Gu.left(t_ev[self._ev_start[k]:self._ev_end[k]])
            c2 = np.flatnonzero(status_p[a:b] == CAUSE2) + a
            if c2.size:
                den = Gu.left(time_p[c2])
                last = t_ev[self._ev_end[k] - 1]
                if np.any((den <= 0) & (time_p[c2] < last)):
                    raise ZeroDenominator("G(X-) = 0 for a competing-event subject still weighted")
                with np.errstate(divide="ignore"):
                    inv_g[c2] = np.where(den > 0, 1.0 / den, 0.0)
        self._Gt, self._inv_g = Gt, inv_g
        self._time_p, self._status_p = time_p, status_p
        self._Zp = self.Z[perm]
        self._unit_of_pos = unit_of_pos

        self.unit_of = np.full(n, -1)
        self.unit_of[perm] = unit_of_pos
        self.delta1 = (ds.status == CAUSE1).astype(float)
        self.Zsum_events = self.Z[self.events].sum(axis=0)

    @property
    def n(self) -> int:
        return self.ds.n

    @property
    def d(self) -> int:
        return self.ds.d

    @property
    def n_events(self) -> int:
        return self.events.size

    # -- core risk sums -------------------------------------------------
    def _exp(self, beta):
        """Linear predictor, shifted exponentials (in perm order) and shifts."""
        eta = self.Z @ np.asarray(beta, dtype=float)
        if not np.all(np.isfinite(eta)):
            raise NumericOverflow("non-finite linear predictor")
        eta_p = eta[self.perm]
        # subtract the maximum linear predictor of each summation unit
        shift = np.maximum.reduceat(eta_p, self._offsets) if self._offsets.size else np.zeros(0)
        e_p = np.exp(eta_p - shift[self._unit_of_pos])
        return eta, e_p, shift

    def _risk_sums(self, x_p: np.ndarray) -> np.ndarray:
        """sum_i W[j, i] x_i for every event j; x given in perm order."""
        cum = _segment_cumsum(x_p)
        wx = x_p * (self._inv_g if x_p.ndim == 1 else self._inv_g[:, None])
        cw = _segment_cumsum(wx)
        f, u = self._ev_first, self.event_unit
        a, b = self._offsets[u], self._ends[u]
        Gt = self._Gt if x_p.ndim == 1 else self._Gt[:, None]
        return (cum[b] - cum[f]) + Gt * (cw[f] - cw[a])

    def _transposed_sums(self, y: np.ndarray, square: bool = False) -> np.ndarray:
        """sum_j W[j, i] y_j (or W^2) for every position i; y per event."""
        g = self._Gt ** 2 if square else self._Gt
        cy = _segment_cumsum(y)
        cgy = _segment_cumsum(y * (g if y.ndim == 1 else g[:, None]))
        u = self._unit_of_pos
        le, s0, s1 = self._ev_le, self._ev_start[u], self._ev_end[u]
        inv = self._inv_g ** 2 if square else self._inv_g
        if y.ndim > 1:
            inv = inv[:, None]
        return (cy[le] - cy[s0]) + inv * (cgy[s1] - cgy[le])

    def _sums(self, beta):
        eta, e_p, shift = self._exp(beta)
        S0 = self._risk_sums(e_p)
        if np.any(S0 <= 0):
            raise NumericOverflow("empty weighted risk set")
        S1 = self._risk_sums(e_p[:, None] * self._Zp)
        return eta, e_p, shift, S0, S1

    def loglik(self, beta) -> float:
        eta, e_p, shift = self._exp(beta)
        S0 = self._risk_sums(e_p)
        return float(np.sum(eta[self.events] - shift[self.event_unit] - np.log(S0)))

    def evaluate(self, beta) -> ObjectiveValue:
        eta, e_p, shift, S0, S1 = self._sums(beta)
        ll = float(np.sum(eta[self.events] - shift[self.event_unit] - np.log(S0)))
        Zbar = S1 / S0[:, None]
        score = self.Zsum_events - Zbar.sum(axis=0)
        colP = e_p * self._transposed_sums(1.0 / S0)
        info = self._Zp.T @ (colP[:, None] * self._Zp) - Zbar.T @ Zbar
        info = 0.5 * (info + info.T)
        return ObjectiveValue(ll, score, info)

    def _to_subjects(self, x_p: np.ndarray) -> np.ndarray:
        out = np.zeros((self.n,) + x_p.shape[1:])
        out[self.perm] = x_p
        return out

    def eta_derivatives(self, beta):
        """Gradient and diagonal of minus the Hessian in the linear predictor."""
        eta, e_p, shift = self._exp(beta)
        S0 = self._risk_sums(e_p)
        colP = e_p * self._transposed_sums(1.0 / S0)
        colP2 = e_p * e_p * self._transposed_sums(1.0 / S0 ** 2, square=True)
        return self.delta1 - self._to_subjects(colP), self._to_subjects(colP - colP2)

    def breslow_increments(self, beta):
        """Baseline cumulative hazard jumps 1/S0(X_j) at each event (unshifted)."""
        eta, e_p, shift = self._exp(beta)
        S0 = self._risk_sums(e_p)
        return self.ds.time[self.events], np.exp(-shift[self.event_unit]) / S0

    def weight_matrix(self) -> np.ndarray:
        """Dense events x subjects matrix of w_i(X_j)Y_i(X_j) (for checks)."""
        ds = self.ds
        W = np.zeros((self.n_events, ds.n))
        for k, u in enumerate(self.units):
            rows = slice(self._ev_start[k], self._ev_end[k])
            Gu = self.G[int(ds.center[u[0]])] if isinstance(self.G, dict) else self.G
            W[rows, u] = weight_block(ds.time[self.events[rows]], ds.time[u], ds.status[u], Gu)
        return W

    # -- influence terms ------------------------------------------------
    def influence(self, beta, corrected: bool = True) -> np.ndarray:
        """Per-subject terms whose sum approximates the score.

        The first part is the integral of (Z - Zbar) w dM over the
        subdistribution martingale; with ``corrected`` the contribution of
        estimating G by Kaplan-Meier is added.
        """
        eta, e_p, shift, S0, S1 = self._sums(beta)
        Zbar = S1 / S0[:, None]
        colP = e_p * self._transposed_sums(1.0 / S0)
        cross = e_p[:, None] * self._transposed_sums(Zbar / S0[:, None])
        out = self._to_subjects(-(colP[:, None] * self._Zp - cross))
        out[self.events] += self.Z[self.events] - Zbar
        if corrected:
            out += self._censoring_correction(e_p, S0, Zbar)
        return out

    def _censoring_correction(self, e_p, S0, Zbar) -> np.ndarray:
        """Kaplan-Meier estimation term for the competing-event weights.

        Censoring scope follows G: per unit for a per-stratum G, otherwise
        the whole sample.
        """
        ds = self.ds
        psi = np.zeros((ds.n, ds.d))
        e = self._to_subjects(e_p)
        t_ev = ds.time[self.events]
        if isinstance(self.G, dict):
            scopes = [(u, slice(self._ev_start[k], self._ev_end[k]), self.G[int(ds.center[u[0]])])
                      for k, u in enumerate(self.units)]
        else:
            scopes = [(np.arange(ds.n), slice(0, self.n_events), self.G)]
        for u, rows, G in scopes:
            status_u, time_u = ds.status[u], ds.time[u]
            cens_t, n_c = np.unique(time_u[status_u == CENSORED], return_counts=True)
            c2 = u[(status_u == CAUSE2) & (self.unit_of[u] >= 0)]
            if cens_t.size == 0 or c2.size == 0:
                continue
            sorted_u = np.sort(time_u)
            at_risk = (time_u.size - np.searchsorted(sorted_u, cens_t, side="left")).astype(float)
            # events whose unit contains each competing-event subject
            ev = np.arange(self.n_events)[rows]
            same = self.event_unit[ev][:, None] == self.unit_of[c2][None, :]
            late = ds.time[c2][None, :] < t_ev[ev][:, None]
            Wc = np.where(late, self._Gt[ev][:, None] * G.left(ds.time[c2])[None, :] ** -1.0, 1.0)
            Wc = np.where(same & ((ds.time[c2][None, :] >= t_ev[ev][:, None]) | late), Wc, 0.0)
            P2 = Wc * e[c2][None, :] / S0[ev][:, None]
            # the weight of a competing-event subject i at event time t reacts to
            # censoring jumps u with X_i <= u < t
            Lmat = (ds.time[c2][:, None] <= cens_t[None, :]).astype(float)
            Rmat = (t_ev[ev][:, None] > cens_t[None, :]).astype(float)
            B = P2.T @ Rmat
            C = P2 @ Lmat
            q = (Lmat * B).T @ ds.Z[c2] - (Rmat * C).T @ Zbar[ev]
            dLam = n_c / at_risk
            g = q / at_risk[:, None]
            # jump part at own censoring time, minus compensator over u <= X_i
            pos = np.searchsorted(cens_t, time_u, side="left")
            own = (status_u == CENSORED)
            jump = np.zeros((u.size, ds.d))
            jump[own] = g[pos[own]]
            cum = np.vstack([np.zeros(ds.d), np.cumsum(g * dLam[:, None], axis=0)])
            upto = np.searchsorted(cens_t, time_u, side="right")
            psi[u] += jump - cum[upto]
        return psi


def loglik_stratified(beta, ds: Dataset, G=None, high: bool = False) -> ObjectiveValue:
    """Stratified log-partial likelihood (per-stratum risk sets)."""
    model = ModelKind.STRATIFIED_HIGH if high else ModelKind.STRATIFIED_REGULAR
    return PSHProblem(ds, model, G).evaluate(beta)


def loglik_marginal(beta, ds: Dataset, G=None) -> ObjectiveValue:
    """Marginal log-pseudo-partial likelihood (pooled risk sets and weights)."""
    return PSHProblem(ds, ModelKind.MARGINAL, G).evaluate(beta)


def loglik_pooled(beta, ds: Dataset, G=None) -> ObjectiveValue:
    return PSHProblem(ds, ModelKind.POOLED, G).evaluate(beta)
