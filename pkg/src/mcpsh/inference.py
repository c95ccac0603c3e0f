"""Sandwich covariance estimates for the nonzero penalized coefficients."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import ModelKind
from .errors import EmptyActiveSet
from .objective import PSHProblem
from .solver import FitResult, _solve

MEATS = ("simple", "corrected")


@dataclass(frozen=True)
class CovarianceReport:
    active: tuple
    covariance: np.ndarray
    method: str
    meat: str

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.covariance), 0.0, None))

    def full_se(self, d: int) -> np.ndarray:
        """Standard errors expanded to all d coordinates (NaN off the active set)."""
        out = np.full(d, np.nan)
        out[list(self.active)] = self.se
        return out


def _bread(fit: FitResult, active: np.ndarray) -> np.ndarray:
    info = fit.information[np.ix_(active, active)]
    H = info + fit.scale * np.diag(fit.A[active])
    return _solve(H, np.eye(active.size))


def _sandwich(fit: FitResult, problem: PSHProblem, meat: str, cluster: bool) -> CovarianceReport:
    if meat not in MEATS:
        raise ValueError(f"meat must be one of {MEATS}")
    active = np.flatnonzero(fit.beta != 0)
    if active.size == 0:
        raise EmptyActiveSet("no nonzero coefficients to report")
    eta = problem.influence(fit.beta, corrected=(meat == "corrected"))[:, active]
    if cluster:
        ds = problem.ds
        _, inv = np.unique(ds.center, return_inverse=True)
        sums = np.zeros((inv.max() + 1, active.size))
        np.add.at(sums, inv, eta)
        M = sums.T @ sums
    else:
        M = eta.T @ eta
    B = _bread(fit, active)
    cov = B @ M @ B
    cov = 0.5 * (cov + cov.T)
    method = "marginal-cluster-robust" if cluster else "stratified-sandwich"
    return CovarianceReport(tuple(int(j) for j in active), cov, method, meat)


def sandwich_stratified(fit: FitResult, ds, G=None, meat: str = "corrected") -> CovarianceReport:
    """Sandwich (I + nA)^-1 cov(U) (I + nA)^-1 over the active coordinates.

    ``cov(U)`` is the sum of outer products of per-subject influence terms.
    ``ds`` may also be a prebuilt :class:`PSHProblem`.
    """
    problem = ds if isinstance(ds, PSHProblem) else PSHProblem(ds, fit.model, G)
    return _sandwich(fit, problem, meat, cluster=False)


def sandwich_marginal(fit: FitResult, ds, G=None, meat: str = "corrected") -> CovarianceReport:
    """Cluster-robust sandwich: influence terms are summed within centers."""
    problem = ds if isinstance(ds, PSHProblem) else PSHProblem(ds, ModelKind.MARGINAL, G)
    return _sandwich(fit, problem, meat, cluster=True)


def sandwich(fit: FitResult, ds, G=None, meat: str = "corrected") -> CovarianceReport:
    """Dispatch on the model kind of ``fit``."""
    if fit.model is ModelKind.MARGINAL:
        return sandwich_marginal(fit, ds, G, meat)
    return sandwich_stratified(fit, ds, G, meat)
