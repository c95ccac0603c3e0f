"""LASSO, adaptive LASSO, SCAD and MCP penalties and their group versions.

All functions act on nonnegative magnitudes ``b`` (|beta_j| or a group norm).
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .errors import UnpenalizedFitRequired

FAMILIES = ("none", "lasso", "alasso", "scad", "mcp")
ALASSO_FLOOR = 1e-8


@dataclass(frozen=True)
class PenaltySpec:
    family: str = "none"
    lam: float = 0.0
    alpha: float = 3.7  # SCAD shape
    gamma: float = 2.7  # MCP shape
    weights: Optional[tuple] = None  # adaptive weights theta, one per coordinate or group
    groups: Optional[tuple] = None  # partition of coordinates, tuple of tuples

    def __post_init__(self):
        fam = self.family.lower()
        object.__setattr__(self, "family", fam)
        if fam not in FAMILIES:
            raise ValueError(f"unknown penalty family {self.family!r}")
        if self.lam < 0:
            raise ValueError("lambda must be nonnegative")
        if self.alpha <= 2:
            raise ValueError("SCAD alpha must exceed 2")
        if self.gamma <= 1:
            raise ValueError("MCP gamma must exceed 1")
        if self.weights is not None:
            w = tuple(float(x) for x in np.ravel(self.weights))
            if any(x <= 0 for x in w):
                raise ValueError("adaptive weights must be positive")
            object.__setattr__(self, "weights", w)
        if self.groups is not None:
            object.__setattr__(self, "groups", tuple(tuple(int(j) for j in g) for g in self.groups))
            flat = sorted(j for g in self.groups for j in g)
            if flat != list(range(len(flat))):
                raise ValueError("groups must partition 0..d-1")
        if fam == "alasso" and self.weights is None:
            raise UnpenalizedFitRequired("adaptive LASSO needs weights from an unpenalized fit")

    @property
    def active(self) -> bool:
        return self.family != "none" and self.lam > 0

    def at(self, lam: float) -> "PenaltySpec":
        return replace(self, lam=float(lam))

    def group_list(self, d: int) -> list:
        return [list(g) for g in self.groups] if self.groups else [[j] for j in range(d)]

    def unit_lambda(self, d: int) -> np.ndarray:
        """Per coordinate/group multiplier of lambda: sqrt(d_g) times theta_g."""
        groups = self.group_list(d)
        mult = np.array([np.sqrt(len(g)) for g in groups])
        if self.family == "alasso":
            mult = mult * np.asarray(self.weights)
        return mult


def _derivative(family, b, lam, alpha, gamma):
    b = np.asarray(b, dtype=float)
    if family == "none":
        return np.zeros_like(b)
    if family in ("lasso", "alasso"):
        return np.broadcast_to(lam, b.shape).astype(float)
    if family == "scad":
        return np.where(b <= lam, lam, np.maximum(alpha * lam - b, 0.0) / (alpha - 1.0))
    if family == "mcp":
        return np.maximum(lam - b / gamma, 0.0)
    raise ValueError(family)


def _value(family, b, lam, alpha, gamma):
    b = np.asarray(b, dtype=float)
    if family == "none":
        return np.zeros_like(b)
    if family in ("lasso", "alasso"):
        return lam * b
    if family == "scad":
        mid = (2 * alpha * lam * b - b ** 2 - lam ** 2) / (2 * (alpha - 1.0))
        top = (alpha + 1.0) * lam ** 2 / 2
        return np.where(b <= lam, lam * b, np.where(b <= alpha * lam, mid, top))
    if family == "mcp":
        return np.where(b <= gamma * lam, lam * b - b ** 2 / (2 * gamma), gamma * lam ** 2 / 2)
    raise ValueError(family)


def _effective_lambda(spec: PenaltySpec, idx):
    if idx is None:
        return spec.lam
    theta = spec.weights[idx] if spec.family == "alasso" else 1.0
    size = np.sqrt(len(spec.groups[idx])) if spec.groups else 1.0
    return spec.lam * theta * size


def penalty_derivative(spec: PenaltySpec, b, idx=None):
    """p'_lambda(b) for coordinate (or group) ``idx``.

    For groups ``b`` is the group norm and lambda becomes sqrt(d_g) * lambda;
    ``idx=None`` uses the plain lambda (adaptive weight 1).
    """
    if np.any(np.asarray(b) < 0):
        raise ValueError("b must be nonnegative")
    fam = "lasso" if spec.family == "alasso" else spec.family
    return _derivative(fam, b, _effective_lambda(spec, idx), spec.alpha, spec.gamma)


def penalty_value(spec: PenaltySpec, b, idx=None):
    if np.any(np.asarray(b) < 0):
        raise ValueError("b must be nonnegative")
    fam = "lasso" if spec.family == "alasso" else spec.family
    return _value(fam, b, _effective_lambda(spec, idx), spec.alpha, spec.gamma)


def _magnitudes(spec: PenaltySpec, beta):
    beta = np.asarray(beta, dtype=float)
    if spec.groups:
        return np.array([np.linalg.norm(beta[list(g)]) for g in spec.groups])
    return np.abs(beta)


def total_penalty(spec: PenaltySpec, beta) -> float:
    """Sum of penalties over coordinates or groups."""
    if not spec.active:
        return 0.0
    beta = np.asarray(beta, dtype=float)
    lam = spec.lam * spec.unit_lambda(beta.size)
    fam = "lasso" if spec.family == "alasso" else spec.family
    return float(np.sum(_value(fam, _magnitudes(spec, beta), lam, spec.alpha, spec.gamma)))


def lqa_diagonal(spec: PenaltySpec, beta, eps: float = 1e-6) -> np.ndarray:
    """Diagonal of A_lambda: p'(|b|)/(|b| + eps), expanded over group members."""
    beta = np.asarray(beta, dtype=float)
    if not spec.active:
        return np.zeros_like(beta)
    lam = spec.lam * spec.unit_lambda(beta.size)
    fam = "lasso" if spec.family == "alasso" else spec.family
    mag = _magnitudes(spec, beta)
    a = _derivative(fam, mag, lam, spec.alpha, spec.gamma) / (mag + eps)
    if not spec.groups:
        return a
    out = np.empty_like(beta)
    for g, ag in zip(spec.groups, a):
        out[list(g)] = ag
    return out


def zero_thresholds(spec: PenaltySpec, d: int) -> np.ndarray:
    """p'(0+) per coordinate, the KKT bound for coordinates held at zero."""
    if not spec.active:
        return np.zeros(d)
    lam = spec.lam * spec.unit_lambda(d)
    if not spec.groups:
        return lam
    out = np.empty(d)
    for g, lg in zip(spec.groups, lam):
        out[list(g)] = lg
    return out


def alasso_weights(mple, converged: bool = True, groups: Sequence | None = None,
                   floor: float = ALASSO_FLOOR) -> np.ndarray:
    """theta_j = 1 / max(|beta_hat_j|, floor), per group norm when grouped."""
    if not converged:
        raise UnpenalizedFitRequired("unpenalized fit did not converge")
    mple = np.asarray(mple, dtype=float)
    mag = np.array([np.linalg.norm(mple[list(g)]) for g in groups]) if groups else np.abs(mple)
    return 1.0 / np.maximum(mag, floor)
