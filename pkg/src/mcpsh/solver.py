"""Penalized estimation for the PSH models.

``fit_lqa`` is a Newton-Raphson iteration on the locally quadratic
approximation of the penalty and works for every model kind.  ``fit_cd``
runs coordinate descent on a diagonal weighted-least-squares surrogate and is
restricted to models with pooled risk sets.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .data import Dataset, ModelKind
from .errors import SingularInformation
from .objective import ObjectiveValue, PSHProblem
from .penalty import (PenaltySpec, _derivative, _value, alasso_weights, lqa_diagonal,
                      total_penalty, zero_thresholds)

LQA_EPS = 1e-6
TAU_ZERO = 1e-4
DF_RULES = ("trace", "active")


@dataclass
class FitResult:
    beta: np.ndarray
    loglik: float
    objective: float
    df: float
    bic: float
    n_iter: int
    converged: bool
    model: ModelKind
    penalty: PenaltySpec
    scale: float
    information: np.ndarray
    A: np.ndarray
    score: np.ndarray
    trace: list = field(default_factory=list, repr=False)
    message: str = ""
    bic_weight: float = 0.0  # log(n) or log(K)

    @property
    def active(self) -> tuple:
        return tuple(int(j) for j in np.flatnonzero(self.beta != 0))

    def df_for(self, rule: str = "trace") -> float:
        """Degrees of freedom under ``rule``: the LQA trace or the active-set size."""
        if rule == "trace":
            return self.df
        if rule == "active":
            return float(len(self.active))
        raise ValueError(f"unknown df rule {rule!r}; expected one of {DF_RULES}")

    def bic_for(self, rule: str = "trace") -> float:
        if rule == "trace":
            return self.bic
        return -2.0 * self.loglik + self.bic_weight * self.df_for(rule)

    @property
    def lam(self) -> float:
        return self.penalty.lam


@dataclass
class PathResult:
    lambdas: np.ndarray
    fits: list
    best: int
    mple: FitResult
    model: ModelKind
    df_rule: str = "trace"

    @property
    def selected(self) -> FitResult:
        return self.fits[self.best]

    @property
    def active_sizes(self) -> list:
        return [len(f.active) for f in self.fits]


def as_problem(ds, model=None) -> PSHProblem:
    if isinstance(ds, PSHProblem):
        return ds
    if model is None:
        raise ValueError("model kind required with a Dataset")
    return PSHProblem(ds, model)


def penalty_scale(problem: PSHProblem) -> float:
    """n for pooled/stratified objectives, K for the marginal one."""
    return float(problem.ds.K if problem.model is ModelKind.MARGINAL else problem.ds.n)


def bic_multiplier(problem: PSHProblem) -> float:
    return math.log(penalty_scale(problem))


def _solve(H: np.ndarray, g: np.ndarray) -> np.ndarray:
    try:
        x = np.linalg.solve(H, g)
        if np.all(np.isfinite(x)):
            return x
    except np.linalg.LinAlgError:
        pass
    d = H.shape[0]
    jitter = 1e-8 * max(np.trace(H), 1e-300) / max(d, 1)
    try:
        x = np.linalg.solve(H + jitter * np.eye(d), g)
    except np.linalg.LinAlgError:
        raise SingularInformation("information matrix is singular") from None
    if not np.all(np.isfinite(x)):
        raise SingularInformation("information matrix is singular")
    return x


def effective_df(info: np.ndarray, A: np.ndarray, scale: float, active) -> float:
    """tr[(I + scale*A)^-1 I] restricted to the active coordinates."""
    a = np.asarray(active, dtype=int)
    if a.size == 0:
        return 0.0
    Ia = info[np.ix_(a, a)]
    return float(np.trace(_solve(Ia + scale * np.diag(A[a]), Ia)))


def _finish(problem, beta, val, penalty, scale, n_iter, converged, trace, message=""):
    A = lqa_diagonal(penalty, beta, LQA_EPS)
    active = np.flatnonzero(beta != 0)
    df = effective_df(val.information, A, scale, active)
    weight = bic_multiplier(problem)
    bic = -2.0 * val.loglik + weight * df
    obj = val.loglik - scale * total_penalty(penalty, beta)
    return FitResult(beta=beta, loglik=val.loglik, objective=obj, df=df, bic=bic,
                     n_iter=n_iter, converged=converged, model=problem.model,
                     penalty=penalty, scale=scale, information=val.information, A=A,
                     score=val.score, trace=trace, message=message, bic_weight=weight)


def fit_unpenalized(ds, model=None, support: Optional[Sequence[int]] = None,
                    tol: float = 1e-8, max_iter: int = 100, beta_init=None) -> FitResult:
    """Maximum (pseudo-)partial likelihood estimate by Newton-Raphson.

    ``support`` restricts the fit to a subset of coordinates (the others are
    held at zero), which gives the oracle estimator.
    """
    problem = as_problem(ds, model)
    d = problem.d
    free = np.arange(d) if support is None else np.asarray(sorted(support), dtype=int)
    beta = np.zeros(d) if beta_init is None else np.array(beta_init, dtype=float)
    mask = np.zeros(d, dtype=bool)
    mask[free] = True
    beta[~mask] = 0.0
    val = problem.evaluate(beta)
    trace = [val.loglik]
    converged = free.size == 0 or np.max(np.abs(val.score[free])) < tol
    it = 0
    while not converged and it < max_iter:
        it += 1
        step = _solve(val.information[np.ix_(free, free)], val.score[free])
        t = 1.0
        while True:
            cand = beta.copy()
            cand[free] += t * step
            try:
                vc = problem.evaluate(cand)
            except FloatingPointError:
                vc = None
            if vc is not None and vc.loglik >= val.loglik - 1e-12:
                break
            t *= 0.5
            if t < 1e-10:
                break
        if vc is None or vc.loglik < val.loglik - 1e-12:
            break
        beta, val = cand, vc
        trace.append(val.loglik)
        converged = np.max(np.abs(val.score[free])) < tol
    msg = "" if converged else f"no convergence after {it} Newton iterations"
    return _finish(problem, beta, val, PenaltySpec("none"), penalty_scale(problem),
                   it, bool(converged), trace, msg)


def _kkt_violators(problem, penalty, val, beta, scale, slack=1e-6):
    """Zero coordinates (or groups) whose score exceeds the penalty bound."""
    thr = zero_thresholds(penalty, problem.d) * scale
    zero = beta == 0
    if penalty.groups:
        bad = []
        for g in penalty.groups:
            g = list(g)
            if np.all(zero[g]) and np.linalg.norm(val.score[g]) > thr[g[0]] * (1 + 1e-8) + slack:
                bad.extend(g)
        return np.array(bad, dtype=int)
    return np.flatnonzero(zero & (np.abs(val.score) > thr * (1 + 1e-8) + slack))


def _null_value(problem: PSHProblem) -> ObjectiveValue:
    cached = getattr(problem, "_null_value", None)
    if cached is None:
        cached = problem.evaluate(np.zeros(problem.d))
        problem._null_value = cached
    return cached


def fit_lqa(ds, penalty: PenaltySpec, beta_init=None, model=None, tol: float = 1e-7,
            max_iter: int = 200, eps: float = LQA_EPS, tau_zero: float = TAU_ZERO) -> FitResult:
    """Penalized fit by Newton-Raphson on the local quadratic approximation.

    Each step solves ``(I + s A) delta = U - s A beta`` with A the LQA
    diagonal and s the penalty scale.  Coordinates falling below
    ``tau_zero`` are set to zero and frozen, and zero coordinates that
    violate the KKT bound are reactivated.  Once the LQA iterates settle,
    Newton steps on the exact stationarity equations of the active set
    remove the O(sqrt(eps)) bias that LQA leaves near zero.
    """
    problem = as_problem(ds, model)
    d = problem.d
    s = penalty_scale(problem)
    if beta_init is None:
        beta_init = fit_unpenalized(problem).beta
    beta = np.array(beta_init, dtype=float)

    if not penalty.active:
        res = fit_unpenalized(problem, beta_init=beta)
        return _finish(problem, res.beta, problem.evaluate(res.beta), penalty, s,
                       res.n_iter, res.converged, res.trace, res.message)

    null = _null_value(problem)
    if _kkt_violators(problem, penalty, null, np.zeros(d), s, 0.0).size == 0:
        return _finish(problem, np.zeros(d), null, penalty, s, 0, True, [], "zero is optimal")

    def Q(v, b):
        return v.loglik - s * total_penalty(penalty, b)

    val = problem.evaluate(beta)
    q = Q(val, beta)
    trace = [q]
    it, converged = 0, False
    phases = [1e-4, tol] if not penalty.groups else [tol]
    for phase_tol in phases:
        reactivations = 0
        while it < max_iter:
            free = np.flatnonzero(beta != 0)
            while it < max_iter and free.size:
                it += 1
                A = lqa_diagonal(penalty, beta, eps)
                grad = val.score[free] - s * A[free] * beta[free]
                H = val.information[np.ix_(free, free)] + s * np.diag(A[free])
                step = _solve(H, grad)
                t, accepted = 1.0, False
                while t >= 1e-6:
                    cand = beta.copy()
                    cand[free] += t * step
                    try:
                        vc = problem.evaluate(cand)
                    except FloatingPointError:
                        t *= 0.5
                        continue
                    qc = Q(vc, cand)
                    if qc >= q - 1e-10:
                        accepted = True
                        break
                    t *= 0.5
                if not accepted:
                    converged = True  # no ascent direction left at working precision
                    break
                delta = np.max(np.abs(cand - beta))
                stalled = qc - q < 1e-12 * max(1.0, abs(q)) and delta < 1e-3
                beta, val, q = cand, vc, qc
                trace.append(q)
                small = (beta != 0) & (np.abs(beta) < tau_zero)
                if small.any():
                    beta = np.where(small, 0.0, beta)
                    val = problem.evaluate(beta)
                    q = Q(val, beta)
                    free = np.flatnonzero(beta != 0)
                    continue
                if delta < phase_tol:
                    converged = True
                    break
                if stalled:
                    break  # slow creep toward zero; the polish settles it
            if not free.size:
                converged = True
            bad = _kkt_violators(problem, penalty, val, beta, s)
            if bad.size == 0 or reactivations >= 3 or it >= max_iter:
                break
            reactivations += 1
            beta = beta.copy()
            beta[bad] = np.sign(val.score[bad]) * 10 * tau_zero
            val = problem.evaluate(beta)
            q = Q(val, beta)
            converged = False
        if penalty.groups:
            break
        beta, val, q, exact = _polish(problem, penalty, beta, val, q, Q, s)
        if exact:
            converged = True
            break
        converged = converged and phase_tol == tol
    msg = "" if converged else f"no convergence after {it} LQA iterations"
    return _finish(problem, beta, val, penalty, s, it, converged, trace, msg)


def _second_derivative(penalty: PenaltySpec, b: np.ndarray, lam: np.ndarray) -> np.ndarray:
    if penalty.family == "scad":
        return np.where((b > lam) & (b < penalty.alpha * lam), -1.0 / (penalty.alpha - 1), 0.0)
    if penalty.family == "mcp":
        return np.where(b < penalty.gamma * lam, -1.0 / penalty.gamma, 0.0)
    return np.zeros_like(b)


def _polish(problem, penalty, beta, val, q, Q, s, max_iter: int = 25, tol: float = 1e-10):
    """Newton on the exact stationarity equations of the active coordinates.

    LQA leaves coordinates near an entry point at O(sqrt(eps)) instead of
    zero.  Coordinates that cross zero here are dropped; the result is
    kept only if it converges without lowering the objective.
    """
    b = beta.copy()
    v = val
    lam = zero_thresholds(penalty, problem.d)
    for _ in range(max_iter):
        a = np.flatnonzero(b != 0)
        if a.size == 0:
            break
        mag = np.abs(b[a])
        fam = "lasso" if penalty.family == "alasso" else penalty.family
        grad = v.score[a] - s * _derivative(fam, mag, lam[a], penalty.alpha, penalty.gamma) * np.sign(b[a])
        H = v.information[np.ix_(a, a)] + s * np.diag(_second_derivative(penalty, mag, lam[a]))
        if np.min(np.linalg.eigvalsh(H)) <= 0:
            return beta, val, q, False
        step = _solve(H, grad)
        new = b[a] + step
        crossed = np.sign(new) != np.sign(b[a])
        b = b.copy()
        b[a] = np.where(crossed, 0.0, new)
        v = problem.evaluate(b)
        if not crossed.any() and np.max(np.abs(step)) < tol:
            break
    else:
        return beta, val, q, False
    qn = Q(v, b)
    if qn >= q - 1e-9 and _kkt_violators(problem, penalty, v, b, s).size == 0:
        return b, v, qn, True
    return beta, val, q, False


def _univariate(z: float, v: float, lam: float, family: str, alpha: float, gamma: float) -> float:
    """argmin_b 0.5 v b^2 - z b + p_lam(|b|)."""
    az = abs(z)
    if family in ("lasso", "alasso"):
        return math.copysign(max(az - lam, 0.0), z) / v
    if family == "mcp" and v * gamma > 1:
        if az <= gamma * lam * v:
            return math.copysign(max(az - lam, 0.0), z) / (v - 1.0 / gamma)
        return z / v
    if family == "scad" and v * (alpha - 1) > 1:
        if az <= lam * (v + 1):
            return math.copysign(max(az - lam, 0.0), z) / v
        if az <= alpha * lam * v:
            return math.copysign(max(az - alpha * lam / (alpha - 1), 0.0), z) / (v - 1.0 / (alpha - 1))
        return z / v
    # nonconvex univariate problem: compare stationary candidates
    cands = {0.0, z / v, math.copysign(max(az - lam, 0.0), z) / v}
    if v != 1.0 / gamma and family == "mcp":
        cands.add(math.copysign(max(az - lam, 0.0), z) / (v - 1.0 / gamma))
    if family == "scad" and v != 1.0 / (alpha - 1):
        cands.add(math.copysign(max(az - alpha * lam / (alpha - 1), 0.0), z) / (v - 1.0 / (alpha - 1)))
    return min(cands, key=lambda b: 0.5 * v * b * b - z * b
               + float(_value(family, abs(b), lam, alpha, gamma)))


def fit_cd(ds, penalty: PenaltySpec, beta_init=None, model=None, tol: float = 1e-7,
           max_outer: int = 200, max_sweeps: int = 10000) -> FitResult:
    """Coordinate descent on the diagonal-curvature least-squares surrogate.

    The outer loop forms ``(1/2s) sum_i h_i (y_i - Z_i b)^2`` from the
    gradient and diagonal Hessian in the linear predictor; the inner loop
    cycles coordinates with the family's univariate solution.
    """
    problem = as_problem(ds, model)
    if problem.model.stratified:
        raise ValueError("coordinate descent is only available for pooled risk sets")
    if penalty.groups:
        raise ValueError("coordinate descent does not support group penalties")
    d = problem.d
    s = penalty_scale(problem)
    Z = problem.Z
    beta = np.zeros(d) if beta_init is None else np.array(beta_init, dtype=float)
    lam_j = zero_thresholds(penalty, d) if penalty.active else np.zeros(d)
    family = penalty.family if penalty.active else "lasso"

    def Q(v, b):
        return v.loglik - s * total_penalty(penalty, b)

    val = problem.evaluate(beta)
    q = Q(val, beta)
    trace = [q]
    converged = False
    it = 0
    for it in range(1, max_outer + 1):
        g, h = problem.eta_derivatives(beta)
        eta = Z @ beta
        M = (Z.T * (h / s)) @ Z
        c = Z.T @ (h * eta + g) / s
        b = beta.copy()
        Mb = M @ b
        for _ in range(max_sweeps):
            change = 0.0
            for j in range(d):
                v = M[j, j]
                if v <= 0:
                    continue
                bj = b[j]
                z = c[j] - Mb[j] + v * bj
                new = _univariate(z, v, lam_j[j], family, penalty.alpha, penalty.gamma)
                if new != bj:
                    Mb += M[:, j] * (new - bj)
                    b[j] = new
                    change = max(change, abs(new - bj))
            if change < 0.01 * tol:
                break
        direction = b - beta
        t = 1.0
        while True:
            cand = beta + t * direction
            vc = problem.evaluate(cand)
            qc = Q(vc, cand)
            if qc >= q - 1e-10 or t < 1e-6:
                break
            t *= 0.5
        if qc < q - 1e-10:
            converged = np.max(np.abs(direction)) < tol
            break
        delta = np.max(np.abs(cand - beta))
        beta, val, q = cand, vc, qc
        trace.append(q)
        if delta < tol:
            converged = True
            break
    msg = "" if converged else f"no convergence after {it} outer iterations"
    return _finish(problem, beta, val, penalty, s, it, converged, trace, msg)


def lambda_path(ds, penalty: PenaltySpec, n_lambda: int = 50, min_ratio: float = 1e-3,
                model=None) -> np.ndarray:
    """Decreasing log-spaced grid from the smallest all-zero LASSO lambda."""
    problem = as_problem(ds, model)
    s = penalty_scale(problem)
    U0 = _null_value(problem).score
    unit = penalty.unit_lambda(problem.d) if penalty.family == "alasso" or penalty.groups \
        else np.ones(problem.d)
    groups = penalty.group_list(problem.d)
    norms = np.array([np.linalg.norm(U0[g]) for g in groups])
    lam_max = float(np.max(norms / unit)) / s
    if lam_max <= 0:
        lam_max = 1.0
    return lam_max * np.exp(np.linspace(0.0, math.log(min_ratio), n_lambda))


def select_bic(path, df: Optional[str] = None) -> int:
    """Index of the smallest BIC; ties go to the larger lambda (earlier index).

    ``df`` picks the degrees-of-freedom rule (see ``FitResult.df_for``);
    by default the path's own rule, or ``"trace"`` for a plain list of fits.
    """
    if isinstance(path, PathResult):
        fits, rule = path.fits, df or path.df_rule
    else:
        fits, rule = path, df or "trace"
    bics = np.array([f.bic_for(rule) for f in fits])
    best = np.min(bics)
    return int(np.flatnonzero(bics <= best + 1e-9 * max(1.0, abs(best)))[0])


def fit_path(ds, model, family: str, n_lambda: int = 50, min_ratio: float = 1e-3,
             solver: str = "auto", alpha: float = 3.7, gamma: float = 2.7,
             groups=None, lambdas=None, mple: Optional[FitResult] = None,
             lqa_start: str = "warm", df: str = "trace") -> PathResult:
    """Fit a whole lambda path and pick the BIC-optimal fit.

    ``solver="auto"`` uses coordinate descent for the marginal model and LQA
    otherwise.  Fits are warm started along the decreasing grid;
    ``lqa_start="mple"`` starts every LQA fit from the MPLE instead.
    ``df="trace"`` counts degrees of freedom as tr[(I + sA)^-1 I] on the
    active set; ``df="active"`` counts the nonzero coefficients.
    """
    if df not in DF_RULES:
        raise ValueError(f"unknown df rule {df!r}; expected one of {DF_RULES}")
    problem = as_problem(ds, model)
    if mple is None:
        mple = fit_unpenalized(problem)
    family = family.lower()
    if family == "none":
        return PathResult(np.array([0.0]), [mple], 0, mple, problem.model, df)
    weights = None
    if family == "alasso":
        weights = alasso_weights(mple.beta, converged=mple.converged, groups=groups)
    base = PenaltySpec(family, 0.0, alpha=alpha, gamma=gamma, weights=weights, groups=groups)
    if lambdas is None:
        lambdas = lambda_path(problem, base, n_lambda, min_ratio)
    lambdas = np.asarray(lambdas, dtype=float)
    if solver == "auto":
        solver = "cd" if problem.model is ModelKind.MARGINAL and not groups else "lqa"
    fits = []
    warm = np.zeros(problem.d)
    for lam in lambdas:
        spec = base.at(lam)
        if solver == "cd":
            fit = fit_cd(problem, spec, beta_init=warm)
            warm = fit.beta
        elif solver == "lqa":
            start = mple.beta if lqa_start == "mple" or not fits else fits[-1].beta
            fit = fit_lqa(problem, spec, beta_init=start)
        else:
            raise ValueError(f"unknown solver {solver!r}")
        fits.append(fit)
    path = PathResult(lambdas, fits, 0, mple, problem.model, df)
    path.best = select_bic(path)
    return path
