"""Simulation designs for clustered competing-risks data and selection metrics.

Two generators are provided.  ``three_center`` draws a center uniformly
from three with log-normal, Gompertz and Weibull mixture baselines for the
cause of interest.  ``frailty`` draws many small centers whose cause-1
subdistribution hazard is e^{-t} v_k exp(beta'Z) with a positive stable
frailty v_k, so the marginal model stays proportional.
"""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import brentq
from scipy.stats import norm

from .data import CAUSE1, CAUSE2, CENSORED, Dataset, ModelKind, from_arrays
from .errors import DimensionMismatch, InversionFailure, MCPSHError
from .objective import PSHProblem
from .solver import DF_RULES, fit_path, fit_unpenalized, select_bic

BETA_TRUE = (0.8, 0.0, 0.0, 1.0, 0.0, 0.0, 0.6, 0.0)
PENALTIES = ("lasso", "alasso", "scad", "mcp")
THREE_CENTER_RATES = (5.0, 10.0, 2.0)
PILOT_SIZE = 20000
PILOT_SEED = 20240917


@dataclass(frozen=True)
class SimScenario:
    """One data-generating design.

    ``center_size`` is an int (fixed size) or a tuple of sizes sampled
    uniformly per center.  With ``marginal_truth`` the coefficients in
    ``beta`` are the marginal ones and data are generated with
    ``beta / alpha1``.  ``cens_upper=None`` calibrates the uniform censoring
    bound to ``cens_target``.
    """

    name: str = "custom"
    kind: str = "three_center"
    n: int = 400
    K: int = 3
    center_size: object = 2
    beta: tuple = BETA_TRUE
    p: float = 0.6
    alpha1: float = 1.0
    alpha2: float = 1.0
    rho: float = 0.5
    marginal_truth: bool = False
    censoring: str = "uniform"
    cens_upper: Optional[float] = 9.0
    cens_target: float = 0.27
    cens_set: tuple = ()
    models: tuple = ("stratified-regular",)

    def __post_init__(self):
        if self.kind not in ("three_center", "frailty"):
            raise ValueError(f"unknown scenario kind {self.kind!r}")
        if not 0 < self.p < 1:
            raise ValueError("p must lie in (0, 1)")
        if not (0 < self.alpha1 <= 1 and 0 < self.alpha2 <= 1):
            raise ValueError("frailty indices must lie in (0, 1]")
        if self.censoring not in ("uniform", "dependent", "none"):
            raise ValueError(f"unknown censoring model {self.censoring!r}")
        if self.cens_upper is not None and self.cens_upper <= 0:
            raise ValueError("censoring bound must be positive")
        if not abs(self.rho) < 1:
            raise ValueError("|rho| must be below 1")

    @property
    def d(self) -> int:
        return len(self.beta)

    @property
    def true_beta(self) -> np.ndarray:
        return np.asarray(self.beta, dtype=float)

    @property
    def generating_beta(self) -> np.ndarray:
        b = self.true_beta
        return b / self.alpha1 if self.marginal_truth else b

    @property
    def support(self) -> tuple:
        return tuple(int(j) for j in np.flatnonzero(self.true_beta != 0))


def gen_covariates(n: int, d: int = 8, rho: float = 0.5, rng=None) -> np.ndarray:
    """Standard normal rows with corr(Z_i, Z_j) = rho^|i-j| (AR(1) recursion)."""
    if not abs(rho) < 1:
        raise ValueError("|rho| must be below 1")
    rng = np.random.default_rng(rng)
    eps = rng.standard_normal((n, d))
    Z = np.empty((n, d))
    Z[:, 0] = eps[:, 0]
    s = math.sqrt(1.0 - rho * rho)
    for j in range(1, d):
        Z[:, j] = rho * Z[:, j - 1] + s * eps[:, j]
    return Z


def correlation_matrix(d: int = 8, rho: float = 0.5) -> np.ndarray:
    idx = np.arange(d)
    return rho ** np.abs(idx[:, None] - idx[None, :])


# -- three-center design ------------------------------------------------

def _base_cdf(center: int, t):
    """Proper baseline distributions H_k of the three mixtures (mass p each)."""
    t = np.asarray(t, dtype=float)
    with np.errstate(divide="ignore", over="ignore"):
        if center == 1:
            return norm.cdf((np.log(t) - 1.0) / 0.25)
        if center == 2:
            return 1.0 - np.exp(-0.018 * np.expm1(t))
        return 1.0 - np.exp(-t ** 5)


def _base_quantile(center: int, h):
    h = np.asarray(h, dtype=float)
    if center == 1:
        return np.exp(1.0 + 0.25 * norm.ppf(h))
    if center == 2:
        return np.log1p(-np.log1p(-h) / 0.018)
    return (-np.log1p(-h)) ** 0.2


def three_center_cif(center: int, t, lp, p: float = 0.6):
    """F_k1(t; Z) = 1 - {1 - p H_k(t)}^exp(lp)."""
    return 1.0 - (1.0 - p * _base_cdf(center, t)) ** np.exp(lp)


def invert_monotone(f, target: float, lo: float = 0.0, hi: float = 50.0, tol: float = 1e-10) -> float:
    """Solve f(t) = target for nondecreasing f by bracketing root search."""
    flo, fhi = f(lo) - target, f(hi) - target
    if not (np.isfinite(flo) and np.isfinite(fhi)) or flo > 0 or fhi < 0:
        raise InversionFailure(f"target {target!r} not bracketed on [{lo}, {hi}]")
    return float(brentq(lambda t: f(t) - target, lo, hi, xtol=tol, rtol=4 * np.finfo(float).eps))


def cause1_times_three_center(center: np.ndarray, lp: np.ndarray, u: np.ndarray, p: float) -> np.ndarray:
    """Invert F_k1(t)/F_k1(inf) = u in closed form for each subject."""
    r = np.exp(lp)
    finf = 1.0 - (1.0 - p) ** r
    h = (1.0 - (1.0 - u * finf) ** (1.0 / r)) / p
    h = np.clip(h, 0.0, np.nextafter(1.0, 0.0))
    t = np.empty_like(h)
    for k in (1, 2, 3):
        m = center == k
        t[m] = _base_quantile(k, h[m])
    bad = ~(np.isfinite(t) & (t > 0))
    for i in np.flatnonzero(bad):
        k = int(center[i])
        t[i] = invert_monotone(lambda s: float(three_center_cif(k, s, lp[i], p)) / finf[i], u[i],
                               lo=1e-12)
    return t


def gen_three_center(sc: SimScenario, rng) -> Dataset:
    rng = np.random.default_rng(rng)
    n = sc.n
    center = rng.integers(1, 4, size=n)
    Z = gen_covariates(n, sc.d, sc.rho, rng)
    lp1 = Z @ sc.generating_beta
    u_cause, u_time, e2 = rng.random(n), rng.random(n), rng.standard_exponential(n)
    cause1 = u_cause < 1.0 - (1.0 - sc.p) ** np.exp(lp1)
    t = np.empty(n)
    t[cause1] = cause1_times_three_center(center[cause1], lp1[cause1], u_time[cause1], sc.p)
    rate = np.asarray(THREE_CENTER_RATES)[center - 1] * np.exp(-lp1)
    t[~cause1] = e2[~cause1] / rate[~cause1]
    cause = np.where(cause1, CAUSE1, CAUSE2)
    return _censor(sc, t, cause, center, Z, rng)


# -- positive stable frailty design ---------------------------------------

def sample_positive_stable(alpha: float, rng=None, size=None):
    """Positive stable draws with Laplace transform E exp(-sV) = exp(-s^alpha).

    Kanter's representation: with U ~ Uniform(0, pi) and W ~ Exp(1),
    V = sin(aU)/sin(U)^(1/a) * (sin((1-a)U)/W)^((1-a)/a).
    """
    if not 0 < alpha <= 1:
        raise ValueError("alpha must lie in (0, 1]")
    rng = np.random.default_rng(rng)
    if alpha == 1.0:
        return 1.0 if size is None else np.ones(size)
    U = rng.uniform(0.0, math.pi, size)
    W = rng.standard_exponential(size)
    V = (np.sin(alpha * U) / np.sin(U) ** (1.0 / alpha)) * \
        (np.sin((1.0 - alpha) * U) / W) ** ((1.0 - alpha) / alpha)
    return float(V) if size is None else V


def frailty_cause1_times(rate: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Invert M0(t) = 1 - e^-t given eventual cause-1 failure.

    ``rate`` is v exp(beta'Z); the conditional CIF is 1 - exp(-M0(t) rate).
    """
    finf = -np.expm1(-rate)
    m0 = -np.log1p(-u * finf) / rate
    return -np.log1p(-np.minimum(m0, np.nextafter(1.0, 0.0)))


def center_sizes(sc: SimScenario, rng) -> np.ndarray:
    if isinstance(sc.center_size, (tuple, list)):
        return rng.choice(np.asarray(sc.center_size), size=sc.K)
    return np.full(sc.K, int(sc.center_size))


def gen_frailty_clustered(sc: SimScenario, rng) -> Dataset:
    rng = np.random.default_rng(rng)
    sizes = center_sizes(sc, rng)
    n = int(sizes.sum())
    center = np.repeat(np.arange(1, sc.K + 1), sizes)
    v1 = sample_positive_stable(sc.alpha1, rng, sc.K)[center - 1]
    v2 = sample_positive_stable(sc.alpha2, rng, sc.K)[center - 1]
    Z = gen_covariates(n, sc.d, sc.rho, rng)
    lp1 = Z @ sc.generating_beta
    u_cause, u_time, e2 = rng.random(n), rng.random(n), rng.standard_exponential(n)
    r1 = v1 * np.exp(lp1)
    cause1 = u_cause < -np.expm1(-r1)
    t = np.empty(n)
    t[cause1] = frailty_cause1_times(r1[cause1], u_time[cause1])
    rate2 = v2 * np.exp(-lp1)
    t[~cause1] = e2[~cause1] / rate2[~cause1]
    cause = np.where(cause1, CAUSE1, CAUSE2)
    return _censor(sc, t, cause, center, Z, rng)


# -- censoring ------------------------------------------------------------

def _dependent_lp(Z: np.ndarray, cens_set: Sequence[int]) -> np.ndarray:
    return 0.5 * Z[:, list(cens_set)].sum(axis=1) if len(cens_set) else np.zeros(Z.shape[0])


def censor_covariate_dependent(Z: np.ndarray, cens_set: Sequence[int], rate0: float, rng) -> np.ndarray:
    """Exponential censoring with rate rate0 * exp(0.5 * sum_{j in set} Z_j)."""
    rng = np.random.default_rng(rng)
    return rng.standard_exponential(Z.shape[0]) / (rate0 * np.exp(_dependent_lp(Z, cens_set)))


def _pilot(sc: SimScenario):
    pilot = replace(sc, censoring="none", n=PILOT_SIZE if sc.kind == "three_center" else sc.n,
                    K=sc.K if sc.kind == "three_center" else max(sc.K, PILOT_SIZE // _mean_size(sc)))
    ds = generate(pilot, np.random.default_rng(PILOT_SEED))
    return ds.time, ds.Z


def _mean_size(sc: SimScenario) -> int:
    cs = sc.center_size
    return max(1, int(round(np.mean(cs) if isinstance(cs, (tuple, list)) else cs)))


def _calibration_key(sc: SimScenario) -> SimScenario:
    return replace(sc, name="", models=(), cens_upper=None, n=0 if sc.kind == "frailty" else sc.n)


@lru_cache(maxsize=64)
def _calibrate(key: SimScenario) -> float:
    T, Z = _pilot(key)
    target = key.cens_target
    if key.censoring == "uniform":
        # P(C < T) for C ~ Uniform(0, c) is E[min(T, c)] / c
        f = lambda c: np.mean(np.minimum(T, c)) / c - target  # noqa: E731
        return float(brentq(f, 1e-6, 1e6, xtol=1e-10))
    lp = _dependent_lp(Z, key.cens_set)
    f = lambda r: np.mean(-np.expm1(-r * np.exp(lp) * T)) - target  # noqa: E731
    return float(brentq(f, 1e-9, 1e6, xtol=1e-12))


def calibrate_censoring(sc: SimScenario) -> float:
    """Uniform bound c or exponential base rate hitting ``cens_target``.

    Calibration runs on a fixed-seed uncensored pilot sample, so it is
    deterministic and independent of the study seed.
    """
    if not 0 < sc.cens_target < 1:
        raise ValueError("target censoring rate must lie in (0, 1)")
    return _calibrate(_calibration_key(sc))


def _censor(sc: SimScenario, t, cause, center, Z, rng) -> Dataset:
    n = t.size
    if sc.censoring == "none":
        status = cause
        time = t
    else:
        if sc.censoring == "uniform":
            c = sc.cens_upper if sc.cens_upper is not None else calibrate_censoring(sc)
            C = rng.uniform(0.0, c, n)
        else:
            C = censor_covariate_dependent(Z, sc.cens_set, calibrate_censoring(sc), rng)
        status = np.where(C < t, CENSORED, cause)
        time = np.minimum(t, C)
    time = np.maximum(time, np.finfo(float).tiny)
    return from_arrays(time, status, center, Z)


def generate(sc: SimScenario, rng) -> Dataset:
    """Draw one dataset from the scenario."""
    if sc.kind == "three_center":
        return gen_three_center(sc, rng)
    return gen_frailty_clustered(sc, rng)


def true_cif(sc: SimScenario, t, Z: np.ndarray, center=None) -> np.ndarray:
    """Cause-1 CIF of the generating model as an n x m array over ``t``.

    Three-center data use each subject's center; frailty data use the
    marginal form 1 - exp(-M0(t)^alpha1 exp(alpha1 beta'Z)).
    """
    t = np.atleast_1d(np.asarray(t, dtype=float))[None, :]
    lp = (np.asarray(Z, dtype=float) @ sc.generating_beta)[:, None]
    if sc.kind == "frailty":
        m0 = -np.expm1(-t)
        return -np.expm1(-m0 ** sc.alpha1 * np.exp(sc.alpha1 * lp))
    if center is None:
        raise ValueError("centers are required for the three-center design")
    center = np.asarray(center)
    out = np.empty((lp.shape[0], t.shape[1]))
    for k in (1, 2, 3):
        m = center == k
        out[m] = three_center_cif(k, t, lp[m], sc.p)
    return out


def replication_rng(seed: int, rep: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(rep)]))


# -- metrics ----------------------------------------------------------------

@dataclass
class MetricsRow:
    scenario: str
    model: str
    penalty: str
    df: str
    C: float
    IC: float
    Pcorr: float
    MMSE: float
    relMMSE: float = float("nan")
    reps: int = 0
    seed: int = 0
    failed: int = 0


def selection_metrics(estimates, beta0, corr: Optional[np.ndarray] = None) -> dict:
    """C, IC, Pcorr and MMSE over replications.

    Parameters
    ----------
    estimates : sequence of d-vectors (rows with NaN are skipped)
    beta0 : true coefficients
    corr : population correlation matrix (defaults to 0.5^|i-j|)
    """
    beta0 = np.asarray(beta0, dtype=float)
    est = np.atleast_2d(np.asarray(estimates, dtype=float))
    if est.shape[1] != beta0.size:
        raise DimensionMismatch(f"estimates have {est.shape[1]} coordinates, truth has {beta0.size}")
    corr = correlation_matrix(beta0.size) if corr is None else np.asarray(corr)
    est = est[np.all(np.isfinite(est), axis=1)]
    if est.shape[0] == 0:
        return dict(C=float("nan"), IC=float("nan"), Pcorr=float("nan"), MMSE=float("nan"), reps=0)
    zero0 = beta0 == 0
    zero = est == 0
    C = np.mean(np.sum(zero & zero0, axis=1))
    IC = np.mean(np.sum(zero & ~zero0, axis=1))
    pcorr = np.mean(np.all(zero == zero0, axis=1))
    diff = est - beta0
    mse = np.einsum("ij,jk,ik->i", diff, corr, diff)
    return dict(C=float(C), IC=float(IC), Pcorr=float(pcorr), MMSE=float(np.median(mse)),
                reps=int(est.shape[0]))


# -- studies ----------------------------------------------------------------

def _estimates_for_model(ds: Dataset, model: str, sc: SimScenario, penalties,
                         df_rules=("trace",)) -> dict:
    """Estimates keyed by method; penalized methods are keyed ``(family, rule)``."""
    out = {}
    d = sc.d
    nan = np.full(d, np.nan)
    penalized = [(fam, rule) for fam in penalties for rule in df_rules]
    try:
        problem = PSHProblem(ds, model)
        mple = fit_unpenalized(problem)
    except MCPSHError:
        return {name: nan for name in ("mple", "oracle", *penalized)}
    out["mple"] = mple.beta if mple.converged else nan
    try:
        oracle = fit_unpenalized(problem, support=sc.support)
        out["oracle"] = oracle.beta if oracle.converged else nan
    except MCPSHError:
        out["oracle"] = nan
    for fam in penalties:
        try:
            path = fit_path(problem, None, fam, mple=mple)
        except MCPSHError:
            for rule in df_rules:
                out[(fam, rule)] = nan
            continue
        for rule in df_rules:
            out[(fam, rule)] = path.fits[select_bic(path, df=rule)].beta
    return out


def run_replication(sc: SimScenario, seed: int, rep: int, penalties=PENALTIES,
                    df_rules=("trace",)) -> dict:
    """Estimates keyed by (model, method) for one replication."""
    ds = generate(sc, replication_rng(seed, rep))
    res = {}
    for model in sc.models:
        for method, b in _estimates_for_model(ds, model, sc, penalties, df_rules).items():
            res[(model, method)] = b
    return res


def _run_one(args):
    sc, seed, rep, penalties, df_rules = args
    return rep, run_replication(sc, seed, rep, penalties, df_rules)


@dataclass
class StudyResult:
    """Metrics rows of a study.

    ``estimates`` maps ``(model, method, df_rule)`` to a reps x d array;
    the MPLE and Oracle arrays do not depend on the rule and are shared.
    """

    scenario: SimScenario
    seed: int
    estimates: dict = field(repr=False)
    rows: list = field(default_factory=list)
    df_rules: tuple = ("trace",)

    def row(self, model: str, penalty: str, df: Optional[str] = None) -> MetricsRow:
        model = ModelKind.parse(model).value
        label = method_label(penalty.lower())
        rule = df or self.df_rules[0]
        for r in self.rows:
            if r.model == model and r.penalty == label and r.df == rule:
                return r
        raise KeyError((model, penalty, rule))

    def to_csv(self) -> str:
        buf = io.StringIO()
        cols = ["scenario", "model", "penalty", "C", "IC", "Pcorr", "MMSE", "relMMSE", "reps", "seed"]
        if len(self.df_rules) > 1:
            cols.append("df")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        for r in self.rows:
            rec = asdict(r)
            w.writerow([_fmt(rec[c]) for c in cols])
        return buf.getvalue()

    def to_text(self) -> str:
        lines = [f"{'model':<20}{'penalty':<8}{'df':<8}{'C':>6}{'IC':>6}{'Pcorr':>7}{'MMSE':>8}"
                 f"{'rel':>7}{'reps':>6}{'fail':>6}"]
        for r in self.rows:
            lines.append(f"{r.model:<20}{r.penalty:<8}{r.df:<8}{r.C:6.2f}{r.IC:6.2f}{r.Pcorr:7.2f}"
                         f"{r.MMSE:8.3f}{r.relMMSE:7.2f}{r.reps:6d}{r.failed:6d}")
        return "\n".join(lines)


def method_label(method: str) -> str:
    return "Oracle" if method == "oracle" else method.upper()


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.6g}"
    return v


def run_study(sc: SimScenario, reps: int, seed: int, penalties=PENALTIES, workers: int = 1,
              df_rules=("trace",)) -> StudyResult:
    """Monte Carlo study with MPLE, penalized and Oracle rows per model.

    Replication r uses the stream ``SeedSequence([seed, r])``, so results do
    not depend on ``workers``.  Each penalized path is fitted once and the
    BIC choice is made under every rule in ``df_rules``.
    """
    if reps < 1:
        raise ValueError("reps must be at least 1")
    df_rules = tuple(df_rules)
    for rule in df_rules:
        if rule not in DF_RULES:
            raise ValueError(f"unknown df rule {rule!r}")
    jobs = [(sc, seed, r, tuple(penalties), df_rules) for r in range(reps)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = dict(pool.map(_run_one, jobs))
    else:
        results = dict(map(_run_one, jobs))
    estimates = {}
    for model in sc.models:
        for m in ("mple", "oracle"):
            arr = np.vstack([results[r][(model, m)] for r in range(reps)])
            for rule in df_rules:
                estimates[(model, m, rule)] = arr
        for fam in penalties:
            for rule in df_rules:
                estimates[(model, fam, rule)] = np.vstack([results[r][(model, (fam, rule))]
                                                           for r in range(reps)])
    rows = []
    corr = correlation_matrix(sc.d, sc.rho)
    for rule in df_rules:
        for model in sc.models:
            mk = ModelKind.parse(model).value
            oracle = selection_metrics(estimates[(model, "oracle", rule)], sc.true_beta, corr)
            for m in ("mple", *penalties, "oracle"):
                met = selection_metrics(estimates[(model, m, rule)], sc.true_beta, corr)
                rel = met["MMSE"] / oracle["MMSE"] if oracle["MMSE"] > 0 else float("nan")
                rows.append(MetricsRow(sc.name, mk, method_label(m), rule, met["C"], met["IC"],
                                       met["Pcorr"], met["MMSE"], rel, met["reps"], seed,
                                       reps - met["reps"]))
    return StudyResult(sc, seed, estimates, rows, df_rules)


# -- named designs ------------------------------------------------------------

def named_scenario(name: str, n: Optional[int] = None, K: Optional[int] = None,
                   center_size=None, alpha: Optional[float] = None, model: Optional[str] = None) -> SimScenario:
    """Designs ``table1``-``table4`` and ``appendixD-a``..``appendixD-d``.

    Missing size arguments fall back to the first configuration of each
    table.  ``model`` picks the fitted model where a table has several.
    """
    key = name.lower()
    if key == "table1":
        return SimScenario(name="table1", kind="three_center", n=n or 400, K=3,
                           models=("stratified-regular",))
    if key in ("table2", "table3"):
        marginal = key == "table3"
        a = alpha if alpha is not None else 0.7
        return SimScenario(name=key, kind="frailty", K=K or 100,
                           center_size=center_size if center_size is not None else 2,
                           alpha1=a, alpha2=a, cens_upper=None,
                           cens_target=0.29 if marginal else 0.27, marginal_truth=marginal,
                           models=("marginal",) if marginal else ("stratified-high",))
    if key == "table4":
        a = alpha if alpha is not None else 0.7
        marginal = model is not None and ModelKind.parse(model) is ModelKind.MARGINAL
        models = ("marginal",) if marginal else \
            ((model,) if model else ("stratified-regular", "stratified-high"))
        return SimScenario(name="table4", kind="frailty", K=K or 50,
                           center_size=center_size if center_size is not None else 25,
                           alpha1=a, alpha2=a, cens_upper=None, cens_target=0.265,
                           marginal_truth=marginal, models=models)
    if key.startswith("appendixd-"):
        sets = {"a": (0, 3), "b": (4, 7), "c": (0, 2), "d": ()}
        tag = key[-1]
        if tag not in sets:
            raise ValueError(f"unknown scenario {name!r}")
        high = model is not None and ModelKind.parse(model) is ModelKind.STRATIFIED_HIGH
        if high:
            base = SimScenario(name=name, kind="frailty", K=K or 100, center_size=center_size or (2, 3, 4, 5),
                               alpha1=0.7, alpha2=0.7, cens_upper=None, cens_target=0.27,
                               models=("stratified-high",))
        else:
            base = SimScenario(name=name, kind="three_center", n=n or 200, K=3, cens_target=0.28,
                               models=("stratified-regular",))
        if tag == "d":
            return base
        return replace(base, censoring="dependent", cens_set=sets[tag], cens_upper=None)
    raise ValueError(f"unknown scenario {name!r}")


SCENARIOS = ("table1", "table2", "table3", "table4",
             "appendixD-a", "appendixD-b", "appendixD-c", "appendixD-d")
