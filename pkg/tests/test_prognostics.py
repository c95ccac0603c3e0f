import json

import numpy as np
import pytest

from mcpsh.data import ModelKind, build_dataset, from_arrays
from mcpsh.errors import (DegeneratePI, HighStratificationUnsupported, HorizonBeyondSupport,
                          MissingFactor, NoEvaluablePairs)
from mcpsh.prognostics import (KAPPA, breslow_baseline, c_index, d_index, load_coefficient_table,
                               prediction_error, rankits, score_prognostic_index, split_eval,
                               split_indices)
from mcpsh.simulate import SimScenario, generate, named_scenario, replication_rng
from mcpsh.solver import fit_path, fit_unpenalized

from .conftest import random_dataset


def _zero_fit(ds, model="pooled"):
    return fit_unpenalized(ds, model, support=())


def test_zero_beta_baseline_is_nelson_aalen():
    t = np.array([1.0, 2.0, 2.0, 3.0, 4.0, 5.0])
    ds = from_arrays(t, np.ones(6, dtype=int), np.ones(6, dtype=int), np.zeros((6, 1)))
    base = breslow_baseline(_zero_fit(ds), ds)
    expect = np.cumsum([1 / 6, 2 / 5, 1 / 3, 1 / 2, 1 / 1])
    np.testing.assert_allclose(base.cumhaz([1.0, 2.0, 3.0, 4.0, 5.0]), expect)
    assert base.cumhaz(0.5) == 0.0


def test_predicted_cif_is_monotone_and_bounded():
    ds = random_dataset(41, n=80, K=3, d=2, beta=[0.6, -0.4])
    fit = fit_unpenalized(ds, "stratified-regular")
    base = breslow_baseline(fit, ds)
    grid = np.linspace(0, ds.time.max() * 1.1, 50)
    for k in ds.centers:
        lo, hi = base.cif(grid, -1.0, k), base.cif(grid, 1.0, k)
        assert np.all(np.diff(lo) >= 0) and np.all((lo >= 0) & (hi <= 1))
        assert np.all(hi >= lo)
    assert np.all(np.isnan(base.cumhaz(grid, 999)))
    with pytest.raises(ValueError):
        base.predict(ds.Z, fit.beta)


def test_highly_stratified_baseline_refused():
    ds = random_dataset(42, n=60, K=10, d=2)
    with pytest.raises(HighStratificationUnsupported):
        breslow_baseline(fit_unpenalized(ds, "stratified-high"), ds)


def test_baseline_recovers_known_cif_without_frailty():
    sc = SimScenario(kind="frailty", K=1000, center_size=2, alpha1=1.0, alpha2=1.0,
                     cens_upper=None, cens_target=0.27)
    ds = generate(sc, np.random.default_rng(43))
    fit = fit_unpenalized(ds, "pooled")
    base = breslow_baseline(fit, ds)
    grid = np.linspace(0.01, np.quantile(ds.time, 0.9), 200)
    truth = -np.expm1(np.expm1(-grid))
    assert np.max(np.abs(base.cif(grid, 0.0) - truth)) < 0.05


def test_c_index_perfect_and_constant():
    t = np.arange(1.0, 11.0)
    ds = from_arrays(t, np.ones(10, dtype=int), np.ones(10, dtype=int), np.zeros((10, 1)))
    assert c_index(ds, -t) == 1.0
    assert c_index(ds, t) == 0.0
    assert c_index(ds, np.zeros(10)) == 0.5


def test_c_index_pairs_by_hand():
    # subject 0 fails from the competing cause at 1 and stays comparable with later failures
    ds = build_dataset([(1.0, 2, 1, [0]), (2.0, 1, 1, [0]), (3.0, 0, 1, [0]), (4.0, 1, 1, [0])])
    PI = np.array([2.0, 1.0, 0.0, 0.5])
    # evaluable: (1,0) (1,2) (1,3) (3,0); concordant: (1,2) (1,3)
    assert c_index(ds, PI) == pytest.approx(2 / 4)
    assert c_index(ds, PI, tau=3.0) == pytest.approx(2 / 3)


def test_c_index_random_pi_is_half():
    sc = named_scenario("table1", n=500)
    ds = generate(sc, replication_rng(44, 0))
    vals = [c_index(ds, np.random.default_rng(s).standard_normal(ds.n)) for s in range(5)]
    assert abs(np.mean(vals) - 0.5) < 0.05


def test_c_index_errors():
    ds = from_arrays([1.0, 2.0], [0, 0], [1, 1], np.zeros((2, 1)))
    with pytest.raises(NoEvaluablePairs):
        c_index(ds, np.array([0.0, 1.0]))
    with pytest.raises(ValueError):
        c_index(ds, np.zeros(3))


def test_rank_invariance():
    ds = generate(named_scenario("table1", n=300), replication_rng(45, 0))
    PI = ds.Z @ np.array([0.8, 0, 0, 1.0, 0, 0, 0.6, 0])
    assert c_index(ds, 2 * PI + 7) == c_index(ds, PI)
    assert d_index(ds, 2 * PI + 7) == d_index(ds, PI)
    assert d_index(ds, np.exp(PI)) == d_index(ds, PI)
    assert d_index(ds, -PI) == d_index(ds, PI) >= 0


def test_rankits_are_scaled_blom_scores():
    r = rankits([3.0, 1.0, 2.0])
    np.testing.assert_allclose(r * KAPPA, [0.8694, -0.8694, 0.0], atol=1e-3)


def test_d_index_null_and_degenerate():
    sc = SimScenario(kind="frailty", K=500, center_size=2, beta=(0.0,) * 8, cens_upper=None)
    ds = generate(sc, np.random.default_rng(46))
    assert abs(d_index(ds, np.random.default_rng(0).standard_normal(ds.n))) < 0.1
    with pytest.raises(DegeneratePI):
        d_index(ds, np.ones(ds.n))


def test_d_index_grows_with_effect_size():
    vals = []
    for b in (0.2, 0.5, 1.0):
        sc = SimScenario(kind="frailty", K=500, center_size=2, beta=(b,) + (0.0,) * 7, cens_upper=None)
        ds = generate(sc, np.random.default_rng(47))
        vals.append(d_index(ds, ds.Z[:, 0]))
    assert vals[0] < vals[1] < vals[2]


def _uncensored(times, status):
    n = len(times)
    return from_arrays(times, status, np.ones(n, dtype=int), np.zeros((n, 1)))


def test_prediction_error_zero_predictor():
    ds = _uncensored([5.0, 6.0, 7.0], [1, 2, 1])
    assert prediction_error(ds, lambda g: np.zeros((3, g.size)), 4.0) == 0.0


def test_prediction_error_constant_half():
    ds = _uncensored([5.0, 6.0, 7.0], [1, 2, 1])
    pe = prediction_error(ds, lambda g: np.full((3, g.size), 0.5), 4.0)
    assert pe == pytest.approx(0.25 * 4.0)


def test_prediction_error_hand_example():
    # Brier score is 0, 1/2, 1/2 on the grid 0, 1, 2
    ds = _uncensored([1.0, 3.0], [1, 1])
    pe = prediction_error(ds, lambda g: np.zeros((2, g.size)), 2.0)
    assert pe == pytest.approx(0.25 + 0.5)


def test_prediction_error_beyond_support():
    ds = _uncensored([1.0, 2.0, 3.0], [1, 1, 0])
    with pytest.raises(HorizonBeyondSupport):
        prediction_error(ds, lambda g: np.zeros((3, g.size)), 3.5)
    with pytest.raises(ValueError):
        prediction_error(ds, lambda g: np.zeros((3, g.size)), 0.0)


def test_split_indices_rules():
    ds = random_dataset(48, n=100, K=5, d=2)
    rng = np.random.default_rng(0)
    tr, te = split_indices(ds, ModelKind.STRATIFIED_REGULAR, 0.8, rng)
    for k, idx in ds.strata.items():
        assert np.isin(idx, tr).sum() == round(0.8 * idx.size)
    tr, te = split_indices(ds, ModelKind.MARGINAL, 0.8, rng)
    assert not set(ds.center[tr]) & set(ds.center[te])
    assert len(set(ds.center[tr])) == 4
    tr, te = split_indices(ds, ModelKind.POOLED, 1.0, rng)
    np.testing.assert_array_equal(tr, te)


def test_split_eval_single_split_and_determinism():
    ds = random_dataset(49, n=120, K=3, d=3, beta=[0.8, 0.0, -0.6])
    a = split_eval(ds, "stratified-regular", "lasso", splits=1, seed=3, n_lambda=10)
    assert a.c.shape == (1,) and a.failed == 0
    assert a.summary()["c_index"]["se"] == 0.0
    b = split_eval(ds, "stratified-regular", "lasso", splits=1, seed=3, n_lambda=10)
    assert a.summary() == b.summary()


def test_split_eval_full_training_is_in_sample():
    ds = random_dataset(50, n=100, K=3, d=3, beta=[0.8, 0.0, -0.6])
    rep = split_eval(ds, "stratified-regular", "scad", splits=1, train_fraction=1.0, n_lambda=15)
    fit = fit_path(ds, "stratified-regular", "scad", n_lambda=15).selected
    PI = ds.Z @ fit.beta
    h = float(np.quantile(ds.time[ds.status == 1], 0.75))
    base = breslow_baseline(fit, ds)
    assert rep.c[0] == c_index(ds, PI)
    assert rep.d[0] == d_index(ds, PI)
    assert rep.pe[0] == prediction_error(ds, base.predict(ds.Z, fit.beta, ds.center), h)


@pytest.mark.filterwarnings("ignore:.*strata without cause-1 events")
def test_split_eval_high_has_no_prediction_error():
    ds = random_dataset(51, n=120, K=30, d=2, beta=[0.8, 0.0])
    rep = split_eval(ds, "stratified-high", "lasso", splits=2, n_lambda=10)
    assert rep.pe is None and "pe" not in rep.summary()


@pytest.mark.slow
def test_split_eval_sanity_band():
    sc = named_scenario("table4", K=50, center_size=50, model="stratified-regular")
    ds = generate(sc, replication_rng(52, 0))
    rep = split_eval(ds, "stratified-regular", "scad", splits=20, seed=1)
    s = rep.summary()["c_index"]
    assert 0.55 <= s["mean"] <= 0.95 and s["se"] < 0.05


def test_score_reference_and_examples():
    table = load_coefficient_table()
    ref = table["reference"]
    assert score_prognostic_index(table, ref) == (0.0, 1.0)
    pi, idx = score_prognostic_index(table, {**ref, "age": 50})
    assert pi == pytest.approx(0.12, abs=1e-12) and idx == pytest.approx(np.exp(0.12))
    pi, _ = score_prognostic_index(table, {**ref, "african_american": 1, "hypertension": 1})
    assert pi == pytest.approx(0.306, abs=1e-12)


def test_score_vectorized_and_missing_factor(tmp_path):
    table = load_coefficient_table()
    ref = table["reference"]
    cols = {k: np.array([v, v]) for k, v in ref.items()}
    cols["age"] = np.array([40.0, 60.0])
    pi, idx = score_prognostic_index(table, cols)
    assert pi[0] == 0.0 and pi[1] == pytest.approx(0.012 * 20 + 0.019 * 10)
    with pytest.raises(MissingFactor):
        score_prognostic_index(table, {k: v for k, v in ref.items() if k != "creatinine"})
    path = tmp_path / "t.json"
    path.write_text(json.dumps(table))
    assert load_coefficient_table(path) == table
