import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from recmeta.experiment import (
    UNDEFINED,
    ExperimentConfig,
    ExperimentReport,
    ReportRow,
    average_row,
    evaluate_selector,
    fit_fold_models,
    make_folds,
    run_meta_experiment,
    _holdout_split,
    tune_gbt,
)
from recmeta.ground_truth import PerformanceMatrix
from recmeta.meta_learner import GBTParams, build_user_only_dataset, train_meta_model
from recmeta.synthetic import planted_threshold

FAST = (GBTParams(n_trees=10, max_depth=2, min_samples_leaf=5),)


def pm(rows):
    rows = np.asarray(rows, dtype=float)
    return PerformanceMatrix(rows, tuple(f"u{n}" for n in range(len(rows))), tuple(f"a{j}" for j in range(rows.shape[1])))


# folds ----------------------------------------------------------------------

def test_ten_users_five_folds():
    plan = make_folds([f"u{n}" for n in range(10)], 5, seed=3)
    assert sorted(len(plan.test_users(k)) for k in range(5)) == [2] * 5


@settings(max_examples=50)
@given(st.integers(2, 60), st.integers(2, 7), st.integers(0, 10**6))
def test_fold_properties(n_users, n_folds, seed):
    users = [f"u{n}" for n in range(n_users)]
    if n_users < n_folds:
        with pytest.raises(ValueError):
            make_folds(users, n_folds, seed)
        return
    plan = make_folds(users, n_folds, seed)
    sizes = [len(plan.test_users(k)) for k in range(n_folds)]
    assert max(sizes) - min(sizes) <= 1
    assert sorted(u for k in range(n_folds) for u in plan.test_users(k)) == sorted(users)
    assert make_folds(users, n_folds, seed).assignments == plan.assignments
    for k in range(n_folds):
        assert not set(plan.test_users(k)) & set(plan.train_users(k))


# tuning ---------------------------------------------------------------------

def test_grid_of_one_untouched():
    P, F, _ = planted_threshold(n_users=20)
    data = build_user_only_dataset(P, F)
    only = GBTParams(n_trees=7, max_depth=4, learning_rate=0.3, min_samples_leaf=2, subsample=0.5, seed=0)
    assert tune_gbt(data, [only]) == only


def test_shallow_trees_win_when_deep_ones_overfit():
    # one-feature step plus heavy noise: depth 6 with tiny leaves memorises noise
    rng = np.random.default_rng(0)
    n = 300
    F = {f"u{i:03d}": rng.normal(size=15) for i in range(n)}
    users = sorted(F)
    y = np.array([0.4 + 0.2 * (F[u][0] > 0) for u in users]) + rng.normal(0, 0.15, n)
    P = PerformanceMatrix(np.clip(y, 0, 1)[:, None], tuple(users), ("a0",))
    data = build_user_only_dataset(P, F)
    grid = [GBTParams(n_trees=100, max_depth=d, learning_rate=0.1, min_samples_leaf=1, subsample=1.0) for d in (3, 6)]
    assert tune_gbt(data, grid, seed=1).max_depth == 3
    assert tune_gbt(data, grid, seed=1) == tune_gbt(data, grid, seed=1)


def test_tuning_shared_fits_match_separate_fits():
    P, F, _ = planted_threshold(n_users=80, seed=2)
    data = build_user_only_dataset(P, F)
    grid = [GBTParams(n_trees=t, max_depth=2, min_samples_leaf=5) for t in (5, 20, 40)]
    chosen = tune_gbt(data, grid, seed=4)
    # brute force: each grid point fitted on its own
    inner, hold = _holdout_split(sorted(P.user_ids), 0.2, 4)
    errs = []
    for g in grid:
        m = train_meta_model(data.for_users(inner), replace(g, seed=4))
        ev = data.for_users(hold)
        pred = np.column_stack([r.predict(ev.rows) for r in m.regressors])
        errs.append(float(np.mean((pred - ev.targets) ** 2)))
    assert chosen.n_trees == grid[int(np.argmin(errs))].n_trees


# selector evaluation --------------------------------------------------------

def test_oracle_selector_hits_vba():
    rng = np.random.default_rng(0)
    P = pm(rng.random((30, 5)))
    picks = [[P.algo_ids[int(np.argmax(r))]] + list(P.algo_ids) for r in P.values]
    m = evaluate_selector(P, picks)
    assert m.avg_ndcg == pytest.approx(float(P.values.max(axis=1).mean()), abs=1e-15)
    assert m.acc1 == 100.0


def test_top3_covers_three_algorithms():
    rng = np.random.default_rng(1)
    P = pm(rng.random((20, 3)))
    picks = [list(rng.permutation(P.algo_ids)) for _ in range(20)]
    assert evaluate_selector(P, picks).acc3 == 100.0


def test_value_ties_count_as_correct():
    P = pm([[0.5, 0.5, 0.1]])
    m = evaluate_selector(P, [["a1", "a0", "a2"]])
    assert (m.acc1, m.acc1_index, m.acc3_index) == (100.0, 0.0, 100.0)
    assert m.accuracy("index") == (0.0, 100.0)


def test_zero_rows_reported():
    P = pm([[0, 0], [0.2, 0.1]])
    m = evaluate_selector(P, {"u0": ["a1", "a0"], "u1": ["a1", "a0"]})
    assert m.zero_row_rate == 50.0
    assert m.acc1 == 50.0  # the zero row counts as a hit
    with pytest.raises(KeyError):
        evaluate_selector(P, {"u0": ["a0"]})


# report arithmetic ----------------------------------------------------------

def row(name, sba, vba, user, ua, sba_algo="x"):
    return ReportRow(name, sba_algo, sba, vba, user, 20.0, 60.0, ua, 21.0, 62.0)


def test_derived_columns():
    r = row("MovieLens", 0.284, 0.616, 0.331, 0.332)
    assert r.gain_vs_sba == pytest.approx(100 * 0.048 / 0.284)
    assert abs(r.gain_vs_sba - 16.99) < 0.2
    assert r.gap_closed == pytest.approx(100 * 0.048 / 0.332)
    avg = row("Average", 0.131, 0.282, 0.135, 0.147)
    assert avg.gap_closed == pytest.approx(100 * 0.016 / 0.151)
    assert abs(avg.gap_closed - 10.49) < 0.2


def test_zero_denominators_are_undefined():
    r = row("flat", 0.3, 0.3, 0.0, 0.3)
    assert r.gap_closed is None and r.gain_vs_user_ml is None
    rep = ExperimentReport.from_rows([r])
    assert UNDEFINED in rep.to_csv().splitlines()[1].split(",")
    assert UNDEFINED in rep.to_text()


def test_average_is_plain_mean():
    rng = np.random.default_rng(3)
    rows = [row(f"d{i}", *sorted(rng.random(2)), *rng.random(2)) for i in range(6)]
    avg = average_row(rows)
    for c in ("sba_perf", "vba_perf", "perf_user_only", "perf_user_algo", "acc1_user_algo"):
        assert getattr(avg, c) == pytest.approx(math.fsum(getattr(r, c) for r in rows) / 6, abs=1e-12)
    # derived columns come from the averaged perf columns, not from averaging ratios
    assert avg.gap_closed == pytest.approx(
        100 * (avg.perf_user_algo - avg.sba_perf) / (avg.vba_perf - avg.sba_perf), abs=1e-12
    )


def test_dominant_algorithm_gives_undefined_gap():
    rng = np.random.default_rng(4)
    V = rng.random((40, 3)) * 0.5
    V[:, 1] = 0.9
    P = PerformanceMatrix(V, tuple(f"u{n:02d}" for n in range(40)), ("a0", "a1", "a2"))
    F = {u: rng.normal(size=15) for u in P.user_ids}
    A = {a: rng.uniform(1, 9, 14) for a in P.algo_ids}
    rep = run_meta_experiment(P, F, A, ExperimentConfig(n_folds=4, grid=FAST), "dom")
    r = rep.rows[0]
    assert r.sba_algo == "a1" and r.sba_perf == r.vba_perf == pytest.approx(0.9)
    assert r.perf_user_only == pytest.approx(0.9) and r.perf_user_algo == pytest.approx(0.9)
    assert r.gap_closed is None


# experiment runs ------------------------------------------------------------

@pytest.fixture(scope="module")
def planted():
    return planted_threshold(n_users=60, seed=5)


def test_report_round_trip(tmp_path, planted):
    P, F, A = planted
    rep = run_meta_experiment(P, F, A, ExperimentConfig(n_folds=3, grid=FAST), "planted")
    again = ExperimentReport.from_json(rep.to_json())
    assert again.to_json() == rep.to_json()
    assert again.to_csv() == rep.to_csv()
    paths = rep.write(tmp_path)
    assert sorted(paths) == ["csv", "json", "txt"]
    assert len(rep.table()[0]) == 13 and len(rep.table()) == 3


def test_threads_and_reruns_identical(planted):
    P, F, A = planted
    a = run_meta_experiment(P, F, A, ExperimentConfig(n_folds=3, grid=FAST, threads=1), "p")
    b = run_meta_experiment(P, F, A, ExperimentConfig(n_folds=3, grid=FAST, threads=3), "p")
    assert a.to_json() == b.to_json()


def test_global_sba_changes_only_sba(planted):
    P, F, A = planted
    a = run_meta_experiment(P, F, A, ExperimentConfig(n_folds=3, grid=FAST), "p").rows[0]
    b = run_meta_experiment(P, F, A, ExperimentConfig(n_folds=3, grid=FAST, sba_global=True), "p").rows[0]
    assert (a.perf_user_only, a.perf_user_algo, a.vba_perf) == (b.perf_user_only, b.perf_user_algo, b.vba_perf)


def test_test_fold_does_not_reach_models(planted):
    P, F, A = planted
    plan = make_folds(P.user_ids, 3, 0)
    train, test = plan.train_users(0, P.user_ids), plan.test_users(0, P.user_ids)
    config = ExperimentConfig(n_folds=3, grid=FAST + (GBTParams(n_trees=5, max_depth=3, min_samples_leaf=3),))
    base = fit_fold_models(P, F, A, train, config, seed=0)
    # scramble everything known about the test users
    V = P.values.copy()
    idx = [P.user_ids.index(u) for u in test]
    V[idx] = np.random.default_rng(9).random((len(idx), V.shape[1]))
    F2 = dict(F, **{u: F[u] * -3 + 1 for u in test})
    moved = fit_fold_models(PerformanceMatrix(V, P.user_ids, P.algo_ids), F2, A, train, config, seed=0)
    for m1, m2 in zip(base, moved):
        assert m1.to_json() == m2.to_json()


def test_config_validation():
    with pytest.raises(ValueError):
        ExperimentConfig(n_folds=1)
    with pytest.raises(ValueError):
        ExperimentConfig(tie_mode="both")
    with pytest.raises(ValueError):
        ExperimentConfig(grid=())
