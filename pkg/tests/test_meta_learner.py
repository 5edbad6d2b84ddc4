import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from recmeta.code_metrics import FEATURE_NAMES as ALGO_FEATURES
from recmeta.ground_truth import PerformanceMatrix
from recmeta.meta_learner import (
    GBTParams,
    MetaModel,
    SchemaError,
    best_split,
    build_user_algo_dataset,
    build_user_only_dataset,
    fit_gbt,
    fit_tree,
    rank_algorithms,
    select,
    train_meta_model,
)
from recmeta.synthetic import planted_rule, planted_threshold
from recmeta.user_features import FEATURES as USER_FEATURES

import oracles

STUMP = GBTParams(n_trees=1, max_depth=1, learning_rate=1.0, min_samples_leaf=1, subsample=1.0)


def tiny(n_users=3, n_algos=2, seed=0):
    rng = np.random.default_rng(seed)
    users = tuple(f"u{n}" for n in range(n_users))
    algos = tuple(f"a{j}" for j in range(n_algos))
    P = PerformanceMatrix(rng.random((n_users, n_algos)), users, algos)
    F = {u: rng.normal(size=15) for u in users}
    A = {a: rng.uniform(1, 50, size=14) for a in algos}
    return P, F, A


# trees and boosting ---------------------------------------------------------

def test_split_matches_brute_force_1d():
    rng = np.random.default_rng(0)
    for _ in range(100):
        n = int(rng.integers(2, 30))
        x = rng.integers(0, 8, size=n).astype(float)  # repeated values on purpose
        y = rng.normal(size=n)
        want = oracles.brute_split_1d(x, y, 1)
        model = fit_gbt(x[:, None], y, STUMP)
        tree = model.trees[0]
        if want is None:
            assert tree.feature[0] == -1
            continue
        threshold, gain = want
        assert tree.feature[0] == 0
        assert tree.threshold[0] == threshold
        got = best_split(x[:, None], y, 1)
        assert got[2] == pytest.approx(gain, rel=1e-9, abs=1e-12)


def test_split_agrees_with_reference_on_many_features():
    rng = np.random.default_rng(1)
    for _ in range(300):
        n, f = int(rng.integers(2, 60)), int(rng.integers(1, 6))
        X = rng.integers(0, 5, size=(n, f)).astype(float)
        y = rng.normal(size=n)
        leaf = int(rng.integers(1, 4))
        ref = best_split(X, y, leaf)
        tree = fit_tree(X, y, max_depth=1, min_samples_leaf=leaf)
        if ref is None:
            assert tree.feature[0] == -1
        else:
            assert (tree.feature[0], tree.threshold[0]) == (ref[0], ref[1])


def test_zero_trees_predict_mean():
    X = np.arange(10.0)[:, None]
    y = np.linspace(0, 1, 10)
    model = fit_gbt(X, y, GBTParams(n_trees=0))
    assert np.array_equal(model.predict(X), np.full(10, np.mean(y)))


def test_constant_target():
    model = fit_gbt(np.random.default_rng(0).normal(size=(30, 3)), np.full(30, 0.25))
    assert np.allclose(model.predict(np.zeros((4, 3))), 0.25, atol=1e-15)


def test_step_target_is_learned():
    x = np.linspace(-1, 1, 200)
    X = np.column_stack([x, np.random.default_rng(0).normal(size=200)])
    y = (x > 0.1).astype(float)
    model = fit_gbt(X, y, GBTParams(n_trees=200, max_depth=2, learning_rate=0.1, min_samples_leaf=1, subsample=1.0))
    assert np.mean((model.predict(X) - y) ** 2) < 1e-6


def test_training_mse_non_increasing():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(60, 4))
    y = rng.random(60)
    model = fit_gbt(X, y, GBTParams(n_trees=40, max_depth=None, min_samples_leaf=1, subsample=1.0))
    mse = [np.mean((p - y) ** 2) for p in model.staged_predict(X)]
    assert all(b <= a + 1e-15 for a, b in zip(mse, mse[1:]))
    assert mse[-1] < mse[0]


def test_non_finite_input_rejected():
    with pytest.raises(ValueError):
        fit_gbt(np.array([[np.nan]]), np.array([0.0]))
    with pytest.raises(ValueError):
        fit_gbt(np.zeros((0, 2)), np.zeros(0))


def test_params_validation():
    for bad in ({"n_trees": -1}, {"learning_rate": 0}, {"subsample": 1.5}, {"min_samples_leaf": 0}):
        with pytest.raises(ValueError):
            GBTParams(**bad)


def test_truncate_equals_shorter_fit():
    rng = np.random.default_rng(3)
    X, y = rng.normal(size=(80, 3)), rng.random(80)
    long = fit_gbt(X, y, GBTParams(n_trees=30, min_samples_leaf=2, seed=5))
    short = fit_gbt(X, y, GBTParams(n_trees=12, min_samples_leaf=2, seed=5))
    assert np.array_equal(long.truncate(12).predict(X), short.predict(X))


@settings(max_examples=15, deadline=None)
@given(st.floats(-5, 5), st.integers(0, 2**16))
def test_constant_shift(c, seed):
    rng = np.random.default_rng(seed)
    X, y = rng.normal(size=(40, 3)), rng.random(40)
    params = GBTParams(n_trees=10, min_samples_leaf=3, seed=seed)
    a = fit_gbt(X, y, params).predict(X)
    b = fit_gbt(X, y + c, params).predict(X)
    assert np.allclose(b - a, c, atol=1e-9)


def test_determinism():
    P, F, A = planted_threshold(n_users=60, seed=4)
    data = build_user_algo_dataset(P, F, A)
    m1 = train_meta_model(data, GBTParams(n_trees=20, seed=9))
    m2 = train_meta_model(data, GBTParams(n_trees=20, seed=9))
    assert m1.to_json() == m2.to_json()


# meta-datasets --------------------------------------------------------------

def test_user_only_shape_and_order():
    P, F, _ = tiny()
    d = build_user_only_dataset(P, F)
    assert d.rows.shape == (3, 15) and d.targets.shape == (3, 2)
    assert d.algo_ids == P.algo_ids
    assert np.array_equal(d.targets, P.values)


def test_missing_user_named():
    P, F, A = tiny()
    del F["u1"]
    with pytest.raises(KeyError, match="u1"):
        build_user_only_dataset(P, F)
    with pytest.raises(KeyError, match="u1"):
        build_user_algo_dataset(P, F, A)


def test_user_algo_cross_product():
    P, F, A = tiny(3, 9)
    d = build_user_algo_dataset(P, F, A)
    assert d.rows.shape == (27, 29)
    assert d.feature_names == USER_FEATURES + ALGO_FEATURES
    for n, (u, a) in enumerate(d.row_keys):
        assert d.targets[n] == P.values[P.user_ids.index(u), P.algo_ids.index(a)]
    del A["a4"]
    with pytest.raises(KeyError, match="a4"):
        build_user_algo_dataset(P, F, A)


def test_identical_algorithms_predict_identically():
    P, F, A = tiny(40, 3, seed=5)
    V = P.values.copy()
    V[:, 2] = V[:, 1]
    P = PerformanceMatrix(V, P.user_ids, P.algo_ids)
    A["a2"] = A["a1"].copy()
    model = train_meta_model(build_user_algo_dataset(P, F, A), GBTParams(n_trees=15, min_samples_leaf=2))
    pred = model.predict_matrix(np.array([F[u] for u in P.user_ids]), A)
    assert np.array_equal(pred[:, 1], pred[:, 2])


def test_constant_algo_features_carry_no_signal():
    P, F, A = tiny(40, 4, seed=6)
    A = {a: np.ones(14) for a in A}
    model = train_meta_model(build_user_algo_dataset(P, F, A), GBTParams(n_trees=20, min_samples_leaf=2))
    pred = model.predict_matrix(np.array([F[u] for u in P.user_ids]), A)
    assert np.all(pred == pred[:, :1])


# selection ------------------------------------------------------------------

def test_rank_tie_rule():
    assert [a for a, _ in rank_algorithms([0.3, 0.7, 0.7], ["a", "b", "c"])] == ["b", "c", "a"]
    assert [a for a, _ in rank_algorithms([0.7, 0.7], ["c", "b"])] == ["b", "c"]


def test_portfolio_of_one():
    P, F, A = tiny(10, 1)
    model = train_meta_model(build_user_only_dataset(P, F), GBTParams(n_trees=3, min_samples_leaf=1))
    assert [a for a, _ in select(model, F["u0"])] == ["a0"]


def test_select_schema_errors():
    P, F, A = tiny(10, 2)
    model = train_meta_model(build_user_algo_dataset(P, F, A), GBTParams(n_trees=2, min_samples_leaf=1))
    feats = dict(zip(USER_FEATURES, F["u0"]))
    assert len(select(model, feats, A)) == 2
    bad = dict(feats, bogus=1.0)
    del bad["n_interactions"]
    with pytest.raises(SchemaError, match="n_interactions.*bogus"):
        select(model, bad, A)
    with pytest.raises(SchemaError):
        select(model, F["u0"][:5], A)
    with pytest.raises(SchemaError):
        select(model, F["u0"])


def test_planted_rule_recovered_on_held_out_users():
    P, F, A = planted_threshold(n_users=400, seed=11)
    train_users, test_users = P.user_ids[:300], P.user_ids[300:]
    model = train_meta_model(build_user_algo_dataset(P.rows(train_users), F, A), GBTParams(n_trees=100, seed=0))
    truth = planted_rule(F)
    hits = [select(model, F[u], A)[0][0] == truth[u] for u in test_users]
    assert np.mean(hits) >= 0.95


def test_model_json_round_trip():
    P, F, A = tiny(30, 3)
    for data in (build_user_only_dataset(P, F), build_user_algo_dataset(P, F, A)):
        model = train_meta_model(data, GBTParams(n_trees=8, min_samples_leaf=2, seed=1))
        again = MetaModel.from_json(model.to_json())
        U = np.array([F[u] for u in P.user_ids])
        assert np.array_equal(model.predict_matrix(U, A), again.predict_matrix(U, A))
        assert again.params == model.params


def test_model_json_version_checked():
    P, F, _ = tiny()
    model = train_meta_model(build_user_only_dataset(P, F), GBTParams(n_trees=1, min_samples_leaf=1))
    d = json.loads(model.to_json())
    d["version"] = 99
    with pytest.raises(ValueError, match="version"):
        MetaModel.from_json(json.dumps(d))
