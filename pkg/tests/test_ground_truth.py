import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from recmeta import portfolio as pf
from recmeta.dataset import Dataset, Interaction, temporal_split
from recmeta.ground_truth import (
    FitFailure,
    PerformanceMatrix,
    baselines,
    build_performance_matrix,
    ndcg_at_k,
    read_matrix,
    single_best,
    virtual_best,
    write_matrix,
)
from recmeta.portfolio.base import RankedList
from recmeta.synthetic import toy_interactions

import oracles


def test_ndcg_examples():
    assert ndcg_at_k([3, 1, 2], {1, 3}, 10) == 1.0
    assert ndcg_at_k([5, 7], {7}, 10) == pytest.approx(1 / math.log2(3), abs=1e-9)
    assert ndcg_at_k([5, 6, 8], {7}, 10) == 0.0
    assert ndcg_at_k(RankedList(np.array([7]), np.array([1.0])), {7}) == 1.0


def test_ndcg_errors():
    with pytest.raises(ValueError):
        ndcg_at_k([1], set(), 10)
    with pytest.raises(ValueError):
        ndcg_at_k([1], {1}, 0)


def test_ndcg_matches_oracle_on_random_cases():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        n_items = int(rng.integers(1, 40))
        ranked = rng.permutation(n_items)[: int(rng.integers(0, n_items + 1))].tolist()
        relevant = set(rng.choice(n_items, size=int(rng.integers(1, n_items + 1)), replace=False).tolist())
        k = int(rng.integers(1, 15))
        assert abs(ndcg_at_k(ranked, relevant, k) - oracles.ndcg(ranked, relevant, k)) <= 1e-12


def matrix(rows, algos=None):
    rows = np.asarray(rows, dtype=float)
    algos = algos or tuple(f"a{j}" for j in range(rows.shape[1]))
    return PerformanceMatrix(rows, tuple(f"u{n}" for n in range(len(rows))), tuple(algos))


def test_baseline_examples():
    assert single_best(matrix([[0.1, 0.4], [0.3, 0.6]])) == ("a1", 0.5)
    assert single_best(matrix([[0.5, 0.5]], ("b", "a"))) == ("a", 0.5)
    assert virtual_best(matrix([[0.1, 0.9], [0.8, 0.2]])) == pytest.approx(0.85)
    one = matrix([[0.2], [0.4]])
    assert virtual_best(one) == single_best(one)[1]
    same = matrix([[0.3, 0.3], [0.1, 0.1]])
    s = baselines(same)
    assert s.sba_perf == s.vba_perf


def test_matrix_validation():
    with pytest.raises(ValueError):
        matrix([[1.5]])
    with pytest.raises(ValueError):
        PerformanceMatrix(np.zeros((2, 1)), ("u", "u"), ("a",))
    with pytest.raises(ValueError):
        PerformanceMatrix(np.zeros((2, 1)), ("u",), ("a",))
    P = matrix([[0.1]])
    with pytest.raises(ValueError):
        P.values[0, 0] = 0.5


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 12), st.integers(1, 6)), elements=st.floats(0, 1)), st.randoms())
def test_baseline_properties(values, rnd):
    P = matrix(values)
    algo, sba = single_best(P)
    vba = virtual_best(P)
    assert vba >= sba >= min(np.mean(values, axis=0)) - 1e-15
    # any selector, constant or random, is bounded by VBA
    picks = [rnd.randrange(values.shape[1]) for _ in range(values.shape[0])]
    assert math.fsum(values[n, j] for n, j in enumerate(picks)) / len(picks) <= vba + 1e-15
    # permuting columns permutes labels only
    perm = list(reversed(range(values.shape[1])))
    Q = P.columns([P.algo_ids[j] for j in perm])
    assert single_best(Q)[1] == sba
    assert virtual_best(Q) == vba


def test_mean_is_order_independent():
    rng = np.random.default_rng(1)
    values = rng.random((500, 2))
    P = matrix(values)
    Q = matrix(values[::-1])
    assert virtual_best(P) == virtual_best(Q)
    assert single_best(P) == single_best(Q)


@pytest.fixture(scope="module")
def toy_split():
    return temporal_split(Dataset.from_interactions(toy_interactions()))


def test_popularity_column_matches_direct_evaluation(toy_split):
    spec = pf.default_portfolio()[0]
    P = build_performance_matrix(toy_split, [spec])
    model = pf.fit(spec, toy_split.train)
    train = toy_split.train
    for n, uid in enumerate(P.user_ids):
        hist = set(train.items[train.users == train.user_index[uid]].tolist())
        scores = np.bincount(train.items, minlength=train.n_items)
        ranked = sorted((i for i in range(train.n_items) if i not in hist), key=lambda i: (-scores[i], i))[:10]
        relevant = {train.item_index[i] for i in toy_split.test[uid]}
        assert P.values[n, 0] == pytest.approx(oracles.ndcg(ranked, relevant, 10), abs=1e-12)
    assert model.recommend(0, 10).items.tolist() == sorted(
        (i for i in range(train.n_items) if i not in set(model.history(0).tolist())),
        key=lambda i: (-np.bincount(train.items, minlength=train.n_items)[i], i),
    )[:10]


def test_two_algorithm_row():
    rows = [Interaction("u", "a", 0), Interaction("u", "b", 1), Interaction("v", "a", 2),
            Interaction("v", "c", 3), Interaction("w", "a", 4), Interaction("w", "c", 5)]
    split = temporal_split(Dataset.from_interactions(rows))
    # train is a,a,a so b and c tie at zero and b wins on index
    # held out: u -> b (rank 1), v -> c (rank 2), w -> c (rank 2)
    P = build_performance_matrix(split, pf.default_portfolio()[:1])
    assert P.user_ids == ("u", "v", "w")
    assert P.values[:, 0] == pytest.approx([1.0, 1 / math.log2(3), 1 / math.log2(3)], abs=1e-12)


def test_threads_do_not_change_matrix(toy_split):
    specs = pf.default_portfolio()
    a = build_performance_matrix(toy_split, specs, threads=1)
    b = build_performance_matrix(toy_split, specs, threads=4)
    assert np.array_equal(a.values, b.values)
    assert a.shape == (50, 9)


def test_fit_failure_names_algorithm(tmp_path, toy_split):
    (tmp_path / "broken.py").write_text(
        "from recmeta.portfolio.base import Recommender\n"
        "class Broken(Recommender):\n"
        "    family = 'ease'\n"
        "    def _fit(self, train):\n"
        "        raise RuntimeError('boom')\n"
    )
    spec = pf.RecommenderSpec("broken", "ease", tmp_path / "broken.py")
    with pytest.raises(FitFailure, match="broken"):
        build_performance_matrix(toy_split, [spec])


def test_matrix_round_trip(tmp_path):
    rng = np.random.default_rng(2)
    P = matrix(rng.random((7, 3)))
    write_matrix(P, tmp_path / "p.csv", {"k": 10})
    Q = read_matrix(tmp_path / "p.csv")
    assert np.array_equal(P.values, Q.values)
    assert (P.user_ids, P.algo_ids) == (Q.user_ids, Q.algo_ids)
    (tmp_path / "p.json").unlink()
    assert np.array_equal(read_matrix(tmp_path / "p.csv").values, P.values)


def test_matrix_missing_cell(tmp_path):
    P = matrix([[0.1, 0.2]])
    write_matrix(P, tmp_path / "p.csv")
    lines = (tmp_path / "p.csv").read_text().splitlines()
    (tmp_path / "p.csv").write_text("\n".join(lines[:-1]) + "\n")
    with pytest.raises(ValueError, match="no entry"):
        read_matrix(tmp_path / "p.csv")
