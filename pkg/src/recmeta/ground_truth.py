"""Performance matrix (NDCG@k per user and algorithm) and SBA/VBA baselines."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from recmeta import portfolio as pf
from recmeta.dataset import SplitDataset
from recmeta.portfolio import RankedList, RecommenderSpec

log = logging.getLogger(__name__)

FORMAT_VERSION = 1


class FitFailure(RuntimeError):
    def __init__(self, algo_id: str, cause: Exception):
        super().__init__(f"algorithm {algo_id!r} failed: {cause}")
        self.algo_id = algo_id


@dataclass(frozen=True, eq=False)
class PerformanceMatrix:
    values: np.ndarray
    user_ids: tuple[str, ...]
    algo_ids: tuple[str, ...]

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        if values.shape != (len(self.user_ids), len(self.algo_ids)):
            raise ValueError(f"shape {values.shape} does not match labels")
        if len(set(self.user_ids)) != len(self.user_ids) or len(set(self.algo_ids)) != len(self.algo_ids):
            raise ValueError("duplicate row or column labels")
        if values.size and (not np.isfinite(values).all() or values.min() < 0 or values.max() > 1):
            raise ValueError("performance values must lie in [0, 1]")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "user_ids", tuple(self.user_ids))
        object.__setattr__(self, "algo_ids", tuple(self.algo_ids))

    @property
    def shape(self):
        return self.values.shape

    def rows(self, user_ids: Sequence[str]) -> PerformanceMatrix:
        pos = {u: n for n, u in enumerate(self.user_ids)}
        idx = [pos[u] for u in user_ids]
        return PerformanceMatrix(self.values[idx], tuple(user_ids), self.algo_ids)

    def columns(self, algo_ids: Sequence[str]) -> PerformanceMatrix:
        pos = {a: n for n, a in enumerate(self.algo_ids)}
        return PerformanceMatrix(self.values[:, [pos[a] for a in algo_ids]], self.user_ids, tuple(algo_ids))

    def column(self, algo_id: str) -> np.ndarray:
        return self.values[:, self.algo_ids.index(algo_id)]


@dataclass(frozen=True)
class BaselineSummary:
    sba_algo: str
    sba_perf: float
    vba_perf: float


def _ordered_mean(x: np.ndarray) -> float:
    # correctly rounded sum: bit-stable regardless of row order or blocking
    return math.fsum(x.tolist()) / len(x)


def ndcg_at_k(ranked: RankedList | Sequence[int], relevant, k: int = 10) -> float:
    """Binary-relevance NDCG@k with the ideal DCG truncated at min(k, |relevant|)."""
    if k < 1:
        raise ValueError("k must be >= 1")
    relevant = set(int(i) for i in relevant)
    if not relevant:
        raise ValueError("NDCG is undefined for an empty relevant set")
    items = ranked.items if isinstance(ranked, RankedList) else ranked
    top = np.asarray(items[:k], dtype=np.int64)
    discounts = 1.0 / np.log2(np.arange(2, k + 2))
    hits = np.fromiter((int(i) in relevant for i in top), dtype=bool, count=len(top))
    dcg = discounts[: len(top)][hits].sum()
    idcg = discounts[: min(k, len(relevant))].sum()
    return float(dcg / idcg)


def _evaluate_algorithm(spec: RecommenderSpec, split: SplitDataset, user_ids, k: int, cache_dir):
    try:
        model = pf.fit_cached(spec, split.train, cache_dir)
    except Exception as exc:  # noqa: BLE001 - reported with the algorithm id
        raise FitFailure(spec.algo_id, exc) from exc
    index = split.train.user_index
    col = np.empty(len(user_ids))
    for n, uid in enumerate(user_ids):
        ranked = model.recommend(index[uid], k)
        col[n] = ndcg_at_k(ranked, split.test_items(uid), k)
    log.info("%s: mean NDCG@%d = %.4f", spec.algo_id, k, col.mean())
    return col


def build_performance_matrix(
    split: SplitDataset,
    portfolio: Sequence[RecommenderSpec],
    k: int = 10,
    threads: int = 1,
    cache_dir: str | Path | None = None,
) -> PerformanceMatrix:
    """Fit every portfolio member on the training split and score each test user.

    Rows follow the training user index order; users without test items are
    omitted. Columns follow portfolio order.
    """
    if not portfolio:
        raise ValueError("empty portfolio")
    ids = [s.algo_id for s in portfolio]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate algo_id in portfolio")
    user_ids = [u for u in split.train.user_ids if split.test.get(u)]
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        cols = list(pool.map(lambda s: _evaluate_algorithm(s, split, user_ids, k, cache_dir), portfolio))
    return PerformanceMatrix(np.column_stack(cols), tuple(user_ids), tuple(ids))


def single_best(P: PerformanceMatrix) -> tuple[str, float]:
    """Column with the highest mean; ties go to the lexicographically smallest id."""
    if P.values.size == 0:
        raise ValueError("empty performance matrix")
    means = {a: _ordered_mean(P.values[:, j]) for j, a in enumerate(P.algo_ids)}
    top = max(means.values())
    algo = min(a for a, m in means.items() if m == top)
    return algo, top


def virtual_best(P: PerformanceMatrix) -> float:
    if P.values.size == 0:
        raise ValueError("empty performance matrix")
    return _ordered_mean(P.values.max(axis=1))


def baselines(P: PerformanceMatrix) -> BaselineSummary:
    algo, perf = single_best(P)
    return BaselineSummary(algo, perf, virtual_best(P))


def config_hash(**config) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True, default=str).encode()).hexdigest()


def write_matrix(P: PerformanceMatrix, path: str | Path, config: dict | None = None) -> None:
    """Long-format CSV (user_id, algo_id, ndcg) plus a ``.json`` sidecar."""
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["user_id", "algo_id", "ndcg"])
        for n, u in enumerate(P.user_ids):
            for j, a in enumerate(P.algo_ids):
                w.writerow([u, a, repr(float(P.values[n, j]))])
    sidecar = {
        "version": FORMAT_VERSION,
        "user_ids": list(P.user_ids),
        "algo_ids": list(P.algo_ids),
        "config": config or {},
        "config_hash": config_hash(**(config or {})),
    }
    path.with_suffix(".json").write_text(json.dumps(sidecar, indent=1) + "\n", encoding="utf-8")


def read_matrix(path: str | Path) -> PerformanceMatrix:
    path = Path(path)
    sidecar_path = path.with_suffix(".json")
    cells = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = {"user_id", "algo_id", "ndcg"} - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        for rec in reader:
            cells[rec["user_id"], rec["algo_id"]] = float(rec["ndcg"])
    if sidecar_path.exists():
        meta = json.loads(sidecar_path.read_text(encoding="utf-8"))
        user_ids, algo_ids = meta["user_ids"], meta["algo_ids"]
    else:
        user_ids = list(dict.fromkeys(u for u, _ in cells))
        algo_ids = list(dict.fromkeys(a for _, a in cells))
    values = np.empty((len(user_ids), len(algo_ids)))
    for n, u in enumerate(user_ids):
        for j, a in enumerate(algo_ids):
            try:
                values[n, j] = cells[u, a]
            except KeyError:
                raise ValueError(f"{path}: no entry for user {u!r}, algorithm {a!r}") from None
    return PerformanceMatrix(values, tuple(user_ids), tuple(algo_ids))
