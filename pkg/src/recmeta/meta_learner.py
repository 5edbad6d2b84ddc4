"""Gradient-boosted regression trees and the two meta-learners built on them.

``user_only``: one ensemble per algorithm, fed user features, predicting that
algorithm's NDCG. ``user_algo``: a single ensemble over (user, algorithm) rows
with user and algorithm features concatenated.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numpy as np
from numba import njit

from recmeta.code_metrics import FEATURE_NAMES as ALGO_FEATURES
from recmeta.code_metrics import AlgoFeatureVector
from recmeta.ground_truth import PerformanceMatrix
from recmeta.user_features import FEATURES as USER_FEATURES

MODEL_VERSION = 1
TIE_RTOL = 1e-10  # gains this close (relative to the node's sum of y^2) are ties


class SchemaError(ValueError):
    pass


@dataclass(frozen=True)
class GBTParams:
    n_trees: int = 100
    max_depth: int | None = 3  # None: unbounded
    learning_rate: float = 0.1
    min_samples_leaf: int = 20
    subsample: float = 0.8
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 0:
            raise ValueError("n_trees must be >= 0")
        if self.max_depth is not None and self.max_depth < 0:
            raise ValueError("max_depth must be >= 0")
        if not 0 < self.learning_rate <= 1:
            raise ValueError("learning_rate must be in (0, 1]")
        if self.min_samples_leaf < 1:
            raise ValueError("min_samples_leaf must be >= 1")
        if not 0 < self.subsample <= 1:
            raise ValueError("subsample must be in (0, 1]")


@dataclass(frozen=True, eq=False)
class RegressionTree:
    """Array-encoded binary tree; ``feature[n] == -1`` marks a leaf.

    Rows with ``x[feature] <= threshold`` go left.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    def predict(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(len(X), dtype=np.int64)
        active = np.flatnonzero(self.feature[node] >= 0)
        while len(active):
            nd = node[active]
            go_left = X[active, self.feature[nd]] <= self.threshold[nd]
            node[active] = np.where(go_left, self.left[nd], self.right[nd])
            active = active[self.feature[node[active]] >= 0]
        return self.value[node]

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> RegressionTree:
        return cls(
            np.array(d["feature"], dtype=np.int64),
            np.array(d["threshold"], dtype=np.float64),
            np.array(d["left"], dtype=np.int64),
            np.array(d["right"], dtype=np.int64),
            np.array(d["value"], dtype=np.float64),
        )


def best_split(X: np.ndarray, y: np.ndarray, min_samples_leaf: int = 1):
    """Exhaustive variance-reduction split over all features and thresholds.

    Returns ``(feature, threshold, gain)`` or None. Candidate thresholds sit
    midway between consecutive distinct sorted values. Gains within
    ``TIE_RTOL`` of the best are ties; they go to the lowest feature index,
    then the lowest threshold.
    """
    m, n_feat = X.shape
    if m < 2 * min_samples_leaf or m < 2:
        return None
    order = np.argsort(X, axis=0, kind="stable")
    xs = np.take_along_axis(X, order, axis=0)
    ys = y[order]
    csum = np.cumsum(ys, axis=0)
    total = csum[-1]
    n_left = np.arange(1, m, dtype=np.float64)[:, None]
    s_left = csum[:-1]
    gain = s_left**2 / n_left + (total - s_left) ** 2 / (m - n_left) - total**2 / m
    valid = xs[1:] > xs[:-1]
    if min_samples_leaf > 1:
        k = np.arange(1, m)
        valid &= ((k >= min_samples_leaf) & (m - k >= min_samples_leaf))[:, None]
    gain = np.where(valid, gain, -np.inf)
    flat = gain.T.ravel()  # feature-major: lowest feature, then lowest threshold first
    g = flat.max()
    scale = float(np.sum((y - y.mean()) ** 2))
    if not np.isfinite(g) or g <= 1e-12 * max(scale, 1e-300):
        return None
    best = int(np.argmax(flat >= g - TIE_RTOL * float(np.sum(y * y))))
    g = flat[best]
    f, p = divmod(best, m - 1)
    lo, hi = xs[p, f], xs[p + 1, f]
    threshold = lo + (hi - lo) / 2.0
    if not lo <= threshold < hi:
        threshold = lo
    return int(f), float(threshold), float(g)


class _Encoded:
    """Per-feature rank encoding of a fixed feature matrix.

    ``codes[j, i]`` is the position of ``X[i, j]`` among the sorted distinct
    values of column ``j``; ``values[j, :widths[j]]`` holds those values.
    """

    def __init__(self, X: np.ndarray):
        m, f = X.shape
        uniques = [np.unique(X[:, j]) for j in range(f)]
        self.widths = np.array([len(u) for u in uniques], dtype=np.int64)
        self.values = np.full((f, int(self.widths.max())), np.inf)
        self.codes = np.empty((f, m), dtype=np.int64)  # feature-major for the sweep
        for j, u in enumerate(uniques):
            self.values[j, : len(u)] = u
            self.codes[j] = np.searchsorted(u, X[:, j])


@njit(cache=True)
def _grow(codes, values, widths, rows, y, max_depth, min_leaf):  # pragma: no cover - compiled
    # Depth-first growth with in-place partitioning of ``idx``; node ids are
    # assigned in pre-order. Per node and feature, rows are grouped by code
    # (bins for large nodes, a sort for small ones) and swept left to right.
    # Candidates are kept in sweep order so the first near-maximal one wins.
    m_all = rows.shape[0]
    n_feat = codes.shape[0]
    cap = 2 * m_all + 1
    feature = np.full(cap, -1, np.int64)
    threshold = np.zeros(cap)
    left = np.full(cap, -1, np.int64)
    right = np.full(cap, -1, np.int64)
    value = np.zeros(cap)
    idx = np.arange(m_all)
    sums = np.zeros(values.shape[1])
    counts = np.zeros(values.shape[1], np.int64)
    node_codes = np.empty(m_all, np.int64)
    cand_gain = np.empty(n_feat * m_all)
    cand_f = np.empty(n_feat * m_all, np.int64)
    cand_lo = np.empty(n_feat * m_all)
    cand_hi = np.empty(n_feat * m_all)
    # stack rows: start, end, depth, parent, side (0 left, 1 right)
    stack = np.empty((m_all + 2, 5), np.int64)
    stack[0, 0] = 0
    stack[0, 1] = m_all
    stack[0, 2] = 0
    stack[0, 3] = -1
    stack[0, 4] = 0
    top = 1
    n_nodes = 0
    while top > 0:
        top -= 1
        start, end, depth, parent, side = stack[top]
        nid = n_nodes
        n_nodes += 1
        if parent >= 0:
            if side == 0:
                left[parent] = nid
            else:
                right[parent] = nid
        m = end - start
        total = 0.0
        sq = 0.0
        for p in range(start, end):
            v = y[idx[p]]
            total += v
            sq += v * v
        mean = total / m
        value[nid] = mean
        if (max_depth >= 0 and depth >= max_depth) or m < 2 or m < 2 * min_leaf:
            continue
        scale = 0.0
        for p in range(start, end):
            d = y[idx[p]] - mean
            scale += d * d
        base = total * total / m
        n_cand = 0
        for j in range(n_feat):
            w = widths[j]
            s_left = 0.0
            n_left = 0
            prev = -1
            if 4 * m < w:
                for p in range(start, end):
                    node_codes[p - start] = codes[j, rows[idx[p]]]
                order = np.argsort(node_codes[:m])
                q = 0
                while q < m:
                    c = node_codes[order[q]]
                    s_bin = 0.0
                    n_bin = 0
                    while q < m and node_codes[order[q]] == c:
                        s_bin += y[idx[start + order[q]]]
                        n_bin += 1
                        q += 1
                    if prev >= 0 and n_left >= min_leaf and m - n_left >= min_leaf:
                        cand_gain[n_cand] = s_left * s_left / n_left + (total - s_left) ** 2 / (m - n_left) - base
                        cand_f[n_cand] = j
                        cand_lo[n_cand] = values[j, prev]
                        cand_hi[n_cand] = values[j, c]
                        n_cand += 1
                    s_left += s_bin
                    n_left += n_bin
                    prev = c
            else:
                for b in range(w):
                    sums[b] = 0.0
                    counts[b] = 0
                for p in range(start, end):
                    r = idx[p]
                    c = codes[j, rows[r]]
                    sums[c] += y[r]
                    counts[c] += 1
                for b in range(w):
                    if counts[b] == 0:
                        continue
                    if prev >= 0 and n_left >= min_leaf and m - n_left >= min_leaf:
                        cand_gain[n_cand] = s_left * s_left / n_left + (total - s_left) ** 2 / (m - n_left) - base
                        cand_f[n_cand] = j
                        cand_lo[n_cand] = values[j, prev]
                        cand_hi[n_cand] = values[j, b]
                        n_cand += 1
                    s_left += sums[b]
                    n_left += counts[b]
                    prev = b
        if n_cand == 0:
            continue
        g_max = cand_gain[0]
        for q in range(1, n_cand):
            if cand_gain[q] > g_max:
                g_max = cand_gain[q]
        if not g_max > 1e-12 * max(scale, 1e-300):
            continue
        cut = g_max - TIE_RTOL * sq
        best = 0
        while cand_gain[best] < cut:
            best += 1
        best_f = cand_f[best]
        lo = cand_lo[best]
        hi = cand_hi[best]
        t = lo + (hi - lo) / 2.0
        if not (lo <= t and t < hi):
            t = lo
        feature[nid] = best_f
        threshold[nid] = t
        # stable partition of idx[start:end]: rows with x <= t first
        buf = idx[start:end].copy()
        k = start
        for r in buf:
            if values[best_f, codes[best_f, rows[r]]] <= t:
                idx[k] = r
                k += 1
        mid = k
        for r in buf:
            if not values[best_f, codes[best_f, rows[r]]] <= t:
                idx[k] = r
                k += 1
        # push right first so the left child is numbered next
        stack[top, 0] = mid
        stack[top, 1] = end
        stack[top, 2] = depth + 1
        stack[top, 3] = nid
        stack[top, 4] = 1
        top += 1
        stack[top, 0] = start
        stack[top, 1] = mid
        stack[top, 2] = depth + 1
        stack[top, 3] = nid
        stack[top, 4] = 0
        top += 1
    return feature[:n_nodes], threshold[:n_nodes], left[:n_nodes], right[:n_nodes], value[:n_nodes]


def fit_tree(
    X: np.ndarray,
    y: np.ndarray,
    max_depth: int | None = 3,
    min_samples_leaf: int = 1,
    encoded: _Encoded | None = None,
    rows: np.ndarray | None = None,
) -> RegressionTree:
    """Depth-limited least-squares tree on ``X[rows]`` (all rows by default).

    ``y`` is aligned with ``rows``. Splits are exact: candidate thresholds
    are midpoints between consecutive distinct values present in the node,
    with the same tie rules as ``best_split``.
    """
    encoded = encoded or _Encoded(np.asarray(X, dtype=np.float64))
    rows = np.arange(len(X), dtype=np.int64) if rows is None else np.asarray(rows, dtype=np.int64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    depth = -1 if max_depth is None else int(max_depth)
    arrays = _grow(encoded.codes, encoded.values, encoded.widths, rows, y, depth, int(min_samples_leaf))
    return RegressionTree(*(a.copy() for a in arrays))


@dataclass(frozen=True, eq=False)
class GBTEnsemble:
    init: float
    learning_rate: float
    trees: tuple[RegressionTree, ...] = ()
    n_features: int = 0

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise SchemaError(f"expected {self.n_features} features, got shape {X.shape}")
        out = np.full(len(X), self.init)
        for tree in self.trees:
            out += self.learning_rate * tree.predict(X)
        return out

    def staged_predict(self, X: np.ndarray):
        out = np.full(len(X), self.init)
        yield out.copy()
        for tree in self.trees:
            out += self.learning_rate * tree.predict(X)
            yield out.copy()

    def truncate(self, n_trees: int) -> GBTEnsemble:
        """The first ``n_trees`` stages; equal to a fit with that many trees."""
        return GBTEnsemble(self.init, self.learning_rate, self.trees[:n_trees], self.n_features)

    def to_dict(self) -> dict:
        return {
            "init": self.init,
            "learning_rate": self.learning_rate,
            "n_features": self.n_features,
            "trees": [t.to_dict() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, d: dict) -> GBTEnsemble:
        return cls(
            float(d["init"]),
            float(d["learning_rate"]),
            tuple(RegressionTree.from_dict(t) for t in d["trees"]),
            int(d["n_features"]),
        )


def fit_gbt(X: np.ndarray, y: np.ndarray, params: GBTParams = GBTParams()) -> GBTEnsemble:
    """Squared-error gradient boosting: F0 = mean(y), then ``n_trees`` trees
    fitted to residuals on seeded row subsamples and added with shrinkage."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or len(X) == 0:
        raise ValueError("X must be a non-empty 2-D array")
    if len(y) != len(X):
        raise ValueError("X and y lengths differ")
    if not (np.isfinite(X).all() and np.isfinite(y).all()):
        raise ValueError("non-finite values in training data")
    n = len(y)
    init = float(np.mean(y))
    pred = np.full(n, init)
    rng = np.random.default_rng(params.seed)
    n_sub = max(1, int(round(params.subsample * n)))
    encoded = _Encoded(X) if params.n_trees else None
    trees = []
    for _ in range(params.n_trees):
        if n_sub < n:
            rows = np.sort(rng.choice(n, size=n_sub, replace=False))
        else:
            rows = np.arange(n)
        resid = y[rows] - pred[rows]
        tree = fit_tree(X, resid, params.max_depth, params.min_samples_leaf, encoded, rows)
        pred += params.learning_rate * tree.predict(X)
        trees.append(tree)
    return GBTEnsemble(init, params.learning_rate, tuple(trees), X.shape[1])


# meta-datasets --------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class MetaDataset:
    rows: np.ndarray
    targets: np.ndarray  # (n,) for user_algo, (n, n_algos) for user_only
    row_keys: tuple
    feature_names: tuple[str, ...]
    algo_ids: tuple[str, ...]
    kind: str
    n_user_features: int

    def __len__(self):
        return len(self.rows)

    def users(self) -> list[str]:
        if self.kind == "user_only":
            return list(self.row_keys)
        return [u for u, _ in self.row_keys]

    def for_users(self, user_ids: Sequence[str]) -> MetaDataset:
        wanted = set(user_ids)
        idx = [n for n, u in enumerate(self.users()) if u in wanted]
        return MetaDataset(
            self.rows[idx],
            self.targets[idx],
            tuple(self.row_keys[n] for n in idx),
            self.feature_names,
            self.algo_ids,
            self.kind,
            self.n_user_features,
        )


def algo_feature_map(vectors: Sequence[AlgoFeatureVector] | Mapping[str, Sequence[float]]) -> dict[str, np.ndarray]:
    if isinstance(vectors, Mapping):
        return {a: np.asarray(v, dtype=np.float64) for a, v in vectors.items()}
    return {v.algo_id: np.array(v.values(), dtype=np.float64) for v in vectors}


def _user_rows(P: PerformanceMatrix, F: Mapping[str, np.ndarray]) -> np.ndarray:
    missing = [u for u in P.user_ids if u not in F]
    if missing:
        raise KeyError(f"no user features for users {missing[:5]}{' ...' if len(missing) > 5 else ''}")
    return np.array([np.asarray(F[u], dtype=np.float64) for u in P.user_ids]).reshape(len(P.user_ids), -1)


def build_user_only_dataset(
    P: PerformanceMatrix, F: Mapping[str, np.ndarray], user_feature_names: Sequence[str] = USER_FEATURES
) -> MetaDataset:
    X = _user_rows(P, F)
    if X.shape[1] != len(user_feature_names):
        raise SchemaError(f"user features have {X.shape[1]} columns, expected {len(user_feature_names)}")
    return MetaDataset(
        X, P.values.copy(), tuple(P.user_ids), tuple(user_feature_names), P.algo_ids, "user_only", X.shape[1]
    )


def build_user_algo_dataset(
    P: PerformanceMatrix,
    F: Mapping[str, np.ndarray],
    A: Mapping[str, np.ndarray] | Sequence[AlgoFeatureVector],
    user_feature_names: Sequence[str] = USER_FEATURES,
    algo_feature_names: Sequence[str] = ALGO_FEATURES,
) -> MetaDataset:
    """One row per (user, algorithm) cell, user-major."""
    A = algo_feature_map(A)
    missing = [a for a in P.algo_ids if a not in A]
    if missing:
        raise KeyError(f"no algorithm features for {missing}")
    U = _user_rows(P, F)
    Amat = np.array([A[a] for a in P.algo_ids]).reshape(len(P.algo_ids), -1)
    if U.shape[1] != len(user_feature_names) or Amat.shape[1] != len(algo_feature_names):
        raise SchemaError("feature widths do not match the declared feature names")
    n_u, n_a = len(P.user_ids), len(P.algo_ids)
    X = np.hstack([np.repeat(U, n_a, axis=0), np.tile(Amat, (n_u, 1))])
    y = P.values.reshape(-1).copy()
    keys = tuple((u, a) for u in P.user_ids for a in P.algo_ids)
    names = tuple(user_feature_names) + tuple(algo_feature_names)
    return MetaDataset(X, y, keys, names, P.algo_ids, "user_algo", U.shape[1])


# models ---------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class MetaModel:
    kind: str
    regressors: tuple[GBTEnsemble, ...]
    feature_names: tuple[str, ...]
    algo_ids: tuple[str, ...]
    n_user_features: int
    params: GBTParams | None = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        expected = len(self.algo_ids) if self.kind == "user_only" else 1
        if self.kind not in ("user_only", "user_algo") or len(self.regressors) != expected:
            raise ValueError(f"{self.kind} model needs {expected} regressors, got {len(self.regressors)}")

    def predict_matrix(self, U: np.ndarray, A: Mapping[str, np.ndarray] | None = None) -> np.ndarray:
        """Predicted performance, users x algorithms (model's algo order)."""
        U = np.atleast_2d(np.asarray(U, dtype=np.float64))
        if U.shape[1] != self.n_user_features:
            raise SchemaError(f"expected {self.n_user_features} user features, got {U.shape[1]}")
        if self.kind == "user_only":
            return np.column_stack([r.predict(U) for r in self.regressors])
        if A is None:
            raise SchemaError("user_algo model needs algorithm features")
        A = algo_feature_map(A)
        missing = [a for a in self.algo_ids if a not in A]
        if missing:
            raise SchemaError(f"missing algorithm features for {missing}")
        Amat = np.array([A[a] for a in self.algo_ids])
        n_u, n_a = len(U), len(self.algo_ids)
        X = np.hstack([np.repeat(U, n_a, axis=0), np.tile(Amat, (n_u, 1))])
        return self.regressors[0].predict(X).reshape(n_u, n_a)

    def to_json(self) -> str:
        return json.dumps(
            {
                "version": MODEL_VERSION,
                "kind": self.kind,
                "feature_names": list(self.feature_names),
                "algo_ids": list(self.algo_ids),
                "n_user_features": self.n_user_features,
                "params": asdict(self.params) if self.params else None,
                "extra": self.extra,
                "regressors": [r.to_dict() for r in self.regressors],
            },
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str) -> MetaModel:
        d = json.loads(text)
        if d.get("version") != MODEL_VERSION:
            raise ValueError(f"unsupported model version {d.get('version')!r}")
        return cls(
            d["kind"],
            tuple(GBTEnsemble.from_dict(r) for r in d["regressors"]),
            tuple(d["feature_names"]),
            tuple(d["algo_ids"]),
            int(d["n_user_features"]),
            GBTParams(**d["params"]) if d["params"] else None,
            d.get("extra", {}),
        )


def train_meta_model(data: MetaDataset, params: GBTParams) -> MetaModel:
    if data.kind == "user_only":
        regs = tuple(fit_gbt(data.rows, data.targets[:, j], params) for j in range(len(data.algo_ids)))
    else:
        regs = (fit_gbt(data.rows, data.targets, params),)
    return MetaModel(data.kind, regs, data.feature_names, data.algo_ids, data.n_user_features, params)


def rank_algorithms(scores: Sequence[float], algo_ids: Sequence[str]) -> list[tuple[str, float]]:
    """Sort descending by score; ties by ascending algo_id."""
    pairs = [(a, float(s)) for a, s in zip(algo_ids, scores)]
    return sorted(pairs, key=lambda p: (-p[1], p[0]))


def select(
    model: MetaModel,
    user_features: Mapping[str, float] | Sequence[float],
    A: Mapping[str, np.ndarray] | Sequence[AlgoFeatureVector] | None = None,
) -> list[tuple[str, float]]:
    """Ranked (algo_id, predicted NDCG) list for one user."""
    names = model.feature_names[: model.n_user_features]
    if isinstance(user_features, Mapping):
        missing = [n for n in names if n not in user_features]
        extra = [n for n in user_features if n not in names]
        if missing or extra:
            raise SchemaError(f"user feature mismatch: missing {missing}, extra {extra}")
        u = np.array([user_features[n] for n in names], dtype=np.float64)
    else:
        u = np.asarray(user_features, dtype=np.float64)
    if A is not None and not isinstance(A, Mapping):
        A = algo_feature_map(A)
    pred = model.predict_matrix(u[None, :], A)[0]
    return rank_algorithms(pred, model.algo_ids)
