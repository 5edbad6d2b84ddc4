"""Seeded generators for planted-structure test data.

Interaction-level generators return ``Dataset`` objects (or raw rows for the
bundled fixture). Meta-level generators return ``(P, F, A)``: a performance
matrix, user features keyed by user_id and algorithm features keyed by
algo_id, shaped like the real pipeline's outputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from recmeta.code_metrics import FEATURE_NAMES as ALGO_FEATURES
from recmeta.dataset import Dataset, Interaction
from recmeta.ground_truth import PerformanceMatrix
from recmeta.user_features import FEATURES as USER_FEATURES

DAY = 86400
EPOCH0 = 1_600_000_000


def _user_id(n: int) -> str:
    return f"u{n:03d}"


def _item_id(n: int) -> str:
    return f"i{n:03d}"


# interaction-level ----------------------------------------------------------

@dataclass(frozen=True)
class BlockData:
    train: Dataset
    user_group: np.ndarray  # by dense user index
    item_group: np.ndarray  # by dense item index


def planted_blocks(n_users: int = 60, n_items: int = 40, per_user: int = 10, seed: int = 0) -> BlockData:
    """Two user groups, each consuming only its own half of the catalog."""
    rng = np.random.default_rng(seed)
    half = n_items // 2
    rows = []
    for u in range(n_users):
        g = u % 2
        items = rng.choice(half, size=per_user, replace=False) + g * half
        for t, i in enumerate(items):
            rows.append(Interaction(_user_id(u), _item_id(int(i)), EPOCH0 + t * DAY, 1.0))
    ds = Dataset.from_interactions(rows)
    user_group = np.array([int(u[1:]) % 2 for u in ds.user_ids])
    item_group = np.array([int(int(i[1:]) >= half) for i in ds.item_ids])
    return BlockData(ds, user_group, item_group)


@dataclass(frozen=True)
class ChainData:
    train: Dataset
    successor: np.ndarray  # dense item index -> its planted successor


def markov_chains(n_users: int = 80, n_items: int = 30, length: int = 20, seed: int = 0) -> ChainData:
    """Each user walks a shared random successor cycle over the catalog.

    Consecutive interactions follow ``successor``; start items are uniform,
    so item popularity carries no information about the next item.
    """
    rng = np.random.default_rng(seed)
    cycle = rng.permutation(n_items)
    nxt = np.empty(n_items, dtype=np.int64)
    nxt[cycle] = np.roll(cycle, -1)
    rows = []
    for u in range(n_users):
        i = int(rng.integers(n_items))
        for t in range(length):
            rows.append(Interaction(_user_id(u), _item_id(i), EPOCH0 + t * 3600, 1.0))
            i = int(nxt[i])
    ds = Dataset.from_interactions(rows)
    raw = np.array([int(s[1:]) for s in ds.item_ids])  # dense -> raw
    dense = np.empty(n_items, dtype=np.int64)
    dense[raw] = np.arange(len(raw))
    return ChainData(ds, dense[nxt[raw]])


def toy_interactions(n_users: int = 50, n_items: int = 80, seed: int = 7) -> list[Interaction]:
    """Rows of the bundled toy fixture.

    Users fall into three taste clusters over overlapping item ranges, with a
    popularity skew inside each range. About a third of users mostly walk
    forward through the catalog, which gives sequential models a signal.
    Ratings are integers 1-5, higher inside the user's cluster.
    """
    rng = np.random.default_rng(seed)
    centers = np.array([0.15, 0.5, 0.85]) * n_items
    rows = []
    for u in range(n_users):
        cluster = u % 3
        sequential = u % 3 == 1 and u % 2 == 0
        n = int(rng.integers(12, 41))
        t = EPOCH0 + int(rng.integers(0, 30)) * DAY
        i = int(rng.integers(n_items))
        for _ in range(n):
            if sequential and rng.random() < 0.7:
                i = (i + 1) % n_items
            elif rng.random() < 0.75:
                i = int(np.clip(round(rng.normal(centers[cluster], n_items * 0.12)), 0, n_items - 1))
            else:
                # global popularity: small ids are popular
                i = int(min(rng.geometric(0.06) - 1, n_items - 1))
            near = abs(i - centers[cluster]) < n_items * 0.2
            rating = int(np.clip(round(rng.normal(4.2 if near else 2.8, 0.8)), 1, 5))
            rows.append(Interaction(_user_id(u), _item_id(i), t, float(rating)))
            t += int(rng.exponential(1.5 * DAY)) + 60
    return rows


# meta-level -----------------------------------------------------------------

def _algo_features(n_algos: int, rng) -> dict[str, np.ndarray]:
    # positive, distinct code-metric-like vectors
    return {f"a{j}": np.round(rng.uniform(1, 100, size=len(ALGO_FEATURES)), 3) for j in range(n_algos)}


def _user_features(n_users: int, rng) -> dict[str, np.ndarray]:
    X = rng.normal(size=(n_users, len(USER_FEATURES)))
    return {_user_id(n): X[n] for n in range(n_users)}


def planted_threshold(
    n_users: int = 200, n_algos: int = 9, noise: float = 0.02, seed: int = 0, feature: int = 0
) -> tuple[PerformanceMatrix, dict, dict]:
    """Best algorithm is a threshold rule on one user feature.

    Users with ``f[feature] <= 0`` do best on ``a1``, the rest on ``a2``;
    the winner sits 0.2 above a 0.2 baseline. Every cell gets N(0, noise).
    """
    rng = np.random.default_rng(seed)
    F = _user_features(n_users, rng)
    A = _algo_features(n_algos, rng)
    users = sorted(F)
    algos = sorted(A)
    V = np.full((n_users, n_algos), 0.2)
    for n, u in enumerate(users):
        V[n, algos.index("a1" if F[u][feature] <= 0 else "a2")] += 0.2
    V = np.clip(V + rng.normal(0, noise, size=V.shape), 0, 1)
    return PerformanceMatrix(V, tuple(users), tuple(algos)), F, A


def planted_rule(F: dict, feature: int = 0) -> dict[str, str]:
    return {u: "a1" if f[feature] <= 0 else "a2" for u, f in F.items()}


def planted_algo_offsets(
    n_users: int = 200, n_algos: int = 9, gap: float = 0.03, noise: float = 0.1, seed: int = 0
) -> tuple[PerformanceMatrix, dict, dict]:
    """Per-algorithm offsets only; user features are pure noise.

    ``a0`` sits ``gap`` above the other algorithms. Its code metrics differ
    from the rest in a consistent direction (larger first metric), so the
    offset is predictable from algorithm features. Cells get N(0, noise).
    """
    rng = np.random.default_rng(seed)
    F = _user_features(n_users, rng)
    A = _algo_features(n_algos, rng)
    A["a0"][0] = max(v[0] for v in A.values()) + 50.0
    users = sorted(F)
    algos = sorted(A)
    offsets = np.array([0.3 if a == "a0" else 0.3 - gap for a in algos])
    V = np.clip(offsets + rng.normal(0, noise, size=(n_users, n_algos)), 0, 1)
    return PerformanceMatrix(V, tuple(users), tuple(algos)), F, A
