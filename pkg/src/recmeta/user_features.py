"""Fifteen per-user meta-features computed from the training split.

The list covers activity, rating behaviour, temporal dynamics and popularity
preference. ``FEATURES`` is a registry: to swap in another definition, edit
the name list and the matching entry in ``_compute``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from recmeta.dataset import Dataset, SplitDataset

DAY = 86400.0
HEAD_FRACTION = 0.2

FEATURES = (
    "n_interactions",
    "n_unique_items",
    "redundancy",
    "mean_rating",
    "std_rating",
    "rating_entropy",
    "history_duration",
    "mean_gap_days",
    "activity_rate",
    "recency_days",
    "mean_item_popularity",
    "median_item_popularity",
    "std_item_popularity",
    "longtail_fraction",
    "popularity_entropy",
)


@dataclass(frozen=True)
class ItemStats:
    """Training-split item statistics shared by all users."""

    popularity: np.ndarray  # count / max count
    head: np.ndarray  # bool mask of the top-20% most popular consumed items

    @classmethod
    def from_train(cls, train: Dataset) -> ItemStats:
        counts = train.item_counts().astype(np.float64)
        top = counts.max() if len(counts) else 0.0
        popularity = counts / top if top > 0 else np.zeros_like(counts)
        # head is taken over items with at least one training interaction, so
        # items with no training data do not shift the cut-off
        consumed = np.flatnonzero(counts > 0)
        n_head = math.ceil(HEAD_FRACTION * len(consumed))
        order = consumed[np.lexsort((consumed, -counts[consumed]))]
        head = np.zeros(len(counts), dtype=bool)
        head[order[:n_head]] = True
        return cls(popularity, head)


@dataclass(frozen=True)
class UserFeatureVector:
    user_id: str
    values: np.ndarray
    names: tuple[str, ...] = FEATURES


def entropy(counts: np.ndarray) -> float:
    """Shannon entropy (nats) of a count vector; zero counts contribute 0."""
    counts = np.asarray(counts, dtype=np.float64)
    counts = counts[counts > 0]
    if len(counts) <= 1:
        return 0.0
    p = counts / counts.sum()
    return float(max(0.0, -np.sum(p * np.log(p))))


def _compute(items, timestamps, ratings, split_point, stats: ItemStats) -> list[float]:
    n = len(items)
    order = np.argsort(timestamps, kind="stable")
    ts = timestamps[order].astype(np.float64)
    uniq, per_item = np.unique(items, return_counts=True)
    _, rating_counts = np.unique(ratings, return_counts=True)

    duration = (ts[-1] - ts[0]) / DAY
    gaps = np.diff(ts) / DAY
    pop = stats.popularity[uniq]

    return [
        float(n),
        float(len(uniq)),
        1.0 - len(uniq) / n,
        float(ratings.mean()),
        float(ratings.std()),
        entropy(rating_counts),
        duration,
        float(gaps.mean()) if len(gaps) else 0.0,
        n / max(duration, 1.0),
        (split_point - ts[-1]) / DAY,
        float(pop.mean()),
        float(np.median(pop)),
        float(pop.std()),
        float(np.mean(~stats.head[uniq])),
        entropy(per_item),
    ]


def extract_user_features(
    user_id: str, train: Dataset, stats: ItemStats, split_point: int, rows: np.ndarray | None = None
) -> UserFeatureVector:
    """Feature vector of one user from their training interactions only.

    ``split_point`` is the user's train/test boundary timestamp; recency is
    measured from the last training interaction up to it.
    """
    if rows is None:
        rows = np.flatnonzero(train.users == train.user_index[user_id])
    if len(rows) == 0:
        raise ValueError(f"user {user_id!r} has no training interactions")
    values = _compute(train.items[rows], train.timestamps[rows], train.ratings[rows], split_point, stats)
    return UserFeatureVector(user_id, np.array(values))


def user_feature_matrix(split: SplitDataset, user_ids: Sequence[str] | None = None) -> tuple[list[str], np.ndarray]:
    """Features for ``user_ids`` (default: every user with test items)."""
    train = split.train
    stats = ItemStats.from_train(train)
    if user_ids is None:
        user_ids = [u for u in train.user_ids if split.test.get(u)]
    rows_by_user = train.user_rows()
    out = np.empty((len(user_ids), len(FEATURES)))
    for n, uid in enumerate(user_ids):
        rows = rows_by_user[train.user_index[uid]]
        out[n] = extract_user_features(uid, train, stats, split.split_point[uid], rows).values
    return list(user_ids), out


def write_features(path: str | Path, user_ids: Sequence[str], values: np.ndarray) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["user_id", *FEATURES])
        for uid, row in zip(user_ids, values):
            w.writerow([uid, *(repr(float(v)) for v in row)])


def read_features(path: str | Path) -> tuple[list[str], np.ndarray]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header[1:]) != FEATURES or header[0] != "user_id":
            raise ValueError(f"{path}: header does not match the user feature list")
        ids, rows = [], []
        for lineno, rec in enumerate(reader, start=2):
            values = [float(v) for v in rec[1:]]
            if len(values) != len(FEATURES) or not all(math.isfinite(v) for v in values):
                raise ValueError(f"{path}: line {lineno}: bad feature row")
            ids.append(rec[0])
            rows.append(values)
    return ids, np.array(rows).reshape(len(rows), len(FEATURES))


def as_mapping(user_ids: Sequence[str], values: np.ndarray) -> Mapping[str, np.ndarray]:
    return {u: values[n] for n, u in enumerate(user_ids)}
