"""Interaction logs: loading, user filtering, temporal splitting, statistics."""

from __future__ import annotations

import csv
import hashlib
import logging
import math
from fractions import Fraction
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Mapping, NamedTuple

import numpy as np

log = logging.getLogger(__name__)


class SchemaError(ValueError):
    """A required column is missing or the schema is malformed."""


class ParseError(ValueError):
    """A data row could not be parsed."""

    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class EmptyDatasetError(ValueError):
    pass


class Interaction(NamedTuple):
    user_id: str
    item_id: str
    timestamp: int
    rating: float | None = None


@dataclass(frozen=True)
class Schema:
    user: str = "user_id"
    item: str = "item_id"
    timestamp: str = "timestamp"
    rating: str | None = None


@dataclass(frozen=True, eq=False)
class Dataset:
    """Columnar interaction log with dense user/item indices.

    ``users`` and ``items`` hold dense indices into ``user_ids`` / ``item_ids``.
    Rows keep input order. ``has_ratings`` is False for implicit feedback, in
    which case every rating is 1.0.
    """

    users: np.ndarray
    items: np.ndarray
    timestamps: np.ndarray
    ratings: np.ndarray
    user_ids: tuple[str, ...]
    item_ids: tuple[str, ...]
    has_ratings: bool = False
    skipped_rows: int = field(default=0, repr=False, compare=False)
    user_index: dict[str, int] = field(init=False, repr=False)
    item_index: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        for name in ("users", "items", "timestamps", "ratings"):
            getattr(self, name).setflags(write=False)
        object.__setattr__(self, "user_index", {u: i for i, u in enumerate(self.user_ids)})
        object.__setattr__(self, "item_index", {v: i for i, v in enumerate(self.item_ids)})
        if len(self.user_index) != len(self.user_ids) or len(self.item_index) != len(self.item_ids):
            raise ValueError("duplicate identifiers in index")

    @classmethod
    def from_interactions(cls, interactions: Iterable[Interaction]) -> Dataset:
        rows = list(interactions)
        user_index: dict[str, int] = {}
        item_index: dict[str, int] = {}
        has_ratings = any(r.rating is not None for r in rows)
        users = np.empty(len(rows), dtype=np.int64)
        items = np.empty(len(rows), dtype=np.int64)
        ts = np.empty(len(rows), dtype=np.int64)
        ratings = np.ones(len(rows), dtype=np.float64)
        for n, r in enumerate(rows):
            if r.timestamp < 0:
                raise ValueError(f"negative timestamp in row {n}")
            users[n] = user_index.setdefault(r.user_id, len(user_index))
            items[n] = item_index.setdefault(r.item_id, len(item_index))
            ts[n] = r.timestamp
            if r.rating is not None:
                if not math.isfinite(r.rating):
                    raise ValueError(f"non-finite rating in row {n}")
                ratings[n] = r.rating
        return cls(users, items, ts, ratings, tuple(user_index), tuple(item_index), has_ratings)

    @property
    def n_users(self) -> int:
        return len(self.user_ids)

    @property
    def n_items(self) -> int:
        return len(self.item_ids)

    @property
    def n_interactions(self) -> int:
        return len(self.users)

    def __len__(self):
        return self.n_interactions

    def interactions(self) -> list[Interaction]:
        return [
            Interaction(
                self.user_ids[u],
                self.item_ids[i],
                int(t),
                float(r) if self.has_ratings else None,
            )
            for u, i, t, r in zip(self.users, self.items, self.timestamps, self.ratings)
        ]

    def user_rows(self) -> list[np.ndarray]:
        """Row positions of each user's interactions, in input order."""
        order = np.argsort(self.users, kind="stable")
        bounds = np.searchsorted(self.users[order], np.arange(self.n_users + 1))
        return [order[bounds[u] : bounds[u + 1]] for u in range(self.n_users)]

    def item_counts(self) -> np.ndarray:
        return np.bincount(self.items, minlength=self.n_items)

    def subset(self, rows: np.ndarray) -> Dataset:
        """Rows ``rows`` with the same user and item index."""
        rows = np.asarray(rows, dtype=np.int64)
        return Dataset(
            self.users[rows].copy(),
            self.items[rows].copy(),
            self.timestamps[rows].copy(),
            self.ratings[rows].copy(),
            self.user_ids,
            self.item_ids,
            self.has_ratings,
        )

    def content_hash(self) -> str:
        h = hashlib.sha256()
        for arr in (self.users, self.items, self.timestamps, self.ratings):
            h.update(np.ascontiguousarray(arr).tobytes())
        h.update("\x1f".join(self.user_ids).encode())
        h.update(b"\x1e")
        h.update("\x1f".join(self.item_ids).encode())
        h.update(b"1" if self.has_ratings else b"0")
        return h.hexdigest()


@dataclass(frozen=True, eq=False)
class SplitDataset:
    """Per-user chronological train/test partition.

    ``train`` shares the user and item index of the unsplit dataset, so test
    item ids always resolve to a dense index. ``split_point`` maps each user
    to the timestamp of their first held-out interaction.
    """

    train: Dataset
    test: Mapping[str, frozenset[str]]
    split_point: Mapping[str, int]
    test_rows: np.ndarray = field(repr=False, default=None)

    def test_items(self, user_id: str) -> np.ndarray:
        idx = self.train.item_index
        return np.array(sorted(idx[i] for i in self.test[user_id]), dtype=np.int64)


@dataclass(frozen=True)
class DatasetStats:
    n_users: int
    n_items: int
    n_interactions: int
    sparsity: float


def _parse_timestamp(text: str, mode: str) -> int:
    if mode == "epoch":
        return int(text)
    dt = datetime.fromisoformat(text)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return int(dt.timestamp())


def _detect_timestamp_mode(text: str) -> str:
    try:
        int(text)
        return "epoch"
    except ValueError:
        return "iso"


def load_interactions(
    path: str | Path,
    format: str = "csv",
    schema: Schema | None = None,
    lenient: bool = False,
) -> Dataset:
    """Read a delimited interaction log with a header row.

    Timestamps may be integer epoch seconds or ISO-8601 dates; the kind is
    detected from the first data row and must be uniform across the file.
    In lenient mode unparseable rows are skipped and counted in
    ``Dataset.skipped_rows``; otherwise the first bad row raises ``ParseError``.
    """
    schema = schema or Schema()
    delimiter = {"csv": ",", "tsv": "\t"}.get(format)
    if delimiter is None:
        raise ValueError(f"unknown format {format!r}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        wanted = {"user": schema.user, "item": schema.item, "timestamp": schema.timestamp}
        if schema.rating is not None:
            wanted["rating"] = schema.rating
        cols = {}
        for role, name in wanted.items():
            if name not in header:
                raise SchemaError(f"{path}: missing {role} column {name!r} (header: {header})")
            cols[role] = header.index(name)

        rows: list[Interaction] = []
        ts_mode = None
        skipped = 0
        for lineno, rec in enumerate(reader, start=2):
            if not rec or all(not c.strip() for c in rec):
                continue
            try:
                if len(rec) != len(header):
                    raise ValueError(f"expected {len(header)} fields, got {len(rec)}")
                ts_text = rec[cols["timestamp"]].strip()
                if ts_mode is None:
                    ts_mode = _detect_timestamp_mode(ts_text)
                ts = _parse_timestamp(ts_text, ts_mode)
                if ts < 0:
                    raise ValueError("negative timestamp")
                rating = None
                if "rating" in cols:
                    rating = float(rec[cols["rating"]])
                    if not math.isfinite(rating):
                        raise ValueError("non-finite rating")
                user = rec[cols["user"]].strip()
                item = rec[cols["item"]].strip()
                if not user or not item:
                    raise ValueError("empty identifier")
            except ValueError as exc:
                if not lenient:
                    raise ParseError(str(exc), lineno) from None
                skipped += 1
                continue
            rows.append(Interaction(user, item, ts, rating))
    if skipped:
        log.warning("%s: skipped %d unparseable rows", path, skipped)
    ds = Dataset.from_interactions(rows)
    return replace(ds, skipped_rows=skipped)


def filter_min_interactions(ds: Dataset, k: int = 10) -> Dataset:
    """Drop users with fewer than ``k`` interactions (single pass).

    Items left without interactions are dropped and both indices are
    re-densified, preserving first-appearance order.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    counts = np.bincount(ds.users, minlength=ds.n_users)
    keep = counts[ds.users] >= k
    if not keep.any():
        raise EmptyDatasetError(f"no user has >= {k} interactions")
    kept_users, users = np.unique(ds.users[keep], return_inverse=True)
    kept_items, items = np.unique(ds.items[keep], return_inverse=True)
    return Dataset(
        users.astype(np.int64),
        items.astype(np.int64),
        ds.timestamps[keep].copy(),
        ds.ratings[keep].copy(),
        tuple(ds.user_ids[u] for u in kept_users),
        tuple(ds.item_ids[i] for i in kept_items),
        ds.has_ratings,
    )


def train_size(n: int, train_fraction: float = 0.8) -> int:
    """Training-set size for a history of ``n``: ceil(fraction * n), at most n - 1."""
    return min(math.ceil(Fraction(str(train_fraction)) * n), n - 1)


def temporal_split(ds: Dataset, train_fraction: float = 0.8) -> SplitDataset:
    if not 0 < train_fraction < 1:
        raise ValueError("train_fraction must be in (0, 1)")
    train_rows = []
    test_rows = []
    test: dict[str, frozenset[str]] = {}
    split_point: dict[str, int] = {}
    for u, rows in enumerate(ds.user_rows()):
        if len(rows) == 0:
            continue
        if len(rows) < 2:
            raise ValueError(f"user {ds.user_ids[u]!r} has fewer than 2 interactions")
        rows = rows[np.argsort(ds.timestamps[rows], kind="stable")]
        n_train = train_size(len(rows), train_fraction)
        train_rows.append(rows[:n_train])
        test_rows.append(rows[n_train:])
        uid = ds.user_ids[u]
        test[uid] = frozenset(ds.item_ids[i] for i in ds.items[rows[n_train:]])
        split_point[uid] = int(ds.timestamps[rows[n_train]])
    train = ds.subset(np.sort(np.concatenate(train_rows)))
    return SplitDataset(train, test, split_point, np.sort(np.concatenate(test_rows)))


def sparsity(n_users: int, n_items: int, n_interactions: int) -> float:
    if n_users == 0 or n_items == 0:
        return 1.0
    return min(1.0, max(0.0, 1.0 - n_interactions / (n_users * n_items)))


def dataset_stats(ds: Dataset) -> DatasetStats:
    n_users = len(np.unique(ds.users))
    n_items = len(np.unique(ds.items))
    return DatasetStats(n_users, n_items, ds.n_interactions, sparsity(n_users, n_items, ds.n_interactions))
