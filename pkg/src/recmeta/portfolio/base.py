"""Uniform fit/recommend interface shared by all portfolio members."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from recmeta.dataset import Dataset


class DegenerateDataError(ValueError):
    pass


@dataclass(frozen=True)
class RankedList:
    """Top-k output: item dense indices with non-increasing scores."""

    items: np.ndarray
    scores: np.ndarray

    def __len__(self):
        return len(self.items)


def interaction_matrix(ds: Dataset, values: str = "binary") -> sp.csr_matrix:
    """User x item CSR matrix over the dataset's full index.

    ``values``: ``binary`` (1 where any interaction), ``count`` (number of
    interactions) or ``rating`` (sum of ratings over duplicates).
    """
    if values == "rating":
        data = ds.ratings
    else:
        data = np.ones(ds.n_interactions)
    mat = sp.csr_matrix((data, (ds.users, ds.items)), shape=(ds.n_users, ds.n_items), dtype=np.float64)
    mat.sum_duplicates()
    mat.sort_indices()
    if values == "binary":
        mat.data[:] = 1.0
    return mat


def last_items(ds: Dataset) -> np.ndarray:
    """Chronologically last item per user (stable on timestamp ties); -1 if none."""
    out = np.full(ds.n_users, -1, dtype=np.int64)
    order = np.lexsort((np.arange(ds.n_interactions), ds.timestamps))
    out[ds.users[order]] = ds.items[order]
    return out


class Recommender:
    """Base class. Subclasses set ``family`` and ``defaults`` and implement
    ``_fit`` and ``score_user``.

    Fitted state lives in attributes with a trailing underscore so models can
    be cached generically (see ``get_state``/``set_state``). A fitted model is
    not mutated afterwards.
    """

    family: str = ""
    defaults: dict = {}

    def __init__(self, seed: int = 0, **params):
        unknown = set(params) - set(self.defaults)
        if unknown:
            raise TypeError(f"{type(self).__name__}: unknown parameters {sorted(unknown)}")
        self.seed = int(seed)
        self.params = {**self.defaults, **params}

    def fit(self, train: Dataset) -> Recommender:
        if train.n_interactions == 0:
            raise DegenerateDataError("cannot fit on an empty training set")
        self.history_ = interaction_matrix(train, "binary")
        self._fit(train)
        return self

    def _fit(self, train: Dataset) -> None:
        raise NotImplementedError

    def score_user(self, user: int) -> np.ndarray:
        raise NotImplementedError

    @property
    def n_items(self) -> int:
        return self.history_.shape[1]

    def history(self, user: int) -> np.ndarray:
        h = self.history_
        return h.indices[h.indptr[user] : h.indptr[user + 1]]

    def recommend(self, user: int, k: int = 10) -> RankedList:
        """Top-``k`` unseen items; ties go to the lower item index."""
        if not 0 <= user < self.history_.shape[0]:
            raise IndexError(f"user {user} not in training data")
        scores = np.asarray(self.score_user(user), dtype=np.float64)
        if np.isnan(scores).any():
            raise FloatingPointError(f"{type(self).__name__} produced NaN scores")
        mask = np.ones(self.n_items, dtype=bool)
        mask[self.history(user)] = False
        cand = np.flatnonzero(mask)
        order = np.lexsort((cand, -scores[cand]))[:k]
        return RankedList(cand[order], scores[cand[order]])

    def get_state(self) -> dict[str, np.ndarray]:
        state = {}
        for name, value in vars(self).items():
            if not name.endswith("_"):
                continue
            if sp.issparse(value):
                value = value.tocsr()
                state[f"{name}.data"] = value.data
                state[f"{name}.indices"] = value.indices
                state[f"{name}.indptr"] = value.indptr
                state[f"{name}.shape"] = np.array(value.shape)
            else:
                state[name] = np.asarray(value)
        return state

    def set_state(self, state: dict[str, np.ndarray]) -> Recommender:
        sparse_parts: dict[str, dict] = {}
        for key, value in state.items():
            if "." in key:
                name, part = key.split(".", 1)
                sparse_parts.setdefault(name, {})[part] = value
            else:
                setattr(self, key, value)
        for name, parts in sparse_parts.items():
            mat = sp.csr_matrix(
                (parts["data"], parts["indices"], parts["indptr"]), shape=tuple(parts["shape"])
            )
            setattr(self, name, mat)
        return self
