from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from recmeta.dataset import Dataset
from recmeta.portfolio.base import Recommender


class ShrunkItemKNN(Recommender):
    """Item k-NN whose cosine similarities are shrunk toward zero by support.

    sim'(i, j) = cos(i, j) * co(i, j) / (co(i, j) + shrinkage), where co is the
    number of users who consumed both items. Each item keeps its
    ``n_neighbors`` most similar items.
    """

    family = "itemknn"
    defaults = {"n_neighbors": 100, "shrinkage": 100.0}

    def _fit(self, train: Dataset) -> None:
        n_neighbors = int(self.params["n_neighbors"])
        shrinkage = float(self.params["shrinkage"])

        item_user = self.history_.T.tocsr()
        support = np.asarray(item_user.sum(axis=1)).ravel()
        co = (item_user @ item_user.T).tocoo()

        off_diag = co.row != co.col
        i, j, c = co.row[off_diag], co.col[off_diag], co.data[off_diag]
        cosine = c / np.sqrt(support[i] * support[j])
        value = cosine * (c / (c + shrinkage))

        # neighbour selection: sort each row by (-value, column) and cut
        order = np.lexsort((j, -value, i))
        i, j, value = i[order], j[order], value[order]
        starts = np.searchsorted(i, np.arange(self.n_items))
        rank = np.arange(len(i)) - starts[i]
        keep = (rank < n_neighbors) & (value > 0)

        sim = sp.csr_matrix((value[keep], (i[keep], j[keep])), shape=(self.n_items, self.n_items))
        sim.sort_indices()
        self.similarity_ = sim

    def score_user(self, user: int) -> np.ndarray:
        seen = self.history(user)
        return np.asarray(self.similarity_[:, seen].sum(axis=1)).ravel()
