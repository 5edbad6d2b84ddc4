"""Item-item k-NN with plain cosine similarity."""

import numpy as np
import scipy.sparse as sp

from recmeta.portfolio.base import Recommender


def _top_n_rows(sim, n):
    """Keep the ``n`` largest positive entries of each row (ties: lower column)."""
    sim = sim.tocsr()
    rows, cols, vals = [], [], []
    for i in range(sim.shape[0]):
        lo, hi = sim.indptr[i], sim.indptr[i + 1]
        c = sim.indices[lo:hi]
        v = sim.data[lo:hi]
        keep = v > 0
        c, v = c[keep], v[keep]
        if len(c) > n:
            sel = np.lexsort((c, -v))[:n]
            c, v = c[sel], v[sel]
        rows.append(np.full(len(c), i))
        cols.append(c)
        vals.append(v)
    rows = np.concatenate(rows) if rows else np.empty(0, int)
    out = sp.csr_matrix(
        (np.concatenate(vals), (rows, np.concatenate(cols))), shape=sim.shape
    )
    out.sort_indices()
    return out


class ItemKNN(Recommender):
    family = "itemknn"
    defaults = {"n_neighbors": 20}

    def _fit(self, train):
        X = self.history_
        co = (X.T @ X).tocsr()
        norms = np.sqrt(co.diagonal())
        inv = np.divide(1.0, norms, out=np.zeros_like(norms), where=norms > 0)
        sim = sp.diags(inv) @ co @ sp.diags(inv)
        sim = sim.tolil()
        sim.setdiag(0)
        # row i holds the neighbours of item i
        self.similarity_ = _top_n_rows(sim.tocsr(), int(self.params["n_neighbors"]))

    def score_user(self, user):
        x = np.zeros(self.n_items)
        x[self.history(user)] = 1.0
        return self.similarity_ @ x
