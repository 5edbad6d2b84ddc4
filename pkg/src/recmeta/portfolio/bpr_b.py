from __future__ import annotations

import numpy as np

from recmeta.dataset import Dataset
from recmeta.portfolio.base import Recommender


class PairwiseMF(Recommender):
    """BPR-optimized matrix factorization, sampling variant.

    Each epoch draws as many (user, positive) pairs as there are distinct
    positives, with replacement, and pairs each with a uniformly drawn
    unseen item. Gradient ascent on ln sigmoid(x_ui - x_uj) with L2 decay.
    """

    family = "bpr"
    defaults = {"embedding_size": 64, "learning_rate": 0.01, "reg_weight": 0.001, "epochs": 50}

    def _fit(self, train: Dataset) -> None:
        cfg = self.params
        dim = int(cfg["embedding_size"])
        rng = np.random.default_rng(self.seed)
        n_users, n_items = self.history_.shape

        scale = 1.0 / np.sqrt(dim)
        self.user_emb_ = rng.uniform(-scale, scale, (n_users, dim))
        self.item_emb_ = rng.uniform(-scale, scale, (n_items, dim))

        hist = self.history_
        sizes = np.diff(hist.indptr)
        eligible = sizes < n_items
        pair_user = np.repeat(np.arange(n_users), sizes)[np.repeat(eligible, sizes)]
        pair_item = hist.indices[np.repeat(eligible, sizes)]
        if len(pair_user) == 0:
            return

        seen = [set(hist.indices[hist.indptr[u] : hist.indptr[u + 1]]) for u in range(n_users)]
        for _ in range(int(cfg["epochs"])):
            draw = rng.integers(0, len(pair_user), size=len(pair_user))
            for n in draw:
                u = pair_user[n]
                j = int(rng.integers(0, n_items))
                while j in seen[u]:
                    j = int(rng.integers(0, n_items))
                self._step(u, pair_item[n], j)

    def _step(self, u: int, i: int, j: int) -> None:
        lr = self.params["learning_rate"]
        reg = self.params["reg_weight"]
        user = self.user_emb_[u]
        pos, neg = self.item_emb_[i], self.item_emb_[j]

        x_uij = user @ pos - user @ neg
        weight = np.exp(-np.logaddexp(0.0, x_uij))  # sigmoid(-x_uij)

        grad_user = weight * (pos - neg) - reg * user
        grad_pos = weight * user - reg * pos
        grad_neg = -weight * user - reg * neg
        self.user_emb_[u] = user + lr * grad_user
        self.item_emb_[i] = pos + lr * grad_pos
        self.item_emb_[j] = neg + lr * grad_neg

    def score_user(self, user: int) -> np.ndarray:
        return self.item_emb_ @ self.user_emb_[user]
