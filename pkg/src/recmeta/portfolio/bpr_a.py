"""Bayesian personalized ranking matrix factorization (SGD, one pass over
shuffled positive pairs per epoch)."""

import numpy as np

from recmeta.portfolio.base import Recommender


def sample_negatives(rng, users, positives, n_items):
    """Uniform negative item per user, rejecting items in the user's history.

    ``positives`` is a sorted array of ``user * n_items + item`` keys.
    """
    neg = rng.integers(0, n_items, size=len(users))
    bad = np.isin(users * n_items + neg, positives)
    while bad.any():
        neg[bad] = rng.integers(0, n_items, size=int(bad.sum()))
        bad = np.isin(users * n_items + neg, positives)
    return neg


class BPR(Recommender):
    family = "bpr"
    defaults = {"factors": 32, "learning_rate": 0.05, "reg": 0.01, "epochs": 30, "init_scale": 0.1}

    def _fit(self, train):
        p = self.params
        d = int(p["factors"])
        lr, reg = float(p["learning_rate"]), float(p["reg"])
        rng = np.random.default_rng(self.seed)
        n_users, n_items = self.history_.shape

        P = rng.normal(0.0, p["init_scale"], (n_users, d))
        Q = rng.normal(0.0, p["init_scale"], (n_items, d))

        X = self.history_.tocoo()
        # users who consumed every item have no negatives
        full = np.diff(self.history_.indptr) >= n_items
        ok = ~full[X.row]
        pos_u, pos_i = X.row[ok].astype(np.int64), X.col[ok].astype(np.int64)
        keys = np.sort(pos_u * n_items + pos_i)

        for _ in range(int(p["epochs"])):
            order = rng.permutation(len(pos_u))
            us, its = pos_u[order], pos_i[order]
            js = sample_negatives(rng, us, keys, n_items)
            for u, i, j in zip(us, its, js):
                pu = P[u].copy()
                diff = Q[i] - Q[j]
                g = 1.0 / (1.0 + np.exp(pu @ diff))
                P[u] += lr * (g * diff - reg * pu)
                Q[i] += lr * (g * pu - reg * Q[i])
                Q[j] += lr * (-g * pu - reg * Q[j])

        self.user_factors_ = P
        self.item_factors_ = Q

    def score_user(self, user):
        return self.item_factors_ @ self.user_factors_[user]
