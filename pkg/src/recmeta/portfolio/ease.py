"""EASE: closed-form item-item autoencoder with a zero-diagonal constraint."""

import numpy as np

from recmeta.portfolio.base import Recommender


def ease_weights(X, lam):
    """B = I - P diag(1/diag(P)) with P = (X^T X + lam I)^-1; diag(B) = 0."""
    G = np.asarray((X.T @ X).todense() if hasattr(X, "todense") else X.T @ X, dtype=np.float64)
    G[np.diag_indices_from(G)] += lam
    P = np.linalg.inv(G)
    B = P / (-np.diag(P))
    B[np.diag_indices_from(B)] = 0.0
    return B


class EASE(Recommender):
    family = "ease"
    defaults = {"reg": 100.0}

    def _fit(self, train):
        self.weights_ = ease_weights(self.history_, float(self.params["reg"]))

    def score_user(self, user):
        return self.weights_[self.history(user)].sum(axis=0)
