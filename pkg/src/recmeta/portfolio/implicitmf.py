"""Implicit-feedback matrix factorization by alternating least squares.

Confidence c_ui = 1 + alpha * r_ui, preference p_ui = [r_ui > 0]. Each half
sweep solves the per-row ridge problem exactly, using
Y^T C_u Y = Y^T Y + Y_u^T (C_u - I) Y_u so only observed entries are touched.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from recmeta.dataset import Dataset
from recmeta.portfolio.base import Recommender


def _solve_side(R: sp.csr_matrix, other: np.ndarray, alpha: float, reg: float) -> np.ndarray:
    d = other.shape[1]
    gram = other.T @ other
    ridge = reg * np.eye(d)
    out = np.zeros((R.shape[0], d))
    for row in range(R.shape[0]):
        lo, hi = R.indptr[row], R.indptr[row + 1]
        if lo == hi:
            continue  # no observations: the minimizer is 0
        cols = R.indices[lo:hi]
        conf = 1.0 + alpha * R.data[lo:hi]
        Y = other[cols]
        A = gram + (Y.T * (conf - 1.0)) @ Y + ridge
        b = Y.T @ conf
        out[row] = np.linalg.solve(A, b)
    return out


def weighted_loss(R: sp.csr_matrix, X: np.ndarray, Y: np.ndarray, alpha: float, reg: float) -> float:
    """sum_ui c_ui (p_ui - x_u.y_i)^2 + reg (|X|^2 + |Y|^2) over all cells."""
    coo = R.tocoo()
    pred = np.einsum("ij,ij->i", X[coo.row], Y[coo.col])
    conf = 1.0 + alpha * coo.data
    # unit-confidence part over every cell, expanded so zeros need no enumeration
    all_sq = float(np.sum((X.T @ X) * (Y.T @ Y)))
    base = all_sq - 2.0 * pred.sum() + len(pred)
    extra = float(np.sum((conf - 1.0) * (1.0 - pred) ** 2))
    return base + extra + reg * (float(np.sum(X * X)) + float(np.sum(Y * Y)))


class ImplicitMF(Recommender):
    family = "implicitmf"
    defaults = {"factors": 32, "reg": 0.1, "alpha": 40.0, "iterations": 15}

    def _fit(self, train: Dataset) -> None:
        p = self.params
        alpha, reg = float(p["alpha"]), float(p["reg"])
        R = sp.csr_matrix(
            (train.ratings, (train.users, train.items)), shape=(train.n_users, train.n_items)
        )
        R.sum_duplicates()
        R.data = np.maximum(R.data, 0.0)
        R.eliminate_zeros()
        Rt = R.T.tocsr()

        rng = np.random.default_rng(self.seed)
        Y = rng.normal(0.0, 0.01, (train.n_items, int(p["factors"])))
        X = np.zeros((train.n_users, Y.shape[1]))
        losses = []
        for _ in range(int(p["iterations"])):
            X = _solve_side(R, Y, alpha, reg)
            Y = _solve_side(Rt, X, alpha, reg)
            losses.append(weighted_loss(R, X, Y, alpha, reg))

        self.user_factors_ = X
        self.item_factors_ = Y
        self.loss_history_ = np.array(losses)

    def score_user(self, user: int) -> np.ndarray:
        return self.item_factors_ @ self.user_factors_[user]
