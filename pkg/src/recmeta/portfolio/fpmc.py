"""Factorized personalized Markov chain.

x(u, l, i) = <VUI_u, VIU_i> + <VIL_i, VLI_l>, trained with BPR-style updates
on (user, previous item, next item) triples taken from chronologically
adjacent training interactions. Recommendation conditions on the user's last
training item.
"""

from __future__ import annotations

import numpy as np

from recmeta.dataset import Dataset
from recmeta.portfolio.base import Recommender, last_items


def transition_triples(train: Dataset) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    order = np.lexsort((np.arange(train.n_interactions), train.timestamps, train.users))
    u, it = train.users[order], train.items[order]
    same = u[1:] == u[:-1]
    return u[1:][same], it[:-1][same], it[1:][same]


class FPMC(Recommender):
    family = "fpmc"
    defaults = {"factors": 32, "learning_rate": 0.05, "reg": 0.01, "epochs": 30, "init_scale": 0.1}

    def _fit(self, train: Dataset) -> None:
        p = self.params
        d, lr, reg = int(p["factors"]), float(p["learning_rate"]), float(p["reg"])
        rng = np.random.default_rng(self.seed)
        n_users, n_items = self.history_.shape
        init = float(p["init_scale"])

        VUI = rng.normal(0.0, init, (n_users, d))
        VIU = rng.normal(0.0, init, (n_items, d))
        VIL = rng.normal(0.0, init, (n_items, d))
        VLI = rng.normal(0.0, init, (n_items, d))

        us, prev, nxt = transition_triples(train)
        hist = self.history_
        seen = [set(hist.indices[hist.indptr[u] : hist.indptr[u + 1]]) for u in range(n_users)]
        usable = np.array([len(seen[u]) < n_items for u in us], dtype=bool)
        us, prev, nxt = us[usable], prev[usable], nxt[usable]

        for _ in range(int(p["epochs"])):
            for t in rng.permutation(len(us)):
                u, l, i = us[t], prev[t], nxt[t]
                j = int(rng.integers(0, n_items))
                while j in seen[u]:
                    j = int(rng.integers(0, n_items))

                x = VUI[u] @ (VIU[i] - VIU[j]) + VLI[l] @ (VIL[i] - VIL[j])
                delta = 1.0 / (1.0 + np.exp(x))

                vui, vli = VUI[u].copy(), VLI[l].copy()
                VUI[u] += lr * (delta * (VIU[i] - VIU[j]) - reg * vui)
                VLI[l] += lr * (delta * (VIL[i] - VIL[j]) - reg * vli)
                VIU[i] += lr * (delta * vui - reg * VIU[i])
                VIU[j] += lr * (-delta * vui - reg * VIU[j])
                VIL[i] += lr * (delta * vli - reg * VIL[i])
                VIL[j] += lr * (-delta * vli - reg * VIL[j])

        self.user_item_ = VUI
        self.item_user_ = VIU
        self.item_prev_ = VIL
        self.prev_item_ = VLI
        self.last_item_ = last_items(train)

    def score_user(self, user: int) -> np.ndarray:
        scores = self.item_user_ @ self.user_item_[user]
        last = self.last_item_[user]
        if last >= 0:
            scores = scores + self.item_prev_ @ self.prev_item_[last]
        return scores
