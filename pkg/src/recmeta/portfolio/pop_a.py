"""Most-popular baseline: items ranked by training interaction count."""

import numpy as np

from recmeta.portfolio.base import Recommender


class Popular(Recommender):
    family = "popularity"
    defaults = {}

    def _fit(self, train):
        self.item_scores_ = np.bincount(train.items, minlength=train.n_items).astype(np.float64)

    def score_user(self, user):
        return self.item_scores_
