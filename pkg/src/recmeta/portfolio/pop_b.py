from __future__ import annotations

import numpy as np

from recmeta.dataset import Dataset
from recmeta.portfolio.base import Recommender


class RatingDampedPop(Recommender):
    """Popularity damped by how well an item is rated.

    score(i) = count(i) * mean_rating(i) / max_rating. For implicit data all
    ratings are 1 and the ranking equals plain popularity.
    """

    family = "popularity"
    defaults = {}

    def _fit(self, train: Dataset) -> None:
        n = train.n_items
        counts = np.zeros(n)
        rating_sum = np.zeros(n)
        np.add.at(counts, train.items, 1.0)
        np.add.at(rating_sum, train.items, train.ratings)

        max_rating = float(train.ratings.max())
        if max_rating <= 0:
            max_rating = 1.0

        mean_rating = np.divide(rating_sum, counts, out=np.zeros(n), where=counts > 0)
        scores = counts * mean_rating / max_rating
        self.item_scores_ = scores

    def score_user(self, user: int) -> np.ndarray:
        return self.item_scores_
