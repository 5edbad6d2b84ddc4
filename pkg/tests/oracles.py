"""Independent reference implementations used as test oracles.

Each one is written from the definition, sharing no code with the package.
"""

import math
from fractions import Fraction

import numpy as np


def ndcg(ranked, relevant, k):
    dcg = 0.0
    for pos in range(1, min(k, len(ranked)) + 1):
        if ranked[pos - 1] in relevant:
            dcg += 1.0 / math.log2(pos + 1)
    idcg = sum(1.0 / math.log2(p + 1) for p in range(1, min(k, len(relevant)) + 1))
    return dcg / idcg


def n_train(n, fraction=Fraction(4, 5)):
    """Count positions p (1-based, chronological) whose preceding share is
    below the fraction, then force one held-out element."""
    count = sum(1 for p in range(1, n + 1) if Fraction(p - 1, n) < fraction)
    return min(count, n - 1)


def sparsity_pct(users, items, interactions):
    return float(100 * (1 - Fraction(interactions, users * items)))


def ease_columns(X, lam):
    """Per-column ridge regression excluding the target column itself."""
    G = X.T @ X
    n = G.shape[0]
    B = np.zeros((n, n))
    for j in range(n):
        o = [i for i in range(n) if i != j]
        B[o, j] = np.linalg.solve(G[np.ix_(o, o)] + lam * np.eye(n - 1), G[o, j])
    return B


def brute_split_1d(x, y, min_leaf=1):
    """Best (threshold, sse_reduction) over all midpoints, by direct SSE."""

    def sse(v):
        return float(((v - v.mean()) ** 2).sum()) if len(v) else 0.0

    values = sorted(set(x.tolist()))
    total = sse(y)
    best = None
    for lo, hi in zip(values, values[1:]):
        t = lo + (hi - lo) / 2
        left, right = y[x <= t], y[x > t]
        if len(left) < min_leaf or len(right) < min_leaf:
            continue
        gain = total - sse(left) - sse(right)
        if best is None or gain > best[1] + 1e-9 * max(1.0, abs(best[1])):
            best = (t, gain)
    return best


def halstead(n1, n2, N1, N2):
    n, N = n1 + n2, N1 + N2
    V = N * math.log2(n) if n > 1 else 0.0
    D = (n1 / 2) * (N2 / max(n2, 1))
    return V, D, D * V
