"""Pure-numpy fallback implementations of the hot kernels."""

from __future__ import annotations

import numpy as np


def knn_class_counts(sims, labels, order_rank, exclude, k, num_classes):
    n_query = sims.shape[0]
    counts = np.zeros((n_query, num_classes), dtype=np.int64)
    for i in range(n_query):
        row = sims[i]
        # total order: descending similarity, ascending id-rank
        order = np.lexsort((order_rank, -row))
        taken = 0
        for j in order:
            if j == exclude[i]:
                continue
            counts[i, labels[j]] += 1
            taken += 1
            if taken == k:
                break
    return counts


def vote_wins(gamma):
    # wins[i] = sum over classes of |{j : gamma[j, c] < gamma[i, c]}|;
    # the strict inequality excludes self automatically.
    n, C = gamma.shape
    wins = np.zeros(n, dtype=np.int64)
    for c in range(C):
        col = np.sort(gamma[:, c])
        wins += np.searchsorted(col, gamma[:, c], side="left")
    return wins
