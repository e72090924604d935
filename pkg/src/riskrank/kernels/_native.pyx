# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled implementations of the hot kernels.

Must stay comparison-identical to kernels._purepy: neighbors are ordered by
(descending similarity, ascending id-rank).
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()


def knn_class_counts(
    double[:, ::1] sims,
    long long[::1] labels,
    long long[::1] order_rank,
    long long[::1] exclude,
    int k,
    int num_classes,
):
    cdef Py_ssize_t n_query = sims.shape[0]
    cdef Py_ssize_t n_train = sims.shape[1]
    counts_arr = np.zeros((n_query, num_classes), dtype=np.int64)
    cdef long long[:, ::1] counts = counts_arr
    # per-query top-k selection buffers
    sel_sim_arr = np.empty(k, dtype=np.float64)
    sel_rank_arr = np.empty(k, dtype=np.int64)
    sel_lab_arr = np.empty(k, dtype=np.int64)
    cdef double[::1] sel_sim = sel_sim_arr
    cdef long long[::1] sel_rank = sel_rank_arr
    cdef long long[::1] sel_lab = sel_lab_arr
    cdef Py_ssize_t i, j, pos, m
    cdef int filled
    cdef double s
    cdef long long r
    for i in range(n_query):
        filled = 0
        for j in range(n_train):
            if j == exclude[i]:
                continue
            s = sims[i, j]
            r = order_rank[j]
            if filled == k and (
                s < sel_sim[filled - 1]
                or (s == sel_sim[filled - 1] and r > sel_rank[filled - 1])
            ):
                continue
            # insertion position in the (desc sim, asc rank) ordered buffer
            pos = filled
            while pos > 0 and (
                s > sel_sim[pos - 1]
                or (s == sel_sim[pos - 1] and r < sel_rank[pos - 1])
            ):
                pos -= 1
            if filled < k:
                filled += 1
            m = filled - 1
            while m > pos:
                sel_sim[m] = sel_sim[m - 1]
                sel_rank[m] = sel_rank[m - 1]
                sel_lab[m] = sel_lab[m - 1]
                m -= 1
            sel_sim[pos] = s
            sel_rank[pos] = r
            sel_lab[pos] = labels[j]
        for m in range(filled):
            counts[i, sel_lab[m]] += 1
    return counts_arr


def vote_wins(double[:, ::1] gamma):
    # per class column: an instance's strict wins equal the number of values
    # below its own (self-comparison can never be strict), so one sort per
    # column plus binary searches replaces the quadratic double loop
    cdef Py_ssize_t n = gamma.shape[0]
    cdef Py_ssize_t C = gamma.shape[1]
    wins_arr = np.zeros(n, dtype=np.int64)
    cdef long long[::1] wins = wins_arr
    col_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] col = col_arr
    cdef Py_ssize_t i, c, lo, hi, mid
    cdef double v
    for c in range(C):
        for i in range(n):
            col[i] = gamma[i, c]
        col_arr.sort()
        for i in range(n):
            v = gamma[i, c]
            lo = 0
            hi = n
            while lo < hi:  # leftmost index with col[mid] >= v
                mid = (lo + hi) // 2
                if col[mid] < v:
                    lo = mid + 1
                else:
                    hi = mid
            wins[i] += lo
    return wins_arr
