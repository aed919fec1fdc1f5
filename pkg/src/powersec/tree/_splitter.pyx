# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled split scan for level-wise tree growth.

One call evaluates, for every frontier node and every feature the node may
use, the best threshold on that feature. Samples are visited in the global
presorted order of each feature, so no per-node sorting takes place.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport log2, INFINITY, isnan

cnp.import_array()

DEF GINI = 0
DEF ENTROPY = 1
DEF VARIANCE = 2

cdef double TIE_EPS = 1e-12


cdef inline double _entropy(const double* c, double tot, int K) noexcept nogil:
    cdef double h = 0.0, p
    cdef int k
    for k in range(K):
        if c[k] > 0:
            p = c[k] / tot
            h -= p * log2(p)
    return h


cdef inline double _right_entropy(const double* lw, const double* tw, double wr, int K) noexcept nogil:
    cdef double h = 0.0, p, c
    cdef int k
    for k in range(K):
        c = tw[k] - lw[k]
        if c > 0:
            p = c / wr
            h -= p * log2(p)
    return h


cdef inline double _score(int criterion, const double* lw, const double* tw, double wl,
                          double wt, double wnode, int K, double* aux) noexcept nogil:
    """Impurity decrease of a split; ``lw``/``tw`` are left/total sums."""
    cdef double wr = wt - wl
    cdef double acc, r, pl, pr
    cdef int k
    aux[0] = 0.0
    if criterion == GINI:
        acc = 0.0
        for k in range(K):
            r = tw[k] - lw[k]
            acc = acc + lw[k] * lw[k] / wl + r * r / wr - tw[k] * tw[k] / wt
        return acc / wnode
    elif criterion == VARIANCE:
        r = tw[1] - lw[1]
        return (lw[1] * lw[1] / wl + r * r / wr - tw[1] * tw[1] / wt) / wnode
    else:
        acc = 0.0
        pl = wl / wt
        pr = wr / wt
        # entropy of the right side from its own counts
        acc = _entropy(tw, wt, K) - pl * _entropy(lw, wl, K)
        acc = acc - pr * _right_entropy(lw, tw, wr, K)
        aux[0] = -(pl * log2(pl) + pr * log2(pr))
        return acc * wt / wnode


def level_split(const double[::1, :] X, const int[:, ::1] order, const int[::1] nan_start,
                const int[::1] node_of, const double[::1] w, const double[::1] cnt,
                const int[::1] y, const double[::1] target, int K, int n_nodes,
                const unsigned char[:, ::1] uses, int criterion, double min_leaf,
                const double[:, ::1] rand_u, bint random_mode,
                const double[:, ::1] node_stats, const double[::1] node_cnt,
                const double[::1] node_w):
    """Best split per (node, feature).

    Returns ``score, threshold, aux`` arrays of shape (n_nodes, p); score is
    -inf where no admissible split exists. For the entropy criterion ``aux``
    holds the split information, otherwise zero.
    """
    cdef Py_ssize_t n = X.shape[0]
    cdef Py_ssize_t p = X.shape[1]
    cdef int D = 2 if criterion == VARIANCE else K
    score_a = np.full((n_nodes, p), -INFINITY)
    thr_a = np.zeros((n_nodes, p))
    aux_a = np.zeros((n_nodes, p))
    cdef double[:, ::1] score = score_a
    cdef double[:, ::1] thr = thr_a
    cdef double[:, ::1] auxv = aux_a
    left_a = np.zeros((n_nodes, D))
    tot_a = np.zeros((n_nodes, D))
    cdef double[:, ::1] left = left_a
    cdef double[:, ::1] tot = tot_a
    cdef double[::1] lcnt = np.zeros(n_nodes)
    cdef double[::1] lw = np.zeros(n_nodes)
    cdef double[::1] tcnt = np.zeros(n_nodes)
    cdef double[::1] tw = np.zeros(n_nodes)
    cdef double[::1] last = np.zeros(n_nodes)
    cdef double[::1] mn = np.zeros(n_nodes)
    cdef double[::1] mx = np.zeros(n_nodes)
    cdef double[::1] cut = np.zeros(n_nodes)
    cdef unsigned char[::1] seen = np.zeros(n_nodes, dtype=np.uint8)
    cdef unsigned char[::1] active = np.zeros(n_nodes, dtype=np.uint8)
    cdef Py_ssize_t f, i, s, j, k, m
    cdef double v, sc, a, mid, wr
    cdef bint any_used
    for f in range(p):
        any_used = False
        for j in range(n_nodes):
            active[j] = uses[j, f]
            if active[j]:
                any_used = True
        if not any_used:
            continue
        m = nan_start[f]
        for j in range(n_nodes):
            for k in range(D):
                left[j, k] = 0.0
                tot[j, k] = node_stats[j, k]
            lcnt[j] = 0.0
            lw[j] = 0.0
            tcnt[j] = node_cnt[j]
            tw[j] = node_w[j]
            seen[j] = 0
        # remove missing values of this feature from the node totals
        for i in range(m, n):
            s = order[f, i]
            j = node_of[s]
            if j < 0 or not active[j]:
                continue
            tcnt[j] -= cnt[s]
            tw[j] -= w[s]
            if criterion == VARIANCE:
                tot[j, 0] -= w[s]
                tot[j, 1] -= w[s] * target[s]
            else:
                tot[j, y[s]] -= w[s]
        if random_mode:
            for i in range(m):
                s = order[f, i]
                j = node_of[s]
                if j < 0 or not active[j]:
                    continue
                v = X[s, f]
                if not seen[j]:
                    seen[j] = 1
                    mn[j] = v
                mx[j] = v
            for j in range(n_nodes):
                if active[j] and seen[j] and mx[j] > mn[j]:
                    cut[j] = mn[j] + rand_u[j, f] * (mx[j] - mn[j])
                    if cut[j] >= mx[j]:
                        cut[j] = mn[j]
                else:
                    active[j] = 0
            for i in range(m):
                s = order[f, i]
                j = node_of[s]
                if j < 0 or not active[j]:
                    continue
                if X[s, f] <= cut[j]:
                    lcnt[j] += cnt[s]
                    lw[j] += w[s]
                    if criterion == VARIANCE:
                        left[j, 0] += w[s]
                        left[j, 1] += w[s] * target[s]
                    else:
                        left[j, y[s]] += w[s]
            for j in range(n_nodes):
                if not active[j]:
                    continue
                if lcnt[j] < min_leaf or tcnt[j] - lcnt[j] < min_leaf:
                    continue
                if lw[j] <= 0 or tw[j] - lw[j] <= 0:
                    continue
                sc = _score(criterion, &left[j, 0], &tot[j, 0], lw[j], tw[j], node_w[j], K, &a)
                score[j, f] = sc
                thr[j, f] = cut[j]
                auxv[j, f] = a
            continue
        for i in range(m):
            s = order[f, i]
            j = node_of[s]
            if j < 0 or not active[j]:
                continue
            v = X[s, f]
            if seen[j] and v > last[j]:
                if lcnt[j] >= min_leaf and tcnt[j] - lcnt[j] >= min_leaf \
                        and lw[j] > 0 and tw[j] - lw[j] > 0:
                    sc = _score(criterion, &left[j, 0], &tot[j, 0], lw[j], tw[j], node_w[j], K, &a)
                    if sc > score[j, f] + TIE_EPS:
                        mid = 0.5 * (last[j] + v)
                        if mid >= v:
                            mid = last[j]
                        score[j, f] = sc
                        thr[j, f] = mid
                        auxv[j, f] = a
            seen[j] = 1
            last[j] = v
            lcnt[j] += cnt[s]
            lw[j] += w[s]
            if criterion == VARIANCE:
                left[j, 0] += w[s]
                left[j, 1] += w[s] * target[s]
            else:
                left[j, y[s]] += w[s]
    return score_a, thr_a, aux_a
