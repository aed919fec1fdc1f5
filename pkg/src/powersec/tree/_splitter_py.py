"""Pure numpy version of the split scan in ``_splitter.pyx``.

Visits samples in the same presorted order and accumulates statistics in the
same order as the compiled kernel, so both produce the same splits.
"""
import numpy as np

GINI, ENTROPY, VARIANCE = 0, 1, 2
TIE_EPS = 1e-12


def _entropy(counts, tot):
    h = np.zeros(np.broadcast(counts[..., 0], tot).shape)
    for k in range(counts.shape[-1]):
        c = counts[..., k]
        pos = c > 0
        p = np.where(pos, c / np.where(tot > 0, tot, 1.0), 1.0)
        h = h - np.where(pos, p * np.log2(p), 0.0)
    return h


def _scores(criterion, L, T, wl, wt, wnode):
    """Vectorized counterpart of ``_score``; ``L`` has one row per candidate."""
    wr = wt - wl
    if criterion == GINI:
        acc = np.zeros(len(wl))
        for k in range(T.shape[0]):
            r = T[k] - L[:, k]
            acc = acc + L[:, k] * L[:, k] / wl + r * r / wr - T[k] * T[k] / wt
        return acc / wnode, np.zeros(len(wl))
    if criterion == VARIANCE:
        r = T[1] - L[:, 1]
        return (L[:, 1] * L[:, 1] / wl + r * r / wr - T[1] * T[1] / wt) / wnode, np.zeros(len(wl))
    pl = wl / wt
    pr = wr / wt
    acc = _entropy(T[None, :], np.array([wt]))[0] - pl * _entropy(L, wl)
    acc = acc - pr * _entropy(T[None, :] - L, wr)
    aux = -(pl * np.log2(pl) + pr * np.log2(pr))
    return acc * wt / wnode, aux


def _pick_sequential(sc):
    """Index chosen by the kernel's rule ``accept if s > best + eps``."""
    prev = np.maximum.accumulate(np.r_[-np.inf, sc[:-1]])
    best, pick = -np.inf, -1
    for i in np.flatnonzero(sc > prev):
        if sc[i] > best + TIE_EPS:
            best, pick = sc[i], i
    return pick


def level_split(X, order, nan_start, node_of, w, cnt, y, target, K, n_nodes, uses,
                criterion, min_leaf, rand_u, random_mode, node_stats, node_cnt, node_w):
    n, p = X.shape
    score = np.full((n_nodes, p), -np.inf)
    thr = np.zeros((n_nodes, p))
    aux = np.zeros((n_nodes, p))
    uses = np.asarray(uses, dtype=bool)
    if criterion == VARIANCE:
        stat = np.column_stack([w, w * target])
    else:
        stat = np.zeros((n, K))
        stat[np.arange(n), y] = w
    for f in range(p):
        active = uses[:, f].copy()
        if not active.any():
            continue
        m = nan_start[f]
        tot = np.array(node_stats, dtype=float, copy=True)
        tcnt = np.array(node_cnt, dtype=float, copy=True)
        tw = np.array(node_w, dtype=float, copy=True)
        for s in order[f, m:]:
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
        ordf = order[f, :m]
        nodes = node_of[ordf]
        keep = nodes >= 0
        keep[keep] = active[nodes[keep]]
        ordf, nodes = ordf[keep], nodes[keep]
        grp = np.argsort(nodes, kind="stable")
        ordf, nodes = ordf[grp], nodes[grp]
        cuts = np.flatnonzero(np.diff(nodes)) + 1
        for seg in np.split(np.arange(len(ordf)), cuts):
            if len(seg) == 0:
                continue
            j = nodes[seg[0]]
            s_idx = ordf[seg]
            vals = X[s_idx, f]
            lc = np.cumsum(cnt[s_idx])
            lw = np.cumsum(w[s_idx])
            L = np.cumsum(stat[s_idx], axis=0)
            if random_mode:
                lo, hi = vals[0], vals[-1]
                if not hi > lo:
                    continue
                cut = lo + rand_u[j, f] * (hi - lo)
                if cut >= hi:
                    cut = lo
                pos = np.searchsorted(vals, cut, side="right") - 1
                if pos < 0:
                    continue
                cand = np.array([pos])
                thresholds = np.array([cut])
            else:
                cand = np.flatnonzero(vals[1:] > vals[:-1])
                mid = 0.5 * (vals[cand] + vals[cand + 1])
                thresholds = np.where(mid >= vals[cand + 1], vals[cand], mid)
            ok = ((lc[cand] >= min_leaf) & (tcnt[j] - lc[cand] >= min_leaf)
                  & (lw[cand] > 0) & (tw[j] - lw[cand] > 0))
            if not ok.any():
                continue
            cand, thresholds = cand[ok], thresholds[ok]
            sc, ax = _scores(criterion, L[cand], tot[j], lw[cand], tw[j], node_w[j])
            i = 0 if random_mode else _pick_sequential(sc)
            score[j, f] = sc[i]
            thr[j, f] = thresholds[i]
            aux[j, f] = ax[i]
    return score, thr, aux
