from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

CRITERIA = {"gini": 0, "gain_ratio": 1, "variance": 2}
THRESHOLD_MODES = ("exhaustive", "random")
TIE_EPS = 1e-12


@dataclass(frozen=True)
class TreeParams:
    criterion: str = "gini"
    max_depth: int | None = None
    min_samples_leaf: int = 1
    mtry: int | None = None
    threshold_mode: str = "exhaustive"
    rng_seed: int = 0

    def __post_init__(self):
        if self.criterion not in CRITERIA:
            raise ValueError(f"unknown criterion {self.criterion!r}")
        if self.threshold_mode not in THRESHOLD_MODES:
            raise ValueError(f"unknown threshold mode {self.threshold_mode!r}")
        if self.min_samples_leaf < 1:
            raise ValueError("min_samples_leaf must be >= 1")
        if self.mtry is not None and self.mtry < 1:
            raise ValueError("mtry must be >= 1")
        if self.max_depth is not None and self.max_depth < 0:
            raise ValueError("max_depth must be >= 0")


def gini_impurity(class_counts) -> float:
    """``1 - sum_c (n_c / n)**2``."""
    c = np.asarray(class_counts, dtype=float)
    n = c.sum()
    if n <= 0:
        raise ValueError("gini impurity of an empty node")
    return float(1.0 - np.sum((c / n) ** 2))


def entropy(class_counts) -> float:
    c = np.asarray(class_counts, dtype=float)
    p = c[c > 0] / c.sum()
    return float(-np.sum(p * np.log2(p)))


class PreparedData:
    """Feature matrix in column-major layout with one presorted order per
    feature (missing values last). Built once and shared by all trees of an
    ensemble."""

    def __init__(self, X):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2:
            raise ValueError("X must be two-dimensional")
        self.X = np.asfortranarray(X)
        self.n, self.p = X.shape
        self.order = np.ascontiguousarray(np.argsort(X, axis=0, kind="stable").T, dtype=np.int32)
        self.nan_start = (self.n - np.isnan(X).sum(axis=0)).astype(np.int32)
        self.has_nan = bool((self.nan_start < self.n).any())


class Tree:
    """Array-backed binary tree.

    ``feature[i] == -1`` marks a leaf. ``value[i]`` holds weighted class sums
    (classification) or the leaf output (regression). ``decrease[i]`` is the
    impurity decrease of the split at ``i`` relative to that node's own
    weight; ``weight[i] / weight[0]`` converts it to a root-relative share.
    """

    def __init__(self, feature, threshold, left, right, missing_left, value, impurity,
                 n_samples, weight, criterion="gini"):
        self.feature = np.asarray(feature, dtype=np.int64)
        self.threshold = np.asarray(threshold, dtype=float)
        self.left = np.asarray(left, dtype=np.int64)
        self.right = np.asarray(right, dtype=np.int64)
        self.missing_left = np.asarray(missing_left, dtype=bool)
        self.value = np.asarray(value, dtype=float)
        self.impurity = np.asarray(impurity, dtype=float)
        self.n_samples = np.asarray(n_samples, dtype=float)
        self.weight = np.asarray(weight, dtype=float)
        self.criterion = criterion

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    @property
    def is_leaf(self) -> np.ndarray:
        return self.feature < 0

    @property
    def depth(self) -> int:
        d = np.zeros(self.n_nodes, dtype=int)
        for i in range(self.n_nodes):
            if self.feature[i] >= 0:
                d[self.left[i]] = d[self.right[i]] = d[i] + 1
        return int(d.max())

    @property
    def decrease(self) -> np.ndarray:
        out = np.zeros(self.n_nodes)
        internal = np.flatnonzero(~self.is_leaf)
        if internal.size:
            lft, rgt = self.left[internal], self.right[internal]
            w = self.weight[internal]
            out[internal] = (self.impurity[internal]
                             - self.weight[lft] / w * self.impurity[lft]
                             - self.weight[rgt] / w * self.impurity[rgt])
        return np.maximum(out, 0.0)

    def apply(self, X) -> np.ndarray:
        """Leaf index reached by every row of ``X``."""
        X = np.asarray(X, dtype=float)
        node = np.zeros(len(X), dtype=np.int64)
        while True:
            f = self.feature[node]
            idx = np.flatnonzero(f >= 0)
            if idx.size == 0:
                return node
            cur = node[idx]
            x = X[idx, f[idx]]
            go_left = x <= self.threshold[cur]
            nan = np.isnan(x)
            if nan.any():
                go_left[nan] = self.missing_left[cur[nan]]
            node[idx] = np.where(go_left, self.left[cur], self.right[cur])

    def predict_scores(self, X) -> np.ndarray:
        """Normalized leaf class weights (classification trees)."""
        v = self.value[self.apply(X)]
        return v / v.sum(axis=1, keepdims=True)

    def predict_value(self, X) -> np.ndarray:
        """Leaf output of a regression tree."""
        return self.value[self.apply(X), 0]

    def to_dict(self) -> dict:
        return {
            "criterion": self.criterion,
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "missing_left": [int(b) for b in self.missing_left],
            "value": self.value.tolist(),
            "impurity": self.impurity.tolist(),
            "n_samples": self.n_samples.tolist(),
            "weight": self.weight.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Tree":
        return cls(d["feature"], d["threshold"], d["left"], d["right"], d["missing_left"],
                   d["value"], d["impurity"], d["n_samples"], d["weight"], d["criterion"])

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":"))

    @classmethod
    def loads(cls, text: str) -> "Tree":
        return cls.from_dict(json.loads(text))


def predict_tree(tree: Tree, x) -> np.ndarray:
    """Per-class score vector for a single feature vector."""
    return tree.predict_scores(np.asarray(x, dtype=float)[None, :])[0]


def _node_stats(node_of, n_nodes, y, w, cnt, target, K, regression):
    act = node_of >= 0
    nid = node_of[act]
    wa = w[act]
    node_cnt = np.bincount(nid, weights=cnt[act], minlength=n_nodes)
    node_w = np.bincount(nid, weights=wa, minlength=n_nodes)
    if regression:
        t = target[act]
        s1 = np.bincount(nid, weights=wa * t, minlength=n_nodes)
        s2 = np.bincount(nid, weights=wa * t * t, minlength=n_nodes)
        stats = np.column_stack([node_w, s1])
        with np.errstate(invalid="ignore", divide="ignore"):
            mean = s1 / node_w
            imp = np.maximum(s2 / node_w - mean ** 2, 0.0)
        return stats, node_cnt, node_w, imp, mean[:, None]
    stats = np.bincount(nid * K + y[act], weights=wa, minlength=n_nodes * K).reshape(n_nodes, K)
    return stats, node_cnt, node_w, None, stats


def _impurity(stats, node_w, criterion):
    p = stats / node_w[:, None]
    if criterion == "gini":
        return 1.0 - np.sum(p * p, axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        return -np.sum(np.where(p > 0, p * np.log2(np.where(p > 0, p, 1.0)), 0.0), axis=1)


def _select(criterion, score, aux):
    """Pick (feature, score) per node from the per-feature best splits, or
    -1 when no split decreases impurity."""
    n_nodes = score.shape[0]
    best_f = np.full(n_nodes, -1)
    for j in range(n_nodes):
        sc = score[j]
        valid = sc > TIE_EPS
        if not valid.any():
            continue
        if criterion == "gain_ratio":
            # C4.5: best gain ratio among attributes with at least average gain
            gains = np.where(valid, sc, np.nan)
            avg = np.nanmean(gains)
            elig = valid & (sc >= avg - TIE_EPS) & (aux[j] > 0)
            if not elig.any():
                elig = valid
            ratio = np.where(elig, sc / np.where(aux[j] > 0, aux[j], 1.0), -np.inf)
            best_f[j] = int(np.flatnonzero(ratio >= ratio.max() - TIE_EPS)[0])
        else:
            best_f[j] = int(np.flatnonzero(sc >= sc[valid].max() - TIE_EPS)[0])
    return best_f


def build_tree(data: PreparedData, y, K: int, params: TreeParams, *, w=None, cnt=None,
               target=None, rng=None, kernel=None) -> Tree:
    """Grow one tree level by level.

    ``cnt`` gives integer multiplicities (bootstrap counts; rows with zero
    count are out of the sample) and ``w`` the statistical weights used in
    the impurity (defaults to ``cnt``). ``target`` switches to regression.
    """
    if kernel is None:
        from . import level_split as kernel
    n, p = data.n, data.p
    regression = params.criterion == "variance"
    if regression and target is None:
        raise ValueError("variance criterion needs a regression target")
    y = np.zeros(n, dtype=np.int32) if y is None else np.ascontiguousarray(y, dtype=np.int32)
    cnt = np.ones(n) if cnt is None else np.ascontiguousarray(cnt, dtype=float)
    w = cnt.copy() if w is None else np.ascontiguousarray(w, dtype=float)
    target = np.zeros(n) if target is None else np.ascontiguousarray(target, dtype=float)
    if rng is None:
        rng = np.random.default_rng(params.rng_seed)
    mtry = p if params.mtry is None else min(params.mtry, p)
    random_mode = params.threshold_mode == "random"
    crit = CRITERIA[params.criterion]
    min_leaf = float(params.min_samples_leaf)
    max_depth = np.inf if params.max_depth is None else params.max_depth
    X = data.X

    feature, threshold, left, right, miss_left = [], [], [], [], []
    value, impurity, n_samples, weight = [], [], [], []

    def new_node():
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        miss_left.append(True)
        value.append(None)
        impurity.append(0.0)
        n_samples.append(0.0)
        weight.append(0.0)
        return len(feature) - 1

    node_of = np.where(cnt > 0, 0, -1).astype(np.int32)
    frontier = [new_node()]
    depth = 0
    while frontier:
        F = len(frontier)
        stats, ncnt, nw, rimp, val = _node_stats(node_of, F, y, w, cnt, target, K, regression)
        imp = rimp if regression else _impurity(stats, nw, params.criterion)
        for loc, g in enumerate(frontier):
            value[g] = val[loc].copy()
            impurity[g] = float(imp[loc])
            n_samples[g] = float(ncnt[loc])
            weight[g] = float(nw[loc])
        splittable = (ncnt >= 2 * min_leaf) & (imp > TIE_EPS) & (depth < max_depth) & (nw > 0)
        sp = np.flatnonzero(splittable)
        if sp.size == 0:
            break
        uses = np.zeros((F, p), dtype=np.uint8)
        rand_u = np.zeros((F, p))
        for loc in sp:
            feats = np.arange(p) if mtry == p else np.sort(rng.choice(p, mtry, replace=False))
            uses[loc, feats] = 1
            if random_mode:
                rand_u[loc, feats] = rng.random(len(feats))
        score, thr, aux = kernel(data.X, data.order, data.nan_start, node_of, w, cnt, y, target,
                                 K, F, uses, crit, min_leaf, rand_u, random_mode,
                                 np.ascontiguousarray(stats), ncnt, nw)
        best_f = _select(params.criterion, score, aux)
        split_feat = np.full(F, -1)
        split_thr = np.zeros(F)
        child_l = np.full(F, -1)
        child_r = np.full(F, -1)
        next_frontier = []
        for loc in sp:
            f = best_f[loc]
            if f < 0:
                continue
            g = frontier[loc]
            feature[g] = int(f)
            threshold[g] = float(thr[loc, f])
            lc, rc = new_node(), new_node()
            left[g], right[g] = lc, rc
            split_feat[loc], split_thr[loc] = f, thr[loc, f]
            child_l[loc], child_r[loc] = len(next_frontier), len(next_frontier) + 1
            next_frontier += [lc, rc]
        if not next_frontier:
            break
        act = np.flatnonzero(node_of >= 0)
        loc_of = node_of[act]
        f_of = split_feat[loc_of]
        moving = f_of >= 0
        act, loc_of, f_of = act[moving], loc_of[moving], f_of[moving]
        x = X[act, f_of]
        go_left = x <= split_thr[loc_of]
        nan = np.isnan(x)
        if nan.any():
            # missing values follow the side holding more of the sample
            ok = ~nan
            lcount = np.bincount(loc_of[ok], weights=cnt[act[ok]] * go_left[ok], minlength=F)
            rcount = np.bincount(loc_of[ok], weights=cnt[act[ok]] * ~go_left[ok], minlength=F)
            ml = lcount >= rcount
            for loc in np.flatnonzero(split_feat >= 0):
                miss_left[frontier[loc]] = bool(ml[loc])
            go_left[nan] = ml[loc_of[nan]]
        new_of = np.full(n, -1, dtype=np.int32)
        new_of[act] = np.where(go_left, child_l[loc_of], child_r[loc_of])
        node_of = new_of
        frontier = next_frontier
        depth += 1

    for g in range(len(value)):
        if value[g] is None:  # child created but never reached by the stopping pass
            value[g] = np.zeros(1 if regression else K)
    return Tree(feature, threshold, left, right, miss_left, np.vstack(value), impurity,
                n_samples, weight, params.criterion)


def grow_tree(X, y, params: TreeParams = TreeParams(), K: int | None = None, **kw) -> Tree:
    """Fit a single classification tree on ``X``/``y`` (class indices)."""
    if y is not None:
        y = np.asarray(y)
    if K is None:
        K = int(y.max()) + 1
    data = X if isinstance(X, PreparedData) else PreparedData(X)
    return build_tree(data, y, K, params, **kw)


def best_split(X, y, K: int | None = None, criterion: str = "gini",
               features=None, threshold_mode: str = "exhaustive", rng=None,
               w=None, kernel=None):
    """Best single split of the sample ``X``/``y``.

    Returns ``(feature, threshold, score)`` where ``score`` is the impurity
    decrease (gain for ``gain_ratio`` selection uses the C4.5 rule), or
    ``None`` when no split decreases impurity.
    """
    if kernel is None:
        from . import level_split as kernel
    data = PreparedData(X)
    y = np.ascontiguousarray(y, dtype=np.int32)
    K = int(y.max()) + 1 if K is None else K
    n, p = data.n, data.p
    cnt = np.ones(n)
    w = cnt.copy() if w is None else np.ascontiguousarray(w, dtype=float)
    node_of = np.zeros(n, dtype=np.int32)
    stats, ncnt, nw, _, _ = _node_stats(node_of, 1, y, w, cnt, np.zeros(n), K, False)
    if _impurity(stats, nw, "gini")[0] <= TIE_EPS:
        return None
    uses = np.zeros((1, p), dtype=np.uint8)
    uses[0, np.arange(p) if features is None else np.asarray(features)] = 1
    rand_u = np.zeros((1, p))
    if threshold_mode == "random":
        rng = np.random.default_rng(rng)
        sel = np.flatnonzero(uses[0])
        rand_u[0, sel] = rng.random(len(sel))
    score, thr, aux = kernel(data.X, data.order, data.nan_start, node_of, w, cnt, y,
                             np.zeros(n), K, 1, uses, CRITERIA[criterion], 1.0, rand_u,
                             threshold_mode == "random", np.ascontiguousarray(stats), ncnt, nw)
    f = _select(criterion, score, aux)[0]
    if f < 0:
        return None
    return int(f), float(thr[0, f]), float(score[0, f])


def params_dict(params: TreeParams) -> dict:
    return asdict(params)
