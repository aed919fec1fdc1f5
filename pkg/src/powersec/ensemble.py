"""Tree ensembles: bagged CART, random forest, extra trees, SAMME AdaBoost and
multinomial stochastic gradient boosting.

Every tree draws its randomness from ``SeedSequence(master_seed, spawn_key=(t,))``
so a model does not depend on how many worker processes trained it.
"""
from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .features import Dataset
from .tree import PreparedData, Tree, TreeParams
from .tree.core import build_tree

log = logging.getLogger(__name__)

ALGORITHMS = ("j48", "cart", "bagged_cart", "random_forest", "extra_trees", "adaboost", "sgb")
BAGGING_FAMILY = ("j48", "cart", "bagged_cart", "random_forest", "extra_trees")
MODEL_FORMAT = "powersec-model 1"
TIE_EPS = 1e-12
N_CLASSES = 4


class ModelFormatError(ValueError):
    pass


@dataclass(frozen=True)
class EnsembleParams:
    n_trees: int = 100
    tree_params: TreeParams = field(default_factory=TreeParams)
    bootstrap: bool = True
    sample_fraction: float = 1.0
    learning_rate: float = 0.1
    master_seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        if not 0 < self.sample_fraction <= 1:
            raise ValueError("sample_fraction must lie in (0, 1]")
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "EnsembleParams":
        d = dict(d)
        d["tree_params"] = TreeParams(**d["tree_params"])
        return cls(**d)


def default_params(algorithm: str, n_features: int, master_seed: int = 0) -> EnsembleParams:
    """Defaults per algorithm; ``n_features`` fixes ``mtry = floor(sqrt(p))``."""
    sqrt_p = max(1, math.isqrt(n_features))
    presets = {
        "cart": EnsembleParams(1, TreeParams("gini"), bootstrap=False),
        "j48": EnsembleParams(1, TreeParams("gain_ratio"), bootstrap=False),
        "bagged_cart": EnsembleParams(100, TreeParams("gini")),
        "random_forest": EnsembleParams(100, TreeParams("gini", mtry=sqrt_p)),
        "extra_trees": EnsembleParams(100, TreeParams("gini", mtry=sqrt_p,
                                                      threshold_mode="random"),
                                      bootstrap=False),
        "adaboost": EnsembleParams(100, TreeParams("gini", max_depth=3), bootstrap=False),
        "sgb": EnsembleParams(200, TreeParams("variance", max_depth=5), bootstrap=False,
                              sample_fraction=0.5, learning_rate=0.1),
    }
    if algorithm not in presets:
        raise ValueError(f"unknown algorithm {algorithm!r}")
    return replace(presets[algorithm], master_seed=master_seed)


def tree_rng(master_seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=master_seed, spawn_key=(index,)))


@dataclass
class EnsembleModel:
    """``trees`` with aggregation weights. For ``sgb`` the trees are stored
    stage-major with ``n_classes`` regression trees per stage and
    ``init_score`` holds the prior log-odds."""

    algorithm: str
    trees: list[Tree]
    tree_weights: np.ndarray
    n_classes: int
    schema: list[str]
    params: EnsembleParams
    init_score: np.ndarray | None = None
    info: dict = field(default_factory=dict)

    @property
    def n_stages(self) -> int:
        per = self.n_classes if self.algorithm == "sgb" else 1
        return len(self.trees) // per

    def dumps(self) -> str:
        header = {
            "algorithm": self.algorithm,
            "n_classes": self.n_classes,
            "schema": self.schema,
            "params": self.params.to_dict(),
            "tree_weights": [float(v) for v in self.tree_weights],
            "init_score": None if self.init_score is None else [float(v) for v in self.init_score],
            "info": self.info,
            "n_trees": len(self.trees),
        }
        lines = [MODEL_FORMAT, json.dumps(header, sort_keys=True, separators=(",", ":"))]
        lines += [t.dumps() for t in self.trees]
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str) -> "EnsembleModel":
        lines = text.splitlines()
        if not lines or lines[0] != MODEL_FORMAT:
            raise ModelFormatError(f"expected first line {MODEL_FORMAT!r}")
        try:
            h = json.loads(lines[1])
            trees = [Tree.loads(s) for s in lines[2:]]
        except (IndexError, json.JSONDecodeError, KeyError) as exc:
            raise ModelFormatError(f"malformed model text: {exc}") from None
        if len(trees) != h["n_trees"]:
            raise ModelFormatError("tree count does not match header")
        init = None if h["init_score"] is None else np.array(h["init_score"])
        return cls(h["algorithm"], trees, np.array(h["tree_weights"]), h["n_classes"],
                   h["schema"], EnsembleParams.from_dict(h["params"]), init, h["info"])

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.dumps())

    @classmethod
    def load(cls, path) -> "EnsembleModel":
        with open(path, encoding="utf-8") as fh:
            return cls.loads(fh.read())


def _xy(data) -> tuple[np.ndarray, np.ndarray, list[str]]:
    if isinstance(data, Dataset):
        return data.X, data.y, data.schema
    X, y = data
    X = np.asarray(X, dtype=float)
    return X, np.asarray(y), [f"x{i}" for i in range(X.shape[1])]


def _check_classes(y) -> None:
    if len(np.unique(y)) < 2:
        raise ValueError("training data must contain at least two classes")


# bagging family --------------------------------------------------------------

_SHARED: dict = {}


def _init_worker(X, y, K, params):
    _SHARED["job"] = (PreparedData(X), np.asarray(y), K, params)


def _bagged_tree(t: int):
    data, y, K, params = _SHARED["job"]
    rng = tree_rng(params.master_seed, t)
    n = data.n
    if params.bootstrap:
        cnt = np.bincount(rng.integers(0, n, n), minlength=n).astype(float)
    else:
        cnt = np.ones(n)
    tree = build_tree(data, y, K, params.tree_params, cnt=cnt, rng=rng)
    oob = None
    if params.bootstrap:
        idx = np.flatnonzero(cnt == 0)
        oob = (idx, tree.predict_scores(data.X[idx]))
    return tree, oob


def _grow_bagged(X, y, K, params: EnsembleParams, workers: int):
    if workers > 1 and params.n_trees > 1:
        with ProcessPoolExecutor(max_workers=workers, initializer=_init_worker,
                                 initargs=(X, y, K, params)) as ex:
            return list(ex.map(_bagged_tree, range(params.n_trees)))
    _init_worker(X, y, K, params)
    try:
        return [_bagged_tree(t) for t in range(params.n_trees)]
    finally:
        _SHARED.clear()


def _train_bagging_family(algorithm, data, params: EnsembleParams, workers=1,
                          n_classes=N_CLASSES) -> EnsembleModel:
    X, y, schema = _xy(data)
    _check_classes(y)
    K = max(n_classes, int(y.max()) + 1)
    out = _grow_bagged(X, y, K, params, workers)
    trees = [t for t, _ in out]
    info = {}
    if params.bootstrap:
        acc = np.zeros((len(y), K))
        for _, (idx, sc) in out:
            acc[idx] += sc
        seen = acc.sum(axis=1) > 0
        if seen.any():
            pred = decide(acc[seen])
            info["oob_error"] = float(np.mean(pred != y[seen]))
            info["oob_coverage"] = float(seen.mean())
    return EnsembleModel(algorithm, trees, np.ones(len(trees)), K, schema, params, info=info)


def train_bagging(data, params: EnsembleParams, workers: int = 1) -> EnsembleModel:
    """Bagged CART: every tree sees a bootstrap resample and all attributes."""
    params = replace(params, tree_params=replace(params.tree_params, mtry=None))
    return _train_bagging_family("bagged_cart", data, params, workers)


def train_random_forest(data, params: EnsembleParams, workers: int = 1) -> EnsembleModel:
    return _train_bagging_family("random_forest", data, params, workers)


def train_extra_trees(data, params: EnsembleParams, workers: int = 1) -> EnsembleModel:
    params = replace(params, tree_params=replace(params.tree_params, threshold_mode="random"))
    return _train_bagging_family("extra_trees", data, params, workers)


def train_single_tree(data, params: EnsembleParams, algorithm: str = "cart") -> EnsembleModel:
    params = replace(params, n_trees=1, bootstrap=False)
    return _train_bagging_family(algorithm, data, params)


# boosting --------------------------------------------------------------------

def train_adaboost(data, params: EnsembleParams) -> EnsembleModel:
    """SAMME: ``alpha_t = ln((1 - err_t) / err_t) + ln(K - 1)``."""
    X, y, schema = _xy(data)
    _check_classes(y)
    K = max(N_CLASSES, int(y.max()) + 1)
    prepared = PreparedData(X)
    n = len(y)
    w = np.full(n, 1.0 / n)
    cnt = np.ones(n)
    trees, alphas, errors = [], [], []
    cap = math.log((1 - 1e-10) / 1e-10) + math.log(K - 1)
    for t in range(params.n_trees):
        rng = tree_rng(params.master_seed, t)
        tree = build_tree(prepared, y, K, params.tree_params, w=w, cnt=cnt, rng=rng)
        miss = decide(tree.predict_scores(X)) != y
        err = float(np.sum(w[miss]) / np.sum(w))
        errors.append(err)
        if err >= 1.0 - 1.0 / K:
            if t == 0:
                log.warning("weak learner no better than chance (error %.4f); "
                            "keeping the single stage", err)
                trees.append(tree)
                alphas.append(1.0)
            break
        if err <= 0.0:
            trees.append(tree)
            alphas.append(cap)
            break
        alpha = math.log((1.0 - err) / err) + math.log(K - 1)
        trees.append(tree)
        alphas.append(alpha)
        w = w * np.exp(alpha * miss)
        w = w / w.sum()
    return EnsembleModel("adaboost", trees, np.array(alphas), K, schema, params,
                         info={"stage_error": errors})


def _softmax(F):
    Z = F - F.max(axis=1, keepdims=True)
    E = np.exp(Z)
    return E / E.sum(axis=1, keepdims=True)


def deviance(F, y) -> float:
    """Mean multinomial deviance of raw scores ``F``."""
    Z = F - F.max(axis=1, keepdims=True)
    logp = Z - np.log(np.exp(Z).sum(axis=1, keepdims=True))
    return float(-2.0 * np.mean(logp[np.arange(len(y)), y]))


def train_sgb(data, params: EnsembleParams) -> EnsembleModel:
    """K regression trees per stage fitted to ``onehot(y) - softmax(F)`` on a
    subsample drawn without replacement; leaves take one Newton step."""
    X, y, schema = _xy(data)
    _check_classes(y)
    K = max(N_CLASSES, int(y.max()) + 1)
    prepared = PreparedData(X)
    n = len(y)
    Y = np.zeros((n, K))
    Y[np.arange(n), y] = 1.0
    prior = np.maximum(Y.mean(axis=0), np.finfo(float).eps)
    init = np.log(prior)
    F = np.tile(init, (n, 1))
    lr = params.learning_rate
    m = max(1, int(round(params.sample_fraction * n)))
    trees, dev = [], [deviance(F, y)]
    for t in range(params.n_trees):
        rng = tree_rng(params.master_seed, t)
        cnt = np.zeros(n)
        if m < n:
            cnt[rng.choice(n, m, replace=False)] = 1.0
        else:
            cnt[:] = 1.0
        P = _softmax(F)
        update = np.zeros((n, K))
        for k in range(K):
            r = Y[:, k] - P[:, k]
            tree = build_tree(prepared, None, 1, params.tree_params, cnt=cnt, target=r, rng=rng)
            leaf = tree.apply(X)
            inb = cnt > 0
            num = np.bincount(leaf[inb], weights=r[inb], minlength=tree.n_nodes)
            den = np.bincount(leaf[inb], weights=np.abs(r[inb]) * (1 - np.abs(r[inb])),
                              minlength=tree.n_nodes)
            gamma = np.where(den > 1e-150, (K - 1) / K * num / np.where(den > 1e-150, den, 1.0),
                             0.0)
            tree.value = np.where(tree.is_leaf, gamma, 0.0)[:, None]
            update[:, k] = gamma[leaf]
            trees.append(tree)
        F = F + lr * update
        dev.append(deviance(F, y))
    return EnsembleModel("sgb", trees, np.full(len(trees), lr), K, schema, params, init,
                         info={"train_deviance": dev})


TRAINERS = {
    "bagged_cart": train_bagging,
    "random_forest": train_random_forest,
    "extra_trees": train_extra_trees,
    "adaboost": lambda d, p, workers=1: train_adaboost(d, p),
    "sgb": lambda d, p, workers=1: train_sgb(d, p),
    "cart": lambda d, p, workers=1: train_single_tree(d, p, "cart"),
    "j48": lambda d, p, workers=1: train_single_tree(d, p, "j48"),
}


def train(algorithm: str, data, params: EnsembleParams | None = None,
          workers: int = 1) -> EnsembleModel:
    if algorithm not in TRAINERS:
        raise ValueError(f"unknown algorithm {algorithm!r}")
    if params is None:
        params = default_params(algorithm, _xy(data)[0].shape[1])
    return TRAINERS[algorithm](data, params, workers=workers)


# prediction ------------------------------------------------------------------

def decide(scores) -> np.ndarray:
    """Argmax per row; near-ties go to the highest (most severe) class."""
    S = np.atleast_2d(scores)
    top = S >= S.max(axis=1, keepdims=True) - TIE_EPS
    K = S.shape[1]
    return K - 1 - np.argmax(top[:, ::-1], axis=1)


def _vote(tree: Tree, X, K) -> np.ndarray:
    out = np.zeros((len(X), K))
    out[np.arange(len(X)), decide(tree.predict_scores(X))] = 1.0
    return out


def staged_scores(model: EnsembleModel, X):
    """Yield the aggregated score matrix after each tree (or boosting stage)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != len(model.schema):
        raise ValueError(f"expected {len(model.schema)} attributes, got {X.shape[1]}")
    K = model.n_classes
    acc = np.zeros((len(X), K))
    if model.algorithm == "sgb":
        F = np.tile(model.init_score, (len(X), 1))
        for s in range(model.n_stages):
            for k in range(K):
                tree = model.trees[s * K + k]
                F[:, k] += model.tree_weights[s * K + k] * tree.predict_value(X)
            yield _softmax(F)
        return
    wsum = 0.0
    for tree, wt in zip(model.trees, model.tree_weights):
        if model.algorithm == "adaboost":
            acc += wt * _vote(tree, X, K)
        else:
            acc += wt * tree.predict_scores(X)
        wsum += wt
        yield acc / wsum


def predict_scores(model: EnsembleModel, X) -> np.ndarray:
    out = None
    for out in staged_scores(model, X):
        pass
    return out


def predict(model: EnsembleModel, X) -> np.ndarray:
    return decide(predict_scores(model, X))


def predict_ensemble(model: EnsembleModel, x):
    """Class and score vector for one feature vector."""
    from .security import SecurityClass
    sc = predict_scores(model, np.asarray(x, dtype=float)[None, :])[0]
    return SecurityClass(int(decide(sc)[0])), sc


def staged_test_error(model: EnsembleModel, test) -> np.ndarray:
    """Rows ``t = 1..N``: ``[t, err_class_0 .. err_class_{K-1}, overall]``.
    Class columns are NaN when the class is absent from ``test``."""
    X, y, _ = _xy(test)
    K = model.n_classes
    rows = []
    for t, sc in enumerate(staged_scores(model, X), start=1):
        wrong = decide(sc) != y
        per = [wrong[y == k].mean() if (y == k).any() else np.nan for k in range(K)]
        rows.append([t] + per + [wrong.mean()])
    return np.array(rows)


# importance ------------------------------------------------------------------

def _class_terms(p, criterion):
    if criterion == "gini":
        return p * (1.0 - p)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(p > 0, -p * np.log2(np.where(p > 0, p, 1.0)), 0.0)


def tree_importance(tree: Tree, n_features: int, K: int):
    """Root-weighted impurity decrease per attribute, and its split into
    per-class terms (``p_k(1 - p_k)`` for gini, ``-p_k log p_k`` for entropy;
    both concave, so every class term is non-negative and they sum to the
    node decrease)."""
    total = np.zeros(n_features)
    per_class = np.zeros((n_features, K))
    internal = np.flatnonzero(~tree.is_leaf)
    if internal.size == 0 or tree.weight[0] <= 0:
        return total, per_class
    share = tree.weight[internal] / tree.weight[0]
    dec = tree.decrease[internal]
    np.add.at(total, tree.feature[internal], share * dec)
    if tree.criterion != "variance":
        lft, rgt = tree.left[internal], tree.right[internal]
        w, wl, wr = tree.weight[internal], tree.weight[lft], tree.weight[rgt]

        def dist(idx):
            v = tree.value[idx]
            s = v.sum(axis=1, keepdims=True)
            return v / np.where(s > 0, s, 1.0)

        crit = "gini" if tree.criterion == "gini" else "entropy"
        terms = (_class_terms(dist(internal), crit)
                 - (wl / w)[:, None] * _class_terms(dist(lft), crit)
                 - (wr / w)[:, None] * _class_terms(dist(rgt), crit))
        terms = np.maximum(terms, 0.0)
        np.add.at(per_class, tree.feature[internal], share[:, None] * terms[:, :K])
    return total, per_class


def variable_importance(model: EnsembleModel):
    """Mean decrease in impurity per attribute (``overall``, shape p) and per
    class (``per_class``, shape p x K). For ``sgb`` the per-class value comes
    from the trees fitted to that class."""
    p, K = len(model.schema), model.n_classes
    total = np.zeros(p)
    per_class = np.zeros((p, K))
    for i, tree in enumerate(model.trees):
        t, c = tree_importance(tree, p, K)
        total += t
        if model.algorithm == "sgb":
            per_class[:, i % K] += t
        else:
            per_class += c
    n = len(model.trees)
    if model.algorithm == "sgb":
        return total / n, per_class / (n // K)
    return total / n, per_class / n


def importance_table(model: EnsembleModel) -> list[tuple[str, float, float, list[float]]]:
    """Rows ``(attribute, importance, share_of_total, per_class)`` sorted by
    decreasing importance (ties by schema order)."""
    total, per_class = variable_importance(model)
    tot = total.sum()
    order = np.lexsort((np.arange(len(total)), -total))
    return [(model.schema[i], float(total[i]), float(total[i] / tot) if tot > 0 else 0.0,
             [float(v) for v in per_class[i]]) for i in order]
