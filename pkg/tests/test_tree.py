import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from powersec.tree import BACKEND, Tree, TreeParams, best_split, gini_impurity, grow_tree, predict_tree
from powersec.tree import _splitter_py
from powersec.tree.core import entropy

try:
    from powersec.tree import _splitter as _splitter_c
except ImportError:  # pragma: no cover
    _splitter_c = None

needs_c = pytest.mark.skipif(_splitter_c is None, reason="compiled kernel not built")


def _gini(y, K):
    return gini_impurity(np.bincount(y, minlength=K)) if len(y) else 0.0


def oracle_split(X, y, K, criterion="gini"):
    """Enumerate every (attribute, midpoint) pair; missing cells sit out the
    scan and the decrease is scaled by the present share of the node."""
    n, p = X.shape
    cands = []
    for f in range(p):
        ok = ~np.isnan(X[:, f])
        xs, ys = X[ok, f], y[ok]
        share = ok.sum() / n
        vals = np.unique(xs)
        for a, b in zip(vals[:-1], vals[1:]):
            t = 0.5 * (a + b)
            lft, rgt = ys[xs <= t], ys[xs > t]
            if criterion == "gini":
                dec = _gini(ys, K) - len(lft) / len(ys) * _gini(lft, K) - len(rgt) / len(ys) * _gini(rgt, K)
                cands.append((dec * share, f, t, 0.0))
            else:
                h = lambda v: entropy(np.bincount(v, minlength=K))
                gain = h(ys) - len(lft) / len(ys) * h(lft) - len(rgt) / len(ys) * h(rgt)
                pl = len(lft) / len(ys)
                si = -(pl * np.log2(pl) + (1 - pl) * np.log2(1 - pl))
                cands.append((gain * share, f, t, si))
    if criterion == "gini":
        valid = [c for c in cands if c[0] > 1e-12]
        if not valid:
            return None
        top = max(c[0] for c in valid)
        best = min((c for c in valid if c[0] >= top - 1e-9), key=lambda c: (c[1], c[2]))
        return best[1], best[2], best[0]
    # C4.5: per attribute best gain, then best ratio among above-average gains
    per_f = {}
    for c in cands:
        if c[0] > 1e-12:
            cur = per_f.get(c[1])
            if cur is None or c[0] > cur[0] + 1e-9:
                per_f[c[1]] = c
    if not per_f:
        return None
    avg = np.mean([c[0] for c in per_f.values()])
    elig = [c for c in per_f.values() if c[0] >= avg - 1e-9 and c[3] > 0] or list(per_f.values())
    top = max(c[0] / c[3] for c in elig)
    best = min((c for c in elig if c[0] / c[3] >= top - 1e-9), key=lambda c: c[1])
    return best[1], best[2], best[0]


def test_spec_one_d_example():
    X = np.array([[1.0], [2.0], [3.0], [4.0]])
    y = np.array([0, 0, 1, 1])
    f, t, dec = best_split(X, y)
    assert (f, t) == (0, 2.5) and dec == pytest.approx(0.5)


def test_single_class_node():
    assert best_split(np.array([[1.0], [2.0]]), np.array([1, 1])) is None


def test_xor_matches_oracle():
    X = np.array([[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]])
    y = np.array([0, 1, 1, 0])
    # no split reduces gini on XOR
    assert oracle_split(X, y, 2) is None and best_split(X, y) is None
    y2 = np.array([0, 1, 1, 1])
    got = best_split(X, y2)
    want = oracle_split(X, y2, 2)
    assert got[:2] == want[:2] and got[2] == pytest.approx(want[2])


small = st.integers(2, 16).flatmap(lambda n: st.tuples(
    arrays(np.float64, (n, 3),
           elements=st.sampled_from([0.0, 1.0, 1.5, 2.0, 3.0, 7.25])),
    arrays(np.int64, n, elements=st.integers(0, 2))))


@given(data=small, p=st.integers(1, 3), crit=st.sampled_from(["gini", "gain_ratio"]))
@settings(max_examples=300, deadline=None)
def test_best_split_matches_oracle(data, p, crit):
    X, y = data
    X = X[:, :p]
    got = best_split(X, y, K=3, criterion=crit)
    want = oracle_split(X, y, 3, crit)
    if want is None:
        assert got is None
    else:
        assert got is not None and got[:2] == want[:2]
        assert got[2] == pytest.approx(want[2], abs=1e-9)


@given(data=small, holes=st.lists(st.integers(0, 47), max_size=10))
@settings(max_examples=150, deadline=None)
def test_best_split_with_missing_matches_oracle(data, holes):
    X, y = data
    X = X.copy()
    flat = X.ravel()
    for h in holes:
        flat[h % flat.size] = np.nan
    got = best_split(X, y, K=3)
    want = oracle_split(X, y, 3)
    if want is None:
        assert got is None
    else:
        assert got[:2] == want[:2] and got[2] == pytest.approx(want[2], abs=1e-9)


def test_random_threshold_lies_in_range(rng):
    X = rng.normal(size=(50, 3))
    y = (X[:, 1] > 0).astype(int)
    for seed in range(20):
        f, t, _ = best_split(X, y, threshold_mode="random", rng=seed)
        assert X[:, f].min() <= t < X[:, f].max()


@needs_c
@given(data=small, crit=st.sampled_from(["gini", "gain_ratio"]), mode=st.sampled_from(["exhaustive", "random"]),
       seed=st.integers(0, 100))
@settings(max_examples=150, deadline=None)
def test_backends_agree_on_splits(data, crit, mode, seed):
    X, y = data
    a = best_split(X, y, K=3, criterion=crit, threshold_mode=mode, rng=seed, kernel=_splitter_c.level_split)
    b = best_split(X, y, K=3, criterion=crit, threshold_mode=mode, rng=seed, kernel=_splitter_py.level_split)
    assert a == b


@needs_c
@pytest.mark.parametrize("params", [TreeParams(), TreeParams("gain_ratio"),
                                    TreeParams(mtry=2, rng_seed=3),
                                    TreeParams(threshold_mode="random", mtry=2, rng_seed=5),
                                    TreeParams(max_depth=3, min_samples_leaf=4)])
def test_backends_grow_identical_trees(params, rng):
    X = rng.normal(size=(300, 6))
    X[rng.random(X.shape) < 0.05] = np.nan
    y = ((X[:, 0] > 0).astype(int) + (np.nan_to_num(X[:, 3]) > 0.5)).astype(int)
    w = rng.integers(0, 3, 300).astype(float)
    a = grow_tree(X, y, params, cnt=w, kernel=_splitter_c.level_split)
    b = grow_tree(X, y, params, cnt=w, kernel=_splitter_py.level_split)
    assert a.dumps() == b.dumps()


@needs_c
def test_backends_regression(rng):
    X = rng.normal(size=(200, 4))
    r = np.sin(X[:, 0]) + 0.1 * rng.normal(size=200)
    p = TreeParams("variance", max_depth=4)
    a = grow_tree(X, None, p, K=1, target=r, kernel=_splitter_c.level_split)
    b = grow_tree(X, None, p, K=1, target=r, kernel=_splitter_py.level_split)
    assert a.dumps() == b.dumps()


def test_backend_name():
    assert BACKEND in ("cython", "python")


def test_pure_dataset_single_leaf():
    t = grow_tree(np.arange(5.0)[:, None], np.full(5, 2), K=4)
    assert t.n_nodes == 1 and np.allclose(predict_tree(t, [1.0]), [0, 0, 1, 0])


def test_separable_depth_one():
    X = np.array([[1.0, 5.0], [2.0, 1.0], [3.0, 4.0], [4.0, 2.0]])
    y = np.array([0, 0, 1, 1])
    t = grow_tree(X, y)
    assert t.depth == 1
    assert np.array_equal(t.predict_scores(X).argmax(axis=1), y)


@given(X=arrays(np.float64, (30, 3), elements=st.integers(0, 9).map(float)),
       y=arrays(np.int64, 30, elements=st.integers(0, 3)))
@settings(max_examples=100, deadline=None)
def test_unrestricted_tree_fits_consistent_data(X, y):
    # keep the first label per distinct row so the data is consistent
    _, first, inv = np.unique(X, axis=0, return_index=True, return_inverse=True)
    y = y[first][inv.ravel()]
    t = grow_tree(X, y, K=4)
    s = t.predict_scores(X)
    assert np.array_equal(s.argmax(axis=1), y)
    assert np.allclose(s.sum(axis=1), 1.0) and (s >= 0).all()
    assert (t.decrease >= 0).all()


def test_leaf_scores_example():
    t = Tree([-1], [0.0], [-1], [-1], [True], [[3.0, 1.0, 0.0, 0.0]], [0.375], [4], [4])
    assert np.allclose(predict_tree(t, [0.0]), [0.75, 0.25, 0, 0])


def test_missing_follows_majority_side():
    X = np.array([[1.0], [2.0], [3.0], [4.0], [5.0], [np.nan]])
    y = np.array([0, 0, 0, 1, 1, 0])
    t = grow_tree(X, y, K=2)
    assert t.missing_left[0]  # three present samples go left, two right
    assert np.allclose(predict_tree(t, [np.nan]), [1, 0])


def test_deterministic_without_randomness(rng):
    X = rng.normal(size=(100, 5))
    y = (X[:, 2] > 0).astype(int)
    a = grow_tree(X, y, TreeParams(rng_seed=1))
    b = grow_tree(X, y, TreeParams(rng_seed=99))
    assert a.dumps() == b.dumps()
    assert Tree.loads(a.dumps()).dumps() == a.dumps()


def test_max_depth_and_leaf_size(rng):
    X = rng.normal(size=(200, 4))
    y = rng.integers(0, 3, 200)
    t = grow_tree(X, y, TreeParams(max_depth=3, min_samples_leaf=5))
    assert t.depth <= 3
    assert t.n_samples[t.is_leaf].min() >= 5


@pytest.mark.parametrize("kw", [dict(criterion="entropy"), dict(threshold_mode="sometimes"),
                                dict(min_samples_leaf=0), dict(mtry=0), dict(max_depth=-1)])
def test_params_validation(kw):
    with pytest.raises(ValueError):
        TreeParams(**kw)
