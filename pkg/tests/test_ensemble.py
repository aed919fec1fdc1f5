import numpy as np
import pytest
from dataclasses import replace

from powersec.ensemble import (EnsembleModel, EnsembleParams, ModelFormatError, decide,
                               default_params, importance_table, predict, predict_ensemble,
                               predict_scores, staged_test_error, train, train_adaboost,
                               train_bagging, train_extra_trees, train_random_forest, train_sgb,
                               tree_importance, variable_importance)
from powersec.security import SecurityClass
from powersec.tree import Tree, TreeParams, grow_tree


def _blobs(n=240, p=5, seed=0):
    rng = np.random.default_rng(seed)
    y = rng.integers(0, 4, n)
    X = rng.normal(size=(n, p))
    X[:, 0] += 2.5 * y
    X[:, 1] -= 1.5 * (y == 3)
    return X, y


def _leaf(counts):
    return Tree([-1], [0.0], [-1], [-1], [True], [counts], [0.0], [sum(counts)], [sum(counts)])


def test_single_bag_equals_grow_tree():
    X, y = _blobs()
    m = train_bagging((X, y), EnsembleParams(1, bootstrap=False))
    t = grow_tree(X, y, K=4)
    assert m.trees[0].dumps() == t.dumps()
    assert np.array_equal(predict(m, X), decide(t.predict_scores(X)))


def test_rf_with_all_attributes_is_bagging():
    X, y = _blobs()
    p = EnsembleParams(8, TreeParams(mtry=X.shape[1]), master_seed=4)
    a = train_random_forest((X, y), p)
    b = train_bagging((X, y), p)
    assert [t.dumps() for t in a.trees] == [t.dumps() for t in b.trees]
    assert a.info["oob_error"] == b.info["oob_error"]


@pytest.mark.parametrize("alg", ["bagged_cart", "random_forest", "extra_trees", "adaboost",
                                 "sgb", "cart", "j48"])
def test_determinism_and_round_trip(alg, tmp_path):
    X, y = _blobs()
    p = replace(default_params(alg, X.shape[1], master_seed=9), n_trees=6)
    a, b = train(alg, (X, y), p), train(alg, (X, y), p)
    assert a.dumps() == b.dumps()
    a.save(tmp_path / "m.model")
    c = EnsembleModel.load(tmp_path / "m.model")
    assert c.dumps() == a.dumps()
    assert np.array_equal(predict_scores(c, X), predict_scores(a, X))
    s = predict_scores(a, X)
    assert (s >= 0).all() and np.allclose(s.sum(axis=1), 1.0)


@pytest.mark.parametrize("alg", ["random_forest", "extra_trees"])
def test_workers_invariance(alg):
    X, y = _blobs()
    p = replace(default_params(alg, X.shape[1], master_seed=2), n_trees=6)
    assert train(alg, (X, y), p, workers=1).dumps() == train(alg, (X, y), p, workers=2).dumps()


def test_bad_model_text():
    with pytest.raises(ModelFormatError):
        EnsembleModel.loads("not a model\n")
    with pytest.raises(ModelFormatError):
        EnsembleModel.loads("powersec-model 1\n{broken\n")


def test_needs_two_classes():
    with pytest.raises(ValueError):
        train_bagging((np.zeros((5, 2)), np.zeros(5, dtype=int)), EnsembleParams(2))


def test_oob_error_close_to_holdout():
    X, y = _blobs(600)
    m = train_random_forest((X[:400], y[:400]), EnsembleParams(40, TreeParams(mtry=2), master_seed=1))
    held = np.mean(predict(m, X[400:]) != y[400:])
    assert 0 < m.info["oob_coverage"] <= 1
    assert abs(m.info["oob_error"] - held) < 0.1


def test_extra_trees_thresholds_in_range():
    rng = np.random.default_rng(3)
    x = rng.uniform(-2, 5, 80)
    y = (x > 1).astype(int) + (x > 3)
    m = train_extra_trees((x[:, None], y), EnsembleParams(10, TreeParams(mtry=1), bootstrap=False))
    for t in m.trees:
        thr = t.threshold[~t.is_leaf]
        assert ((thr >= x.min()) & (thr <= x.max())).all()


def test_adaboost_separable():
    X = np.array([[0.0], [1.0], [2.0], [3.0], [4.0], [5.0]])
    y = np.array([0, 0, 0, 1, 1, 1])
    m = train_adaboost((X, y), EnsembleParams(20, TreeParams(max_depth=1), bootstrap=False))
    assert m.n_stages <= 5
    assert np.array_equal(predict(m, X), y)


def test_adaboost_stage_properties():
    X, y = _blobs(300)
    m = train_adaboost((X, y), EnsembleParams(15, TreeParams(max_depth=1), bootstrap=False))
    K = m.n_classes
    errs = m.info["stage_error"][:len(m.trees)]
    assert all(e < 1 - 1 / K for e in errs)
    assert np.isfinite(m.tree_weights).all() and (m.tree_weights > 0).all()


def test_sgb_zero_rate_gives_prior():
    X, y = _blobs()
    m = train_sgb((X, y), EnsembleParams(1, TreeParams("variance", max_depth=3),
                                          bootstrap=False, learning_rate=0.0))
    prior = np.bincount(y, minlength=4) / len(y)
    assert np.allclose(predict_scores(m, X), prior)


def test_sgb_deviance_non_increasing():
    X, y = _blobs(300)
    m = train_sgb((X, y), EnsembleParams(25, TreeParams("variance", max_depth=3),
                                          bootstrap=False, sample_fraction=1.0))
    dev = np.array(m.info["train_deviance"])
    assert np.all(np.diff(dev) <= 1e-12)
    assert m.n_stages == 25 and len(m.trees) == 25 * m.n_classes


def test_identical_trees_aggregate_to_tree():
    X, y = _blobs()
    t = grow_tree(X, y, TreeParams(max_depth=2), K=4)
    m = EnsembleModel("bagged_cart", [t, t, t], np.ones(3), 4, [f"x{i}" for i in range(5)],
                      EnsembleParams(3))
    assert np.allclose(predict_scores(m, X), t.predict_scores(X))


def test_majority_and_severity_tie_break():
    a, b = _leaf([0, 1, 0, 0]), _leaf([0, 0, 1, 0])
    m = EnsembleModel("bagged_cart", [a, a, b], np.ones(3), 4, ["x"], EnsembleParams(3))
    assert predict_ensemble(m, [0.0])[0] is SecurityClass.ALARM
    m = EnsembleModel("bagged_cart", [a, b], np.ones(2), 4, ["x"], EnsembleParams(2))
    cls, scores = predict_ensemble(m, [0.0])
    assert cls is SecurityClass.EMERGENCY1 and np.allclose(scores, [0, 0.5, 0.5, 0])
    with pytest.raises(ValueError):
        predict_ensemble(m, [0.0, 1.0])


def test_staged_error_consistency():
    X, y = _blobs(300)
    m = train_random_forest((X[:200], y[:200]), EnsembleParams(12, TreeParams(mtry=2), master_seed=3))
    table = staged_test_error(m, (X[200:], y[200:]))
    assert table.shape == (12, 6)
    assert table[-1, -1] == pytest.approx(np.mean(predict(m, X[200:]) != y[200:]))
    single = train("cart", (X, y))
    assert staged_test_error(single, (X, y)).shape[0] == 1


def test_importance_identities():
    X, y = _blobs()
    X[:, 4] = 0.0  # constant: never split on
    t = grow_tree(X, y, TreeParams(max_depth=4), K=4)
    total, per_class = tree_importance(t, X.shape[1], 4)
    leaves = t.is_leaf
    direct = t.impurity[0] - np.sum(t.weight[leaves] / t.weight[0] * t.impurity[leaves])
    assert total.sum() == pytest.approx(direct, abs=1e-12)
    assert np.allclose(per_class.sum(axis=1), total, atol=1e-12)
    assert total[4] == 0 and (per_class >= 0).all()


def test_single_split_holds_all_importance():
    X = np.array([[0.0, 5.0], [1.0, 5.0], [2.0, 5.0], [3.0, 5.0]])
    y = np.array([0, 0, 1, 1])
    m = train("cart", (X, y))
    rows = importance_table(m)
    assert rows[0][0] == "x0" and rows[0][2] == pytest.approx(1.0) and rows[1][1] == 0.0


def test_sgb_per_class_importance_from_class_trees():
    X, y = _blobs()
    m = train_sgb((X, y), EnsembleParams(4, TreeParams("variance", max_depth=2), bootstrap=False))
    total, per_class = variable_importance(m)
    assert np.allclose(per_class.sum(axis=1) / m.n_classes, total)
