import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from powersec.evaluation import (EvaluationReport, accuracy, comparison_table, confusion_matrix,
                                 evaluate, expected_accuracy, from_report_order, kappa,
                                 per_class_error, to_report_order)
from powersec.security import SecurityClass

# rows/columns in display order alarm, emergency1, emergency2, normal
PUBLISHED = np.array([[947, 1, 0, 0], [4, 279, 5, 0], [0, 4, 252, 0], [2, 0, 0, 225]])


def test_published_matrix_arithmetic():
    m = from_report_order(PUBLISHED)
    assert m.sum() == 1719
    assert accuracy(m) == pytest.approx(1703 / 1719)
    assert round(100 * accuracy(m), 2) == 99.07
    assert expected_accuracy(m) * 1719 ** 2 == pytest.approx(1102103)
    assert round(100 * kappa(m), 2) == 98.52
    err = per_class_error(m)
    assert err[int(SecurityClass.EMERGENCY1)] == pytest.approx(9 / 288)
    assert round(err[int(SecurityClass.EMERGENCY2)], 2) == 0.02
    assert np.array_equal(to_report_order(m), PUBLISHED)


def test_confusion_examples():
    m = confusion_matrix([0, 1, 2, 3], [0, 1, 2, 3])
    assert np.array_equal(m, np.eye(4, dtype=int))
    one = confusion_matrix([SecurityClass.NORMAL], [SecurityClass.NORMAL])
    assert one.sum() == 1 and one[0, 0] == 1
    with pytest.raises(ValueError):
        confusion_matrix([0, 1], [0])
    with pytest.raises(ValueError):
        confusion_matrix([], [])


def test_accuracy_and_kappa_edges():
    assert accuracy(np.eye(4)) == 1.0 and kappa(np.eye(4)) == 1.0
    assert accuracy(np.ones((4, 4)) - np.eye(4)) == 0.0
    # chance level: O = E
    assert kappa(np.ones((2, 2))) == pytest.approx(0.0)
    assert np.isnan(kappa(np.diag([5, 0, 0, 0])))
    assert np.isnan(per_class_error(np.diag([5, 0, 0, 0]))[1])


def test_report_outputs(tmp_path):
    rep = EvaluationReport.from_matrix(from_report_order(PUBLISHED))
    table = rep.format_table()
    assert "accuracy 99.07%" in table and "kappa 98.52%" in table and "0.03" in table
    rep.write_json(tmp_path / "r.json")
    d = json.loads((tmp_path / "r.json").read_text())
    assert d["confusion_matrix"] == PUBLISHED.tolist()
    assert d["classes"] == ["alarm", "emergency1", "emergency2", "normal"]
    rep.write_csv(tmp_path / "r.csv")
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == "actual,alarm,emergency1,emergency2,normal,class_error"
    assert lines[1].startswith("alarm,947,1,0,0,")
    cmp = comparison_table({"CART": rep, "RF": evaluate([0, 1], [0, 1])})
    assert "99.07" in cmp and "100.00" in cmp


matrices = arrays(np.int64, (4, 4), elements=st.integers(0, 50)).filter(lambda m: m.sum() > 0)


@given(m=matrices, perm=st.permutations(range(4)))
@settings(max_examples=200, deadline=None)
def test_metric_properties(m, perm):
    o, e = accuracy(m), expected_accuracy(m)
    if 0 < e < 1:
        k = kappa(m)
        assert k <= o + 1e-12
        assert (abs(k - o) < 1e-12) == (o == 1.0)
        assert (abs(k - 1) < 1e-12) == (np.count_nonzero(m - np.diag(np.diag(m))) == 0)
    p = np.asarray(perm)
    mp = m[np.ix_(p, p)]
    assert accuracy(mp) == pytest.approx(o)
    if e < 1:
        assert kappa(mp) == pytest.approx(kappa(m))


@given(pairs=st.lists(st.tuples(st.integers(0, 3), st.integers(0, 3)), min_size=1, max_size=80))
@settings(max_examples=100, deadline=None)
def test_confusion_totals(pairs):
    pred, truth = zip(*pairs)
    m = confusion_matrix(pred, truth)
    assert m.sum() == len(pairs)
    assert np.array_equal(m.sum(axis=1), np.bincount(truth, minlength=4))
