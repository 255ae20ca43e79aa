import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ffsm.errors import DegenerateInputError
from ffsm.metrics import ConfusionMatrix, confusion, metrics, roc_auc

from oracles import pairwise_auc


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 6), st.integers(0, 1)), min_size=2, max_size=50))
def test_auc_equals_pairwise_concordance_with_ties(pairs):
    s = np.array([p[0] for p in pairs], dtype=float) / 6
    y = np.array([p[1] for p in pairs])
    if y.min() == y.max():
        with pytest.raises(DegenerateInputError):
            roc_auc(s, y)
        return
    assert abs(roc_auc(s, y).auc - pairwise_auc(s, y)) <= 1e-12


def test_auc_extremes():
    y = np.array([0, 0, 1, 1])
    assert roc_auc([0.1, 0.2, 0.8, 0.9], y).auc == 1.0
    assert roc_auc([0.9, 0.8, 0.2, 0.1], y).auc == 0.0
    assert roc_auc([0.5] * 4, y).auc == 0.5


def test_roc_curve_shape_and_fpr_definition():
    s = np.array([0.9, 0.8, 0.7, 0.6, 0.3, 0.2])
    y = np.array([1, 0, 1, 1, 0, 0])
    c = roc_auc(s, y)
    assert (c.fpr[0], c.tpr[0]) == (0.0, 0.0) and (c.fpr[-1], c.tpr[-1]) == (1.0, 1.0)
    assert (np.diff(c.fpr) >= 0).all() and (np.diff(c.tpr) >= 0).all()
    # at threshold 0.7: FP = 1, TN = 2 -> FPR = FP / (FP + TN)
    k = list(c.thresholds).index(0.7)
    assert c.fpr[k] == 1 / 3 and c.tpr[k] == 2 / 3


def test_roc_csv(tmp_path):
    roc_auc([0.2, 0.7, 0.4], [0, 1, 1]).to_csv(tmp_path / "r.csv")
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == "threshold,fpr,tpr" and lines[1].startswith("inf,0.0,0.0")


def test_confusion_uses_strict_threshold():
    cm = confusion([0.5, 0.51, 0.2, 0.9], [1, 1, 0, 0])
    assert cm == ConfusionMatrix(tp=1, tn=1, fp=1, fn=1)


def test_metric_formulas():
    m = metrics(ConfusionMatrix(tp=8, tn=5, fp=2, fn=1))
    assert m.accuracy == 13 / 16
    assert m.precision == 8 / 10
    assert m.recall == 8 / 9
    assert m.f1 == 2 * (8 / 10) * (8 / 9) / (8 / 10 + 8 / 9)


def test_undefined_metrics_are_none():
    m = metrics(ConfusionMatrix(tp=0, tn=4, fp=0, fn=2))
    assert m.precision is None and m.recall == 0.0 and m.f1 == 0.0
    assert metrics(ConfusionMatrix(0, 0, 0, 0)).accuracy is None


def test_labels_must_be_binary():
    with pytest.raises(ValueError):
        roc_auc([0.1, 0.2], [0, 2])
