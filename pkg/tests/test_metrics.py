import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import brute_auc, brute_confusion, brute_f1
from painvit import metrics as M
from painvit.errors import ContractError, UndefinedMetricError


def test_f1_examples():
    assert M.f1_minority([1, 0, 1], [1, 0, 1])[0] == 1.0
    f1, precision, recall, counts = M.f1_minority([1, 1, 0, 0], [1, 0, 1, 0])
    assert counts == (1, 1, 1, 1)
    assert (f1, precision, recall) == (0.5, 0.5, 0.5)
    assert M.f1_minority([0, 0, 0], [1, 0, 1])[:3] == (0.0, 0.0, 0.0)
    assert M.f1_minority([0, 0], [0, 0])[0] == 0.0


def test_f1_contract():
    with pytest.raises(ContractError):
        M.f1_minority([], [])
    with pytest.raises(ContractError):
        M.f1_minority([0, 1], [1])
    with pytest.raises(ContractError):
        M.f1_minority([0, 2], [1, 0])


def test_auc_examples():
    assert M.auc([0.9, 0.8, 0.1], [1, 1, 0]) == 1.0
    assert M.auc([0.8, 0.4, 0.6, 0.2], [1, 1, 0, 0]) == 0.75
    assert M.auc([0.3] * 5, [1, 0, 1, 0, 0]) == 0.5
    with pytest.raises(UndefinedMetricError):
        M.auc([0.1, 0.2], [1, 1])


labelled = st.integers(1, 12).flatmap(lambda n: st.tuples(
    st.lists(st.sampled_from([0.0, 0.1, 0.25, 0.5, 0.75, 0.9, 1.0]), min_size=n, max_size=n),
    st.lists(st.integers(0, 1), min_size=n, max_size=n),
    st.lists(st.integers(0, 1), min_size=n, max_size=n)))


@given(labelled)
def test_metrics_match_brute_force(case):
    scores, pred, true = case
    f1, _, _, counts = M.f1_minority(pred, true)
    assert counts == brute_confusion(pred, true)
    assert f1 == brute_f1(pred, true)
    if 0 < sum(true) < len(true):
        assert M.auc(scores, true) == brute_auc(scores, true)


@given(labelled)
def test_auc_symmetries(case):
    scores, _, true = case
    if not 0 < sum(true) < len(true):
        return
    s, y = np.array(scores), np.array(true)
    base = M.auc(s, y)
    assert M.auc(np.exp(3 * s) - 7, y) == base
    assert M.auc(-s, 1 - y) == base
    perm = np.random.default_rng(len(s)).permutation(len(s))
    assert M.auc(s[perm], y[perm]) == base
    assert M.f1_minority(y[perm], y[::-1][perm])[0] == M.f1_minority(y, y[::-1])[0]


def test_evaluate_fold_records_undefined_auc():
    r = M.evaluate_fold(3, [0.2, 0.7], [0, 1], [0, 0])
    assert np.isnan(r.auc) and "AUC" in r.error
    assert (r.tp, r.fp, r.fn, r.tn) == (0, 1, 0, 1)


def fold(i, f1, auc=0.5):
    return M.FoldResult(i, f1, auc, 0.0, 0.0, 0, 0, 0, 0)


def test_aggregate_examples():
    rep = M.aggregate([fold(0, 0.5), fold(1, 0.6)])
    assert rep.f1_mean == pytest.approx(0.55, abs=1e-15)
    assert rep.f1_std == pytest.approx(0.05, abs=1e-15)
    assert M.aggregate([fold(0, 0.4), fold(1, 0.4), fold(2, 0.4)]).f1_std == 0.0
    with pytest.raises(ContractError):
        M.aggregate([fold(0, 0.4)])


@given(st.lists(st.floats(0, 1), min_size=5, max_size=5), st.lists(st.floats(0, 1), min_size=5, max_size=5))
def test_aggregate_matches_two_pass(f1s, aucs):
    rep = M.aggregate([fold(i, f, a) for i, (f, a) in enumerate(zip(f1s, aucs))])
    mean = sum(f1s) / 5
    std = (sum((f - mean) ** 2 for f in f1s) / 5) ** 0.5
    assert abs(rep.f1_mean - mean) < 1e-12 and abs(rep.f1_std - std) < 1e-12
    amean = sum(aucs) / 5
    assert abs(rep.auc_mean - amean) < 1e-12


def test_aggregate_pooled_auc_and_errors():
    folds = [fold(0, 0.5), M.FoldResult(1, 0.0, float("nan"), 0, 0, 0, 0, 0, 2, "single class")]
    rep = M.aggregate(folds, {"k": 1}, pooled_scores=[0.9, 0.1, 0.8, 0.7], pooled_labels=[1, 0, 0, 1])
    assert rep.auc_pooled == 0.75
    assert rep.auc_mean == 0.5
    assert rep.errors == ["fold 1: single class"]
