import csv
import json
import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from claimsnet.dataset import Observation
from claimsnet.errors import AlignmentError, MetricDomainError
from claimsnet.evaluation import (
    WEIGHTINGS,
    PredictionSet,
    case_estimates_as_model,
    evaluate,
    m1_vs_m2,
    male,
    msle,
    ocl_err,
    report_breakdowns,
    write_report,
)
from claimsnet.simulator import MAJOR, PAYMENT, ClaimRecord, TransactionEvent


def ps(pred, paid, actual, source="m", groups=None):
    n = len(pred)
    extra = {} if groups is None else {"quarters_since_notification": np.asarray(groups)}
    return PredictionSet(np.arange(n), np.full(n, 40), pred, paid, actual, np.asarray(actual) * 0.9, source, extra)


# -- M1vsM2 -------------------------------------------------------------------


def test_perfect_model_wins_everywhere():
    Y, P = np.array([10.0, 20.0, 30.0]), np.array([1.0, 2.0, 3.0])
    m1, m2 = ps(Y, P, Y), ps(Y + 1, P, Y)
    for w in WEIGHTINGS:
        assert m1_vs_m2(m1, m2, w) == pytest.approx(1.0)


def test_ocl_weighting_hand_case():
    Y, P = [10.0, 20.0], [5.0, 10.0]
    m1, m2 = ps([11.0, 25.0], P, Y), ps([15.0, 21.0], P, Y)
    assert m1_vs_m2(m1, m2, "ocl") == pytest.approx(1 / 3)
    assert m1_vs_m2(m1, m2, "unit") == pytest.approx(1 / 2)
    assert m1_vs_m2(m1, m2, "claim_size") == pytest.approx(1 / 3)


def test_ties_lose():
    a = ps([5.0, 7.0], [1.0, 1.0], [6.0, 8.0])
    for w in WEIGHTINGS:
        assert m1_vs_m2(a, a, w) == 0.0


def test_misaligned_sets_rejected():
    a = ps([5.0, 7.0], [1.0, 1.0], [6.0, 8.0])
    b = ps([5.0], [1.0], [6.0])
    with pytest.raises(AlignmentError):
        m1_vs_m2(a, b)


def test_alignment_by_key_not_position():
    a = ps([5.0, 9.0], [1.0, 1.0], [6.0, 8.0])
    b = a.with_predictions(np.array([5.5, 8.5]), "b")
    shuffled = b.subset(np.array([1, 0]))
    assert m1_vs_m2(a, b, "unit") == m1_vs_m2(a, shuffled, "unit")


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.floats(1, 100), st.floats(0, 0.9), st.floats(-50, 50), st.floats(-50, 50)),
                min_size=1, max_size=20))
def test_complementarity_without_ties(rows):
    Y = np.array([r[0] for r in rows])
    P = Y * np.array([r[1] for r in rows])
    a = Y + np.array([r[2] for r in rows])
    b = Y + np.array([r[3] for r in rows])
    assume(np.all(np.abs(np.abs(a - Y) - np.abs(b - Y)) > 1e-9))
    for w in WEIGHTINGS:
        assert m1_vs_m2(ps(a, P, Y), ps(b, P, Y), w) + m1_vs_m2(ps(b, P, Y), ps(a, P, Y), w) == pytest.approx(1.0)


# -- MALE / MSLE --------------------------------------------------------------


def test_male_examples():
    Y, P = np.array([10.0, 40.0]), np.array([4.0, 10.0])
    assert male(ps(Y, P, Y)) == 0.0
    assert male(ps(P + math.e * (Y - P), P, Y)) == pytest.approx(1.0)
    assert male(ps([0.0], [0.0], [math.e**2])) == pytest.approx(2.0)


def test_msle_examples():
    Y, P = np.array([10.0, 40.0]), np.array([4.0, 10.0])
    assert msle(ps(Y, P, Y)) == 0.0
    assert msle(ps(P + math.e * (Y - P), P, Y)) == pytest.approx(1.0)
    ratios = np.exp([1.0, -2.0])
    assert msle(ps(P + ratios * (Y - P), P, Y)) == pytest.approx(2.5)


def test_replacement_for_nonpositive_predicted_outstanding():
    # predicted ultimate below paid: contribution is log(Y - P)
    a = ps([5.0], [8.0], [8.0 + math.e**3])
    assert male(a) == pytest.approx(3.0)
    assert msle(a) == pytest.approx(9.0)


def test_nonpositive_actual_outstanding_rejected():
    with pytest.raises(MetricDomainError):
        male(ps([5.0], [10.0], [10.0]))


# -- OCLerr -------------------------------------------------------------------


def test_ocl_examples():
    Y, P = np.array([10.0, 40.0]), np.array([4.0, 10.0])
    assert ocl_err(ps(Y, P, Y)) == 0.0
    assert ocl_err(ps(P + 0.9 * (Y - P), P, Y)) == pytest.approx(-0.1)
    assert ocl_err(ps([30.0, 10.0], [0.0, 0.0], [20.0, 20.0])) == pytest.approx(0.0)
    with pytest.raises(MetricDomainError):
        ocl_err(ps([1.0], [5.0], [5.0]))


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.floats(1, 1e5), st.floats(0, 0.95), st.floats(-0.5, 3)), min_size=1, max_size=20),
       st.floats(0.01, 100))
def test_scale_invariance(rows, c):
    Y = np.array([r[0] for r in rows])
    P = Y * np.array([r[1] for r in rows])
    pred = P + (Y - P) * np.array([r[2] for r in rows])
    pred2 = Y * 1.1
    a, b = ps(pred, P, Y), ps(pred2, P, Y)
    ac, bc = ps(pred * c, P * c, Y * c), ps(pred2 * c, P * c, Y * c)
    assert ocl_err(ac) == pytest.approx(ocl_err(a), rel=1e-9, abs=1e-9)
    for w in WEIGHTINGS:
        assert m1_vs_m2(ac, bc, w) == pytest.approx(m1_vs_m2(a, b, w), abs=1e-9)
    if np.all(pred - P > 0):
        assert male(ac) == pytest.approx(male(a), rel=1e-9, abs=1e-9)
        assert msle(ac) == pytest.approx(msle(a), rel=1e-9, abs=1e-9)


# -- breakdowns ---------------------------------------------------------------


def test_single_group_curve():
    rows = report_breakdowns(ps([3.0, 5.0], [1.0, 1.0], [4.0, 4.0], groups=[2, 2]), "quarters_since_notification")
    assert len(rows) == 1 and rows[0]["cumulative_share"] == 1.0


def test_perfect_predictions_ratio_one():
    Y = np.array([4.0, 8.0, 9.0])
    rows = report_breakdowns(ps(Y, [1.0, 2.0, 3.0], Y, groups=[1, 2, 3]), "quarters_since_notification")
    assert [r["ratio"] for r in rows] == [1.0, 1.0, 1.0]


def test_three_group_hand_case():
    # groups 1,1,2,4; outstanding actual 10,20,30,40; predicted 15,15,60,20
    paid = np.zeros(4)
    Y = np.array([10.0, 20.0, 30.0, 40.0])
    pred = np.array([15.0, 15.0, 60.0, 20.0])
    rows = report_breakdowns(ps(pred, paid, Y, groups=[1, 1, 2, 4]), "quarters_since_notification")
    assert [r["group"] for r in rows] == [1, 2, 4]
    assert [r["ratio"] for r in rows] == pytest.approx([1.0, 2.0, 0.5])
    assert [r["cumulative_share"] for r in rows] == pytest.approx([0.3, 0.6, 1.0])
    assert [r["n"] for r in rows] == [2, 1, 1]


# -- case estimates -----------------------------------------------------------


def _obs(ce_path, ultimate=100.0, paid=10.0):
    cid = 1
    events = [TransactionEvent(cid, 1.5, MAJOR, 0.0, ce_path[0]),
              TransactionEvent(cid, 2.5, PAYMENT, paid, ce_path[-1]),
              TransactionEvent(cid, 9.5, PAYMENT, ultimate - paid, ultimate)]
    claim = ClaimRecord(cid, 1.0, 1.5, 9.5, ultimate, 1, 1, 0, events)
    return Observation(claim, 3, 2, paid, ce_path[-1])


def test_case_estimate_at_final_revision_is_exact():
    ce = case_estimates_as_model([_obs([80.0, 100.0])])
    assert ce.predicted[0] == ce.actual[0]
    assert ocl_err(ce) == 0.0


def test_case_estimate_as_model_definitional():
    ce = case_estimates_as_model([_obs([80.0])])
    assert ce.predicted[0] == pytest.approx(0.8 * ce.actual[0])
    assert ce.extra["quarters_since_notification"][0] == 2
    for w in WEIGHTINGS:
        assert m1_vs_m2(ce, ce, w) == 0.0


def test_evaluate_and_write(tmp_path):
    Y, P = np.array([10.0, 40.0, 25.0]), np.array([4.0, 10.0, 5.0])
    model = ps(Y * 1.1, P, Y, "FNN", groups=[1, 2, 2])
    model.extra["accident_quarter"] = np.array([40, 39, 40])
    report = evaluate(model, [case_estimates_as_model(model)], smearing_b=1.3)
    assert set(report.vs) == {f"CE|{w}" for w in WEIGHTINGS}
    write_report(report, tmp_path, "FNN")
    doc = json.loads((tmp_path / "FNN.json").read_text())
    assert doc["smearing_b"] == 1.3 and doc["n"] == 3
    with open(tmp_path / "FNN_by_accident_quarter.csv") as fh:
        assert [r["group"] for r in csv.DictReader(fh)] == ["39", "40"]
