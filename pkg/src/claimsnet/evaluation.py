"""Individual-claim and aggregate reserving metrics on dollar-scale predictions."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import AlignmentError, MetricDomainError

WEIGHTINGS = ("unit", "claim_size", "ocl")
CE_LABEL = "CE"


@dataclass
class PredictionSet:
    """Per-observation predictions with the quantities the metrics need.

    ``predicted``, ``paid`` and ``actual`` are dollar amounts: the predicted
    ultimate, payments to date and true ultimate.
    """

    claim_id: np.ndarray
    prediction_quarter: np.ndarray
    predicted: np.ndarray
    paid: np.ndarray
    actual: np.ndarray
    case_estimate: np.ndarray
    source: str = ""
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("claim_id", "prediction_quarter"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=int))
        for name in ("predicted", "paid", "actual", "case_estimate"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float))

    def __len__(self):
        return self.claim_id.size

    @property
    def keys(self):
        return list(zip(self.claim_id.tolist(), self.prediction_quarter.tolist()))

    def with_predictions(self, predicted, source):
        return PredictionSet(self.claim_id, self.prediction_quarter, predicted, self.paid, self.actual,
                             self.case_estimate, source, dict(self.extra))

    def subset(self, mask):
        mask = np.asarray(mask)
        extra = {k: np.asarray(v)[mask] for k, v in self.extra.items()}
        return PredictionSet(self.claim_id[mask], self.prediction_quarter[mask], self.predicted[mask],
                             self.paid[mask], self.actual[mask], self.case_estimate[mask], self.source, extra)


def case_estimates_as_model(observations_or_set, source=CE_LABEL):
    """Treat the case estimate in force as a total-incurred prediction, uncorrected."""
    if isinstance(observations_or_set, PredictionSet):
        ps = observations_or_set
        return ps.with_predictions(ps.case_estimate.copy(), source)
    obs = list(observations_or_set)
    ce = [o.case_estimate_now for o in obs]
    return PredictionSet(
        [o.claim_id for o in obs],
        [o.prediction_quarter for o in obs],
        ce,
        [o.paid_to_date for o in obs],
        [o.target_ultimate for o in obs],
        ce,
        source,
        {"accident_quarter": np.array([o.accident_quarter for o in obs]),
         "quarters_since_notification": np.array([o.quarters_since_notification for o in obs])},
    )


def _align(p1: PredictionSet, p2: PredictionSet):
    if len(p1) != len(p2) or set(p1.keys) != set(p2.keys):
        raise AlignmentError("prediction sets cover different observations")
    if p1.keys == p2.keys:
        return p2.predicted
    pos = {k: i for i, k in enumerate(p2.keys)}
    return p2.predicted[[pos[k] for k in p1.keys]]


def weights(ps: PredictionSet, weighting="ocl"):
    if weighting == "unit":
        return np.full(len(ps), 1.0 / len(ps))
    if weighting == "claim_size":
        return ps.actual / ps.actual.sum()
    if weighting == "ocl":
        outstanding = ps.actual - ps.paid
        return outstanding / outstanding.sum()
    raise ValueError(f"unknown weighting {weighting!r}")


def m1_vs_m2(preds1: PredictionSet, preds2: PredictionSet, weighting="ocl"):
    """Weighted share of observations where model 1 is strictly closer to the actual ultimate."""
    other = _align(preds1, preds2)
    wins = np.abs(preds1.predicted - preds1.actual) < np.abs(other - preds1.actual)
    return float(np.sum(weights(preds1, weighting) * wins))


def log_outstanding_errors(ps: PredictionSet):
    """``log((Yhat - P) / (Y - P))`` per observation, or ``None`` where predicted outstanding <= 0."""
    actual_os = ps.actual - ps.paid
    if np.any(actual_os <= 0):
        raise MetricDomainError("actual outstanding must be positive")
    pred_os = ps.predicted - ps.paid
    ok = pred_os > 0
    err = np.empty(len(ps))
    err[ok] = np.log(pred_os[ok] / actual_os[ok])
    # penalty when the predicted outstanding is not positive
    err[~ok] = np.log(actual_os[~ok])
    return err, ok


def male(ps: PredictionSet):
    err, _ = log_outstanding_errors(ps)
    return float(np.mean(np.abs(err)))


def msle(ps: PredictionSet):
    err, _ = log_outstanding_errors(ps)
    return float(np.mean(err**2))


def ocl_err(ps: PredictionSet):
    """Aggregate predicted outstanding over actual outstanding, minus one."""
    actual_total = float(np.sum(ps.actual - ps.paid))
    if actual_total <= 0:
        raise MetricDomainError("total actual outstanding must be positive")
    return float(np.sum(ps.predicted - ps.paid)) / actual_total - 1.0


def report_breakdowns(ps: PredictionSet, group_key):
    """Per-group ratio of predicted to actual outstanding plus the cumulative outstanding curve.

    Returns rows ``(group, n, predicted_os, actual_os, ratio, cumulative_share)``
    sorted by group; empty groups do not appear.
    """
    groups = np.asarray(ps.extra[group_key]) if group_key in ps.extra else None
    if groups is None:
        raise KeyError(f"prediction set has no {group_key!r} column")
    pred_os = ps.predicted - ps.paid
    act_os = ps.actual - ps.paid
    total = act_os.sum()
    rows = []
    running = 0.0
    for g in np.unique(groups):
        m = groups == g
        a = float(act_os[m].sum())
        p = float(pred_os[m].sum())
        running += a
        rows.append({
            "group": int(g),
            "n": int(m.sum()),
            "predicted_outstanding": p,
            "actual_outstanding": a,
            "ratio": p / a,
            "cumulative_share": running / total,
        })
    if rows:
        rows[-1]["cumulative_share"] = 1.0
    return rows


@dataclass
class MetricsReport:
    source: str
    n: int
    ocl_err: float
    male: float
    msle: float
    vs: dict = field(default_factory=dict)  # "opponent|weighting" -> value
    breakdowns: dict = field(default_factory=dict)
    smearing_b: float | None = None

    def scalars(self):
        out = {"source": self.source, "n": self.n, "ocl_err": self.ocl_err, "male": self.male, "msle": self.msle}
        if self.smearing_b is not None:
            out["smearing_b"] = self.smearing_b
        out["vs"] = dict(sorted(self.vs.items()))
        return out


def evaluate(ps: PredictionSet, opponents=(), smearing_b=None, breakdown_keys=("accident_quarter",
                                                                                "quarters_since_notification")):
    report = MetricsReport(ps.source, len(ps), ocl_err(ps), male(ps), msle(ps), smearing_b=smearing_b)
    for opp in opponents:
        for w in WEIGHTINGS:
            report.vs[f"{opp.source}|{w}"] = m1_vs_m2(ps, opp, w)
    for key in breakdown_keys:
        if key in ps.extra:
            report.breakdowns[key] = report_breakdowns(ps, key)
    return report


def write_report(report: MetricsReport, directory, stem):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    with open(directory / f"{stem}.json", "w", encoding="utf-8") as fh:
        json.dump(report.scalars(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    for key, rows in report.breakdowns.items():
        with open(directory / f"{stem}_by_{key}.csv", "w", encoding="utf-8", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(rows[0]) if rows else ["group"], lineterminator="\n")
            writer.writeheader()
            writer.writerows(rows)
