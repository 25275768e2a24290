"""Observations per prediction quarter and train/validation/test assignment."""

from __future__ import annotations

import bisect
import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, DataIntegrityError, ParseError
from .simulator import CSV_COLUMNS, EVENT_KINDS, PAYMENT, ClaimRecord, TransactionEvent

TRAIN = "train"
VALIDATION = "validation"
TEST = "test"
SPLITS = (TRAIN, VALIDATION, TEST)


def load_transactions(path) -> list[ClaimRecord]:
    """Read a transaction CSV back into claim records and revalidate them."""
    claims: dict[int, ClaimRecord] = {}
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != CSV_COLUMNS:
            raise ParseError(f"expected header {CSV_COLUMNS}, got {header}", 1)
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(CSV_COLUMNS):
                raise ParseError(f"expected {len(CSV_COLUMNS)} fields, got {len(row)}", lineno)
            try:
                claim_id = int(row[0])
                occ, notif, settle = float(row[1]), float(row[2]), float(row[3])
                severity, age_band, legal_rep = int(row[4]), int(row[5]), int(row[6])
                t, kind = float(row[7]), row[8]
                amount, ce = float(row[9]), float(row[10])
            except ValueError as exc:
                raise ParseError(str(exc), lineno) from None
            if kind not in EVENT_KINDS:
                raise ParseError(f"unknown txn_kind {kind!r}", lineno)
            claim = claims.get(claim_id)
            if claim is None:
                claim = ClaimRecord(claim_id, occ, notif, settle, 0.0, severity, age_band, legal_rep)
                claims[claim_id] = claim
            elif (claim.occurrence_time, claim.notification_time, claim.settlement_time) != (occ, notif, settle):
                raise DataIntegrityError(f"inconsistent claim fields on line {lineno}", claim_id)
            claim.events.append(TransactionEvent(claim_id, t, kind, amount, ce))

    portfolio = []
    for claim_id in sorted(claims):
        claim = claims[claim_id]
        claim.events.sort(key=lambda e: e.time)
        claim.ultimate_size = math.fsum(e.payment_amount for e in claim.events if e.kind == PAYMENT)
        validate_claim(claim)
        portfolio.append(claim)
    return portfolio


def validate_claim(claim: ClaimRecord):
    cid = claim.claim_id
    if not claim.occurrence_time <= claim.notification_time < claim.settlement_time:
        raise DataIntegrityError("requires occurrence <= notification < settlement", cid)
    if not claim.events:
        raise DataIntegrityError("no transactions", cid)
    paid = 0.0
    amounts = []
    for e in claim.events:
        if e.payment_amount < 0:
            raise DataIntegrityError(f"negative payment at t={e.time}", cid)
        if not claim.notification_time <= e.time <= claim.settlement_time:
            raise DataIntegrityError(f"transaction at t={e.time} outside the open period", cid)
        if e.kind == PAYMENT:
            amounts.append(e.payment_amount)
            paid = math.fsum(amounts)
        if e.case_estimate_after < paid:
            raise DataIntegrityError(f"case estimate below paid at t={e.time}", cid)
    if not amounts:
        raise DataIntegrityError("no payments", cid)
    if claim.ultimate_size <= 0:
        raise DataIntegrityError("ultimate size must be positive", cid)
    if claim.events[-1].case_estimate_after != claim.ultimate_size:
        raise DataIntegrityError("final case estimate differs from ultimate", cid)


# --------------------------------------------------------------------------
# observations
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Observation:
    """One claim seen at the end of one calendar quarter.

    ``n_events`` is the length of the causal history prefix; the target is
    carried for training and evaluation only and never enters features.
    """

    claim: ClaimRecord = field(repr=False)
    prediction_quarter: int
    n_events: int
    paid_to_date: float
    case_estimate_now: float

    @property
    def claim_id(self):
        return self.claim.claim_id

    @property
    def accident_quarter(self):
        return self.claim.accident_quarter

    @property
    def quarters_since_notification(self):
        return self.prediction_quarter - math.floor(self.claim.notification_time)

    @property
    def history(self):
        return self.claim.events[: self.n_events]

    @property
    def target_ultimate(self):
        return self.claim.ultimate_size


def prediction_quarters(notification_time, settlement_time):
    """Integer quarters ``floor(t1) + 1 .. floor(t2)``; empty when both fall in one quarter."""
    return range(math.floor(notification_time) + 1, math.floor(settlement_time) + 1)


def claim_observations(claim: ClaimRecord, max_quarter=None):
    times = [e.time for e in claim.events]
    out = []
    for q in prediction_quarters(claim.notification_time, claim.settlement_time):
        if max_quarter is not None and q > max_quarter:
            break
        n = bisect.bisect_right(times, q)
        history = claim.events[:n]
        paid = math.fsum(e.payment_amount for e in history if e.kind == PAYMENT)
        out.append(Observation(claim, q, n, paid, history[-1].case_estimate_after))
    return out


def build_observations(portfolio, valuation_quarter=None) -> list[Observation]:
    """Duplicate each claim once per open prediction quarter.

    ``valuation_quarter`` is accepted for symmetry with the pipeline but does
    not truncate: test-set claims are observed through settlement.
    """
    observations = []
    for claim in portfolio:
        observations.extend(claim_observations(claim))
    return observations


def valuation_slice(observations, valuation_quarter):
    return [o for o in observations if o.prediction_quarter == valuation_quarter]


# --------------------------------------------------------------------------
# splits
# --------------------------------------------------------------------------


@dataclass
class SplitAssignment:
    labels: dict[int, str]
    split_mode: str
    train_cutoff: float | None = None
    valuation: float | None = None
    move_fraction: float = 0.0
    seed: int = 0
    moved: frozenset = frozenset()

    def of(self, claim_id):
        return self.labels[claim_id]

    def claims_in(self, split):
        return sorted(cid for cid, lab in self.labels.items() if lab == split)

    def partition(self, observations):
        parts = {s: [] for s in SPLITS}
        for o in observations:
            parts[self.labels[o.claim_id]].append(o)
        return parts


def finalisation_label(settlement_time, train_cutoff, valuation):
    if settlement_time < train_cutoff:
        return TRAIN
    if settlement_time < valuation:
        return VALIDATION
    return TEST


def assign_splits(portfolio, boundaries=(36, 40), move_fraction=0.2, seed=0) -> SplitAssignment:
    """Split claims by settlement time, then move a random share of validation claims to train.

    Train: settlement < cutoff. Validation: cutoff <= settlement < valuation.
    Test: settlement >= valuation. Moving whole claims keeps each claim's
    observations in a single split.
    """
    train_cutoff, valuation = boundaries
    if not train_cutoff <= valuation:
        raise ConfigurationError("boundaries must be ordered", "boundaries")
    if not 0 <= move_fraction < 1:
        raise ConfigurationError("must lie in [0, 1)", "move_fraction")
    labels = {c.claim_id: finalisation_label(c.settlement_time, train_cutoff, valuation) for c in portfolio}
    validation = sorted(cid for cid, lab in labels.items() if lab == VALIDATION)
    n_move = int(round(move_fraction * len(validation)))
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(11,)))
    moved = rng.choice(len(validation), size=n_move, replace=False) if n_move else []
    moved_ids = frozenset(validation[i] for i in moved)
    for cid in moved_ids:
        labels[cid] = TRAIN
    return SplitAssignment(labels, "finalisation", train_cutoff, valuation, move_fraction, seed, moved_ids)


def largest_remainder(n, fractions):
    raw = [n * f for f in fractions]
    sizes = [math.floor(r) for r in raw]
    order = sorted(range(len(raw)), key=lambda i: (-(raw[i] - sizes[i]), i))
    for i in order[: n - sum(sizes)]:
        sizes[i] += 1
    return sizes


def assign_splits_naive(portfolio, fractions=(0.6, 0.2, 0.2), seed=0) -> SplitAssignment:
    """Random partition of claim ids ignoring time; sizes by largest remainder."""
    if len(fractions) != 3 or abs(sum(fractions) - 1) > 1e-9 or min(fractions) < 0:
        raise ConfigurationError("three nonnegative fractions summing to 1 required", "fractions")
    ids = sorted(c.claim_id for c in portfolio)
    sizes = largest_remainder(len(ids), fractions)
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(12,)))
    perm = rng.permutation(len(ids))
    labels = {}
    start = 0
    for split, size in zip(SPLITS, sizes):
        for i in perm[start : start + size]:
            labels[ids[i]] = split
        start += size
    return SplitAssignment(labels, "naive", seed=seed)


def write_split_manifest(assignment: SplitAssignment, path):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["claim_id", "split"])
        for cid in sorted(assignment.labels):
            writer.writerow([cid, assignment.labels[cid]])


def read_split_manifest(path, split_mode="finalisation"):
    labels = {}
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            labels[int(row["claim_id"])] = row["split"]
    return SplitAssignment(labels, split_mode)
