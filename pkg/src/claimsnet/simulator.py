"""Synthetic individual-claims portfolios with payments and case-estimate revisions.

Claims are generated module by module: occurrence, size, notification and
settlement first, then the payment schedule, then the case-estimate revision
history. Every claim draws from its own counter-derived random stream, so a
portfolio is the same whether claims are built sequentially or in parallel.

Time is measured in quarters from the start of the first accident quarter.
Accident quarter ``k`` covers occurrence times in ``[k - 1, k)``.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import ConfigurationError

PAYMENT = "P"
MAJOR = "MAJ"
MINOR = "MIN"
EVENT_KINDS = (PAYMENT, MAJOR, MINOR)

N_SEVERITY = 6
N_AGE_BANDS = 9
SETTLEMENT_FLOOR = 0.01
RESERVE_FLOOR = 0.1

CSV_COLUMNS = [
    "claim_id",
    "occurrence_time",
    "notification_time",
    "settlement_time",
    "severity",
    "age_band",
    "legal_rep",
    "txn_time",
    "txn_kind",
    "payment_amount",
    "case_estimate_after",
]

# spawn-key prefixes for the counter-based streams
_COUNT_STREAM = 0
_CLAIM_STREAM = 1


# --------------------------------------------------------------------------
# configuration
# --------------------------------------------------------------------------


def _strict_init(cls, data, path):
    if not isinstance(data, dict):
        raise ConfigurationError("expected a JSON object", path)
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigurationError(f"unknown keys {unknown}", path)
    return data


@dataclass(frozen=True)
class LognormalSpec:
    meanlog: float
    sdlog: float

    @classmethod
    def from_dict(cls, data, path="lognormal"):
        return cls(**_strict_init(cls, data, path))


@dataclass(frozen=True)
class DelaySpec:
    """Lognormal delay whose mean scales as ``(size / size_ref) ** size_elasticity``.

    A zero mean gives a zero delay; a zero cv gives a deterministic one.
    """

    mean: float
    cv: float
    size_elasticity: float = 0.0
    size_ref: float = 10_000.0

    @classmethod
    def from_dict(cls, data, path="delay"):
        return cls(**_strict_init(cls, data, path))


@dataclass(frozen=True)
class PaymentCountSpec:
    """Number of payments is ``1 + Poisson(base + size_slope * log(size / size_ref))``."""

    base: float = 2.0
    size_slope: float = 0.6
    size_ref: float = 10_000.0

    @classmethod
    def from_dict(cls, data, path="payment_count"):
        return cls(**_strict_init(cls, data, path))


@dataclass(frozen=True)
class SizeBand:
    upper: float | None
    calendar_rate: float
    occurrence_rate: float

    @classmethod
    def from_dict(cls, data, path="size_band"):
        return cls(**_strict_init(cls, data, path))


@dataclass(frozen=True)
class InflationSpec:
    """Quarterly superimposed inflation.

    ``bands`` (by undiscounted claim size, ordered by ``upper``; the last band
    has ``upper=None``) override the flat rates when present.
    """

    calendar_rate: float = 0.0
    occurrence_rate: float = 0.0
    bands: tuple[SizeBand, ...] = ()

    @classmethod
    def from_dict(cls, data, path="inflation"):
        data = dict(_strict_init(cls, data, path))
        bands = tuple(
            SizeBand.from_dict(b, f"{path}.bands[{i}]") for i, b in enumerate(data.pop("bands", ()))
        )
        return cls(bands=bands, **data)

    def rates_for(self, size):
        for band in self.bands:
            if band.upper is None or size <= band.upper:
                return band.calendar_rate, band.occurrence_rate
        return self.calendar_rate, self.occurrence_rate


@dataclass(frozen=True)
class RevisionSpec:
    """Major revisions are rare and large, minor revisions frequent and small.

    ``major_count`` is the expected number of major revisions per claim;
    ``minor_rate`` is the expected number of minor revisions per quarter open.
    Shocks are normal on the log case-estimate error scale.
    """

    major_count: float = 1.0
    minor_rate: float = 0.28
    major_sd: float = 0.5
    minor_sd: float = 0.08
    concurrent_prob: float = 0.3

    @classmethod
    def from_dict(cls, data, path="revisions"):
        return cls(**_strict_init(cls, data, path))


@dataclass(frozen=True)
class SimulationConfig:
    n_accident_quarters: int = 40
    expected_claims_per_quarter: float = 750.0
    claim_size: LognormalSpec = LognormalSpec(9.3, 1.4)
    notification_delay: DelaySpec = DelaySpec(mean=0.8, cv=1.2, size_elasticity=0.1)
    settlement_delay: DelaySpec = DelaySpec(mean=11.0, cv=0.6, size_elasticity=0.25)
    payment_count: PaymentCountSpec = PaymentCountSpec()
    inflation: InflationSpec = InflationSpec(
        calendar_rate=0.005,
        occurrence_rate=0.0,
        bands=(
            SizeBand(upper=20_000.0, calendar_rate=0.005, occurrence_rate=0.0),
            SizeBand(upper=None, calendar_rate=0.02, occurrence_rate=-0.004),
        ),
    )
    revisions: RevisionSpec = RevisionSpec()
    initial_estimate_error: LognormalSpec = LognormalSpec(-0.35, 0.6)
    seed: int = 0

    def __post_init__(self):
        validate_config(self)

    @classmethod
    def from_dict(cls, data):
        data = dict(_strict_init(cls, data, "simulation"))
        nested = {
            "claim_size": LognormalSpec,
            "notification_delay": DelaySpec,
            "settlement_delay": DelaySpec,
            "payment_count": PaymentCountSpec,
            "inflation": InflationSpec,
            "revisions": RevisionSpec,
            "initial_estimate_error": LognormalSpec,
        }
        for key, kind in nested.items():
            if key in data:
                data[key] = kind.from_dict(data[key], key)
        return cls(**data)

    @classmethod
    def from_json(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self):
        return asdict(self)

    def replace(self, **changes):
        data = {f.name: getattr(self, f.name) for f in fields(self)}
        data.update(changes)
        return SimulationConfig(**data)


def _check(cond, field_name, message):
    if not cond:
        raise ConfigurationError(message, field_name)


def validate_config(cfg: SimulationConfig):
    _check(isinstance(cfg.n_accident_quarters, int) and cfg.n_accident_quarters >= 1,
           "n_accident_quarters", "must be an integer >= 1")
    _check(cfg.expected_claims_per_quarter >= 0, "expected_claims_per_quarter", "must be >= 0")
    _check(cfg.claim_size.sdlog > 0, "claim_size.sdlog", "must be > 0")
    for name in ("notification_delay", "settlement_delay"):
        d = getattr(cfg, name)
        _check(d.mean >= 0, f"{name}.mean", "must be >= 0")
        _check(d.cv >= 0, f"{name}.cv", "must be >= 0")
        _check(d.size_ref > 0, f"{name}.size_ref", "must be > 0")
    _check(cfg.settlement_delay.size_elasticity >= 0, "settlement_delay.size_elasticity", "must be >= 0")
    _check(cfg.payment_count.base >= 0, "payment_count.base", "must be >= 0")
    _check(cfg.payment_count.size_ref > 0, "payment_count.size_ref", "must be > 0")
    r = cfg.revisions
    _check(r.major_count >= 0, "revisions.major_count", "must be >= 0")
    _check(r.minor_rate >= 0, "revisions.minor_rate", "must be >= 0")
    _check(r.major_sd >= 0, "revisions.major_sd", "must be >= 0")
    _check(r.minor_sd >= 0, "revisions.minor_sd", "must be >= 0")
    _check(0 <= r.concurrent_prob <= 1, "revisions.concurrent_prob", "must lie in [0, 1]")
    _check(cfg.initial_estimate_error.sdlog >= 0, "initial_estimate_error.sdlog", "must be >= 0")
    infl = cfg.inflation
    _check(infl.calendar_rate > -1 and infl.occurrence_rate > -1, "inflation", "rates must exceed -1")
    if infl.bands:
        uppers = [b.upper for b in infl.bands]
        _check(uppers[-1] is None, "inflation.bands", "last band must be unbounded (upper=null)")
        finite = uppers[:-1]
        _check(all(u is not None and u > 0 for u in finite), "inflation.bands", "band uppers must be positive")
        _check(all(a < b for a, b in zip(finite, finite[1:])), "inflation.bands", "band uppers must increase")
        for b in infl.bands:
            _check(b.calendar_rate > -1 and b.occurrence_rate > -1, "inflation.bands", "rates must exceed -1")


# --------------------------------------------------------------------------
# claim records
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class TransactionEvent:
    claim_id: int
    time: float
    kind: str
    payment_amount: float
    case_estimate_after: float


@dataclass
class ClaimRecord:
    claim_id: int
    occurrence_time: float
    notification_time: float
    settlement_time: float
    ultimate_size: float
    severity: int
    age_band: int
    legal_rep: int
    events: list[TransactionEvent] = field(default_factory=list)

    @property
    def accident_quarter(self):
        return math.floor(self.occurrence_time) + 1

    @property
    def payments(self):
        return [e for e in self.events if e.kind == PAYMENT]

    @property
    def last_revision_time(self):
        """Time of the last event that changed the case estimate."""
        last = self.notification_time
        prev = None
        for e in self.events:
            if prev is None or e.case_estimate_after != prev:
                last = e.time
            prev = e.case_estimate_after
        return last


# --------------------------------------------------------------------------
# generation
# --------------------------------------------------------------------------


def claim_rng(seed, index):
    """Independent stream for claim ``index``; identical however claims are scheduled."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(_CLAIM_STREAM, index)))


def _lognormal_delay(spec: DelaySpec, size, rng):
    z = rng.standard_normal()
    if spec.mean == 0:
        return 0.0
    mean = spec.mean * (size / spec.size_ref) ** spec.size_elasticity
    if spec.cv == 0:
        return mean
    s2 = math.log1p(spec.cv**2)
    return float(math.exp(math.log(mean) - 0.5 * s2 + math.sqrt(s2) * z))


def simulate_claim_lifecycle(config: SimulationConfig, rng, accident_quarter=1):
    """Draw (occurrence_time, base_size, notification_time, settlement_time).

    ``base_size`` is in time-zero money; the nominal ultimate is fixed once
    payments are inflated.
    """
    occurrence = accident_quarter - 1 + float(rng.random())
    size = float(math.exp(config.claim_size.meanlog + config.claim_size.sdlog * rng.standard_normal()))
    size = max(round(size, 2), 0.01)
    notification = occurrence + _lognormal_delay(config.notification_delay, size, rng)
    settlement = notification + _lognormal_delay(config.settlement_delay, size, rng)
    if settlement < notification + SETTLEMENT_FLOOR:
        settlement = notification + SETTLEMENT_FLOOR
    return occurrence, size, notification, settlement


def _covariates(config, size, rng):
    z = (math.log(size) - config.claim_size.meanlog) / config.claim_size.sdlog
    u = rng.standard_normal(3)
    q = 0.5 * (1.0 + math.erf((0.8 * z + 0.6 * u[0]) / math.sqrt(2.0)))
    severity = min(N_SEVERITY, 1 + int(q * N_SEVERITY))
    age_band = int(np.clip(round(3.5 + 0.3 * z + 1.8 * u[1]), 0, N_AGE_BANDS - 1))
    legal_rep = int(u[2] < -0.6 + 0.9 * z)
    return severity, age_band, legal_rep


def simulate_payments(claim: ClaimRecord, config: SimulationConfig, rng, base_size=None, n_payments=None):
    """Payment events for ``claim``; amounts sum to the claim's nominal ultimate.

    ``base_size`` defaults to ``claim.ultimate_size``. With zero inflation the
    nominal ultimate equals ``base_size``. Returns ``(events, ultimate)``.
    """
    base = claim.ultimate_size if base_size is None else base_size
    spec = config.payment_count
    lam = max(0.0, spec.base + spec.size_slope * math.log(base / spec.size_ref))
    drawn = 1 + int(rng.poisson(lam))
    n = drawn if n_payments is None else n_payments
    t1, t2 = claim.notification_time, claim.settlement_time
    inner = np.sort(t1 + (t2 - t1) * rng.random(n - 1)) if n > 1 else np.empty(0)
    inner = np.where(inner <= t1, np.nextafter(t1, t2), inner)
    times = np.append(inner, t2)
    shares = rng.dirichlet(np.full(n, 2.0)) if n > 1 else np.ones(1)

    cal_rate, occ_rate = config.inflation.rates_for(base)
    occ_factor = (1.0 + occ_rate) ** claim.occurrence_time
    raw = base * shares * occ_factor * (1.0 + cal_rate) ** times
    target = round(float(raw.sum()), 2) if (cal_rate or occ_rate) else base
    amounts = [round(float(a), 2) for a in raw[:-1]]
    amounts.append(round(target - math.fsum(amounts), 2))
    # the final payment absorbs the rounding residue; keep it positive
    if amounts[-1] <= 0:
        amounts = [round(target / n, 2)] * (n - 1)
        amounts.append(round(target - math.fsum(amounts), 2))
    ultimate = math.fsum(amounts)
    events = [
        TransactionEvent(claim.claim_id, float(t), PAYMENT, a, 0.0) for t, a in zip(times, amounts)
    ]
    return events, ultimate


def simulate_revisions(claim: ClaimRecord, payments, config: SimulationConfig, rng, n_revisions=None):
    """Case-estimate history merged with ``payments``.

    The log error of the estimate starts at the initial multiplicative error
    and is pulled linearly toward zero over the remaining revisions, reaching
    the ultimate exactly at the last one. The estimate never falls below the
    paid-to-date total, and the settlement payment sets it to the ultimate.
    The initial estimate is recorded as a major revision at notification.
    Returns the full ordered event list.
    """
    spec = config.revisions
    t1, t2 = claim.notification_time, claim.settlement_time
    ultimate = claim.ultimate_size
    eps0 = config.initial_estimate_error.meanlog + config.initial_estimate_error.sdlog * rng.standard_normal()

    if n_revisions is None:
        n_major = int(rng.poisson(spec.major_count))
        n_minor = int(rng.poisson(spec.minor_rate * (t2 - t1)))
    else:
        n_major, n_minor = n_revisions
    k = n_major + n_minor
    times = t1 + (t2 - t1) * rng.random(k)
    times = np.where(times <= t1, np.nextafter(t1, t2), times)
    kinds = np.array([MAJOR] * n_major + [MINOR] * n_minor, dtype=object)
    # some minor revisions land on a non-final payment
    pay_times = [p.time for p in payments[:-1]]
    snap = rng.random(k) < spec.concurrent_prob
    picks = rng.integers(0, max(1, len(pay_times)), size=k)
    if pay_times:
        for j in range(n_major, k):
            if snap[j]:
                times[j] = pay_times[picks[j]]
    order = np.argsort(times, kind="stable")
    times, kinds = times[order], kinds[order]
    shocks = rng.standard_normal(k)

    eps = eps0
    levels = []
    for j in range(k):
        remaining = k - (j + 1)
        sd = spec.major_sd if kinds[j] == MAJOR else spec.minor_sd
        eps = eps * remaining / (remaining + 1) + shocks[j] * sd * remaining / k
        levels.append(ultimate * math.exp(eps) if remaining else ultimate)

    # notification first, then payments before revisions at equal times
    tagged = [(t1, 0, MAJOR, ultimate * math.exp(eps0))]
    tagged += [(p.time, 1, PAYMENT, p.payment_amount) for p in payments]
    tagged += [(float(t), 2, kd, lvl) for t, kd, lvl in zip(times, kinds, levels)]
    tagged.sort(key=lambda r: (r[0], r[1]))

    events = []
    paid_so_far = []
    paid = 0.0
    ce = 0.0
    n_pay = len(payments)
    seen_pay = 0
    for t, rank, kind, value in tagged:
        if kind == PAYMENT:
            paid_so_far.append(value)
            paid = math.fsum(paid_so_far)
            seen_pay += 1
            if seen_pay == n_pay:
                ce = ultimate
            elif ce <= paid:
                ce = _reserve_floor(paid)
            events.append(TransactionEvent(claim.claim_id, t, PAYMENT, value, ce))
        else:
            ce = value if value == ultimate else max(round(value, 2), _reserve_floor(paid))
            events.append(TransactionEvent(claim.claim_id, t, kind, 0.0, ce))
    return events


def _reserve_floor(paid):
    # an open claim keeps a positive case reserve
    return round(paid * (1.0 + RESERVE_FLOOR), 2)


def simulate_claim(config: SimulationConfig, claim_id: int, accident_quarter: int):
    rng = claim_rng(config.seed, claim_id)
    occurrence, base, notification, settlement = simulate_claim_lifecycle(config, rng, accident_quarter)
    severity, age_band, legal_rep = _covariates(config, base, rng)
    claim = ClaimRecord(claim_id, occurrence, notification, settlement, base, severity, age_band, legal_rep)
    payments, ultimate = simulate_payments(claim, config, rng)
    claim.ultimate_size = ultimate
    claim.events = simulate_revisions(claim, payments, config, rng)
    return claim


def claim_counts(config: SimulationConfig):
    rng = np.random.default_rng(np.random.SeedSequence(config.seed, spawn_key=(_COUNT_STREAM,)))
    return rng.poisson(config.expected_claims_per_quarter, size=config.n_accident_quarters)


def simulate_portfolio(config: SimulationConfig) -> list[ClaimRecord]:
    """All claims for ``config``, ordered by claim id (which follows accident quarter)."""
    validate_config(config)
    claims = []
    claim_id = 0
    for aq, count in enumerate(claim_counts(config), start=1):
        for _ in range(int(count)):
            claims.append(simulate_claim(config, claim_id, aq))
            claim_id += 1
    return claims


# --------------------------------------------------------------------------
# serialisation
# --------------------------------------------------------------------------


def _fmt(x):
    return repr(float(x))


def transaction_rows(portfolio: Iterable[ClaimRecord]):
    for claim in sorted(portfolio, key=lambda c: c.claim_id):
        head = [
            str(claim.claim_id),
            _fmt(claim.occurrence_time),
            _fmt(claim.notification_time),
            _fmt(claim.settlement_time),
            str(claim.severity),
            str(claim.age_band),
            str(claim.legal_rep),
        ]
        for e in claim.events:
            yield head + [_fmt(e.time), e.kind, _fmt(e.payment_amount), _fmt(e.case_estimate_after)]


def write_transactions(portfolio, path):
    """Write one CSV row per transaction, ordered by (claim_id, time)."""
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        writer.writerows(transaction_rows(portfolio))
    return path
