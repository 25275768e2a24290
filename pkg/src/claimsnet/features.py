"""Model inputs: transaction sequences, static vectors, and the normalised log target.

Currency-valued inputs enter on a ``log1p`` scale before z-scoring; all
statistics are fitted on training observations only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dataset import Observation
from .errors import ConfigurationError
from .simulator import N_AGE_BANDS, N_SEVERITY, PAYMENT

VARIANTS = ("FNN", "FNN+", "LSTM", "LSTM+")
SD_FLOOR = 1e-12

# embedding vocabularies; the last row of each table is the reserved unknown slot
CATEGORY_SIZES = {"severity": N_SEVERITY, "age": N_AGE_BANDS}


def check_variant(variant):
    if variant not in VARIANTS:
        raise ConfigurationError(f"unknown variant {variant!r}; expected one of {VARIANTS}", "variant")
    return variant


def is_recurrent(variant):
    return check_variant(variant).startswith("LSTM")


def uses_case_estimates(variant):
    return check_variant(variant).endswith("+")


# --------------------------------------------------------------------------
# summaries
# --------------------------------------------------------------------------


def payment_summaries(amounts):
    """(count, mean, coefficient of variation, max) of payments to date.

    cv uses the sample (n - 1) standard deviation; fewer than two payments give cv = 0.
    """
    n = len(amounts)
    if n == 0:
        return 0, 0.0, 0.0, 0.0
    a = np.asarray(amounts, dtype=float)
    mean = float(a.mean())
    cv = float(a.std(ddof=1) / mean) if n > 1 and mean > 0 else 0.0
    return n, mean, cv, float(a.max())


def case_estimate_summaries(path):
    """(n_revisions, largest |revision|, total |revision|, share upward) over a case-estimate path.

    Revisions are the nonzero consecutive differences of ``path``.
    """
    if len(path) == 0:
        raise ConfigurationError("path must contain the initial estimate", "path")
    diffs = np.diff(np.asarray(path, dtype=float))
    diffs = diffs[diffs != 0]
    if diffs.size == 0:
        return 0, 0.0, 0.0, 0.0
    absd = np.abs(diffs)
    return int(diffs.size), float(absd.max()), float(absd.sum()), float(np.mean(diffs > 0))


# --------------------------------------------------------------------------
# per-observation features
# --------------------------------------------------------------------------


@dataclass
class SequenceFeatures:
    steps: np.ndarray  # (T, channels)
    channels: tuple[str, ...]

    @property
    def length(self):
        return self.steps.shape[0]


@dataclass
class StaticFeatures:
    continuous: dict[str, float]
    legal_rep: int
    severity_index: int
    age_index: int


def sequence_channels(variant):
    base = ("cal_time", "dev_time", "cum_paid")
    return base + ("case_estimate",) if uses_case_estimates(variant) else base


def build_sequence(obs: Observation, variant="LSTM+", stats: NormalisationStats | None = None) -> SequenceFeatures:
    """One step per transaction up to the prediction quarter.

    Currency channels are log1p-transformed; with ``stats`` each channel is
    standardised.
    """
    history = obs.history
    t_notify = obs.claim.notification_time
    with_ce = uses_case_estimates(variant)
    rows = []
    paid = 0.0
    for e in history:
        if e.kind == PAYMENT:
            paid = math.fsum((paid, e.payment_amount))
        row = [e.time, e.time - t_notify, math.log1p(paid)]
        if with_ce:
            row.append(math.log1p(e.case_estimate_after))
        rows.append(row)
    steps = np.asarray(rows, dtype=float).reshape(len(rows), 4 if with_ce else 3)
    if stats is not None:
        steps = (steps - stats.seq_mean) / stats.seq_sd
    return SequenceFeatures(steps, sequence_channels(variant))


def static_names(variant, include_current_ce=False):
    names = ["prediction_quarter", "accident_quarter"]
    if not is_recurrent(variant):
        names += ["development_quarter", "n_payments", "mean_payment", "cv_payment", "max_payment"]
        if uses_case_estimates(variant):
            names += ["n_revisions", "largest_abs_revision", "total_abs_revisions", "prop_upward"]
            if include_current_ce:
                names.append("current_case_estimate")
    return names


def category_index(value, size, offset=0):
    idx = int(value) - offset
    return idx if 0 <= idx < size else size


def encode_static(obs: Observation, variant, include_current_ce=False) -> StaticFeatures:
    """Static inputs for ``variant``; currency summaries are log1p-scaled, not yet standardised."""
    check_variant(variant)
    cont = {
        "prediction_quarter": float(obs.prediction_quarter),
        "accident_quarter": float(obs.accident_quarter),
    }
    if not is_recurrent(variant):
        history = obs.history
        n, mean, cv, mx = payment_summaries([e.payment_amount for e in history if e.kind == PAYMENT])
        cont.update(
            development_quarter=float(obs.quarters_since_notification),
            n_payments=float(n),
            mean_payment=math.log1p(mean),
            cv_payment=cv,
            max_payment=math.log1p(mx),
        )
        if uses_case_estimates(variant):
            # incurred is zero before notification, so the initial estimate counts as a revision
            nr, largest, total, up = case_estimate_summaries([0.0] + [e.case_estimate_after for e in history])
            cont.update(
                n_revisions=float(nr),
                largest_abs_revision=math.log1p(largest),
                total_abs_revisions=math.log1p(total),
                prop_upward=up,
            )
            if include_current_ce:
                cont["current_case_estimate"] = math.log1p(obs.case_estimate_now)
    claim = obs.claim
    return StaticFeatures(
        cont,
        int(claim.legal_rep),
        category_index(claim.severity, CATEGORY_SIZES["severity"], offset=1),
        category_index(claim.age_band, CATEGORY_SIZES["age"]),
    )


# --------------------------------------------------------------------------
# normalisation and target
# --------------------------------------------------------------------------


@dataclass
class NormalisationStats:
    static_names: list[str]
    static_mean: np.ndarray
    static_sd: np.ndarray
    seq_channels: list[str]
    seq_mean: np.ndarray
    seq_sd: np.ndarray
    target_mean: float
    target_sd: float

    def to_dict(self):
        return {
            "static_names": list(self.static_names),
            "static_mean": self.static_mean.tolist(),
            "static_sd": self.static_sd.tolist(),
            "seq_channels": list(self.seq_channels),
            "seq_mean": self.seq_mean.tolist(),
            "seq_sd": self.seq_sd.tolist(),
            "target_mean": self.target_mean,
            "target_sd": self.target_sd,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            list(d["static_names"]),
            np.asarray(d["static_mean"], dtype=float),
            np.asarray(d["static_sd"], dtype=float),
            list(d["seq_channels"]),
            np.asarray(d["seq_mean"], dtype=float),
            np.asarray(d["seq_sd"], dtype=float),
            float(d["target_mean"]),
            float(d["target_sd"]),
        )


def fit_standardiser(x, axis=0):
    """Column means and population standard deviations; near-constant columns get sd 1."""
    x = np.asarray(x, dtype=float)
    mean = x.mean(axis=axis)
    sd = x.std(axis=axis)
    sd = np.where(sd < SD_FLOOR * np.maximum(1.0, np.abs(mean)), 1.0, sd)
    return mean, sd


def apply_normaliser(x, mean, sd):
    return (np.asarray(x, dtype=float) - mean) / sd


def invert_normaliser(z, mean, sd):
    return np.asarray(z, dtype=float) * sd + mean


def make_target(ultimate, stats: NormalisationStats):
    """Normalised log ultimate: ``(log(ultimate) - target_mean) / target_sd``."""
    u = np.asarray(ultimate, dtype=float)
    if np.any(u <= 0):
        raise ValueError("ultimate claim size must be positive")
    y = (np.log(u) - stats.target_mean) / stats.target_sd
    return float(y) if y.ndim == 0 else y


def target_to_log_dollars(y, stats: NormalisationStats):
    return np.asarray(y, dtype=float) * stats.target_sd + stats.target_mean


# --------------------------------------------------------------------------
# batched feature sets
# --------------------------------------------------------------------------


@dataclass
class FeatureSet:
    """Raw (unstandardised) inputs for a list of observations under one variant."""

    variant: str
    static_names: list[str]
    static: np.ndarray  # (n, d) continuous
    legal_rep: np.ndarray  # (n,)
    categorical: np.ndarray  # (n, 2) severity, age
    sequences: list[np.ndarray] | None
    log_ultimate: np.ndarray
    include_current_ce: bool = False
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return self.static.shape[0]

    def normalised(self, stats: NormalisationStats) -> ModelInputs:
        static = apply_normaliser(self.static, stats.static_mean, stats.static_sd)
        static = np.column_stack([static, self.legal_rep.astype(float)])
        seqs = None
        if self.sequences is not None:
            seqs = [apply_normaliser(s, stats.seq_mean, stats.seq_sd) for s in self.sequences]
        target = (self.log_ultimate - stats.target_mean) / stats.target_sd
        return ModelInputs(static, self.categorical, seqs, target)


@dataclass
class ModelInputs:
    """Standardised arrays ready for the network."""

    static: np.ndarray
    categorical: np.ndarray
    sequences: list[np.ndarray] | None
    target: np.ndarray

    def __len__(self):
        return self.static.shape[0]

    def subset(self, idx):
        seqs = None if self.sequences is None else [self.sequences[i] for i in idx]
        return ModelInputs(self.static[idx], self.categorical[idx], seqs, self.target[idx])


def build_feature_set(observations, variant, include_current_ce=False) -> FeatureSet:
    check_variant(variant)
    names = static_names(variant, include_current_ce)
    n = len(observations)
    static = np.zeros((n, len(names)))
    legal = np.zeros(n, dtype=int)
    cats = np.zeros((n, 2), dtype=int)
    seqs = [] if is_recurrent(variant) else None
    for i, obs in enumerate(observations):
        sf = encode_static(obs, variant, include_current_ce)
        static[i] = [sf.continuous[k] for k in names]
        legal[i] = sf.legal_rep
        cats[i] = (sf.severity_index, sf.age_index)
        if seqs is not None:
            seqs.append(build_sequence(obs, variant).steps)
    log_ult = np.log(np.array([o.target_ultimate for o in observations], dtype=float))
    meta = {
        "claim_id": np.array([o.claim_id for o in observations], dtype=int),
        "prediction_quarter": np.array([o.prediction_quarter for o in observations], dtype=int),
    }
    return FeatureSet(variant, names, static, legal, cats, seqs, log_ult, include_current_ce, meta)


def fit_normaliser(train: FeatureSet) -> NormalisationStats:
    """Fit every standardiser on the training feature set."""
    if len(train) == 0:
        raise ConfigurationError("training set is empty", "train")
    s_mean, s_sd = fit_standardiser(train.static)
    if train.sequences is not None:
        q_mean, q_sd = fit_standardiser(np.concatenate(train.sequences, axis=0))
        channels = list(sequence_channels(train.variant))
    else:
        q_mean, q_sd, channels = np.zeros(0), np.ones(0), []
    t_mean, t_sd = fit_standardiser(train.log_ultimate)
    return NormalisationStats(
        list(train.static_names), s_mean, s_sd, channels, q_mean, q_sd, float(t_mean), float(t_sd)
    )
