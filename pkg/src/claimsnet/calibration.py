"""Smearing retransformation from log-dollar predictions to dollar-scale means."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError


@dataclass(frozen=True)
class SmearingFactor:
    b: float
    n_validation: int
    source: str = ""

    def to_dict(self):
        return {"b": self.b, "n_validation": self.n_validation, "source": self.source}


def fit_smearing_factor(y_log, yhat_log, source=""):
    """``b = mean(exp(y - yhat))`` over validation observations, both on the log-dollar scale."""
    y = np.asarray(y_log, dtype=float).ravel()
    yhat = np.asarray(yhat_log, dtype=float).ravel()
    if y.size == 0:
        raise ConfigurationError("no validation observations", "validation")
    if y.shape != yhat.shape:
        raise ConfigurationError(f"length mismatch {y.size} vs {yhat.size}", "validation")
    return SmearingFactor(float(np.mean(np.exp(y - yhat))), int(y.size), source)


def apply_correction(yhat_log, factor):
    """Dollar predictions ``exp(yhat) * b``."""
    b = factor.b if isinstance(factor, SmearingFactor) else float(factor)
    return np.exp(np.asarray(yhat_log, dtype=float)) * b


def fit_grouped_smearing(y_log, yhat_log, groups, source=""):
    """One factor per group key, for partition-specific corrections."""
    y = np.asarray(y_log, dtype=float)
    yhat = np.asarray(yhat_log, dtype=float)
    groups = np.asarray(groups)
    return {g: fit_smearing_factor(y[groups == g], yhat[groups == g], source) for g in np.unique(groups).tolist()}


def apply_grouped_correction(yhat_log, groups, factors, default=None):
    yhat = np.asarray(yhat_log, dtype=float)
    out = np.empty_like(yhat)
    for k, g in enumerate(np.asarray(groups).tolist()):
        f = factors.get(g, default)
        if f is None:
            raise ConfigurationError(f"no smearing factor for group {g!r}", "groups")
        out[k] = np.exp(yhat[k]) * f.b
    return out
