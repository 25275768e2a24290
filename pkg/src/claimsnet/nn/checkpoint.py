"""JSON checkpoints: spec, weights, running statistics, normalisation stats and seed."""

from __future__ import annotations

import json

import numpy as np

from ..features import NormalisationStats
from .model import ModelSpec, Network, build_network

CHECKPOINT_VERSION = 1


def checkpoint_dict(model: Network, stats: NormalisationStats | None = None, seed=0, extra=None):
    params, buffers = model.state()
    return {
        "version": CHECKPOINT_VERSION,
        "spec": model.spec.to_dict(),
        "n_static": model.n_static,
        "n_channels": model.n_channels,
        "seed": seed,
        "params": {k: {"shape": list(v.shape), "data": v.ravel().tolist()} for k, v in params.items()},
        "buffers": {k: {"shape": list(v.shape), "data": v.ravel().tolist()} for k, v in buffers.items()},
        "normalisation": None if stats is None else stats.to_dict(),
        "extra": extra or {},
    }


def save_checkpoint(path, model, stats=None, seed=0, extra=None):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(checkpoint_dict(model, stats, seed, extra), fh, indent=1, sort_keys=True)


def _array(entry):
    return np.asarray(entry["data"], dtype=float).reshape(entry["shape"])


def load_checkpoint(path):
    """Returns ``(model, stats, document)``."""
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {doc.get('version')!r}")
    spec = ModelSpec.from_dict(doc["spec"])
    model = build_network(spec, doc["n_static"], doc["n_channels"], seed=doc["seed"])
    model.load_state(
        ({k: _array(v) for k, v in doc["params"].items()}, {k: _array(v) for k, v in doc["buffers"].items()})
    )
    stats = None if doc["normalisation"] is None else NormalisationStats.from_dict(doc["normalisation"])
    return model, stats, doc
