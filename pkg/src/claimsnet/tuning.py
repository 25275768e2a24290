"""Grid search over architecture and optimiser settings, selected on validation loss."""

from __future__ import annotations

import csv
import itertools
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

from .errors import TuningError
from .features import check_variant, is_recurrent
from .nn.model import ModelSpec
from .nn.training import TrainingConfig, train_model

log = logging.getLogger(__name__)

LEADERBOARD_COLUMNS = ["index", "layers", "units", "learning_rate", "batch_size", "seed", "best_epoch",
                       "stopped_epoch", "best_val_loss", "error"]


@dataclass(frozen=True)
class GridSpace:
    """Candidate values per model family; everything else is held fixed."""

    lstm_layers: tuple = (2, 3)
    lstm_units: tuple = (8, 16)
    lstm_learning_rate: tuple = (0.001, 0.01)
    lstm_batch_size: tuple = (256, 512)
    fnn_layers: tuple = (2, 3, 4)
    fnn_units: tuple = (16, 32)
    fnn_learning_rate: tuple = (0.001, 0.01)
    fnn_batch_size: tuple = (512, 1024)
    lstm_dense_layers: int = 2
    max_epochs: int = 200
    patience: int = 5
    dropout_rate: float = 0.0
    weight_decay: float = 0.01

    def lists(self, variant):
        prefix = "lstm" if is_recurrent(variant) else "fnn"
        return tuple(getattr(self, f"{prefix}_{k}") for k in ("layers", "units", "learning_rate", "batch_size"))

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})

    def to_dict(self):
        return {k: list(v) if isinstance(v, tuple) else v for k, v in self.__dict__.items()}


@dataclass(frozen=True)
class GridPoint:
    index: int
    layers: int
    units: int
    learning_rate: float
    batch_size: int
    spec: ModelSpec
    config: TrainingConfig


def make_spec(variant, layers, units, space: GridSpace | None = None):
    space = space or GridSpace()
    if is_recurrent(variant):
        return ModelSpec(variant, n_recurrent_layers=layers, n_dense_layers=space.lstm_dense_layers, units=units,
                         dropout_rate=space.dropout_rate)
    return ModelSpec(variant, n_recurrent_layers=0, n_dense_layers=layers, units=units,
                     dropout_rate=space.dropout_rate)


def enumerate_grid(space: GridSpace, variant, seed=0):
    """Cartesian product in (layers, units, learning rate, batch size) order."""
    check_variant(variant)
    points = []
    for k, (layers, units, lr, bs) in enumerate(itertools.product(*space.lists(variant))):
        config = TrainingConfig(learning_rate=lr, max_epochs=space.max_epochs, patience=space.patience,
                                batch_size=bs, seed=seed, weight_decay=space.weight_decay)
        points.append(GridPoint(k, layers, units, lr, bs, make_spec(variant, layers, units, space), config))
    return points


def _run_point(args):
    point, seed, train, validation = args
    config = replace(point.config, seed=seed)
    row = {"index": point.index, "layers": point.layers, "units": point.units,
           "learning_rate": point.learning_rate, "batch_size": point.batch_size, "seed": seed}
    try:
        result = train_model(point.spec, train, validation, config)
    except Exception as exc:  # a failed cell is recorded and skipped
        log.warning("grid point %d failed: %s", point.index, exc)
        return {**row, "best_epoch": 0, "stopped_epoch": 0, "best_val_loss": math.inf, "error": repr(exc)}
    return {**row, "best_epoch": result.best_epoch, "stopped_epoch": result.stopped_epoch,
            "best_val_loss": result.best_val_loss, "error": ""}


@dataclass
class TuningOutcome:
    best: GridPoint
    leaderboard: list[dict] = field(default_factory=list)


def tune(space: GridSpace, variant, train, validation, seed=0, seeds=None, workers=1) -> TuningOutcome:
    """Train every grid point once per seed and pick the lowest mean best-validation loss.

    Ties resolve to the earlier grid point. Failed points are skipped; if all fail a
    ``TuningError`` is raised.
    """
    points = enumerate_grid(space, variant, seed)
    seeds = [seed] if seeds is None else list(seeds)
    jobs = [(p, s, train, validation) for p in points for s in seeds]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_run_point, jobs))
    else:
        rows = [_run_point(j) for j in jobs]
    rows.sort(key=lambda r: (r["index"], r["seed"]))

    scores = {}
    for p in points:
        losses = [r["best_val_loss"] for r in rows if r["index"] == p.index and not r["error"]]
        if len(losses) == len(seeds) and all(math.isfinite(v) for v in losses):
            scores[p.index] = sum(losses) / len(losses)
    if not scores:
        raise TuningError(f"every grid point failed for {variant}")
    best_index = min(scores, key=lambda k: (scores[k], k))
    return TuningOutcome(points[best_index], rows)


def write_leaderboard(rows, path):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=LEADERBOARD_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for r in rows:
            writer.writerow({k: r.get(k, "") for k in LEADERBOARD_COLUMNS})
