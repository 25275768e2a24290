"""Mini-batch training with early stopping, and eval-mode prediction."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from ..errors import ConfigurationError
from ..features import ModelInputs
from .model import ModelSpec, Network, build_network, make_batch
from .optim import AdamWState, adamw_step

log = logging.getLogger(__name__)

PREDICT_BATCH = 2048
BUCKET_FACTOR = 8


@dataclass(frozen=True)
class TrainingConfig:
    learning_rate: float = 0.01
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.01
    max_epochs: int = 200
    patience: int = 5
    batch_size: int = 512
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigurationError("must be > 0", "learning_rate")
        if self.patience < 1:
            raise ConfigurationError("must be >= 1", "patience")
        if self.max_epochs < 1:
            raise ConfigurationError("must be >= 1", "max_epochs")
        if self.batch_size < 2:
            raise ConfigurationError("must be >= 2", "batch_size")

    def to_dict(self):
        d = asdict(self)
        d["betas"] = list(self.betas)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "betas" in d:
            d["betas"] = tuple(d["betas"])
        return cls(**d)


@dataclass
class TrainingResult:
    model: Network
    train_losses: list[float] = field(default_factory=list)
    val_losses: list[float] = field(default_factory=list)
    best_epoch: int = 0
    stopped_epoch: int = 0

    @property
    def best_val_loss(self):
        if not self.val_losses:
            return float("nan")
        return self.val_losses[self.best_epoch - 1]


def _batches(n, batch_size, rng, lengths=None):
    """Shuffled index batches; with ``lengths``, neighbours in a bucket share similar lengths.

    A trailing batch of one row is folded into the previous batch.
    """
    perm = rng.permutation(n)
    if lengths is not None:
        chunk = batch_size * BUCKET_FACTOR
        parts = []
        for s in range(0, n, chunk):
            block = perm[s : s + chunk]
            parts.append(block[np.argsort(lengths[block], kind="stable")])
        perm = np.concatenate(parts)
    batches = [perm[s : s + batch_size] for s in range(0, n, batch_size)]
    if len(batches) > 1 and len(batches[-1]) == 1:
        last = batches.pop()
        batches[-1] = np.concatenate([batches[-1], last])
    if lengths is not None:
        batches = [batches[i] for i in rng.permutation(len(batches))]
    return batches


def predict(model: Network, inputs: ModelInputs, batch_size=PREDICT_BATCH):
    """Eval-mode predictions on the normalised log scale, one per row of ``inputs``."""
    n = len(inputs)
    out = np.empty(n)
    if inputs.sequences is not None:
        order = np.argsort([s.shape[0] for s in inputs.sequences], kind="stable")
    else:
        order = np.arange(n)
    for s in range(0, n, batch_size):
        idx = order[s : s + batch_size]
        out[idx] = model.predict_batch(make_batch(inputs, idx))
    return out


def evaluate_loss(model, inputs: ModelInputs):
    return float(np.mean((predict(model, inputs) - inputs.target) ** 2))


def train_model(spec: ModelSpec, train: ModelInputs, validation: ModelInputs | None, config: TrainingConfig,
                model: Network | None = None) -> TrainingResult:
    """Fit ``spec`` with AdamW on mean squared error.

    Stops once validation loss has not improved for ``config.patience``
    epochs and restores the best weights. Without a validation set the model
    trains for ``max_epochs`` and keeps its final weights.
    """
    if len(train) == 0:
        raise ConfigurationError("training set is empty", "train")
    if len(train) < 2 and spec.batch_norm and spec.n_dense_layers > 1:
        raise ConfigurationError("batch normalisation needs at least 2 training rows", "train")
    n_channels = train.sequences[0].shape[1] if train.sequences is not None else 0
    if model is None:
        model = build_network(spec, train.static.shape[1], n_channels, seed=config.seed)
    shuffle_rng = np.random.default_rng(np.random.SeedSequence(config.seed, spawn_key=(23,)))
    lengths = np.array([s.shape[0] for s in train.sequences]) if train.sequences is not None else None
    opt = AdamWState()
    params = model.params()
    result = TrainingResult(model)
    best = np.inf
    best_state = model.state()
    since_best = 0

    for epoch in range(1, config.max_epochs + 1):
        total = 0.0
        for idx in _batches(len(train), config.batch_size, shuffle_rng, lengths):
            loss, grads = model.loss_and_grads(make_batch(train, idx), training=True)
            adamw_step(params, grads, opt, config.learning_rate, config.betas, config.eps, config.weight_decay)
            total += loss * len(idx)
        result.train_losses.append(total / len(train))
        result.stopped_epoch = epoch
        if validation is None or len(validation) == 0:
            continue
        val = evaluate_loss(model, validation)
        result.val_losses.append(val)
        if val < best:
            best, since_best = val, 0
            best_state = model.state()
            result.best_epoch = epoch
        else:
            since_best += 1
            if since_best >= config.patience:
                break
        log.debug("epoch %d train %.5f val %.5f", epoch, result.train_losses[-1], val)

    if result.val_losses:
        model.load_state(best_state)
    else:
        result.best_epoch = result.stopped_epoch
    return result
