from .checkpoint import load_checkpoint, save_checkpoint
from .model import Batch, ModelSpec, Network, build_network, make_batch, pad_sequences
from .ops import (
    batch_norm_forward,
    dense_forward,
    dropout_forward,
    embedding_lookup,
    layer_norm_forward,
    lstm_cell_forward,
    mse_loss,
    rnn_cell_forward,
)
from .optim import AdamWState, adamw_step
from .training import TrainingConfig, TrainingResult, predict, train_model

__all__ = [
    "AdamWState",
    "Batch",
    "ModelSpec",
    "Network",
    "TrainingConfig",
    "TrainingResult",
    "adamw_step",
    "batch_norm_forward",
    "build_network",
    "dense_forward",
    "dropout_forward",
    "embedding_lookup",
    "layer_norm_forward",
    "load_checkpoint",
    "lstm_cell_forward",
    "make_batch",
    "mse_loss",
    "pad_sequences",
    "predict",
    "rnn_cell_forward",
    "save_checkpoint",
    "train_model",
]
