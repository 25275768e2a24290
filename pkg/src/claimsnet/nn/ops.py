"""Forward maps for single layers and cells, operating on plain arrays.

Batched inputs are row-major: ``z`` has shape ``(n, d_in)`` (or ``(d_in,)``)
and weight matrices are ``(d_out, d_in)``, so a dense layer computes
``z @ W.T + b``.
"""

from __future__ import annotations

import numpy as np

from ..errors import ConfigurationError, ShapeError

LSTM_GATES = ("f", "i", "g", "o")
LSTM_PARAM_NAMES = tuple(f"W_h{g}" for g in LSTM_GATES) + tuple(f"W_x{g}" for g in LSTM_GATES) + tuple(
    f"b_{g}" for g in LSTM_GATES
)


def sigmoid(x):
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def relu(x):
    return np.maximum(x, 0.0)


def linear(x):
    return x


ACTIVATIONS = {"relu": relu, "tanh": np.tanh, "sigmoid": sigmoid, "linear": linear}


def _activation(activation):
    if callable(activation):
        return activation
    try:
        return ACTIVATIONS[activation]
    except KeyError:
        raise ConfigurationError(f"unknown activation {activation!r}", "activation") from None


def _check_matmul(z, W, what):
    if np.ndim(W) != 2 or np.shape(z)[-1] != np.shape(W)[1]:
        raise ShapeError(f"{what}: input dim {np.shape(z)[-1]} does not match weight shape {np.shape(W)}")


def dense_forward(z, W, b, activation="linear"):
    """``activation(W z + b)``."""
    z = np.asarray(z, dtype=float)
    _check_matmul(z, W, "dense")
    if np.shape(b) != (np.shape(W)[0],):
        raise ShapeError(f"dense: bias shape {np.shape(b)} does not match weight rows {np.shape(W)[0]}")
    return _activation(activation)(z @ np.asarray(W).T + b)


def rnn_cell_forward(h_prev, x_t, W_hh, W_xh, b, activation="tanh"):
    """``activation(W_hh h_prev + W_xh x_t + b)``."""
    _check_matmul(h_prev, W_hh, "rnn hidden")
    _check_matmul(x_t, W_xh, "rnn input")
    if np.shape(W_hh)[0] != np.shape(W_xh)[0] or np.shape(b) != (np.shape(W_hh)[0],):
        raise ShapeError("rnn: inconsistent output dimensions")
    return _activation(activation)(np.asarray(h_prev) @ W_hh.T + np.asarray(x_t) @ W_xh.T + b)


def lstm_cell_forward(h_prev, c_prev, x_t, params):
    """One LSTM step. ``params`` maps ``W_hf, W_xf, b_f, ...`` for gates f, i, g, o.

    Returns ``(h_t, c_t)``.
    """
    missing = [k for k in LSTM_PARAM_NAMES if k not in params]
    if missing:
        raise ShapeError(f"lstm: missing parameters {missing}")
    if np.shape(h_prev) != np.shape(c_prev):
        raise ShapeError("lstm: hidden and cell state shapes differ")

    def pre(g):
        _check_matmul(h_prev, params[f"W_h{g}"], f"lstm W_h{g}")
        _check_matmul(x_t, params[f"W_x{g}"], f"lstm W_x{g}")
        return h_prev @ params[f"W_h{g}"].T + x_t @ params[f"W_x{g}"].T + params[f"b_{g}"]

    f = sigmoid(pre("f"))
    i = sigmoid(pre("i"))
    g = np.tanh(pre("g"))
    o = sigmoid(pre("o"))
    c_t = f * c_prev + i * g
    h_t = o * np.tanh(c_t)
    return h_t, c_t


def embedding_lookup(index, table):
    """Row ``index`` of ``table``; out-of-range indices read the reserved last row."""
    index = np.asarray(index)
    rows = table.shape[0]
    safe = np.where((index >= 0) & (index < rows - 1), index, rows - 1)
    return table[safe]


def batch_norm_forward(x, gamma, beta, running_mean, running_var, training, momentum=0.9, eps=1e-5):
    """Normalise each feature over the batch.

    In training mode returns ``(out, new_running_mean, new_running_var)`` with
    batch statistics; in eval mode the running statistics are used and
    returned unchanged.
    """
    x = np.asarray(x, dtype=float)
    if training:
        if x.shape[0] < 2:
            raise ConfigurationError("batch normalisation needs at least 2 rows in training", "batch_size")
        mu = x.mean(axis=0)
        var = x.var(axis=0)
        new_mean = momentum * running_mean + (1 - momentum) * mu
        new_var = momentum * running_var + (1 - momentum) * var
    else:
        mu, var = running_mean, running_var
        new_mean, new_var = running_mean, running_var
    out = gamma * (x - mu) / np.sqrt(var + eps) + beta
    return out, new_mean, new_var


def layer_norm_forward(h, gamma=None, beta=None, eps=1e-12):
    """Normalise over the last axis using the population standard deviation."""
    h = np.asarray(h, dtype=float)
    if h.shape[-1] < 2:
        raise ShapeError("layer normalisation needs at least 2 features")
    mu = h.mean(axis=-1, keepdims=True)
    var = h.var(axis=-1, keepdims=True)
    out = (h - mu) / np.sqrt(var + eps)
    if gamma is not None:
        out = out * gamma
    if beta is not None:
        out = out + beta
    return out


def dropout_forward(x, rate, training, rng):
    """Inverted dropout: zero each unit with probability ``rate``, rescale survivors."""
    if not 0 <= rate < 1:
        raise ConfigurationError("dropout rate must lie in [0, 1)", "dropout_rate")
    x = np.asarray(x, dtype=float)
    if not training or rate == 0:
        return x
    keep = rng.random(x.shape) >= rate
    return x * keep / (1.0 - rate)


def mse_loss(predictions, targets):
    p = np.asarray(predictions, dtype=float).ravel()
    t = np.asarray(targets, dtype=float).ravel()
    if p.shape != t.shape or p.size == 0:
        raise ShapeError(f"mse: prediction shape {p.shape} vs target shape {t.shape}")
    return float(np.mean((p - t) ** 2))
