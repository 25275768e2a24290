"""Layers with cached forward passes and analytic backward passes.

Each layer owns ``params`` (trainable arrays) and fills ``grads`` with the
same keys on ``backward``. Gradients are of the scalar loss whose upstream
derivative is passed in, so they accumulate nothing across calls.
"""

from __future__ import annotations

import numpy as np

from ..errors import ConfigurationError
from .ops import LSTM_GATES, embedding_lookup, sigmoid


class Layer:
    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}


class Dense(Layer):
    def __init__(self, n_in, n_out, rng, gain=6.0):
        super().__init__()
        limit = np.sqrt(gain / n_in)
        self.params["W"] = rng.uniform(-limit, limit, size=(n_out, n_in))
        self.params["b"] = np.zeros(n_out)

    def forward(self, x, training=False):
        self._x = x
        return x @ self.params["W"].T + self.params["b"]

    def backward(self, dout):
        self.grads["W"] = dout.T @ self._x
        self.grads["b"] = dout.sum(axis=0)
        return dout @ self.params["W"]


class ReLU(Layer):
    def forward(self, x, training=False):
        self._mask = x > 0
        return x * self._mask

    def backward(self, dout):
        return dout * self._mask


class Dropout(Layer):
    def __init__(self, rate, rng):
        super().__init__()
        self.rate = rate
        self.rng = rng

    def forward(self, x, training=False):
        if not training or self.rate == 0:
            self._scale = None
            return x
        self._scale = (self.rng.random(x.shape) >= self.rate) / (1.0 - self.rate)
        return x * self._scale

    def backward(self, dout):
        return dout if self._scale is None else dout * self._scale


class BatchNorm(Layer):
    """Per-feature batch normalisation; running statistics move only in training mode."""

    def __init__(self, n_features, momentum=0.9, eps=1e-5):
        super().__init__()
        self.momentum = momentum
        self.eps = eps
        self.params["gamma"] = np.ones(n_features)
        self.params["beta"] = np.zeros(n_features)
        self.buffers["running_mean"] = np.zeros(n_features)
        self.buffers["running_var"] = np.ones(n_features)

    def forward(self, x, training=False):
        if training:
            if x.shape[0] < 2:
                raise ConfigurationError("batch normalisation needs at least 2 rows in training", "batch_size")
            mu = x.mean(axis=0)
            var = x.var(axis=0)
            m = self.momentum
            self.buffers["running_mean"] = m * self.buffers["running_mean"] + (1 - m) * mu
            self.buffers["running_var"] = m * self.buffers["running_var"] + (1 - m) * var
        else:
            mu = self.buffers["running_mean"]
            var = self.buffers["running_var"]
        self._training = training
        self._inv_std = 1.0 / np.sqrt(var + self.eps)
        self._xhat = (x - mu) * self._inv_std
        return self.params["gamma"] * self._xhat + self.params["beta"]

    def backward(self, dout):
        xhat = self._xhat
        self.grads["gamma"] = (dout * xhat).sum(axis=0)
        self.grads["beta"] = dout.sum(axis=0)
        dxhat = dout * self.params["gamma"]
        if not self._training:
            return dxhat * self._inv_std
        n = dout.shape[0]
        return (self._inv_std / n) * (n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))


class LayerNorm(Layer):
    """Normalisation over the last axis, per sample and per time step."""

    def __init__(self, n_features, eps=1e-5):
        super().__init__()
        self.eps = eps
        self.params["gamma"] = np.ones(n_features)
        self.params["beta"] = np.zeros(n_features)

    def forward(self, x, training=False):
        mu = x.mean(axis=-1, keepdims=True)
        var = x.var(axis=-1, keepdims=True)
        self._inv_std = 1.0 / np.sqrt(var + self.eps)
        self._xhat = (x - mu) * self._inv_std
        return self.params["gamma"] * self._xhat + self.params["beta"]

    def backward(self, dout):
        xhat = self._xhat
        lead = tuple(range(dout.ndim - 1))
        self.grads["gamma"] = (dout * xhat).sum(axis=lead)
        self.grads["beta"] = dout.sum(axis=lead)
        dxhat = dout * self.params["gamma"]
        d = dout.shape[-1]
        return (self._inv_std / d) * (
            d * dxhat - dxhat.sum(axis=-1, keepdims=True) - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True)
        )


class Embedding(Layer):
    """Lookup table with one extra reserved row for unseen categories."""

    def __init__(self, n_categories, dim, rng):
        super().__init__()
        self.params["table"] = rng.uniform(-0.05, 0.05, size=(n_categories + 1, dim))

    def forward(self, idx, training=False):
        table = self.params["table"]
        self._idx = np.where((idx >= 0) & (idx < table.shape[0] - 1), idx, table.shape[0] - 1)
        return embedding_lookup(self._idx, table)

    def backward(self, dout):
        g = np.zeros_like(self.params["table"])
        np.add.at(g, self._idx, dout)
        self.grads["table"] = g
        return None


def _step_mask(lengths, T):
    return (np.arange(T)[None, :] < np.asarray(lengths)[:, None]).astype(float)


class LSTMLayer(Layer):
    """LSTM over a padded batch ``(n, T, d)``.

    Steps at or beyond a sequence's length leave its state frozen, so the
    output at ``T - 1`` is the state after the true last step and padding
    contributes no gradient.
    """

    def __init__(self, n_in, n_units, rng, forget_bias=1.0):
        super().__init__()
        limit = 1.0 / np.sqrt(n_units)
        for g in LSTM_GATES:
            self.params[f"W_h{g}"] = rng.uniform(-limit, limit, size=(n_units, n_units))
            self.params[f"W_x{g}"] = rng.uniform(-limit, limit, size=(n_units, n_in))
        for g in LSTM_GATES:
            self.params[f"b_{g}"] = np.full(n_units, forget_bias if g == "f" else 0.0)
        self.n_units = n_units

    def _stacked(self):
        p = self.params
        Wh = np.concatenate([p[f"W_h{g}"] for g in LSTM_GATES], axis=0)
        Wx = np.concatenate([p[f"W_x{g}"] for g in LSTM_GATES], axis=0)
        b = np.concatenate([p[f"b_{g}"] for g in LSTM_GATES])
        return Wh, Wx, b

    def forward(self, x, lengths, training=False):
        n, T, _ = x.shape
        p = self.n_units
        Wh, Wx, b = self._stacked()
        mask = _step_mask(lengths, T)
        xw = x @ Wx.T + b
        h = np.zeros((n, p))
        c = np.zeros((n, p))
        H = np.empty((n, T, p))
        cache = []
        for t in range(T):
            a = xw[:, t] + h @ Wh.T
            f = sigmoid(a[:, :p])
            i = sigmoid(a[:, p : 2 * p])
            g = np.tanh(a[:, 2 * p : 3 * p])
            o = sigmoid(a[:, 3 * p :])
            c_new = f * c + i * g
            tc = np.tanh(c_new)
            h_new = o * tc
            m = mask[:, t : t + 1]
            cache.append((h, c, f, i, g, o, tc, m))
            c = m * c_new + (1 - m) * c
            h = m * h_new + (1 - m) * h
            H[:, t] = h
        self._x, self._cache, self._Wh, self._Wx = x, cache, Wh, Wx
        return H

    def backward(self, dH):
        x, cache, Wh, Wx = self._x, self._cache, self._Wh, self._Wx
        n, T, _ = x.shape
        p = self.n_units
        dA = np.zeros((n, T, 4 * p))
        dWh = np.zeros_like(Wh)
        dh_next = np.zeros((n, p))
        dc_next = np.zeros((n, p))
        for t in reversed(range(T)):
            h_prev, c_prev, f, i, g, o, tc, m = cache[t]
            dh = dH[:, t] + dh_next
            dh_new = dh * m
            dc_new = dc_next * m + dh_new * o * (1 - tc**2)
            da = np.concatenate(
                [
                    dc_new * c_prev * f * (1 - f),
                    dc_new * g * i * (1 - i),
                    dc_new * i * (1 - g**2),
                    dh_new * tc * o * (1 - o),
                ],
                axis=1,
            )
            dA[:, t] = da
            dWh += da.T @ h_prev
            dh_next = da @ Wh + dh * (1 - m)
            dc_next = dc_new * f + dc_next * (1 - m)
        flat = dA.reshape(n * T, 4 * p)
        dWx = flat.T @ x.reshape(n * T, -1)
        db = flat.sum(axis=0)
        for k, gname in enumerate(LSTM_GATES):
            rows = slice(k * p, (k + 1) * p)
            self.grads[f"W_h{gname}"] = dWh[rows]
            self.grads[f"W_x{gname}"] = dWx[rows]
            self.grads[f"b_{gname}"] = db[rows]
        return dA @ Wx


class RNNLayer(Layer):
    """Vanilla tanh recurrent layer over a padded batch, with the same masking as ``LSTMLayer``."""

    def __init__(self, n_in, n_units, rng):
        super().__init__()
        limit = 1.0 / np.sqrt(n_units)
        self.params["W_hh"] = rng.uniform(-limit, limit, size=(n_units, n_units))
        self.params["W_xh"] = rng.uniform(-limit, limit, size=(n_units, n_in))
        self.params["b"] = np.zeros(n_units)
        self.n_units = n_units

    def forward(self, x, lengths, training=False):
        n, T, _ = x.shape
        W_hh, W_xh, b = self.params["W_hh"], self.params["W_xh"], self.params["b"]
        mask = _step_mask(lengths, T)
        xw = x @ W_xh.T + b
        h = np.zeros((n, self.n_units))
        H = np.empty((n, T, self.n_units))
        cache = []
        for t in range(T):
            h_new = np.tanh(xw[:, t] + h @ W_hh.T)
            m = mask[:, t : t + 1]
            cache.append((h, h_new, m))
            h = m * h_new + (1 - m) * h
            H[:, t] = h
        self._x, self._cache = x, cache
        return H

    def backward(self, dH):
        x, cache = self._x, self._cache
        n, T, _ = x.shape
        W_hh = self.params["W_hh"]
        dA = np.zeros((n, T, self.n_units))
        dW_hh = np.zeros_like(W_hh)
        dh_next = np.zeros((n, self.n_units))
        for t in reversed(range(T)):
            h_prev, h_new, m = cache[t]
            dh = dH[:, t] + dh_next
            da = dh * m * (1 - h_new**2)
            dA[:, t] = da
            dW_hh += da.T @ h_prev
            dh_next = da @ W_hh + dh * (1 - m)
        flat = dA.reshape(n * T, -1)
        self.grads["W_hh"] = dW_hh
        self.grads["W_xh"] = flat.T @ x.reshape(n * T, -1)
        self.grads["b"] = flat.sum(axis=0)
        return dA @ self.params["W_xh"]
