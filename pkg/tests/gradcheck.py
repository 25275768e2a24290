"""Central finite-difference oracles shared by the nn tests and the acceptance suite."""

import numpy as np

from claimsnet.features import CATEGORY_SIZES
from claimsnet.nn.layers import BatchNorm, Dense, Embedding, LayerNorm, LSTMLayer, RNNLayer
from claimsnet.nn.model import Batch, ModelSpec, build_network

STEP = 1e-5
TOL = 1e-4
# below this magnitude both gradients count as zero
FLOOR = 1e-6


def rel_error(analytic, numeric):
    a = np.asarray(analytic, dtype=float)
    n = np.asarray(numeric, dtype=float)
    if a.size == 0:
        return 0.0
    return float(np.max(np.abs(a - n) / np.maximum(FLOOR, np.abs(a) + np.abs(n))))


def numeric_grad(loss, arr, h=STEP):
    g = np.zeros_like(arr)
    for ix in np.ndindex(arr.shape):
        old = arr[ix]
        arr[ix] = old + h
        up = loss()
        arr[ix] = old - h
        down = loss()
        arr[ix] = old
        g[ix] = (up - down) / (2 * h)
    return g


def check_layer(layer, run, x, rng, check_input=True):
    """Worst relative error over parameters (and the input) for ``loss = sum(run(x) * R)``."""
    R = rng.normal(size=run(x).shape)
    run(x)
    dx = layer.backward(R)
    analytic = {k: v.copy() for k, v in layer.grads.items()}

    def loss():
        return float(np.sum(run(x) * R))

    worst = max(rel_error(analytic[k], numeric_grad(loss, p)) for k, p in layer.params.items())
    if check_input and dx is not None:
        worst = max(worst, rel_error(dx, numeric_grad(loss, x)))
    return worst


def layer_cases(kind, rng):
    """One random instance of ``kind``: returns (layer, run, x, check_input)."""
    n = int(rng.integers(3, 6))
    if kind == "dense":
        layer = Dense(3, 4, rng)
        return layer, lambda x: layer.forward(x, True), rng.normal(size=(n, 3)), True
    if kind == "rnn":
        layer = RNNLayer(3, 4, rng)
        lengths = rng.integers(1, 6, size=n)
        lengths[0] = 5
        layer.params["b"] = rng.normal(size=4) * 0.3
        return layer, lambda x: layer.forward(x, lengths, True), rng.normal(size=(n, 5, 3)), True
    if kind == "lstm":
        layer = LSTMLayer(3, 4, rng)
        lengths = rng.integers(1, 6, size=n)
        lengths[0] = 5
        for g in "figo":
            layer.params[f"b_{g}"] = rng.normal(size=4) * 0.3
        return layer, lambda x: layer.forward(x, lengths, True), rng.normal(size=(n, 5, 3)), True
    if kind == "embedding":
        layer = Embedding(CATEGORY_SIZES["severity"], 2, rng)
        idx = rng.integers(0, CATEGORY_SIZES["severity"] + 2, size=n)
        return layer, lambda _: layer.forward(idx, True), idx, False
    if kind == "batch_norm":
        layer = BatchNorm(4)
        layer.params["gamma"] = rng.normal(size=4)
        layer.params["beta"] = rng.normal(size=4)
        return layer, lambda x: layer.forward(x, True), rng.normal(size=(n, 4)) * 2 + 1, True
    if kind == "layer_norm":
        layer = LayerNorm(4)
        layer.params["gamma"] = rng.normal(size=4)
        layer.params["beta"] = rng.normal(size=4)
        return layer, lambda x: layer.forward(x, True), rng.normal(size=(n, 3, 4)) * 2 + 1, True
    raise ValueError(kind)


LAYER_KINDS = ("dense", "rnn", "lstm", "embedding", "batch_norm", "layer_norm")


def random_batch(rng, n, n_static, n_channels=0, max_len=4):
    seqs = lengths = None
    if n_channels:
        lengths = rng.integers(1, max_len + 1, size=n)
        T = int(lengths.max())
        seqs = np.zeros((n, T, n_channels))
        for k, L in enumerate(lengths):
            seqs[k, :L] = rng.normal(size=(L, n_channels))
    cats = np.stack([rng.integers(0, 7, n), rng.integers(0, 10, n)], axis=1)
    return Batch(rng.normal(size=(n, n_static)), cats, seqs, lengths, rng.normal(size=n))


def check_model(spec: ModelSpec, n_static, n_channels, rng, n=4, seed=0):
    net = build_network(spec, n_static, n_channels, seed=seed)
    batch = random_batch(rng, n, n_static, n_channels)
    _, grads = net.loss_and_grads(batch, training=True)
    grads = {k: v.copy() for k, v in grads.items()}

    def loss():
        return float(np.mean((net.forward(batch, training=True) - batch.target) ** 2))

    return max(rel_error(grads[k], numeric_grad(loss, p)) for k, p in net.params().items())
