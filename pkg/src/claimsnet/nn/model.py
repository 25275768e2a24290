"""Network assembly for the FNN/FNN+ and LSTM/LSTM+ architectures."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from ..errors import ConfigurationError
from ..features import CATEGORY_SIZES, VARIANTS, is_recurrent
from .layers import BatchNorm, Dense, Dropout, Embedding, LayerNorm, LSTMLayer, ReLU, RNNLayer


@dataclass(frozen=True)
class ModelSpec:
    """Architecture description.

    For FNN variants ``n_dense_layers`` counts every dense layer including the
    linear output. For LSTM variants ``n_recurrent_layers`` recurrent layers
    feed a dense head of ``n_dense_layers`` layers that also receives the
    static inputs.
    """

    variant: str
    n_recurrent_layers: int = 0
    n_dense_layers: int = 2
    units: int = 16
    recurrent_cell: str = "lstm"
    embedding_dim: int = 2
    dropout_rate: float = 0.0
    batch_norm: bool = True
    layer_norm: bool = True
    norm_eps: float = 1e-5
    bn_momentum: float = 0.9

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigurationError(f"unknown variant {self.variant!r}", "variant")
        if self.n_dense_layers < 1:
            raise ConfigurationError("need at least one dense layer", "n_dense_layers")
        if is_recurrent(self.variant) and self.n_recurrent_layers < 1:
            raise ConfigurationError("recurrent variants need at least one recurrent layer", "n_recurrent_layers")
        if not is_recurrent(self.variant) and self.n_recurrent_layers != 0:
            raise ConfigurationError("feed-forward variants take no recurrent layers", "n_recurrent_layers")
        if self.recurrent_cell not in ("lstm", "vanilla_rnn"):
            raise ConfigurationError(f"unknown cell {self.recurrent_cell!r}", "recurrent_cell")
        if not 0 <= self.dropout_rate < 1:
            raise ConfigurationError("must lie in [0, 1)", "dropout_rate")

    @property
    def recurrent(self):
        return self.n_recurrent_layers > 0

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class Batch:
    static: np.ndarray
    categorical: np.ndarray
    sequences: np.ndarray | None = None  # (n, T, c), zero padded
    lengths: np.ndarray | None = None
    target: np.ndarray | None = None

    def __len__(self):
        return self.static.shape[0]


def pad_sequences(seqs):
    lengths = np.array([s.shape[0] for s in seqs], dtype=int)
    T = int(lengths.max()) if len(seqs) else 0
    c = seqs[0].shape[1] if len(seqs) else 0
    out = np.zeros((len(seqs), T, c))
    for k, s in enumerate(seqs):
        out[k, : s.shape[0]] = s
    return out, lengths


def make_batch(inputs, idx=None) -> Batch:
    sub = inputs if idx is None else inputs.subset(idx)
    seqs, lengths = (None, None)
    if sub.sequences is not None:
        seqs, lengths = pad_sequences(sub.sequences)
    return Batch(sub.static, sub.categorical, seqs, lengths, sub.target)


@dataclass
class Network:
    """Layer graph plus named access to parameters, gradients and buffers."""

    spec: ModelSpec
    n_static: int
    n_channels: int = 0
    seed: int = 0
    layers: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        init_rng = np.random.default_rng(np.random.SeedSequence(self.seed, spawn_key=(21,)))
        dropout_rng = np.random.default_rng(np.random.SeedSequence(self.seed, spawn_key=(22,)))
        spec = self.spec
        L = self.layers
        L["emb_severity"] = Embedding(CATEGORY_SIZES["severity"], spec.embedding_dim, init_rng)
        L["emb_age"] = Embedding(CATEGORY_SIZES["age"], spec.embedding_dim, init_rng)
        self.recurrent_names = []
        n_in = self.n_channels
        for r in range(spec.n_recurrent_layers):
            cell = LSTMLayer if spec.recurrent_cell == "lstm" else RNNLayer
            L[f"rec{r}"] = cell(n_in, spec.units, init_rng)
            names = [f"rec{r}"]
            if spec.layer_norm:
                L[f"ln{r}"] = LayerNorm(spec.units, eps=spec.norm_eps)
                names.append(f"ln{r}")
            self.recurrent_names.append(names)
            n_in = spec.units
        width = self.n_static + 2 * spec.embedding_dim + (spec.units if spec.recurrent else 0)
        self.dense_names = []
        for d in range(spec.n_dense_layers - 1):
            L[f"dense{d}"] = Dense(width, spec.units, init_rng)
            names = [f"dense{d}"]
            if spec.batch_norm:
                L[f"bn{d}"] = BatchNorm(spec.units, momentum=spec.bn_momentum, eps=spec.norm_eps)
                names.append(f"bn{d}")
            L[f"relu{d}"] = ReLU()
            names.append(f"relu{d}")
            if spec.dropout_rate > 0:
                L[f"drop{d}"] = Dropout(spec.dropout_rate, dropout_rng)
                names.append(f"drop{d}")
            self.dense_names.append(names)
            width = spec.units
        L["out"] = Dense(width, 1, init_rng, gain=3.0)

    # -- parameter access ---------------------------------------------------

    def named_params(self):
        for lname, layer in self.layers.items():
            for pname, arr in layer.params.items():
                yield f"{lname}.{pname}", arr

    def named_grads(self):
        for lname, layer in self.layers.items():
            for pname in layer.params:
                yield f"{lname}.{pname}", layer.grads[pname]

    def params(self):
        return dict(self.named_params())

    def grads(self):
        return dict(self.named_grads())

    def buffers(self):
        return {f"{l}.{b}": arr for l, layer in self.layers.items() for b, arr in layer.buffers.items()}

    def set_param(self, name, value):
        lname, pname = name.split(".", 1)
        self.layers[lname].params[pname] = value

    def set_buffer(self, name, value):
        lname, bname = name.split(".", 1)
        self.layers[lname].buffers[bname] = value

    def state(self):
        return {k: v.copy() for k, v in self.params().items()}, {k: v.copy() for k, v in self.buffers().items()}

    def load_state(self, state):
        params, buffers = state
        for k, v in params.items():
            self.set_param(k, v.copy())
        for k, v in buffers.items():
            self.set_buffer(k, v.copy())

    def n_parameters(self):
        return sum(v.size for v in self.params().values())

    # -- passes -------------------------------------------------------------

    def forward(self, batch: Batch, training=False):
        L = self.layers
        parts = []
        if self.spec.recurrent:
            h = batch.sequences
            for names in self.recurrent_names:
                h = L[names[0]].forward(h, batch.lengths, training)
                for name in names[1:]:
                    h = L[name].forward(h, training)
            self._T = h.shape[1]
            parts.append(h[:, -1])
        parts.append(batch.static)
        parts.append(L["emb_severity"].forward(batch.categorical[:, 0], training))
        parts.append(L["emb_age"].forward(batch.categorical[:, 1], training))
        self._widths = [p.shape[1] for p in parts]
        z = np.concatenate(parts, axis=1)
        for names in self.dense_names:
            for name in names:
                z = L[name].forward(z, training)
        return L["out"].forward(z, training)[:, 0]

    def backward(self, dpred):
        """Backpropagate ``dloss/dprediction`` (shape ``(n,)``) into every layer's ``grads``."""
        L = self.layers
        dz = L["out"].backward(dpred[:, None])
        for names in reversed(self.dense_names):
            for name in reversed(names):
                dz = L[name].backward(dz)
        splits = np.cumsum(self._widths)[:-1]
        pieces = np.split(dz, splits, axis=1)
        L["emb_age"].backward(pieces[-1])
        L["emb_severity"].backward(pieces[-2])
        if self.spec.recurrent:
            dh_last = pieces[0]
            dH = np.zeros((dh_last.shape[0], self._T, dh_last.shape[1]))
            dH[:, -1] = dh_last
            for names in reversed(self.recurrent_names):
                for name in reversed(names[1:]):
                    dH = L[name].backward(dH)
                dH = L[names[0]].backward(dH)

    def loss_and_grads(self, batch: Batch, training=True):
        pred = self.forward(batch, training)
        n = pred.shape[0]
        resid = pred - batch.target
        loss = float(np.mean(resid**2))
        self.backward(2.0 * resid / n)
        return loss, self.grads()

    def predict_batch(self, batch: Batch):
        return self.forward(batch, training=False)


def build_network(spec: ModelSpec, n_static, n_channels=0, seed=0) -> Network:
    if spec.recurrent and n_channels < 1:
        raise ConfigurationError("recurrent model needs sequence channels", "n_channels")
    return Network(spec, n_static, n_channels, seed)
