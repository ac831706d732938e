"""LSTM with self-attention pooling over text channels, fused with aux features."""

import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from . import tensor as T
from .dataset import FeatureVector
from .errors import ConfigError, ContractError, DimensionError
from .tensor import Parameter, Tensor
from .text import TokenSequence


logger = logging.getLogger(__name__)

CONFIG_KEY = "__config__"


@dataclass
class ModelConfig:
    """Layer sizes of the hybrid network."""

    vocab_size: int
    aux_dim: int
    embed_dim: int = 64
    hidden_dim: int = 64
    dense_dim: int = 32
    text_channels: int = 2
    max_seq_len: int = 100
    pooling: str = "attention"

    def validate(self) -> None:
        for name in ("vocab_size", "aux_dim", "embed_dim", "hidden_dim", "dense_dim",
                     "text_channels", "max_seq_len"):
            if getattr(self, name) < 1:
                raise ConfigError(f"ModelConfig.{name} must be at least 1, got {getattr(self, name)}")
        if self.vocab_size < 2:
            raise ConfigError("ModelConfig.vocab_size must cover the padding and unknown ids")
        if self.pooling not in ("attention", "last"):
            raise ConfigError(f"ModelConfig.pooling must be attention or last, got {self.pooling}")

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ModelConfig":
        return cls(**data)


class EmbeddingLayer:
    """Dense vectors for token ids; row 0 is padding."""

    def __init__(self, vocab_size: int, dim: int, rng: np.random.Generator,
                 name: str = "embedding"):
        table = T.xavier_uniform(rng, (vocab_size, dim))
        table[0] = 0.0
        self.vocab_size = vocab_size
        self.dim = dim
        self.table = Parameter(table, f"{name}.table")

    def parameters(self) -> List[Parameter]:
        return [self.table]

    def __call__(self, ids: np.ndarray) -> Tensor:
        return T.take_rows(self.table, ids)


class LSTMLayer:
    """Single-direction LSTM; gates are packed as input, forget, cell, output."""

    def __init__(self, input_dim: int, hidden_dim: int, rng: np.random.Generator, name: str):
        self.input_dim = input_dim
        self.hidden_dim = hidden_dim
        # each gate block gets its own Xavier range
        self.W_x = Parameter(
            np.concatenate([T.xavier_uniform(rng, (input_dim, hidden_dim)) for _ in range(4)],
                           axis=1),
            f"{name}.W_x",
        )
        self.W_h = Parameter(
            np.concatenate([T.xavier_uniform(rng, (hidden_dim, hidden_dim)) for _ in range(4)],
                           axis=1),
            f"{name}.W_h",
        )
        self.b = Parameter(np.zeros(4 * hidden_dim), f"{name}.b")

    def parameters(self) -> List[Parameter]:
        return [self.W_x, self.W_h, self.b]

    def __call__(self, inputs: Sequence[Tensor]) -> List[Tensor]:
        """Run over T inputs of shape [B, input_dim]; returns T hidden states [B, hidden]."""
        if not inputs:
            raise ContractError("LSTM needs at least one time step")
        batch = inputs[0].shape[0]
        H = self.hidden_dim
        h = Tensor(np.zeros((batch, H)))
        c = Tensor(np.zeros((batch, H)))
        states = []
        for x in inputs:
            z = T.add(T.add(T.matmul(x, self.W_x), T.matmul(h, self.W_h)), self.b)
            i = T.sigmoid(z[:, :H])
            f = T.sigmoid(z[:, H:2 * H])
            g = T.tanh(z[:, 2 * H:3 * H])
            o = T.sigmoid(z[:, 3 * H:])
            c = T.add(T.mul(f, c), T.mul(i, g))
            h = T.mul(o, T.tanh(c))
            states.append(h)
        return states


class SelfAttentionPool:
    """u_t = tanh(W_w h_t + b_w); a = softmax(u_t . u_w); s = sum_t a_t h_t."""

    def __init__(self, hidden_dim: int, rng: np.random.Generator, name: str):
        self.hidden_dim = hidden_dim
        self.W_w = Parameter(T.xavier_uniform(rng, (hidden_dim, hidden_dim)), f"{name}.W_w")
        self.b_w = Parameter(np.zeros(hidden_dim), f"{name}.b_w")
        self.u_w = Parameter(T.xavier_uniform(rng, (hidden_dim,), fan_in=hidden_dim, fan_out=1),
                             f"{name}.u_w")

    def parameters(self) -> List[Parameter]:
        return [self.W_w, self.b_w, self.u_w]

    def pool(self, states: Tensor, mask: np.ndarray) -> Tuple[Tensor, Tensor]:
        """Pool hidden states [B, T, H] under mask [B, T].

        Returns:
            (summary vectors [B, H], attention weights [B, T])
        """
        batch, steps, hidden = states.shape
        flat = T.reshape(states, (batch * steps, hidden))
        u = T.tanh(T.add(T.matmul(flat, T.transpose(self.W_w)), self.b_w))
        scores = T.reshape(T.matmul(u, T.reshape(self.u_w, (hidden, 1))), (batch, steps))
        weights = T.softmax(scores, mask=mask)
        weighted = T.mul(T.reshape(weights, (batch, steps, 1)), states)
        return T.tensor_sum(weighted, axis=1), weights


def attention_pool(pool: SelfAttentionPool, h: Tensor, mask: Sequence[bool]) -> Tensor:
    """Pool a single sequence of hidden states [T, H] into one vector [H]."""
    if h.ndim != 2 or h.shape[1] != pool.hidden_dim:
        raise DimensionError(f"attention_pool: expected [T, {pool.hidden_dim}], got {h.shape}")
    mask_arr = np.asarray(mask, dtype=bool)
    if mask_arr.shape != (h.shape[0],):
        raise DimensionError(f"attention_pool: mask shape {mask_arr.shape} for {h.shape[0]} steps")
    if not mask_arr.any():
        raise ContractError("attention_pool: every position is masked")

    steps, hidden = h.shape
    summary, _ = pool.pool(T.reshape(h, (1, steps, hidden)), mask_arr.reshape(1, steps))
    return T.reshape(summary, (hidden,))


class DenseLayer:
    """Affine map followed by an optional activation."""

    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator, name: str,
                 activation: Optional[str] = None):
        self.W = Parameter(T.xavier_uniform(rng, (in_dim, out_dim)), f"{name}.W")
        self.b = Parameter(np.zeros(out_dim), f"{name}.b")
        self.activation = activation

    def parameters(self) -> List[Parameter]:
        return [self.W, self.b]

    def __call__(self, x: Tensor) -> Tensor:
        out = T.add(T.matmul(x, self.W), self.b)
        if self.activation is not None:
            out = T.elementwise(self.activation, out)
        return out


@dataclass
class ModelBatch:
    """Stacked inputs for B records."""

    token_ids: List[np.ndarray]
    lengths: List[np.ndarray]
    aux: np.ndarray
    labels: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return int(self.aux.shape[0])

    @classmethod
    def from_features(
        cls,
        features: Sequence[FeatureVector],
        labels: Optional[Sequence[int]] = None
    ) -> "ModelBatch":
        if not features:
            raise ContractError("cannot batch zero records")
        channels = len(features[0].channels)
        return cls(
            token_ids=[np.stack([f.channels[c].ids for f in features]) for c in range(channels)],
            lengths=[np.array([f.channels[c].true_length for f in features], dtype=np.int64)
                     for c in range(channels)],
            aux=np.stack([f.aux for f in features]),
            labels=None if labels is None else np.asarray(labels, dtype=np.float64),
        )


class HybridNewsModel:
    """Per channel: embed → LSTM → pool; concat with aux; dense+ReLU; dense+sigmoid.

    All text channels share one embedding table.
    """

    def __init__(self, config: ModelConfig, seed: Union[int, Sequence[int]] = 0):
        config.validate()
        self.config = config
        rng = np.random.default_rng(seed)
        self.embedding = EmbeddingLayer(config.vocab_size, config.embed_dim, rng)
        self.lstms = [
            LSTMLayer(config.embed_dim, config.hidden_dim, rng, f"channel{c}.lstm")
            for c in range(config.text_channels)
        ]
        self.pools: List[Optional[SelfAttentionPool]] = [
            SelfAttentionPool(config.hidden_dim, rng, f"channel{c}.attention")
            if config.pooling == "attention" else None
            for c in range(config.text_channels)
        ]
        fused = config.text_channels * config.hidden_dim + config.aux_dim
        self.hidden = DenseLayer(fused, config.dense_dim, rng, "dense", activation="relu")
        self.output = DenseLayer(config.dense_dim, 1, rng, "output")

    def parameters(self) -> List[Parameter]:
        params = self.embedding.parameters()
        for lstm, pool in zip(self.lstms, self.pools):
            params += lstm.parameters()
            if pool is not None:
                params += pool.parameters()
        return params + self.hidden.parameters() + self.output.parameters()

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {p.name: p.data.copy() for p in self.parameters()}

    def load_state_dict(self, state: Mapping[str, np.ndarray]) -> None:
        params = {p.name: p for p in self.parameters()}
        if set(params) != set(state):
            missing = sorted(set(params) - set(state))
            extra = sorted(set(state) - set(params))
            raise ContractError(f"state mismatch; missing {missing}, unexpected {extra}")
        for name, value in state.items():
            if params[name].shape != value.shape:
                raise DimensionError(
                    f"{name}: checkpoint shape {value.shape} != model shape {params[name].shape}"
                )
            params[name].data[...] = value
            params[name].state.clear()

    def _check_batch(self, batch: ModelBatch) -> None:
        cfg = self.config
        if len(batch.token_ids) != cfg.text_channels:
            raise DimensionError(
                f"expected {cfg.text_channels} text channels, got {len(batch.token_ids)}"
            )
        for ids in batch.token_ids:
            if ids.ndim != 2 or ids.shape[1] != cfg.max_seq_len:
                raise DimensionError(
                    f"token ids must be [batch, {cfg.max_seq_len}], got {ids.shape}"
                )
        if batch.aux.ndim != 2 or batch.aux.shape[1] != cfg.aux_dim:
            raise DimensionError(f"aux features must be [batch, {cfg.aux_dim}], got {batch.aux.shape}")

    def _encode_channel(self, channel: int, ids: np.ndarray, lengths: np.ndarray) -> Tensor:
        # an empty text is pooled over its first (padding) position
        effective = np.maximum(lengths, 1)
        steps = int(effective.max())
        inputs = [self.embedding(ids[:, t]) for t in range(steps)]
        states = T.stack(self.lstms[channel](inputs), axis=1)
        pool = self.pools[channel]
        if pool is None:
            return T.index(states, (np.arange(len(ids)), effective - 1))
        mask = np.arange(steps)[None, :] < effective[:, None]
        summary, _ = pool.pool(states, mask)
        return summary

    def forward_batch(self, batch: ModelBatch) -> Tensor:
        """Probabilities of the fake class, shape [B]."""
        self._check_batch(batch)
        pooled = [
            self._encode_channel(c, ids, lengths)
            for c, (ids, lengths) in enumerate(zip(batch.token_ids, batch.lengths))
        ]
        fused = T.concat(pooled + [Tensor(batch.aux)], axis=1)
        logits = self.output(self.hidden(fused))
        return T.reshape(T.sigmoid(logits), (len(batch),))


def model_forward(
    model: HybridNewsModel,
    text_inputs: Sequence[TokenSequence],
    aux_features: np.ndarray
) -> float:
    """Probability that a single record is fake."""
    aux = np.asarray(aux_features, dtype=np.float64)
    if aux.ndim != 1:
        raise DimensionError(f"aux_features must be 1-D, got shape {aux.shape}")
    batch = ModelBatch(
        token_ids=[seq.ids.reshape(1, -1) for seq in text_inputs],
        lengths=[np.array([seq.true_length]) for seq in text_inputs],
        aux=aux.reshape(1, -1),
    )
    with T.no_grad():
        return model.forward_batch(batch).item()


def make_batches(
    features: Sequence[FeatureVector],
    labels: Sequence[int],
    batch_size: int = 32,
    rng: Optional[np.random.Generator] = None
) -> List[ModelBatch]:
    """Cut labeled records into batches, shuffled when an RNG is given."""
    if len(features) != len(labels):
        raise DimensionError(f"{len(features)} records but {len(labels)} labels")
    order = np.arange(len(features)) if rng is None else rng.permutation(len(features))
    return [
        ModelBatch.from_features(
            [features[i] for i in order[start:start + batch_size]],
            [labels[i] for i in order[start:start + batch_size]],
        )
        for start in range(0, len(features), batch_size)
    ]


def train_epoch(
    model: HybridNewsModel,
    batches: Iterable[ModelBatch],
    lr: float = 1e-3,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8
) -> float:
    """One pass of BCE + Adam over the batches; returns the mean batch loss.

    A learning rate of 0 evaluates the loss without updating.
    """
    params = model.parameters()
    losses = []
    for batch in batches:
        if batch.labels is None:
            raise ContractError("training batches need labels")
        loss = T.bce_loss(model.forward_batch(batch), batch.labels)
        T.backward(loss)
        if lr == 0:
            for p in params:
                p.zero_grad()
        else:
            T.adam_step(params, lr=lr, beta1=beta1, beta2=beta2, eps=eps)
        losses.append(loss.item())

    if not losses:
        raise ContractError("train_epoch received an empty batch stream")
    return float(np.mean(losses))


def predict_proba(
    model: HybridNewsModel,
    features: Sequence[FeatureVector],
    batch_size: int = 256
) -> np.ndarray:
    """Probabilities for each record, in input order."""
    if not features:
        return np.zeros(0)
    out = []
    with T.no_grad():
        for start in range(0, len(features), batch_size):
            batch = ModelBatch.from_features(features[start:start + batch_size])
            out.append(model.forward_batch(batch).data)
    return np.concatenate(out)


def save_checkpoint(model: HybridNewsModel, path: Path) -> None:
    """Write named parameter arrays plus the config JSON to an .npz file."""
    arrays = model.state_dict()
    arrays[CONFIG_KEY] = np.array(json.dumps(model.config.to_dict(), sort_keys=True))
    with open(path, 'wb') as f:
        np.savez(f, **arrays)
    logger.info(f"Saved checkpoint with {len(arrays) - 1} parameters to {path}")


def load_checkpoint(path: Path) -> HybridNewsModel:
    with np.load(path, allow_pickle=False) as archive:
        config = ModelConfig.from_dict(json.loads(str(archive[CONFIG_KEY])))
        state = {name: archive[name] for name in archive.files if name != CONFIG_KEY}
    model = HybridNewsModel(config)
    model.load_state_dict(state)
    return model
