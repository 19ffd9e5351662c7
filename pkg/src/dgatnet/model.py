"""Full network: spatial GAT encoder, temporal block and classification head."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import ParamStore, Tensor
from .spatial import (GATLayerParams, PoolingParams, WindowAttentionRecord, encode_windows,
                      init_gat_layer, init_pooling)
from .temporal import (TemporalAttentionParams, TemporalConvParams, init_temporal_attention,
                       init_temporal_conv, temporal_attend, temporal_conv)


@dataclass(frozen=True)
class ModelConfig:
    embed_dim: int = 64
    gat_dims: tuple[int, ...] = (128, 128, 64)
    heads: int = 1
    leaky_slope: float = 0.2
    gat_activation: str = "elu"
    pool_hidden: int = 32
    conv_filters: int = 96
    conv_width: int = 3
    bn_scope: str = "batch"
    bn_momentum: float = 0.1
    bn_eps: float = 1e-5
    attn_hidden: int = 48
    fc_dims: tuple[int, ...] = (64, 32)
    dropout: tuple[float, ...] = (0.5, 0.4)
    n_classes: int = 2

    def __post_init__(self):
        if len(self.dropout) != len(self.fc_dims):
            raise ValueError("need one dropout rate per dense layer")
        if not self.gat_dims:
            raise ValueError("need at least one GAT layer")


@dataclass
class ClassifierParams:
    weights: list[Tensor]
    biases: list[Tensor]
    dropout: tuple[float, ...]


@dataclass
class SubjectAttention:
    """Attention read-out for one subject, windows in start order."""

    subject_id: str
    alphas: np.ndarray  # (n_layers, T, N, N)
    pool_weights: np.ndarray  # (T, N)
    beta: np.ndarray  # (T,)

    @property
    def records(self) -> list[WindowAttentionRecord]:
        return [WindowAttentionRecord(self.alphas[:, t], self.pool_weights[t])
                for t in range(self.beta.shape[0])]


@dataclass
class ForwardResult:
    probs: Tensor  # (B, n_classes)
    logits: Tensor
    attention: list[SubjectAttention] = field(default_factory=list)


def init_classifier(store: ParamStore, prefix: str, d_in: int, dims: tuple[int, ...],
                    n_classes: int, dropout: tuple[float, ...]) -> ClassifierParams:
    weights, biases = [], []
    widths = (d_in,) + tuple(dims) + (n_classes,)
    for i, (a, b) in enumerate(zip(widths[:-1], widths[1:])):
        weights.append(store.glorot(f"{prefix}.fc{i}.W", (a, b)))
        biases.append(store.zeros(f"{prefix}.fc{i}.b", (b,)))
    return ClassifierParams(weights, biases, dropout)


def classify(v: Tensor, params: ClassifierParams, train: bool,
             rng: np.random.Generator | None) -> Tensor:
    """Dense ReLU stack with dropout after each hidden layer; returns logits."""
    h = v
    last = len(params.weights) - 1
    for i, (W, b) in enumerate(zip(params.weights, params.biases)):
        h = ad.add(ad.matmul(h, W), b)
        if i < last:
            h = ad.relu(h)
            h = ad.dropout(h, params.dropout[i], train, rng)
    return h


class DGATNet:
    """Parameters and forward pass of the dynamic graph-attention classifier."""

    def __init__(self, n_rois: int, config: ModelConfig | None = None, seed: int = 0):
        self.config = cfg = config or ModelConfig()
        self.n_rois = n_rois
        self.seed = seed
        self.store = store = ParamStore(seed)
        self.embeddings = store.add(
            "roi_embedding", store.rng.standard_normal((n_rois, cfg.embed_dim)) / np.sqrt(cfg.embed_dim))
        self.gat: list[GATLayerParams] = []
        d = cfg.embed_dim
        for i, d_out in enumerate(cfg.gat_dims):
            self.gat.append(init_gat_layer(store, f"gat{i}", d, d_out, cfg.heads, cfg.leaky_slope))
            d = d_out
        self.pool: PoolingParams = init_pooling(store, "pool", d, cfg.pool_hidden)
        self.conv: TemporalConvParams = init_temporal_conv(
            store, "tconv", d, cfg.conv_filters, cfg.conv_width, cfg.bn_scope,
            cfg.bn_momentum, cfg.bn_eps)
        self.tattn: TemporalAttentionParams = init_temporal_attention(
            store, "tattn", cfg.conv_filters, cfg.attn_hidden)
        self.head: ClassifierParams = init_classifier(
            store, "head", cfg.conv_filters, cfg.fc_dims, cfg.n_classes, cfg.dropout)

    def forward(self, adjacency: np.ndarray, train: bool = False,
                rng: np.random.Generator | None = None, subject_ids=None,
                keep_attention: bool = False, update_stats: bool = True) -> ForwardResult:
        """Run a batch of subjects sharing the same window count.

        ``adjacency`` has shape (B, T, N, N).
        """
        adjacency = np.asarray(adjacency)
        if adjacency.ndim != 4:
            raise ValueError(f"adjacency batch must be (B, T, N, N), got {adjacency.shape}")
        B, T, N, _ = adjacency.shape
        if N != self.n_rois:
            raise ValueError(f"model built for {self.n_rois} ROIs, got graphs with {N}")
        graphs = adjacency.reshape(B * T, N, N)
        z, alphas, pool_w = encode_windows(graphs, self.embeddings, self.gat, self.pool,
                                           self.config.gat_activation)
        Z = ad.reshape(z, (B, T, z.shape[-1]))
        u = temporal_conv(Z, self.conv, train, update_stats=update_stats)
        v, beta = temporal_attend(u, self.tattn)
        logits = classify(v, self.head, train, rng)
        probs = ad.softmax(logits, axis=-1)
        result = ForwardResult(probs, logits)
        if keep_attention:
            ids = list(subject_ids) if subject_ids is not None else [str(i) for i in range(B)]
            al = np.stack(alphas).reshape(len(alphas), B, T, N, N)
            pw = pool_w.value.reshape(B, T, N)
            for b in range(B):
                result.attention.append(
                    SubjectAttention(ids[b], al[:, b].copy(), pw[b].copy(), beta.value[b].copy()))
        return result

    def predict_proba(self, adjacency: np.ndarray) -> np.ndarray:
        return self.forward(adjacency, train=False).probs.value

    @property
    def params(self) -> ParamStore:
        return self.store

    def state_dict(self) -> dict[str, np.ndarray]:
        state = self.store.snapshot()
        state["tconv.bn_running_mean"] = self.conv.bn.running_mean.copy()
        state["tconv.bn_running_var"] = self.conv.bn.running_var.copy()
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        state = dict(state)
        self.conv.bn.running_mean = np.array(state.pop("tconv.bn_running_mean"))
        self.conv.bn.running_var = np.array(state.pop("tconv.bn_running_var"))
        self.store.load(state)
