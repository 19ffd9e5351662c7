"""Per-window spatial encoder: ROI embeddings, GAT layers, attention pooling.

All functions operate on a stack of G graphs at once: adjacency masks have
shape (G, N, N) and node features (G, N, d), or (N, d) when shared by every
graph (the embedding table feeding the first layer).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ParamStore, Tensor


@dataclass
class GATLayerParams:
    W: Tensor  # (d_in, d_out)
    a: Tensor  # (2 * d_out,); per head [a_src, a_dst] blocks when heads > 1
    heads: int = 1
    leaky_slope: float = 0.2

    @property
    def d_out(self) -> int:
        return self.W.shape[1]


@dataclass
class PoolingParams:
    W1: Tensor  # (d, hidden)
    b1: Tensor  # (hidden,)
    w2: Tensor  # (hidden, 1)


@dataclass
class WindowAttentionRecord:
    alphas: np.ndarray  # (n_layers, N, N), head-averaged
    pool_weights: np.ndarray  # (N,)


def init_gat_layer(store: ParamStore, prefix: str, d_in: int, d_out: int,
                   heads: int = 1, leaky_slope: float = 0.2) -> GATLayerParams:
    if d_out % heads:
        raise ValueError(f"{prefix}: {heads} heads do not divide output width {d_out}")
    per_head = d_out // heads
    W = store.glorot(f"{prefix}.W", (d_in, d_out))
    a = store.glorot(f"{prefix}.a", (2 * d_out,), fan_in=2 * per_head, fan_out=1)
    return GATLayerParams(W, a, heads, leaky_slope)


def init_pooling(store: ParamStore, prefix: str, d: int, hidden: int) -> PoolingParams:
    return PoolingParams(store.glorot(f"{prefix}.W1", (d, hidden)),
                         store.zeros(f"{prefix}.b1", (hidden,)),
                         store.glorot(f"{prefix}.w2", (hidden, 1)))


def gat_layer(h: Tensor, adjacency: np.ndarray, params: GATLayerParams) -> tuple[Tensor, Tensor]:
    """One graph-attention layer without output activation.

    Returns ``(h_next, alpha)``; ``alpha`` has shape (heads, G, N, N) when
    ``heads > 1`` and (G, N, N) otherwise, zero wherever there is no edge.
    """
    mask = np.asarray(adjacency).astype(bool)
    Wh = ad.matmul(h, params.W)
    d = params.d_out // params.heads
    outputs, alphas = [], []
    for k in range(params.heads):
        Whk = Wh if params.heads == 1 else ad.index(Wh, (..., slice(k * d, (k + 1) * d)))
        base = 2 * d * k
        a_src = ad.reshape(ad.index(params.a, slice(base, base + d)), (d, 1))
        a_dst = ad.reshape(ad.index(params.a, slice(base + d, base + 2 * d)), (d, 1))
        # a^T [Wh_i || Wh_j] splits into a source term and a destination term
        src = ad.matmul(Whk, a_src)
        dst = ad.swapaxes(ad.matmul(Whk, a_dst), -1, -2)
        e = ad.leaky_relu(ad.add(src, dst), params.leaky_slope)
        alpha = ad.softmax(e, axis=-1, mask=mask)
        outputs.append(ad.matmul(alpha, Whk))
        alphas.append(alpha)
    if params.heads == 1:
        return outputs[0], alphas[0]
    stacked = Tensor(np.stack([al.value for al in alphas]))
    return ad.concat(outputs, axis=-1), stacked


def attention_pool(h: Tensor, params: PoolingParams) -> tuple[Tensor, Tensor]:
    """Softmax-weighted sum of node embeddings; returns ``(z (G, d), weights (G, N))``."""
    hidden = ad.tanh(ad.add(ad.matmul(h, params.W1), params.b1))
    scores = ad.matmul(hidden, params.w2)
    scores = ad.reshape(scores, scores.shape[:-1])
    weights = ad.softmax(scores, axis=-1)
    return ad.weighted_sum(weights, h), weights


def encode_windows(adjacency: np.ndarray, embeddings: Tensor, layers: list[GATLayerParams],
                   pool: PoolingParams, activation: str = "elu") -> tuple[Tensor, list, Tensor]:
    """Encode G window graphs into G vectors.

    ``adjacency`` is (G, N, N).  ELU (or the named activation) runs between GAT
    layers but not after the last one.  Returns ``(z, alphas, pool_weights)``
    where ``alphas`` holds one (G, N, N) array per layer.
    """
    act = {"elu": ad.elu, "relu": ad.relu, "tanh": ad.tanh}[activation]
    adjacency = np.asarray(adjacency)
    if adjacency.ndim == 2:
        adjacency = adjacency[None]
    h = embeddings
    alphas = []
    for i, layer in enumerate(layers):
        # the (G, N, N) mask broadcasts the shared table to per-graph features
        h, alpha = gat_layer(h, adjacency, layer)
        al = alpha.value
        if layer.heads > 1:
            al = al.mean(axis=0)
        alphas.append(np.broadcast_to(al, adjacency.shape).copy())
        if i < len(layers) - 1:
            h = act(h)
    z, pool_weights = attention_pool(h, pool)
    return z, alphas, pool_weights


def encode_window(adjacency: np.ndarray, embeddings: Tensor, layers: list[GATLayerParams],
                  pool: PoolingParams, activation: str = "elu") -> tuple[Tensor, WindowAttentionRecord]:
    """Single-window convenience wrapper around :func:`encode_windows`."""
    z, alphas, weights = encode_windows(adjacency[None], embeddings, layers, pool, activation)
    record = WindowAttentionRecord(np.stack([al[0] for al in alphas]), weights.value[0].copy())
    return ad.reshape(z, (z.shape[-1],)), record
