"""Temporal aggregation of window vectors: Conv1D, batch norm, ReLU, attention."""
from __future__ import annotations

from dataclasses import dataclass

from . import autodiff as ad
from .autodiff import BatchNormState, ParamStore, Tensor


@dataclass
class TemporalConvParams:
    kernel: Tensor  # (K, C_in, C_out)
    bias: Tensor  # (C_out,)
    gamma: Tensor  # (C_out,)
    beta: Tensor  # (C_out,)
    bn: BatchNormState
    # "batch": statistics over subjects and windows of the mini-batch;
    # "subject": over the windows of each subject separately
    bn_scope: str = "batch"


@dataclass
class TemporalAttentionParams:
    W1: Tensor  # (C, hidden)
    b1: Tensor  # (hidden,)
    w2: Tensor  # (hidden, 1)


def init_temporal_conv(store: ParamStore, prefix: str, c_in: int, c_out: int, width: int = 3,
                       bn_scope: str = "batch", momentum: float = 0.1,
                       eps: float = 1e-5) -> TemporalConvParams:
    if bn_scope not in ("batch", "subject"):
        raise ValueError(f"unknown batch-norm scope {bn_scope!r}")
    kernel = store.glorot(f"{prefix}.kernel", (width, c_in, c_out),
                          fan_in=width * c_in, fan_out=width * c_out)
    return TemporalConvParams(kernel, store.zeros(f"{prefix}.bias", (c_out,)),
                              store.add(f"{prefix}.bn_gamma", [1.0] * c_out),
                              store.zeros(f"{prefix}.bn_beta", (c_out,)),
                              BatchNormState(c_out, momentum, eps), bn_scope)


def init_temporal_attention(store: ParamStore, prefix: str, c: int,
                            hidden: int) -> TemporalAttentionParams:
    return TemporalAttentionParams(store.glorot(f"{prefix}.W1", (c, hidden)),
                                   store.zeros(f"{prefix}.b1", (hidden,)),
                                   store.glorot(f"{prefix}.w2", (hidden, 1)))


def temporal_conv(Z: Tensor, params: TemporalConvParams, train: bool,
                  update_stats: bool = True) -> Tensor:
    """(B, T, C_in) -> (B, T, C_out) via same-padded conv, batch norm and ReLU.

    Subject-scope statistics need at least two windows; single-window
    sequences fall back to batch scope.
    """
    conv = ad.conv1d(Z, params.kernel, params.bias)
    axes = (1,) if params.bn_scope == "subject" and conv.shape[1] > 1 else (0, 1)
    normed = ad.batch_norm_1d(conv, params.gamma, params.beta, params.bn, train,
                              axes=axes, update_stats=update_stats)
    return ad.relu(normed)


def temporal_scores(u: Tensor, params: TemporalAttentionParams) -> Tensor:
    hidden = ad.tanh(ad.add(ad.matmul(u, params.W1), params.b1))
    scores = ad.matmul(hidden, params.w2)
    return ad.reshape(scores, scores.shape[:-1])


def temporal_attend(u: Tensor, params: TemporalAttentionParams) -> tuple[Tensor, Tensor]:
    """Return ``(v (B, C), beta (B, T))`` with beta a softmax over windows."""
    beta = ad.softmax(temporal_scores(u, params), axis=-1)
    return ad.weighted_sum(beta, u), beta
