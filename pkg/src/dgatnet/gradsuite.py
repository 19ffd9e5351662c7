"""Finite-difference gradient suite over every primitive and composite layer.

Each case draws fresh random inputs and parameters, projects the output onto
a fixed random direction to get a scalar, and compares backprop with central
differences (h = 1e-5, float64).
"""
from __future__ import annotations

from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import BatchNormState, ParamStore, Tensor, gradcheck
from .model import ClassifierParams, DGATNet, ModelConfig, classify
from .spatial import attention_pool, gat_layer, init_gat_layer, init_pooling
from .temporal import (init_temporal_attention, init_temporal_conv, temporal_attend,
                       temporal_conv)
from .train import weighted_ce_loss

TOLERANCE = 1e-4

Case = Callable[[np.random.Generator], tuple[Callable[[], Tensor], list[Tensor]]]


def _leaf(rng, *shape, low=None, high=None) -> Tensor:
    if low is not None:
        return Tensor(rng.uniform(low, high, size=shape), requires_grad=True)
    return Tensor(rng.standard_normal(shape), requires_grad=True)


def _project(out: Tensor, direction: np.ndarray) -> Tensor:
    return ad.sum(ad.mul(out, direction))


def _unary(op, low=None, high=None, shape=(3, 4)) -> Case:
    def case(rng):
        x = _leaf(rng, *shape, low=low, high=high)
        d = rng.standard_normal(op(Tensor(x.value)).shape)
        return (lambda: _project(op(x), d)), [x]
    return case


def _binary(op, shape_a=(3, 4), shape_b=(3, 4)) -> Case:
    def case(rng):
        a, b = _leaf(rng, *shape_a), _leaf(rng, *shape_b)
        probe = op(Tensor(a.value), Tensor(b.value))
        d = rng.standard_normal(probe.shape)
        return (lambda: _project(op(a, b), d)), [a, b]
    return case


def _softmax_masked(rng):
    x = _leaf(rng, 2, 4, 4)
    mask = rng.random((2, 4, 4)) < 0.6
    mask |= np.eye(4, dtype=bool)
    d = rng.standard_normal((2, 4, 4))
    return (lambda: _project(ad.softmax(x, axis=-1, mask=mask), d)), [x]


def _conv(rng):
    x, k, b = _leaf(rng, 2, 5, 3), _leaf(rng, 3, 3, 4), _leaf(rng, 4)
    d = rng.standard_normal((2, 5, 4))
    return (lambda: _project(ad.conv1d(x, k, b), d)), [x, k, b]


def _batch_norm(train: bool, axes=(0, 1)) -> Case:
    def case(rng):
        x, g, b = _leaf(rng, 3, 4, 2), _leaf(rng, 2), _leaf(rng, 2)
        state = BatchNormState(2)
        state.running_mean = rng.standard_normal(2)
        state.running_var = rng.uniform(0.5, 2.0, 2)
        d = rng.standard_normal((3, 4, 2))
        return (lambda: _project(ad.batch_norm_1d(x, g, b, state, train, axes=axes,
                                                  update_stats=False), d)), [x, g, b]
    return case


def _dropout(rng):
    x = _leaf(rng, 4, 5)
    d = rng.standard_normal((4, 5))
    seed = int(rng.integers(1 << 30))
    return (lambda: _project(ad.dropout(x, 0.5, True, np.random.default_rng(seed)), d)), [x]


def _weighted_sum(rng):
    w, x = _leaf(rng, 2, 4), _leaf(rng, 2, 4, 3)
    d = rng.standard_normal((2, 3))
    return (lambda: _project(ad.weighted_sum(w, x), d)), [w, x]


def _concat(rng):
    a, b = _leaf(rng, 3, 2), _leaf(rng, 3, 4)
    d = rng.standard_normal((3, 6))
    return (lambda: _project(ad.concat([a, b], axis=-1), d)), [a, b]


def _index(rng):
    x = _leaf(rng, 4, 3)
    rows, cols = np.array([0, 2, 2, 3]), np.array([1, 0, 0, 2])
    d = rng.standard_normal(4)
    return (lambda: _project(ad.index(x, (rows, cols)), d)), [x]


def _gat(heads: int) -> Case:
    def case(rng):
        store = ParamStore(int(rng.integers(1 << 30)))
        params = init_gat_layer(store, "g", 3, 4, heads=heads)
        h = _leaf(rng, 2, 5, 3)
        A = (rng.random((2, 5, 5)) < 0.5).astype(float)
        A = np.maximum(A, np.swapaxes(A, -1, -2))
        A[:, range(5), range(5)] = 1
        d = rng.standard_normal((2, 5, 4))
        return (lambda: _project(gat_layer(h, A, params)[0], d)), [h, params.W, params.a]
    return case


def _pool(rng):
    store = ParamStore(int(rng.integers(1 << 30)))
    params = init_pooling(store, "p", 4, 3)
    h = _leaf(rng, 2, 5, 4)
    d = rng.standard_normal((2, 4))
    return (lambda: _project(attention_pool(h, params)[0], d)), [h, params.W1, params.b1, params.w2]


def _temporal_conv(train: bool) -> Case:
    def case(rng):
        store = ParamStore(int(rng.integers(1 << 30)))
        params = init_temporal_conv(store, "c", 3, 4)
        for t in (params.gamma, params.beta, params.bias):
            t.value = rng.standard_normal(t.shape)
        params.bn.running_mean = rng.standard_normal(4)
        params.bn.running_var = rng.uniform(0.5, 2.0, 4)
        Z = _leaf(rng, 3, 5, 3)
        d = rng.standard_normal((3, 5, 4))
        build = lambda: _project(temporal_conv(Z, params, train, update_stats=False), d)  # noqa: E731
        return build, [Z, params.kernel, params.bias, params.gamma, params.beta]
    return case


def _temporal_attend(rng):
    store = ParamStore(int(rng.integers(1 << 30)))
    params = init_temporal_attention(store, "a", 4, 3)
    params.b1.value = rng.standard_normal(3)
    u = _leaf(rng, 2, 5, 4)
    d = rng.standard_normal((2, 4))
    return (lambda: _project(temporal_attend(u, params)[0], d)), [u, params.W1, params.b1, params.w2]


def _classifier(rng):
    store = ParamStore(int(rng.integers(1 << 30)))
    widths = (4, 5, 3, 2)
    Ws = [store.glorot(f"W{i}", (a, b)) for i, (a, b) in enumerate(zip(widths[:-1], widths[1:]))]
    bs = [store.add(f"b{i}", rng.standard_normal(b)) for i, b in enumerate(widths[1:])]
    params = ClassifierParams(Ws, bs, (0.5, 0.4))
    v = _leaf(rng, 3, 4)
    seed = int(rng.integers(1 << 30))
    d = rng.standard_normal((3, 2))

    def build():
        logits = classify(v, params, True, np.random.default_rng(seed))
        return _project(ad.softmax(logits, axis=-1), d)
    return build, [v] + Ws + bs


def _ce_loss(rng):
    logits = _leaf(rng, 4, 2)
    y = rng.integers(0, 2, 4)
    w = rng.uniform(0.5, 2.0, 2)
    return (lambda: weighted_ce_loss(ad.softmax(logits, axis=-1), y, w)), [logits]


TINY_MODEL = ModelConfig(embed_dim=3, gat_dims=(4, 3), pool_hidden=3, conv_filters=4,
                         attn_hidden=3, fc_dims=(6, 5), dropout=(0.2, 0.1))


def _full_model(rng):
    model = DGATNet(4, TINY_MODEL, seed=int(rng.integers(1 << 30)))
    # zero biases would park ReLUs exactly on their kink
    for _, p in model.store:
        p.value = p.value + 0.3 * rng.standard_normal(p.shape)
    A = (rng.random((2, 3, 4, 4)) < 0.5).astype(float)
    A = np.maximum(A, np.swapaxes(A, -1, -2))
    A[..., range(4), range(4)] = 1
    y = np.array([0, 1])
    seed = int(rng.integers(1 << 30))

    def build():
        out = model.forward(A, train=True, rng=np.random.default_rng(seed), update_stats=False)
        return weighted_ce_loss(out.probs, y, [1.0, 1.0])
    return build, [p for _, p in model.store]


PRIMITIVES: dict[str, Case] = {
    "matmul": _binary(ad.matmul, (2, 3, 4), (4, 2)),
    "matmul_batched": _binary(ad.matmul, (2, 3, 4), (2, 4, 3)),
    "add": _binary(ad.add, (2, 3, 4), (4,)),
    "sub": _binary(ad.sub, (3, 4), (3, 1)),
    "mul": _binary(ad.mul, (3, 4), (1, 4)),
    "concat": _concat,
    "index": _index,
    "reshape": _unary(lambda x: ad.reshape(x, (4, 3))),
    "swapaxes": _unary(lambda x: ad.swapaxes(x, 0, 1)),
    "leaky_relu": _unary(lambda x: ad.leaky_relu(x, 0.2)),
    "relu": _unary(ad.relu),
    "elu": _unary(ad.elu),
    "tanh": _unary(ad.tanh),
    "softmax": _unary(lambda x: ad.softmax(x, axis=-1)),
    "softmax_masked": _softmax_masked,
    "conv1d": _conv,
    "batch_norm_train": _batch_norm(True),
    "batch_norm_train_subject": _batch_norm(True, axes=(1,)),
    "batch_norm_eval": _batch_norm(False),
    "dropout": _dropout,
    "mean": _unary(lambda x: ad.mean(x, axis=0)),
    "sum": _unary(lambda x: ad.sum(x, axis=1)),
    "weighted_sum": _weighted_sum,
    "log": _unary(ad.log, low=0.5, high=2.0),
    "exp": _unary(ad.exp),
}

COMPOSITES: dict[str, Case] = {
    "gat_layer": _gat(1),
    "gat_layer_2heads": _gat(2),
    "attention_pool": _pool,
    "conv_bn_relu_train": _temporal_conv(True),
    "conv_bn_relu_eval": _temporal_conv(False),
    "temporal_attention": _temporal_attend,
    "classifier": _classifier,
    "weighted_ce_loss": _ce_loss,
    "full_model": _full_model,
}


def check_case(case: Case, points: int = 25, seed: int = 0) -> float:
    worst = 0.0
    for p in range(points):
        rng = np.random.default_rng([seed, p])
        build, inputs = case(rng)
        worst = max(worst, gradcheck(build, inputs))
    return worst


def run_suite(points: int = 25, seed: int = 0, names=None) -> dict[str, float]:
    cases = {**PRIMITIVES, **COMPOSITES}
    if names:
        cases = {k: v for k, v in cases.items() if k in names}
    return {name: check_case(case, points, seed) for name, case in cases.items()}
