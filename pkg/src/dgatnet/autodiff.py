"""Small reverse-mode differentiation engine on top of numpy.

Every learnable computation in the model goes through :class:`Tensor` and the
primitive functions below.  Values are float64 numpy arrays; each primitive
records its parents and a closure mapping the output gradient to gradients of
the parents.  :func:`backward` walks the graph in reverse topological order.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

Array = np.ndarray


class Tensor:
    """A value in the computation graph.

    Leaves (parameters and inputs) accumulate ``grad`` across calls to
    :func:`backward`; interior nodes have ``grad`` overwritten.
    """

    __slots__ = ("value", "grad", "requires_grad", "parents", "backward_fn", "name")

    def __init__(self, value, requires_grad: bool = False, name: str | None = None,
                 parents: tuple["Tensor", ...] = (), backward_fn: Callable | None = None):
        self.value = np.asarray(value, dtype=np.float64)
        # interior nodes get their gradient assigned during backward
        self.grad = None if parents else np.zeros_like(self.value)
        self.requires_grad = requires_grad
        self.parents = parents
        self.backward_fn = backward_fn
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.value)

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return index(self, key)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(value: Array, parents: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    tracked = tuple(parents)
    needs = any(p.requires_grad for p in tracked)
    if not needs:
        return Tensor(value)
    return Tensor(value, requires_grad=True, parents=tracked, backward_fn=backward_fn)


def unbroadcast(grad: Array, shape: tuple[int, ...]) -> Array:
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise and structural primitives

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.value + b.value

    def back(g):
        return unbroadcast(g, a.shape), unbroadcast(g, b.shape)

    return _node(out, (a, b), back)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.value - b.value

    def back(g):
        return unbroadcast(g, a.shape), unbroadcast(-g, b.shape)

    return _node(out, (a, b), back)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.value * b.value

    def back(g):
        return unbroadcast(g * b.value, a.shape), unbroadcast(g * a.value, b.shape)

    return _node(out, (a, b), back)


def matmul(a, b) -> Tensor:
    """Batched matrix product with numpy broadcasting over leading axes.

    Both operands must be at least 2-D.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError(f"matmul needs operands of rank >= 2, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    if b.ndim == 2 and a.ndim > 2:
        # stacked rows times one matrix: a single 2-D GEMM is much faster
        a2 = a.value.reshape(-1, a.shape[-1])
        out = (a2 @ b.value).reshape(a.shape[:-1] + (b.shape[-1],))

        def back_flat(g):
            g2 = g.reshape(-1, g.shape[-1])
            return (g2 @ b.value.T).reshape(a.shape), a2.T @ g2

        return _node(out, (a, b), back_flat)
    out = a.value @ b.value

    def back(g):
        ga = g @ np.swapaxes(b.value, -1, -2)
        gb = np.swapaxes(a.value, -1, -2) @ g
        return unbroadcast(ga, a.shape), unbroadcast(gb, b.shape)

    return _node(out, (a, b), back)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.value for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]

    def back(g):
        return tuple(np.split(g, cuts, axis=axis))

    return _node(out, tensors, back)


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    x = as_tensor(x)
    out = x.value.reshape(shape)

    def back(g):
        return (g.reshape(x.shape),)

    return _node(out, (x,), back)


def swapaxes(x: Tensor, ax1: int = -1, ax2: int = -2) -> Tensor:
    x = as_tensor(x)
    out = np.swapaxes(x.value, ax1, ax2)

    def back(g):
        return (np.swapaxes(g, ax1, ax2),)

    return _node(out, (x,), back)


def index(x: Tensor, key) -> Tensor:
    """Basic or advanced indexing; repeated indices accumulate in backward."""
    x = as_tensor(x)
    out = x.value[key]
    parts = key if isinstance(key, tuple) else (key,)
    advanced = any(isinstance(k, (list, np.ndarray)) for k in parts)

    def back(g):
        gx = np.zeros_like(x.value)
        if advanced:
            np.add.at(gx, key, g)
        else:
            gx[key] = g
        return (gx,)

    return _node(np.array(out), (x,), back)


def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    x = as_tensor(x)
    out = x.value.sum(axis=axis, keepdims=keepdims)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _node(out, (x,), back)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    out = x.value.mean(axis=axis, keepdims=keepdims)
    if axis is None:
        count = x.value.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        count = int(np.prod([x.shape[a] for a in axes]))

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, x.shape).copy(),)

    return _node(out, (x,), back)


def weighted_sum(weights: Tensor, x: Tensor) -> Tensor:
    """``out[..., d] = sum_n weights[..., n] * x[..., n, d]``."""
    weights, x = as_tensor(weights), as_tensor(x)
    if weights.shape[-1] != x.shape[-2]:
        raise ValueError(f"weighted_sum shape mismatch: {weights.shape} vs {x.shape}")
    out = np.einsum("...n,...nd->...d", weights.value, x.value)

    def back(g):
        gw = np.einsum("...d,...nd->...n", g, x.value)
        gx = weights.value[..., :, None] * g[..., None, :]
        return unbroadcast(gw, weights.shape), unbroadcast(gx, x.shape)

    return _node(out, (weights, x), back)


def exp(x: Tensor) -> Tensor:
    x = as_tensor(x)
    out = np.exp(x.value)

    def back(g):
        return (g * out,)

    return _node(out, (x,), back)


def log(x: Tensor, floor: float | None = None) -> Tensor:
    """Natural log; with ``floor`` the input is clamped from below and the
    gradient is zero on clamped entries."""
    x = as_tensor(x)
    v = x.value
    clamped = None
    if floor is not None:
        clamped = v < floor
        v = np.where(clamped, floor, v)
    out = np.log(v)

    def back(g):
        gx = g / v
        if clamped is not None:
            gx = np.where(clamped, 0.0, gx)
        return (gx,)

    return _node(out, (x,), back)


def tanh(x: Tensor) -> Tensor:
    x = as_tensor(x)
    out = np.tanh(x.value)

    def back(g):
        return (g * (1.0 - out * out),)

    return _node(out, (x,), back)


def relu(x: Tensor) -> Tensor:
    x = as_tensor(x)
    out = np.maximum(x.value, 0.0)

    def back(g):
        return (g * (x.value > 0),)

    return _node(out, (x,), back)


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    if not 0.0 <= slope < 1.0:
        raise ValueError(f"leaky_relu slope must be in [0, 1), got {slope}")
    x = as_tensor(x)
    out = np.maximum(x.value, slope * x.value)

    def back(g):
        return (g * (slope + (1.0 - slope) * (x.value > 0)),)

    return _node(out, (x,), back)


def elu(x: Tensor, alpha: float = 1.0) -> Tensor:
    x = as_tensor(x)
    neg_part = alpha * np.expm1(np.minimum(x.value, 0.0))  # zero where x > 0
    out = np.maximum(x.value, 0.0) + neg_part

    def back(g):
        pos = x.value > 0
        return (g * (pos + (~pos) * (neg_part + alpha)),)

    return _node(out, (x,), back)


def softmax(x: Tensor, axis: int = -1, mask: Array | None = None) -> Tensor:
    """Softmax along ``axis``; entries where ``mask`` is False get weight 0.

    ``x`` is broadcast to the mask's shape when the mask is larger.
    """
    x = as_tensor(x)
    v = x.value
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        shape = np.broadcast_shapes(v.shape, mask.shape)
        v = np.broadcast_to(v, shape)
        mask = np.broadcast_to(mask, shape)
        if not mask.any(axis=axis).all():
            raise ValueError("softmax over an axis with every entry masked")
        v = np.where(mask, v, -np.inf)
    shifted = v - v.max(axis=axis, keepdims=True)
    ex = np.exp(shifted)
    out = ex / ex.sum(axis=axis, keepdims=True)

    def back(g):
        gx = out * (g - (g * out).sum(axis=axis, keepdims=True))
        return (unbroadcast(gx, x.shape),)

    return _node(out, (x,), back)


def conv1d(x: Tensor, kernel: Tensor, bias: Tensor | None = None) -> Tensor:
    """Same-length 1-D convolution (cross-correlation) along axis -2.

    ``x`` has shape (B, T, C_in), ``kernel`` (K, C_in, C_out) with odd K;
    the sequence is zero padded by K // 2 on both ends.
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    width = kernel.shape[0]
    if width % 2 != 1:
        raise ValueError("conv1d kernel width must be odd for same-length padding")
    if x.shape[-1] != kernel.shape[1]:
        raise ValueError(f"conv1d channel mismatch: {x.shape} vs kernel {kernel.shape}")
    pad = width // 2
    steps = x.shape[-2]
    padded = np.pad(x.value, [(0, 0)] * (x.ndim - 2) + [(pad, pad), (0, 0)])
    out = np.zeros(x.shape[:-1] + (kernel.shape[2],))
    for k in range(width):
        out += padded[..., k:k + steps, :] @ kernel.value[k]
    parents = [x, kernel]
    if bias is not None:
        bias = as_tensor(bias)
        out = out + bias.value
        parents.append(bias)

    def back(g):
        gpad = np.zeros_like(padded)
        gk = np.zeros_like(kernel.value)
        lead = tuple(range(g.ndim - 2))
        for k in range(width):
            window = padded[..., k:k + steps, :]
            gpad[..., k:k + steps, :] += g @ kernel.value[k].T
            gk[k] = np.tensordot(window, g, axes=(lead + (g.ndim - 2,), lead + (g.ndim - 2,)))
        gx = gpad[..., pad:pad + steps, :]
        grads = [gx, gk]
        if bias is not None:
            grads.append(g.reshape(-1, g.shape[-1]).sum(axis=0))
        return tuple(grads)

    return _node(out, parents, back)


@dataclass
class BatchNormState:
    """Running statistics for :func:`batch_norm_1d` (not trainable)."""

    channels: int
    momentum: float = 0.1
    eps: float = 1e-5
    running_mean: Array = field(init=False)
    running_var: Array = field(init=False)

    def __post_init__(self):
        self.running_mean = np.zeros(self.channels)
        self.running_var = np.ones(self.channels)


def batch_norm_1d(x: Tensor, gamma: Tensor, beta: Tensor, state: BatchNormState,
                  train: bool, axes: tuple[int, ...] = (0, 1), update_stats: bool = True) -> Tensor:
    """Per-channel normalization of ``x`` (..., C).

    In training mode statistics are taken over ``axes`` (biased variance), and
    the running averages are updated with the mean of those statistics.  In
    eval mode the running statistics are used and the op is affine.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    if not train:
        inv = 1.0 / np.sqrt(state.running_var + state.eps)
        xhat = (x.value - state.running_mean) * inv
        out = gamma.value * xhat + beta.value

        def back_eval(g):
            return (g * gamma.value * inv, unbroadcast(g * xhat, gamma.shape),
                    unbroadcast(g, beta.shape))

        return _node(out, (x, gamma, beta), back_eval)

    mu = x.value.mean(axis=axes, keepdims=True)
    var = x.value.var(axis=axes, keepdims=True)
    count = int(np.prod([x.shape[a] for a in axes]))
    inv = 1.0 / np.sqrt(var + state.eps)
    xhat = (x.value - mu) * inv
    out = gamma.value * xhat + beta.value
    if update_stats:
        batch_mean = mu.reshape(-1, state.channels).mean(axis=0)
        unbiased = var * (count / (count - 1)) if count > 1 else var
        batch_var = unbiased.reshape(-1, state.channels).mean(axis=0)
        m = state.momentum
        state.running_mean = (1 - m) * state.running_mean + m * batch_mean
        state.running_var = (1 - m) * state.running_var + m * batch_var

    def back(g):
        gxhat = g * gamma.value
        gx = inv / count * (count * gxhat - gxhat.sum(axis=axes, keepdims=True)
                            - xhat * (gxhat * xhat).sum(axis=axes, keepdims=True))
        return gx, unbroadcast(g * xhat, gamma.shape), unbroadcast(g, beta.shape)

    return _node(out, (x, gamma, beta), back)


def dropout(x: Tensor, rate: float, train: bool, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout: identity in eval mode."""
    x = as_tensor(x)
    if not train or rate == 0.0:
        return x
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    out = x.value * keep

    def back(g):
        return (g * keep,)

    return _node(out, (x,), back)


# ---------------------------------------------------------------------------
# graph traversal

def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node.parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into every reachable leaf's ``grad``.

    Calling twice without zeroing doubles the leaf gradients.
    """
    if loss.value.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not np.isfinite(loss.value).all():
        raise FloatingPointError("backward called on a non-finite loss")
    if not loss.requires_grad:
        return
    order = _topological_order(loss)
    pending: dict[int, Array] = {id(loss): np.ones_like(loss.value)}
    for node in reversed(order):
        g = pending.pop(id(node), None)
        if g is None:
            continue
        if node.parents:
            node.grad = g
            parent_grads = node.backward_fn(g)
            for parent, pg in zip(node.parents, parent_grads):
                if not parent.requires_grad or pg is None:
                    continue
                key = id(parent)
                if key in pending:
                    pending[key] = pending[key] + pg
                else:
                    pending[key] = pg
        else:
            node.grad = node.grad + g


# ---------------------------------------------------------------------------
# parameters and optimizer

class ParamStore:
    """Named trainable parameters with deterministic initialization."""

    def __init__(self, rng_seed: int = 0):
        self.rng_seed = rng_seed
        self.rng = np.random.default_rng(rng_seed)
        self.params: dict[str, Tensor] = {}

    def add(self, name: str, value: Array) -> Tensor:
        if name in self.params:
            raise KeyError(f"duplicate parameter name {name!r}")
        t = Tensor(np.array(value, dtype=np.float64), requires_grad=True, name=name)
        self.params[name] = t
        return t

    def glorot(self, name: str, shape: tuple[int, ...], fan_in: int | None = None,
               fan_out: int | None = None) -> Tensor:
        fan_in = fan_in if fan_in is not None else shape[0]
        fan_out = fan_out if fan_out is not None else shape[-1]
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        return self.add(name, self.rng.uniform(-limit, limit, size=shape))

    def zeros(self, name: str, shape: tuple[int, ...]) -> Tensor:
        return self.add(name, np.zeros(shape))

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __iter__(self):
        return iter(self.params.items())

    def __len__(self) -> int:
        return len(self.params)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def snapshot(self) -> dict[str, Array]:
        return {k: p.value.copy() for k, p in self.params.items()}

    def load(self, values: dict[str, Array]) -> None:
        for k, v in values.items():
            if self.params[k].shape != np.shape(v):
                raise ValueError(f"shape mismatch loading {k!r}")
            self.params[k].value = np.array(v, dtype=np.float64)

    def to_json(self) -> str:
        return json.dumps({k: {"shape": list(p.shape), "values": p.value.ravel().tolist()}
                           for k, p in self.params.items()})

    def load_json(self, text: str) -> None:
        data = json.loads(text)
        self.load({k: np.array(d["values"]).reshape(d["shape"]) for k, d in data.items()})


@dataclass
class AdamWState:
    lr: float = 1e-3
    weight_decay: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[str, Array] = field(default_factory=dict)
    v: dict[str, Array] = field(default_factory=dict)


def adamw_step(params: ParamStore, state: AdamWState) -> None:
    """One AdamW update with decoupled weight decay. Gradients are left as is."""
    for name, p in params:
        if not np.isfinite(p.grad).all():
            raise FloatingPointError(f"non-finite gradient for parameter {name!r}")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    corr1 = 1.0 - b1 ** state.t
    corr2 = 1.0 - b2 ** state.t
    for name, p in params:
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.value)
            state.v[name] = np.zeros_like(p.value)
        v = state.v[name]
        m *= b1
        m += (1 - b1) * p.grad
        v *= b2
        v += (1 - b2) * p.grad * p.grad
        p.value = p.value * (1.0 - state.lr * state.weight_decay)
        p.value = p.value - state.lr * (m / corr1) / (np.sqrt(v / corr2) + state.eps)


# ---------------------------------------------------------------------------
# finite-difference checking

def numeric_grad(fn: Callable[[], float], x: Tensor, h: float = 1e-5) -> Array:
    """Central differences of the scalar ``fn()`` with respect to ``x.value``."""
    grad = np.zeros_like(x.value)
    flat = x.value.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = fn()
        flat[i] = orig - h
        down = fn()
        flat[i] = orig
        gflat[i] = (up - down) / (2 * h)
    return grad


def relative_error(analytic: Array, numeric: Array, floor: float = 1e-5) -> float:
    """Max entrywise ``|a - n| / max(|a|, |n|, floor)``.

    The floor keeps round-off in central differences (~1e-10 here) from
    dominating entries whose true gradient is zero.
    """
    if analytic.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))


def gradcheck(build: Callable[[], Tensor], inputs: Iterable[Tensor], h: float = 1e-5) -> float:
    """Compare backprop against central differences for every input.

    ``build`` must recompute the scalar output from the current input values.
    Returns the max relative error over all inputs.
    """
    inputs = list(inputs)
    for t in inputs:
        t.zero_grad()
    out = build()
    backward(out)
    worst = 0.0
    for t in inputs:
        num = numeric_grad(lambda: float(build().value), t, h)
        worst = max(worst, relative_error(t.grad, num))
    return worst
