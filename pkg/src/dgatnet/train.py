"""Weighted cross-entropy, mini-batch training and early stopping."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import AdamWState, Tensor, adamw_step, backward
from .dfc import DynamicGraphSequence
from .model import DGATNet, ModelConfig

log = logging.getLogger(__name__)

PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    weight_decay: float = 1e-4
    batch_size: int = 16
    max_epochs: int = 300
    patience: int = 100
    min_epochs: int = 40
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.patience < 1:
            raise ValueError("patience must be at least 1")
        if self.min_epochs > self.max_epochs:
            raise ValueError("min_epochs cannot exceed max_epochs")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")


@dataclass
class TrainedModel:
    model: DGATNet
    best_epoch: int
    best_val_balacc: float
    curve: list[tuple[int, float, float]] = field(default_factory=list)  # epoch, loss, val

    def curve_csv(self) -> str:
        lines = ["epoch,train_loss,val_balacc"]
        lines += [f"{e},{loss:.17g},{val:.17g}" for e, loss, val in self.curve]
        return "\n".join(lines) + "\n"


def class_weights(labels) -> np.ndarray:
    """``w_c = n_total / (2 n_c)`` so both classes contribute equally."""
    y = np.asarray(labels, dtype=int)
    counts = np.bincount(y, minlength=2).astype(float)
    if (counts == 0).any():
        raise ValueError("both classes must be present to derive class weights")
    return len(y) / (2.0 * counts)


def weighted_ce_loss(probs: Tensor, labels, weights) -> Tensor:
    """Mean over the batch of ``-w[y] log p[y]``; p is clamped at 1e-12."""
    y = np.asarray(labels, dtype=int)
    w = np.asarray(weights, dtype=float)[y]
    picked = ad.index(probs, (np.arange(len(y)), y))
    if (picked.value < PROB_FLOOR).any():
        log.warning("true-class probability below %g clamped in cross-entropy", PROB_FLOOR)
    return ad.mul(ad.mean(ad.mul(ad.log(picked, floor=PROB_FLOOR), w)), -1.0)


def balanced_accuracy(labels, predictions) -> float:
    y, p = np.asarray(labels, dtype=int), np.asarray(predictions, dtype=int)
    recalls = [float((p[y == c] == c).mean()) for c in (0, 1) if (y == c).any()]
    return float(np.mean(recalls))


def stack_adjacency(seqs: list[DynamicGraphSequence]) -> np.ndarray:
    T = {s.T for s in seqs}
    if len(T) != 1:
        raise ValueError(f"sequences in one batch must share the window count, got {sorted(T)}")
    return np.stack([s.A for s in seqs]).astype(np.float64)


def _groups_by_length(seqs: list[DynamicGraphSequence], order) -> list[list[int]]:
    groups: dict[int, list[int]] = {}
    for i in order:
        groups.setdefault(seqs[i].T, []).append(i)
    return list(groups.values())


def predict(model: DGATNet, seqs: list[DynamicGraphSequence], keep_attention: bool = False,
            chunk: int = 64):
    """Eval-mode class probabilities (n, 2) and optionally attention read-outs."""
    probs = np.zeros((len(seqs), model.config.n_classes))
    attention = [None] * len(seqs)
    for group in _groups_by_length(seqs, range(len(seqs))):
        for start in range(0, len(group), chunk):
            idx = group[start:start + chunk]
            out = model.forward(stack_adjacency([seqs[i] for i in idx]), train=False,
                                subject_ids=[seqs[i].subject_id for i in idx],
                                keep_attention=keep_attention)
            probs[idx] = out.probs.value
            for j, i in enumerate(idx):
                if keep_attention:
                    attention[i] = out.attention[j]
    return (probs, attention) if keep_attention else probs


def train(train_seqs: list[DynamicGraphSequence], val_seqs: list[DynamicGraphSequence],
          cfg: TrainConfig, model_cfg: ModelConfig | None = None, seed: int = 0,
          model: DGATNet | None = None) -> TrainedModel:
    """Train a fresh replica for ``seed`` and return the best-validation snapshot.

    The snapshot is taken at the epoch with the highest validation balanced
    accuracy (earliest on ties).  After ``min_epochs`` training stops once
    ``patience`` epochs pass without improvement, or as soon as the best score
    is already perfect.
    """
    if not train_seqs or not val_seqs:
        raise ValueError("train and validation splits must be non-empty")
    y_train = np.array([s.label for s in train_seqs], dtype=int)
    y_val = np.array([s.label for s in val_seqs], dtype=int)
    weights = class_weights(y_train)
    n_rois = train_seqs[0].n_rois
    if model is None:
        model = DGATNet(n_rois, model_cfg, seed=seed)
    rng = np.random.default_rng([seed, 1])
    opt = AdamWState(lr=cfg.lr, weight_decay=cfg.weight_decay, beta1=cfg.beta1,
                     beta2=cfg.beta2, eps=cfg.eps)
    best_state = model.state_dict()
    best_epoch, best_score = 0, -np.inf
    curve = []
    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(len(train_seqs))
        total, count = 0.0, 0
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            for group in _groups_by_length(train_seqs, batch):
                adj = stack_adjacency([train_seqs[i] for i in group])
                model.store.zero_grad()
                out = model.forward(adj, train=True, rng=rng)
                loss = weighted_ce_loss(out.probs, y_train[group], weights)
                if not np.isfinite(loss.value):
                    raise FloatingPointError(
                        f"non-finite training loss at epoch {epoch} (seed {seed})")
                backward(loss)
                adamw_step(model.store, opt)
                total += float(loss.value) * len(group)
                count += len(group)
        val_pred = predict(model, val_seqs).argmax(axis=1)
        score = balanced_accuracy(y_val, val_pred)
        curve.append((epoch, total / count, score))
        if score > best_score:
            best_score, best_epoch = score, epoch
            best_state = model.state_dict()
        if epoch >= cfg.min_epochs:
            # a perfect score can never be beaten, so the snapshot is final
            if epoch - best_epoch >= cfg.patience or best_score >= 1.0:
                break
    model.load_state_dict(best_state)
    log.debug("seed %d: best epoch %d, val balanced accuracy %.3f", seed, best_epoch, best_score)
    return TrainedModel(model, best_epoch, float(best_score), curve)
