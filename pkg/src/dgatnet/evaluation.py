"""Stratified cross-validation with seed ensembles, metrics and the leakage audit."""
from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .dfc import DynamicGraphSequence
from .interpret import AttentionAggregate, aggregate_records, merge_aggregates
from .model import ModelConfig
from .train import TrainConfig, balanced_accuracy, predict, train

log = logging.getLogger(__name__)

METRIC_NAMES = ("balanced_accuracy", "precision", "recall", "f1", "auc")


@dataclass
class FoldPlan:
    folds: list[list[int]]
    plan_seed: int

    @property
    def k(self) -> int:
        return len(self.folds)

    def train_indices(self, fold: int) -> list[int]:
        return sorted(i for f, idx in enumerate(self.folds) if f != fold for i in idx)


@dataclass
class Metrics:
    balanced_accuracy: float
    precision: float
    recall: float
    f1: float
    auc: float | None
    sensitivity: float
    specificity: float
    precision_positive: float
    recall_positive: float
    f1_positive: float
    average: str = "macro"

    def as_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass(frozen=True)
class EvalConfig:
    k: int = 10
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    plan_seed: int = 0
    val_fraction: float = 0.1
    # "inner": stratified split of the training folds; "test": the held-out fold
    # itself, which leaks and exists only for reproduction attempts
    val_source: str = "inner"
    average: str = "macro"
    jobs: int = 1

    def __post_init__(self):
        if self.k < 2:
            raise ValueError("need at least 2 folds")
        if not self.seeds:
            raise ValueError("need at least one seed")
        if self.val_source not in ("inner", "test"):
            raise ValueError(f"unknown validation source {self.val_source!r}")
        if self.average not in ("macro", "positive"):
            raise ValueError(f"unknown averaging mode {self.average!r}")
        if not 0.0 < self.val_fraction < 1.0:
            raise ValueError("val_fraction must be in (0, 1)")


@dataclass
class SeedRun:
    fold: int
    seed: int
    train_idx: list[int]
    val_idx: list[int]
    probs: np.ndarray  # (n_test, 2)
    best_epoch: int
    best_val_balacc: float
    curve_csv: str
    attention: AttentionAggregate | None = None


@dataclass
class FoldReport:
    fold: int
    test_idx: list[int]
    subject_ids: list[str]
    labels: np.ndarray
    seeds: list[int]
    seed_probs: np.ndarray  # (n_seeds, n_test, 2)
    seed_labels: np.ndarray  # (n_seeds, n_test)
    ensemble_labels: np.ndarray
    mean_probs: np.ndarray  # (n_test, 2)
    metrics: Metrics
    seed_metrics: list[Metrics]
    runs: list[SeedRun] = field(default_factory=list)
    attention: AttentionAggregate | None = None


# ---------------------------------------------------------------------------
# folds

def make_folds(labels, k: int = 10, plan_seed: int = 0) -> FoldPlan:
    """Stratified k-fold plan.

    Each class is shuffled with the plan seed, the classes are concatenated and
    position p goes to fold p mod k.  Fold sizes and per-class counts then
    differ by at most one across folds.
    """
    y = np.asarray(labels, dtype=int)
    classes, counts = np.unique(y, return_counts=True)
    if (counts < k).any():
        small = classes[counts < k]
        raise ValueError(f"class {small.tolist()} has fewer than k={k} members")
    rng = np.random.default_rng(plan_seed)
    folds: list[list[int]] = [[] for _ in range(k)]
    pos = 0
    for c in classes:
        members = np.flatnonzero(y == c)
        for i in rng.permutation(members):
            folds[pos % k].append(int(i))
            pos += 1
    return FoldPlan([sorted(f) for f in folds], plan_seed)


def inner_split(indices, labels, val_fraction: float, seed) -> tuple[list[int], list[int]]:
    """Stratified train/validation split of ``indices`` (at least one of each class in val)."""
    indices = np.asarray(indices, dtype=int)
    y = np.asarray(labels, dtype=int)[indices]
    rng = np.random.default_rng(seed)
    val = []
    for c in np.unique(y):
        members = indices[y == c]
        n_val = max(1, int(round(val_fraction * len(members))))
        if n_val >= len(members):
            raise ValueError(f"class {c} too small for an inner validation split")
        val.extend(rng.permutation(members)[:n_val].tolist())
    val_set = set(val)
    return sorted(int(i) for i in indices if i not in val_set), sorted(val)


# ---------------------------------------------------------------------------
# ensembling and metrics

def ensemble_predict(seed_probs) -> tuple[int, np.ndarray]:
    """Majority vote of per-seed argmax labels plus the mean probability row.

    An argmax tie inside one seed's row counts as a vote for class 0.
    """
    P = np.asarray(seed_probs, dtype=float)
    votes = P.argmax(axis=1)
    ones = int(votes.sum())
    zeros = len(votes) - ones
    if ones == zeros:
        raise ValueError("even number of voters produced a tie")
    return int(ones > zeros), P.mean(axis=0)


def auc_score(labels, scores) -> float | None:
    """Mann-Whitney AUC with tied scores counted as one half; None if one class."""
    y = np.asarray(labels, dtype=int)
    s = np.asarray(scores, dtype=float)
    n1 = int((y == 1).sum())
    n0 = len(y) - n1
    if n0 == 0 or n1 == 0:
        return None
    ranks = rankdata(s)
    return float((ranks[y == 1].sum() - n1 * (n1 + 1) / 2) / (n0 * n1))


def _safe_div(a: float, b: float) -> float:
    return a / b if b else 0.0


def compute_metrics(labels, predictions, mean_probs=None, average: str = "macro") -> Metrics:
    """Binary metrics with class 1 as the case class.

    ``mean_probs`` is either the (n, 2) probability matrix or the case-class
    column; it only drives the AUC.
    """
    y = np.asarray(labels, dtype=int)
    p = np.asarray(predictions, dtype=int)
    if y.size == 0:
        raise ValueError("no predictions to score")
    tp = int(((p == 1) & (y == 1)).sum())
    tn = int(((p == 0) & (y == 0)).sum())
    fp = int(((p == 1) & (y == 0)).sum())
    fn = int(((p == 0) & (y == 1)).sum())
    sens = _safe_div(tp, tp + fn)
    spec = _safe_div(tn, tn + fp)
    prec1, prec0 = _safe_div(tp, tp + fp), _safe_div(tn, tn + fn)
    f1_1 = _safe_div(2 * prec1 * sens, prec1 + sens)
    f1_0 = _safe_div(2 * prec0 * spec, prec0 + spec)
    present = [c for c in (0, 1) if (y == c).any()]
    balacc = float(np.mean([sens if c == 1 else spec for c in present]))
    auc = None
    if mean_probs is not None:
        scores = np.asarray(mean_probs, dtype=float)
        if scores.ndim == 2:
            scores = scores[:, 1]
        auc = auc_score(y, scores)
    if average == "macro":
        precision, recall, f1 = (prec0 + prec1) / 2, (spec + sens) / 2, (f1_0 + f1_1) / 2
    else:
        precision, recall, f1 = prec1, sens, f1_1
    return Metrics(balacc, precision, recall, f1, auc, sens, spec, prec1, sens, f1_1, average)


def summarize(metrics: list[Metrics]) -> dict[str, dict[str, float | int | None]]:
    """Mean and sample standard deviation (n - 1) across folds per metric."""
    out = {}
    for name in METRIC_NAMES + ("sensitivity", "specificity"):
        vals = np.array([getattr(m, name) for m in metrics if getattr(m, name) is not None], float)
        out[name] = {
            "mean": float(vals.mean()) if vals.size else None,
            "sd": float(vals.std(ddof=1)) if vals.size > 1 else (0.0 if vals.size else None),
            "n": int(vals.size),
        }
    return out


# ---------------------------------------------------------------------------
# cross-validation driver

def _fit_one(job):
    (fold, seed, train_seqs, val_seqs, test_seqs, train_idx, val_idx,
     train_cfg, model_cfg, keep_attention) = job
    fitted = train(train_seqs, val_seqs, train_cfg, model_cfg, seed=seed)
    if keep_attention:
        probs, attn = predict(fitted.model, test_seqs, keep_attention=True)
        records = [r for a in attn for r in a.records]
        agg = aggregate_records(records, {a.subject_id: a.beta for a in attn})
    else:
        probs, agg = predict(fitted.model, test_seqs), None
    return SeedRun(fold, seed, train_idx, val_idx, probs, fitted.best_epoch,
                   fitted.best_val_balacc, fitted.curve_csv(), agg)


def _mean_seed_attention(runs: list[SeedRun]) -> AttentionAggregate | None:
    parts = [r.attention for r in runs if r.attention is not None]
    if not parts:
        return None
    merged = merge_aggregates(parts, scope="fold")
    ids = list(parts[0].temporal_profiles)
    merged.temporal_profiles = {sid: np.mean([p.temporal_profiles[sid] for p in parts], axis=0)
                                for sid in ids}
    return merged


def run_cv(seqs: list[DynamicGraphSequence], eval_cfg: EvalConfig | None = None,
           train_cfg: TrainConfig | None = None, model_cfg: ModelConfig | None = None,
           plan: FoldPlan | None = None, keep_attention: bool = True):
    """Train ``len(seeds)`` replicas per fold and score the ensemble on each held-out fold.

    Returns ``(reports, summary)``.
    """
    eval_cfg = eval_cfg or EvalConfig()
    train_cfg = train_cfg or TrainConfig()
    labels = np.array([s.label for s in seqs], dtype=int)
    if plan is None:
        plan = make_folds(labels, eval_cfg.k, eval_cfg.plan_seed)
    light = [s.graphs_only() for s in seqs]
    jobs = []
    for f, test_idx in enumerate(plan.folds):
        rest = plan.train_indices(f)
        if eval_cfg.val_source == "inner":
            tr_idx, va_idx = inner_split(rest, labels, eval_cfg.val_fraction,
                                         [eval_cfg.plan_seed, f, 2])
        else:
            tr_idx, va_idx = rest, list(test_idx)
        for seed in eval_cfg.seeds:
            jobs.append((f, seed, [light[i] for i in tr_idx], [light[i] for i in va_idx],
                         [light[i] for i in test_idx], tr_idx, va_idx, train_cfg, model_cfg,
                         keep_attention))
    if eval_cfg.jobs > 1:
        with ProcessPoolExecutor(max_workers=eval_cfg.jobs) as pool:
            runs = list(pool.map(_fit_one, jobs))
    else:
        runs = []
        for job in jobs:
            try:
                runs.append(_fit_one(job))
            except Exception as exc:
                raise RuntimeError(f"fold {job[0]} seed {job[1]} failed: {exc}") from exc
            log.info("fold %d seed %d done (best epoch %d)", job[0], job[1], runs[-1].best_epoch)

    reports = []
    n_seeds = len(eval_cfg.seeds)
    for f, test_idx in enumerate(plan.folds):
        fold_runs = runs[f * n_seeds:(f + 1) * n_seeds]
        seed_probs = np.stack([r.probs for r in fold_runs])
        seed_labels = seed_probs.argmax(axis=2)
        y = labels[test_idx]
        ens, means = [], []
        for j in range(len(test_idx)):
            lab, mp = ensemble_predict(seed_probs[:, j])
            ens.append(lab)
            means.append(mp)
        ens, means = np.array(ens), np.array(means)
        metrics = compute_metrics(y, ens, means, eval_cfg.average)
        seed_metrics = [compute_metrics(y, seed_labels[i], seed_probs[i], eval_cfg.average)
                        for i in range(n_seeds)]
        reports.append(FoldReport(f, list(test_idx), [seqs[i].subject_id for i in test_idx], y,
                                  list(eval_cfg.seeds), seed_probs, seed_labels, ens, means,
                                  metrics, seed_metrics, fold_runs, _mean_seed_attention(fold_runs)))
    return reports, build_summary(reports, plan, eval_cfg)


def build_summary(reports: list[FoldReport], plan: FoldPlan, eval_cfg: EvalConfig) -> dict:
    all_y = np.concatenate([r.labels for r in reports])
    all_pred = np.concatenate([r.ensemble_labels for r in reports])
    all_prob = np.concatenate([r.mean_probs for r in reports])
    return {
        "k": plan.k,
        "plan_seed": plan.plan_seed,
        "seeds": list(eval_cfg.seeds),
        "averaging": eval_cfg.average,
        "sd_convention": "sample (n-1) across folds",
        "aggregate": summarize([r.metrics for r in reports]),
        "single_seed": summarize([r.seed_metrics[0] for r in reports]),
        "pooled": compute_metrics(all_y, all_pred, all_prob, eval_cfg.average).as_dict(),
        "folds": [{
            "fold": r.fold,
            "n_test": len(r.test_idx),
            "metrics": r.metrics.as_dict(),
            "single_seed_metrics": r.seed_metrics[0].as_dict(),
            "best_epochs": [run.best_epoch for run in r.runs],
        } for r in reports],
    }


def leakage_audit(plan: FoldPlan, reports: list[FoldReport]) -> list[str]:
    """Return a description of every test subject found in a training or validation split."""
    problems = []
    covered = sorted(i for f in plan.folds for i in f)
    if len(covered) != len(set(covered)):
        problems.append("folds overlap")
    for r in reports:
        test = set(r.test_idx)
        for run in r.runs:
            for name, split in (("train", run.train_idx), ("validation", run.val_idx)):
                leaked = test.intersection(split)
                if leaked:
                    problems.append(f"fold {r.fold} seed {run.seed}: test subjects "
                                    f"{sorted(leaked)} in {name} split")
            if set(run.train_idx) & set(run.val_idx):
                problems.append(f"fold {r.fold} seed {run.seed}: train/validation overlap")
    return problems


def global_attention(reports: list[FoldReport]) -> AttentionAggregate:
    parts = [r.attention for r in reports if r.attention is not None]
    return merge_aggregates(parts, scope="global")
