"""Attention read-outs: ROI-to-ROI heatmap, ROI importance, temporal profiles."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .spatial import WindowAttentionRecord


@dataclass
class AttentionAggregate:
    heatmaps: np.ndarray  # (n_layers, N, N), unsymmetrized mean alpha
    roi_importance: np.ndarray  # (N,) from pooling weights
    incoming_importance: np.ndarray  # (N,) from incoming last-layer alpha mass
    temporal_profiles: dict[str, np.ndarray]  # subject id -> (T,)
    scope: str = "fold"

    def heatmap(self, layer: int = -1, symmetrize: bool = True) -> np.ndarray:
        H = self.heatmaps[layer]
        return (H + H.T) / 2 if symmetrize else H.copy()


def _require(records: Sequence) -> None:
    if len(records) == 0:
        raise ValueError("no attention records in scope")


def aggregate_heatmap(records: Sequence[WindowAttentionRecord], layer: int = -1,
                      symmetrize: bool = True) -> np.ndarray:
    """Entrywise mean of one layer's alpha over all records."""
    _require(records)
    H = np.mean([r.alphas[layer] for r in records], axis=0)
    return (H + H.T) / 2 if symmetrize else H


def roi_importance(records: Sequence[WindowAttentionRecord]) -> tuple[np.ndarray, np.ndarray]:
    """Mean pooling weight per ROI, renormalized to sum to one.

    Returns ``(scores, ranking)`` with ``ranking[0]`` the most important ROI.
    """
    _require(records)
    scores = np.mean([r.pool_weights for r in records], axis=0)
    scores = scores / scores.sum()
    return scores, rank_rois(scores)


def incoming_attention_importance(records: Sequence[WindowAttentionRecord],
                                  layer: int = -1) -> np.ndarray:
    """Alternative importance: mean attention mass each ROI receives."""
    _require(records)
    mass = np.mean([r.alphas[layer].sum(axis=0) for r in records], axis=0)
    return mass / mass.sum()


def rank_rois(scores: np.ndarray) -> np.ndarray:
    # descending, ties to the smaller index
    return np.argsort(-np.asarray(scores), kind="stable")


def temporal_profile(betas: Mapping[str, np.ndarray] | Sequence[np.ndarray]):
    """Stack per-subject window weights; returns ``(ids, matrix, column_mean)``."""
    if isinstance(betas, Mapping):
        ids, rows = list(betas.keys()), list(betas.values())
    else:
        rows = list(betas)
        ids = [str(i) for i in range(len(rows))]
    if not rows:
        raise ValueError("no temporal attention vectors in scope")
    lengths = {len(r) for r in rows}
    if len(lengths) != 1:
        raise ValueError(f"subjects disagree on window count: {sorted(lengths)}")
    M = np.vstack(rows)
    return ids, M, M.mean(axis=0)


def planted_hit_rate(scores: np.ndarray, planted: Sequence[int], k: int | None = None) -> float:
    """Fraction of the top-k ranked ROIs that lie in ``planted`` (k defaults to its size)."""
    planted = set(int(i) for i in planted)
    k = len(planted) if k is None else k
    top = rank_rois(scores)[:k]
    return len(planted.intersection(top.tolist())) / k


def aggregate_records(records: Sequence[WindowAttentionRecord],
                      betas: Mapping[str, np.ndarray], scope: str = "fold") -> AttentionAggregate:
    _require(records)
    n_layers = records[0].alphas.shape[0]
    heatmaps = np.stack([aggregate_heatmap(records, layer, symmetrize=False)
                         for layer in range(n_layers)])
    scores, _ = roi_importance(records)
    return AttentionAggregate(heatmaps, scores, incoming_attention_importance(records),
                              dict(betas), scope)


def merge_aggregates(parts: Sequence[AttentionAggregate], scope: str = "global") -> AttentionAggregate:
    """Average heatmaps and importances across parts; profiles are unioned."""
    _require(parts)
    profiles: dict[str, np.ndarray] = {}
    for p in parts:
        profiles.update(p.temporal_profiles)
    imp = np.mean([p.roi_importance for p in parts], axis=0)
    inc = np.mean([p.incoming_importance for p in parts], axis=0)
    return AttentionAggregate(np.mean([p.heatmaps for p in parts], axis=0), imp / imp.sum(),
                              inc / inc.sum(), profiles, scope)


def top_connections(H: np.ndarray, k: int = 20) -> list[tuple[int, int, float]]:
    """Strongest off-diagonal pairs (i < j) of a symmetric heatmap."""
    iu, ju = np.triu_indices(H.shape[0], k=1)
    vals = H[iu, ju]
    order = np.argsort(-vals, kind="stable")[:k]
    return [(int(iu[o]), int(ju[o]), float(vals[o])) for o in order]


def read_roi_names(path: str | Path) -> dict[int, str]:
    names = {}
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if len(row) >= 2 and row[0].strip().isdigit():
                names[int(row[0])] = row[1].strip()
    return names


def write_exports(agg: AttentionAggregate, out_dir: str | Path, layer: int = -1, top_k: int = 20,
                  roi_names: Mapping[int, str] | None = None) -> dict[str, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    names = roi_names or {}
    paths = {}

    H = agg.heatmap(layer, symmetrize=True)
    paths["heatmap"] = out_dir / "heatmap.csv"
    np.savetxt(paths["heatmap"], H, delimiter=",", fmt="%.17g")

    def write_importance(path: Path, scores: np.ndarray) -> None:
        rank = np.empty(len(scores), dtype=int)
        rank[rank_rois(scores)] = np.arange(1, len(scores) + 1)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            header = ["roi_index", "score", "rank"] + (["name"] if names else [])
            w.writerow(header)
            for i, s in enumerate(scores):
                row = [i, repr(float(s)), int(rank[i])]
                if names:
                    row.append(names.get(i, ""))
                w.writerow(row)

    paths["roi_importance"] = out_dir / "roi_importance.csv"
    write_importance(paths["roi_importance"], agg.roi_importance)
    paths["roi_importance_incoming"] = out_dir / "roi_importance_incoming_attention.csv"
    write_importance(paths["roi_importance_incoming"], agg.incoming_importance)

    ids, M, _ = temporal_profile(agg.temporal_profiles)
    paths["temporal_profile"] = out_dir / "temporal_profile.csv"
    with open(paths["temporal_profile"], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["subject"] + [f"beta_{t + 1}" for t in range(M.shape[1])])
        for sid, row in zip(ids, M):
            w.writerow([sid] + [repr(float(x)) for x in row])

    paths["top_connections"] = out_dir / "top_connections.csv"
    with open(paths["top_connections"], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["roi_i", "roi_j", "attention"] + (["name_i", "name_j"] if names else []))
        for i, j, v in top_connections(H, top_k):
            row = [i, j, repr(v)]
            if names:
                row += [names.get(i, ""), names.get(j, "")]
            w.writerow(row)
    return paths
