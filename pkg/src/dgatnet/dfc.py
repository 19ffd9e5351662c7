"""Sliding-window Pearson connectivity and thresholded window graphs."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import Dataset, SubjectRecord


@dataclass(frozen=True)
class WindowConfig:
    w: int = 40
    s: int = 20

    def __post_init__(self):
        if self.w < 2:
            raise ValueError(f"window length must be >= 2, got {self.w}")
        if self.s < 1:
            raise ValueError(f"window step must be >= 1, got {self.s}")


@dataclass(frozen=True)
class GraphConfig:
    keep_fraction: float = 0.30
    # "window": threshold each window on its own; "subject": one threshold per
    # subject pooled over all its windows.
    scope: str = "window"

    def __post_init__(self):
        if not 0.0 < self.keep_fraction <= 1.0:
            raise ValueError(f"keep_fraction must be in (0, 1], got {self.keep_fraction}")
        if self.scope not in ("window", "subject"):
            raise ValueError(f"unknown threshold scope {self.scope!r}")


@dataclass
class DynamicGraphSequence:
    subject_id: str
    F: np.ndarray  # (T, N, N) correlation matrices
    A: np.ndarray  # (T, N, N) binary adjacency with self loops
    label: int | None = None
    starts: list[int] = field(default_factory=list)

    @property
    def T(self) -> int:
        return self.A.shape[0]

    @property
    def n_rois(self) -> int:
        return self.A.shape[1]

    def graphs_only(self) -> "DynamicGraphSequence":
        """Copy without the correlation matrices (all the model consumes is A)."""
        return DynamicGraphSequence(self.subject_id, np.empty((self.T, 0, 0)), self.A,
                                    self.label, list(self.starts))

    @property
    def windows(self) -> list[tuple[np.ndarray, np.ndarray]]:
        return list(zip(self.F, self.A))

    def to_json(self) -> str:
        return json.dumps({
            "subject_id": self.subject_id,
            "T": self.T,
            "windows": [{"F": f.ravel().tolist(), "A": a.astype(int).ravel().tolist()}
                        for f, a in self.windows],
        })


def window_starts(L: int, cfg: WindowConfig) -> list[int]:
    if cfg.w > L:
        raise ValueError(f"window length {cfg.w} exceeds series length {L}")
    return list(range(0, L - cfg.w + 1, cfg.s))


def pearson_matrix(window: np.ndarray) -> np.ndarray:
    """Sample Pearson correlation between columns; zero-variance columns get 0."""
    x = np.asarray(window, dtype=np.float64)
    if x.shape[0] < 2:
        raise ValueError("need at least 2 time points for a correlation")
    xc = x - x.mean(axis=0)
    norms = np.sqrt((xc * xc).sum(axis=0))
    # relative guard so that float noise on a constant column still counts as flat
    flat = norms <= 1e-12 * np.maximum(np.abs(x).max(axis=0), 1.0)
    scale = np.where(flat, 1.0, norms)
    z = xc / scale
    F = z.T @ z
    F[flat, :] = 0.0
    F[:, flat] = 0.0
    np.clip(F, -1.0, 1.0, out=F)
    F = (F + F.T) / 2
    np.fill_diagonal(F, 1.0)
    return F


def edge_budget(n: int, keep_fraction: float) -> int:
    pairs = n * (n - 1) // 2
    # round before ceiling so 0.3 * 6 is 2, not 3
    return min(pairs, math.ceil(round(keep_fraction * pairs, 9)))


def threshold_graph(F: np.ndarray, cfg: GraphConfig) -> np.ndarray:
    """Keep the k strongest off-diagonal |F_ij| pairs plus all self loops.

    Ties at the cutoff go to the lexicographically smaller (i, j).
    """
    n = F.shape[0]
    iu, ju = np.triu_indices(n, k=1)
    k = edge_budget(n, cfg.keep_fraction)
    strength = np.abs(F[iu, ju])
    # triu_indices is already lexicographic, so a stable sort keeps the tie rule
    order = np.argsort(-strength, kind="stable")[:k]
    A = np.eye(n, dtype=np.int8)
    A[iu[order], ju[order]] = 1
    A[ju[order], iu[order]] = 1
    return A


def _subject_threshold_graphs(F: np.ndarray, cfg: GraphConfig) -> np.ndarray:
    T, n, _ = F.shape
    iu, ju = np.triu_indices(n, k=1)
    k = edge_budget(n, cfg.keep_fraction) * T
    strength = np.abs(F[:, iu, ju]).ravel()
    order = np.argsort(-strength, kind="stable")[:k]
    keep = np.zeros(strength.size, dtype=bool)
    keep[order] = True
    keep = keep.reshape(T, -1)
    A = np.repeat(np.eye(n, dtype=np.int8)[None], T, axis=0)
    for t in range(T):
        A[t, iu[keep[t]], ju[keep[t]]] = 1
        A[t, ju[keep[t]], iu[keep[t]]] = 1
    return A


def extract_sequence(subject: SubjectRecord, wcfg: WindowConfig,
                     gcfg: GraphConfig) -> DynamicGraphSequence:
    starts = window_starts(subject.length, wcfg)
    F = np.stack([pearson_matrix(subject.series[t:t + wcfg.w]) for t in starts])
    if gcfg.scope == "window":
        A = np.stack([threshold_graph(f, gcfg) for f in F])
    else:
        A = _subject_threshold_graphs(F, gcfg)
    return DynamicGraphSequence(subject.id, F, A, subject.label, starts)


def static_fc(subject: SubjectRecord, gcfg: GraphConfig) -> DynamicGraphSequence:
    return extract_sequence(subject, WindowConfig(w=subject.length, s=1), gcfg)


def extract_dataset(dataset: Dataset, wcfg: WindowConfig, gcfg: GraphConfig,
                    static: bool = False) -> list[DynamicGraphSequence]:
    if static:
        return [static_fc(s, gcfg) for s in dataset.subjects]
    return [extract_sequence(s, wcfg, gcfg) for s in dataset.subjects]


def write_sequences(seqs: list[DynamicGraphSequence], out_dir: str | Path) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for seq in seqs:
        (out_dir / f"{seq.subject_id}.json").write_text(seq.to_json())
