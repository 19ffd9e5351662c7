"""Subject records, CSV ingest/export and the planted-connectivity generator."""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np


class DataError(ValueError):
    """Raised for malformed or inconsistent subject data."""


@dataclass(frozen=True)
class SubjectRecord:
    id: str
    series: np.ndarray  # (L, N)
    label: int

    def __post_init__(self):
        series = np.asarray(self.series, dtype=np.float64)
        if series.ndim != 2:
            raise DataError(f"subject {self.id}: series must be 2-D, got shape {series.shape}")
        if series.shape[1] < 2:
            raise DataError(f"subject {self.id}: need at least 2 ROIs")
        if not np.isfinite(series).all():
            raise DataError(f"subject {self.id}: non-finite value in series")
        if self.label not in (0, 1):
            raise DataError(f"subject {self.id}: label must be 0 or 1, got {self.label!r}")
        object.__setattr__(self, "series", series)

    @property
    def length(self) -> int:
        return self.series.shape[0]

    @property
    def n_rois(self) -> int:
        return self.series.shape[1]


@dataclass
class Dataset:
    subjects: list[SubjectRecord]
    n_rois: int

    def __post_init__(self):
        for s in self.subjects:
            if s.n_rois != self.n_rois:
                raise DataError(
                    f"subject {s.id} has {s.n_rois} ROIs, dataset expects {self.n_rois}")

    def __len__(self) -> int:
        return len(self.subjects)

    @property
    def labels(self) -> np.ndarray:
        return np.array([s.label for s in self.subjects], dtype=int)

    @property
    def ids(self) -> list[str]:
        return [s.id for s in self.subjects]

    @property
    def class_counts(self) -> tuple[int, int]:
        y = self.labels
        return int((y == 0).sum()), int((y == 1).sum())

    def subset(self, indices) -> "Dataset":
        return Dataset([self.subjects[i] for i in indices], self.n_rois)


def read_labels(labels_path: str | Path) -> list[tuple[str, int]]:
    rows = []
    with open(labels_path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or not "".join(row).strip():
                continue
            if len(row) != 2:
                raise DataError(f"{labels_path}:{lineno}: expected 'id,label'")
            sid, raw = row[0].strip(), row[1].strip()
            if lineno == 1 and raw.lower() == "label":
                continue
            try:
                label = int(raw)
            except ValueError:
                raise DataError(f"{labels_path}:{lineno}: label {raw!r} is not 0 or 1") from None
            if label not in (0, 1):
                raise DataError(f"{labels_path}:{lineno}: label {label} is not 0 or 1")
            rows.append((sid, label))
    return rows


def read_series(path: str | Path) -> np.ndarray:
    try:
        series = np.loadtxt(path, delimiter=",", ndmin=2, dtype=np.float64)
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from None
    if not np.isfinite(series).all():
        raise DataError(f"{path}: non-finite value")
    return series


def load_dataset(dir_path: str | Path, labels_path: str | Path | None = None) -> Dataset:
    """Load ``<dir>/<id>.csv`` files in the order given by the labels file.

    ``labels_path`` defaults to ``<dir>/labels.csv``.
    """
    dir_path = Path(dir_path)
    labels_path = Path(labels_path) if labels_path is not None else dir_path / "labels.csv"
    entries = read_labels(labels_path)
    if not entries:
        raise DataError(f"{labels_path}: no subjects listed")
    available = {p.stem for p in dir_path.glob("*.csv") if p.resolve() != labels_path.resolve()}
    listed = {sid for sid, _ in entries}
    unlisted = sorted(available - listed)
    if unlisted:
        raise DataError(f"unknown subject id(s) with no label: {', '.join(unlisted)}")
    subjects = []
    n_rois = None
    for sid, label in entries:
        path = dir_path / f"{sid}.csv"
        if not path.exists():
            raise DataError(f"labels list subject {sid!r} but {path} does not exist")
        series = read_series(path)
        if n_rois is None:
            n_rois = series.shape[1]
        elif series.shape[1] != n_rois:
            raise DataError(
                f"dimension mismatch: {path} has {series.shape[1]} ROIs, expected {n_rois}")
        subjects.append(SubjectRecord(sid, series, label))
    return Dataset(subjects, int(n_rois))


def write_dataset(dataset: Dataset, dir_path: str | Path) -> None:
    dir_path = Path(dir_path)
    dir_path.mkdir(parents=True, exist_ok=True)
    for s in dataset.subjects:
        np.savetxt(dir_path / f"{s.id}.csv", s.series, delimiter=",", fmt="%.17g")
    with open(dir_path / "labels.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        for s in dataset.subjects:
            writer.writerow([s.id, s.label])


@dataclass(frozen=True)
class SyntheticSpec:
    """Recipe for a two-class dataset with a planted connectivity difference.

    ROIs are split into consecutive blocks of ``block_size``; every full block
    has latent within-block correlation ``base_coupling``.  In class 1 the
    second block (the planted block) couples with ``base_coupling +
    coupling_delta`` from time index ``floor(onset_fraction * length)`` on.
    Independent Gaussian noise of s.d. ``noise_sd`` is added to every ROI.
    """

    n_subjects_per_class: int = 30
    n_rois: int = 32
    length: int = 232
    block_size: int = 8
    coupling_delta: float = 0.6
    noise_sd: float = 1.0
    rng_seed: int = 7
    base_coupling: float = 0.3
    onset_fraction: float = 0.0

    def __post_init__(self):
        if self.n_subjects_per_class < 1:
            raise DataError("n_subjects_per_class must be positive")
        if self.n_rois < 2:
            raise DataError("n_rois must be at least 2")
        if not 1 <= self.block_size <= self.n_rois:
            raise DataError("block_size must be in [1, n_rois]")
        if 2 * self.block_size > self.n_rois:
            raise DataError("need at least two blocks to plant a difference in the second")
        if not 0.0 <= self.coupling_delta <= 1.0:
            raise DataError("coupling_delta must lie in [0, 1]")
        if self.noise_sd <= 0:
            raise DataError("noise_sd must be positive")
        if not 0.0 <= self.onset_fraction < 1.0:
            raise DataError("onset_fraction must lie in [0, 1)")

    @property
    def planted_rois(self) -> np.ndarray:
        return np.arange(self.block_size, 2 * self.block_size)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)


def block_covariance(spec: SyntheticSpec, planted: bool) -> np.ndarray:
    """Covariance of the observed signal: block correlation plus noise variance."""
    n, b = spec.n_rois, spec.block_size
    latent = np.eye(n)
    for start in range(0, n - b + 1, b):
        rho = spec.base_coupling
        if planted and start == b:
            rho += spec.coupling_delta
        blk = slice(start, start + b)
        latent[blk, blk] = rho
        latent[range(start, start + b), range(start, start + b)] = 1.0
    return latent + spec.noise_sd ** 2 * np.eye(n)


def analytic_correlation(spec: SyntheticSpec, planted: bool) -> np.ndarray:
    cov = block_covariance(spec, planted)
    sd = np.sqrt(np.diag(cov))
    return cov / np.outer(sd, sd)


def _cholesky(cov: np.ndarray) -> np.ndarray:
    w = np.linalg.eigvalsh(cov)
    if w.min() <= 0:
        raise DataError(f"implied covariance is not positive definite (min eigenvalue {w.min():.3g})")
    return np.linalg.cholesky(cov)


def generate_synthetic(spec: SyntheticSpec) -> Dataset:
    """Draw the dataset; a pure function of ``spec``.

    Latent block correlations outside ``(-1/(block_size-1), 1]`` are rejected
    as non positive definite.
    """
    b = spec.block_size
    for rho in (spec.base_coupling, spec.base_coupling + spec.coupling_delta):
        if rho > 1.0 or (b > 1 and rho <= -1.0 / (b - 1)):
            raise DataError(f"block correlation {rho} gives a non positive definite covariance")
    chol0 = _cholesky(block_covariance(spec, planted=False))
    chol1 = _cholesky(block_covariance(spec, planted=True))
    onset = int(np.floor(spec.onset_fraction * spec.length))
    rng = np.random.default_rng(spec.rng_seed)
    width = len(str(2 * spec.n_subjects_per_class - 1))
    subjects = []
    for i in range(2 * spec.n_subjects_per_class):
        label = i % 2
        white = rng.standard_normal((spec.length, spec.n_rois))
        series = white @ chol0.T
        if label == 1:
            series[onset:] = white[onset:] @ chol1.T
        subjects.append(SubjectRecord(f"sub{i:0{width}d}", series, label))
    return Dataset(subjects, spec.n_rois)


def write_synthetic(spec: SyntheticSpec, dir_path: str | Path) -> Dataset:
    dataset = generate_synthetic(spec)
    write_dataset(dataset, dir_path)
    Path(dir_path, "spec.json").write_text(spec.to_json())
    return dataset
