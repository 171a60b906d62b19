"""Synthetic domain-shift benchmark generation and dataset file I/O.

Classes are isotropic Gaussians with means on a circle in the first two
coordinates; the target domain rotates that circle and translates every mean,
giving a controllable initial pseudo-label error rate. CSV round-trips are
lossless at 9 significant digits.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError, InvalidArgumentError

FLOAT_FORMAT = "%.9g"


@dataclass
class LabeledDataset:
    """Target or source samples with ground truth; ids are unique integers."""

    ids: np.ndarray  # (n,) int64
    features: np.ndarray  # (n, D) float64
    labels: np.ndarray  # (n,) int64

    def __post_init__(self) -> None:
        self.ids = np.asarray(self.ids, dtype=np.int64)
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        n = self.ids.shape[0]
        if self.features.ndim != 2 or self.features.shape[0] != n or self.labels.shape[0] != n:
            raise InvalidArgumentError("inconsistent dataset field sizes")
        if len(np.unique(self.ids)) != n:
            raise InvalidArgumentError("dataset ids must be unique")
        if n and self.labels.min() < 0:
            raise InvalidArgumentError("labels must be nonnegative")

    @property
    def n_samples(self) -> int:
        return self.ids.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]


def class_means(n_categories: int, feature_dim: int, separation: float) -> np.ndarray:
    """Class means on a circle of radius ``separation`` in the first two axes."""
    angles = 2.0 * math.pi * np.arange(n_categories) / n_categories
    means = np.zeros((n_categories, feature_dim), dtype=np.float64)
    means[:, 0] = separation * np.cos(angles)
    means[:, 1] = separation * np.sin(angles)
    return means


def gen_shifted_gaussians(
    n_categories: int,
    feature_dim: int,
    n_per_class: int,
    class_separation: float,
    target_shift: np.ndarray,
    target_rotation_deg: float,
    noise_sigma: float,
    seed: int,
) -> tuple[LabeledDataset, LabeledDataset]:
    """Source and target datasets with identical class structure but shifted means.

    Target class means are the source means rotated about the origin in the
    first two coordinates by ``target_rotation_deg`` and translated by
    ``target_shift``. Deterministic per seed.
    """
    if n_categories < 2:
        raise InvalidArgumentError(f"n_categories must be >= 2, got {n_categories}")
    if feature_dim < 2:
        raise InvalidArgumentError(f"feature_dim must be >= 2, got {feature_dim}")
    if n_per_class < 1:
        raise InvalidArgumentError(f"n_per_class must be >= 1, got {n_per_class}")
    if noise_sigma <= 0:
        raise InvalidArgumentError(f"noise_sigma must be > 0, got {noise_sigma}")
    shift = np.asarray(target_shift, dtype=np.float64)
    if shift.shape != (feature_dim,):
        raise InvalidArgumentError(
            f"target_shift must have dimension {feature_dim}, got shape {shift.shape}"
        )

    rng = np.random.default_rng(seed)
    source_means = class_means(n_categories, feature_dim, class_separation)
    theta = math.radians(target_rotation_deg)
    rot = np.array([[math.cos(theta), -math.sin(theta)], [math.sin(theta), math.cos(theta)]])
    target_means = source_means.copy()
    target_means[:, :2] = source_means[:, :2] @ rot.T
    target_means = target_means + shift

    def draw(means: np.ndarray) -> LabeledDataset:
        feats = np.concatenate(
            [
                means[c] + noise_sigma * rng.standard_normal((n_per_class, feature_dim))
                for c in range(n_categories)
            ]
        )
        labels = np.repeat(np.arange(n_categories), n_per_class)
        order = rng.permutation(len(labels))
        return LabeledDataset(
            ids=np.arange(len(labels), dtype=np.int64),
            features=feats[order],
            labels=labels[order],
        )

    return draw(source_means), draw(target_means)


def dataset_header(feature_dim: int) -> list[str]:
    return ["id"] + [f"f{i}" for i in range(feature_dim)] + ["label"]


def write_dataset(dataset: LabeledDataset, path: str | Path) -> None:
    """Write the dataset CSV with header ``id,f0,...,f{D-1},label``."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(dataset_header(dataset.feature_dim))
        for i in range(dataset.n_samples):
            row = [str(int(dataset.ids[i]))]
            row += [FLOAT_FORMAT % v for v in dataset.features[i]]
            row.append(str(int(dataset.labels[i])))
            writer.writerow(row)


def read_dataset(path: str | Path, n_categories: int | None = None) -> LabeledDataset:
    """Parse a dataset CSV; errors carry the offending 1-based line number."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError("missing header", line=1) from None
        if len(header) < 3 or header[0] != "id" or header[-1] != "label":
            raise DataError(f"unexpected header {header!r}", line=1)
        feature_dim = len(header) - 2
        if header != dataset_header(feature_dim):
            raise DataError(f"unexpected header {header!r}", line=1)
        ids: list[int] = []
        feats: list[list[float]] = []
        labels: list[int] = []
        seen: set[int] = set()
        for line_no, row in enumerate(reader, start=2):
            if len(row) != feature_dim + 2:
                raise DataError(
                    f"expected {feature_dim + 2} columns, got {len(row)}", line=line_no
                )
            try:
                sample_id = int(row[0])
                values = [float(v) for v in row[1:-1]]
                label = int(row[-1])
            except ValueError as exc:
                raise DataError(f"unparseable value ({exc})", line=line_no) from None
            if sample_id in seen:
                raise DataError(f"duplicate id {sample_id}", line=line_no)
            seen.add(sample_id)
            if label < 0:
                raise DataError(f"negative label {label}", line=line_no)
            if n_categories is not None and label >= n_categories:
                raise DataError(
                    f"label {label} >= declared categories {n_categories}", line=line_no
                )
            if not all(math.isfinite(v) for v in values):
                raise DataError("non-finite feature value", line=line_no)
            ids.append(sample_id)
            feats.append(values)
            labels.append(label)
    return LabeledDataset(
        ids=np.asarray(ids, dtype=np.int64),
        features=np.asarray(feats, dtype=np.float64).reshape(len(ids), feature_dim),
        labels=np.asarray(labels, dtype=np.int64),
    )


def split_by_initial_correctness(target, preds) -> tuple[np.ndarray, np.ndarray]:
    """Partition target ids by whether the exported prediction was right.

    ``preds`` must cover every target id; returns (ids_correct, ids_incorrect).
    """
    yhat, _ = preds.aligned_to(target.ids)
    correct = yhat == target.labels
    return target.ids[correct], target.ids[~correct]
