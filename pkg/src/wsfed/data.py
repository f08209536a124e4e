"""Datasets and Dirichlet non-i.i.d. client partitioning."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    is_train: np.ndarray

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.is_train = np.asarray(self.is_train, dtype=bool)
        n = self.features.shape[0]
        if self.features.ndim != 2:
            raise ValueError("features must be a matrix")
        if self.labels.shape != (n,) or self.is_train.shape != (n,):
            raise ValueError("labels / split tags do not match the feature rows")
        if n and self.labels.min() < 0:
            raise ValueError("labels must be non-negative")

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def input_dim(self) -> int:
        return self.features.shape[1]

    @property
    def num_classes(self) -> int:
        return int(self.labels.max()) + 1 if len(self) else 0

    def subset(self, idx) -> "Dataset":
        return Dataset(self.features[idx], self.labels[idx], self.is_train[idx])

    def train(self) -> "Dataset":
        return self.subset(np.flatnonzero(self.is_train))

    def test(self) -> "Dataset":
        return self.subset(np.flatnonzero(~self.is_train))


def _stratified_train_mask(labels: np.ndarray, frac: float, rng: Optional[np.random.Generator]) -> np.ndarray:
    is_train = np.zeros(labels.shape[0], dtype=bool)
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        if rng is not None:
            idx = rng.permutation(idx)
        n_train = int(math.floor(frac * idx.size + 0.5))
        is_train[idx[:n_train]] = True
    return is_train


def synth_blobs(classes: int, input_dim: int, per_class: int, spread: float, seed: int) -> Dataset:
    """Isotropic Gaussian blobs around random unit-norm centres, 80/20 split per class."""
    if classes < 2:
        raise ValueError("need at least two classes")
    rng = np.random.default_rng(seed)
    centres = rng.normal(size=(classes, input_dim))
    centres /= np.linalg.norm(centres, axis=1, keepdims=True)
    labels = np.repeat(np.arange(classes), per_class)
    noise = rng.normal(size=(labels.size, input_dim))
    features = centres[labels] + spread * noise
    return Dataset(features, labels, _stratified_train_mask(labels, 0.8, rng))


def load_csv(path: Union[str, Path], seed: int = 0) -> Dataset:
    """Read ``f0,...,f{d-1},label[,split]``.

    Without a ``split`` column (values ``train``/``test``) a seeded stratified
    80/20 split is made.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        has_split = bool(header) and header[-1] == "split"
        cols = header[:-1] if has_split else header
        if not cols or cols[-1] != "label":
            raise ValueError(f"{path}:1: last column must be 'label'")
        d = len(cols) - 1
        if cols[:-1] != [f"f{i}" for i in range(d)]:
            raise ValueError(f"{path}:1: feature columns must be named f0..f{d - 1}")
        feats: List[List[float]] = []
        labels: List[int] = []
        split: List[bool] = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ValueError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                vals = [float(v) for v in row[:d]]
            except ValueError:
                raise ValueError(f"{path}:{lineno}: non-numeric feature") from None
            if not all(math.isfinite(v) for v in vals):
                raise ValueError(f"{path}:{lineno}: non-finite feature")
            try:
                lab = int(row[d])
            except ValueError:
                raise ValueError(f"{path}:{lineno}: label must be an integer") from None
            if lab < 0:
                raise ValueError(f"{path}:{lineno}: negative label")
            if has_split:
                tag = row[d + 1].strip()
                if tag not in ("train", "test"):
                    raise ValueError(f"{path}:{lineno}: split must be 'train' or 'test'")
                split.append(tag == "train")
            feats.append(vals)
            labels.append(lab)
    features = np.array(feats, dtype=np.float64).reshape(len(feats), d)
    lab_arr = np.array(labels, dtype=np.int64)
    if has_split:
        is_train = np.array(split, dtype=bool)
    else:
        is_train = _stratified_train_mask(lab_arr, 0.8, np.random.default_rng(seed))
    return Dataset(features, lab_arr, is_train)


def write_csv(path: Union[str, Path], data: Dataset, with_split: bool = True) -> None:
    """Write ``data`` so that :func:`load_csv` reads back identical values."""
    d = data.input_dim
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"f{i}" for i in range(d)] + ["label"] + (["split"] if with_split else []))
        for x, y, tr in zip(data.features, data.labels, data.is_train):
            row = [repr(float(v)) for v in x] + [int(y)]
            if with_split:
                row.append("train" if tr else "test")
            w.writerow(row)


@dataclass(frozen=True)
class ClientPartition:
    client_id: int
    indices: np.ndarray

    @property
    def n_k(self) -> int:
        return int(self.indices.size)


def dirichlet_partition(labels, K: int, alpha: float, rng: np.random.Generator) -> List[ClientPartition]:
    """Per-class Dirichlet split of sample indices over ``K`` clients.

    For every class, shuffled indices are cut contiguously at the cumulative
    proportions drawn from ``Dirichlet(alpha * 1_K)``. A client left empty
    takes one sample from the currently largest partition.
    """
    labels = np.asarray(labels)
    n = labels.size
    if K < 1:
        raise ValueError("need at least one client")
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    if n < K:
        raise ValueError(f"cannot give {K} clients a sample each from {n} samples")
    parts: List[List[int]] = [[] for _ in range(K)]
    for c in np.unique(labels):
        idx = rng.permutation(np.flatnonzero(labels == c))
        p = rng.dirichlet(np.full(K, float(alpha)))
        if not np.all(np.isfinite(p)):
            # gamma underflow at tiny alpha: the whole class goes to one client
            p = np.zeros(K)
            p[int(rng.integers(K))] = 1.0
        cuts = np.floor(np.cumsum(p)[:-1] * idx.size + 1e-9).astype(int)
        for k, chunk in enumerate(np.split(idx, cuts)):
            parts[k].extend(chunk.tolist())
    for k in range(K):
        if not parts[k]:
            donor = max(range(K), key=lambda j: (len(parts[j]), -j))
            parts[k].append(parts[donor].pop())
    return [ClientPartition(k, np.array(sorted(p), dtype=np.int64)) for k, p in enumerate(parts)]


def class_counts(partitions: Sequence[ClientPartition], labels, num_classes: Optional[int] = None) -> np.ndarray:
    """Client x class count matrix."""
    labels = np.asarray(labels)
    C = int(labels.max()) + 1 if num_classes is None else num_classes
    out = np.zeros((len(partitions), C), dtype=np.int64)
    for row, part in enumerate(partitions):
        out[row] = np.bincount(labels[part.indices], minlength=C)[:C]
    return out


def class_distribution_report(
    partitions: Sequence[ClientPartition], labels, num_classes: Optional[int] = None
) -> List[Tuple[int, int, int]]:
    """Rows ``(client_id, class_id, count)``, zero cells included."""
    counts = class_counts(partitions, labels, num_classes)
    return [
        (part.client_id, c, int(counts[row, c]))
        for row, part in enumerate(partitions)
        for c in range(counts.shape[1])
    ]


def write_report(path: Union[str, Path], rows: Iterable[Tuple[int, int, int]]) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["client_id", "class_id", "count"])
        w.writerows(rows)


def mean_tv_from_uniform(partitions: Sequence[ClientPartition], labels, num_classes: Optional[int] = None) -> float:
    """Mean over clients of the total-variation distance to the uniform class mix."""
    counts = class_counts(partitions, labels, num_classes).astype(np.float64)
    C = counts.shape[1]
    dist = counts / counts.sum(axis=1, keepdims=True)
    return float(np.mean(0.5 * np.abs(dist - 1.0 / C).sum(axis=1)))
