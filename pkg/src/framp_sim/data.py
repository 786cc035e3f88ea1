"""Synthetic blobs, Dirichlet label-skew partitioning and client descriptors."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Sequence

import numpy as np


class PartitionError(RuntimeError):
    pass


@dataclass
class Dataset:
    X: np.ndarray
    y: np.ndarray
    is_train: np.ndarray
    index: np.ndarray | None = None  # positions in the source dataset

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        self.is_train = np.asarray(self.is_train, dtype=np.bool_)
        if self.index is None:
            self.index = np.arange(len(self.y))
        if not (len(self.X) == len(self.y) == len(self.is_train) == len(self.index)):
            raise ValueError("dataset arrays differ in length")

    def __len__(self):
        return len(self.y)

    def subset(self, sel) -> "Dataset":
        return Dataset(self.X[sel], self.y[sel], self.is_train[sel], self.index[sel])

    @property
    def train(self) -> "Dataset":
        return self.subset(self.is_train)

    @property
    def test(self) -> "Dataset":
        return self.subset(~self.is_train)

    @staticmethod
    def concat(parts: Sequence["Dataset"]) -> "Dataset":
        return Dataset(
            np.concatenate([p.X for p in parts]),
            np.concatenate([p.y for p in parts]),
            np.concatenate([p.is_train for p in parts]),
            np.concatenate([p.index for p in parts]),
        )


def gen_synthetic(C: int, k: int, n_per_class: int, class_sep: float, seed: int) -> Dataset:
    """Unit-covariance Gaussian blobs with class means on a sphere of radius ``class_sep``.

    The first 80% (floor) of each class's samples are tagged train.
    """
    if C < 2 or k < 2:
        raise ValueError("need C >= 2 and k >= 2")
    rng = np.random.default_rng(seed)
    dirs = rng.standard_normal((C, k))
    means = class_sep * dirs / np.linalg.norm(dirs, axis=1, keepdims=True)
    n_train = (4 * n_per_class) // 5
    X = np.empty((C * n_per_class, k))
    y = np.repeat(np.arange(C), n_per_class)
    is_train = np.tile(np.arange(n_per_class) < n_train, C)
    for c in range(C):
        X[c * n_per_class:(c + 1) * n_per_class] = means[c] + rng.standard_normal((n_per_class, k))
    return Dataset(X, y, is_train)


def _split_by_proportions(idx: np.ndarray, p: np.ndarray) -> list[np.ndarray]:
    cuts = (np.cumsum(p)[:-1] * len(idx)).astype(np.int64)
    return np.split(idx, cuts)


def dirichlet_partition(dataset: Dataset, N: int, alpha: float, seed: int, max_attempts: int = 100) -> list[Dataset]:
    """Label-skewed split into ``N`` client datasets.

    For each class one proportion vector ~ Dir(alpha) is drawn and applied
    to both the train and the test samples of that class, so a client's
    test shard follows its training label mix. A draw that leaves any client
    without train or test samples is redrawn.
    """
    if alpha <= 0 or N < 1:
        raise ValueError("need alpha > 0 and N >= 1")
    rng = np.random.default_rng(seed)
    classes = np.unique(dataset.y)
    for _ in range(max_attempts):
        owned = [[] for _ in range(N)]
        for c in classes:
            p = rng.dirichlet(np.full(N, alpha)) if N > 1 else np.ones(1)
            for split in (True, False):
                idx = np.flatnonzero((dataset.y == c) & (dataset.is_train == split))
                idx = rng.permutation(idx)
                for n, part in enumerate(_split_by_proportions(idx, p)):
                    owned[n].append(part)
        shards = [dataset.subset(np.sort(np.concatenate(parts))) for parts in owned]
        if all(s.is_train.any() and (~s.is_train).any() for s in shards):
            return shards
    raise PartitionError(f"no non-empty partition into {N} clients after {max_attempts} attempts (alpha={alpha})")


def iid_clone_partition(dataset: Dataset, N: int) -> list[Dataset]:
    """Every client receives an identical copy of the full dataset."""
    return [dataset.subset(np.arange(len(dataset))) for _ in range(N)]


def extractor_matrix(extractor_seed: int, k: int, l: int) -> np.ndarray:
    """Fixed random linear feature map shared by every client, shape (k, l)."""
    rng = np.random.default_rng(extractor_seed)
    return rng.standard_normal((k, l)) / np.sqrt(k)


def compute_descriptor(extractor_seed: int, l: int, dataset: Dataset) -> np.ndarray:
    """Mean embedded training sample under the shared random extractor."""
    X = dataset.X[dataset.is_train] if dataset.is_train.any() else dataset.X
    if len(X) == 0:
        raise ValueError("cannot describe an empty dataset")
    return (X @ extractor_matrix(extractor_seed, X.shape[1], l)).mean(axis=0)


def onehot_descriptor(n: int, N: int, l: int) -> np.ndarray:
    if not (0 <= n < N <= l):
        raise ValueError(f"need 0 <= n < N <= l, got n={n}, N={N}, l={l}")
    v = np.zeros(l)
    v[n] = 1.0
    return v


def label_entropy(y: np.ndarray, C: int) -> float:
    p = np.bincount(y, minlength=C) / len(y)
    p = p[p > 0]
    return float(-(p * np.log(p)).sum())


def write_partition_csv(path, shards: Sequence[Dataset]) -> None:
    k = shards[0].X.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["split", "client", "label"] + [f"x{j}" for j in range(k)])
        for n, s in enumerate(shards):
            for x, y, tr in zip(s.X, s.y, s.is_train):
                w.writerow(["train" if tr else "test", n, int(y)] + [repr(float(v)) for v in x])
