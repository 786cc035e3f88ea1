"""Class prototypes: computation, aggregation, alignment and perturbation."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np


class EmptyDatasetError(ValueError):
    pass


@dataclass
class PrototypeSet:
    """Per-class encoder centroids; rows of absent classes are zero."""

    vectors: np.ndarray  # (C, h)
    present: np.ndarray  # (C,) bool

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        self.present = np.asarray(self.present, dtype=np.bool_)
        if self.vectors.ndim != 2 or self.present.shape != (self.vectors.shape[0],):
            raise ValueError(f"inconsistent prototype shapes {self.vectors.shape}, {self.present.shape}")

    @classmethod
    def empty(cls, n_classes: int, dim: int) -> "PrototypeSet":
        return cls(np.zeros((n_classes, dim)), np.zeros(n_classes, dtype=np.bool_))

    @property
    def n_classes(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def copy(self) -> "PrototypeSet":
        return PrototypeSet(self.vectors.copy(), self.present.copy())


def class_means(hidden: np.ndarray, labels: np.ndarray, n_classes: int) -> PrototypeSet:
    hidden = np.asarray(hidden, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if len(labels) == 0:
        raise EmptyDatasetError("cannot compute prototypes of an empty dataset")
    counts = np.bincount(labels, minlength=n_classes)
    sums = np.zeros((n_classes, hidden.shape[1]))
    np.add.at(sums, labels, hidden)
    present = counts > 0
    vectors = np.zeros_like(sums)
    vectors[present] = sums[present] / counts[present, None]
    return PrototypeSet(vectors, present)


def local_prototypes(spec, params, mask, dataset) -> PrototypeSet:
    """Mean encoder output per class over ``dataset`` (anything with X, y)."""
    from .nn import forward_batch

    if len(dataset.y) == 0:
        raise EmptyDatasetError("cannot compute prototypes of an empty dataset")
    _, hidden = forward_batch(spec, params, mask, dataset.X)
    return class_means(hidden, dataset.y, spec.n_classes)


def aggregate_global(locals_: Sequence[PrototypeSet], previous: PrototypeSet) -> PrototypeSet:
    """Per-class mean over uploaders holding the class; others carry forward."""
    shape = previous.vectors.shape
    total = np.zeros(shape)
    count = np.zeros(shape[0])
    for s in locals_:
        if s.vectors.shape != shape:
            raise ValueError(f"prototype shape {s.vectors.shape} != {shape}")
        total[s.present] += s.vectors[s.present]
        count += s.present
    have = count > 0
    out = previous.copy()
    out.vectors[have] = total[have] / count[have, None]
    out.present = previous.present | have
    return out


def alignment_loss(local: PrototypeSet, global_: PrototypeSet) -> float:
    """Sum of squared distances over classes present in both sets."""
    if local.vectors.shape != global_.vectors.shape:
        raise ValueError("prototype sets differ in shape")
    both = local.present & global_.present
    diff = local.vectors[both] - global_.vectors[both]
    return float((diff * diff).sum())


def perturb_gaussian(protos: PrototypeSet, a: float, seed) -> PrototypeSet:
    """Add N(0, sigma^2 I) noise to each present prototype, sigma = a * ||P||."""
    if a < 0:
        raise ValueError("noise scale a must be non-negative")
    rng = np.random.default_rng(seed)
    out = protos.copy()
    if a == 0:
        return out
    for c in np.flatnonzero(protos.present):
        sigma = a * np.linalg.norm(protos.vectors[c])
        out.vectors[c] = protos.vectors[c] + sigma * rng.standard_normal(protos.dim)
    return out


def random_orthogonal(dim: int, seed) -> np.ndarray:
    """Haar-distributed orthogonal matrix via QR of a Gaussian matrix."""
    rng = np.random.default_rng(seed)
    q, r = np.linalg.qr(rng.standard_normal((dim, dim)))
    return q * np.sign(np.diag(r))


def perturb_rotation(protos: PrototypeSet, seed) -> PrototypeSet:
    """Apply one random orthogonal matrix to every present prototype."""
    Q = random_orthogonal(protos.dim, seed)
    out = protos.copy()
    out.vectors[protos.present] = protos.vectors[protos.present] @ Q.T
    return out


def prototype_csv_header(dim: int) -> list[str]:
    return ["round", "owner", "class"] + [f"h{j}" for j in range(dim)]


def prototype_csv_rows(rnd: int, owner, protos: PrototypeSet) -> list[list]:
    """CSV rows ``round, owner, class, h0..`` for the present classes."""
    return [
        [rnd, owner, int(c)] + [repr(float(v)) for v in protos.vectors[c]]
        for c in np.flatnonzero(protos.present)
    ]
