"""Evaluation: local and union accuracy, mask coverage, unseen clients."""
from __future__ import annotations

from typing import Sequence

import numpy as np

from .data import Dataset
from .engine import MASK_RULE, FederationState, generate, issue, make_mask
from .nn import ModelSpec, forward_batch


class CoverageError(ValueError):
    pass


def evaluate(spec: ModelSpec, params, mask, testset: Dataset) -> float:
    """Fraction of argmax-correct predictions; ties go to the lowest class."""
    if len(testset) == 0:
        raise ValueError("empty test set")
    logits, _ = forward_batch(spec, params, mask, testset.X)
    return float(np.mean(np.argmax(logits, axis=1) == testset.y))


def client_accuracies(state: FederationState, shards: Sequence[Dataset], clients) -> dict[int, float]:
    """Accuracy of each client's currently issued submodel on its test shard."""
    out = {}
    for n in clients:
        params, mask = issue(state, int(n))
        out[int(n)] = evaluate(state.spec, params, mask, shards[int(n)].test)
    return out


def group_means(acc: dict[int, float], capacities: np.ndarray, levels: Sequence[float]) -> dict[float, float]:
    out = {}
    for g in levels:
        vals = [a for n, a in acc.items() if capacities[n] == g]
        out[g] = float(np.mean(vals)) if vals else float("nan")
    return out


def union_model(state: FederationState) -> np.ndarray:
    """Shared parameters, or the generator's output at the mean training descriptor."""
    if state.hn is None:
        return state.shared_params
    v = state.descriptors[state.train_clients].mean(axis=0)
    return generate(state.hn, v)


def union_evaluate(state: FederationState, gammas: Sequence[float], union_testset: Dataset) -> dict[float, float]:
    params = union_model(state)
    rule = MASK_RULE[state.method]
    return {
        float(g): evaluate(state.spec, params, make_mask(rule, state.spec, params, g, state.round), union_testset)
        for g in gammas
    }


def gini(p: np.ndarray) -> float:
    """Gini coefficient of a non-negative vector (0 for a constant vector)."""
    p = np.sort(np.asarray(p, dtype=np.float64))
    n = len(p)
    total = p.sum()
    if n == 0 or total <= 0:
        raise CoverageError("gini of an all-zero vector is undefined")
    i = np.arange(1, n + 1)
    return max(0.0, float(np.sum((2 * i - n - 1) * p) / (n * total)))


def coverage_from_frequency(p: np.ndarray):
    """Cumulative coverage curve and Gini of per-parameter activation frequencies."""
    p = np.asarray(p, dtype=np.float64)
    total = p.sum()
    if total <= 0:
        raise CoverageError("no parameter is ever active; coverage curve undefined")
    # rounding can push partial sums past the total; keep the curve in [0, 1]
    curve = np.minimum(np.cumsum(p) / total, 1.0)
    curve[-1] = 1.0
    return curve, gini(p)


def mask_coverage(masks) -> tuple[np.ndarray, float]:
    """Coverage curve and Gini for the masks of one capacity group."""
    masks = np.atleast_2d(np.asarray(masks, dtype=np.float64))
    if masks.shape[0] == 0:
        raise CoverageError("need at least one mask")
    return coverage_from_frequency(masks.mean(axis=0))


def new_client_eval(state: FederationState, shards: Sequence[Dataset], clients, gammas=None) -> dict[int, float]:
    """Accuracy of unseen clients under a frozen server model; no training.

    ``gammas`` optionally overrides the capacity of each client.
    """
    out = {}
    for i, n in enumerate(clients):
        n = int(n)
        g = None if gammas is None else gammas[i]
        params, mask = issue(state, n, g)
        out[n] = evaluate(state.spec, params, mask, shards[n].test)
    return out
