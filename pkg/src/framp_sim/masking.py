"""Submodel extraction masks.

Every mask is a boolean vector of length d. Cardinalities use
``floor(gamma * n)``: over the whole vector for the global magnitude rule,
per layer block for the others. The static and rolling baselines work on the
flat vector (index prefix / circular window per layer block), not on
channels.
"""
from __future__ import annotations

import math
from pathlib import Path

import numpy as np

from .nn import ConfigurationError, ModelSpec


def _check_gamma(gamma: float) -> float:
    gamma = float(gamma)
    if not (0.0 < gamma <= 1.0):
        raise ConfigurationError(f"gamma must be in (0, 1], got {gamma}")
    return gamma


def budget(gamma: float, n: int) -> int:
    """``floor(gamma * n)``, exact for the dyadic levels used here."""
    gamma = _check_gamma(gamma)
    if gamma == 1.0:
        return n
    # guard against 0.29 * 100 = 28.999999999999996
    return int(math.floor(gamma * n + 1e-9))


def _topk(values: np.ndarray, k: int) -> np.ndarray:
    # stable sort on -|w| keeps the lower index first among equal magnitudes
    order = np.argsort(-np.abs(values), kind="stable")
    bits = np.zeros(len(values), dtype=np.bool_)
    bits[order[:k]] = True
    return bits


def global_topk_mask(params: np.ndarray, gamma: float) -> np.ndarray:
    params = np.asarray(params, dtype=np.float64)
    if gamma == 1.0:
        return np.ones(len(params), dtype=np.bool_)
    return _topk(params, budget(gamma, len(params)))


def layerwise_topk_mask(params: np.ndarray, spec: ModelSpec, gamma: float) -> np.ndarray:
    params = np.asarray(params, dtype=np.float64)
    _check_gamma(gamma)
    bits = np.zeros(spec.d, dtype=np.bool_)
    for start, stop in spec.block_bounds():
        bits[start:stop] = _topk(params[start:stop], budget(gamma, stop - start))
    return bits


def static_prefix_mask(spec: ModelSpec, gamma: float) -> np.ndarray:
    _check_gamma(gamma)
    bits = np.zeros(spec.d, dtype=np.bool_)
    for start, stop in spec.block_bounds():
        bits[start:start + budget(gamma, stop - start)] = True
    return bits


def rolling_mask(spec: ModelSpec, gamma: float, round_: int) -> np.ndarray:
    """Circular window of ``k`` indices per block starting at ``round * k mod size``."""
    _check_gamma(gamma)
    bits = np.zeros(spec.d, dtype=np.bool_)
    for start, stop in spec.block_bounds():
        size = stop - start
        k = budget(gamma, size)
        offset = (round_ * k) % size
        bits[start + (offset + np.arange(k)) % size] = True
    return bits


def expected_cardinality(kind: str, spec: ModelSpec, gamma: float) -> int:
    if kind == "global":
        return budget(gamma, spec.d)
    return sum(budget(gamma, n) for n in spec.block_sizes)


# --- bitset export -----------------------------------------------------------

def save_mask_bitsets(path, records, d: int) -> None:
    """Write ``(round, client, gamma, bits)`` records to a packed ``.npz``."""
    records = list(records)
    n = len(records)
    packed = np.zeros((n, (d + 7) // 8), dtype=np.uint8)
    rounds = np.zeros(n, dtype=np.int64)
    clients = np.zeros(n, dtype=np.int64)
    gammas = np.zeros(n)
    for i, (rnd, client, gamma, bits) in enumerate(records):
        packed[i] = np.packbits(np.asarray(bits, dtype=np.bool_))
        rounds[i], clients[i], gammas[i] = rnd, client, gamma
    with open(Path(path), "wb") as fh:
        np.savez_compressed(fh, d=np.int64(d), round=rounds, client=clients, gamma=gammas, bits=packed)


def load_mask_bitsets(path):
    """Inverse of :func:`save_mask_bitsets`; returns a dict of arrays."""
    with np.load(path) as z:
        d = int(z["d"])
        bits = np.unpackbits(z["bits"], axis=1, count=d).astype(np.bool_) if len(z["bits"]) else np.zeros((0, d), np.bool_)
        return {"d": d, "round": z["round"], "client": z["client"], "gamma": z["gamma"], "bits": bits}
