"""Descriptor-conditioned generator of flat model parameters.

Two dense layers ``l -> m -> d`` with a tanh hidden layer and linear
output. ``phi`` is one flat vector: ``W1 (m, l)``, ``b1 (m)``,
``W2 (d, m)``, ``b2 (d)``, all row-major.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .nn import ContractError, ModelSpec, init_params

log = logging.getLogger(__name__)


@dataclass
class HyperNetState:
    l: int
    m: int
    spec: ModelSpec
    phi: np.ndarray
    warnings: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.phi = np.asarray(self.phi, dtype=np.float64)
        if self.phi.shape != (phi_size(self.l, self.m, self.spec.d),):
            raise ContractError(f"phi length {self.phi.shape} does not match (l={self.l}, m={self.m}, d={self.spec.d})")

    @property
    def d(self) -> int:
        return self.spec.d

    def parts(self):
        """Views ``(W1, b1, W2, b2)`` into ``phi``."""
        return _split(self.phi, self.l, self.m, self.d)


def phi_size(l: int, m: int, d: int) -> int:
    return m * l + m + d * m + d


def _split(phi, l, m, d):
    i = 0
    W1 = phi[i:i + m * l].reshape(m, l)
    i += m * l
    b1 = phi[i:i + m]
    i += m
    W2 = phi[i:i + d * m].reshape(d, m)
    i += d * m
    b2 = phi[i:i + d]
    return W1, b1, W2, b2


def init_hypernet(
    l: int, m: int, spec: ModelSpec, seed: int, out_scale: float = 0.1, bias_init: str = "zero"
) -> HyperNetState:
    """Random generator; output weights are N(0, (out_scale / sqrt(m))^2).

    ``bias_init='zero'`` leaves the output bias at zero so every generated
    parameter comes from the descriptor path; ``'fan_in'`` sets it to a
    standard target-model initialization.
    """
    rng = np.random.default_rng(seed)
    d = spec.d
    phi = np.empty(phi_size(l, m, d))
    W1, b1, W2, b2 = _split(phi, l, m, d)
    W1[:] = rng.standard_normal((m, l)) / np.sqrt(l)
    b1[:] = 0.0
    W2[:] = rng.standard_normal((d, m)) * (out_scale / np.sqrt(m))
    if bias_init == "fan_in":
        b2[:] = init_params(spec, int(rng.integers(2**31)))
    elif bias_init == "zero":
        b2[:] = 0.0
    else:
        raise ValueError(f"unknown bias_init {bias_init!r}")
    return HyperNetState(l, m, spec, phi)


def _check_v(hn: HyperNetState, v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (hn.l,):
        raise ContractError(f"descriptor must have length {hn.l}, got {v.shape}")
    return v


def generate(hn: HyperNetState, v) -> np.ndarray:
    v = _check_v(hn, v)
    W1, b1, W2, b2 = hn.parts()
    a = np.tanh(W1 @ v + b1)
    return W2 @ a + b2


def hn_backward(hn: HyperNetState, v, mask, delta) -> np.ndarray:
    """Gradient w.r.t. ``phi`` of ``<mask * H(v; phi), delta>``."""
    v = _check_v(hn, v)
    mask = np.asarray(mask, dtype=np.float64)
    delta = np.asarray(delta, dtype=np.float64)
    if mask.shape != (hn.d,) or delta.shape != (hn.d,):
        raise ContractError(f"mask and delta must have length d={hn.d}")
    W1, b1, W2, _ = hn.parts()
    a = np.tanh(W1 @ v + b1)
    g = mask * delta
    out = np.empty_like(hn.phi)
    gW1, gb1, gW2, gb2 = _split(out, hn.l, hn.m, hn.d)
    gW2[:] = np.outer(g, a)
    gb2[:] = g
    dz = (W2.T @ g) * (1.0 - a * a)
    gW1[:] = np.outer(dz, v)
    gb1[:] = dz
    return out


def hn_step(hn: HyperNetState, phi_grads, beta: float, reduce: str = "mean") -> HyperNetState:
    """``phi <- phi - beta * mean(grads)`` (or the sum with ``reduce='sum'``)."""
    if beta <= 0:
        raise ValueError("beta must be positive")
    phi_grads = list(phi_grads)
    if not phi_grads:
        msg = "hn_step called with no gradients; state unchanged"
        log.warning(msg)
        return HyperNetState(hn.l, hn.m, hn.spec, hn.phi.copy(), hn.warnings + [msg])
    total = np.zeros_like(hn.phi)
    for g in phi_grads:
        if np.shape(g) != hn.phi.shape:
            raise ContractError("gradient shape does not match phi")
        total += g
    if reduce == "mean":
        total /= len(phi_grads)
    elif reduce != "sum":
        raise ValueError(f"unknown reduce {reduce!r}")
    return HyperNetState(hn.l, hn.m, hn.spec, hn.phi - beta * total, list(hn.warnings))


def save_hypernet(hn: HyperNetState, path) -> None:
    payload = {
        "l": hn.l,
        "m": hn.m,
        "layer_widths": list(hn.spec.layer_widths),
        "activation": hn.spec.activation,
        "phi": hn.phi.tolist(),
    }
    with open(path, "w") as fh:
        json.dump(payload, fh)


def load_hypernet(path) -> HyperNetState:
    with open(path) as fh:
        payload = json.load(fh)
    spec = ModelSpec(tuple(payload["layer_widths"]), payload.get("activation", "relu"))
    phi = np.asarray(payload["phi"], dtype=np.float64)
    return HyperNetState(int(payload["l"]), int(payload["m"]), spec, phi)
