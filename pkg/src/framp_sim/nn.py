"""Dense feedforward classifier over a flat parameter vector.

Masked semantics: the effective parameters are ``params * mask``, and the
gradient is zero wherever the mask is zero. Biases are masked like weights.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .prototypes import PrototypeSet


class ContractError(ValueError):
    """Shape or dimension mismatch between arguments."""


class ConfigurationError(ValueError):
    """An argument combination the caller should not have produced."""


@dataclass(frozen=True)
class ModelSpec:
    layer_widths: tuple[int, ...]
    activation: str = "relu"

    def __post_init__(self):
        widths = tuple(int(x) for x in self.layer_widths)
        object.__setattr__(self, "layer_widths", widths)
        if len(widths) < 2:
            raise ConfigurationError("need at least input and output widths")
        if any(x < 1 for x in widths):
            raise ConfigurationError(f"layer widths must be positive: {widths}")
        if self.activation not in ("relu", "tanh"):
            raise ConfigurationError(f"unknown activation {self.activation!r}")

    @property
    def n_layers(self) -> int:
        return len(self.layer_widths) - 1

    @property
    def input_dim(self) -> int:
        return self.layer_widths[0]

    @property
    def n_classes(self) -> int:
        return self.layer_widths[-1]

    @property
    def hidden_dim(self) -> int:
        """Encoder width h; the input width when there is no hidden layer."""
        return self.layer_widths[-2]

    @property
    def block_sizes(self) -> list[int]:
        w = self.layer_widths
        return [w[i] * w[i + 1] + w[i + 1] for i in range(self.n_layers)]

    @property
    def d(self) -> int:
        return sum(self.block_sizes)

    def block_bounds(self) -> list[tuple[int, int]]:
        """``[start, stop)`` of each layer block in the flat vector."""
        bounds = []
        start = 0
        for size in self.block_sizes:
            bounds.append((start, start + size))
            start += size
        return bounds

    @property
    def widths_array(self) -> np.ndarray:
        return np.asarray(self.layer_widths, dtype=np.int64)

    @property
    def relu(self) -> bool:
        return self.activation == "relu"


def flat_index(spec: ModelSpec, layer: int, row: int, col: int | None = None) -> int:
    """Flat position of ``W[row, col]`` of ``layer`` (``col=None``: bias ``row``)."""
    start, _ = spec.block_bounds()[layer]
    n_in, n_out = spec.layer_widths[layer], spec.layer_widths[layer + 1]
    if col is None:
        if not 0 <= row < n_out:
            raise IndexError(row)
        return start + n_in * n_out + row
    if not (0 <= row < n_in and 0 <= col < n_out):
        raise IndexError((row, col))
    return start + row * n_out + col


def unflatten(spec: ModelSpec, params: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    """Split into per-layer ``(W, b)`` copies, ``W`` shaped ``(in, out)``."""
    _check_len(spec, params, "params")
    out = []
    for (start, _), n_in, n_out in zip(spec.block_bounds(), spec.layer_widths[:-1], spec.layer_widths[1:]):
        W = params[start:start + n_in * n_out].reshape(n_in, n_out).copy()
        b = params[start + n_in * n_out:start + n_in * n_out + n_out].copy()
        out.append((W, b))
    return out


def flatten(spec: ModelSpec, layers: list[tuple[np.ndarray, np.ndarray]]) -> np.ndarray:
    if len(layers) != spec.n_layers:
        raise ContractError(f"expected {spec.n_layers} layers, got {len(layers)}")
    parts = []
    for (W, b), n_in, n_out in zip(layers, spec.layer_widths[:-1], spec.layer_widths[1:]):
        if np.shape(W) != (n_in, n_out) or np.shape(b) != (n_out,):
            raise ContractError(f"layer shape mismatch: {np.shape(W)}, {np.shape(b)}")
        parts.append(np.asarray(W, dtype=np.float64).ravel())
        parts.append(np.asarray(b, dtype=np.float64))
    return np.concatenate(parts)


def init_params(spec: ModelSpec, seed: int) -> np.ndarray:
    """Gaussian weights with std ``1/sqrt(fan_in)``, zero biases."""
    rng = np.random.default_rng(seed)
    layers = []
    for n_in, n_out in zip(spec.layer_widths[:-1], spec.layer_widths[1:]):
        W = rng.standard_normal((n_in, n_out)) / np.sqrt(n_in)
        layers.append((W, np.zeros(n_out)))
    return flatten(spec, layers)


def _check_len(spec, vec, name):
    if np.ndim(vec) != 1 or len(vec) != spec.d:
        raise ContractError(f"{name} must have length d={spec.d}, got shape {np.shape(vec)}")


def _effective(spec, params, mask):
    params = np.asarray(params, dtype=np.float64)
    _check_len(spec, params, "params")
    if mask is None:
        return params
    mask = np.asarray(mask)
    _check_len(spec, mask, "mask")
    return params * mask


def _check_inputs(spec, x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != spec.input_dim:
        raise ContractError(f"inputs must be (B, {spec.input_dim}), got {x.shape}")
    return x


def forward(spec: ModelSpec, params: np.ndarray, mask: np.ndarray | None, x: np.ndarray):
    """Logits and encoder output for one input row."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ContractError("forward takes a single input row; use forward_batch")
    logits, hidden = forward_batch(spec, params, mask, x[None, :])
    return logits[0], hidden[0]


def forward_batch(spec: ModelSpec, params, mask, X):
    X = _check_inputs(spec, X)
    w = _effective(spec, params, mask)
    return kernels.forward_batch(spec.widths_array, spec.relu, w, X)


def _proto_arrays(spec: ModelSpec, protos: PrototypeSet | None):
    C, h = spec.n_classes, spec.hidden_dim
    if protos is None:
        return np.zeros((C, h)), np.zeros(C, dtype=np.bool_)
    if protos.vectors.shape != (C, h):
        raise ContractError(f"prototypes must be ({C}, {h}), got {protos.vectors.shape}")
    return np.ascontiguousarray(protos.vectors, dtype=np.float64), np.ascontiguousarray(protos.present)


def loss_and_grad(
    spec: ModelSpec,
    params: np.ndarray,
    mask: np.ndarray,
    inputs: np.ndarray,
    labels: np.ndarray,
    global_protos: PrototypeSet | None = None,
    lam: float = 0.0,
):
    """Mean cross-entropy plus ``lam`` times the prototype alignment term.

    The alignment term sums squared Euclidean distances between batch class
    means of the encoder output and the global prototypes, over classes
    present in both. Returns ``(loss, grad, batch_protos)``; ``grad`` is
    already multiplied by the mask.
    """
    if lam < 0:
        raise ConfigurationError("lam must be non-negative")
    if lam > 0 and global_protos is None:
        raise ConfigurationError("lam > 0 requires global prototypes")
    X = _check_inputs(spec, inputs)
    y = np.asarray(labels, dtype=np.int64)
    if y.ndim != 1 or len(y) != len(X) or len(y) == 0:
        raise ContractError("labels must be a non-empty vector matching inputs")
    if y.min() < 0 or y.max() >= spec.n_classes:
        raise ContractError("label out of range")
    mask_arr = np.ones(spec.d) if mask is None else np.asarray(mask, dtype=np.float64)
    w = _effective(spec, params, mask_arr)
    gp, gp_present = _proto_arrays(spec, global_protos)
    loss, grad, protos, counts = kernels.loss_grad(
        spec.widths_array, spec.relu, w, X, y, gp, gp_present, float(lam)
    )
    return float(loss), grad * mask_arr, PrototypeSet(protos, counts > 0)
