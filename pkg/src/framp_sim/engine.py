"""Round-based federated protocol for the personalized generator and the
shared-model baselines.

Personalized variants (``framp*``) keep a hypernetwork on the server and
issue each participant a masked copy of its generated model. Shared variants
keep one flat parameter vector and issue masked copies of it.
"""
from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import kernels
from .config import Config
from .data import Dataset, compute_descriptor, onehot_descriptor
from .hypernet import HyperNetState, generate, hn_backward, hn_step, init_hypernet
from .masking import global_topk_mask, layerwise_topk_mask, rolling_mask, static_prefix_mask
from .nn import ConfigurationError, ModelSpec, init_params
from .prototypes import PrototypeSet, aggregate_global, alignment_loss, local_prototypes, perturb_gaussian, perturb_rotation

log = logging.getLogger(__name__)

MASK_RULE = {
    "framp": "global",
    "framp_no_align": "global",
    "framp_onehot": "global",
    "framp_layerwise": "layerwise",
    "shared_magnitude": "global",
    "shared_static": "static",
    "shared_rolling": "rolling",
}


class ClientError(RuntimeError):
    def __init__(self, client: int, cause: BaseException):
        self.client = client
        super().__init__(f"client {client}: {cause}")


def is_personalized(method: str) -> bool:
    return method.startswith("framp")


def effective_lambda(cfg: Config) -> float:
    """Alignment weight actually used; zero for the no-align and shared variants."""
    if cfg.method == "framp_no_align" or not is_personalized(cfg.method):
        return 0.0
    return cfg.lam


def make_mask(rule: str, spec: ModelSpec, params: np.ndarray, gamma: float, round_: int) -> np.ndarray:
    if rule == "global":
        return global_topk_mask(params, gamma)
    if rule == "layerwise":
        return layerwise_topk_mask(params, spec, gamma)
    if rule == "static":
        return static_prefix_mask(spec, gamma)
    if rule == "rolling":
        return rolling_mask(spec, gamma, round_)
    raise ValueError(f"unknown mask rule {rule!r}")


# --- client sampling and capacities -------------------------------------------

def assign_capacities(N: int, levels: Sequence[float], seed: int) -> np.ndarray:
    """Shuffled round-robin over ``levels``; group sizes differ by at most one."""
    if len(levels) == 0:
        raise ValueError("need at least one capacity level")
    order = np.random.default_rng(seed).permutation(N)
    caps = np.empty(N)
    caps[order] = np.asarray(levels, dtype=np.float64)[np.arange(N) % len(levels)]
    return caps


def n_participants(N: int, ratio: float) -> int:
    return max(1, int(np.floor(ratio * N + 0.5)))


def sample_participants(N: int, ratio: float, round_: int, seed: int) -> np.ndarray:
    if not 0 < ratio <= 1:
        raise ValueError("participation ratio must be in (0, 1]")
    rng = np.random.default_rng([seed, round_])
    return np.sort(rng.choice(N, size=n_participants(N, ratio), replace=False))


def batch_schedule(n: int, steps: int, batch_size: int, rng: np.random.Generator) -> np.ndarray:
    """``(steps, B)`` sample indices from back-to-back shuffled passes, B = min(batch_size, n)."""
    B = min(batch_size, n)
    total = steps * B
    passes = -(-total // n) if total else 0
    flat = np.concatenate([rng.permutation(n) for _ in range(passes)]) if passes else np.zeros(0, np.int64)
    return flat[:total].reshape(steps, B).astype(np.int64)


# --- client side ----------------------------------------------------------------

@dataclass
class ClientReport:
    delta: np.ndarray
    protos: PrototypeSet
    train_loss: list[float] = field(default_factory=list)


def client_update(
    spec: ModelSpec,
    submodel_params: np.ndarray,
    mask: np.ndarray,
    global_protos: PrototypeSet | None,
    dataset: Dataset,
    steps: int,
    batch_size: int,
    lr: float,
    lam: float,
    rng: np.random.Generator | None = None,
    schedule: np.ndarray | None = None,
) -> ClientReport:
    """Masked mini-batch SGD on the local training data.

    ``dataset`` is used whole (pass ``shard.train``). ``schedule`` overrides
    the batch indices drawn from ``rng``.
    """
    if len(dataset) == 0:
        raise ValueError("client has no training data")
    if lam > 0 and global_protos is None:
        raise ConfigurationError("lam > 0 requires global prototypes")
    maskf = np.asarray(mask, dtype=np.float64)
    w0 = np.asarray(submodel_params, dtype=np.float64) * maskf
    if schedule is None:
        schedule = batch_schedule(len(dataset), steps, batch_size, rng or np.random.default_rng())
    gp = global_protos or PrototypeSet.empty(spec.n_classes, spec.hidden_dim)
    if steps > 0:
        w, losses = kernels.local_sgd(
            spec.widths_array, spec.relu, w0, maskf, dataset.X, dataset.y,
            np.ascontiguousarray(schedule, dtype=np.int64), gp.vectors, gp.present, float(lam), float(lr),
        )
    else:
        w, losses = w0, np.zeros(0)
    delta = (w - w0) * maskf
    protos = local_prototypes(spec, w, maskf, dataset)
    return ClientReport(delta, protos, [float(x) for x in losses])


# --- server side ----------------------------------------------------------------

def aggregate_shared(deltas: Sequence[np.ndarray], masks: Sequence[np.ndarray], current: np.ndarray) -> np.ndarray:
    """Per-index mean of the deltas over the clients whose mask covers it."""
    total = np.zeros_like(current, dtype=np.float64)
    count = np.zeros_like(current, dtype=np.float64)
    for delta, mask in zip(deltas, masks):
        total += delta
        count += mask
    out = np.array(current, dtype=np.float64)
    covered = count > 0
    out[covered] += total[covered] / count[covered]
    return out


@dataclass
class FederationState:
    spec: ModelSpec
    method: str
    descriptors: np.ndarray  # (N, l)
    capacities: np.ndarray  # (N,)
    train_clients: np.ndarray  # sorted client ids that take part in training
    global_protos: PrototypeSet
    hn: HyperNetState | None = None
    shared_params: np.ndarray | None = None
    round: int = 0

    @property
    def N(self) -> int:
        return len(self.capacities)

    @property
    def holdout_clients(self) -> np.ndarray:
        return np.setdiff1d(np.arange(self.N), self.train_clients)

    def copy(self) -> "FederationState":
        return dataclasses.replace(
            self,
            global_protos=self.global_protos.copy(),
            hn=None if self.hn is None else dataclasses.replace(self.hn, phi=self.hn.phi.copy()),
            shared_params=None if self.shared_params is None else self.shared_params.copy(),
        )


def select_holdout(capacities: np.ndarray, mode: str, frac: float, seed: int) -> np.ndarray:
    """Client ids excluded from training."""
    if mode == "none":
        return np.zeros(0, dtype=np.int64)
    if mode == "smallest":
        return np.flatnonzero(capacities == capacities.min())
    rng = np.random.default_rng(seed)
    out = []
    for g in np.unique(capacities):
        members = np.flatnonzero(capacities == g)
        k = max(1, int(np.floor(frac * len(members) + 0.5)))
        out.extend(rng.choice(members, size=min(k, len(members) - 1), replace=False))
    return np.sort(np.asarray(out, dtype=np.int64))


def client_descriptors(cfg: Config, shards: Sequence[Dataset]) -> np.ndarray:
    if cfg.method == "framp_onehot":
        return np.stack([onehot_descriptor(n, len(shards), cfg.l) for n in range(len(shards))])
    seed = cfg.sub_seed("extractor")
    return np.stack([compute_descriptor(seed, cfg.l, s) for s in shards])


def init_federation(cfg: Config, shards: Sequence[Dataset]) -> FederationState:
    spec = ModelSpec(cfg.layer_widths, cfg.activation)
    N = len(shards)
    caps = assign_capacities(N, cfg.levels, cfg.sub_seed("capacity"))
    holdout = select_holdout(caps, cfg.holdout, cfg.holdout_frac, cfg.sub_seed("holdout"))
    train = np.setdiff1d(np.arange(N), holdout)
    state = FederationState(
        spec=spec,
        method=cfg.method,
        descriptors=client_descriptors(cfg, shards),
        capacities=caps,
        train_clients=train,
        global_protos=PrototypeSet.empty(spec.n_classes, spec.hidden_dim),
    )
    if is_personalized(cfg.method):
        state.hn = init_hypernet(cfg.l, cfg.hn_hidden, spec, cfg.sub_seed("init"), cfg.hn_out_scale, cfg.hn_bias_init)
    else:
        state.shared_params = init_params(spec, cfg.sub_seed("init"))
    return state


def full_model(state: FederationState, client: int) -> np.ndarray:
    if state.hn is not None:
        return generate(state.hn, state.descriptors[client])
    return state.shared_params


def issue(state: FederationState, client: int, gamma: float | None = None):
    """Full parameters and mask the server would send ``client`` this round."""
    params = full_model(state, client)
    gamma = state.capacities[client] if gamma is None else gamma
    mask = make_mask(MASK_RULE[state.method], state.spec, params, gamma, state.round)
    return params, mask


@dataclass
class RoundRecord:
    round: int  # 1-based index of the completed round
    participants: np.ndarray
    masks: dict[int, np.ndarray]
    reports: dict[int, ClientReport]
    uploaded: dict[int, PrototypeSet]
    align_loss: float
    train_loss: float


def _perturb(cfg: Config, protos: PrototypeSet, round_: int, client: int) -> PrototypeSet:
    seed = [cfg.sub_seed("noise"), round_, client]
    if cfg.proto_noise == "gaussian":
        return perturb_gaussian(protos, cfg.proto_noise_a, seed)
    if cfg.proto_noise == "rotation":
        return perturb_rotation(protos, seed)
    return protos


def run_round(state: FederationState, shards: Sequence[Dataset], cfg: Config):
    """One communication round; returns ``(new_state, RoundRecord)``."""
    pool = state.train_clients
    picked = sample_participants(len(pool), cfg.participation, state.round, cfg.sub_seed("participants"))
    participants = pool[picked]
    lam = effective_lambda(cfg)
    issued_protos = state.global_protos

    masks: dict[int, np.ndarray] = {}
    reports: dict[int, ClientReport] = {}
    for n in participants:
        n = int(n)
        params, mask = issue(state, n)
        rng = np.random.default_rng([cfg.sub_seed("batches"), state.round, n])
        try:
            reports[n] = client_update(
                state.spec, params * mask, mask, issued_protos if lam > 0 else None,
                shards[n].train, cfg.local_steps, cfg.batch_size, cfg.lr, lam, rng,
            )
        except Exception as exc:
            raise ClientError(n, exc) from exc
        masks[n] = mask

    new = state.copy()
    order = sorted(reports)
    if state.hn is not None:
        # pseudo-gradient: the server descends along -(w_T - w_0)
        grads = [hn_backward(state.hn, state.descriptors[n], masks[n], -reports[n].delta) for n in order]
        new.hn = hn_step(state.hn, grads, cfg.hn_lr, cfg.hn_aggregate)
    else:
        new.shared_params = aggregate_shared(
            [reports[n].delta for n in order], [masks[n] for n in order], state.shared_params
        )

    uploaded: dict[int, PrototypeSet] = {}
    align = float("nan")
    if lam > 0:
        uploaded = {n: _perturb(cfg, reports[n].protos, state.round, n) for n in order}
        new.global_protos = aggregate_global([uploaded[n] for n in order], issued_protos)
        align = float(np.mean([alignment_loss(reports[n].protos, issued_protos) for n in order]))
    new.round = state.round + 1
    losses = [np.mean(reports[n].train_loss) for n in order if reports[n].train_loss]
    record = RoundRecord(
        round=new.round,
        participants=participants,
        masks=masks,
        reports=reports,
        uploaded=uploaded,
        align_loss=align,
        train_loss=float(np.mean(losses)) if losses else float("nan"),
    )
    return new, record


# --- checkpoints ------------------------------------------------------------------

def save_checkpoint(state: FederationState, path) -> None:
    arrays = dict(
        layer_widths=np.asarray(state.spec.layer_widths),
        activation=np.asarray(state.spec.activation),
        method=np.asarray(state.method),
        descriptors=state.descriptors,
        capacities=state.capacities,
        train_clients=state.train_clients,
        proto_vectors=state.global_protos.vectors,
        proto_present=state.global_protos.present,
        round=np.asarray(state.round),
    )
    if state.hn is not None:
        arrays.update(hn_l=np.asarray(state.hn.l), hn_m=np.asarray(state.hn.m), phi=state.hn.phi)
    else:
        arrays.update(shared_params=state.shared_params)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path) -> FederationState:
    with np.load(path) as z:
        spec = ModelSpec(tuple(int(x) for x in z["layer_widths"]), str(z["activation"]))
        state = FederationState(
            spec=spec,
            method=str(z["method"]),
            descriptors=z["descriptors"],
            capacities=z["capacities"],
            train_clients=z["train_clients"],
            global_protos=PrototypeSet(z["proto_vectors"], z["proto_present"]),
            round=int(z["round"]),
        )
        if "phi" in z:
            state.hn = HyperNetState(int(z["hn_l"]), int(z["hn_m"]), spec, z["phi"])
        else:
            state.shared_params = z["shared_params"]
    return state
