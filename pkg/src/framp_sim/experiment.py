"""End-to-end experiment driver and its file outputs.

Outputs written to ``out_dir``:

``metrics.csv``
    One row per round: ``round, group_<g>..., local, union, align_loss,
    train_loss, gini_<g>...``. Accuracy columns are filled every
    ``eval_every`` rounds and on the final round, blank otherwise.
    ``gini_<g>`` is the Gini coefficient of per-parameter activation
    frequency over every mask issued to group ``g`` so far.
``report.json``
    Config echo, final table (``Local``, per-level, ``Union``), per-client
    and union accuracies, unseen-client results.
``masks.npz``
    Packed bitsets of every issued mask with its round, client and gamma.
``prototypes.csv``
    Uploaded local prototypes and the aggregated global set per round.
"""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .config import Config, dump_config
from .data import Dataset, dirichlet_partition, gen_synthetic, iid_clone_partition
from .engine import FederationState, effective_lambda, init_federation, run_round, save_checkpoint
from .masking import save_mask_bitsets
from .metrics import client_accuracies, coverage_from_frequency, group_means, new_client_eval, union_evaluate
from .prototypes import prototype_csv_header, prototype_csv_rows

log = logging.getLogger(__name__)


def level_label(g: float) -> str:
    return f"{g:g}"


@dataclass
class RoundMetrics:
    round: int
    group_acc: dict[float, float] | None
    local: float | None
    union: float | None
    align_loss: float
    train_loss: float
    gini: dict[float, float]


@dataclass
class ExperimentResult:
    config: Config
    metrics: list[RoundMetrics]
    client_acc: dict[int, float]
    group_acc: dict[float, float]
    local: float
    union_acc: dict[float, float]
    union: float
    gini: dict[float, float]
    state: FederationState
    initial_state: FederationState
    shards: list[Dataset]
    holdout_acc: dict[int, float] = field(default_factory=dict)
    holdout_control_acc: dict[int, float] = field(default_factory=dict)

    def align_loss_at(self, round_: int) -> float:
        return self.metrics[round_ - 1].align_loss


def build_shards(cfg: Config) -> list[Dataset]:
    ds = gen_synthetic(cfg.C, cfg.k, cfg.n_per_class, cfg.class_sep, cfg.sub_seed("data"))
    if cfg.partition == "iid_clone":
        return iid_clone_partition(ds, cfg.N)
    return dirichlet_partition(ds, cfg.N, cfg.alpha, cfg.sub_seed("partition"))


def _fmt(x) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    return f"{x:.6f}"


def metrics_header(levels) -> list[str]:
    return (
        ["round"]
        + [f"group_{level_label(g)}" for g in levels]
        + ["local", "union", "align_loss", "train_loss"]
        + [f"gini_{level_label(g)}" for g in levels]
    )


def metrics_row(m: RoundMetrics, levels) -> list[str]:
    groups = [_fmt(m.group_acc[g]) if m.group_acc else "" for g in levels]
    return (
        [str(m.round)]
        + groups
        + [_fmt(m.local), _fmt(m.union), _fmt(m.align_loss), _fmt(m.train_loss)]
        + [_fmt(m.gini.get(g)) for g in levels]
    )


def _group_gini(freq_sum: np.ndarray, count: int) -> float:
    # a budget that rounds down to zero leaves nothing active: Gini undefined
    if not freq_sum.any():
        return float("nan")
    return coverage_from_frequency(freq_sum / count)[1]


def _evaluate_now(state, shards, cfg, union_test):
    acc = client_accuracies(state, shards, state.train_clients)
    groups = group_means(acc, state.capacities, cfg.levels)
    local = float(np.mean(list(acc.values())))
    trained_levels = sorted({float(state.capacities[n]) for n in state.train_clients})
    union_acc = union_evaluate(state, sorted(set(cfg.eval_gammas) | set(trained_levels)), union_test)
    union = float(np.mean([union_acc[g] for g in trained_levels]))
    return acc, groups, local, union_acc, union


def run_experiment(cfg: Config, out_dir=None) -> ExperimentResult:
    shards = build_shards(cfg)
    state = init_federation(cfg, shards)
    initial = state.copy()
    levels = list(cfg.levels)
    union_test = Dataset.concat([shards[n].test for n in state.train_clients])
    d = state.spec.d
    freq_sum = {g: np.zeros(d) for g in levels}
    freq_n = {g: 0 for g in levels}
    mask_records = []
    proto_rows = []
    metrics: list[RoundMetrics] = []
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    log.info("running %s for %d rounds (%s kernels)", cfg.method, cfg.rounds, kernels.BACKEND)

    for r in range(cfg.rounds):
        state, rec = run_round(state, shards, cfg)
        for n in sorted(rec.masks):
            g = float(state.capacities[n])
            freq_sum[g] += rec.masks[n]
            freq_n[g] += 1
            mask_records.append((rec.round, n, g, rec.masks[n]))
            proto_rows.extend(prototype_csv_rows(rec.round, n, rec.reports[n].protos))
        if effective_lambda(cfg) > 0:
            proto_rows.extend(prototype_csv_rows(rec.round, "global", state.global_protos))
        gini = {g: _group_gini(freq_sum[g], freq_n[g]) for g in levels if freq_n[g]}

        due = rec.round == cfg.rounds or (cfg.eval_every and rec.round % cfg.eval_every == 0)
        if due:
            _, groups, local, _, union = _evaluate_now(state, shards, cfg, union_test)
            metrics.append(RoundMetrics(rec.round, groups, local, union, rec.align_loss, rec.train_loss, gini))
        else:
            metrics.append(RoundMetrics(rec.round, None, None, None, rec.align_loss, rec.train_loss, gini))
        if out is not None and cfg.checkpoint_every and rec.round % cfg.checkpoint_every == 0:
            save_checkpoint(state, out / f"checkpoint_r{rec.round:04d}.npz")

    acc, groups, local, union_acc, union = _evaluate_now(state, shards, cfg, union_test)
    result = ExperimentResult(
        config=cfg,
        metrics=metrics,
        client_acc=acc,
        group_acc=groups,
        local=local,
        union_acc=union_acc,
        union=union,
        gini=metrics[-1].gini if metrics else {},
        state=state,
        initial_state=initial,
        shards=shards,
    )
    holdout = state.holdout_clients
    if len(holdout):
        result.holdout_acc = new_client_eval(state, shards, holdout)
        result.holdout_control_acc = new_client_eval(initial, shards, holdout)

    if out is not None:
        with open(out / "metrics.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(metrics_header(levels))
            for m in metrics:
                w.writerow(metrics_row(m, levels))
        save_mask_bitsets(out / "masks.npz", mask_records, d)
        with open(out / "prototypes.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(prototype_csv_header(state.spec.hidden_dim))
            w.writerows(proto_rows)
        with open(out / "report.json", "w") as fh:
            json.dump(build_report(result), fh, indent=2)
        (out / "config.txt").write_text(dump_config(cfg))
    return result


def build_report(res: ExperimentResult) -> dict:
    cfg = res.config
    table = {"Local": res.local}
    table.update({level_label(g): res.group_acc[g] for g in cfg.levels})
    table["Union"] = res.union
    report = {
        "config": cfg.as_dict(),
        "kernel_backend": kernels.BACKEND,
        "rounds_run": res.state.round,
        "table": table,
        "union_by_gamma": {level_label(g): a for g, a in res.union_acc.items()},
        "client_accuracy": {str(n): a for n, a in res.client_acc.items()},
        "client_capacity": {str(n): float(res.state.capacities[n]) for n in range(res.state.N)},
        "mask_gini": {level_label(g): v for g, v in res.gini.items()},
    }
    if res.holdout_acc:
        report["unseen_clients"] = {
            "clients": [int(n) for n in res.holdout_acc],
            "accuracy": {str(n): a for n, a in res.holdout_acc.items()},
            "untrained_control_accuracy": {str(n): a for n, a in res.holdout_control_acc.items()},
            "mean": float(np.mean(list(res.holdout_acc.values()))),
            "control_mean": float(np.mean(list(res.holdout_control_acc.values()))),
        }
    return _json_safe(report)


def _json_safe(obj):
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, (float, np.floating)):
        return None if math.isnan(obj) else float(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    return obj
