#!/usr/bin/env python3
"""Compare the numba kernels with the pure-numpy fallback.

Times ``loss_grad`` on one batch and ``local_sgd`` (20 steps, batch 16) at
each capacity level for the numpy kernel, the numba sparse kernel, the numba
dense-loop kernel and the dispatching ``kernels.local_sgd``; then a short
end-to-end experiment under each backend (in subprocesses, since the
backend is fixed at import).

    python benchmarks/bench_kernels.py [--repeat 50] [--rounds 20]
"""
import argparse
import os
import subprocess
import sys
import time

import numpy as np

from framp_sim import kernels
from framp_sim.engine import batch_schedule
from framp_sim.masking import global_topk_mask
from framp_sim.nn import ModelSpec, init_params


def best_of(fn, repeat):
    fn()  # warm-up (triggers JIT compilation for numba)
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def kernel_table(repeat):
    nb = kernels.numba_backend()
    npb = kernels.numpy_backend
    spec = ModelSpec((16, 64, 32, 8), "tanh")
    rng = np.random.default_rng(0)
    w_full = init_params(spec, 0)
    X = rng.standard_normal((160, 16))
    y = rng.integers(0, 8, 160)
    gp = rng.standard_normal((8, 32))
    present = np.ones(8, dtype=np.bool_)
    sched = batch_schedule(160, 20, 16, rng)
    widths = spec.widths_array

    print(f"model {list(spec.layer_widths)}, d={spec.d}; best of {repeat}; times in ms")
    t_np = best_of(lambda: npb.loss_grad(widths, False, w_full, X[:16], y[:16], gp, present, 0.5), repeat)
    t_nb = best_of(lambda: nb.loss_grad(widths, False, w_full, X[:16], y[:16], gp, present, 0.5), repeat)
    print(f"loss_grad (B=16): numpy {1e3 * t_np:.3f}  numba {1e3 * t_nb:.3f}\n")
    print(f"{'local_sgd':<16}{'active':>8}{'numpy':>9}{'nb sparse':>11}{'nb dense':>10}{'dispatch':>10}{'speedup':>9}")
    for gamma in (1 / 64, 1 / 16, 1 / 4, 1.0):
        mask = global_topk_mask(w_full, gamma).astype(np.float64)
        w = w_full * mask
        args = (widths, False, w, mask, X, y, sched, gp, present, 0.5, 0.1)
        t_np = best_of(lambda: npb.local_sgd(*args), repeat)
        t_sp = best_of(lambda: nb.sparse_sgd(*args), repeat)
        t_de = best_of(lambda: nb.local_sgd(*args), repeat)
        t_dp = best_of(lambda: kernels.local_sgd(*args), repeat)
        print(f"{'gamma=' + format(gamma, 'g'):<16}{int(mask.sum()):>8}{1e3 * t_np:>9.3f}{1e3 * t_sp:>11.3f}"
              f"{1e3 * t_de:>10.3f}{1e3 * t_dp:>10.3f}{t_np / t_dp:>8.1f}x")


def experiment_time(disable_numba, rounds):
    code = (
        "import time; from framp_sim.config import Config; from framp_sim.experiment import run_experiment;"
        f"cfg = Config(participation=0.5, rounds={rounds}, eval_every=0);"
        "run_experiment(cfg.replace(rounds=1));"  # warm-up / JIT cache
        "t = time.perf_counter(); run_experiment(cfg); print(time.perf_counter() - t)"
    )
    env = dict(os.environ, FRAMP_SIM_DISABLE_NUMBA="1" if disable_numba else "0")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    return float(out.stdout.strip().splitlines()[-1])


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=50)
    ap.add_argument("--rounds", type=int, default=20)
    args = ap.parse_args()
    kernel_table(args.repeat)
    t_np = experiment_time(True, args.rounds)
    t_nb = experiment_time(False, args.rounds)
    print(f"\nexperiment, {args.rounds} rounds, N=20, participation 0.5:")
    print(f"  numpy {t_np:.2f}s   numba {t_nb:.2f}s   speedup {t_np / t_nb:.1f}x")


if __name__ == "__main__":
    main()
