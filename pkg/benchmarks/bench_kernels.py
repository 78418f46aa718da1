"""Time the compiled kernels against their plain-Python bodies (``.py_func``).

Only the outer function is uncompiled in the ``.py_func`` timings; kernels
it calls stay compiled.

    python3 benchmarks/bench_kernels.py [--repeat 5]

The last block times a short end-to-end run in a subprocess with
CLO_DISABLE_JIT=1, where every kernel (including the nested ones) runs
as Python.
"""

import argparse
import os
import subprocess
import sys
import time
from pathlib import Path

import numpy as np

from clo._jit import HAS_NUMBA, python_impl
from clo.channel import sample_channels
from clo.config import load_config
from clo.optimizer import EXACT, GREEDY, SlotProblem, solve_slot
from clo.queueing import QueueState
from clo.simulation import stream
from clo.tasks import LossKind, generate_tasks, loss_curves

ROOT = Path(__file__).resolve().parent.parent


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def report(name, fast, slow, repeat):
    fast()  # compile outside the timing
    a = best_of(fast, repeat)
    b = best_of(slow, max(1, repeat // 2))
    print(f"{name:<28} jit {a * 1e3:9.3f} ms   python {b * 1e3:9.3f} ms   x{b / a:7.1f}")


def bench_losses(repeat):
    cfg = load_config(ROOT / "scenarios" / "multi_hop.yaml")
    t = generate_tasks(stream(0, "calibration"), cfg.task_config, 200)
    mask = t["mask"].reshape(200, -1)
    pert = t["perturbation"].reshape(200, -1)
    n_true = mask.sum(axis=1).astype(np.int64)
    grid = np.linspace(0.05, 0.95, 19)
    r = np.zeros((200, len(grid)))
    p = np.zeros_like(r)
    args = (mask, pert, t["contrast"], n_true, 1.5, grid, int(LossKind.FNR),
            int(LossKind.RELATIVE_FP), r, p)
    report("loss_curves (200 x 19)", lambda: loss_curves(*args),
           lambda: python_impl(loss_curves)(*args), repeat)


def bench_solver(repeat, mode, label):
    cfg = load_config(ROOT / "scenarios" / "multi_hop.yaml")
    net = cfg.network
    rng = np.random.default_rng(1)
    q = QueueState(net.n_nodes, net.n_users)
    q.count[:] = rng.integers(0, 6, size=q.count.shape)
    gains = sample_channels(net, rng, 1)[0]
    prob = SlotProblem(net=net, queues=q, gains=gains, theta=np.full(3, 0.5), V=200, eta=0.1,
                       fhat=rng.random(q.count.shape))
    E, N, K = net.n_edges, net.n_nodes, net.n_users
    R, I, P = np.zeros((E, K), np.int64), np.zeros((N, K), np.int64), np.zeros(E)
    args = (mode, net.out_ptr, net.out_edges, net.dst, net.edge_cap, net.bandwidth, gains,
            net.p_max, np.asarray(prob.bits, float), prob.n0, prob.slot, prob.V, q.count,
            prob.weights, prob.proc_cost(), net.server_cap, 20, R, I, P)
    loops = 200

    def many(f):
        return lambda: [f(*args) for _ in range(loops)]

    report(f"solve_slot {label} (x{loops})", many(solve_slot), many(python_impl(solve_slot)),
           repeat)


def bench_end_to_end(slots):
    code = ("import sys; from clo.config import load_config; from clo.simulation import run_scenario;"
            f"run_scenario(load_config(sys.argv[1]).replace(slots={slots}), 0)")
    cfg = str(ROOT / "scenarios" / "multi_hop.yaml")
    out = {}
    for label, flag in (("jit", "0"), ("python", "1")):
        env = dict(os.environ, CLO_DISABLE_JIT=flag)
        subprocess.run([sys.executable, "-c", code, cfg], env=env, check=True)  # warm caches
        t = time.perf_counter()
        subprocess.run([sys.executable, "-c", code, cfg], env=env, check=True)
        out[label] = time.perf_counter() - t
    print(f"{f'run_scenario {slots} slots':<28} jit {out['jit']:9.3f} s    python {out['python']:9.3f} s"
          f"    x{out['python'] / out['jit']:7.1f}  (includes interpreter start-up)")


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--slots", type=int, default=500)
    args = ap.parse_args()
    if not HAS_NUMBA:
        sys.exit("numba is unavailable or CLO_DISABLE_JIT is set; nothing to compare")
    bench_losses(args.repeat)
    bench_solver(args.repeat, EXACT, "exact")
    bench_solver(args.repeat, GREEDY, "greedy")
    bench_end_to_end(args.slots)


if __name__ == "__main__":
    main()
