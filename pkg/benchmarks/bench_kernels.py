"""Compare the numba kernels with the pure-numpy fallback.

Each backend runs in its own interpreter because the choice is made at
import time (``CAUSALFUZZ_DISABLE_JIT``).  Reported numbers are the best of
``--repeat`` runs after one warm-up run, so numba compile time is excluded.

    python3 benchmarks/bench_kernels.py [--horizon 86400] [--repeat 3]
"""
import argparse
import json
import os
import subprocess
import sys
import time

WORKLOADS = ("nominal", "injected", "planning")


def worker(horizon: float, repeat: int) -> dict:
    import numpy as np

    from causalfuzz import kernels
    from causalfuzz.capabilities import capset
    from causalfuzz.fuzz import Campaign, make_goal, plan_walk
    from causalfuzz.equivalence import ExclusionStack
    from causalfuzz.miniswat import load_miniswat
    from causalfuzz.plant import make_control_state, make_physical_state, run_plant

    m = load_miniswat()
    q0, x0 = make_control_state(m), make_physical_state(m, [600.0, 600.0, 600.0])
    inj = capset(("MV101", "open"), ("P101", "off"))
    camp = Campaign(m, make_goal(m, "LIT101-High"), walks=20, max_iterations=1)
    stack = ExclusionStack(camp.strategy)

    def run(name):
        if name == "nominal":
            return run_plant(m, q0, x0, horizon)
        if name == "injected":
            return run_plant(m, q0, x0, horizon, inj)
        return plan_walk(camp, (q0, x0), stack, np.random.default_rng(0))

    out = {"backend": kernels.BACKEND}
    for name in WORKLOADS:
        run(name)  # warm-up (and compilation)
        best = float("inf")
        for _ in range(repeat):
            t0 = time.perf_counter()
            run(name)
            best = min(best, time.perf_counter() - t0)
        out[name] = best
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--horizon", type=float, default=86400.0)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--worker", action="store_true", help=argparse.SUPPRESS)
    args = ap.parse_args()
    if args.worker:
        print(json.dumps(worker(args.horizon, args.repeat)))
        return
    rows = []
    for disable in ("0", "1"):
        env = dict(os.environ, CAUSALFUZZ_DISABLE_JIT=disable)
        cmd = [sys.executable, __file__, "--worker", "--horizon", str(args.horizon), "--repeat", str(args.repeat)]
        res = subprocess.run(cmd, env=env, capture_output=True, text=True, check=True)
        rows.append(json.loads(res.stdout.strip().splitlines()[-1]))
    print(f"horizon {args.horizon:g} s ({args.horizon:g} ticks), planning = 20 walks x 3 x 600 s")
    print(f"{'workload':<10} " + " ".join(f"{r['backend']:>12}" for r in rows) + f" {'speedup':>9}")
    for name in WORKLOADS:
        a, b = rows[0][name], rows[1][name]
        print(f"{name:<10} " + " ".join(f"{r[name]:>11.4f}s" for r in rows) + f" {b / a:>8.1f}x")


if __name__ == "__main__":
    main()
