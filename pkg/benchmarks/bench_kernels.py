"""Time the slot kernel and one value-iteration solve under numba and under
the pure-Python fallback.

Each backend runs in a fresh interpreter because the choice is made at
import time from ``MMWAVE_CRAN_NO_NUMBA``.

    python3 benchmarks/bench_kernels.py --slots 200000
"""
import argparse
import json
import os
import subprocess
import sys

CHILD = r"""
import json, sys, time
from mmwave_cran import backend, exact
from mmwave_cran.channel import LinkStateSpace, sticky_chain
from mmwave_cran.dynamics import Network, SystemParams, TrafficModel
from mmwave_cran.simulation import Simulator

slots, solve = int(sys.argv[1]), sys.argv[2] == "1"
out = {"backend": backend()}
net = Network(SystemParams(J=3), traffic=TrafficModel(3.0))
for policy in ("proposed", "max_rate"):
    Simulator(net, policy, seed=0).run(10)          # compile / warm caches
    sim = Simulator(net, policy, seed=1)
    t0 = time.perf_counter()
    sim.run(slots)
    dt = time.perf_counter() - t0
    out[policy] = {"us_per_slot": 1e6 * dt / slots,
                   "objective": sim.metrics().objective}
if solve:
    ch = sticky_chain(LinkStateSpace(("NLOS", "LOS"), (3.0, 8.0)), 0.6)
    desk = Network(SystemParams(J=2, q_max=2), chains=(ch,) * 4,
                   traffic=TrafficModel(2.0))
    exact.solve(desk)
    t0 = time.perf_counter()
    sol = exact.solve(desk)
    out["solve"] = {"seconds": time.perf_counter() - t0, "gain": sol.gain}
print(json.dumps(out))
"""


def run_backend(no_numba: bool, slots: int, solve: bool) -> dict:
    env = dict(os.environ)
    env["MMWAVE_CRAN_NO_NUMBA"] = "1" if no_numba else "0"
    res = subprocess.run([sys.executable, "-c", CHILD, str(slots), "1" if solve else "0"],
                         env=env, capture_output=True, text=True, check=True)
    return json.loads(res.stdout.strip().splitlines()[-1])


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--slots", type=int, default=200_000)
    ap.add_argument("--no-solve", action="store_true")
    args = ap.parse_args()

    fast = run_backend(False, args.slots, not args.no_solve)
    slow = run_backend(True, args.slots, not args.no_solve)
    print(f"{'kernel':<12}{'numba':>14}{'python':>14}{'speedup':>10}  same result")
    for key in ("proposed", "max_rate"):
        a, b = fast[key]["us_per_slot"], slow[key]["us_per_slot"]
        same = fast[key]["objective"] == slow[key]["objective"]
        print(f"{key:<12}{a:>11.2f} us{b:>11.2f} us{b / a:>9.1f}x  {same}")
    if "solve" in fast:
        a, b = fast["solve"]["seconds"], slow["solve"]["seconds"]
        same = abs(fast["solve"]["gain"] - slow["solve"]["gain"]) < 1e-9
        print(f"{'solve':<12}{a:>12.3f} s{b:>12.3f} s{b / a:>9.1f}x  {same}")


if __name__ == "__main__":
    main()
