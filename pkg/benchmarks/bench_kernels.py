"""Compare the jitted training kernel against the pure-numpy lane.

The numpy lane runs in a subprocess with SARTBENCH_NUMBA=0 so the import-
time selection is exercised exactly as a user would hit it.

    python benchmarks/bench_kernels.py [--samples N] [--epochs E]
"""

import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np

WORKLOAD = """
import json, time
import numpy as np
from sartbench import _kernels

spec = json.loads({spec!r})
rng = np.random.default_rng(0)
n, d, h, o = spec["samples"], 14, spec["hidden"], 7
x = rng.normal(size=(n, d))
y = rng.normal(size=(n, o)) * 0.01
w1 = rng.normal(size=(d, h)) * 0.1
b1 = np.zeros(h)
w2 = rng.normal(size=(h, h)) * 0.1
b2 = np.zeros(h)
w3 = rng.normal(size=(h, o)) * 0.1
b3 = np.zeros(o)
perms = np.ascontiguousarray(
    np.stack([rng.permutation(n) for _ in range(spec["epochs"])]), dtype=np.int64)
lrs = np.full(spec["epochs"], 1e-3)

# warm-up pass compiles the kernel when numba is active
_kernels.train_loop(x[:64], y[:64], w1.copy(), b1.copy(), w2.copy(), b2.copy(),
                    w3.copy(), b3.copy(), perms[:1, :64] % 64, 32, lrs[:1],
                    0.9, 0.999, 1e-8, 1e-4, 0.0)
t0 = time.perf_counter()
losses = _kernels.train_loop(x, y, w1, b1, w2, b2, w3, b3, perms, 32, lrs,
                             0.9, 0.999, 1e-8, 1e-4, 0.0)
elapsed = time.perf_counter() - t0
print(json.dumps({{"numba": _kernels.USING_NUMBA, "seconds": elapsed,
                   "final_loss": float(losses[-1])}}))
"""


def run_lane(spec, numba: bool):
    env = dict(os.environ, SARTBENCH_NUMBA="1" if numba else "0")
    out = subprocess.run([sys.executable, "-c", WORKLOAD.format(spec=json.dumps(spec))],
                         capture_output=True, text=True, env=env, check=True)
    return json.loads(out.stdout.strip().splitlines()[-1])


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--samples", type=int, default=2700)
    ap.add_argument("--epochs", type=int, default=200)
    ap.add_argument("--hidden", type=int, default=64)
    args = ap.parse_args()
    spec = {"samples": args.samples, "epochs": args.epochs, "hidden": args.hidden}

    lanes = {}
    for name, flag in (("numba", True), ("numpy", False)):
        lanes[name] = run_lane(spec, flag)
        mode = "jit" if lanes[name]["numba"] else "numpy"
        print(f"{name:>6s} lane ({mode}): {lanes[name]['seconds']:.3f} s, "
              f"final loss {lanes[name]['final_loss']:.6e}")
    if lanes["numba"]["numba"]:
        speedup = lanes["numpy"]["seconds"] / lanes["numba"]["seconds"]
        print(f"speedup: {speedup:.2f}x")
        drift = abs(lanes["numba"]["final_loss"] - lanes["numpy"]["final_loss"])
        rel = drift / max(abs(lanes["numpy"]["final_loss"]), 1e-300)
        print(f"final-loss relative difference: {rel:.2e}")
        if rel > 1e-6:
            raise SystemExit("lanes disagree beyond float reassociation noise")
    else:
        print("numba unavailable; only the numpy lane ran")


if __name__ == "__main__":
    main()
