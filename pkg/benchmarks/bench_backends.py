"""
Compare the numba and pure-numpy kernel paths.

Each backend runs in its own interpreter because the choice is made at import
time from ``CONVMG_DISABLE_NUMBA``. Reported times are the best of
``--repeat`` runs after one warm-up call (which also triggers compilation).

    python benchmarks/bench_backends.py --J 9 --repeat 3
"""
import argparse
import json
import os
import subprocess
import sys

WORKER = r"""
import json, sys, time
import numpy as np
from convmg import BACKEND, build_model, get_problem, fields
from convmg.loss import LossConfig, loss
from convmg.network import K_LINEAR, apply_error_propagation

J, repeat = int(sys.argv[1]), int(sys.argv[2])
rng = np.random.default_rng(0)
n = 2 ** J - 1
f = rng.standard_normal((10, n, n))
k = rng.standard_normal((3, 3))
g = fields.conv_down(f, k)
net = build_model("lmg", J, get_problem("p5"), operator_mode="stencil")
cases = {
    "conv_same": lambda: fields.conv_same(f, k),
    "conv_down": lambda: fields.conv_down(f, k),
    "conv_up": lambda: fields.conv_up(g, k, (n, n)),
    "kernel_grad": lambda: fields.conv_same_adjoint_kernel(f, f, 3),
    "vcycle_B": lambda: apply_error_propagation(net, f),
    "rho1": lambda: loss(net, LossConfig(power_k=2, n_batch=10)),
}
out = {"backend": BACKEND}
for name, fn in cases.items():
    fn()
    best = float("inf")
    for _ in range(repeat):
        t = time.perf_counter(); fn(); best = min(best, time.perf_counter() - t)
    out[name] = best
print(json.dumps(out))
"""


def run(disable, J, repeat):
    env = dict(os.environ, CONVMG_DISABLE_NUMBA="1" if disable else "0")
    res = subprocess.run([sys.executable, "-c", WORKER, str(J), str(repeat)], env=env,
                         capture_output=True, text=True, check=True)
    return json.loads(res.stdout.strip().splitlines()[-1])


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.strip().splitlines()[0])
    ap.add_argument("--J", type=int, default=9, help="grid exponent (batch of 10 fields)")
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)

    nb = run(False, args.J, args.repeat)
    npy = run(True, args.J, args.repeat)
    if nb["backend"] != "numba":
        print("numba is unavailable; only the numpy path was timed", file=sys.stderr)
    side = 2 ** args.J - 1
    print(f"batch 10 x {side} x {side}, best of {args.repeat}")
    print(f"{'case':12s} {'numba [ms]':>11s} {'numpy [ms]':>11s} {'speedup':>8s}")
    for name in (k for k in nb if k != "backend"):
        a, b = nb[name] * 1e3, npy[name] * 1e3
        print(f"{name:12s} {a:11.2f} {b:11.2f} {b / a:8.2f}")


if __name__ == "__main__":
    main()
