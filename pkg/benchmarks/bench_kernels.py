"""Numba vs pure-numpy kernels.

Times every kernel pair in-process on representative sizes, then one
end-to-end certification rung in a subprocess per backend (the backend is
fixed at import time by MFNASH_NUMBA).

    python3 benchmarks/bench_kernels.py [--repeat 5] [--csv out.csv]
"""

import argparse
import csv
import os
import subprocess
import sys
import time

import numpy as np

from mfnash import kernels

RUNG = r"""
import time
import numpy as np
from mfnash import _accel
from mfnash.cert import build_dictionary, run_rung
from mfnash.game import FeedbackStrategy
from mfnash.mfg import build_space_grid, picard_iterate, zero_control_flow
from mfnash.models import get_model
from mfnash.sde import build_time_grid

spec = get_model("toy-interbank")
grid = build_time_grid(1.0, 20)
space = build_space_grid(spec, grid, 113)
init = zero_control_flow(spec, grid, 20000, 0)
t0 = time.perf_counter()
policy, flow, _ = picard_iterate(spec, space, init, m=20000, seed=0)
t1 = time.perf_counter()
d = build_dictionary(spec, FeedbackStrategy(policy, label="candidate"), flow, space)
run_rung(spec, policy, flow, d, 50, 4, 0, 1000)  # warm-up (jit)
t2 = time.perf_counter()
r = run_rung(spec, policy, flow, d, 400, 100, 0, 1000)
t3 = time.perf_counter()
print(_accel.backend(), t1 - t0, t3 - t2, repr(float(r.dw_hat.sum())))
"""


def best_of(fn, repeat):
    fn()  # jit warm-up
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def cases(rng):
    x = np.sort(rng.normal(size=3200))
    y = np.sort(rng.normal(size=20000))
    rows = np.sort(rng.normal(size=(200, 1600)), axis=1)
    J, na = 113, 65
    v = rng.normal(size=J)
    drift = 0.05 * rng.normal(size=J)
    hv = np.full(J, 0.02)
    beta = np.tile(np.linspace(-3, 3, na)[:, None], (1, J))
    run = rng.uniform(size=(na, J))
    table = rng.uniform(-3, 3, size=(21, J))
    xq = rng.normal(size=20000)
    fp = rng.normal(size=J)
    return [
        ("w2_sq_sorted 3200 vs 20000", lambda k: k.w2_sq_sorted_np(x, y), lambda k: k.w2_sq_sorted_nb(x, y)),
        ("w2_sq_rows_to_ref 200x1600 vs 20000",
         lambda k: k.w2_sq_rows_to_ref_np(rows, y), lambda k: k.w2_sq_rows_to_ref_nb(rows, y)),
        ("hjb_layer 65 actions x 113 nodes",
         lambda k: k.hjb_layer_np(v, -8.0, 0.14, drift, hv, beta, 0.075, run),
         lambda k: k.hjb_layer_nb(v, -8.0, 0.14, drift, hv, beta, 0.075, run)),
        ("policy_eval 20000 points",
         lambda k: k.policy_eval_np(table, 0.0, 0.05, -8.0, 0.14, 0.33, xq, -3.0, 3.0),
         lambda k: k.policy_eval_nb(table, 0.0, 0.05, -8.0, 0.14, 0.33, xq, -3.0, 3.0)),
        ("interp_uniform 20000 points",
         lambda k: k.interp_uniform_np(xq, -8.0, 0.14, fp), lambda k: k.interp_uniform_nb(xq, -8.0, 0.14, fp)),
    ]


def end_to_end():
    out = {}
    for flag in ("1", "0"):
        env = dict(os.environ, MFNASH_NUMBA=flag)
        res = subprocess.run([sys.executable, "-c", RUNG], env=env, capture_output=True, text=True, check=True)
        name, picard, rung, check = res.stdout.split()
        out[name] = (float(picard), float(rung), check)
    return out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--csv", help="write the timings here")
    ap.add_argument("--skip-end-to-end", action="store_true")
    args = ap.parse_args(argv)

    rng = np.random.default_rng(0)
    rows = []
    print(f"{'kernel':42s} {'numpy [ms]':>11s} {'numba [ms]':>11s} {'speed-up':>9s}")
    for name, f_np, f_nb in cases(rng):
        t_np = best_of(lambda: f_np(kernels), args.repeat)
        t_nb = best_of(lambda: f_nb(kernels), args.repeat)
        rows.append((name, t_np, t_nb))
        print(f"{name:42s} {1e3 * t_np:11.3f} {1e3 * t_nb:11.3f} {t_np / t_nb:9.1f}")

    if not args.skip_end_to_end:
        e2e = end_to_end()
        for stage, i in (("picard solve (m=20000)", 0), ("rung n=400, 100 reps, 21 strategies", 1)):
            t_nb, t_np = e2e["numba"][i], e2e["numpy"][i]
            rows.append((stage, t_np, t_nb))
            print(f"{stage:42s} {1e3 * t_np:11.1f} {1e3 * t_nb:11.1f} {t_np / t_nb:9.1f}")
        same = e2e["numba"][2] == e2e["numpy"][2]
        print(f"rung checksum identical across backends: {same}")

    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["case", "numpy_s", "numba_s"])
            w.writerows(rows)


if __name__ == "__main__":
    main()
