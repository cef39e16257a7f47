"""Time each numba kernel against its numpy twin, then an end-to-end run
under both backends (the second one in a subprocess with CONDGRAD_NUMBA=0).

    python benchmarks/bench_kernels.py [--repeat 200] [--csv out.csv]
"""
import argparse
import os
import subprocess
import sys
import time

import numpy as np

from condgrad import _kernels


def best_of(fn, args, repeat):
    fn(*args)  # warm-up, includes compilation for the numba side
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - t0)
    return min(times)


def kernel_cases(rng):
    z = rng.standard_normal(2000)
    a = rng.standard_normal((60, 40))
    v0 = rng.standard_normal(40)
    v0 /= np.linalg.norm(v0)
    x = rng.standard_normal((300, 2))
    w = rng.standard_normal((5, 40)) * 0.1
    xs = rng.standard_normal((2000, 40))
    y = np.eye(5)[rng.integers(0, 5, 2000)]
    return {
        "softmin": (z, 1.0),
        "project_simplex": (z,),
        "power_iteration": (a, v0, 20),
        "rbf_gram": (x, x, 0.5),
        "xent_loss_grad": (w, xs, y),
    }


END_TO_END = """
import time
from condgrad.datasets import Circles, LowRankMulticlass, generate
from condgrad.softmax import train_softmax_fw
from condgrad.svm import Rbf, svm_train
circles = generate(Circles(200, seed=7))
lowrank = generate(LowRankMulticlass(2000, seed=0))
svm_train(circles, Rbf(0.5), T=5)
train_softmax_fw(lowrank, T=5)
t0 = time.perf_counter(); svm_train(circles, Rbf(0.5), T=500); t1 = time.perf_counter()
train_softmax_fw(lowrank, T=300); t2 = time.perf_counter()
print(f"{t1 - t0:.6f} {t2 - t1:.6f}")
"""


def end_to_end(numba_on):
    env = dict(os.environ, CONDGRAD_NUMBA="1" if numba_on else "0")
    out = subprocess.run([sys.executable, "-c", END_TO_END], env=env, check=True,
                         capture_output=True, text=True).stdout.split()
    return float(out[0]), float(out[1])


def main(argv=None):
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeat", type=int, default=200)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--csv")
    args = parser.parse_args(argv)
    if _kernels.BACKEND != "numba":
        print("numba is disabled or missing; only the numpy path can be timed", file=sys.stderr)
        return 1
    rng = np.random.default_rng(args.seed)
    rows = [("case", "numba_s", "numpy_s", "speedup")]
    for name, case_args in kernel_cases(rng).items():
        t_nb = best_of(getattr(_kernels, name + "_nb"), case_args, args.repeat)
        t_np = best_of(getattr(_kernels, name + "_np"), case_args, args.repeat)
        rows.append((name, t_nb, t_np, t_np / t_nb))
    svm_nb, sm_nb = end_to_end(True)
    svm_np, sm_np = end_to_end(False)
    rows.append(("svm_train_T500", svm_nb, svm_np, svm_np / svm_nb))
    rows.append(("softmax_fw_T300", sm_nb, sm_np, sm_np / sm_nb))

    print(f"{'case':<18}{'numba [s]':>12}{'numpy [s]':>12}{'speedup':>9}")
    for name, a, b, s in rows[1:]:
        print(f"{name:<18}{a:12.3e}{b:12.3e}{s:9.2f}")
    if args.csv:
        with open(args.csv, "w", newline="\n") as fh:
            for row in rows:
                fh.write(",".join(str(c) for c in row) + "\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
