"""Time each hot kernel through its numba and numpy implementations.

Both paths are imported side by side, so TWINSAC_DISABLE_JIT does not matter
here. Run with ``python benchmarks/bench_kernels.py [--repeat N]``.
"""

import argparse
import timeit

import numpy as np

from twinsac import _kernels as K
from twinsac._accel import HAVE_NUMBA
from twinsac.kinematics import ArmModel


def cases(rng):
    params = ArmModel().params
    q = rng.uniform(-1.5, 1.5, 6)
    qs = rng.uniform(-1.5, 1.5, (10_000, 6))
    logits = rng.normal(size=(256, 7, 3))
    n = 21_397  # parameter count of the default 16-128-128-21 network
    p, g = rng.normal(size=n), rng.normal(size=n)
    m, v = np.zeros(n), np.zeros(n)
    adam_args = (3e-4, 0.9, 0.999, 1e-8, 0.1, 0.001)
    return [
        ("fk single", lambda: K.fk_single_jit(params, q), lambda: K.fk_single_numpy(params, q)),
        ("fk batch 10k", lambda: K.fk_batch_jit(params, qs), lambda: K.fk_batch_numpy(params, qs)),
        ("log_softmax 256x7x3", lambda: K.log_softmax_jit(logits), lambda: K.log_softmax_numpy(logits)),
        (
            "adam step 21k",
            lambda: K._adam_step_jit(p, g, m, v, *adam_args),
            lambda: K.adam_step_numpy(p, g, m, v, *adam_args),
        ),
        ("polyak 21k", lambda: K._polyak_jit(m, p, 0.005), lambda: K.polyak_numpy(m, p, 0.005)),
    ]


def best_us(fn, repeat: int) -> float:
    fn()  # compile / warm caches
    number = max(1, int(0.05 / max(timeit.timeit(fn, number=1), 1e-7)))
    return min(timeit.repeat(fn, number=number, repeat=repeat)) / number * 1e6


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if not HAVE_NUMBA:
        print("numba not importable: the jit column runs the plain Python loops")
    rng = np.random.default_rng(0)
    print(f"{'kernel':<22}{'numba us':>12}{'numpy us':>12}{'speedup':>10}")
    for name, jit_fn, np_fn in cases(rng):
        a, b = best_us(jit_fn, args.repeat), best_us(np_fn, args.repeat)
        print(f"{name:<22}{a:>12.2f}{b:>12.2f}{b / a:>9.1f}x")


if __name__ == "__main__":
    main()
