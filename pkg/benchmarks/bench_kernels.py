"""Time each hot kernel on its numba and numpy paths.

    python3 benchmarks/bench_kernels.py [--repeat 20]

The first jit call compiles (or loads the on-disk cache); it is excluded
from the timings. Outputs of the two paths are checked to agree.
"""

import argparse
import time

import numpy as np

from ecoforecast import kernels


def _best(fn, args, repeat):
    best = np.inf
    for _ in range(repeat):
        a = [x.copy() if isinstance(x, np.ndarray) else x for x in args]
        t0 = time.perf_counter()
        fn(*a)
        best = min(best, time.perf_counter() - t0)
    return best


def cases(rng):
    n = 20000
    v = rng.uniform(0, 20, n)
    v0 = rng.uniform(11, 22, n)
    gap = rng.uniform(1, 200, n)
    gap[::17] = np.inf
    dv = rng.normal(0, 2, n)
    yield "idm_accel", (v, v0, gap, dv, 1.5, 2.0, 2.0, 1.5, 4.0, 6.0)

    # 200 lanes of 50 vehicles, back-to-front crowded so the clamp does work
    lanes, per = 200, 50
    pos = np.empty(lanes * per)
    leader = np.full(lanes * per, -1, dtype=np.int64)
    for ln in range(lanes):
        ids = np.arange(ln * per, (ln + 1) * per)
        pos[ids] = np.sort(rng.uniform(0, 300, per))[::-1]
        leader[ids[1:]] = ids[:-1]
    order = np.arange(lanes * per, dtype=np.int64)
    yield "clamp_lanes", (order, leader, pos, rng.uniform(0, 15, lanes * per), 7.5)

    m = 5000
    w = rng.normal(size=m)
    X = rng.normal(size=(m, 2))
    yield "css_residuals", (w, X, 0.1, np.array([0.5, -0.2]), np.array([0.3, 0.1]),
                            np.array([0.4, 0.2]), 2)

    yield "nearest_centroid", (rng.normal(size=(20000, 3)), rng.normal(size=(15, 3)))

    g = rng.integers(0, 500, 200000)
    yield "group_sum", (g, rng.normal(size=g.size), 500)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    rng = np.random.default_rng(args.seed)

    print(f"{'kernel':<18}{'numba ms':>10}{'numpy ms':>10}{'speedup':>9}")
    for name, a in cases(rng):
        jit = getattr(kernels, name + "_jit")
        ref = getattr(kernels, name + "_np")
        out_j = jit(*[x.copy() if isinstance(x, np.ndarray) else x for x in a])
        out_n = ref(*[x.copy() if isinstance(x, np.ndarray) else x for x in a])
        if isinstance(out_j, np.ndarray):
            out_j, out_n = (out_j,), (out_n,)
        for p, q in zip(out_j, out_n):
            np.testing.assert_allclose(p, q, rtol=1e-10, atol=1e-12)
        tj = _best(jit, a, args.repeat)
        tn = _best(ref, a, args.repeat)
        print(f"{name:<18}{tj * 1e3:>10.3f}{tn * 1e3:>10.3f}{tn / tj:>8.1f}x")


if __name__ == "__main__":
    main()
