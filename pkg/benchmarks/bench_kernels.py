"""Compare the compiled and numpy kernels on batched solves and VJPs.

    python benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import timeit

import numpy as np

from rootlift import _kernels_py, kernels
from rootlift.synthlab import PerturbSpec, gen_scene, perturb

try:
    from rootlift import _dgpcore
except ImportError:
    _dgpcore = None


def make_inputs(batch, n_k=21):
    base = [perturb(gen_scene(i, n_k=n_k), PerturbSpec(2.0, 2, i)) for i in range(min(batch, 64))]
    idx = np.arange(batch) % len(base)
    rays = np.stack([base[i].rays for i in idx])
    rhs = np.stack([base[i].system().B.reshape(-1, 2) for i in idx])
    w = np.random.default_rng(0).uniform(0.1, 1.5, rays.shape[:2])
    t = _kernels_py.solve_batch(rays, rhs, w, kernels.COND_MAX)[0]
    g = np.random.default_rng(1).normal(size=(batch, 3))
    return rays, rhs, w, t, g


def bench(fn, repeat):
    times = timeit.repeat(fn, number=1, repeat=repeat)
    return min(times)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeat", type=int, default=20, help="timing repetitions; the minimum is reported")
    args = ap.parse_args()
    backends = {"numpy": _kernels_py}
    if _dgpcore is not None:
        backends["cython"] = _dgpcore
    print(f"active backend: {kernels.BACKEND}")
    print(f"{'op':6s} {'batch':>6s} " + " ".join(f"{b + ' (us)':>14s}" for b in backends) + "   speedup")
    for batch in (1, 20, 200, 2000):
        rays, rhs, w, t, g = make_inputs(batch)
        for op in ("solve", "vjp"):
            row = {}
            for name, mod in backends.items():
                if op == "solve":
                    row[name] = bench(lambda: mod.solve_batch(rays, rhs, w, kernels.COND_MAX), args.repeat)
                else:
                    row[name] = bench(lambda: mod.vjp_batch(rays, rhs, w, t, g, kernels.COND_MAX), args.repeat)
            speed = f"{row['numpy'] / row['cython']:8.1f}x" if "cython" in row else "       -"
            print(f"{op:6s} {batch:6d} " + " ".join(f"{1e6 * v:14.1f}" for v in row.values()) + f"  {speed}")


if __name__ == "__main__":
    main()
