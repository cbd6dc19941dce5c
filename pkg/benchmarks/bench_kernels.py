"""Time the numpy and numba flavour of each hot kernel on the same inputs.

    python3 benchmarks/bench_kernels.py [--n 250000] [--repeat 5]
"""
import argparse
import time

import numpy as np

from hurdle_imdl import kernels
from hurdle_imdl.verify import DEFAULT_THRESHOLDS


def best_of(fn, args, repeat):
    fn(*args)  # warm-up, includes JIT compilation for the numba flavour
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - t0)
    return min(times)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=250_000, help="samples per call")
    ap.add_argument("--grid", type=int, default=2048, help="posterior grid size")
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)

    rng = np.random.default_rng(0)
    n = args.n
    labels = np.where(rng.random(n) < 0.22, 0.0, np.exp(0.46 + 1.28 * rng.standard_normal(n)))
    logits = rng.standard_normal(n)
    mu = rng.standard_normal(n)
    ret = np.abs(labels + rng.standard_normal(n))
    th = np.asarray(DEFAULT_THRESHOLDS)
    signals = rng.standard_normal((200, 1)) * 10
    means = -10 * np.log1p(np.exp(np.linspace(-7, 8, args.grid)))[:, None]

    cases = [
        ("hurdle_nll", kernels.hurdle_nll_numpy, kernels.hurdle_nll_numba,
         (labels, logits, mu, 0.5, 0.46, 1.28, 1e-7, True, True, True)),
        ("graded_tallies", kernels.graded_tallies_numpy, kernels.graded_tallies_numba,
         (ret, labels, th)),
        ("gaussian_loglik_grid", kernels.gaussian_loglik_grid_numpy,
         kernels.gaussian_loglik_grid_numba, (signals, means, 9.0)),
    ]
    print(f"{'kernel':22s} {'numpy ms':>10s} {'numba ms':>10s} {'speedup':>8s}")
    for name, f_np, f_nb, a in cases:
        t_np = best_of(f_np, a, args.repeat)
        t_nb = best_of(f_nb, a, args.repeat)
        print(f"{name:22s} {1e3 * t_np:10.2f} {1e3 * t_nb:10.2f} {t_np / t_nb:8.2f}")


if __name__ == "__main__":
    main()
