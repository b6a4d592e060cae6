"""Time the numba kernels against their numpy twins.

Both implementations are imported directly, so the SPOOFBENCH_JIT flag
does not matter here. Each case runs once to warm the JIT cache, then
reports the best of ``--repeat`` runs.

    python3 benchmarks/bench_kernels.py --size 128 --filters 32
"""
import argparse
import time

import numpy as np

from spoofbench import kernels


def best_time(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--size", type=int, default=128, help="image side in pixels")
    p.add_argument("--bands", type=int, default=16)
    p.add_argument("--filters", type=int, default=32)
    p.add_argument("--filter-size", type=int, default=5)
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args(argv)

    rng = np.random.default_rng(args.seed)
    img = rng.random((args.size, args.size, args.bands))
    w = rng.standard_normal((args.filters, args.filter_size, args.filter_size, args.bands))
    pos = rng.random((args.size, args.size, args.filters)) + 0.1

    cases = [
        ("conv", lambda k: lambda: getattr(kernels, f"conv_valid_{k}")(img, w)),
        ("pool a=2", lambda k: lambda: getattr(kernels, f"lp_pool_{k}")(pos, 3, 2, 2.0)),
        ("pool a=10", lambda k: lambda: getattr(kernels, f"lp_pool_{k}")(pos, 5, 2, 10.0)),
        ("divnorm", lambda k: lambda: getattr(kernels, f"divisive_norm_{k}")(pos, 5)),
    ]
    print(f"{'kernel':<10} {'numba ms':>10} {'numpy ms':>10} {'speedup':>8} {'max diff':>10}")
    for name, make in cases:
        a, b = make("numba")(), make("numpy")()
        diff = float(np.max(np.abs(a - b)))
        tn, tp = best_time(make("numba"), args.repeat), best_time(make("numpy"), args.repeat)
        print(f"{name:<10} {1e3 * tn:10.2f} {1e3 * tp:10.2f} {tp / tn:8.2f} {diff:10.2e}")


if __name__ == "__main__":
    main()
