"""Compare the compiled and pure-Python kernels.

    python benchmarks/bench_kernels.py [--repeat N]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from emolab import _pykernels

try:
    from emolab import _ckernels
except ImportError:
    _ckernels = None


def problems(rng, n, count):
    for _ in range(count):
        E = rng.normal(size=(n, 8))
        E /= np.linalg.norm(E, axis=1, keepdims=True)
        cost = np.clip(1.0 - E @ E.T, 0.0, 2.0)
        yield rng.dirichlet(np.ones(n)), rng.dirichlet(np.ones(n)), cost


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        start = time.perf_counter()
        fn()
        times.append(time.perf_counter() - start)
    return min(times)


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=3)
    args = parser.parse_args(argv)
    backends = {"python": _pykernels}
    if _ckernels is not None:
        backends["cython"] = _ckernels
    else:
        print("compiled extension not built; timing the pure-Python kernels only")

    rng = np.random.default_rng(0)
    print(f"{'kernel':<28}{'size':>6}" + "".join(f"{b:>12}" for b in backends) + f"{'speedup':>10}")
    for n, count in ((8, 200), (16, 100), (32, 40), (64, 10)):
        batch = list(problems(rng, n, count))
        ref = [_pykernels.transport_simplex(a, b, c)[0] for a, b, c in batch]
        times = {}
        for name, mod in backends.items():
            flows = [mod.transport_simplex(a, b, c)[0] for a, b, c in batch]
            assert all(np.allclose(f, r, atol=1e-12) for f, r in zip(flows, ref))
            times[name] = best_of(lambda: [mod.transport_simplex(a, b, c) for a, b, c in batch], args.repeat)
        row(f"transport_simplex x{count}", n, times)
    for n, count in ((32, 500), (128, 100), (512, 10)):
        pairs = [(rng.integers(0, 20, n), rng.integers(0, 20, n)) for _ in range(count)]
        times = {name: best_of(lambda: [mod.lcs_length(x, y) for x, y in pairs], args.repeat)
                 for name, mod in backends.items()}
        row(f"lcs_length x{count}", n, times)


def row(label, n, times):
    speed = f"{times['python'] / times['cython']:>9.1f}x" if "cython" in times else ""
    print(f"{label:<28}{n:>6}" + "".join(f"{t * 1e3:>10.1f}ms" for t in times.values()) + speed)


if __name__ == "__main__":
    main()
