"""Compare the compiled accumulation kernel with the NumPy fallback.

Usage: python benchmarks/bench_kernels.py [--repeat 200]

Times the raw kernel at several sample sizes and a full fit plus bias
correction on one simulated dataset, once per backend.
"""

import argparse
import timeit
from unittest import mock

import numpy as np

from eivbias import _backend
from eivbias.bias import correct
from eivbias.estimator import fit
from eivbias.model import moment_structure
from eivbias.montecarlo import Scenario, generate_taus, simulate_dataset
from eivbias.oracle import random_instance


def kernel_args(v, m, n):
    t, data = random_instance(np.random.default_rng(0), v, m, n)
    st = moment_structure(t)
    return np.ascontiguousarray(st.sigma0), data.tau_blocks, np.ascontiguousarray(data.z - st.mu)


def best_of(fn, repeat):
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=200)
    args = ap.parse_args()

    backends = {"numpy": _backend.py_accumulate}
    if _backend.ext_accumulate is not None:
        backends["cython"] = _backend.ext_accumulate
    else:
        print("compiled kernel not built; timing the NumPy fallback only")

    print(f"{'kernel':<22}" + "".join(f"{name:>12}" for name in backends) + "     speedup")
    for v, m, n in [(1, 1, 40), (1, 1, 1000), (2, 2, 40), (2, 2, 1000)]:
        a = kernel_args(v, m, n)
        times = {name: best_of(lambda f=f: f(*a), args.repeat) for name, f in backends.items()}
        line = f"v={v} m={m} n={n:<10}" + "".join(f"{1e6 * t:>10.1f}us" for t in times.values())
        if len(times) == 2:
            line += f"  {times['numpy'] / times['cython']:>9.1f}x"
        print(line)

    scn = Scenario("uniform", n=40, seed=1)
    data = simulate_dataset(scn, generate_taus(scn), 0)

    def fit_and_correct():
        correct(fit(data), data)

    times = {}
    for name, f in backends.items():
        with mock.patch.object(_backend, "accumulate", f):
            times[name] = best_of(fit_and_correct, max(5, args.repeat // 10))
    line = f"{'fit+correct n=40':<22}" + "".join(f"{1e3 * t:>10.2f}ms" for t in times.values())
    if len(times) == 2:
        line += f"  {times['numpy'] / times['cython']:>9.1f}x"
    print(line)


if __name__ == "__main__":
    main()
