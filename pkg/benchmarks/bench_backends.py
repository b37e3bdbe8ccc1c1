"""Compare the compiled and pure-numpy epoch kernels.

Runs identical training epochs through both backends and reports wall time
per epoch plus the throughput ratio. The first compiled call includes JIT
compilation, so each kernel is warmed up before timing.

    python3 benchmarks/bench_backends.py [--repeats 5] [--quick]
"""

import argparse
import time

import numpy as np

from funcview.kernels import HAS_NUMBA, get_kernels
from funcview.models import monomial_count, monomial_exponents
from funcview.optimizer import random_orthonormal

POLY_CASES = (
    # (n, dim, responses, degree)
    (2_000, 5, 1, 3),
    (10_000, 30, 1, 3),
    (20_000, 5, 15, 3),
    (3_000, 100, 1, 4),
)

SOFTMAX_CASES = (
    # (n, dim, classes, hidden)
    (5_000, 20, 5, 16),
    (8_000, 784, 5, 16),
)


def poly_inputs(n, dim, responses, degree, seed=0):
    r = np.random.default_rng(seed)
    x = np.ascontiguousarray(r.uniform(-1.0, 1.0, size=(n, dim)))
    f = np.ascontiguousarray(r.standard_normal((responses, n)))
    perm = np.ascontiguousarray(r.permutation(n))
    p = random_orthonormal(dim, seed=seed)
    theta = np.zeros((responses, monomial_count(degree)))
    ea, eb = monomial_exponents(degree)
    return x, f, perm, p, np.ascontiguousarray(theta), np.ascontiguousarray(ea), np.ascontiguousarray(eb)


def softmax_inputs(n, dim, classes, hidden, seed=0):
    r = np.random.default_rng(seed)
    x = np.ascontiguousarray(r.uniform(-1.0, 1.0, size=(n, dim)))
    labels = np.ascontiguousarray(r.integers(0, classes, size=n))
    perm = np.ascontiguousarray(r.permutation(n))
    p = random_orthonormal(dim, seed=seed)
    w1 = r.standard_normal((hidden, 2)) * 0.5
    b1 = np.zeros(hidden)
    w2 = r.standard_normal((classes, hidden)) * 0.5
    b2 = np.zeros(classes)
    return x, labels, perm, p, w1, b1, w2, b2


def time_epoch(run, repeats):
    best = np.inf
    for _ in range(repeats):
        started = time.perf_counter()
        run()
        best = min(best, time.perf_counter() - started)
    return best


def bench_poly(kern, case, repeats):
    n, dim, responses, degree = case
    x, f, perm, p, theta, ea, eb = poly_inputs(n, dim, responses, degree)

    def run():
        # fresh state each repeat: the kernel mutates p and theta in place
        kern.epoch_poly(x, f, perm, p.copy(), theta.copy(), ea, eb,
                        1e-3, 50, 1e12, True)

    run()  # warmup (JIT compile on the compiled backend)
    return time_epoch(run, repeats)


def bench_softmax(kern, case, repeats):
    n, dim, classes, hidden = case
    x, labels, perm, p, w1, b1, w2, b2 = softmax_inputs(n, dim, classes, hidden)

    def run():
        kern.epoch_softmax(x, labels, perm, p.copy(), w1.copy(), b1.copy(),
                           w2.copy(), b2.copy(), hidden, 1e-3, 50, 1e12, True)

    run()
    return time_epoch(run, repeats)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=5, help="timing repeats, best wins")
    parser.add_argument("--quick", action="store_true", help="first case of each family only")
    args = parser.parse_args()

    if not HAS_NUMBA:
        print("numba is not importable; only the numpy backend can be timed")
    backends = [("numpy", get_kernels("numpy"))]
    if HAS_NUMBA:
        backends.append(("numba", get_kernels("numba")))

    poly_cases = POLY_CASES[:1] if args.quick else POLY_CASES
    softmax_cases = SOFTMAX_CASES[:1] if args.quick else SOFTMAX_CASES

    header = f"{'kernel':<34}" + "".join(f"{name + ' (s)':>12}" for name, _ in backends)
    if len(backends) == 2:
        header += f"{'speedup':>10}"
    print(header)
    print("-" * len(header))

    for case in poly_cases:
        n, dim, responses, degree = case
        label = f"poly n={n} D={dim} L={responses} deg={degree}"
        times = [bench_poly(kern, case, args.repeats) for _, kern in backends]
        row = f"{label:<34}" + "".join(f"{t:>12.4f}" for t in times)
        if len(times) == 2:
            row += f"{times[0] / times[1]:>9.1f}x"
        print(row)

    for case in softmax_cases:
        n, dim, classes, hidden = case
        label = f"softmax n={n} D={dim} K={classes} H={hidden}"
        times = [bench_softmax(kern, case, args.repeats) for _, kern in backends]
        row = f"{label:<34}" + "".join(f"{t:>12.4f}" for t in times)
        if len(times) == 2:
            row += f"{times[0] / times[1]:>9.1f}x"
        print(row)


if __name__ == "__main__":
    main()
