#!/usr/bin/env python3
"""Compare the compiled kernel backend against the pure-numpy fallback.

Two views: raw kernel throughput on verifier-sized layer stacks, and
end-to-end branch-and-bound time on a batch of local robustness tasks.
The verdicts must be identical; only the speed may differ.

Run:  python3 benchmarks/bench_backends.py
"""

import time

import numpy as np

from udlflow import _kernels
from udlflow._kernels import _fallback
from udlflow.classifiers import ReluClassifier
from udlflow.verify import verify_local

try:
    from udlflow._kernels import _corex
except ImportError:
    _corex = None


def make_stack(sizes, seed=0):
    rng = np.random.default_rng(seed)
    ws = [np.ascontiguousarray(rng.normal(size=(o, i)))
          for i, o in zip(sizes[:-1], sizes[1:])]
    bs = [np.ascontiguousarray(rng.normal(size=o)) for o in sizes[1:]]
    relus = [True] * (len(ws) - 1) + [False]
    wpos = [np.ascontiguousarray(np.maximum(w, 0)) for w in ws]
    wneg = [np.ascontiguousarray(np.minimum(w, 0)) for w in ws]
    return ws, bs, relus, wpos, wneg


def time_kernel(impl, sizes, reps=20000):
    ws, bs, relus, wpos, wneg = make_stack(sizes)
    lo = -np.ones(sizes[0])
    hi = np.ones(sizes[0])
    start = time.perf_counter()
    for _ in range(reps):
        impl.stack_interval(wpos, wneg, bs, relus, lo, hi)
    return (time.perf_counter() - start) / reps


def time_verify(impl_name, impl, n_tasks=20):
    saved = (_kernels.stack_interval, _kernels.stack_point,
             _kernels.stack_points)
    _kernels.stack_interval = impl.stack_interval
    _kernels.stack_point = impl.stack_point
    _kernels.stack_points = impl.stack_points
    try:
        rng = np.random.default_rng(7)
        verdicts = []
        nodes = 0
        start = time.perf_counter()
        for i in range(n_tasks):
            # upscaled weights loosen interval bounds, forcing deep search
            clf = ReluClassifier([2, 24, 24, 2], seed=i)
            for w in clf.weights:
                w.data *= 1.2
            center = rng.normal(size=2) * 0.3
            verdict = verify_local(clf, center, 0.3, budget=20000, seed=i)
            verdicts.append(verdict.status)
            nodes += verdict.nodes
        elapsed = time.perf_counter() - start
    finally:
        (_kernels.stack_interval, _kernels.stack_point,
         _kernels.stack_points) = saved
    return elapsed, verdicts, nodes


def main():
    impls = [("numpy", _fallback)]
    if _corex is not None:
        impls.insert(0, ("cython", _corex))
    else:
        print("compiled extension not built; benchmarking the fallback only")

    print(f"selected backend at import: {_kernels.BACKEND}\n")
    print("raw interval propagation (seconds/call):")
    for sizes in ([2, 8, 8, 2], [16, 32, 32, 10], [64, 128, 128, 10]):
        row = [f"  stack {sizes}:"]
        for name, impl in impls:
            row.append(f"{name} {time_kernel(impl, sizes):.2e}s")
        print(" ".join(row))

    print("\nend-to-end branch and bound (20 local robustness tasks):")
    results = {}
    for name, impl in impls:
        elapsed, verdicts, nodes = time_verify(name, impl)
        results[name] = (elapsed, verdicts)
        print(f"  {name}: {elapsed:.2f}s ({nodes} nodes explored)")
    if len(results) == 2:
        a, b = results["cython"], results["numpy"]
        assert a[1] == b[1], "backends disagree on verdicts"
        print(f"\nverdicts identical; speedup {b[0] / a[0]:.1f}x")


if __name__ == "__main__":
    main()
