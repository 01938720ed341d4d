"""Compiled vs pure-Python kernels: lasso coordinate descent and kNN prediction.

    python benchmarks/bench_kernels.py [--repeat 5]
"""
import argparse
import time

import numpy as np

from cips import kernels


def _best(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    rng = np.random.default_rng(0)

    X = np.asfortranarray(rng.standard_normal((3000, 14)))
    y = X @ rng.standard_normal(14) + rng.standard_normal(3000)
    y -= y.mean()
    Xc = np.asfortranarray(X - X.mean(axis=0))
    train = np.ascontiguousarray(rng.standard_normal((3000, 14)))
    targets = rng.standard_normal(3000)
    queries = np.ascontiguousarray(rng.standard_normal((500, 14)))

    cases = {
        "lasso_cd (3000x14, lam=0.01)": lambda k: k.lasso_cd(Xc, y, 0.01, 1000, 1e-10, np.zeros(14)),
        "knn_predict (3000 train, 500 queries, k=10, p=2)": lambda k: k.knn_predict(train, targets, queries, 10, 2.0),
        "knn_predict (3000 train, 500 queries, k=10, p=3)": lambda k: k.knn_predict(train, targets, queries, 10, 3.0),
    }
    print(f"active backend: {kernels.BACKEND}")
    if kernels.compiled is None:
        print("compiled extension unavailable; only the Python fallback can be timed")
    for name, call in cases.items():
        t_py = _best(lambda: call(kernels.python), args.repeat)
        line = f"{name:<52} python {t_py * 1e3:9.2f} ms"
        if kernels.compiled is not None:
            t_c = _best(lambda: call(kernels.compiled), args.repeat)
            line += f"   cython {t_c * 1e3:9.2f} ms   speedup {t_py / t_c:6.1f}x"
        print(line)


if __name__ == "__main__":
    main()
