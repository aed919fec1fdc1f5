"""Compiled vs numpy split kernel.

Grows the same trees with both kernels and reports the best of ``--repeat``
wall times. Uses ``dataset.csv`` from a pipeline run when given, otherwise a
synthetic problem of the same shape.

    python benchmarks/bench_splitter.py [--dataset out/dataset.csv] [--rows 3000]
"""
import argparse
import time

import numpy as np

from powersec.features import read_dataset_csv
from powersec.tree import PreparedData, TreeParams, _splitter_py, grow_tree

try:
    from powersec.tree import _splitter as _splitter_c
except ImportError:
    _splitter_c = None


def synthetic(n, p, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, p))
    score = X[:, :5].sum(axis=1) + 0.3 * rng.normal(size=n)
    y = np.digitize(score, [-2.0, 0.5, 3.0])
    return X, y


def best_time(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--dataset")
    ap.add_argument("--rows", type=int, default=3000)
    ap.add_argument("--features", type=int, default=490)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    if args.dataset:
        data = read_dataset_csv(args.dataset)
        X, y = data.X[:args.rows], data.y[:args.rows]
    else:
        X, y = synthetic(args.rows, args.features)
    prepared = PreparedData(X)
    K = int(y.max()) + 1
    cases = {
        "cart (all attributes)": TreeParams(),
        "random forest tree (mtry=22)": TreeParams(mtry=22, rng_seed=1),
        "extra tree (mtry=22)": TreeParams(mtry=22, threshold_mode="random", rng_seed=1),
    }
    kernels = {"numpy": _splitter_py.level_split}
    if _splitter_c is not None:
        kernels["compiled"] = _splitter_c.level_split
    else:
        print("compiled kernel not built; timing numpy only")

    print(f"{X.shape[0]} rows x {X.shape[1]} attributes, best of {args.repeat}")
    print(f"{'tree':<32}" + "".join(f"{k:>12}" for k in kernels) + f"{'speed-up':>10}")
    for name, params in cases.items():
        times, dumps = {}, set()
        for kname, kern in kernels.items():
            times[kname] = best_time(lambda: grow_tree(prepared, y, params, K=K, kernel=kern),
                                     args.repeat)
            dumps.add(grow_tree(prepared, y, params, K=K, kernel=kern).dumps())
        assert len(dumps) == 1, "kernels disagree"
        line = f"{name:<32}" + "".join(f"{times[k]:>11.3f}s" for k in kernels)
        if "compiled" in times:
            line += f"{times['numpy'] / times['compiled']:>9.1f}x"
        print(line)


if __name__ == "__main__":
    main()
