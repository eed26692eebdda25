"""Time the compiled SGD kernels against the pure-Python fallback.

    python benchmarks/bench_kernels.py [--pairs N] [--dim D] [--repeat R]

Both backends run the same schedule from the same start, and the script
confirms the resulting factors are bitwise equal before reporting.
"""
import argparse
import timeit

import numpy as np

from poissonmat import _pykernels
from poissonmat._backend import compiled_kernels
from poissonmat.core import init_embeddings


def _case(n_users, n_items, pairs, dim, seed):
    rng = np.random.default_rng(seed)
    model = init_embeddings(n_users, n_items, dim, seed)
    users = rng.integers(0, n_users, pairs, dtype=np.int64)
    items = rng.integers(0, n_items, pairs, dtype=np.int64)
    targets = rng.integers(1, 6, pairs) / 5.0
    return model, users, items, targets


def _call(mod, rule, U, V, users, items, targets, lr, n_iter):
    fn = getattr(mod, "sgd_" + rule)
    if rule in ("poissonmat", "zeromat"):
        return fn(U, V, users, items, lr, 1e-8, n_iter)
    if rule == "dotmat":
        return fn(U, V, users, items, targets, lr, 1e-8, n_iter)
    return fn(U, V, users, items, targets, lr, n_iter)


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--pairs", type=int, default=20_000)
    p.add_argument("--dim", type=int, default=10)
    p.add_argument("--iters", type=int, default=3)
    p.add_argument("--repeat", type=int, default=3)
    args = p.parse_args()

    compiled = compiled_kernels()
    if compiled is None:
        print("compiled kernels unavailable; only the fallback can be timed")
    backends = [("python", _pykernels)] + ([("cython", compiled)] if compiled else [])
    model, users, items, targets = _case(2000, 1000, args.pairs, args.dim, seed=0)
    steps = args.pairs * args.iters

    print(f"{'rule':<12} {'backend':<8} {'best s':>10} {'Msteps/s':>10} {'speedup':>8}")
    for rule in ("poissonmat", "zeromat", "dotmat", "classic_mf"):
        results = {}
        for name, mod in backends:
            def run():
                m = model.copy()
                _call(mod, rule, m.user_factors, m.item_factors, users, items, targets, 1e-3, args.iters)
                return m
            best = min(timeit.repeat(run, number=1, repeat=args.repeat))
            results[name] = (best, run())
        base = results["python"][0]
        for name, (best, _) in results.items():
            print(f"{rule:<12} {name:<8} {best:>10.4f} {steps / best / 1e6:>10.3f} {base / best:>7.1f}x")
        if len(results) == 2:
            assert results["python"][1].identical_to(results["cython"][1]), f"{rule}: backends disagree"


if __name__ == "__main__":
    main()
