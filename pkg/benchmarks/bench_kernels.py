"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--batch 80] [--dim 64] [--repeat 20]

Batch and width default to the training batch (10 subjects x 8 slices) and
the embedding width, so the numbers reflect one training step's mining work.
"""
import argparse
import timeit

import numpy as np

from bicephnet.kernels import available_backends


def make_inputs(batch, dim, subjects, seed):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((batch, dim))
    X /= np.linalg.norm(X, axis=1, keepdims=True)
    groups = np.repeat(np.arange(subjects), batch // subjects).astype(np.int64)
    Q = rng.standard_normal((batch // 2, dim))
    return X, groups, Q


def bench(mod, X, groups, Q, margin, repeat):
    D = mod.pairwise_distances(X)
    T = mod.semihard_triples(D, groups, margin)
    cases = {
        "pairwise_distances": lambda: mod.pairwise_distances(X),
        "cross_distances": lambda: mod.cross_distances(X, Q),
        "semihard_triples": lambda: mod.semihard_triples(D, groups, margin),
        "triplet_hinge": lambda: mod.triplet_hinge(X, D, T, margin),
    }
    return {k: min(timeit.repeat(f, number=5, repeat=repeat)) / 5 for k, f in cases.items()}, len(T)


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--batch", type=int, default=80)
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("--subjects", type=int, default=10)
    p.add_argument("--margin", type=float, default=0.2)
    p.add_argument("--repeat", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args(argv)

    X, groups, Q = make_inputs(args.batch, args.dim, args.subjects, args.seed)
    backends = available_backends()
    results = {}
    for name, mod in backends.items():
        results[name], n_triples = bench(mod, X, groups, Q, args.margin, args.repeat)
    print(f"B={args.batch} F={args.dim} subjects={args.subjects} margin={args.margin} triples={n_triples}")
    names = list(results)
    print(f"{'kernel':<20}" + "".join(f"{n + ' (us)':>16}" for n in names) + ("    speedup" if len(names) == 2 else ""))
    for k in results[names[0]]:
        row = f"{k:<20}" + "".join(f"{results[n][k] * 1e6:>16.1f}" for n in names)
        if len(names) == 2:
            row += f"{results['python'][k] / results['cython'][k]:>10.1f}x"
        print(row)
    if "cython" not in backends:
        print("compiled extension not built; only the numpy fallback was timed")


if __name__ == "__main__":
    main()
