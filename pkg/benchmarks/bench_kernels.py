"""Time the numba kernels against their numpy fallbacks.

    python benchmarks/bench_kernels.py [--nodes 20000] [--repeat 5]

Both paths are called directly, so the LABELFREE_NUMBA flag does not
matter here. Results are checked for agreement before timing.
"""
import argparse
import time

import numpy as np

from labelfree import kernels
from labelfree.graph import normalized_adjacency
from labelfree.synthetic import make_synthetic_tag


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--nodes", type=int, default=20000)
    ap.add_argument("--dim", type=int, default=64)
    ap.add_argument("--clusters", type=int, default=16)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)

    if kernels._spmm_jit is None:
        raise SystemExit("numba is not installed; nothing to compare")
    g = make_synthetic_tag(n_nodes=args.nodes, n_classes=args.clusters, feature_dim=args.dim, seed=0)
    adj = normalized_adjacency(g)
    x = g.features
    rng = np.random.default_rng(0)
    centers = x[rng.choice(len(x), size=args.clusters, replace=False)]
    labels = rng.integers(args.clusters, size=len(x))
    a = (adj.indptr.astype(np.int64), adj.indices.astype(np.int64), adj.data, x)

    cases = {
        "spmm": (lambda: kernels.spmm_numpy(*a), lambda: kernels.spmm_numba(*a)),
        "nearest_center": (lambda: kernels.nearest_center_numpy(x, centers),
                           lambda: kernels.nearest_center_numba(x, centers)),
        "cluster_sums": (lambda: kernels.cluster_sums_numpy(x, labels, args.clusters),
                         lambda: kernels.cluster_sums_numba(x, labels, args.clusters)),
    }
    print(f"{args.nodes} nodes, {g.edge_count} edges, dim {args.dim}, k {args.clusters}; best of {args.repeat}")
    print(f"{'kernel':16s} {'numpy ms':>10s} {'numba ms':>10s} {'speedup':>8s}")
    for name, (slow, fast) in cases.items():
        ref, got = slow(), fast()  # also triggers compilation
        for r, o in zip(ref if isinstance(ref, tuple) else (ref,), got if isinstance(got, tuple) else (got,)):
            np.testing.assert_allclose(o, r, rtol=1e-10, atol=1e-12)
        t_np, t_nb = best_of(slow, args.repeat), best_of(fast, args.repeat)
        print(f"{name:16s} {1e3 * t_np:10.2f} {1e3 * t_nb:10.2f} {t_np / t_nb:7.1f}x")


if __name__ == "__main__":
    main()
