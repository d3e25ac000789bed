"""Compare the compiled and numpy sparse-dense matmul kernels.

    python benchmarks/bench_kernels.py [--repeats 20]

Graphs are Citeseer-sized random adjacencies (normalized, with self loops);
the dense operand has the hidden width of the default model.
"""

import argparse
import statistics
import time

import numpy as np

from ignn_solver import _kernels_py
from ignn_solver.graph import normalize_adjacency, synth_citeseer

try:
    from ignn_solver import _kernels
except ImportError:
    _kernels = None


def timeit(fn, repeats):
    fn()
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeats", type=int, default=20)
    ap.add_argument("--widths", type=int, nargs="+", default=[16, 64, 128, 256])
    args = ap.parse_args()

    ds = synth_citeseer(0, d=8)
    a = normalize_adjacency(ds.graph)
    rng = np.random.default_rng(0)
    print(f"graph: n={a.n} nnz={a.nnz}")
    print(f"{'width':>6} {'numpy ms':>10} {'cython ms':>10} {'speedup':>8}")
    for w in args.widths:
        x = rng.standard_normal((a.n, w))
        ref = _kernels_py.csr_spmm(a.row_ptr, a.col_idx, a.values, x)
        t_py = timeit(lambda: _kernels_py.csr_spmm(a.row_ptr, a.col_idx, a.values, x), args.repeats)
        if _kernels is None:
            print(f"{w:>6} {t_py * 1e3:>10.3f} {'n/a':>10} {'n/a':>8}")
            continue
        got = _kernels.csr_spmm(a.row_ptr, a.col_idx, a.values, x)
        assert np.allclose(got, ref, rtol=1e-12, atol=1e-12)
        t_cy = timeit(lambda: _kernels.csr_spmm(a.row_ptr, a.col_idx, a.values, x), args.repeats)
        print(f"{w:>6} {t_py * 1e3:>10.3f} {t_cy * 1e3:>10.3f} {t_py / t_cy:>7.2f}x")


if __name__ == "__main__":
    main()
