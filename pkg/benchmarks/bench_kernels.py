"""Compare the numba kernels with their numpy fallbacks.

Run with ``python benchmarks/bench_kernels.py``. Each kernel is timed on
inputs shaped like the ones the estimators see (a phase-two sample of a
few hundred points for the kernel smoother, a stratum of a few thousand
incomplete units against a ~750 point support for the EM E-step), and
the two paths are checked to agree before timing.
"""

import argparse
import timeit

import numpy as np

from mirake import _kernels as K


def _inputs(n_nw, n_em, n_support, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(n_nw)
    y = x + 0.3 * rng.standard_normal(n_nw)
    ye = rng.standard_normal(n_em)
    support = rng.standard_normal(n_support)
    logq = np.full(n_support, -np.log(n_support))
    return (x, y), (ye, support, logq, 0.1, 0.9, 1.1)


def _best(fn, number, repeat):
    return min(timeit.repeat(fn, number=number, repeat=repeat)) / number


def run(n_nw=220, n_em=4000, n_support=750, repeat=5):
    (x, y), em = _inputs(n_nw, n_em, n_support)
    h = 0.3
    rows = []
    if not K.HAVE_NUMBA:
        print("numba not importable; only the numpy path is timed")

    num_np = lambda: K._nw_sums_numpy(x, x, y, h, True)  # noqa: E731
    em_np = lambda: K._em_estep_numpy(*em)  # noqa: E731
    cases = [("nw_sums loo", num_np, None), ("em_estep", em_np, None)]
    if K.HAVE_NUMBA:
        nb_nw = lambda: K._nw_self_numba(x, y, h, 0.0)  # noqa: E731
        nb_em = lambda: K._em_estep_numba(*em)  # noqa: E731
        # compile, then check agreement
        for (a, b) in ((num_np, nb_nw), (em_np, nb_em)):
            ra, rb = a(), b()
            for u, v in zip(ra, rb):
                np.testing.assert_allclose(u, v, rtol=1e-9, atol=1e-9)
        cases = [("nw_sums loo", num_np, nb_nw), ("em_estep", em_np, nb_em)]

    for name, f_np, f_nb in cases:
        t_np = _best(f_np, 20, repeat)
        t_nb = _best(f_nb, 20, repeat) if f_nb else float("nan")
        rows.append((name, t_np, t_nb))

    print(f"{'kernel':<14}{'numpy ms':>12}{'numba ms':>12}{'speedup':>10}")
    for name, t_np, t_nb in rows:
        print(f"{name:<14}{1e3 * t_np:>12.3f}{1e3 * t_nb:>12.3f}{t_np / t_nb:>10.1f}")
    return rows


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n-nw", type=int, default=220)
    ap.add_argument("--n-em", type=int, default=4000)
    ap.add_argument("--n-support", type=int, default=750)
    ap.add_argument("--repeat", type=int, default=5)
    a = ap.parse_args()
    run(a.n_nw, a.n_em, a.n_support, a.repeat)
