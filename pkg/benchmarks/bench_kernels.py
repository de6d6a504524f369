"""Compare the compiled kernels against the scipy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--points 20000]

Reports the best wall time per backend for the raw kernels and for a full
forward/gradient pass through a synthesized network, and checks that both
backends return bitwise identical results.
"""
from __future__ import annotations

import argparse
import timeit

import numpy as np

from korobov_relu import _backend
from korobov_relu import sparse_grid as G
from korobov_relu import synthesis as S


def _best(fn, repeat: int) -> float:
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def _kernel_cases(points: int, seed: int):
    import scipy.sparse as sp

    rng = np.random.default_rng(seed)
    w = sp.random(256, 256, density=0.05, random_state=np.random.RandomState(seed), format="csr")
    w.sort_indices()
    args = dict(
        indptr=w.indptr.astype(np.int32),
        indices=w.indices.astype(np.int32),
        data=w.data,
        bias=rng.normal(size=256),
    )
    h = np.ascontiguousarray(rng.normal(size=(256, points)))
    pre = rng.normal(size=(256, points // 4))
    tangent = np.ascontiguousarray(rng.normal(size=(256, 2, points // 4)))
    return args, h, pre, tangent


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--points", type=int, default=20000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    backends = {"python": _backend.get_kernels("python")}
    try:
        backends["cython"] = _backend.get_kernels("cython")
    except ImportError:
        print("compiled kernels not built; timing the fallback only")

    kw, h, pre, tangent = _kernel_cases(args.points, args.seed)
    rows = []
    results = {}
    for name, k in backends.items():
        aff = _best(lambda: k.csr_affine(kw["indptr"], kw["indices"], kw["data"], kw["bias"], h, True), args.repeat)
        tan = _best(lambda: k.masked_tangent(kw["indptr"], kw["indices"], kw["data"], pre, tangent, True), args.repeat)
        results[name] = (
            k.csr_affine(kw["indptr"], kw["indices"], kw["data"], kw["bias"], h, True),
            k.masked_tangent(kw["indptr"], kw["indices"], kw["data"], pre, tangent, True),
        )
        rows.append((name, "csr_affine 256x256", aff))
        rows.append((name, "masked_tangent 256x256", tan))

    f = G.make_target("sine", 1, normalize=True)
    net = S.synth_superconv_h1(f, 4, 1, 1).net
    x = np.random.default_rng(args.seed).random((args.points, 1))
    saved = _backend.kernels
    try:
        for name, k in backends.items():
            _backend.kernels = k
            rows.append((name, f"forward {net.depth}-layer net", _best(lambda: net.forward(x), args.repeat)))
            rows.append((name, "value_and_gradient", _best(lambda: net.value_and_gradient(x), args.repeat)))
    finally:
        _backend.kernels = saved

    print(f"{'backend':8s}  {'case':32s}  {'best (ms)':>10s}")
    for name, case, secs in rows:
        print(f"{name:8s}  {case:32s}  {secs * 1e3:10.2f}")
    if len(results) == 2:
        same = all(np.array_equal(a, b) for a, b in zip(results["python"], results["cython"]))
        print(f"bitwise identical: {same}")


if __name__ == "__main__":
    main()
