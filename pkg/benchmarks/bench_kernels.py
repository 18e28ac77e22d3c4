"""Compiled vs pure-Python kernels on the uniform network.

Times one simulation replication per policy and the index solves of a
few pair services, checks that both backends return identical results,
and prints the speedups.

    python3 benchmarks/bench_kernels.py [--horizon 3000] [--services 5]
"""

import argparse
import time

import numpy as np

from bimatch import _pykernels
from bimatch._backend import COMPILED, kernels
from bimatch.indices import build_index_table, whittle_index_numeric
from bimatch.network import EconParams, HexLayout, build_services, generate_uniform_network
from bimatch.simulator import network_profiles, simulate


def timed(fn, repeat=1):
    best, out = float("inf"), None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--horizon", type=float, default=3000.0)
    ap.add_argument("--services", type=int, default=5)
    ap.add_argument("--zeta", type=float, default=5.0)
    args = ap.parse_args()
    if not COMPILED:
        raise SystemExit("compiled kernels not built; run `pip install -e . --no-build-isolation`")

    econ = EconParams(1.0, 1.7, 40.0, 0.03, 0.09, args.zeta, 5)
    spec = generate_uniform_network(HexLayout(), econ, 0.3)
    cat = build_services(spec, econ)
    rates = {t.id: t.profile(0.0) for t in spec.types}
    tab = build_index_table(cat, rates, econ.N)
    prof = network_profiles(spec)
    print(f"uniform network: L={spec.L} J={cat.J} zeta={args.zeta:g}")

    print(f"\nsimulation, horizon {args.horizon:g} min")
    for policy in ("bi", "jsq", "jlq", "myopic"):
        run = lambda k: simulate(cat, policy, prof, args.horizon, seed=1, index=tab, N=econ.N, backend=k)
        tc, a = timed(lambda: run(kernels), 3)
        tp, b = timed(lambda: run(_pykernels))
        same = a.scalars() == b.scalars() and a.n_events == b.n_events
        print(f"  {policy:7s} compiled {tc:8.4f}s  python {tp:8.3f}s  speedup {tp / tc:7.1f}x  "
              f"identical {same}  ({a.n_events} events)")

    print(f"\nindex solves (exact route), first {args.services} pair services")
    pairs = [s for s in cat.services if not s.self_shared][: args.services]
    for method in ("exact", "terminal"):
        tc = tp = 0.0
        same = True
        for svc in pairs:
            lam = (rates[svc.types[0]], rates[svc.types[1]])
            t1, a = timed(lambda: whittle_index_numeric(svc, 1, lam, econ.N, method=method))
            _backend_swap(_pykernels)
            try:
                t2, b = timed(lambda: whittle_index_numeric(svc, 1, lam, econ.N, method=method))
            finally:
                _backend_swap(kernels)
            tc, tp = tc + t1, tp + t2
            same = same and np.array_equal(list(a.values()), list(b.values()))
        print(f"  {method:8s} compiled {tc:8.4f}s  python {tp:8.3f}s  speedup {tp / tc:7.1f}x  identical {same}")


def _backend_swap(k):
    import bimatch.indices as ix

    ix.kernels = k


if __name__ == "__main__":
    main()
