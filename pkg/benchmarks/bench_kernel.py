"""Compare the compiled and pure-Python matching kernels.

    python3 benchmarks/bench_kernel.py [--repeat N]

Two workloads: a raw three-atom join through ``match`` and a full chase of
the grid theory on a green path, which spends most of its time matching.
"""
import argparse
import random
import statistics
import time

from chasekit import _pykernel, chase, kernel
from chasekit.markedrw import rd_theory
from chasekit.textio import parse_instance


def join_workload(n_facts=3000, n_terms=300, seed=0):
    rng = random.Random(seed)
    rels, index = {}, {}
    for _ in range(n_facts):
        args = (f"t{rng.randrange(n_terms)}", f"t{rng.randrange(n_terms)}")
        rels.setdefault("E", []).append(args)
        for pos, t in enumerate(args):
            index.setdefault(("E", pos, t), []).append(args)
    # E(x,y), E(y,z), E(z,x)
    patterns = [("E", (0, 1)), ("E", (1, 2)), ("E", (2, 0))]
    return lambda match: match(patterns, rels, index, [None] * 3)


def chase_workload(length=24, depth=6):
    inst = parse_instance("".join(f"G(a{i},a{i + 1}).\n" for i in range(length)))
    theory = rd_theory()
    return lambda match: _chase_with(match, theory, inst, depth)


def _chase_with(match, theory, inst, depth):
    saved = kernel.match
    kernel.match = match
    try:
        return len(chase.chase_to(theory, inst, depth).store)
    finally:
        kernel.match = saved


def timed(fn, match, repeat):
    out, times = None, []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn(match)
        times.append(time.perf_counter() - t0)
    return out, statistics.median(times)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    a = ap.parse_args()
    if kernel.BACKEND != "cython":
        print("compiled kernel not available; only the Python timings are meaningful")
    print(f"{'workload':<10} {'python s':>10} {'cython s':>10} {'speedup':>8}")
    for name, fn in (("join", join_workload()), ("chase", chase_workload())):
        py_out, py_t = timed(fn, _pykernel.match, a.repeat)
        c_out, c_t = timed(fn, kernel.match, a.repeat)
        size = lambda o: len(o) if isinstance(o, list) else o  # noqa: E731
        if size(py_out) != size(c_out):
            raise SystemExit(f"{name}: kernels disagree ({size(py_out)} vs {size(c_out)})")
        print(f"{name:<10} {py_t:>10.4f} {c_t:>10.4f} {py_t / c_t:>7.2f}x")


if __name__ == "__main__":
    main()
