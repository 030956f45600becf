#!/usr/bin/env python3
"""Benchmark the trial-sampling kernel: numba backend vs numpy fallback.

Runs the same counter-based workload through both paths, checks the counts
are bit-identical, and reports wall time per million trial slots. Select a
single backend at package import time with DLCZSIM_BACKEND=numba|numpy.
"""

import time

from dlczsim import _kernels

WORKLOADS = [
    # (label, cycles, slots, p_herald, skip)
    ("sparse heralds, short storage", 5000, 4000, 0.003, 0),
    ("dense heralds, short storage", 2500, 4000, 0.2, 0),
    ("sparse heralds, long storage", 5000, 4000, 0.003, 575),
]

THRESHOLDS = dict(a13=0.05, a14=0.01, a23=0.01, a24=0.05, p_noise=1e-4)


def run(backend, cycles, slots, p_herald, skip):
    t0 = time.perf_counter()
    out = _kernels.counts_kernel(12345, 0, cycles, slots, p_herald,
                                 THRESHOLDS["a13"], THRESHOLDS["a14"],
                                 THRESHOLDS["a23"], THRESHOLDS["a24"],
                                 THRESHOLDS["p_noise"], skip,
                                 backend=backend)
    return out, time.perf_counter() - t0


def main():
    backends = ["numpy"]
    if _kernels.HAVE_NUMBA:
        backends.insert(0, "numba")
        # warm the JIT outside the timed region
        run("numba", 10, 1000, 0.01, 0)
    else:
        print("numba not installed; timing the numpy fallback only")

    print(f"{'workload':34s}" + "".join(f"{b + ' (s)':>12s}" for b in backends)
          + f"{'Mslots/s':>12s}{'speedup':>9s}")
    for label, cycles, slots, p_herald, skip in WORKLOADS:
        counts = {}
        times = {}
        for b in backends:
            counts[b], times[b] = run(b, cycles, slots, p_herald, skip)
        if len(backends) == 2 and counts["numba"] != counts["numpy"]:
            raise SystemExit(f"backend mismatch on {label!r}: "
                             f"{counts['numba']} vs {counts['numpy']}")
        best = backends[0]
        mslots = cycles * slots / times[best] / 1e6
        speedup = (times["numpy"] / times["numba"]
                   if len(backends) == 2 else 1.0)
        print(f"{label:34s}"
              + "".join(f"{times[b]:12.3f}" for b in backends)
              + f"{mslots:12.1f}{speedup:9.1f}x")
    if len(backends) == 2:
        print("\ncounts bit-identical across backends for every workload")


if __name__ == "__main__":
    main()
