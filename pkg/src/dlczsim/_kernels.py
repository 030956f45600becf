"""Hot trial-sampling kernels with a numba fast path and a numpy fallback.

The per-trial random stream is counter-based: every (cycle, slot, draw)
triple is hashed independently with a splitmix64-style mixer, so the counts
are bit-identical no matter how trials are partitioned across workers or
which backend executes them. Uniform doubles come from the top 53 bits of
the hash, which both backends convert identically.

Backend selection: the ``DLCZSIM_BACKEND`` environment variable may be set
to ``numba``, ``numpy``, or ``auto`` (default). ``auto`` takes numba when it
imports, numpy otherwise. ``benchmarks/bench_kernels.py`` compares the two.
"""

from __future__ import annotations

import os
from bisect import bisect_right

import numpy as np

_GOLD = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_CYCLE_KEY = np.uint64(0xA24BAED4963EE407)
_SLOT_KEY = np.uint64(0x9FB21C651E98DF25)
_U64_MASK = 0xFFFFFFFFFFFFFFFF
_INV_2_53 = 2.0 ** -53

_requested = os.environ.get("DLCZSIM_BACKEND", "auto").lower()
if _requested not in ("auto", "numba", "numpy"):
    raise RuntimeError(
        f"DLCZSIM_BACKEND must be 'auto', 'numba', or 'numpy', got {_requested!r}")

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:
    HAVE_NUMBA = False
    if _requested == "numba":
        raise RuntimeError("DLCZSIM_BACKEND=numba but numba is not importable")

    def njit(*args, **kwargs):  # pragma: no cover - decorator stub
        def wrap(fn):
            return fn
        return wrap

BACKEND = "numba" if (HAVE_NUMBA and _requested != "numpy") else "numpy"


def mix64(z: int) -> int:
    """splitmix64 finalizer on a plain Python integer (reference path)."""
    z = (z + 0x9E3779B97F4A7C15) & _U64_MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _U64_MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _U64_MASK
    return z ^ (z >> 31)


def derive_stream(master_seed: int, *tags: int) -> int:
    """Child seed derived by folding tags into the master seed one at a time."""
    h = master_seed & _U64_MASK
    for tag in tags:
        h = mix64((h ^ ((tag * 0x9E3779B97F4A7C15) & _U64_MASK)) & _U64_MASK)
    return h


def _mix_np_inplace(z):
    # same finalizer as the jitted path; in-place to halve memory traffic
    z += _GOLD
    z ^= z >> np.uint64(30)
    z *= _MIX1
    z ^= z >> np.uint64(27)
    z *= _MIX2
    z ^= z >> np.uint64(31)
    return z


def trial_uniforms_numpy(master_seed: int, cycles, slots, draw: int):
    """Vectorized per-(cycle, slot) uniforms for one draw index."""
    c = np.atleast_1d(np.asarray(cycles, dtype=np.uint64))
    s = np.atleast_1d(np.asarray(slots, dtype=np.uint64))
    with np.errstate(over="ignore"):
        h = c * _CYCLE_KEY
        h ^= np.uint64(master_seed)
        _mix_np_inplace(h)
        h ^= s * _SLOT_KEY
        _mix_np_inplace(h)
        h ^= np.uint64(draw)
        _mix_np_inplace(h)
    h >>= np.uint64(11)
    return h.astype(np.float64) * _INV_2_53


@njit(cache=True, nogil=True)
def _trial_uniform_nb(master_seed, cycle, slot, draw):  # pragma: no cover - jitted
    h = master_seed ^ (cycle * _CYCLE_KEY)
    h = h + _GOLD
    h = (h ^ (h >> np.uint64(30))) * _MIX1
    h = (h ^ (h >> np.uint64(27))) * _MIX2
    h = h ^ (h >> np.uint64(31))
    h = h ^ (slot * _SLOT_KEY)
    h = h + _GOLD
    h = (h ^ (h >> np.uint64(30))) * _MIX1
    h = (h ^ (h >> np.uint64(27))) * _MIX2
    h = h ^ (h >> np.uint64(31))
    h = h ^ draw
    h = h + _GOLD
    h = (h ^ (h >> np.uint64(30))) * _MIX1
    h = (h ^ (h >> np.uint64(27))) * _MIX2
    h = h ^ (h >> np.uint64(31))
    return np.float64(h >> np.uint64(11)) * _INV_2_53


@njit(cache=True, nogil=True)
def _counts_kernel_nb(master_seed, cycle_lo, cycle_hi, n_slots, p_herald,
                      a13, a14, a23, a24, p_noise, skip_slots):  # pragma: no cover - jitted
    c13 = 0; c14 = 0; c23 = 0; c24 = 0
    s1 = 0; s2 = 0
    n_trials = 0
    n_bg = 0
    half_herald = p_herald * 0.5
    half_noise = p_noise * 0.5
    for cycle in range(cycle_lo, cycle_hi):
        cyc = np.uint64(cycle)
        blocked_until = -1
        for slot in range(n_slots):
            if slot <= blocked_until:
                continue
            n_trials += 1
            u0 = _trial_uniform_nb(master_seed, cyc, np.uint64(slot), np.uint64(0))
            if u0 >= p_herald:
                continue
            if u0 < half_herald:
                s1 += 1
                b3 = a13
                b4 = a14
                d1 = True
            else:
                s2 += 1
                b3 = a23
                b4 = a24
                d1 = False
            if skip_slots > 0:
                blocked_until = slot + skip_slots
            u1 = _trial_uniform_nb(master_seed, cyc, np.uint64(slot), np.uint64(1))
            if u1 < b3:
                if d1:
                    c13 += 1
                else:
                    c23 += 1
            elif u1 < b3 + b4:
                if d1:
                    c14 += 1
                else:
                    c24 += 1
            else:
                u2 = _trial_uniform_nb(master_seed, cyc, np.uint64(slot), np.uint64(2))
                if u2 < p_noise:
                    n_bg += 1
                    if u2 < half_noise:
                        if d1:
                            c13 += 1
                        else:
                            c23 += 1
                    else:
                        if d1:
                            c14 += 1
                        else:
                            c24 += 1
    return c13, c14, c23, c24, s1, s2, n_trials, n_bg


def _accept_heralds(cand: np.ndarray, skip_slots: int) -> np.ndarray:
    """Sequentially drop herald candidates that fall in a blocked window."""
    if skip_slots <= 0 or cand.size == 0:
        return cand
    keep = np.empty(cand.size, dtype=bool)
    blocked_until = -1
    for i in range(cand.size):
        s = int(cand[i])
        ok = s > blocked_until
        keep[i] = ok
        if ok:
            blocked_until = s + skip_slots
    return cand[keep]


def _accept_heralds_chunk(cand_flat, cand_slot, n_cycles, n_slots,
                          skip_slots):
    """Greedy blocking-window acceptance over a chunk of cycles.

    ``cand_flat`` are flat (cycle-major) indices of herald candidates in
    ascending order, ``cand_slot`` their slot numbers. Returns the accepted
    flat indices and the number of blocked write slots. The loop runs once
    per accepted herald (a bisect jump to the end of each blocking window),
    so dense candidate streams stay cheap.
    """
    bounds = np.searchsorted(cand_flat,
                             np.arange(n_cycles + 1, dtype=np.int64) * n_slots)
    slots_list = cand_slot.tolist()
    accepted_pos = []
    n_blocked = 0
    last = n_slots - 1
    for c in range(n_cycles):
        i = int(bounds[c])
        hi = int(bounds[c + 1])
        while i < hi:
            s = slots_list[i]
            accepted_pos.append(i)
            end = s + skip_slots
            n_blocked += (end if end < last else last) - s
            i = bisect_right(slots_list, end, i + 1, hi)
    if not accepted_pos:
        return np.empty(0, dtype=np.int64), n_blocked
    return cand_flat[np.asarray(accepted_pos, dtype=np.int64)], n_blocked


def _counts_chunk_numpy(master_seed, cycle_lo, n_cycles, n_slots, p_herald,
                        a13, a14, a23, a24, p_noise, skip_slots):
    flat_cycles = (np.repeat(np.arange(n_cycles, dtype=np.uint64), n_slots)
                   + np.uint64(cycle_lo))
    flat_slots = np.tile(np.arange(n_slots, dtype=np.uint64), n_cycles)
    u0 = trial_uniforms_numpy(master_seed, flat_cycles, flat_slots, 0)
    cand_flat = np.nonzero(u0 < p_herald)[0]

    if skip_slots > 0 and cand_flat.size:
        cand_slot = (cand_flat % n_slots).astype(np.int64)
        heralds, n_blocked = _accept_heralds_chunk(
            cand_flat, cand_slot, n_cycles, n_slots, skip_slots)
    else:
        heralds, n_blocked = cand_flat, 0
    n_trials = n_cycles * n_slots - n_blocked

    if heralds.size == 0:
        return 0, 0, 0, 0, 0, 0, n_trials, 0

    h_cycles = flat_cycles[heralds]
    h_slots = flat_slots[heralds]
    is_d1 = u0[heralds] < p_herald * 0.5
    u1 = trial_uniforms_numpy(master_seed, h_cycles, h_slots, 1)
    b3 = np.where(is_d1, a13, a23)
    b4 = np.where(is_d1, a14, a24)
    hit3 = u1 < b3
    hit4 = ~hit3 & (u1 < b3 + b4)
    miss = ~hit3 & ~hit4

    n_bg = 0
    if p_noise > 0.0 and np.any(miss):
        u2 = trial_uniforms_numpy(master_seed, h_cycles[miss], h_slots[miss],
                                  2)
        bg = u2 < p_noise
        n_bg = int(np.sum(bg))
        bg3 = bg & (u2 < p_noise * 0.5)
        bg4 = bg & ~bg3
        miss_pos = np.nonzero(miss)[0]
        hit3 = hit3.copy()
        hit4 = hit4.copy()
        hit3[miss_pos[bg3]] = True
        hit4[miss_pos[bg4]] = True

    c13 = int(np.sum(hit3 & is_d1))
    c23 = int(np.sum(hit3 & ~is_d1))
    c14 = int(np.sum(hit4 & is_d1))
    c24 = int(np.sum(hit4 & ~is_d1))
    s1 = int(np.sum(is_d1))
    s2 = int(heralds.size - s1)
    return c13, c14, c23, c24, s1, s2, n_trials, n_bg


def _counts_kernel_numpy(master_seed, cycle_lo, cycle_hi, n_slots, p_herald,
                         a13, a14, a23, a24, p_noise, skip_slots):
    totals = np.zeros(8, dtype=np.int64)
    # ~64k slots per chunk keeps the hash intermediates cache-resident
    # while amortizing the per-call overhead (measured optimum)
    chunk = max(1, 64_000 // max(n_slots, 1))
    for lo in range(cycle_lo, cycle_hi, chunk):
        n_cycles = min(lo + chunk, cycle_hi) - lo
        out = _counts_chunk_numpy(master_seed, lo, n_cycles, n_slots,
                                  p_herald, a13, a14, a23, a24, p_noise,
                                  skip_slots)
        totals += np.asarray(out, dtype=np.int64)
    return tuple(int(v) for v in totals)


def counts_kernel(master_seed, cycle_lo, cycle_hi, n_slots, p_herald,
                  a13, a14, a23, a24, p_noise, skip_slots, backend=None):
    """Accumulate coincidence counts for a contiguous range of cycles.

    Returns ``(c13, c14, c23, c24, s1, s2, n_trials, n_background)``. The
    two backends draw from the same counter-based stream and agree bit for
    bit.
    """
    chosen = backend or BACKEND
    if chosen == "numba":
        out = _counts_kernel_nb(np.uint64(master_seed), cycle_lo, cycle_hi,
                                n_slots, p_herald, a13, a14, a23, a24,
                                p_noise, skip_slots)
        return tuple(int(v) for v in out)
    if chosen == "numpy":
        return _counts_kernel_numpy(master_seed, cycle_lo, cycle_hi, n_slots,
                                    p_herald, a13, a14, a23, a24, p_noise,
                                    skip_slots)
    raise ValueError(f"unknown backend {chosen!r}")


def records_kernel(master_seed, cycle_lo, cycle_hi, n_slots, p_herald,
                   a13, a14, a23, a24, p_noise, skip_slots):
    """Per-trial event arrays for a range of cycles (numpy only; dump path).

    Returns arrays (cycle, slot, herald, readout, background) covering every
    executed trial in order. ``herald`` is 0/1/2 for none/D1/D2, ``readout``
    0/3/4 for none/D3/D4. Consistent with ``counts_kernel`` by construction:
    both consume the same per-(cycle, slot, draw) stream.
    """
    cyc_out = []
    slot_out = []
    her_out = []
    read_out = []
    bg_out = []
    for cycle in range(cycle_lo, cycle_hi):
        slots = np.arange(n_slots, dtype=np.uint64)
        cycles = np.full(n_slots, cycle, dtype=np.uint64)
        u0 = trial_uniforms_numpy(master_seed, cycles, slots, 0)
        cand = np.nonzero(u0 < p_herald)[0]
        heralds = _accept_heralds(cand, skip_slots)

        executed = np.ones(n_slots, dtype=bool)
        if skip_slots > 0:
            for s in heralds:
                executed[int(s) + 1:int(s) + 1 + skip_slots] = False

        herald_code = np.zeros(n_slots, dtype=np.uint8)
        herald_code[heralds] = np.where(u0[heralds] < p_herald * 0.5, 1, 2)
        readout_code = np.zeros(n_slots, dtype=np.uint8)
        bg_flag = np.zeros(n_slots, dtype=bool)

        if heralds.size:
            is_d1 = herald_code[heralds] == 1
            u1 = trial_uniforms_numpy(master_seed,
                                      np.full(heralds.size, cycle, dtype=np.uint64),
                                      heralds.astype(np.uint64), 1)
            b3 = np.where(is_d1, a13, a23)
            b4 = np.where(is_d1, a14, a24)
            hit3 = u1 < b3
            hit4 = ~hit3 & (u1 < b3 + b4)
            readout_code[heralds[hit3]] = 3
            readout_code[heralds[hit4]] = 4
            miss = ~hit3 & ~hit4
            if p_noise > 0.0 and np.any(miss):
                midx = heralds[miss]
                u2 = trial_uniforms_numpy(master_seed,
                                          np.full(midx.size, cycle, dtype=np.uint64),
                                          midx.astype(np.uint64), 2)
                bg = u2 < p_noise
                bg3 = bg & (u2 < p_noise * 0.5)
                readout_code[midx[bg3]] = 3
                readout_code[midx[bg & ~bg3]] = 4
                bg_flag[midx[bg]] = True

        keep = np.nonzero(executed)[0]
        cyc_out.append(np.full(keep.size, cycle, dtype=np.int64))
        slot_out.append(keep.astype(np.int64))
        her_out.append(herald_code[keep])
        read_out.append(readout_code[keep])
        bg_out.append(bg_flag[keep])

    return (np.concatenate(cyc_out), np.concatenate(slot_out),
            np.concatenate(her_out), np.concatenate(read_out),
            np.concatenate(bg_out))
