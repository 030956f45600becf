"""Discrete-event simulation of the heralded entanglement trial sequence.

Each experimental cycle is an atom-preparation window followed by a run
window divided into fixed trial slots. A trial fires a write pulse; with
probability ``chi * write_eta`` a herald clicks on D1 or D2, the write
sequence stops, and after the configured storage time the readout outcome
is sampled from the same joint-probability model the analytic module
exposes. Storage times spanning several trial periods block the subsequent
write slots.

Sampling is counter-based and deterministic: identical seed and
configuration give bit-identical counts for any worker count and either
kernel backend.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from . import _kernels
from .errors import InsufficientStatisticsError
from .model import (
    CANONICAL_SETTINGS,
    CoincidenceCounts,
    DecayModel,
    Estimate,
    MeasurementSettings,
    SourceParams,
    bell_parameter,
    correlation_E,
    estimate_intrinsic_retrieval,
    retrieval_efficiency,
    visibility,
    werner_joint_projections,
)


@dataclass(frozen=True)
class SequenceConfig:
    """Timing constants of the cyclic experimental state machine (seconds)."""

    prep_duration: float = 42e-3
    run_duration: float = 8e-3
    write_pulse: float = 300e-9
    read_pulse: float = 300e-9
    clean_pulse: float = 200e-9
    post_read_gap: float = 1300e-9
    trial_period: float = 2000e-9
    storage_time: float = 1e-6

    def __post_init__(self) -> None:
        for name in ("prep_duration", "run_duration", "write_pulse",
                     "read_pulse", "clean_pulse", "post_read_gap",
                     "trial_period"):
            if not (getattr(self, name) > 0.0):
                raise ValueError(f"{name} must be positive")
        if self.storage_time < 0.0:
            raise ValueError("storage_time must be >= 0")
        if self.trial_period < self.write_pulse:
            raise ValueError("trial_period must cover the write pulse")

    @property
    def trials_per_run(self) -> int:
        """Write slots in one run window: floor(run_duration/trial_period).

        Ratios within a part in 1e9 of an integer snap to it, so an 8 ms
        run with a 2000 ns period yields exactly 4000 slots despite binary
        rounding of the durations.
        """
        n = self.run_duration / self.trial_period
        r = round(n)
        if abs(n - r) <= 1e-9 * max(r, 1):
            return int(r)
        return int(n)

    @property
    def cycle_duration(self) -> float:
        return self.prep_duration + self.run_duration

    @property
    def herald_skip_slots(self) -> int:
        """Write slots blocked after a herald while the excitation is stored."""
        n = self.storage_time / self.trial_period
        r = round(n)
        if abs(n - r) <= 1e-9 * max(r, 1):
            return int(r)
        return int(n)

    def with_storage_time(self, t: float) -> "SequenceConfig":
        return replace(self, storage_time=t)


@dataclass(frozen=True)
class SeedSpec:
    """Master seed for the counter-based trial stream.

    Every (cycle, slot, draw) triple is hashed independently from the master
    seed, so a given spec plus configuration fixes the entire click stream
    regardless of how cycles are split across workers.
    """

    master_seed: int

    def __post_init__(self) -> None:
        if not isinstance(self.master_seed, (int, np.integer)):
            raise ValueError("master_seed must be an integer")
        if not (0 <= self.master_seed < 2 ** 64):
            raise ValueError("master_seed must fit in 64 bits")
        object.__setattr__(self, "master_seed", int(self.master_seed))

    def child(self, *tags: int) -> "SeedSpec":
        """Independent sub-stream for a tagged sub-experiment."""
        return SeedSpec(_kernels.derive_stream(self.master_seed, *tags))


@dataclass(frozen=True)
class ClickRecord:
    """One executed trial: herald and readout clicks, if any.

    ``readout_is_background`` is diagnostic only; estimators never see it.
    ``timestamp`` is the write-slot start measured from the experiment
    start, strictly increasing within a run.
    """

    cycle_index: int
    trial_index: int
    herald_detector: Optional[str]
    readout_detector: Optional[str]
    readout_is_background: bool
    timestamp: float


@dataclass(frozen=True)
class TrialRunResult:
    """Counts and bookkeeping from a batch of simulated cycles."""

    counts: CoincidenceCounts
    n_cycles: int
    n_trials: int
    n_blocked_slots: int
    n_background_readouts: int
    # packed per-trial arrays (cycle, slot, herald, readout, bg, t_ns)
    records: Optional[tuple] = None

    def iter_records(self):
        """Materialize ClickRecord objects from the packed arrays."""
        if self.records is None:
            raise ValueError("run was executed without record collection")
        cyc, slot, her, read, bg, t_ns = self.records
        names_h = (None, "D1", "D2")
        names_r = (None, None, None, "D3", "D4")
        for i in range(cyc.size):
            yield ClickRecord(int(cyc[i]), int(slot[i]), names_h[her[i]],
                              names_r[read[i]], bool(bg[i]), t_ns[i] * 1e-9)


def _kernel_args(cfg: SequenceConfig, sp: SourceParams, dm: DecayModel,
                 write_eta: float, read_eta: float,
                 settings: MeasurementSettings):
    for name, v in (("write_eta", write_eta), ("read_eta", read_eta)):
        if not (0.0 <= v <= 1.0):
            raise ValueError(f"{name} must lie in [0, 1], got {v!r}")
    p_herald = sp.chi * write_eta
    q_s = retrieval_efficiency(cfg.storage_time, dm) * read_eta
    w = werner_joint_projections(visibility(sp, cfg.storage_time), settings,
                                 sp.phase_total)
    # Conditional on the herald detector: a_ij = P(correlated readout Dj | Di)
    a13, a14, a23, a24 = (2.0 * q_s * wij for wij in w)
    if a13 + a14 > 1.0 + 1e-12 or a23 + a24 > 1.0 + 1e-12:
        raise ValueError("correlated readout probabilities exceed 1")
    return (cfg.trials_per_run, p_herald, a13, a14, a23, a24, sp.p_noise,
            cfg.herald_skip_slots)


def _cycle_chunks(n_cycles: int, n_workers: int):
    step = max(1, math.ceil(n_cycles / max(1, n_workers)))
    return [(lo, min(lo + step, n_cycles)) for lo in range(0, n_cycles, step)]


def run_trials(cfg: SequenceConfig, sp: SourceParams, dm: DecayModel,
               write_eta: float, read_eta: float,
               settings: MeasurementSettings, n_cycles: int, seed: SeedSpec,
               *, collect_records: bool = False,
               n_workers: int = 1) -> TrialRunResult:
    """Simulate ``n_cycles`` experimental cycles and accumulate counts.

    The returned counts satisfy the CoincidenceCounts invariants by
    construction. ``n_workers`` only partitions cycles across threads; the
    result is identical for any value.
    """
    if n_cycles < 1:
        raise ValueError("n_cycles must be >= 1")
    n_slots, p_herald, a13, a14, a23, a24, p_noise, skip = _kernel_args(
        cfg, sp, dm, write_eta, read_eta, settings)

    chunks = _cycle_chunks(n_cycles, n_workers)

    def work(chunk):
        lo, hi = chunk
        return _kernels.counts_kernel(seed.master_seed, lo, hi, n_slots,
                                      p_herald, a13, a14, a23, a24, p_noise,
                                      skip)

    if len(chunks) > 1 and n_workers > 1:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            parts = list(pool.map(work, chunks))
    else:
        parts = [work(c) for c in chunks]

    agg = np.sum(np.asarray(parts, dtype=np.int64), axis=0)
    c13, c14, c23, c24, s1, s2, n_trials, n_bg = (int(v) for v in agg)
    counts = CoincidenceCounts(c13, c14, c23, c24, s1, s2, n_trials)
    n_blocked = n_cycles * n_slots - n_trials

    records = None
    if collect_records:
        cyc, slot, her, read, bg = _kernels.records_kernel(
            seed.master_seed, 0, n_cycles, n_slots, p_herald, a13, a14, a23,
            a24, p_noise, skip)
        period_ns = int(round(cfg.trial_period * 1e9))
        cycle_ns = int(round(cfg.cycle_duration * 1e9))
        prep_ns = int(round(cfg.prep_duration * 1e9))
        t_ns = cyc * cycle_ns + prep_ns + slot * period_ns
        records = (cyc, slot, her, read, bg, t_ns)

    return TrialRunResult(counts=counts, n_cycles=n_cycles,
                          n_trials=n_trials, n_blocked_slots=n_blocked,
                          n_background_readouts=n_bg, records=records)


def write_record_dump(result: TrialRunResult, path) -> None:
    """Write the line-delimited click-record stream for a recorded run."""
    if result.records is None:
        raise ValueError("run was executed without record collection")
    cyc, slot, her, read, bg, t_ns = result.records
    names_h = ("", "D1", "D2")
    names_r = ("", "", "", "D3", "D4")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("cycle,trial,herald,readout,background,t_ns\n")
        for i in range(cyc.size):
            fh.write(f"{cyc[i]},{slot[i]},{names_h[her[i]]},"
                     f"{names_r[read[i]]},{int(bg[i])},{t_ns[i]}\n")


@dataclass(frozen=True)
class BootstrapErrors:
    """Standard errors from Poissonian count resampling."""

    e: object  # float for a single setting, tuple of four otherwise
    s_bell: Optional[float] = None
    r_qu: Optional[float] = None
    r_l: Optional[float] = None
    r_r: Optional[float] = None


def _poisson_resample(rng, base: np.ndarray, need_coinc_rows, need_singles_rows,
                      n_resamples: int, max_attempts: int) -> np.ndarray:
    """Draw resamples, redrawing rows whose estimators would be undefined."""
    out = np.empty((n_resamples, base.size), dtype=np.int64)
    filled = 0
    attempts = 0
    while filled < n_resamples:
        want = n_resamples - filled
        if attempts >= max_attempts:
            raise InsufficientStatisticsError(
                "bootstrap resampling exhausted its redraw budget")
        take = min(want, max_attempts - attempts)
        draw = rng.poisson(lam=base, size=(take, base.size))
        attempts += take
        ok = np.ones(take, dtype=bool)
        for rows in need_coinc_rows:
            ok &= draw[:, rows].sum(axis=1) > 0
        for rows in need_singles_rows:
            ok &= (draw[:, rows] > 0).all(axis=1)
        good = draw[ok]
        n_take = min(good.shape[0], want)
        out[filled:filled + n_take] = good[:n_take]
        filled += n_take
    return out


def bootstrap_errors(counts, n_resamples: int = 1000,
                     seed: SeedSpec = SeedSpec(0), *,
                     eta_td: Optional[float] = None) -> BootstrapErrors:
    """Standard errors of the coincidence estimators by Poisson resampling.

    ``counts`` is a single CoincidenceCounts (errors for E and, when
    ``eta_td`` is given, the three retrieval estimators) or a sequence of
    four, one per CHSH setting (errors for each E and for the Bell
    parameter). Each observed count is resampled as an independent Poisson
    variate with mean equal to the observation; resamples on which an
    estimator is undefined are redrawn, capped at ``10 * n_resamples``
    attempts.
    """
    if n_resamples < 100:
        raise ValueError("n_resamples must be >= 100")
    rng = np.random.default_rng(np.random.PCG64(seed.master_seed))
    max_attempts = 10 * n_resamples

    if isinstance(counts, CoincidenceCounts):
        base = np.array([counts.c13, counts.c14, counts.c23, counts.c24,
                         counts.s1, counts.s2], dtype=np.int64)
        need_singles = [np.array([4]), np.array([5])] if eta_td else []
        draws = _poisson_resample(rng, base, [np.arange(4)], need_singles,
                                  n_resamples, max_attempts)
        num = draws[:, 0] + draws[:, 3] - draws[:, 1] - draws[:, 2]
        den = draws[:, :4].sum(axis=1)
        e_err = float(np.std(num / den, ddof=1))
        r_qu = r_l = r_r = None
        if eta_td:
            qu = (draws[:, 0] + draws[:, 3]) / (eta_td * (draws[:, 4] + draws[:, 5]))
            left = draws[:, 0] / (eta_td * draws[:, 4])
            right = draws[:, 3] / (eta_td * draws[:, 5])
            r_qu = float(np.std(qu, ddof=1))
            r_l = float(np.std(left, ddof=1))
            r_r = float(np.std(right, ddof=1))
        return BootstrapErrors(e=e_err, r_qu=r_qu, r_l=r_l, r_r=r_r)

    counts = list(counts)
    if len(counts) != 4:
        raise ValueError("expected one CoincidenceCounts or a sequence of four")
    base = np.concatenate([[c.c13, c.c14, c.c23, c.c24] for c in counts]
                          ).astype(np.int64)
    coinc_rows = [np.arange(4 * k, 4 * k + 4) for k in range(4)]
    draws = _poisson_resample(rng, base, coinc_rows, [], n_resamples,
                              max_attempts)
    es = []
    for k in range(4):
        blk = draws[:, 4 * k:4 * k + 4]
        es.append((blk[:, 0] + blk[:, 3] - blk[:, 1] - blk[:, 2])
                  / blk.sum(axis=1))
    s = np.abs(es[0] - es[1] + es[2] + es[3])
    return BootstrapErrors(e=tuple(float(np.std(e, ddof=1)) for e in es),
                           s_bell=float(np.std(s, ddof=1)))


@dataclass(frozen=True)
class SweepRow:
    """One storage time of a combined efficiency/Bell sweep."""

    t: float
    r_qu: Estimate
    r_l: Estimate
    r_r: Estimate
    s_bell: float
    s_err: float
    retrieval_counts: CoincidenceCounts
    bell_counts: tuple


def sweep_storage_time(ts: Sequence[float], cfg: SequenceConfig,
                       sp: SourceParams, dm: DecayModel, write_eta: float,
                       read_eta: float, n_cycles: int, seed: SeedSpec, *,
                       eta_td: Optional[float] = None,
                       n_resamples: int = 500,
                       n_workers: int = 1) -> list:
    """Simulate retrieval and CHSH statistics over a grid of storage times.

    Per storage time: one run at both analysis angles zero feeds the
    retrieval estimators, and one run per canonical CHSH setting feeds the
    Bell parameter. Runs draw from independent child seed streams keyed by
    the grid position, so inserting or removing grid points does not
    perturb other rows.
    """
    ts = list(ts)
    if not ts:
        raise ValueError("storage-time grid is empty")
    if any(t < 0 for t in ts):
        raise ValueError("storage times must be >= 0")
    eta = eta_td if eta_td is not None else read_eta
    rows = []
    for i, t in enumerate(ts):
        cfg_t = cfg.with_storage_time(t)
        ret = run_trials(cfg_t, sp, dm, write_eta, read_eta,
                         MeasurementSettings(0.0, 0.0), n_cycles,
                         seed.child(i, 0), n_workers=n_workers)
        est = estimate_intrinsic_retrieval(ret.counts, eta)
        bell_counts = []
        for j, setting in enumerate(CANONICAL_SETTINGS):
            res = run_trials(cfg_t, sp, dm, write_eta, read_eta, setting,
                             n_cycles, seed.child(i, 1 + j),
                             n_workers=n_workers)
            bell_counts.append(res.counts)
        e_vals = [correlation_E(c) for c in bell_counts]
        s = bell_parameter(*e_vals)
        errs = bootstrap_errors(bell_counts, n_resamples, seed.child(i, 9))
        rows.append(SweepRow(t=t, r_qu=est.qubit, r_l=est.left, r_r=est.right,
                             s_bell=s, s_err=errs.s_bell,
                             retrieval_counts=ret.counts,
                             bell_counts=tuple(bell_counts)))
    return rows
