import math

import numpy as np
import pytest

from dlczsim.errors import InsufficientStatisticsError
from dlczsim.model import (
    CANONICAL_SETTINGS,
    CoincidenceCounts,
    DecayModel,
    MeasurementSettings,
    SourceParams,
    bell_parameter,
    coincidence_probabilities,
    correlation_E,
    estimate_intrinsic_retrieval,
    expected_bell,
    expected_correlation,
)
from dlczsim.montecarlo import (
    SeedSpec,
    SequenceConfig,
    bootstrap_errors,
    run_trials,
    sweep_storage_time,
    write_record_dump,
)

DM = DecayModel(0.77, 1e-3)
CFG = SequenceConfig()


def calibrated_source(chi=0.02):
    return SourceParams(chi=chi, werner_p0=0.887, vis_tau_gauss=2.29e-3,
                        vis_tau_exp=6.6e-3, p_noise=1e-4)


class TestSequenceConfig:
    def test_default_slot_arithmetic(self):
        assert CFG.trials_per_run == 4000
        assert CFG.cycle_duration == pytest.approx(50e-3)
        assert CFG.herald_skip_slots == 0

    def test_skip_slots_for_long_storage(self):
        assert CFG.with_storage_time(2.6e-3).herald_skip_slots == 1300
        assert CFG.with_storage_time(1.15e-3).herald_skip_slots == 575
        assert CFG.with_storage_time(1.9e-6).herald_skip_slots == 0

    def test_validation(self):
        with pytest.raises(ValueError):
            SequenceConfig(trial_period=100e-9)  # shorter than write pulse
        with pytest.raises(ValueError):
            SequenceConfig(run_duration=-1.0)


class TestRunTrials:
    def test_one_second_is_80000_trials(self):
        res = run_trials(CFG, calibrated_source(), DM, 0.15, 0.15,
                         MeasurementSettings(0, 0), 20, SeedSpec(11))
        assert res.n_trials == 80000

    def test_chi_zero_means_no_heralds(self):
        sp = SourceParams(chi=0.0)
        res = run_trials(CFG, sp, DM, 0.15, 0.15, MeasurementSettings(0, 0),
                         5, SeedSpec(3))
        c = res.counts
        assert (c.s1, c.s2, c.coincidences) == (0, 0, 0)
        assert res.n_trials == 20000

    def test_determinism_same_seed(self):
        a = run_trials(CFG, calibrated_source(), DM, 0.15, 0.15,
                       MeasurementSettings(0, 22.5), 30, SeedSpec(99))
        b = run_trials(CFG, calibrated_source(), DM, 0.15, 0.15,
                       MeasurementSettings(0, 22.5), 30, SeedSpec(99))
        assert a.counts == b.counts

    def test_worker_count_invariance(self):
        kw = dict(cfg=CFG, sp=calibrated_source(0.05), dm=DM, write_eta=0.3,
                  read_eta=0.3, settings=MeasurementSettings(45, 22.5),
                  n_cycles=37, seed=SeedSpec(1234))
        results = [run_trials(n_workers=w, **kw).counts for w in (1, 2, 5, 16)]
        assert all(r == results[0] for r in results[1:])

    def test_herald_accounting_identity(self):
        # s1+s2 equals heralded trials; R_qu is the herald-weighted mean of
        # R_L and R_R on every dataset
        res = run_trials(CFG, calibrated_source(0.1), DM, 0.5, 0.5,
                         MeasurementSettings(0, 0), 20, SeedSpec(5))
        c = res.counts
        assert c.s1 + c.s2 <= res.n_trials
        est = estimate_intrinsic_retrieval(c, 0.5)
        weighted = (c.s1 * est.left.value + c.s2 * est.right.value) / (c.s1 + c.s2)
        assert est.qubit.value == pytest.approx(weighted, rel=1e-12)

    def test_long_storage_blocks_write_slots(self):
        cfg = CFG.with_storage_time(2.6e-3)
        res = run_trials(cfg, calibrated_source(0.1), DM, 0.5, 0.5,
                         MeasurementSettings(0, 0), 10, SeedSpec(8))
        heralds = res.counts.s1 + res.counts.s2
        assert heralds > 0
        assert res.n_blocked_slots > 0
        assert res.n_trials + res.n_blocked_slots == 10 * 4000
        # every blocked window is at most the skip length per herald
        assert res.n_blocked_slots <= heralds * cfg.herald_skip_slots

    def test_rejects_unphysical_inputs_before_running(self):
        with pytest.raises(ValueError):
            run_trials(CFG, calibrated_source(), DM, 1.5, 0.15,
                       MeasurementSettings(0, 0), 1, SeedSpec(0))
        with pytest.raises(ValueError):
            run_trials(CFG, calibrated_source(), DM, 0.15, 0.15,
                       MeasurementSettings(0, 0), 0, SeedSpec(0))


class TestEstimatorConsistency:
    def test_retrieval_estimator_tracks_decay_curve(self):
        # ideal polarization: the qubit estimator measures R(t) directly
        sp = SourceParams(chi=0.3, werner_p0=1.0, p_noise=0.0)
        for t, seed in ((0.0, 21), (0.23e-3, 22), (0.54e-3, 23)):
            res = run_trials(CFG.with_storage_time(t), sp, DM, 1.0, 0.5,
                             MeasurementSettings(0, 0), 500, SeedSpec(seed))
            est = estimate_intrinsic_retrieval(res.counts, 0.5)
            want = float(np.asarray(
                coincidence_probabilities(sp, DM, t, 0.5,
                                          MeasurementSettings(0, 0)).total)) / 0.5
            assert abs(est.qubit.value - want) < 3 * est.qubit.error

    def test_correlation_matches_analytic_3_sigma(self):
        sp = calibrated_source(0.4)
        setting = MeasurementSettings(45, 22.5)
        res = run_trials(CFG, sp, DM, 1.0, 0.6, setting, 600, SeedSpec(31))
        e_mc = correlation_E(res.counts)
        e_an = expected_correlation(sp, DM, CFG.storage_time, 0.6, setting)
        err = bootstrap_errors(res.counts, 400, SeedSpec(32)).e
        assert abs(e_mc - e_an) < 3 * err

    def test_bell_matches_analytic_3_sigma(self):
        sp = calibrated_source(0.4)
        counts = []
        for j, setting in enumerate(CANONICAL_SETTINGS):
            res = run_trials(CFG, sp, DM, 1.0, 0.6, setting, 400,
                             SeedSpec(40).child(j))
            counts.append(res.counts)
        s_mc = bell_parameter(*[correlation_E(c) for c in counts])
        s_an = expected_bell(sp, DM, CFG.storage_time, 0.6)
        err = bootstrap_errors(counts, 400, SeedSpec(41)).s_bell
        assert abs(s_mc - s_an) < 3 * err


class TestBootstrap:
    def test_errors_shrink_with_counts(self):
        base = CoincidenceCounts(900, 90, 110, 880, 2000, 2000, 100000)
        small = bootstrap_errors(base, 600, SeedSpec(7), eta_td=0.15)
        big = bootstrap_errors(base.scaled(100), 600, SeedSpec(7), eta_td=0.15)
        for a, b in ((small.e, big.e), (small.r_qu, big.r_qu),
                     (small.r_l, big.r_l)):
            assert b == pytest.approx(a / 10.0, rel=0.2)

    def test_bell_error_scale_matches_paper_order(self):
        # counts of the magnitude behind S = 2.5 +/- 0.02: the resampled
        # sigma must come out the same order as 0.02
        e_target = 2.5 / (2 * math.sqrt(2))
        counts = []
        for _ in range(4):
            n = 6000
            same = int(round(n * (1 + e_target) / 4))
            cross = int(round(n * (1 - e_target) / 4))
            counts.append(CoincidenceCounts(same, cross, cross, same,
                                            n, n, 10 * n))
        err = bootstrap_errors(counts, 800, SeedSpec(13)).s_bell
        assert 0.005 < err < 0.08

    def test_degenerate_single_zero_count_is_fine(self):
        counts = CoincidenceCounts(0, 500, 480, 510, 2000, 2000, 100000)
        err = bootstrap_errors(counts, 300, SeedSpec(3))
        assert np.isfinite(err.e) and err.e > 0

    def test_all_zero_counts_exhausts_redraws(self):
        counts = CoincidenceCounts(0, 0, 0, 0, 10, 10, 100)
        with pytest.raises(InsufficientStatisticsError):
            bootstrap_errors(counts, 100, SeedSpec(3))

    def test_deterministic_under_seed(self):
        counts = CoincidenceCounts(50, 5, 4, 60, 200, 210, 5000)
        a = bootstrap_errors(counts, 300, SeedSpec(77), eta_td=0.2)
        b = bootstrap_errors(counts, 300, SeedSpec(77), eta_td=0.2)
        assert a == b

    def test_resample_count_floor(self):
        with pytest.raises(ValueError):
            bootstrap_errors(CoincidenceCounts(5, 5, 5, 5, 20, 20, 100), 50,
                             SeedSpec(1))


class TestSweep:
    def test_rows_track_decay_and_bell(self):
        # ideal polarization so the retrieval estimator measures R(t)
        sp = SourceParams(chi=0.3, werner_p0=1.0, p_noise=0.0)
        rows = sweep_storage_time([0.0, 0.23e-3, 0.54e-3], CFG, sp, DM,
                                  1.0, 0.5, 400, SeedSpec(50), eta_td=0.5,
                                  n_resamples=200)
        for row, want in zip(rows, (0.77, 0.671, 0.512)):
            assert abs(row.r_qu.value - want) < 4 * row.r_qu.error
        # with p = 1 the Bell parameter sits at the Tsirelson bound
        assert rows[0].s_bell == pytest.approx(2 * math.sqrt(2),
                                               abs=4 * rows[0].s_err + 0.05)

    def test_empty_grid_rejected(self):
        with pytest.raises(ValueError):
            sweep_storage_time([], CFG, calibrated_source(), DM, 0.15, 0.15,
                               10, SeedSpec(0))


class TestRecords:
    def test_dump_round_trip(self, tmp_path):
        res = run_trials(CFG, calibrated_source(0.1), DM, 0.5, 0.5,
                         MeasurementSettings(0, 0), 3, SeedSpec(60),
                         collect_records=True)
        path = tmp_path / "dump.csv"
        write_record_dump(res, path)
        lines = path.read_text().splitlines()
        assert lines[0] == "cycle,trial,herald,readout,background,t_ns"
        assert len(lines) == 1 + res.n_trials
        # timestamps strictly increasing within the dump
        t = [int(l.rsplit(",", 1)[1]) for l in lines[1:]]
        assert all(b > a for a, b in zip(t, t[1:]))
        # counts recomputed from the dump equal the kernel counts
        c13 = sum(1 for l in lines[1:] if ",D1,D3," in l)
        c24 = sum(1 for l in lines[1:] if ",D2,D4," in l)
        assert c13 == res.counts.c13 and c24 == res.counts.c24

    def test_records_only_on_request(self):
        res = run_trials(CFG, calibrated_source(), DM, 0.15, 0.15,
                         MeasurementSettings(0, 0), 2, SeedSpec(61))
        assert res.records is None
        with pytest.raises(ValueError):
            write_record_dump(res, "/tmp/nope.csv")

    def test_click_record_objects(self):
        res = run_trials(CFG, calibrated_source(0.1), DM, 0.5, 0.5,
                         MeasurementSettings(0, 0), 1, SeedSpec(62),
                         collect_records=True)
        recs = list(res.iter_records())
        assert len(recs) == res.n_trials
        heralded = [r for r in recs if r.herald_detector is not None]
        assert len(heralded) == res.counts.s1 + res.counts.s2
        for r in recs:
            if r.readout_detector is not None:
                assert r.herald_detector is not None
