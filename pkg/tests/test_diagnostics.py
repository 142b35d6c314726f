"""Trajectory records, stage detection, theory audits, sign consistency."""

import math

import numpy as np
import pytest

from mirrorphase.diagnostics import (
    TrajectoryRecord,
    audit_theorem_invariants,
    detect_stages,
    record,
    sign_consistency,
)
from mirrorphase.geometry import HypentropyMap, dist, dist_bregman
from mirrorphase.problem import (
    SparseSignal,
    empirical_risk,
    generate_measurements,
    generate_signal,
)
from mirrorphase.solvers import Algorithm, SolverConfig, SolverState, run


def mk(step, rel_bregman=1.0, min_support_ratio=1.0, rel_dist=1.0, off=0.0,
       norm_sq=1.0, inner=1.0, risk=0.0):
    return TrajectoryRecord(
        step_index=step,
        algo_time=float(step),
        risk=risk,
        rel_dist=rel_dist,
        rel_bregman=rel_bregman,
        off_support_l1=off,
        min_support_ratio=min_support_ratio,
        norm_sq=norm_sq,
        inner_ratio=inner,
    )


def desk_run(max_steps=1200, record_every=5):
    sig = generate_signal(200, 3, seed=7, min_component=0.2)
    meas = generate_measurements(sig, 400, seed=7)
    i0 = int(sig.support[int(np.argmax(np.abs(sig.values[sig.support])))])
    cfg = SolverConfig(
        algorithm=Algorithm.HWF,
        beta=1e-10,
        eta=0.05,
        max_steps=max_steps,
        record_every=record_every,
    )
    recs = []
    final = run(meas, cfg, i0=i0, sink=recs.append, signal=sig)
    return sig, meas, recs, final


def test_record_at_signal_and_flipped():
    sig = generate_signal(30, 4, seed=1)
    meas = generate_measurements(sig, 50, seed=2)
    hyp = HypentropyMap(1e-10)
    for x in (sig.values.copy(), -sig.values.copy()):
        r = record(SolverState(x=x, step_index=0, algo_time=0.0), sig, meas, hyp)
        assert r.rel_dist == 0.0
        assert r.rel_bregman == 0.0
        assert r.off_support_l1 == 0.0
        assert r.min_support_ratio == 1.0
        assert r.risk == 0.0


def test_record_one_hot_support_ratio():
    # one-hot start: for k = 1 the ratio is (theta / sqrt 3) / |x*_i0|,
    # while any second support coordinate pins the min to zero
    lone = SparseSignal.from_values(np.array([0.0, 1.0, 0.0]))
    meas = generate_measurements(lone, 500, seed=3)
    hyp = HypentropyMap(1e-10)
    theta = math.sqrt(float(np.mean(meas.observations)))
    x = np.zeros(3)
    x[1] = theta / math.sqrt(3.0)
    r = record(SolverState(x=x, step_index=0, algo_time=0.0), lone, meas, hyp)
    assert abs(r.min_support_ratio - theta / math.sqrt(3.0)) < 1e-15
    pair = SparseSignal.from_values(np.array([0.6, 0.8, 0.0]))
    meas2 = generate_measurements(pair, 50, seed=4)
    x2 = np.zeros(3)
    x2[1] = 0.5
    r2 = record(SolverState(x=x2, step_index=0, algo_time=0.0), pair, meas2, hyp)
    assert r2.min_support_ratio == 0.0


def test_record_matches_geometry_recomputation():
    sig = generate_signal(40, 5, seed=5)
    meas = generate_measurements(sig, 80, seed=6)
    hyp = HypentropyMap(1e-8)
    x = np.random.default_rng(7).standard_normal(40) * 0.3
    st = SolverState(x=x, step_index=3, algo_time=0.3)
    r = record(st, sig, meas, hyp)
    assert r.rel_dist == dist(x, sig.values) / sig.norm
    assert r.rel_bregman == dist_bregman(hyp, x, sig.values) / sig.norm
    assert r.risk == empirical_risk(x, meas)
    assert r.norm_sq == float(x @ x)
    off = np.ones(40, dtype=bool)
    off[sig.support] = False
    assert r.off_support_l1 == float(np.sum(np.abs(x[off])))


def test_record_is_pure_and_accepts_precomputed_risk():
    sig = generate_signal(25, 3, seed=8)
    meas = generate_measurements(sig, 60, seed=9)
    hyp = HypentropyMap(1e-10)
    x = np.random.default_rng(10).standard_normal(25)
    st = SolverState(x=x, step_index=5, algo_time=0.5)
    a = record(st, sig, meas, hyp)
    b = record(st, sig, meas, hyp)
    assert a == b
    c = record(st, sig, meas, hyp, risk=a.risk)
    assert c == a
    assert np.array_equal(x, st.x)  # input untouched


def test_record_without_signal_marks_oracle_fields():
    sig = generate_signal(25, 3, seed=11)
    meas = generate_measurements(sig, 60, seed=12)
    hyp = HypentropyMap(1e-10)
    x = np.random.default_rng(13).standard_normal(25)
    r = record(SolverState(x=x, step_index=0, algo_time=0.0), None, meas, hyp)
    assert math.isnan(r.rel_dist) and math.isnan(r.rel_bregman)
    assert math.isnan(r.off_support_l1) and math.isnan(r.min_support_ratio)
    assert r.norm_sq == float(x @ x)
    assert r.risk == empirical_risk(x, meas)


def test_detect_stages_recovers_planted_exponential_rate():
    steps = range(0, 3010, 10)
    recs = [mk(s, rel_bregman=math.exp(-0.01 * s)) for s in steps]
    cut = 0.5 * (math.exp(-0.01 * 1490) + math.exp(-0.01 * 1500))
    rep = detect_stages(recs, delta=cut / 2.0)
    assert rep.t1_step == 0  # ratio starts above 1/2
    assert rep.t2_step == 1500
    assert rep.linear_rate is not None
    assert abs(rep.linear_rate - (-0.01)) <= 1e-6


def test_detect_stages_t1_first_crossing():
    recs = [mk(s, min_support_ratio=(0.2 if s < 140 else 0.8)) for s in range(0, 300, 10)]
    rep = detect_stages(recs, delta=1e-9)
    assert rep.t1_step == 140
    assert rep.t2_step is None  # rel_bregman stuck at 1.0


def test_detect_stages_t2_never_precedes_t1():
    # the divergence dips under 2 delta during warm-up; t2 must wait for
    # the crossing after t1
    recs = []
    for s in range(0, 500, 10):
        if s < 100:
            rb = 1e-4  # early dip
        elif s < 300:
            rb = 1.0
        else:
            rb = 1e-4
        recs.append(mk(s, rel_bregman=rb, min_support_ratio=(0.0 if s < 200 else 1.0)))
    rep = detect_stages(recs, delta=0.01)
    assert rep.t1_step == 200
    assert rep.t2_step == 300
    assert rep.t1_step <= rep.t2_step


def test_detect_stages_subsampling_shifts_by_at_most_one_interval():
    def rb(s):
        return 2.0 * math.exp(-0.008 * max(0, s - 777))

    full = [mk(s, rel_bregman=rb(s), min_support_ratio=(0.0 if s < 777 else 1.0))
            for s in range(0, 3000)]
    sub = full[::10]
    a = detect_stages(full, delta=0.01)
    b = detect_stages(sub, delta=0.01)
    assert 0 <= b.t1_step - a.t1_step <= 10
    assert 0 <= b.t2_step - a.t2_step <= 10


def test_detect_stages_short_window_gives_no_rate():
    recs = [mk(s, rel_bregman=math.exp(-0.1 * s)) for s in range(0, 60, 10)]
    rep = detect_stages(recs, delta=0.25)  # crossing at the second record
    assert rep.t2_step == 10
    assert rep.linear_rate is None


def test_warmup_drop_count_on_staircase():
    recs = []
    step = 0
    for level in (1.0, 0.4, 0.1):
        for _ in range(60):
            recs.append(mk(step, rel_dist=level, min_support_ratio=0.0, rel_bregman=1.0))
            step += 10
    recs.append(mk(step, rel_dist=0.1, min_support_ratio=1.0, rel_bregman=1.0))
    rep = detect_stages(recs, delta=1e-12)
    assert rep.t1_step == step
    assert rep.warmup_drop_count == 2


def test_detect_stages_validation():
    with pytest.raises(ValueError):
        detect_stages([], delta=0.01)
    with pytest.raises(ValueError):
        detect_stages([mk(0), mk(0)], delta=0.01)
    with pytest.raises(ValueError):
        detect_stages([mk(0)], delta=0.0)


def audit_signal(n=100, k=2, seed=20):
    sig = generate_signal(n, k, seed=seed)
    return sig


def test_audit_flags_off_support_mass():
    sig = audit_signal()
    recs = [mk(s, rel_bregman=1.0) for s in (0, 10, 20)]
    recs += [mk(30, off=10.0), mk(40)]
    rep = audit_theorem_invariants(recs, sig, m=1000, delta=0.01)
    assert not rep.off_support.ok
    assert rep.off_support.first_violation_step == 30
    assert not rep.all_ok


def test_audit_off_support_checked_only_up_to_t2():
    sig = audit_signal()
    # crossing at step 20; the step-30 spill happens after t2
    recs = [
        mk(0, rel_bregman=1.0),
        mk(10, rel_bregman=1.0),
        mk(20, rel_bregman=1e-6),
        mk(30, rel_bregman=1e-6, off=10.0),
    ]
    rep = audit_theorem_invariants(recs, sig, m=1000, delta=0.01)
    assert rep.off_support.ok


def test_audit_norm_window_entry_and_violation():
    sig = audit_signal()  # n=100, m=1000: lower edge 1/3 - 3 sqrt(log(100)/1000) > 0
    lo = 1.0 / 3.0 - 3.0 * math.sqrt(math.log(100) / 1000)
    assert lo > 0
    recs = [
        mk(0, norm_sq=0.5 * lo),  # not yet entered: ignored
        mk(10, norm_sq=0.5),  # entry
        mk(20, norm_sq=3.0),  # above 2: violation
        mk(30, norm_sq=0.5),
    ]
    rep = audit_theorem_invariants(recs, sig, m=1000, delta=0.01)
    assert not rep.norm_window.ok
    assert rep.norm_window.first_violation_step == 20


def test_audit_norm_window_never_entered():
    sig = audit_signal()
    recs = [mk(0, norm_sq=1e-6), mk(10, norm_sq=1e-6)]
    rep = audit_theorem_invariants(recs, sig, m=1000, delta=0.01)
    assert not rep.norm_window.ok
    assert rep.norm_window.first_violation_step is None


def test_audit_alignment_violation_localized():
    sig = audit_signal()
    recs = [mk(0), mk(10, inner=-1.0), mk(20)]
    rep = audit_theorem_invariants(recs, sig, m=1000, delta=0.01)
    assert not rep.alignment.ok
    assert rep.alignment.first_violation_step == 10
    # rounding-scale negatives are tolerated
    recs = [mk(0), mk(10, inner=-1e-12)]
    assert audit_theorem_invariants(recs, sig, m=1000, delta=0.01).alignment.ok


def test_audit_trajectory_at_signal_passes():
    sig = generate_signal(100, 3, seed=21)
    meas = generate_measurements(sig, 1000, seed=22)
    hyp = HypentropyMap(1e-10)
    r = record(
        SolverState(x=sig.values.copy(), step_index=0, algo_time=0.0), sig, meas, hyp
    )
    rep = audit_theorem_invariants([r], sig, m=1000, delta=0.01)
    assert rep.all_ok


def test_desk_run_stage_structure_and_audits():
    sig, meas, recs, final = desk_run()
    assert all(r.risk >= 0 and r.rel_dist >= 0 and r.rel_bregman >= 0 for r in recs)
    assert all(r.off_support_l1 >= 0 and r.min_support_ratio >= 0 for r in recs)
    # this desk instance converges fast, so the crossing threshold must
    # sit well below the warm-up exit level for the window to span
    # several records
    rep = detect_stages(recs, delta=1e-6)
    assert rep.t1_step is not None and rep.t2_step is not None
    assert rep.t1_step <= rep.t2_step
    assert rep.linear_rate is not None and rep.linear_rate < 0
    assert rep.final_rel_dist <= 1e-3
    # the divergence decays essentially monotonically through the
    # linear stage
    window = [r for r in recs if rep.t1_step <= r.step_index <= rep.t2_step]
    assert len(window) >= 10
    for a, b in zip(window, window[1:]):
        assert b.rel_bregman <= a.rel_bregman * 1.01
    audit = audit_theorem_invariants(recs, sig, m=400, delta=0.01)
    assert audit.all_ok


def test_sign_consistency_on_desk_run():
    sig, meas, recs, final = desk_run(max_steps=800, record_every=50)
    assert sign_consistency([final.x], sig) == (1, 1) or sign_consistency([final.x], sig)[0]
    flipped = SparseSignal.from_values(-sig.values)
    ok, xi = sign_consistency([final.x], flipped)
    assert ok and xi == -1


def test_sign_consistency_rejects_mixed_signs():
    sig = SparseSignal.from_values(np.array([1.0, 0.0]))
    snaps = [np.array([1.0, 0.0]), np.array([-1.0, 0.0])]
    ok, xi = sign_consistency(snaps, sig)
    assert xi == -1 and not ok
    with pytest.raises(ValueError):
        sign_consistency([], sig)
