import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from scenarios import harmless_cells, plan_of, saturation_pair_config
from seusim.campaign_harness import (ExperimentRecord, _goldrun_cached, Interacting, Single, attribute_root_cause, bootstrap_ci,
                                     compare_policies, compare_records, experiment_seeds, latency_class,
                                     measure_latency, run_campaign, run_experiment, run_goldrun, wilson_interval)
from seusim.config import (BlindFullConfig, CampaignConfig, ExperimentConfig, FaultConfig, NoScrubConfig,
                           ReadbackCompareConfig, derive_seed)
from seusim.dut_cruise import Element

BASE = ExperimentConfig(seed=11)


def test_goldrun_is_deterministic_and_cached():
    a = run_goldrun(BASE)
    assert a is run_goldrun(BASE.model_copy(update={"seed": 99}))
    fresh = _goldrun_cached.__wrapped__(ExperimentConfig(duration=BASE.duration).model_dump_json())
    assert np.array_equal(a.measured, fresh.measured)


def test_empty_plan_no_failure():
    rec = run_experiment(BASE.model_copy(update={"faults": FaultConfig(count=0)}))
    assert rec.outcome == "NoFailure" and rec.root_cause is None and rec.replays == 0
    assert rec.trace_digest == run_experiment(BASE.model_copy(update={"faults": FaultConfig(count=0)})).trace_digest


def test_kp_bit31_single_cause():
    plan = plan_of(BASE, [(1000, Element.KP_BIT, 31)])
    rec = run_experiment(BASE, plan=plan)
    assert rec.failed and rec.first_divergence <= 1500
    assert rec.cause() == Single(0)
    assert rec.latency[0]["latency"] == rec.first_divergence - 1000


def test_root_cause_uses_n_isolation_replays():
    faults = [(500 + 300 * i, cell) for i, cell in enumerate(harmless_cells(BASE, 8))]
    faults += [(4000, Element.KP_BIT, 31), (4500, Element.OUT_FORCE, 30)]
    rec = run_experiment(BASE, plan=plan_of(BASE, faults))
    assert rec.failed and len(rec.applied) == 10
    assert rec.replays == 10
    # both late faults fail on their own: the earlier-applied one wins
    assert rec.cause() == Single(8)


def test_interacting_pair():
    cfg = saturation_pair_config()
    plan = plan_of(cfg, [(1000, Element.KP_BIT, 13), (2000, Element.KP_BIT, 14)])
    for ids in ([0], [1]):
        assert not run_experiment(cfg, plan=plan.subset(ids)).failed
    rec = run_experiment(cfg, plan=plan)
    assert rec.cause() == Interacting((0, 1))
    assert rec.replays == 3  # two isolations, one pair
    assert rec.latency[0]["latency"] == rec.first_divergence - 2000


def test_root_cause_requires_failure():
    rec = run_experiment(BASE.model_copy(update={"faults": FaultConfig(count=0)}))
    with pytest.raises(ValueError):
        attribute_root_cause(rec, BASE)


def test_latency_class_boundary():
    assert latency_class(3000, 3000) == "Low"
    assert latency_class(3001, 3000) == "High"
    plan = plan_of(BASE, [(1000, Element.KP_BIT, 31)])
    rec = run_experiment(BASE, plan=plan)
    lat = rec.latency[0]["latency"]
    assert measure_latency(rec, threshold=lat)[0]["class"] == "Low"
    assert measure_latency(rec, threshold=lat - 1)[0]["class"] == "High"


def test_out_force_high_bit_is_low_latency():
    rec = run_experiment(BASE, plan=plan_of(BASE, [(1000, Element.OUT_FORCE, 30)]))
    assert rec.failed and rec.latency[0]["class"] == "Low" and rec.latency[0]["latency"] <= 2


def test_err_path_stuck_low_latency():
    """Diverges at the next setpoint edge at the latest, hence within one half period."""
    rec = run_experiment(BASE, plan=plan_of(BASE, [(1000, Element.ERR_PATH_STUCK_LOW, 0)]))
    assert rec.failed
    assert rec.latency[0]["latency"] <= BASE.workload.half_period
    assert rec.latency[0]["class"] == "Low"


def test_paired_runs_are_deterministic():
    a = run_experiment(BASE)
    b = run_experiment(BASE)
    assert a.to_json() == b.to_json()
    assert ExperimentRecord.from_json(a.to_json()).comparable() == a.comparable()


def test_policies_share_the_fault_plan():
    recs = [run_experiment(BASE.model_copy(update={"policy": p}), root_cause=False)
            for p in (NoScrubConfig(), BlindFullConfig(period=100))]
    strip = lambda r: [{k: a[k] for k in ("id", "trigger_time", "cells")} for a in r.applied]  # noqa: E731
    assert strip(recs[0]) == strip(recs[1])


def test_compare_records_rejects_mismatched_seeds():
    a = [run_experiment(BASE.model_copy(update={"seed": s}), root_cause=False) for s in (1, 2)]
    b = [run_experiment(BASE.model_copy(update={"seed": s, "policy": BlindFullConfig()}), root_cause=False)
         for s in (1, 3)]
    with pytest.raises(ValueError):
        compare_records({"NoScrub": a, "Blind": b})


def test_blind_full_bounds_latent_residence():
    cfg = BASE.model_copy(update={"policy": BlindFullConfig(period=100), "faults": FaultConfig(count=100)})
    res = [r for seed in range(5)
           for r in run_experiment(cfg.model_copy(update={"seed": seed}), root_cause=False).scrub["residences"]]
    assert len(res) > 20
    assert max(res) < 100 + cfg.device.frame_count


def test_blind_full_never_worse_paired():
    table = compare_policies(BASE, [NoScrubConfig(), BlindFullConfig(period=100)], range(20))
    none, blind = table["records"].values()
    for a, b in zip(none, blind):
        assert b.failed <= a.failed


def test_readback_writes_only_dirty_frames():
    rec = run_experiment(BASE.model_copy(update={"policy": ReadbackCompareConfig(period=500)}), root_cause=False)
    # every fault dirties at most one frame and each gets written back once
    assert rec.scrub["frames_written"] <= len(rec.applied)


def test_wilson_interval_reference_values():
    lo, hi = wilson_interval(284, 1000)
    assert lo == pytest.approx(0.2569, abs=1e-4) and hi == pytest.approx(0.3128, abs=1e-4)
    assert wilson_interval(0, 10)[0] == 0.0
    assert wilson_interval(0, 0) == (0.0, 1.0)


def test_bootstrap_ci():
    lo, hi = bootstrap_ci(np.zeros(50))
    assert lo == hi == 0.0
    x = np.random.default_rng(0).normal(3.0, 1.0, 400)
    lo, hi = bootstrap_ci(x)
    assert lo < 3.0 < hi and hi - lo == pytest.approx(2 * 1.96 / 20, rel=0.2)
    assert bootstrap_ci(x) == (lo, hi)


def test_experiment_seeds():
    seeds = experiment_seeds(5, 3)
    assert seeds == [derive_seed(5, f"experiment/{i}") for i in range(3)]
    assert len(set(experiment_seeds(5, 500))) == 500


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**40))
def test_root_cause_iff_failure(seed):
    rec = run_experiment(BASE.model_copy(update={"seed": seed, "duration": 12_000}))
    assert (rec.root_cause is not None) == rec.failed
    assert bool(rec.latency) == rec.failed
    if rec.failed:
        ids = rec.root_cause["ids"]
        assert set(ids) <= {a["id"] for a in rec.applied}


def test_workers_match_serial():
    camp = CampaignConfig(root_seed=3, size=6, policies=(NoScrubConfig(), BlindFullConfig()),
                          experiment=ExperimentConfig(duration=12_000))
    serial = run_campaign(camp)
    parallel = run_campaign(camp.model_copy(update={"workers": 2}))
    for label in serial:
        assert [r.to_json() for r in serial[label]] == [r.to_json() for r in parallel[label]]
