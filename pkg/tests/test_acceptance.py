"""One test per acceptance criterion; each records a PASS/FAIL line for the terminal summary."""
import itertools
import time

import numpy as np
from click.testing import CliRunner

from conftest import ACCEPTANCE
from scenarios import plan_of, saturation_pair_config
from seusim.campaign_harness import (_Context, compare_records, fault_plan, golden_image, run_campaign,
                                     run_experiment, run_goldrun, wilson_interval)
from seusim.cli_io import aggregate_csv, file_header, main
from seusim.config import (BlindFullConfig, BlindPartialConfig, CampaignConfig, ExperimentConfig, FaultConfig,
                           FpScrubPolicyConfig, NoScrubConfig, SensitivityConfig)
from seusim.config_memory import (ConfigMemory, Corrected, DetectedUncorrectable, EccLayout, build_memory,
                                  ecc_decode_frame, ecc_encode_frame)
from seusim.dut_cruise import Element, from_q, reference_simulate
from seusim.fault_injection import FaultKind, RegionOfInterest, generate_plan, kind_counts, resolve_mbe_cells
from seusim.scrubbing import Budgeted, PortCostModel, ReadbackCompare, apply_action, scrub_log_csv

REFERENCE_SHAPE = CampaignConfig(root_seed=1, size=1000)


def report(n, title, ok, detail, started):
    ACCEPTANCE.append(f"{'PASS' if ok else 'FAIL'}  #{n} {title}: {detail} [{time.perf_counter() - started:.1f}s]")
    assert ok, detail


def _encoded(rng, layout):
    return ecc_encode_frame(rng.integers(0, 2, layout.payload_bits, dtype=np.uint8), layout)


def test_1_ecc_soundness():
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    bad = 0
    small = EccLayout(32)
    for _ in range(256):
        frame = _encoded(rng, small)
        for k in range(32):
            frame[k] ^= 1
            bad += ecc_decode_frame(frame, small) != Corrected(k)
            frame[k] ^= 1
    for _ in range(32):
        frame = _encoded(rng, small)
        for i, j in itertools.combinations(range(32), 2):
            frame[[i, j]] ^= 1
            bad += not isinstance(ecc_decode_frame(frame, small), DetectedUncorrectable)
            frame[[i, j]] ^= 1
    large = EccLayout(1312)
    frame = _encoded(rng, large)
    for _ in range(10_000):
        k = int(rng.integers(1312))
        frame[k] ^= 1
        bad += ecc_decode_frame(frame, large) != Corrected(k)
        frame[k] ^= 1
    for _ in range(10_000):
        i, j = rng.choice(1312, 2, replace=False)
        frame[[i, j]] ^= 1
        bad += not isinstance(ecc_decode_frame(frame, large), DetectedUncorrectable)
        frame[[i, j]] ^= 1
    elapsed = time.perf_counter() - t0
    report(1, "ECC soundness", bad == 0 and elapsed < 10, f"{bad} violations, {elapsed:.1f}s (limit 10s)", t0)


def test_2_fault_statistics():
    t0 = time.perf_counter()
    roi = RegionOfInterest(0, 64, 0, 1312)
    plan = generate_plan(2024, 100_000, roi, 10**7, {FaultKind.SBE: 20, FaultKind.MBE: 1})
    sbe = kind_counts(plan.events)[FaultKind.SBE] / 100_000
    grid = RegionOfInterest(0, 16, 0, 16)
    mismatches = 0
    for radius, cf, cb in itertools.product(range(1, 5), range(16), range(16)):
        oracle = {(f, b) for f in range(16) for b in range(16) if (f - cf) ** 2 + (b - cb) ** 2 <= radius ** 2}
        mismatches += resolve_mbe_cells((cf, cb), radius, grid) != oracle
    elapsed = time.perf_counter() - t0
    ok = abs(sbe - 20 / 21) <= 0.01 and mismatches == 0 and elapsed < 5
    report(2, "fault-model statistics", ok,
           f"SBE fraction {sbe:.4f} vs {20 / 21:.4f}, {mismatches} MBE mismatches, {elapsed:.1f}s (limit 5s)", t0)


def test_3_campaign_shape():
    t0 = time.perf_counter()
    first = run_campaign(REFERENCE_SHAPE)
    second = run_campaign(REFERENCE_SHAPE)
    header = file_header(REFERENCE_SHAPE.root_seed, REFERENCE_SHAPE.fingerprint())
    deterministic = aggregate_csv(first, header) == aggregate_csv(second, header)
    records = first["NoScrub"]
    k = sum(r.failed for r in records)
    lo, hi = wilson_interval(k, len(records))
    causes = [r.root_cause["type"] for r in records if r.failed]
    part_a = deterministic and k > 0

    # (b) nested maps with a growing sensitive share
    fractions = {0.0: (0.4, 0.6, 0.0), 0.1: (0.4, 0.5, 0.1), 0.5: (0.2, 0.3, 0.5), 1.0: (0.0, 0.0, 1.0)}
    failures = {}
    for share, (u, n, s) in fractions.items():
        exp = REFERENCE_SHAPE.experiment.model_copy(
            update={"sensitivity": SensitivityConfig(unused=u, non_sensitive=n, sensitive=s)})
        camp = REFERENCE_SHAPE.model_copy(update={"size": 200, "experiment": exp, "root_cause": False})
        failures[share] = sum(r.failed for r in run_campaign(camp)["NoScrub"])
    counts = [failures[s] for s in sorted(failures)]
    part_b = failures[0.0] == 0 and all(a <= b for a, b in zip(counts, counts[1:]))

    # (c) constructed interacting pair and isolated replays of single causes
    cfg = saturation_pair_config()
    pair = run_experiment(cfg, plan=plan_of(cfg, [(1000, Element.KP_BIT, 13), (2000, Element.KP_BIT, 14)]))
    reproduced = singles = 0
    for r in records:
        if r.failed and r.root_cause["type"] == "Single":
            singles += 1
            ctx = _Context(ExperimentConfig.model_validate(r.config))
            res = ctx.execute(ctx.plan().subset(r.root_cause["ids"]), stop_on_divergence=True)
            reproduced += res.first_divergence is not None
    part_c = pair.root_cause["type"] == "Interacting" and reproduced == singles

    elapsed = time.perf_counter() - t0
    ok = part_a and part_b and part_c and elapsed < 300
    detail = (f"(a) {k}/1000 failures, 95% CI [{lo:.3f}, {hi:.3f}], deterministic={deterministic}, "
              f"{causes.count('Single')} single / {causes.count('Interacting')} interacting; "
              f"(b) failures at 0/10/50/100% sensitive = {counts} of 200; "
              f"(c) pair -> {pair.root_cause['type']}, {reproduced}/{singles} single causes reproduced; "
              f"{elapsed:.0f}s (limit 300s)")
    report(3, "campaign shape", ok, detail, t0)


def _readback_write_violations(cfg):
    """Drive ReadbackCompare against the experiment's fault plan and compare writes with dirt."""
    mem = ConfigMemory(golden_image(cfg))
    policy, cost = ReadbackCompare(100), PortCostModel()
    events = list(fault_plan(cfg).events)
    violations = actions = 0
    for t in range(100, cfg.duration, 100):
        while events and events[0].trigger_time <= t:
            mem.flip_bits(events.pop(0).cells, now=t)
        dirty = set(mem.dirty_frames())
        written = set()
        for action in policy.decide(mem, t, 1, cost):
            actions += 1
            if action.writes:
                written.update(action.frames)
            apply_action(mem, action)
        violations += written != dirty
    return violations, actions


def test_4_scrub_dominance():
    t0 = time.perf_counter()
    exp = REFERENCE_SHAPE.experiment
    camp = CampaignConfig(root_seed=4, size=200, policies=(NoScrubConfig(), BlindFullConfig(period=100)),
                          experiment=exp, root_cause=False)
    none, blind = run_campaign(camp).values()
    worse = sum(b.failed > a.failed for a, b in zip(none, blind))
    res = [x for r in blind for x in r.scrub["residences"]]
    bound = 100 + exp.device.frame_count * exp.port_cost.t_frame_write
    mean_res = float(np.mean(res))
    violations = actions = 0
    for r in none:
        v, a = _readback_write_violations(ExperimentConfig.model_validate(r.config))
        violations += v
        actions += a
    ok = worse == 0 and mean_res < bound and violations == 0
    detail = (f"{worse}/200 pairings where blind full is worse "
              f"(failures {sum(r.failed for r in none)} -> {sum(r.failed for r in blind)}); "
              f"mean latent residence {mean_res:.1f} < {bound}; "
              f"{violations} write-minimality violations over {actions} actions")
    report(4, "scrub-policy dominance", ok, detail, t0)


def _fp_vs_partial(profile, size=200):
    exp = ExperimentConfig(faults=FaultConfig(mode="poisson"))
    exp = exp.model_copy(update={"environment": exp.environment.model_copy(update={"profile": profile})})
    camp = CampaignConfig(root_seed=5, size=size, experiment=exp, root_cause=False,
                          policies=(BlindPartialConfig(period=100), FpScrubPolicyConfig()))
    return compare_records(run_campaign(camp))


def test_5_fpscrub_claims():
    t0 = time.perf_counter()
    benign = _fp_vs_partial("benign")
    base, fp = benign["rows"]
    diff = benign["paired"][0]
    ratio = fp["energy_total"] / base["energy_total"]
    benign_ok = ratio <= 0.25 and diff["failure_diff_ci_lo"] <= 0 <= diff["failure_diff_ci_hi"]

    harsh = _fp_vs_partial("harsh")
    hbase, hfp = harsh["rows"]
    hdiff = harsh["paired"][0]
    harsh_ok = hdiff["failure_diff_ci_lo"] <= 0 <= hdiff["failure_diff_ci_hi"]

    identical = 0
    for seed in range(20):
        base_cfg = ExperimentConfig(seed=seed, faults=FaultConfig(mode="poisson"))
        logs = []
        for policy in (FpScrubPolicyConfig(theta_low=0.0, theta_high=0.0, io_monitor=False),
                       BlindPartialConfig(period=100)):
            rec = run_experiment(base_cfg.model_copy(update={"policy": policy}), root_cause=False, keep_trace=True)
            logs.append(scrub_log_csv(rec._result.actions, "x"))
        identical += logs[0] == logs[1]
    ok = benign_ok and harsh_ok and identical == 20
    detail = (f"benign energy ratio {ratio:.3f} (limit 0.25), failures {base['failures']} -> {fp['failures']}, "
              f"paired diff CI [{diff['failure_diff_ci_lo']:+.3f}, {diff['failure_diff_ci_hi']:+.3f}]; "
              f"harsh failures {hbase['failures']} -> {hfp['failures']}, "
              f"paired diff CI [{hdiff['failure_diff_ci_lo']:+.3f}, {hdiff['failure_diff_ci_hi']:+.3f}]; "
              f"fallback logs identical {identical}/20")
    report(5, "fpScrub claims", ok, detail, t0)


def test_6_budgeted_recovery():
    t0 = time.perf_counter()
    mem = build_memory(64, 1312)
    rng = np.random.default_rng(6)
    for age, frame in enumerate(rng.choice(64, 10, replace=False)):
        mem.flip_bits({(int(frame), int(rng.integers(1312)))}, now=age)
    policy, cost = Budgeted(window=10, k_max=3), PortCostModel()
    counts = []
    for w in range(1, 5):
        for action in policy.decide(mem, 10 * w, 9, cost):
            apply_action(mem, action)
        counts.append(len(mem.dirty_frames()))
    golden = bool(np.array_equal(mem.live, mem.golden))
    report(6, "budgeted recovery", counts == [7, 4, 1, 0] and golden,
           f"dirty counts {counts}, memory equals golden: {golden}", t0)


def test_7_end_to_end_determinism(tmp_path):
    t0 = time.perf_counter()
    config = tmp_path / "c.yaml"
    config.write_text("size: 100\nroot_seed: 77\n")
    runner = CliRunner()
    for name in ("a", "b"):
        result = runner.invoke(main, ["run", str(config), "--out", str(tmp_path / name)])
        assert result.exit_code == 0, result.output
    same = (tmp_path / "a" / "aggregate.csv").read_bytes() == (tmp_path / "b" / "aggregate.csv").read_bytes()
    replay = runner.invoke(main, ["replay", str(tmp_path / "a"), "--sample", "100"])
    verified = "verified 100/100 records" in replay.output and replay.exit_code == 0
    report(7, "end-to-end determinism", same and verified,
           f"aggregate byte-identical: {same}; replay: {replay.output.strip().splitlines()[-1]}", t0)


def test_8_fixed_point_fidelity():
    t0 = time.perf_counter()
    cfg = ExperimentConfig()
    gold = run_goldrun(cfg)
    ctx = _Context(cfg)
    ref = reference_simulate(ctx.params, ctx.plant, gold.setpoint)
    err = float(np.max(np.abs(from_q(gold.measured) - ref)))
    report(8, "fixed-point fidelity", err < 2**-10, f"max |fixed - double| = {err:.2e} over 42000 ticks "
           f"(limit {2**-10:.2e})", t0)
