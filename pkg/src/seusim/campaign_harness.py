"""Experiment management and result analysis.

``run_experiment`` advances one experiment event by event. Between events
(fault arrivals, scrub writes that land on dirty frames, policy wake-ups and
sensor samples) the controller runs in the compiled kernel with a fixed
corruption set. Per tick the order is: policy decision, scrub writes, fault
arrivals, controller step. A fault arriving on the tick its frame is written
therefore survives the write.
"""
from __future__ import annotations

import functools
import hashlib
import heapq
import itertools
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from typing import Callable, Iterable, NamedTuple, Optional, Sequence

import numpy as np

from .config import (BlindFullConfig, BlindPartialConfig, BudgetedConfig, CampaignConfig,
                     ExperimentConfig, FpScrubPolicyConfig, NoScrubConfig, ReadbackCompareConfig,
                     SecDedConfig, derive_seed)
from .config_memory import ConfigMemory, load_image, random_golden_image
from .dut_cruise import (EffectiveDut, MapLayout, PidParams, PlantModel, SensitivityMap,
                         SquareWave, Trace, apply_corruptions, build_default_map, simulate,
                         simulate_segment, to_q)
from .environment_sensors import Burst, EnvironmentTrace, Profile, generate_trace
from .fault_injection import FaultKind, FaultPlan, Injector, RegionOfInterest, generate_plan, poisson_arrival_plan
from .fpscrub_predictor import FpScrub, FpScrubConfig, IoBounds
from .scrubbing import (Budgeted, PeriodicBlindFull, PeriodicBlindPartial, PortCostModel, ReadbackCompare,
                        ScrubPolicy, SecDedRepair)

SCHEMA_VERSION = 1
ENERGY_BIN = 1000
BOOTSTRAP_RESAMPLES = 1000
BOOTSTRAP_SEED = 20240229
MAX_SUBSET = 3


# --------------------------------------------------------------------------
# Building the pieces of one experiment
# --------------------------------------------------------------------------

def dut_params(cfg: ExperimentConfig) -> tuple[PidParams, PlantModel]:
    d = cfg.dut
    return (PidParams.from_float(d.kp, d.ki, d.kd, d.u_min, d.u_max, d.loop_period),
            PlantModel.from_float(d.plant_a, d.plant_b))


def workload_setpoints(cfg: ExperimentConfig) -> np.ndarray:
    w = cfg.workload
    return SquareWave(w.low_setpoint, w.high_setpoint, w.half_period).setpoints(cfg.duration)


@functools.lru_cache(maxsize=16)
def _golden_cached(design_seed: int, device_json: str) -> np.ndarray:
    dev = json.loads(device_json)
    if dev["golden_file"]:
        return load_image(dev["golden_file"], dev["frame_count"], dev["frame_size"])
    if dev["golden"] == "zeros":
        return np.zeros((dev["frame_count"], dev["frame_size"]), dtype=np.uint8)
    return random_golden_image(dev["frame_count"], dev["frame_size"], derive_seed(design_seed, "golden"))


@functools.lru_cache(maxsize=16)
def _map_cached(design_seed: int, device_json: str, sens_json: str) -> SensitivityMap:
    dev, sens = json.loads(device_json), json.loads(sens_json)
    layout = MapLayout(dev["rp_frame_lo"], dev["rp_frame_hi"], dev["frame_size"])
    fractions = (sens["unused"], sens["non_sensitive"], sens["sensitive"])
    return build_default_map(derive_seed(design_seed, "sensitivity"), layout, fractions, sens["element_weights"])


def _dump(model) -> str:
    return json.dumps(model.model_dump(mode="json"), sort_keys=True)


def golden_image(cfg: ExperimentConfig) -> np.ndarray:
    return _golden_cached(cfg.design_seed, _dump(cfg.device))


def sensitivity_map(cfg: ExperimentConfig) -> SensitivityMap:
    return _map_cached(cfg.design_seed, _dump(cfg.device), _dump(cfg.sensitivity))


def region_of_interest(cfg: ExperimentConfig) -> RegionOfInterest:
    f, dev = cfg.faults, cfg.device
    roi = RegionOfInterest(dev.rp_frame_lo if f.roi_frame_lo is None else f.roi_frame_lo,
                           dev.rp_frame_hi if f.roi_frame_hi is None else f.roi_frame_hi,
                           f.roi_bit_lo, dev.frame_size if f.roi_bit_hi is None else f.roi_bit_hi)
    roi.check_within(dev.frame_count, dev.frame_size)
    return roi


def environment_trace(cfg: ExperimentConfig) -> EnvironmentTrace:
    env = cfg.environment
    profile = Profile(env.profile, tuple(Burst(b.start, b.end, b.multiplier) for b in env.bursts),
                      temp_per_flux=env.temp_per_flux)
    return generate_trace(derive_seed(cfg.seed, "environment"), cfg.duration, env.cadence, profile)


def fault_plan(cfg: ExperimentConfig, trace: Optional[EnvironmentTrace] = None) -> FaultPlan:
    f = cfg.faults
    weights = {FaultKind.SBE: f.sbe_weight, FaultKind.DOUBLE_ADJACENT: f.double_adjacent_weight,
               FaultKind.MBE: f.mbe_weight}
    seed = derive_seed(cfg.seed, "faults")
    roi = region_of_interest(cfg)
    if f.mode == "fixed":
        return generate_plan(seed, f.count, roi, cfg.duration, weights, f.mbe_radius_max)
    trace = trace if trace is not None else environment_trace(cfg)
    return poisson_arrival_plan(seed, f.base_rate, trace, roi, cfg.duration, kind_weights=weights,
                                mbe_radius_max=f.mbe_radius_max)


def io_bounds(cfg: ExperimentConfig) -> IoBounds:
    w, d = cfg.workload, cfg.dut
    lo, hi = sorted((w.low_setpoint, w.high_setpoint))
    return IoBounds(to_q(lo), to_q(hi), to_q(d.u_min), to_q(d.u_max))


def make_policy(cfg: ExperimentConfig, trace: Optional[EnvironmentTrace] = None) -> ScrubPolicy:
    p, dev = cfg.policy, cfg.device
    if isinstance(p, NoScrubConfig):
        return ScrubPolicy()
    if isinstance(p, BlindFullConfig):
        return PeriodicBlindFull(p.period)
    if isinstance(p, BlindPartialConfig):
        return PeriodicBlindPartial(p.period, p.frames or dev.rp_frames)
    if isinstance(p, ReadbackCompareConfig):
        return ReadbackCompare(p.period, p.frames)
    if isinstance(p, SecDedConfig):
        return SecDedRepair(p.scan_period, p.frames)
    if isinstance(p, BudgetedConfig):
        return Budgeted(p.window, p.k_max)
    if isinstance(p, FpScrubPolicyConfig):
        fp = FpScrubConfig(p.w_f, p.w_t, p.w_v, p.alpha, p.p_min, p.p_max, p.theta_low, p.theta_high,
                           p.t_base, p.t_span, cooldown=p.cooldown,
                           io_bounds=io_bounds(cfg) if p.io_monitor else None)
        return FpScrub(fp, dev.rp_frames, trace if trace is not None else environment_trace(cfg))
    raise TypeError(f"unknown policy config {p!r}")


def policy_label(p) -> str:
    if isinstance(p, NoScrubConfig):
        return "NoScrub"
    if isinstance(p, BlindFullConfig):
        return f"PeriodicBlindFull({p.period})"
    if isinstance(p, BlindPartialConfig):
        return f"PeriodicBlindPartial({p.period})"
    if isinstance(p, ReadbackCompareConfig):
        return f"ReadbackCompare({p.period})"
    if isinstance(p, SecDedConfig):
        return f"SecDedRepair({p.scan_period})"
    if isinstance(p, BudgetedConfig):
        return f"Budgeted({p.window},{p.k_max})"
    return "FpScrub" if p.theta_high > 0 or p.theta_low > 0 else "FpScrub(fallback)"


def _needs_trace(cfg: ExperimentConfig) -> bool:
    return cfg.faults.mode == "poisson" or isinstance(cfg.policy, FpScrubPolicyConfig)


@functools.lru_cache(maxsize=8)
def _goldrun_cached(key: str) -> Trace:
    cfg = ExperimentConfig.model_validate_json(key)
    params, plant = dut_params(cfg)
    return simulate(params, plant, workload_setpoints(cfg))


def run_goldrun(cfg: ExperimentConfig) -> Trace:
    """Fault-free, scrub-free reference trace (cached per DUT/workload/duration)."""
    key = ExperimentConfig(duration=cfg.duration, workload=cfg.workload, dut=cfg.dut).model_dump_json()
    return _goldrun_cached(key)


# --------------------------------------------------------------------------
# Event loop
# --------------------------------------------------------------------------

@dataclass
class RunResult:
    trace: Trace
    first_divergence: Optional[int]
    applied: list
    actions: list
    residences: list
    decisions: list
    uncorrectable: int
    stopped_early: bool = False


class _Context:
    """Everything about an experiment that does not depend on the fault subset."""

    def __init__(self, cfg: ExperimentConfig, smap: Optional[SensitivityMap] = None):
        self.cfg = cfg
        self.params, self.plant = dut_params(cfg)
        self.setpoints = workload_setpoints(cfg)
        self.golden = golden_image(cfg)
        self.smap = smap if smap is not None else sensitivity_map(cfg)
        self.trace = environment_trace(cfg) if _needs_trace(cfg) else None
        self.cost = PortCostModel(**cfg.port_cost.model_dump())
        self.gold = run_goldrun(cfg)
        self.bounds = io_bounds(cfg)

    def idle_window(self) -> int:
        p = self.cfg.policy
        window = p.window if isinstance(p, BudgetedConfig) else self.params.loop_period
        return int(window * (1.0 - self.cfg.compute_fraction))

    def plan(self) -> FaultPlan:
        return fault_plan(self.cfg, self.trace)

    def execute(self, plan: FaultPlan, stop_on_divergence: bool = False) -> RunResult:
        return _execute(self, plan, stop_on_divergence)


def _execute(ctx: _Context, plan: FaultPlan, stop_on_divergence: bool) -> RunResult:
    n = ctx.cfg.duration
    mem = ConfigMemory(ctx.golden)
    injector = Injector(plan)
    policy = make_policy(ctx.cfg, ctx.trace)
    smap, params, cost = ctx.smap, ctx.params, ctx.cost
    idle_window = ctx.idle_window()
    gold = ctx.gold.measured
    b = ctx.bounds

    measured = np.zeros(n, dtype=np.int64)
    actuation = np.zeros(n, dtype=np.int64)
    state = np.zeros(4, dtype=np.int64)
    eff = EffectiveDut.nominal(params).as_array()

    port_free = 0
    writes: list = []          # heap of (tick, seq, frame, position or -1)
    watch: dict = {}           # frame -> ticks of pending blind writes (lazy scheduling)
    seq = itertools.count()
    actions: list = []
    sens_since: dict = {}      # sensitive dirty cell -> tick it became dirty
    residences: list = []
    first_div: Optional[int] = None

    def schedule(action):
        for tick, frame in action.write_ticks(cost):
            if action.position is not None:
                heapq.heappush(writes, (tick, next(seq), frame, action.position))
            elif mem.is_dirty(frame):
                heapq.heappush(writes, (tick, next(seq), frame, -1))
            else:
                watch.setdefault(frame, []).append(tick)

    def cleared(cells, now):
        for cell in cells:
            since = sens_since.pop(cell, None)
            if since is not None:
                residences.append(now - since)

    t = 0
    while t < n:
        changed = False
        wake = policy.next_wakeup(t)
        if wake is not None and wake <= t and port_free <= t:
            for action in policy.decide(mem, t, idle_window, cost):
                actions.append(action)
                schedule(action)
                port_free = max(port_free, action.end)
        while writes and writes[0][0] <= t:
            _, _, frame, position = heapq.heappop(writes)
            if position >= 0:
                was = (frame, position) in sens_since
                mem.flip_back(frame, position)
                cell = (frame, position)
                if was:
                    cleared([cell], t)
                elif smap.is_sensitive(cell) and cell in mem.diff:
                    sens_since[cell] = t  # miscorrection
            else:
                cleared(mem.restore_frame(frame), t)
            changed = True
        for event in injector.inject_due(mem, t):
            for cell in event.cells:
                if smap.is_sensitive(cell):
                    if cell in mem.diff:
                        sens_since[cell] = t
                    else:
                        cleared([cell], t)
                pending = watch.get(cell[0])
                if pending:
                    later = [w for w in pending if w > t]
                    if later:
                        heapq.heappush(writes, (min(later), next(seq), cell[0], -1))
                    watch[cell[0]] = later
            changed = True
        if changed:
            eff = apply_corruptions(smap, sens_since.keys(), params).as_array()

        nxt = n
        if injector.next_time is not None:
            nxt = min(nxt, injector.next_time)
        if writes:
            nxt = min(nxt, writes[0][0])
        wake = policy.next_wakeup(t + 1)
        if wake is not None:
            nxt = min(nxt, max(wake, port_free))
        nxt = max(nxt, t + 1)

        io_on = policy.io_armed(t)
        stop = simulate_segment(state, eff, ctx.plant.a, ctx.plant.b, ctx.setpoints, t, nxt,
                                params.loop_period, measured, actuation, io_on,
                                b.in_lo, b.in_hi, b.out_lo, b.out_hi)
        if io_on and stop < nxt or (io_on and stop == nxt and _violates(actuation[stop - 1], ctx.setpoints[stop - 1], b)):
            policy.on_io_violation(stop - 1)
        if first_div is None:
            mismatch = np.flatnonzero(measured[t:stop] != gold[t:stop])
            if mismatch.size:
                first_div = t + int(mismatch[0])
                if stop_on_divergence:
                    t = stop
                    break
        t = stop

    cleared(list(sens_since), n)
    return RunResult(Trace(ctx.setpoints, measured, actuation), first_div, injector.applied, actions,
                     residences, list(getattr(policy, "decisions", [])),
                     len(getattr(policy, "uncorrectable", [])), stopped_early=t < n)


def _violates(u, sp, b: IoBounds) -> bool:
    return not (b.out_lo <= u <= b.out_hi and b.in_lo <= sp <= b.in_hi)


# --------------------------------------------------------------------------
# Records
# --------------------------------------------------------------------------

class Single(NamedTuple):
    id: int


class Interacting(NamedTuple):
    ids: tuple


@dataclass
class ExperimentRecord:
    fingerprint: str
    seed: int
    policy: str
    config: dict
    applied: list
    outcome: str
    first_divergence: Optional[int]
    root_cause: Optional[dict]
    latency: list
    replays: int
    scrub: dict
    energy_timeline: list
    trace_digest: str
    root_seed: Optional[int] = None
    campaign: Optional[str] = None
    index: Optional[int] = None
    derived: bool = False
    schema_version: int = SCHEMA_VERSION

    @property
    def failed(self) -> bool:
        return self.outcome == "Failure"

    def cause(self):
        if self.root_cause is None:
            return None
        ids = tuple(self.root_cause["ids"])
        return Single(ids[0]) if self.root_cause["type"] == "Single" else Interacting(ids)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentRecord":
        return cls(**json.loads(text))

    def comparable(self) -> dict:
        """Fields a replay must reproduce."""
        d = asdict(self)
        d.pop("derived")
        return d


def _trace_digest(trace: Trace) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(trace.measured, dtype="<i8").tobytes())
    h.update(np.ascontiguousarray(trace.actuation, dtype="<i8").tobytes())
    return h.hexdigest()[:32]


def _energy_timeline(actions, duration: int) -> list:
    bins = np.zeros(-(-duration // ENERGY_BIN))
    for a in actions:
        if a.issued_at < duration:
            bins[a.issued_at // ENERGY_BIN] += a.energy
    return [round(float(x), 6) for x in bins]


def _applied_json(applied, smap: SensitivityMap) -> list:
    out = []
    for event, tick in applied:
        out.append({
            "id": event.id, "kind": event.kind.value, "trigger_time": event.trigger_time,
            "applied_at": tick, "center": [event.center.frame, event.center.bit], "radius": event.radius,
            "cells": sorted([c[0], c[1]] for c in event.cells),
            "sensitive": sum(1 for c in event.cells if smap.is_sensitive(c)),
        })
    return out


def latency_class(latency: int, threshold: int) -> str:
    return "High" if latency > threshold else "Low"


def run_experiment(cfg: ExperimentConfig, root_cause: bool = True, keep_trace: bool = False,
                   smap: Optional[SensitivityMap] = None, plan: Optional[FaultPlan] = None,
                   **meta) -> ExperimentRecord:
    """Run one experiment; attributes the root cause of a failure by replays."""
    ctx = _Context(cfg, smap)
    plan = plan if plan is not None else ctx.plan()
    result = ctx.execute(plan)
    record = _build_record(ctx, result, **meta)
    if record.failed and root_cause:
        cause, replays = attribute_root_cause(record, cfg, _ctx=ctx, _plan=plan)
        record.root_cause = {"type": type(cause).__name__,
                             "ids": [cause.id] if isinstance(cause, Single) else list(cause.ids)}
        record.replays = replays
        record.latency = measure_latency(record, ctx.gold)
    if keep_trace:
        record._trace = result.trace  # type: ignore[attr-defined]
        record._result = result  # type: ignore[attr-defined]
    return record


def _build_record(ctx: _Context, result: RunResult, **meta) -> ExperimentRecord:
    actions = result.actions
    res = result.residences
    scrub = {
        "total_actions": len(actions),
        "port_busy_total": int(sum(a.port_busy for a in actions)),
        "energy_total": round(float(sum(a.energy for a in actions)), 6),
        "frames_written": int(sum(len(a.frames) for a in actions if a.writes)),
        "latent_residence": round(float(np.mean(res)), 6) if res else None,
        "residences": [int(r) for r in res],
        "uncorrectable": result.uncorrectable,
    }
    return ExperimentRecord(
        fingerprint=ctx.cfg.fingerprint(), seed=ctx.cfg.seed, policy=policy_label(ctx.cfg.policy),
        config=ctx.cfg.model_dump(mode="json"), applied=_applied_json(result.applied, ctx.smap),
        outcome="Failure" if result.first_divergence is not None else "NoFailure",
        first_divergence=result.first_divergence, root_cause=None, latency=[], replays=0,
        scrub=scrub, energy_timeline=_energy_timeline(actions, ctx.cfg.duration),
        trace_digest=_trace_digest(result.trace), **meta)


def attribute_root_cause(record: ExperimentRecord, cfg: ExperimentConfig, _ctx: Optional[_Context] = None,
                         _plan: Optional[FaultPlan] = None):
    """Isolation replays, then a bounded minimal-subset search.

    Returns ``(cause, replay_count)``.
    """
    if not record.failed:
        raise ValueError("root cause is only defined for failing experiments")
    ctx = _ctx or _Context(cfg)
    plan = _plan or ctx.plan()
    ids = [a["id"] for a in sorted(record.applied, key=lambda a: (a["applied_at"], a["id"]))]
    replays = 0

    def fails(subset) -> bool:
        nonlocal replays
        replays += 1
        return ctx.execute(plan.subset(subset), stop_on_divergence=True).first_divergence is not None

    singles = [i for i in ids if fails([i])]
    if singles:
        return Single(singles[0]), replays
    for size in range(2, min(MAX_SUBSET, len(ids)) + 1):
        for combo in itertools.combinations(ids, size):
            if fails(combo):
                return Interacting(tuple(combo)), replays
    return Interacting(tuple(ids)), replays


def measure_latency(record: ExperimentRecord, goldrun: Optional[Trace] = None,
                    threshold: Optional[int] = None) -> list:
    """Ticks from the causal fault (last-applied one for a subset) to first divergence."""
    if not record.failed or record.root_cause is None:
        return []
    cfg = record.config
    if threshold is None:
        threshold = cfg.get("latency_threshold")
        if threshold is None:
            threshold = cfg["workload"]["half_period"]
    applied = {a["id"]: a["applied_at"] for a in record.applied}
    ids = record.root_cause["ids"]
    at = max(applied[i] for i in ids)
    latency = record.first_divergence - at
    assert latency >= 0, "causal fault applied after divergence"
    return [{"ids": list(ids), "latency": int(latency), "class": latency_class(latency, threshold)}]


# --------------------------------------------------------------------------
# Statistics and policy comparison
# --------------------------------------------------------------------------

def wilson_interval(k: int, n: int, z: float = 1.959963984540054) -> tuple:
    if n == 0:
        return (0.0, 1.0)
    p = k / n
    denom = 1 + z * z / n
    centre = (p + z * z / (2 * n)) / denom
    half = z * np.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    return (max(0.0, centre - half), min(1.0, centre + half))


def bootstrap_ci(values: Sequence[float], resamples: int = BOOTSTRAP_RESAMPLES, seed: int = BOOTSTRAP_SEED,
                 level: float = 0.95) -> tuple:
    x = np.asarray(values, dtype=float)
    if x.size == 0:
        return (float("nan"), float("nan"))
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, x.size, size=(resamples, x.size))
    means = x[idx].mean(axis=1)
    lo, hi = np.quantile(means, [(1 - level) / 2, 1 - (1 - level) / 2])
    return (float(lo), float(hi))


def experiment_seeds(root_seed: int, size: int) -> list:
    return [derive_seed(root_seed, f"experiment/{i}") for i in range(size)]


def _campaign_worker(job: dict) -> ExperimentRecord:
    cfg = ExperimentConfig.model_validate_json(job["config"])
    return run_experiment(cfg, root_cause=job["root_cause"], **job["meta"])


def campaign_jobs(campaign: CampaignConfig) -> dict:
    """``{policy_label: [job, ...]}``; every policy gets the same seeds."""
    seeds = experiment_seeds(campaign.root_seed, campaign.size)
    design_seed = derive_seed(campaign.root_seed, "design")
    cid = campaign.fingerprint()
    out: dict = {}
    for pcfg in campaign.policies:
        label = policy_label(pcfg)
        if label in out:
            raise ValueError(f"policy {label} listed twice")
        out[label] = [{
            "config": campaign.experiment.model_copy(
                update={"seed": seed, "design_seed": design_seed, "policy": pcfg}).model_dump_json(),
            "root_cause": campaign.root_cause,
            "meta": {"root_seed": campaign.root_seed, "campaign": cid, "index": i},
        } for i, seed in enumerate(seeds)]
    return out


def run_campaign(campaign: CampaignConfig, progress: Optional[Callable[[str, int], None]] = None,
                 worker: Callable[[dict], ExperimentRecord] = _campaign_worker, **job_extra) -> dict:
    """Run every policy over the same seeds; returns ``{policy_label: [records]}``.

    ``worker`` must be a module-level function when ``campaign.workers > 1``.
    """
    out: dict = {}
    for label, jobs in campaign_jobs(campaign).items():
        jobs = [{**job, **job_extra} for job in jobs]
        if campaign.workers > 1:
            with ProcessPoolExecutor(campaign.workers) as pool:
                records = list(pool.map(worker, jobs, chunksize=max(1, len(jobs) // (4 * campaign.workers))))
        else:
            records = []
            for job in jobs:
                records.append(worker(job))
                if progress:
                    progress(label, len(records))
        out[label] = records
    return out


def _strip_policy(config: dict) -> str:
    c = dict(config)
    c.pop("policy", None)
    return json.dumps(c, sort_keys=True)


def compare_records(records_by_policy: dict) -> dict:
    """Per-policy metrics plus paired differences against the first policy."""
    labels = list(records_by_policy)
    if not labels:
        raise ValueError("no policies to compare")
    base = records_by_policy[labels[0]]
    base_keys = [(r.seed, _strip_policy(r.config)) for r in base]
    rows, paired = [], []
    for label in labels:
        recs = records_by_policy[label]
        keys = [(r.seed, _strip_policy(r.config)) for r in recs]
        if keys != base_keys:
            raise ValueError(f"policy {label} was not run on the same experiments as {labels[0]}")
        fails = np.array([r.failed for r in recs], dtype=float)
        k, n = int(fails.sum()), len(recs)
        res = [x for r in recs for x in r.scrub["residences"]]
        energy = np.array([r.scrub["energy_total"] for r in recs])
        busy = np.array([r.scrub["port_busy_total"] for r in recs])
        lo, hi = wilson_interval(k, n)
        rows.append({
            "policy": label, "experiments": n, "failures": k, "failure_fraction": k / n,
            "failure_ci_lo": lo, "failure_ci_hi": hi,
            "latent_residence_mean": float(np.mean(res)) if res else float("nan"),
            "latent_residence_median": float(np.median(res)) if res else float("nan"),
            "energy_total": float(energy.sum()), "energy_mean": float(energy.mean()),
            "port_busy_total": int(busy.sum()),
        })
        if label != labels[0]:
            base_fails = np.array([r.failed for r in base], dtype=float)
            base_energy = np.array([r.scrub["energy_total"] for r in base])
            d_fail = fails - base_fails
            d_energy = energy - base_energy
            f_lo, f_hi = bootstrap_ci(d_fail)
            e_lo, e_hi = bootstrap_ci(d_energy)
            paired.append({
                "policy": label, "baseline": labels[0],
                "failure_diff": float(d_fail.mean()), "failure_diff_ci_lo": f_lo, "failure_diff_ci_hi": f_hi,
                "energy_diff": float(d_energy.mean()), "energy_diff_ci_lo": e_lo, "energy_diff_ci_hi": e_hi,
            })
    return {"rows": rows, "paired": paired}


def compare_policies(base: ExperimentConfig, policies: Sequence, seeds: Iterable[int],
                     root_cause: bool = False) -> dict:
    """Paired comparison: every policy sees the same seeds, plans and traces."""
    seeds = list(seeds)
    records = {}
    for pcfg in policies:
        label = policy_label(pcfg)
        records[label] = [run_experiment(base.model_copy(update={"seed": s, "policy": pcfg}), root_cause=root_cause)
                          for s in seeds]
    table = compare_records(records)
    table["records"] = records
    return table
