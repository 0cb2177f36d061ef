"""Failure-prediction scrubbing.

Sensor samples feed a hazard score (weighted EWMAs of flux, temperature rise
and converter-voltage deviation); the score maps log-linearly onto a scrub
period between ``p_min`` and ``p_max``. When the protected module's I/O ranges
are known, an out-of-range word triggers an immediate readback-and-compare
scrub of the module and holds the period at ``p_min`` for a cooldown.

Any object with ``update(sample) -> HazardScore`` can replace the default
EWMA predictor.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import NamedTuple, Optional, Protocol, Sequence, Union

import numpy as np

from .environment_sensors import FLUX_REF, NOMINAL_VOLTAGES, VOLTAGE_TOLERANCE, EnvironmentTrace, SensorSample
from .scrubbing import ActionKind, ScrubPolicy, readback_compare, restore_action


@dataclass(frozen=True)
class IoBounds:
    in_lo: int
    in_hi: int
    out_lo: int
    out_hi: int


@dataclass(frozen=True)
class FpScrubConfig:
    w_f: float = 1.0
    w_t: float = 0.5
    w_v: float = 2.0
    alpha: float = 0.1
    p_min: int = 100
    p_max: int = 10_000
    theta_low: float = 1.5
    theta_high: float = 6.0
    t_base: float = 40.0
    t_span: float = 20.0
    flux_ref: float = FLUX_REF
    cooldown: int = 1000
    io_bounds: Optional[IoBounds] = None

    def __post_init__(self):
        if not 0 < self.alpha <= 1:
            raise ValueError("alpha must be in (0, 1]")
        if not 1 <= self.p_min <= self.p_max:
            raise ValueError("need 1 <= p_min <= p_max")
        if self.theta_low > self.theta_high:
            raise ValueError("theta_low must not exceed theta_high")
        if min(self.w_f, self.w_t, self.w_v) < 0 or self.t_span <= 0 or self.flux_ref <= 0:
            raise ValueError("weights must be >= 0; t_span and flux_ref > 0")


class HazardScore(NamedTuple):
    value: float
    flux_term: float
    temp_term: float
    voltage_term: float


@dataclass
class PredictorState:
    flux_ewma: Optional[float] = None
    temp_ewma: Optional[float] = None
    volt_ewma: Optional[float] = None


def voltage_deviation(voltages: Sequence[float], nominal: Sequence[float] = NOMINAL_VOLTAGES) -> float:
    """Mean absolute deviation in units of the allowed tolerance band (1.0 at +/-20%)."""
    v = np.asarray(voltages, dtype=float)
    nom = np.asarray(nominal[: len(v)], dtype=float)
    return float(np.mean(np.abs(v - nom) / (VOLTAGE_TOLERANCE * nom)))


def _ewma(prev: Optional[float], x: float, alpha: float) -> float:
    return x if prev is None else prev + alpha * (x - prev)


def hazard(cfg: FpScrubConfig, state: PredictorState) -> HazardScore:
    flux_term = cfg.w_f * state.flux_ewma / cfg.flux_ref
    temp_term = cfg.w_t * max(0.0, state.temp_ewma - cfg.t_base) / cfg.t_span
    voltage_term = cfg.w_v * state.volt_ewma
    return HazardScore(flux_term + temp_term + voltage_term, flux_term, temp_term, voltage_term)


def update_hazard(cfg: FpScrubConfig, state: PredictorState, sample: SensorSample) -> HazardScore:
    """Fold one sample into the EWMAs (first sample initialises them)."""
    state.flux_ewma = _ewma(state.flux_ewma, sample.flux, cfg.alpha)
    state.temp_ewma = _ewma(state.temp_ewma, sample.temperature, cfg.alpha)
    state.volt_ewma = _ewma(state.volt_ewma, voltage_deviation(sample.converter_voltages), cfg.alpha)
    return hazard(cfg, state)


def schedule_period(cfg: FpScrubConfig, score: Union[HazardScore, float]) -> int:
    s = score.value if isinstance(score, HazardScore) else float(score)
    if s >= cfg.theta_high:
        return cfg.p_min
    if s <= cfg.theta_low:
        return cfg.p_max
    frac = (s - cfg.theta_low) / (cfg.theta_high - cfg.theta_low)
    log_p = math.log(cfg.p_max) + frac * (math.log(cfg.p_min) - math.log(cfg.p_max))
    return min(cfg.p_max, max(cfg.p_min, int(round(math.exp(log_p)))))


class InRange(NamedTuple):
    pass


class Violation(NamedTuple):
    index: int
    input_word: int
    output_word: int


def io_monitor(cfg: FpScrubConfig, inputs: Sequence[int], outputs: Sequence[int]):
    """Check a window of DUT interface words against the configured ranges."""
    b = cfg.io_bounds
    if b is None:
        raise ValueError("io_bounds are not configured")
    for k, (i_word, o_word) in enumerate(zip(inputs, outputs)):
        if not (b.in_lo <= i_word <= b.in_hi and b.out_lo <= o_word <= b.out_hi):
            return Violation(k, int(i_word), int(o_word))
    return InRange()


class Predictor(Protocol):
    def update(self, sample: SensorSample) -> HazardScore: ...


class EwmaPredictor:
    def __init__(self, cfg: FpScrubConfig):
        self.cfg = cfg
        self.state = PredictorState()

    def update(self, sample: SensorSample) -> HazardScore:
        return update_hazard(self.cfg, self.state, sample)


DECISION_HEADER = ("t", "flux_ewma", "temp_ewma", "volt_dev", "score", "period", "trigger_reason")


class FpScrub(ScrubPolicy):
    """Adaptive scrubbing of the protected module's frames."""

    name = "FpScrub"

    def __init__(self, cfg: FpScrubConfig, frames: Sequence[int], trace: EnvironmentTrace,
                 predictor: Optional[Predictor] = None):
        if not frames:
            raise ValueError("fpScrub needs the protected module's frames")
        self.cfg = cfg
        self.frames = tuple(frames)
        self.trace = trace
        self.predictor = predictor or EwmaPredictor(cfg)
        self.score: Optional[HazardScore] = None
        self.last_scrub = 0
        self.cooldown_until = -1
        self.pending_violation: Optional[int] = None
        self.rearm_at = 0
        self.decisions: list = []
        self._next_sample = 0

    @property
    def monitors_io(self) -> bool:
        return self.cfg.io_bounds is not None

    def _ingest(self, now: int) -> None:
        times = self.trace.times
        while self._next_sample < len(times) and times[self._next_sample] <= now:
            self.score = self.predictor.update(self.trace.sample(self._next_sample))
            self._next_sample += 1

    def current_period(self, now: int) -> int:
        if now < self.cooldown_until:
            return self.cfg.p_min
        if self.score is None:
            return self.cfg.p_max
        return schedule_period(self.cfg, self.score)

    def next_wakeup(self, now: int) -> Optional[int]:
        candidates = [max(now, self.last_scrub + self.current_period(now))]
        if self._next_sample < len(self.trace.times):
            candidates.append(max(now, int(self.trace.times[self._next_sample])))
        if self.pending_violation is not None:
            candidates.append(max(now, self.pending_violation))
        if now < self.cooldown_until:
            candidates.append(self.cooldown_until)
        return min(candidates)

    def on_io_violation(self, tick: int) -> None:
        self.pending_violation = tick + 1
        self.rearm_at = 1 << 62

    def io_armed(self, now: int) -> bool:
        return self.monitors_io and now >= self.rearm_at

    def _log(self, now: int, period: int, reason: str) -> None:
        st = getattr(self.predictor, "state", None)
        s = self.score
        self.decisions.append((now,
                               getattr(st, "flux_ewma", None), getattr(st, "temp_ewma", None),
                               getattr(st, "volt_ewma", None),
                               s.value if s else None, period, reason))

    def decide(self, mem, now, idle_window, cost):
        self._ingest(now)
        if self.pending_violation is not None and now >= self.pending_violation:
            self.pending_violation = None
            self.cooldown_until = now + self.cfg.cooldown
            actions = readback_compare(mem, self.frames, now, cost)
            self.last_scrub = now
            self.rearm_at = actions[-1].end
            self._log(now, self.cfg.p_min, "io_violation")
            return actions
        period = self.current_period(now)
        if now >= self.last_scrub + period:
            self.last_scrub = now
            self._log(now, period, "schedule")
            return [restore_action(ActionKind.FRAME_RESTORE, self.frames, now, cost)]
        return []

    def describe(self):
        return self.name


def decision_log_csv(decisions, header_comment: Optional[str] = None) -> str:
    buf = io.StringIO()
    if header_comment:
        buf.write(f"# {header_comment}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(DECISION_HEADER)
    for row in decisions:
        writer.writerow(["" if v is None else (f"{v:.6g}" if isinstance(v, float) else v) for v in row])
    return buf.getvalue()
