"""Fault generation and injection (fault generator + injection runtime).

A plan is a pure function of its seed and parameters. Cells of every event are
resolved at generation time so the serialized plan fully defines each upset.
"""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .config_memory import BitAddress, ConfigMemory


class FaultKind(str, enum.Enum):
    SBE = "SBE"
    DOUBLE_ADJACENT = "DoubleAdjacent"
    MBE = "MBE"


DEFAULT_WEIGHTS = {FaultKind.SBE: 20, FaultKind.DOUBLE_ADJACENT: 0, FaultKind.MBE: 1}
DEFAULT_MBE_RADIUS_MAX = 3


@dataclass(frozen=True)
class RegionOfInterest:
    """Half-open frame and bit windows."""

    frame_lo: int
    frame_hi: int
    bit_lo: int
    bit_hi: int

    def __post_init__(self):
        if self.frame_hi <= self.frame_lo or self.bit_hi <= self.bit_lo:
            raise ValueError(f"empty region of interest: {self}")
        if self.frame_lo < 0 or self.bit_lo < 0:
            raise ValueError(f"negative region bounds: {self}")

    @classmethod
    def whole(cls, frame_count: int, frame_size: int) -> "RegionOfInterest":
        return cls(0, frame_count, 0, frame_size)

    def check_within(self, frame_count: int, frame_size: int) -> None:
        if self.frame_hi > frame_count or self.bit_hi > frame_size:
            raise ValueError(f"{self} exceeds device ({frame_count} x {frame_size})")

    def contains(self, cell) -> bool:
        f, b = cell
        return self.frame_lo <= f < self.frame_hi and self.bit_lo <= b < self.bit_hi

    @property
    def frames(self) -> range:
        return range(self.frame_lo, self.frame_hi)


@dataclass(frozen=True)
class FaultEvent:
    id: int
    trigger_time: int
    kind: FaultKind
    center: BitAddress
    radius: int = 0
    cells: frozenset = field(default_factory=frozenset)

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "trigger_time": self.trigger_time,
            "kind": self.kind.value,
            "center": {"frame": self.center.frame, "bit": self.center.bit},
            "radius": self.radius,
        }


@dataclass(frozen=True)
class FaultPlan:
    seed: int
    events: tuple
    roi: RegionOfInterest
    sbe_weight: int = 20
    mbe_weight: int = 1

    def __post_init__(self):
        times = [e.trigger_time for e in self.events]
        if times != sorted(times):
            raise ValueError("events must be sorted by trigger_time")
        if len({e.id for e in self.events}) != len(self.events):
            raise ValueError("event ids must be unique")

    def __len__(self):
        return len(self.events)

    def subset(self, ids: Iterable[int]) -> "FaultPlan":
        keep = set(ids)
        return FaultPlan(self.seed, tuple(e for e in self.events if e.id in keep), self.roi,
                         self.sbe_weight, self.mbe_weight)

    def to_json(self) -> str:
        return json.dumps([e.to_json() for e in self.events], separators=(",", ":"))


def resolve_mbe_cells(center, radius: int, roi: RegionOfInterest) -> frozenset:
    """All grid cells within Euclidean distance ``radius`` of ``center``, clipped to ``roi``."""
    cf, cb = center
    r2 = radius * radius
    cells = []
    for df in range(-radius, radius + 1):
        f = cf + df
        if not roi.frame_lo <= f < roi.frame_hi:
            continue
        span = int(np.floor(np.sqrt(r2 - df * df)))
        for b in range(max(cb - span, roi.bit_lo), min(cb + span, roi.bit_hi - 1) + 1):
            cells.append(BitAddress(f, b))
    return frozenset(cells)


def resolve_cells(kind: FaultKind, center, radius: int, roi: RegionOfInterest) -> frozenset:
    center = BitAddress(*center)
    if kind is FaultKind.SBE:
        return frozenset([center])
    if kind is FaultKind.DOUBLE_ADJACENT:
        other = center.bit + 1 if center.bit + 1 < roi.bit_hi else center.bit - 1
        if not roi.bit_lo <= other < roi.bit_hi:
            raise ValueError("region too narrow for a double-adjacent fault")
        return frozenset([center, BitAddress(center.frame, other)])
    return resolve_mbe_cells(center, radius, roi)


def _normalise_weights(kind_weights: Optional[Mapping]) -> tuple[list, np.ndarray]:
    weights = dict(DEFAULT_WEIGHTS)
    if kind_weights is not None:
        weights = {k: 0 for k in FaultKind}
        for k, w in kind_weights.items():
            weights[FaultKind(k)] = w
    kinds = list(FaultKind)
    w = np.array([weights[k] for k in kinds], dtype=float)
    if (w < 0).any():
        raise ValueError("kind weights must be non-negative")
    if w.sum() <= 0:
        raise ValueError("kind weights must not all be zero")
    return kinds, w / w.sum()


def _draw_events(rng: np.random.Generator, times: np.ndarray, roi: RegionOfInterest,
                 kinds: list, probs: np.ndarray, mbe_radius_max: int) -> tuple:
    n = len(times)
    kind_idx = rng.choice(len(kinds), size=n, p=probs)
    frames = rng.integers(roi.frame_lo, roi.frame_hi, size=n)
    bits = rng.integers(roi.bit_lo, roi.bit_hi, size=n)
    radii = rng.integers(1, mbe_radius_max + 1, size=n)
    order = np.argsort(times, kind="stable")
    events = []
    for new_id, i in enumerate(order):
        kind = kinds[kind_idx[i]]
        radius = int(radii[i]) if kind is FaultKind.MBE else 0
        center = BitAddress(int(frames[i]), int(bits[i]))
        events.append(FaultEvent(new_id, int(times[i]), kind, center, radius,
                                 resolve_cells(kind, center, radius, roi)))
    return tuple(events)


def generate_plan(seed: int, count: int, roi: RegionOfInterest, duration: int,
                  kind_weights: Optional[Mapping] = None,
                  mbe_radius_max: int = DEFAULT_MBE_RADIUS_MAX) -> FaultPlan:
    if count < 0:
        raise ValueError("count must be >= 0")
    if duration < 1:
        raise ValueError("duration must be >= 1")
    if mbe_radius_max < 1:
        raise ValueError("mbe_radius_max must be >= 1")
    kinds, probs = _normalise_weights(kind_weights)
    rng = np.random.default_rng(seed)
    times = rng.integers(0, duration, size=count)
    events = _draw_events(rng, times, roi, kinds, probs, mbe_radius_max)
    return _plan(seed, events, roi, kind_weights)


def _plan(seed, events, roi, kind_weights) -> FaultPlan:
    raw = dict(DEFAULT_WEIGHTS) if kind_weights is None else {FaultKind(k): w for k, w in kind_weights.items()}
    return FaultPlan(seed, events, roi, int(raw.get(FaultKind.SBE, 0)), int(raw.get(FaultKind.MBE, 0)))


def poisson_arrival_plan(seed: int, base_rate: float, flux_trace, roi: RegionOfInterest,
                         duration: int, flux_ref: float = 1.0,
                         kind_weights: Optional[Mapping] = None,
                         mbe_radius_max: int = DEFAULT_MBE_RADIUS_MAX) -> FaultPlan:
    """Inhomogeneous Poisson arrivals by thinning.

    ``flux_trace`` is anything with ``times`` and ``flux`` arrays (zero-order
    hold between samples), e.g. an ``EnvironmentTrace``. The instantaneous
    rate is ``base_rate * flux(t) / flux_ref`` upsets per tick.
    """
    if base_rate < 0:
        raise ValueError("base_rate must be >= 0")
    times_s = np.asarray(flux_trace.times, dtype=np.int64)
    flux = np.asarray(flux_trace.flux, dtype=float)
    if (flux < 0).any():
        raise ValueError("flux samples must be non-negative")
    if times_s.size == 0 or times_s[0] > 0:
        raise ValueError("flux trace must start at t=0")
    kinds, probs = _normalise_weights(kind_weights)
    rng = np.random.default_rng(seed)
    lam_max = base_rate * float(flux.max()) / flux_ref if flux.size else 0.0
    if lam_max <= 0:
        return _plan(seed, (), roi, kind_weights)
    n_candidates = rng.poisson(lam_max * duration)
    t = np.sort(rng.uniform(0.0, duration, size=n_candidates))
    idx = np.searchsorted(times_s, t, side="right") - 1
    lam = base_rate * flux[idx] / flux_ref
    accept = rng.uniform(0.0, 1.0, size=n_candidates) * lam_max < lam
    ticks = np.floor(t[accept]).astype(np.int64)
    events = _draw_events(rng, ticks, roi, kinds, probs, mbe_radius_max)
    return _plan(seed, events, roi, kind_weights)


def plan_from_json(text: str, roi: RegionOfInterest, seed: int = 0) -> FaultPlan:
    events = []
    for raw in json.loads(text):
        kind = FaultKind(raw["kind"])
        center = BitAddress(raw["center"]["frame"], raw["center"]["bit"])
        radius = int(raw.get("radius", 0))
        events.append(FaultEvent(int(raw["id"]), int(raw["trigger_time"]), kind, center, radius,
                                 resolve_cells(kind, center, radius, roi)))
    return FaultPlan(seed, tuple(events), roi)


class Injector:
    """Applies plan events to a memory once their trigger time has passed."""

    def __init__(self, plan: FaultPlan):
        self.plan = plan
        self._cursor = 0
        self.applied: list[tuple[FaultEvent, int]] = []

    @property
    def next_time(self) -> Optional[int]:
        if self._cursor < len(self.plan.events):
            return self.plan.events[self._cursor].trigger_time
        return None

    def inject_due(self, mem: ConfigMemory, now: int) -> list:
        due = []
        events = self.plan.events
        while self._cursor < len(events) and events[self._cursor].trigger_time <= now:
            event = events[self._cursor]
            mem.flip_bits(event.cells, now=now)
            self.applied.append((event, now))
            due.append(event)
            self._cursor += 1
        return due


def inject_due(plan_or_injector, mem: ConfigMemory, now: int) -> list:
    injector = plan_or_injector if isinstance(plan_or_injector, Injector) else Injector(plan_or_injector)
    return injector.inject_due(mem, now)


def kind_counts(events: Sequence[FaultEvent]) -> dict:
    counts = {k: 0 for k in FaultKind}
    for e in events:
        counts[e.kind] += 1
    return counts
