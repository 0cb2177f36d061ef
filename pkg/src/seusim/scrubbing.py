"""Scrub strategies behind one policy interface, charged against a
configuration-port cost model.

A policy only *decides*: ``decide`` inspects the memory and returns the
actions it issues at ``now``. ``step_policy`` applies those actions at once
(useful standalone); the campaign harness instead replays each frame write at
its scheduled tick so scrubs race with arriving faults.
"""
from __future__ import annotations

import csv
import enum
import io
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

from .config_memory import Clean, ConfigMemory, Corrected, ecc_decode_frame


@dataclass(frozen=True)
class PortCostModel:
    t_frame_read: int = 1
    t_frame_write: int = 1
    energy_read: float = 1.0
    energy_write: float = 2.0

    def __post_init__(self):
        if min(self.t_frame_read, self.t_frame_write) < 0 or min(self.energy_read, self.energy_write) < 0:
            raise ValueError("port costs must be non-negative")


class ActionKind(str, enum.Enum):
    FULL_RESTORE = "FullRestore"
    FRAME_RESTORE = "FrameRestore"
    FRAME_REPAIR = "FrameRepair"
    READ_ONLY_SCAN = "ReadOnlyScan"


@dataclass(frozen=True)
class ScrubAction:
    kind: ActionKind
    frames: tuple
    issued_at: int
    port_busy: int
    energy: float
    position: Optional[int] = None  # bit fixed by a FrameRepair

    @property
    def end(self) -> int:
        return self.issued_at + self.port_busy

    @property
    def writes(self) -> bool:
        return self.kind is not ActionKind.READ_ONLY_SCAN

    def write_ticks(self, cost: PortCostModel) -> list:
        """``(tick, frame)`` at which each frame's write lands (end of its slot)."""
        if self.kind is ActionKind.READ_ONLY_SCAN:
            return []
        if self.kind is ActionKind.FRAME_REPAIR:
            return [(self.end - 1 if self.port_busy else self.issued_at, self.frames[0])]
        w = cost.t_frame_write
        return [(self.issued_at + max((i + 1) * w - 1, 0), f) for i, f in enumerate(self.frames)]


def restore_action(kind: ActionKind, frames: Sequence[int], now: int, cost: PortCostModel) -> ScrubAction:
    frames = tuple(frames)
    return ScrubAction(kind, frames, now, len(frames) * cost.t_frame_write, len(frames) * cost.energy_write)


def scan_action(frames: Sequence[int], now: int, cost: PortCostModel) -> ScrubAction:
    frames = tuple(frames)
    return ScrubAction(ActionKind.READ_ONLY_SCAN, frames, now, len(frames) * cost.t_frame_read,
                       len(frames) * cost.energy_read)


def apply_action(mem: ConfigMemory, action: ScrubAction) -> set:
    """Apply an action's writes immediately; returns the repaired cells."""
    fixed: set = set()
    if action.kind is ActionKind.FULL_RESTORE and len(action.frames) == mem.frame_count:
        return mem.restore_all()
    if action.kind in (ActionKind.FULL_RESTORE, ActionKind.FRAME_RESTORE):
        for f in action.frames:
            fixed |= mem.restore_frame(f)
    elif action.kind is ActionKind.FRAME_REPAIR:
        cell = (action.frames[0], action.position)
        was_dirty = cell in mem.diff
        mem.flip_back(*cell)
        if was_dirty:
            fixed.add(cell)
    return fixed


class ScrubPolicy:
    """Base policy: never scrubs."""

    name = "NoScrub"
    monitors_io = False

    def next_wakeup(self, now: int) -> Optional[int]:
        """Earliest tick >= ``now`` at which the policy wants to act."""
        return None

    def decide(self, mem: ConfigMemory, now: int, idle_window: int, cost: PortCostModel) -> list:
        return []

    def io_armed(self, now: int) -> bool:
        return False

    def describe(self) -> str:
        return self.name


NoScrub = ScrubPolicy


def _next_multiple(now: int, period: int) -> int:
    """Smallest positive multiple of ``period`` that is >= now."""
    k = max(1, -(-now // period))
    return k * period


class _Periodic(ScrubPolicy):
    def __init__(self, period: int):
        if period < 1:
            raise ValueError("period must be >= 1 tick")
        self.period = period

    def next_wakeup(self, now: int) -> Optional[int]:
        return _next_multiple(now, self.period)


class PeriodicBlindFull(_Periodic):
    name = "PeriodicBlindFull"

    def decide(self, mem, now, idle_window, cost):
        return [restore_action(ActionKind.FULL_RESTORE, range(mem.frame_count), now, cost)]

    def describe(self):
        return f"{self.name}({self.period})"


class PeriodicBlindPartial(_Periodic):
    name = "PeriodicBlindPartial"

    def __init__(self, period: int, frames: Sequence[int]):
        super().__init__(period)
        if not frames:
            raise ValueError("partial scrub needs a non-empty frame subset")
        self.frames = tuple(frames)

    def decide(self, mem, now, idle_window, cost):
        if max(self.frames) >= mem.frame_count or min(self.frames) < 0:
            raise ValueError("frame subset outside device bounds")
        return [restore_action(ActionKind.FRAME_RESTORE, self.frames, now, cost)]

    def describe(self):
        return f"{self.name}({self.period})"


def readback_compare(mem: ConfigMemory, frames: Sequence[int], now: int, cost: PortCostModel) -> list:
    scan = scan_action(frames, now, cost)
    dirty = [f for f in frames if mem.is_dirty(f)]
    actions = [scan]
    if dirty:
        actions.append(restore_action(ActionKind.FRAME_RESTORE, dirty, scan.end, cost))
    return actions


class ReadbackCompare(_Periodic):
    name = "ReadbackCompare"

    def __init__(self, period: int, frames: Optional[Sequence[int]] = None):
        super().__init__(period)
        self.frames = tuple(frames) if frames is not None else None

    def decide(self, mem, now, idle_window, cost):
        frames = self.frames if self.frames is not None else range(mem.frame_count)
        return readback_compare(mem, list(frames), now, cost)

    def describe(self):
        return f"{self.name}({self.period})"


class SecDedRepair(_Periodic):
    """Per-frame syndrome scan; single errors are fixed in place by
    read-modify-write, uncorrectable frames are rewritten from golden."""

    name = "SecDedRepair"

    def __init__(self, scan_period: int, frames: Optional[Sequence[int]] = None):
        super().__init__(scan_period)
        self.frames = tuple(frames) if frames is not None else None
        self.uncorrectable: list = []  # (tick, frame)
        self._golden = None
        self._golden_decoded: dict = {}

    def _decode(self, mem: ConfigMemory, f: int):
        if not mem.is_dirty(f):
            # a clean frame equals golden: decode golden once per frame
            if self._golden is not mem.golden:
                self._golden, self._golden_decoded = mem.golden, {}
            if f not in self._golden_decoded:
                self._golden_decoded[f] = ecc_decode_frame(mem.golden[f], mem.layout)
            return self._golden_decoded[f]
        return ecc_decode_frame(mem.live[f], mem.layout)

    def decide(self, mem, now, idle_window, cost):
        frames = list(self.frames if self.frames is not None else range(mem.frame_count))
        scan = scan_action(frames, now, cost)
        actions = [scan]
        t = scan.end
        for f in frames:
            result = self._decode(mem, f)
            if isinstance(result, Clean):
                continue
            if isinstance(result, Corrected):
                action = ScrubAction(ActionKind.FRAME_REPAIR, (f,), t, cost.t_frame_write,
                                     cost.energy_write, result.position)
            else:
                self.uncorrectable.append((now, f))
                action = restore_action(ActionKind.FRAME_RESTORE, [f], t, cost)
            actions.append(action)
            t = action.end
        return actions

    def describe(self):
        return f"{self.name}({self.period})"


class Budgeted(ScrubPolicy):
    """Rewrite as many dirty frames as fit in each idle window, oldest first.

    Knows the dirty set (a designer-scheduled partial scrub, not a blind scan);
    whatever does not fit carries over to the next window.
    """

    name = "Budgeted"

    def __init__(self, window: int, k_max: int, frames: Optional[Sequence[int]] = None):
        if window < 1 or k_max < 1:
            raise ValueError("window and k_max must be >= 1")
        self.window = window
        self.k_max = k_max
        self.frames = set(frames) if frames is not None else None

    def budget(self, idle_window: int, cost: PortCostModel) -> int:
        per_frame = max(cost.t_frame_write, 1)
        return min(self.k_max, idle_window // per_frame)

    def next_wakeup(self, now):
        return _next_multiple(now, self.window)

    def decide(self, mem, now, idle_window, cost):
        k = self.budget(idle_window, cost)
        dirty = [f for f in mem.dirty_frames() if self.frames is None or f in self.frames]
        if not dirty or k == 0:
            return []
        return [restore_action(ActionKind.FRAME_RESTORE, dirty[:k], now, cost)]

    def describe(self):
        return f"{self.name}({self.window},{self.k_max})"


def step_policy(policy: ScrubPolicy, mem: ConfigMemory, now: int, idle_window: int,
                cost: Optional[PortCostModel] = None) -> list:
    """Decide and immediately apply; returns the issued actions."""
    cost = cost or PortCostModel()
    actions = policy.decide(mem, now, idle_window, cost)
    for action in actions:
        apply_action(mem, action)
    return actions


def budgeted_progress(k_per_window: int, dirty_frames: int, windows: int) -> int:
    if k_per_window < 1:
        raise ValueError("k must be >= 1")
    return max(0, dirty_frames - windows * k_per_window)


LOG_HEADER = ("issued_at", "kind", "frames_touched", "port_busy", "energy")


def scrub_log_csv(actions: Iterable[ScrubAction], header_comment: Optional[str] = None) -> str:
    buf = io.StringIO()
    if header_comment:
        buf.write(f"# {header_comment}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(LOG_HEADER)
    for a in actions:
        writer.writerow([a.issued_at, a.kind.value, len(a.frames), a.port_busy, f"{a.energy:g}"])
    return buf.getvalue()
