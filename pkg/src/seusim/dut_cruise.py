"""Device under test: a Q16.16 PI(D) cruise controller driving a first-order
vehicle plant, and the sensitivity map that turns configuration bitflips into
controller corruptions.

All datapath arithmetic is saturating 32-bit two's complement with products
formed in 64 bits and shifted right (floor) by 16, mirroring an HDL datapath.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Iterable, Mapping, Optional

import numba
import numpy as np

FRAC_BITS = 16
ONE = 1 << FRAC_BITS
INT32_MIN = -(1 << 31)
INT32_MAX = (1 << 31) - 1


def to_q(x: float) -> int:
    """Nearest Q16.16 word, saturated."""
    return max(INT32_MIN, min(INT32_MAX, int(round(x * ONE))))


def from_q(raw) -> float:
    return np.asarray(raw, dtype=np.float64) / ONE if np.ndim(raw) else raw / ONE


@numba.njit(cache=True, inline="always")
def _sat(x):
    if x > 2147483647:
        return 2147483647
    if x < -2147483648:
        return -2147483648
    return x


@numba.njit(cache=True)
def control_step(kp, ki, kd, acc_stuck, err_low, out_mask, swap, u_min, u_max,
                 integ, e_prev, setpoint, measured):
    """One controller evaluation; returns ``(output_word, integ, e_prev)``."""
    if swap:
        e = _sat(measured - setpoint)
    else:
        e = _sat(setpoint - measured)
    if err_low:
        e = 0
    candidate = _sat(integ + e)
    p_term = _sat((kp * e) >> 16)
    i_term = _sat((ki * candidate) >> 16)
    d_term = _sat((kd * _sat(e - e_prev)) >> 16)
    u = _sat(p_term + i_term + d_term)
    if u > u_max:
        u = u_max
    elif u < u_min:
        u = u_min
    elif not acc_stuck:
        # anti-windup: the integrator only advances while the output is unclamped
        integ = candidate
    if out_mask != 0:
        w = (u & 0xFFFFFFFF) | out_mask
        if w >= 2147483648:
            w -= 4294967296
        u = w
    return u, integ, e


@numba.njit(cache=True)
def plant_update(a, b, v, u):
    return _sat(((a * v) >> 16) + ((b * u) >> 16))


# state layout: [v, integ, e_prev, u]
# eff layout:   [kp, ki, kd, acc_stuck, err_low, out_mask, swap, u_min, u_max]
@numba.njit(cache=True)
def simulate_segment(state, eff, a, b, setpoints, start, stop, loop_period,
                     measured, actuation, io_on, in_lo, in_hi, out_lo, out_hi):
    """Advance ticks ``[start, stop)``; stops early after an I/O bound violation.

    Returns the first tick not simulated.
    """
    v = state[0]
    integ = state[1]
    e_prev = state[2]
    u = state[3]
    t = start
    while t < stop:
        if t % loop_period == 0:
            u, integ, e_prev = control_step(eff[0], eff[1], eff[2], eff[3], eff[4], eff[5], eff[6],
                                            eff[7], eff[8], integ, e_prev, setpoints[t], v)
        measured[t] = v
        actuation[t] = u
        if (t + 1) % loop_period == 0:
            v = plant_update(a, b, v, u)
        t += 1
        if io_on:
            sp = setpoints[t - 1]
            if u < out_lo or u > out_hi or sp < in_lo or sp > in_hi:
                break
    state[0] = v
    state[1] = integ
    state[2] = e_prev
    state[3] = u
    return t


# --------------------------------------------------------------------------
# Parameters and the Python-level step API
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class PidParams:
    """Controller gains and limits as raw Q16.16 words."""

    kp: int = to_q(2.0)
    ki: int = to_q(1 / 64)
    kd: int = 0
    u_min: int = to_q(-50.0)
    u_max: int = to_q(100.0)
    loop_period: int = 1

    def __post_init__(self):
        if self.u_min >= self.u_max:
            raise ValueError("u_min must be < u_max")
        if self.loop_period < 1:
            raise ValueError("loop_period must be >= 1")

    @classmethod
    def from_float(cls, kp=2.0, ki=1 / 64, kd=0.0, u_min=-50.0, u_max=100.0, loop_period=1):
        return cls(to_q(kp), to_q(ki), to_q(kd), to_q(u_min), to_q(u_max), loop_period)


@dataclass(frozen=True)
class PlantModel:
    """v[k+1] = a*v[k] + b*u[k] with Q16.16 coefficients."""

    a: int = to_q(127 / 128)
    b: int = to_q(1 / 128)

    def __post_init__(self):
        if not 0 < self.a < ONE:
            raise ValueError("plant pole must satisfy 0 < a < 1")
        if self.b <= 0:
            raise ValueError("plant gain b must be > 0")

    @classmethod
    def from_float(cls, a=127 / 128, b=1 / 128):
        return cls(to_q(a), to_q(b))


@dataclass
class DutState:
    integ: int = 0
    e_prev: int = 0
    output: int = 0


@dataclass
class DutInterface:
    """The 32-bit I/O words and control lines of the DUT."""

    input: int = 0
    output: int = 0
    enable: bool = True
    reset: bool = False


@dataclass(frozen=True)
class EffectiveDut:
    """Controller as currently configured, i.e. nominal params plus corruptions."""

    kp: int
    ki: int
    kd: int
    u_min: int
    u_max: int
    acc_stuck: bool = False
    err_low: bool = False
    out_mask: int = 0
    swap: bool = False

    @classmethod
    def nominal(cls, params: PidParams) -> "EffectiveDut":
        return cls(params.kp, params.ki, params.kd, params.u_min, params.u_max)

    def as_array(self) -> np.ndarray:
        return np.array([self.kp, self.ki, self.kd, int(self.acc_stuck), int(self.err_low),
                         self.out_mask, int(self.swap), self.u_min, self.u_max], dtype=np.int64)


def pid_step(params: PidParams, state: DutState, setpoint: int, measured: int,
             eff: Optional[EffectiveDut] = None, io: Optional[DutInterface] = None) -> int:
    """Evaluate the controller once on raw Q16.16 words; mutates ``state``."""
    if io is not None:
        if io.reset:
            state.integ = 0
            state.e_prev = 0
            io.reset = False
        if not io.enable:
            return state.output
    eff = eff or EffectiveDut.nominal(params)
    u, state.integ, state.e_prev = control_step(
        eff.kp, eff.ki, eff.kd, eff.acc_stuck, eff.err_low, eff.out_mask, eff.swap,
        eff.u_min, eff.u_max, state.integ, state.e_prev, setpoint, measured)
    state.output = int(u)
    if io is not None:
        io.input = setpoint
        io.output = state.output
    return state.output


def plant_step(plant: PlantModel, v: int, u: int) -> int:
    return int(plant_update(plant.a, plant.b, v, u))


# --------------------------------------------------------------------------
# Workload and traces
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class SquareWave:
    low: float = 20.0
    high: float = 30.0
    half_period: int = 3000

    def setpoints(self, duration: int) -> np.ndarray:
        t = np.arange(duration)
        low, high = to_q(self.low), to_q(self.high)
        return np.where((t // self.half_period) % 2 == 0, low, high).astype(np.int64)


@dataclass
class Trace:
    setpoint: np.ndarray
    measured: np.ndarray
    actuation: np.ndarray

    def __len__(self):
        return len(self.setpoint)

    def first_divergence(self, gold: "Trace") -> Optional[int]:
        idx = np.flatnonzero(self.measured != gold.measured)
        return int(idx[0]) if idx.size else None

    def to_csv(self, path, gold: Optional["Trace"] = None) -> None:
        diverged = (np.zeros(len(self), dtype=np.int64) if gold is None
                    else (self.measured != gold.measured).astype(np.int64))
        cols = np.column_stack([np.arange(len(self)), self.setpoint, self.measured,
                                self.actuation, diverged])
        np.savetxt(path, cols, fmt="%d", delimiter=",",
                   header="tick,setpoint,measured_speed,actuation,diverged_flag", comments="")


def simulate(params: PidParams, plant: PlantModel, setpoints: np.ndarray,
             eff: Optional[EffectiveDut] = None) -> Trace:
    """Run the whole workload with one fixed configuration."""
    n = len(setpoints)
    measured = np.zeros(n, dtype=np.int64)
    actuation = np.zeros(n, dtype=np.int64)
    state = np.zeros(4, dtype=np.int64)
    eff_arr = (eff or EffectiveDut.nominal(params)).as_array()
    simulate_segment(state, eff_arr, plant.a, plant.b, setpoints, 0, n, params.loop_period,
                     measured, actuation, False, 0, 0, 0, 0)
    return Trace(setpoints, measured, actuation)


def reference_simulate(params: PidParams, plant: PlantModel, setpoints: np.ndarray) -> np.ndarray:
    """Double-precision version of the fault-free loop; returns measured speed."""
    kp, ki, kd = params.kp / ONE, params.ki / ONE, params.kd / ONE
    u_min, u_max = params.u_min / ONE, params.u_max / ONE
    a, b = plant.a / ONE, plant.b / ONE
    sp = np.asarray(setpoints) / ONE
    v = integ = e_prev = u = 0.0
    out = np.empty(len(sp))
    for t in range(len(sp)):
        if t % params.loop_period == 0:
            e = sp[t] - v
            candidate = integ + e
            u = kp * e + ki * candidate + kd * (e - e_prev)
            if u > u_max:
                u = u_max
            elif u < u_min:
                u = u_min
            else:
                integ = candidate
            e_prev = e
        out[t] = v
        if (t + 1) % params.loop_period == 0:
            v = a * v + b * u
    return out


# --------------------------------------------------------------------------
# Sensitivity map
# --------------------------------------------------------------------------

class BitClass(enum.IntEnum):
    UNUSED = 0
    NON_SENSITIVE = 1
    SENSITIVE = 2


class Element(enum.IntEnum):
    KP_BIT = 0
    KI_BIT = 1
    KD_BIT = 2
    ACC_STUCK = 3
    ERR_PATH_STUCK_LOW = 4
    OUT_FORCE = 5
    ROUTING_SWAP = 6


INDEXED = {Element.KP_BIT, Element.KI_BIT, Element.KD_BIT, Element.OUT_FORCE}
DEFAULT_ELEMENT_WEIGHTS = {
    Element.KP_BIT: 3, Element.KI_BIT: 3, Element.KD_BIT: 1, Element.ACC_STUCK: 1,
    Element.ERR_PATH_STUCK_LOW: 1, Element.OUT_FORCE: 3, Element.ROUTING_SWAP: 1,
}
DEFAULT_FRACTIONS = (0.4, 0.5, 0.1)


def encode_element(kind: Element, j: int = 0) -> int:
    return int(kind) * 32 + (j if kind in INDEXED else 0)


def decode_element(code: int) -> tuple[Element, int]:
    return Element(code // 32), code % 32


def element_name(code: int) -> str:
    kind, j = decode_element(code)
    return f"{kind.name}({j})" if kind in INDEXED else kind.name


@dataclass(frozen=True)
class MapLayout:
    """The reconfigurable-partition frames the DUT occupies."""

    frame_lo: int
    frame_hi: int
    frame_size: int


@dataclass
class SensitivityMap:
    layout: MapLayout
    classes: np.ndarray   # int8, (rp_frames, frame_size)
    elements: np.ndarray  # int16 element code, -1 where not sensitive

    def lookup(self, cell) -> tuple[BitClass, Optional[int]]:
        f, b = cell
        lo, hi = self.layout.frame_lo, self.layout.frame_hi
        if not lo <= f < hi or not 0 <= b < self.layout.frame_size:
            return BitClass.UNUSED, None
        cls = BitClass(int(self.classes[f - lo, b]))
        return cls, (int(self.elements[f - lo, b]) if cls is BitClass.SENSITIVE else None)

    def is_sensitive(self, cell) -> bool:
        return self.lookup(cell)[0] is BitClass.SENSITIVE

    def cells_of(self, kind: Element, j: int = 0) -> np.ndarray:
        """(frame, bit) pairs bound to one element, absolute frame numbers."""
        idx = np.argwhere(self.elements == encode_element(kind, j))
        idx[:, 0] += self.layout.frame_lo
        return idx

    def cells_of_class(self, cls: BitClass) -> np.ndarray:
        idx = np.argwhere(self.classes == int(cls))
        idx[:, 0] += self.layout.frame_lo
        return idx

    def stats(self) -> dict:
        total = self.classes.size
        counts = np.bincount(self.classes.reshape(-1), minlength=3)
        return {
            "bits": int(total),
            "unused": int(counts[BitClass.UNUSED]),
            "non_sensitive": int(counts[BitClass.NON_SENSITIVE]),
            "sensitive": int(counts[BitClass.SENSITIVE]),
            "sensitive_fraction": float(counts[BitClass.SENSITIVE] / total),
        }

    def with_binding(self, cell, cls: BitClass, element: Optional[int] = None) -> "SensitivityMap":
        """Copy of the map with one bit re-bound (used to construct scenarios)."""
        classes, elements = self.classes.copy(), self.elements.copy()
        f, b = cell
        f -= self.layout.frame_lo
        classes[f, b] = int(cls)
        elements[f, b] = element if cls is BitClass.SENSITIVE else -1
        return SensitivityMap(self.layout, classes, elements)


def build_default_map(seed: int, layout: MapLayout, fractions=DEFAULT_FRACTIONS,
                      element_weights: Optional[Mapping] = None) -> SensitivityMap:
    fr = np.asarray(fractions, dtype=float)
    if fr.shape != (3,) or (fr < 0).any() or abs(fr.sum() - 1.0) > 1e-9:
        raise ValueError(f"fractions (unused, non-sensitive, sensitive) must sum to 1, got {fractions}")
    weights = dict(DEFAULT_ELEMENT_WEIGHTS if element_weights is None else
                   {Element[k] if isinstance(k, str) else Element(k): w for k, w in element_weights.items()})
    kinds = list(Element)
    w = np.array([weights.get(k, 0) for k in kinds], dtype=float)
    if (w < 0).any() or w.sum() <= 0:
        raise ValueError("element weights must be non-negative and not all zero")
    shape = (layout.frame_hi - layout.frame_lo, layout.frame_size)
    rng = np.random.default_rng(seed)
    # one uniform per cell against cumulative thresholds: raising the sensitive
    # fraction only converts cells to SENSITIVE, so maps nest across fractions
    u = rng.random(shape)
    classes = np.searchsorted(np.cumsum(fr)[:2], u, side="right").astype(np.int8)
    kind_idx = rng.choice(len(kinds), size=shape, p=w / w.sum())
    bit_idx = rng.integers(0, 32, size=shape)
    codes = np.where(np.isin(kind_idx, [int(k) for k in INDEXED]), kind_idx * 32 + bit_idx, kind_idx * 32)
    elements = np.where(classes == BitClass.SENSITIVE, codes, -1).astype(np.int16)
    return SensitivityMap(layout, classes, elements)


def apply_corruptions(smap: SensitivityMap, diff: Iterable, params: PidParams) -> EffectiveDut:
    kp, ki, kd = params.kp, params.ki, params.kd
    acc = err = swap = False
    mask = 0
    for cell in diff:
        cls, code = smap.lookup(cell)
        if cls is not BitClass.SENSITIVE:
            continue
        kind, j = decode_element(code)
        if kind is Element.KP_BIT:
            kp = _flip32(kp, j)
        elif kind is Element.KI_BIT:
            ki = _flip32(ki, j)
        elif kind is Element.KD_BIT:
            kd = _flip32(kd, j)
        elif kind is Element.ACC_STUCK:
            acc = True
        elif kind is Element.ERR_PATH_STUCK_LOW:
            err = True
        elif kind is Element.OUT_FORCE:
            mask |= 1 << j
        elif kind is Element.ROUTING_SWAP:
            swap = True
    return EffectiveDut(kp, ki, kd, params.u_min, params.u_max, acc, err, mask, swap)


def _flip32(word: int, j: int) -> int:
    w = (word & 0xFFFFFFFF) ^ (1 << j)
    return w - (1 << 32) if w >= 1 << 31 else w
