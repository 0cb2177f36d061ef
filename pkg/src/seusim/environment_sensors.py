"""Seeded device and environment sensor traces.

The flux series drives both upset arrivals and the predictor, so any
correlation the predictor exploits exists by construction. Temperature
coupling to flux is scaffolding for the prediction premise, not a thermal
model.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Literal, Optional, Union

import numpy as np

TEMP_BOUNDS = (-55.0, 125.0)
VOLTAGE_TOLERANCE = 0.20
NOMINAL_VOLTAGES = (1.0, 2.5, 3.3)
FLUX_REF = 1.0
CSV_HEADER = "t,temperature,v0,v1,v2,flux,humidity,pressure"


@dataclass(frozen=True)
class SensorSample:
    t: int
    temperature: float
    converter_voltages: tuple
    flux: float
    humidity: Optional[float] = None
    pressure: Optional[float] = None


@dataclass(frozen=True)
class Burst:
    start: int
    end: int
    multiplier: float

    def __post_init__(self):
        if self.end <= self.start or self.multiplier < 0:
            raise ValueError(f"invalid burst {self}")


@dataclass(frozen=True)
class Profile:
    kind: Literal["benign", "harsh", "episodic"] = "benign"
    bursts: tuple = ()
    baseline_flux: float = 1.0
    harsh_flux: float = 10.0
    flux_noise: float = 0.05
    temp_base: float = 40.0
    temp_walk: float = 0.05
    temp_per_flux: float = 2.0
    temp_lag: float = 0.05
    voltage_jitter: float = 0.005
    dip_probability: float = 0.002
    dip_depth: float = 0.03

    def __post_init__(self):
        if self.kind not in ("benign", "harsh", "episodic"):
            raise ValueError(f"unknown profile {self.kind!r}")
        if self.kind == "episodic" and not self.bursts:
            raise ValueError("episodic profile needs at least one burst")
        if self.flux_noise < 0 or self.baseline_flux < 0 or self.harsh_flux < 0:
            raise ValueError("flux parameters must be non-negative")
        if not 0 < self.temp_lag <= 1:
            raise ValueError("temp_lag must be in (0, 1]")


BENIGN = Profile("benign")
HARSH = Profile("harsh")


@dataclass(frozen=True)
class EnvironmentTrace:
    seed: int
    cadence: int
    times: np.ndarray
    temperature: np.ndarray
    voltages: np.ndarray  # (samples, converters)
    flux: np.ndarray
    humidity: np.ndarray
    pressure: np.ndarray
    bursts: tuple = ()
    nominal_voltages: tuple = NOMINAL_VOLTAGES

    @property
    def duration(self) -> int:
        return int(self.times[-1]) + self.cadence

    def __len__(self):
        return len(self.times)

    def sample(self, k: int) -> SensorSample:
        return SensorSample(int(self.times[k]), float(self.temperature[k]),
                            tuple(float(v) for v in self.voltages[k]), float(self.flux[k]),
                            float(self.humidity[k]), float(self.pressure[k]))

    def flux_at(self, t: np.ndarray) -> np.ndarray:
        idx = np.searchsorted(self.times, t, side="right") - 1
        return self.flux[idx]

    def to_csv(self, path: Union[str, Path]) -> None:
        cols = np.column_stack([self.times, self.temperature, self.voltages, self.flux,
                                self.humidity, self.pressure])
        fmt = ["%d"] + ["%.6f"] * (cols.shape[1] - 1)
        np.savetxt(path, cols, fmt=fmt, delimiter=",", header=CSV_HEADER, comments="")


def _check_bounds(temperature, voltages, flux, nominal) -> None:
    if (temperature < TEMP_BOUNDS[0]).any() or (temperature > TEMP_BOUNDS[1]).any():
        raise ValueError("temperature outside [-55, 125] C")
    nominal = np.asarray(nominal)
    if (np.abs(voltages - nominal) > VOLTAGE_TOLERANCE * nominal + 1e-9).any():
        raise ValueError("converter voltage outside +/-20% of nominal")
    if (flux < 0).any():
        raise ValueError("negative flux")


def generate_trace(seed: int, duration: int, cadence: int, profile: Profile = BENIGN) -> EnvironmentTrace:
    if not duration >= cadence >= 1:
        raise ValueError("need duration >= cadence >= 1")
    if duration % cadence:
        raise ValueError("cadence must divide duration")
    rng = np.random.default_rng(seed)
    times = np.arange(0, duration, cadence, dtype=np.int64)
    n = len(times)

    if profile.kind == "harsh":
        base = np.full(n, profile.harsh_flux)
    else:
        base = np.full(n, profile.baseline_flux)
    for burst in profile.bursts if profile.kind == "episodic" else ():
        inside = (times >= burst.start) & (times < burst.end)
        base[inside] *= burst.multiplier
    noise = np.clip(rng.normal(0.0, profile.flux_noise, n), -0.2, 0.2)
    flux = np.maximum(base * (1.0 + noise), 0.0)

    # temperature: bounded random walk lagging a flux-dependent target
    target = profile.temp_base + profile.temp_per_flux * np.maximum(flux - profile.baseline_flux, 0.0)
    steps = rng.normal(0.0, profile.temp_walk, n)
    temperature = np.empty(n)
    temp = target[0]
    for k in range(n):
        temp += profile.temp_lag * (target[k] - temp) + steps[k]
        temp = min(max(temp, TEMP_BOUNDS[0]), TEMP_BOUNDS[1])
        temperature[k] = temp

    nominal = np.asarray(NOMINAL_VOLTAGES)
    jitter = np.clip(rng.normal(0.0, profile.voltage_jitter, (n, len(nominal))), -0.05, 0.05)
    p_dip = np.clip(profile.dip_probability * flux / FLUX_REF, 0.0, 1.0)
    dips = rng.uniform(size=(n, len(nominal))) < p_dip[:, None]
    voltages = nominal * (1.0 + jitter - profile.dip_depth * dips)

    humidity = np.clip(50.0 + rng.normal(0.0, 1.0, n), 0.0, 100.0)
    pressure = 1013.0 + rng.normal(0.0, 0.5, n)
    _check_bounds(temperature, voltages, flux, nominal)
    return EnvironmentTrace(seed, cadence, times, temperature, voltages, flux, humidity, pressure,
                            tuple(profile.bursts) if profile.kind == "episodic" else ())


def read_sensors(trace: EnvironmentTrace, now: int) -> SensorSample:
    """Latest sample at or before ``now`` (zero-order hold)."""
    if now < 0 or now >= trace.duration:
        raise ValueError(f"t={now} outside trace span [0, {trace.duration})")
    k = int(np.searchsorted(trace.times, now, side="right")) - 1
    return trace.sample(k)


def load_trace_csv(path: Union[str, Path], seed: int = 0) -> EnvironmentTrace:
    """Ingest an external trace file (replaces a live environment feed)."""
    with open(path) as fh:
        header = fh.readline().strip()
    if header != CSV_HEADER:
        raise ValueError(f"{path}: expected header {CSV_HEADER!r}, got {header!r}")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    times = data[:, 0].astype(np.int64)
    if times.size == 0 or times[0] != 0:
        raise ValueError(f"{path}: trace must start at t=0")
    steps = np.diff(times)
    cadence = int(steps[0]) if steps.size else 1
    if steps.size and (steps != cadence).any() or cadence < 1:
        raise ValueError(f"{path}: samples must have a fixed positive cadence")
    temperature, voltages, flux = data[:, 1], data[:, 2:5], data[:, 5]
    _check_bounds(temperature, voltages, flux, NOMINAL_VOLTAGES)
    return EnvironmentTrace(seed, cadence, times, temperature, voltages, flux, data[:, 6], data[:, 7])
