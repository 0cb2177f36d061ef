"""Experiment and campaign configuration schema.

Every field has an explicit default; unknown keys are rejected. The effective
configuration (all defaults materialised) is what gets fingerprinted.
"""
from __future__ import annotations

import hashlib
import json
from typing import Annotated, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, model_validator

from . import __version__


class Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class DeviceConfig(Strict):
    frame_count: int = Field(64, ge=1)
    frame_size: int = Field(1312, ge=16)
    rp_frame_lo: int = Field(8, ge=0)
    rp_frame_hi: int = Field(24, ge=1)
    golden: Literal["random", "zeros"] = "random"
    golden_file: Optional[str] = None

    @model_validator(mode="after")
    def _rp_inside(self):
        if not 0 <= self.rp_frame_lo < self.rp_frame_hi <= self.frame_count:
            raise ValueError("reconfigurable partition must satisfy 0 <= lo < hi <= frame_count")
        return self

    @property
    def rp_frames(self) -> list:
        return list(range(self.rp_frame_lo, self.rp_frame_hi))


class WorkloadConfig(Strict):
    low_setpoint: float = 20.0
    high_setpoint: float = 30.0
    half_period: int = Field(3000, ge=1)


class DutConfig(Strict):
    kp: float = 2.0
    ki: float = 1 / 64
    kd: float = 0.0
    u_min: float = -50.0
    u_max: float = 100.0
    loop_period: int = Field(1, ge=1)
    plant_a: float = Field(127 / 128, gt=0, lt=1)
    plant_b: float = Field(1 / 128, gt=0)

    @model_validator(mode="after")
    def _limits(self):
        if self.u_min >= self.u_max:
            raise ValueError("u_min must be < u_max")
        return self


class FaultConfig(Strict):
    mode: Literal["fixed", "poisson"] = "fixed"
    count: int = Field(10, ge=0)
    base_rate: float = Field(2.5e-6, ge=0, description="upsets per tick at flux_ref (poisson mode)")
    sbe_weight: float = Field(1, ge=0)
    double_adjacent_weight: float = Field(0, ge=0)
    mbe_weight: float = Field(0, ge=0)
    mbe_radius_max: int = Field(3, ge=1)
    roi_frame_lo: Optional[int] = None
    roi_frame_hi: Optional[int] = None
    roi_bit_lo: int = Field(0, ge=0)
    roi_bit_hi: Optional[int] = None

    @model_validator(mode="after")
    def _weights(self):
        if self.sbe_weight + self.double_adjacent_weight + self.mbe_weight <= 0:
            raise ValueError("fault kind weights must not all be zero")
        return self


class SensitivityConfig(Strict):
    unused: float = Field(0.4, ge=0, le=1)
    non_sensitive: float = Field(0.5, ge=0, le=1)
    sensitive: float = Field(0.1, ge=0, le=1)
    element_weights: Optional[dict[str, float]] = None

    @model_validator(mode="after")
    def _sum(self):
        if abs(self.unused + self.non_sensitive + self.sensitive - 1.0) > 1e-9:
            raise ValueError("unused + non_sensitive + sensitive must equal 1")
        return self

    @property
    def fractions(self) -> tuple:
        return (self.unused, self.non_sensitive, self.sensitive)


class BurstConfig(Strict):
    start: int = Field(ge=0)
    end: int = Field(ge=1)
    multiplier: float = Field(ge=0)

    @model_validator(mode="after")
    def _span(self):
        if self.end <= self.start:
            raise ValueError("burst end must be after start")
        return self


class EnvironmentConfig(Strict):
    profile: Literal["benign", "harsh", "episodic"] = "benign"
    cadence: int = Field(100, ge=1)
    bursts: tuple[BurstConfig, ...] = ()
    temp_per_flux: float = 2.0

    @model_validator(mode="after")
    def _bursts(self):
        if self.profile == "episodic" and not self.bursts:
            raise ValueError("episodic profile needs at least one burst")
        return self


class PortCostConfig(Strict):
    t_frame_read: int = Field(1, ge=0)
    t_frame_write: int = Field(1, ge=0)
    energy_read: float = Field(1.0, ge=0)
    energy_write: float = Field(2.0, ge=0)


class NoScrubConfig(Strict):
    kind: Literal["no_scrub"] = "no_scrub"


class BlindFullConfig(Strict):
    kind: Literal["blind_full"] = "blind_full"
    period: int = Field(100, ge=1)


class BlindPartialConfig(Strict):
    kind: Literal["blind_partial"] = "blind_partial"
    period: int = Field(100, ge=1)
    frames: Optional[tuple[int, ...]] = None  # default: the reconfigurable partition


class ReadbackCompareConfig(Strict):
    kind: Literal["readback_compare"] = "readback_compare"
    period: int = Field(100, ge=1)
    frames: Optional[tuple[int, ...]] = None  # default: whole device


class SecDedConfig(Strict):
    kind: Literal["secded_repair"] = "secded_repair"
    scan_period: int = Field(100, ge=1)
    frames: Optional[tuple[int, ...]] = None


class BudgetedConfig(Strict):
    kind: Literal["budgeted"] = "budgeted"
    window: int = Field(10, ge=1)
    k_max: int = Field(3, ge=1)


class FpScrubPolicyConfig(Strict):
    kind: Literal["fpscrub"] = "fpscrub"
    w_f: float = Field(1.0, ge=0)
    w_t: float = Field(0.5, ge=0)
    w_v: float = Field(2.0, ge=0)
    alpha: float = Field(0.1, gt=0, le=1)
    p_min: int = Field(100, ge=1)
    p_max: int = Field(10_000, ge=1)
    theta_low: float = 1.5
    theta_high: float = 6.0
    t_base: float = 40.0
    t_span: float = Field(20.0, gt=0)
    cooldown: int = Field(1000, ge=0)
    io_monitor: bool = True

    @model_validator(mode="after")
    def _order(self):
        if self.p_min > self.p_max:
            raise ValueError("p_min must be <= p_max")
        if self.theta_low > self.theta_high:
            raise ValueError("theta_low must be <= theta_high")
        return self


PolicyConfig = Annotated[
    Union[NoScrubConfig, BlindFullConfig, BlindPartialConfig, ReadbackCompareConfig,
          SecDedConfig, BudgetedConfig, FpScrubPolicyConfig],
    Field(discriminator="kind"),
]


class ExperimentConfig(Strict):
    seed: int = 0
    design_seed: int = 0
    duration: int = Field(42_000, ge=1)
    workload: WorkloadConfig = WorkloadConfig()
    device: DeviceConfig = DeviceConfig()
    dut: DutConfig = DutConfig()
    faults: FaultConfig = FaultConfig()
    sensitivity: SensitivityConfig = SensitivityConfig()
    environment: EnvironmentConfig = EnvironmentConfig()
    policy: PolicyConfig = NoScrubConfig()
    port_cost: PortCostConfig = PortCostConfig()
    compute_fraction: float = Field(0.1, ge=0, lt=1)
    latency_threshold: Optional[int] = Field(None, ge=0)

    @model_validator(mode="after")
    def _cadence(self):
        if self.duration % self.environment.cadence:
            raise ValueError("environment.cadence must divide duration")
        frames = getattr(self.policy, "frames", None)
        if frames is not None and (not frames or min(frames) < 0 or max(frames) >= self.device.frame_count):
            raise ValueError("policy.frames must be a non-empty subset of the device frames")
        return self

    def fingerprint(self) -> str:
        return fingerprint(self.model_dump(mode="json"))


class CampaignConfig(Strict):
    root_seed: int = 1
    size: int = Field(1000, ge=1)
    policies: tuple[PolicyConfig, ...] = (NoScrubConfig(),)
    experiment: ExperimentConfig = ExperimentConfig()
    output_dir: str = "results"
    workers: int = Field(1, ge=1)
    root_cause: bool = True
    keep_traces: bool = False

    def fingerprint(self) -> str:
        data = self.model_dump(mode="json")
        # where results go and how they are computed does not change them
        for key in ("output_dir", "workers"):
            data.pop(key)
        return fingerprint(data)


def fingerprint(data) -> str:
    canonical = json.dumps({"code_version": __version__, "config": data}, sort_keys=True,
                           separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()[:16]


def derive_seed(root: int, tag: str) -> int:
    digest = hashlib.sha256(f"{root}/{tag}".encode()).digest()
    return int.from_bytes(digest[:8], "little") & ((1 << 63) - 1)
