# Pydantic models for routes, simulator configuration, vehicle state and drive logs
# Units are SI inside the simulator (m, s, m/s); speed limits and directive speeds stay
# in km/h at the configuration and reporting boundary.

import bisect
import json
from enum import Enum
from pathlib import Path
from typing import Dict, List, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from codriver.core.errors import ConfigError
from codriver.models.schemas import (
    AnalyzerConfig,
    BehaviorDirective,
    Distance,
    LabelRecord,
    Light,
    ScenarioConditions,
    Weather,
)

# Speed limit before the first posted sign, km/h
INITIAL_SPEED_LIMIT = 50.0


class AgentKind(str, Enum):
    DEFAULT = "default"
    ADAPTIVE = "adaptive"


class SpeedSign(BaseModel):
    model_config = ConfigDict(frozen=True, allow_inf_nan=False)

    position: float = Field(ge=0)
    # km/h
    limit: float = Field(gt=0)


class ObstacleZone(BaseModel):
    """Stretch of road where the distance class is unsafe"""
    model_config = ConfigDict(frozen=True, allow_inf_nan=False)

    start: float = Field(ge=0)
    end: float

    @model_validator(mode="after")
    def _ordered(self):
        if not self.end > self.start:
            raise ValueError(f"obstacle zone end {self.end} must exceed start {self.start}")
        return self


class RouteSegment(BaseModel):
    model_config = ConfigDict(frozen=True, allow_inf_nan=False)

    start: float = Field(ge=0)
    end: float
    conditions: ScenarioConditions


class Route(BaseModel):
    """Synthetic road: posted limits, obstacle zones and per-segment conditions"""
    model_config = ConfigDict(frozen=True, allow_inf_nan=False)

    route_id: str = "synthetic"
    length: float = Field(gt=0)
    signs: List[SpeedSign] = Field(default_factory=list)
    obstacle_zones: List[ObstacleZone] = Field(default_factory=list)
    segments: List[RouteSegment]

    @model_validator(mode="after")
    def _check_layout(self):
        positions = [sign.position for sign in self.signs]
        if positions != sorted(positions) or any(p > self.length for p in positions):
            raise ValueError("signs must be sorted by position and lie within the route")
        starts = [zone.start for zone in self.obstacle_zones]
        if starts != sorted(starts) or any(zone.end > self.length for zone in self.obstacle_zones):
            raise ValueError("obstacle zones must be sorted and lie within the route")
        if not self.segments:
            raise ValueError("route needs at least one segment")
        cursor = 0.0
        for segment in self.segments:
            if segment.start != cursor or not segment.end > segment.start:
                raise ValueError(f"segments must partition [0, {self.length}] without gaps or overlaps")
            cursor = segment.end
        if cursor != self.length:
            raise ValueError(f"segments end at {cursor}, route length is {self.length}")
        return self

    def limit_at(self, position: float) -> float:
        """Most recent posted limit in km/h"""
        index = bisect.bisect_right([sign.position for sign in self.signs], position)
        return self.signs[index - 1].limit if index else INITIAL_SPEED_LIMIT

    def conditions_at(self, position: float) -> ScenarioConditions:
        """Ground truth at position; past the end the last segment persists"""
        segment = self.segments[-1]
        for candidate in self.segments:
            if position < candidate.end:
                segment = candidate
                break
        if any(zone.start <= position < zone.end for zone in self.obstacle_zones):
            return segment.conditions.model_copy(update={"distance": Distance.UNSAFE})
        return segment.conditions

    def with_uniform_conditions(self, conditions: ScenarioConditions) -> "Route":
        """Same geometry with a single segment of the given conditions"""
        return self.model_copy(update={
            "segments": [RouteSegment(start=0.0, end=self.length, conditions=conditions)],
        })

    @property
    def condition_label(self) -> str:
        labels = {segment.conditions.condition_label for segment in self.segments}
        return labels.pop() if len(labels) == 1 else "mixed"


class SimConfig(BaseModel):
    """Longitudinal plant and pipeline timing"""
    model_config = ConfigDict(frozen=True, allow_inf_nan=False)

    dt: float = Field(default=0.05, gt=0)
    # Kp, 1/s
    controller_gain: float = Field(default=0.5, gt=0)
    # Overrides of the disturbance coefficient keyed "weather+light"
    disturbance_coeff: Dict[str, float] = Field(default_factory=dict)
    rng_seed: int = Field(default=0, ge=0, lt=2**64)
    duration: float = Field(default=120.0, gt=0)
    # Mean road distance between bumps at unit coefficient-speed product, m
    bump_spacing: float = Field(default=5.0, gt=0)
    frame_rate: float = Field(default=10.0, gt=0)
    fallback_grace: float = Field(default=2.0, ge=0)
    label_vote_window: int = Field(default=21, ge=1)
    # |target - v| below which an undisturbed plant settles on target, m/s
    speed_tolerance: float = Field(default=1e-6, ge=0)
    # Band above the directive max_speed, km/h; the adaptive agent brakes at full max_brake beyond it
    cap_margin: float = Field(default=2.0, ge=0)

    @field_validator("disturbance_coeff")
    @classmethod
    def _check_coeffs(cls, coeffs: Dict[str, float]) -> Dict[str, float]:
        for key, value in coeffs.items():
            weather, _, light = key.partition("+")
            if weather not in {w.value for w in Weather} or light not in {l.value for l in Light}:
                raise ValueError(f"unknown condition pair {key!r}, expected 'weather+light'")
            if value < 0:
                raise ValueError(f"disturbance coefficient for {key} must be >= 0")
        if coeffs.get("clear+bright", 0.0) != 0.0:
            raise ValueError("clear+bright must have zero disturbance")
        return coeffs

    def disturbance_for(self, conditions: ScenarioConditions) -> float:
        key = conditions.condition_label
        if key in self.disturbance_coeff:
            return self.disturbance_coeff[key]
        if conditions.weather is Weather.FOGGY:
            return 0.03
        if conditions.weather is Weather.RAINY or conditions.light is not Light.BRIGHT:
            return 0.02
        return 0.0

    @property
    def steps_per_frame(self) -> int:
        return max(1, int(round(1.0 / (self.frame_rate * self.dt))))


class VehicleState(BaseModel):
    model_config = ConfigDict(frozen=True, allow_inf_nan=False)

    position: float = 0.0
    # m/s
    speed: float = Field(default=0.0, ge=0)
    # m/s^2
    acceleration: float = 0.0
    t: float = 0.0


class DirectiveEvent(BaseModel):
    t: float
    directive: BehaviorDirective


class RunMetadata(BaseModel):
    agent: AgentKind
    route_id: str
    seed: int
    conditions_label: str
    dt: float
    duration: float
    analyzer: str
    synthetic_route: bool = True
    manifest: Dict[str, Union[str, int, float, None]] = Field(default_factory=dict)


class DriveLog(BaseModel):
    """Vehicle state series with the directive tier active at each sample"""

    samples: List[VehicleState]
    tiers: List[str]
    events: List[DirectiveEvent] = Field(default_factory=list)
    metadata: RunMetadata
    label_records: List[LabelRecord] = Field(default_factory=list)
    analyzer_failures: int = 0

    @model_validator(mode="after")
    def _increasing_time(self):
        if len(self.tiers) != len(self.samples):
            raise ValueError("one directive tier per sample required")
        for before, after in zip(self.samples, self.samples[1:]):
            if not after.t > before.t:
                raise ValueError(f"timestamps must strictly increase ({before.t} -> {after.t})")
        return self


class Scenario(BaseModel):
    """Scenario file: route plus simulator and analyzer settings"""

    route: Route
    sim: SimConfig = Field(default_factory=SimConfig)
    analyzer: AnalyzerConfig = Field(default_factory=AnalyzerConfig)
    agent: AgentKind = AgentKind.ADAPTIVE


def load_scenario(path: Union[str, Path]) -> Scenario:
    """Read and validate a scenario JSON file"""
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read scenario {path}: {exc}") from None
    try:
        return Scenario.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(f"invalid scenario {path}: {exc}") from None
