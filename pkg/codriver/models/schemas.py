# Pydantic models for scene labels, behavior directives and the analyzer wire format
# These models define the structure of data exchanged between the simulator, the
# analyzer (mock or remote) and the policy stage

import re
from enum import Enum
from typing import Dict, Literal, Optional, Type

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class Weather(str, Enum):
    CLEAR = "clear"
    RAINY = "rainy"
    FOGGY = "foggy"


class Light(str, Enum):
    BRIGHT = "bright"
    GLOOMY = "gloomy"
    DARK = "dark"


class Locality(str, Enum):
    CITY = "city"
    TOWN = "town"
    HIGHWAY = "highway"


class Surface(str, Enum):
    DRY = "dry"
    WET = "wet"


class Distance(str, Enum):
    SAFE = "safe"
    UNSAFE = "unsafe"


class ControlType(str, Enum):
    """Severity tiers, least severe first"""
    SPORT = "sport"
    NORMAL = "normal"
    CAUTIOUS = "cautious"
    DEFENSIVE = "defensive"

    @property
    def severity(self) -> int:
        return list(ControlType).index(self)


class AnalyzerSource(str, Enum):
    MOCK = "mock"
    REMOTE = "remote"


# Category name -> label taxonomy, in the order the environment sequence lists them
CATEGORY_ENUMS: Dict[str, Type[Enum]] = {
    "distance": Distance,
    "weather": Weather,
    "light": Light,
    "surface": Surface,
    "locality": Locality,
}
CATEGORIES = tuple(CATEGORY_ENUMS)

Category = Literal["distance", "weather", "light", "surface", "locality"]

# Numeric directive parameters in the order the driving suggestion lists them
DIRECTIVE_NUMERIC_FIELDS = (
    "max_speed",
    "max_brake",
    "max_throttle",
    "max_acceleration",
    "max_steering_speed",
)

_SCENE_PAIR = re.compile(r"([a-z_]+)\s*=\s*([A-Za-z_]+)")


class SceneLabels(BaseModel):
    """The five categorical scene labels shared by ground truth and estimates"""
    model_config = ConfigDict(frozen=True)

    weather: Weather
    light: Light
    locality: Locality
    surface: Surface
    distance: Distance

    def label(self, category: str) -> str:
        return getattr(self, category).value

    def labels(self) -> Dict[str, str]:
        return {category: self.label(category) for category in CATEGORIES}

    @property
    def condition_label(self) -> str:
        """Compact report label, e.g. 'rainy+gloomy'"""
        return f"{self.weather.value}+{self.light.value}"

    def render(self) -> str:
        """Scene descriptor text standing in for a camera frame"""
        return "; ".join(f"{category}={self.label(category)}" for category in
                         ("weather", "light", "locality", "surface", "distance"))

    @classmethod
    def from_scene_text(cls, text: str) -> "SceneLabels":
        pairs = dict(_SCENE_PAIR.findall(text))
        return cls(**{category: pairs.get(category, "").lower() for category in CATEGORIES})


class ScenarioConditions(SceneLabels):
    """Ground-truth world state for one scenario segment"""

    @model_validator(mode="after")
    def _rain_wets_surface(self):
        if self.weather is Weather.RAINY and self.surface is not Surface.WET:
            raise ValueError("rainy weather requires surface=wet")
        return self


class EnvironmentEstimate(SceneLabels):
    """Analyzer's predicted labels for one frame"""
    frame_id: int = Field(ge=0)
    source: AnalyzerSource = AnalyzerSource.MOCK


class BehaviorDirective(BaseModel):
    """Control type plus the five actuation/behavior limits"""
    model_config = ConfigDict(frozen=True, allow_inf_nan=False)

    control_type: ControlType
    # km/h
    max_speed: float = Field(gt=0)
    # fractions of full pedal travel
    max_brake: float = Field(ge=0, le=1)
    max_throttle: float = Field(ge=0, le=1)
    # m/s^2
    max_acceleration: float = Field(gt=0)
    # rad/s
    max_steering_speed: float = Field(gt=0)

    @property
    def max_speed_mps(self) -> float:
        return self.max_speed / 3.6


class SceneFrame(BaseModel):
    """One camera frame at desk scale: ground truth plus an optional image reference"""
    model_config = ConfigDict(frozen=True)

    frame_id: int = Field(ge=0)
    timestamp: float = Field(ge=0)
    truth: ScenarioConditions
    # File path or base64 payload forwarded in remote mode
    image_ref: Optional[str] = None


class AnalyzerConfig(BaseModel):
    """Mock analyzer imperfection and timing"""
    model_config = ConfigDict(frozen=True, allow_inf_nan=False)

    per_category_error_rate: Dict[str, float] = Field(default_factory=dict)
    rng_seed: int = Field(default=0, ge=0, lt=2**64)
    # Simulated seconds between a frame and its analysis becoming available
    response_latency: float = Field(default=0.2, ge=0)

    @field_validator("per_category_error_rate")
    @classmethod
    def _check_rates(cls, rates: Dict[str, float]) -> Dict[str, float]:
        for category, rate in rates.items():
            if category not in CATEGORY_ENUMS:
                raise ValueError(f"unknown category {category!r}")
            if not 0.0 <= rate <= 1.0:
                raise ValueError(f"error rate for {category} must be within [0, 1], got {rate}")
        return rates

    def error_rate(self, category: str) -> float:
        return self.per_category_error_rate.get(category, 0.0)

    @classmethod
    def uniform(cls, rate: float, **kwargs) -> "AnalyzerConfig":
        return cls(per_category_error_rate={category: rate for category in CATEGORIES}, **kwargs)


class LabelRecord(BaseModel):
    """One predicted/true label pair for accuracy evaluation"""
    model_config = ConfigDict(frozen=True)

    frame_id: int
    category: Category
    predicted: str
    truth: str

    @property
    def correct(self) -> bool:
        return self.predicted.strip().lower() == self.truth.strip().lower()


# ================================================================
# REMOTE ANALYZER WIRE FORMAT
# ================================================================

class AnalyzeRequest(BaseModel):
    """Request body for POST /v1/analyze"""
    system_prompt: str
    image_b64: Optional[str] = None
    scene_text: Optional[str] = None
    frame_id: int


class AnalyzeResponse(BaseModel):
    """Response body for POST /v1/analyze; text must contain one root block"""
    text: str
