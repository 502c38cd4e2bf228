# Policy service
# Step two of the analysis pipeline: maps scene labels to a behavior directive via a
# severity-tiered table, smooths noisy estimates and handles analyzer silence

import json
import logging
from collections import Counter, deque
from pathlib import Path
from typing import Deque, Dict, List, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from codriver.core.errors import InvalidPolicy
from codriver.models.schemas import (
    CATEGORIES,
    CATEGORY_ENUMS,
    BehaviorDirective,
    ControlType,
    SceneLabels,
)

logger = logging.getLogger(__name__)

DEFAULT_POLICY_PATH = Path(__file__).resolve().parent.parent / "data" / "default_policy.json"

# Grace window before a silent analyzer drops the agent to the defensive row, simulated seconds
DEFAULT_GRACE = 2.0

Clause = Dict[str, Tuple[str, ...]]


class PolicyRow(BaseModel):
    """One severity tier: trigger predicate plus directive values"""
    model_config = ConfigDict(frozen=True, allow_inf_nan=False)

    tier: ControlType
    # A dict is one conjunctive clause; a list of dicts is a disjunction of clauses.
    # List-valued fields inside a clause accept any of the listed labels.
    trigger: Union[Dict[str, Union[str, List[str]]], List[Dict[str, Union[str, List[str]]]]] = Field(default_factory=list)
    max_speed: float = Field(gt=0)
    max_brake: float = Field(ge=0, le=1)
    max_throttle: float = Field(ge=0, le=1)
    max_acceleration: float = Field(gt=0)
    max_steering_speed: float = Field(gt=0)

    @field_validator("trigger")
    @classmethod
    def _known_labels(cls, trigger):
        clauses = [trigger] if isinstance(trigger, dict) else trigger
        for clause in clauses:
            for category, allowed in clause.items():
                if category not in CATEGORY_ENUMS:
                    raise ValueError(f"unknown trigger field {category!r}")
                values = [allowed] if isinstance(allowed, str) else allowed
                legal = {member.value for member in CATEGORY_ENUMS[category]}
                for value in values:
                    if value not in legal:
                        raise ValueError(f"{category}={value!r} is not a valid label")
        return trigger

    @property
    def clauses(self) -> List[Clause]:
        raw = [self.trigger] if isinstance(self.trigger, dict) else self.trigger
        return [
            {category: (allowed,) if isinstance(allowed, str) else tuple(allowed)
             for category, allowed in clause.items()}
            for clause in raw
        ]

    def fires(self, labels: SceneLabels) -> bool:
        return any(
            all(labels.label(category) in allowed for category, allowed in clause.items())
            for clause in self.clauses
        )

    def directive(self) -> BehaviorDirective:
        return BehaviorDirective(
            control_type=self.tier,
            max_speed=self.max_speed,
            max_brake=self.max_brake,
            max_throttle=self.max_throttle,
            max_acceleration=self.max_acceleration,
            max_steering_speed=self.max_steering_speed,
        )


class PolicyTable(BaseModel):
    """Exactly one row per tier, ordered sport > normal > cautious > defensive"""
    model_config = ConfigDict(frozen=True)

    tiers: Tuple[PolicyRow, ...]

    @model_validator(mode="after")
    def _tier_ordering(self):
        names = [row.tier for row in self.tiers]
        if names != list(ControlType):
            raise ValueError(f"tiers must be listed {[t.value for t in ControlType]} once each, got {[t.value for t in names]}")
        for milder, harsher in zip(self.tiers, self.tiers[1:]):
            if not harsher.max_speed < milder.max_speed:
                raise ValueError(f"max_speed must strictly decrease from {milder.tier.value} to {harsher.tier.value}")
            if harsher.max_acceleration > milder.max_acceleration:
                raise ValueError(f"max_acceleration must not increase from {milder.tier.value} to {harsher.tier.value}")
        return self

    def row(self, tier: ControlType) -> PolicyRow:
        return self.tiers[tier.severity]

    @property
    def defensive(self) -> BehaviorDirective:
        return self.row(ControlType.DEFENSIVE).directive()

    @property
    def least_severe(self) -> BehaviorDirective:
        return self.tiers[0].directive()


def policy_table_from_dict(data: dict) -> PolicyTable:
    try:
        return PolicyTable.model_validate(data)
    except ValidationError as exc:
        raise InvalidPolicy(f"invalid policy table: {exc}") from None


def load_policy_table(path: Optional[Union[str, Path]] = None) -> PolicyTable:
    """Load and validate a policy table file; defaults to the shipped table"""
    path = Path(path) if path else DEFAULT_POLICY_PATH
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise InvalidPolicy(f"cannot read policy table {path}: {exc}") from None
    table = policy_table_from_dict(data)
    logger.debug(f"[POLICY] Loaded table from {path}")
    return table


def lookup(estimate: SceneLabels, table: PolicyTable) -> BehaviorDirective:
    """Directive of the most severe tier whose trigger fires; defensive when none does"""
    for row in reversed(table.tiers):
        if row.fires(estimate):
            return row.directive()
    return table.defensive


def resolve_directive(labels: SceneLabels, suggested: Optional[BehaviorDirective],
                      table: PolicyTable) -> BehaviorDirective:
    """
    Table directive for labels, unless the analyzer suggested values for the same tier

    Suggested actions override the table only when their control type matches the tier
    the table picks for the (filtered) labels.
    """
    expected = lookup(labels, table)
    if suggested is not None and suggested.control_type is expected.control_type:
        return suggested
    return expected


class LabelVote:
    """Per-category plurality over the most recent estimates (ties go to the latest label)"""

    def __init__(self, window: int = 21):
        if window < 1:
            raise ValueError("vote window must be >= 1")
        self.window = window
        self._history: Dict[str, Deque[str]] = {category: deque(maxlen=window) for category in CATEGORIES}

    def update(self, labels: SceneLabels) -> SceneLabels:
        voted = {}
        for category in CATEGORIES:
            history = self._history[category]
            history.append(labels.label(category))
            counts = Counter(history)
            best = max(counts.values())
            voted[category] = next(label for label in reversed(history) if counts[label] == best)
        return SceneLabels(**voted)


# ================================================================
# FALLBACK
# ================================================================

class FallbackState(BaseModel):
    """Hold-then-decay state owned by the pipeline orchestrator"""
    model_config = ConfigDict(frozen=True)

    current: BehaviorDirective
    defensive: BehaviorDirective
    # Simulated seconds since the last fresh directive
    since_fresh: float = 0.0
    grace: float = Field(default=DEFAULT_GRACE, ge=0)

    @classmethod
    def start(cls, table: PolicyTable, grace: float = DEFAULT_GRACE) -> "FallbackState":
        return cls(current=table.defensive, defensive=table.defensive, grace=grace)


def fallback_step(state: FallbackState, dt: float,
                  fresh: Optional[BehaviorDirective] = None) -> Tuple[FallbackState, BehaviorDirective]:
    """
    Advance the fallback timer by dt

    A fresh directive resets the timer and becomes current. Without one the current
    directive is held for the grace window, after which the defensive row applies.
    """
    if not dt > 0:
        raise ValueError(f"dt must be > 0, got {dt}")
    if fresh is not None:
        return state.model_copy(update={"current": fresh, "since_fresh": 0.0}), fresh

    since = state.since_fresh + dt
    if since > state.grace:
        if state.current != state.defensive:
            logger.warning(f"[POLICY] No fresh directive for {since:.2f}s, falling back to defensive")
        return state.model_copy(update={"current": state.defensive, "since_fresh": since}), state.defensive
    return state.model_copy(update={"since_fresh": since}), state.current
