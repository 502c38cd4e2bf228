# Dataset generation service
# Builds the question/answer prompt set used to fine-tune the scene analyzer: one
# record per (scene, phrasing) with the behavior-tree answer from the policy table.

import itertools
import json
import logging
from pathlib import Path
from typing import Iterable, Iterator, List, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from codriver.core.errors import BehaviorTreeError
from codriver.core.prompts import build_system_prompt
from codriver.models.behavior_tree import directive_from_tree, parse_behavior_tree, serialize_behavior_tree, tree_from_reading
from codriver.models.schemas import Distance, Light, Locality, ScenarioConditions, SceneLabels, Surface, Weather
from codriver.services.policy import PolicyTable, lookup

logger = logging.getLogger(__name__)

MISSIONS = (
    "drive safely along the route",
    "deliver the cargo on time without risking the vehicle",
    "follow the road to the next waypoint",
    "take the passenger home comfortably",
)

DESTINATIONS = (
    "end of route",
    "the town gate",
    "the highway exit",
    "the city center",
)

QUESTIONS = (
    "Front camera: {scene}\nAnalyze the scene and give the driving suggestion.",
    "The ego vehicle sees: {scene}\nWhat should the driving behavior be?",
    "Scene description: {scene}\nIdentify the environment, then suggest control limits.",
    "Current view ({scene}). Answer with the behavior tree.",
)


class DatasetSample(BaseModel):
    """One question/answer pair for a scene"""
    model_config = ConfigDict(frozen=True)

    id: str
    scene: ScenarioConditions
    image_ref: Optional[str] = None
    question: str
    answer: str

    def to_record(self) -> dict:
        return {
            "id": self.id,
            "image": self.image_ref,
            "conversations": [
                {"from": "user", "value": self.question},
                {"from": "assistant", "value": self.answer},
            ],
            "scene": self.scene.labels(),
        }


def enumerate_grid() -> List[ScenarioConditions]:
    """
    All 54 scene combinations, weather-major

    Order: weather, light, locality, distance; surface follows weather (rainy is wet).
    """
    return [
        ScenarioConditions(
            weather=weather,
            light=light,
            locality=locality,
            surface=Surface.WET if weather is Weather.RAINY else Surface.DRY,
            distance=distance,
        )
        for weather, light, locality, distance in itertools.product(Weather, Light, Locality, Distance)
    ]


def _phrasing(seed: int, cell: int, index: int) -> Tuple[str, str, str]:
    state = np.random.SeedSequence([seed, cell, index]).generate_state(3, dtype=np.uint64)
    return (
        MISSIONS[int(state[0]) % len(MISSIONS)],
        DESTINATIONS[int(state[1]) % len(DESTINATIONS)],
        QUESTIONS[int(state[2]) % len(QUESTIONS)],
    )


def generate(per_combo: int, table: PolicyTable, seed: int = 0) -> Iterator[DatasetSample]:
    """per_combo samples for every grid cell, cell by cell"""
    if per_combo < 1:
        raise ValueError(f"per_combo must be >= 1, got {per_combo}")
    for cell, scene in enumerate(enumerate_grid()):
        answer = serialize_behavior_tree(tree_from_reading(scene, lookup(scene, table)))
        for index in range(per_combo):
            mission, destination, question = _phrasing(seed, cell, index)
            yield DatasetSample(
                id=f"{cell:02d}-{index:06d}",
                scene=scene,
                question=build_system_prompt(mission, destination) + "\n" + question.format(scene=scene.render()),
                answer=answer,
            )


def write_dataset(samples: Iterable[DatasetSample], path: Union[str, Path]) -> int:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    with open(path, "w", encoding="utf-8") as fh:
        for sample in samples:
            fh.write(json.dumps(sample.to_record(), ensure_ascii=False) + "\n")
            count += 1
    logger.info(f"[DATASET] Wrote {count} samples to {path}")
    return count


# ================================================================
# VALIDATION
# ================================================================

class Violation(BaseModel):
    line: int
    error: str
    message: str


class ValidationReport(BaseModel):
    total: int = 0
    violations: List[Violation] = Field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


def _answer(record: dict) -> str:
    conversations = record["conversations"]
    answers = [turn["value"] for turn in conversations if turn.get("from") == "assistant"]
    if not answers or not isinstance(answers[-1], str):
        raise KeyError("assistant answer")
    return answers[-1]


def _check_line(line: str, table: PolicyTable) -> Optional[Violation]:
    try:
        record = json.loads(line)
        answer = _answer(record)
    except (json.JSONDecodeError, KeyError, TypeError, AttributeError) as exc:
        return Violation(line=0, error="MalformedRecord", message=f"unreadable record: {exc}")

    try:
        labels, directive = directive_from_tree(parse_behavior_tree(answer))
    except BehaviorTreeError as exc:
        return Violation(line=0, error=type(exc).__name__, message=str(exc))

    scene = labels
    if record.get("scene") is not None:
        try:
            scene = ScenarioConditions.model_validate(record["scene"])
        except ValidationError as exc:
            return Violation(line=0, error="MalformedRecord", message=f"bad scene: {exc.errors()[0]['msg']}")
        if SceneLabels(**scene.labels()) != labels:
            return Violation(line=0, error="SceneMismatch",
                             message=f"answer reads {labels.render()}, scene is {scene.render()}")

    expected = lookup(scene, table)
    if directive != expected:
        return Violation(line=0, error="DirectiveMismatch",
                         message=f"answer suggests {directive.control_type.value}, "
                                 f"table gives {expected.control_type.value}")
    return None


def validate(path: Union[str, Path], table: PolicyTable) -> ValidationReport:
    """Check every line parses and its answer matches the policy lookup of its scene"""
    report = ValidationReport()
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            report.total += 1
            violation = _check_line(line, table)
            if violation is not None:
                report.violations.append(violation.model_copy(update={"line": line_no}))
    logger.info(f"[DATASET] {path}: {report.total} records, {len(report.violations)} violations")
    return report
