# Metrics service
# Driving smoothness (relative-extrema count of the acceleration series over running time)
# and per-category label accuracy of the scene analyzer.

import json
import logging
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator
from scipy.signal import argrelextrema

from codriver.core.errors import DegenerateSeries, MalformedRecord, MissingCategory
from codriver.models.schemas import CATEGORIES, CATEGORY_ENUMS, LabelRecord, SceneLabels

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


class TimeSeries(BaseModel):
    """Equally spaced samples; running time defaults to (n - 1) * dt"""
    model_config = ConfigDict(frozen=True, allow_inf_nan=False)

    values: List[float] = Field(min_length=2)
    dt: float = Field(gt=0)
    running_time: Optional[float] = Field(default=None, ge=0)

    @property
    def T(self) -> float:
        if self.running_time is not None:
            return self.running_time
        return (len(self.values) - 1) * self.dt


class SmoothnessScore(BaseModel):
    model_config = ConfigDict(frozen=True)

    # 1/s, lower is smoother
    f_dot_t: float
    extrema_count: int = Field(ge=0)
    running_time: float = Field(gt=0)

    @model_validator(mode="after")
    def _consistent(self):
        if self.f_dot_t != self.extrema_count * 0.5 / self.running_time:
            raise ValueError("f_dot_t must equal (extrema_count / 2) / running_time")
        return self


def relative_extrema(series: TimeSeries) -> Tuple[np.ndarray, np.ndarray]:
    """
    Indices of strict relative minima and maxima

    Endpoints are never extrema and plateaus yield none.
    """
    x = np.asarray(series.values, dtype=float)
    if x.size < 3:
        empty = np.array([], dtype=np.intp)
        return empty, empty
    minima = argrelextrema(x, np.less, order=1, mode="clip")[0]
    maxima = argrelextrema(x, np.greater, order=1, mode="clip")[0]
    return minima, maxima


def smoothness(series: TimeSeries) -> SmoothnessScore:
    """Half the number of peaks and valleys per second of running time"""
    T = series.T
    if T <= 0:
        raise DegenerateSeries(f"running time must be positive, got {T}")
    minima, maxima = relative_extrema(series)
    count = len(np.concatenate((minima, maxima)))
    return SmoothnessScore(f_dot_t=count * 0.5 / T, extrema_count=count, running_time=T)


def read_drive_log(path: PathLike) -> pd.DataFrame:
    """DriveLog CSV as written by the simulator"""
    frame = pd.read_csv(path)
    missing = [column for column in ("t", "accel_mps2") if column not in frame.columns]
    if missing:
        raise ValueError(f"{path} is not a drive log, missing columns {missing}")
    return frame


def smoothness_from_log(path: PathLike) -> SmoothnessScore:
    """Smoothness of the acceleration column; T is the logged time span"""
    frame = read_drive_log(path)
    t = frame["t"].to_numpy(dtype=float)
    if len(t) < 2:
        raise DegenerateSeries(f"{path} holds {len(t)} samples, need at least 2")
    series = TimeSeries(
        values=frame["accel_mps2"].astype(float).tolist(),
        dt=float(t[1] - t[0]),
        running_time=float(t[-1] - t[0]),
    )
    score = smoothness(series)
    logger.info(f"[METRICS] {path}: {score.extrema_count} extrema over {score.running_time:.2f}s, "
                f"F={score.f_dot_t:.4f}")
    return score


# ================================================================
# LABEL ACCURACY
# ================================================================

class CategoryAccuracy(BaseModel):
    model_config = ConfigDict(frozen=True)

    correct: int = Field(ge=0)
    total: int = Field(gt=0)

    @property
    def accuracy(self) -> float:
        return self.correct / self.total


class AccuracyReport(BaseModel):
    """Per-category accuracy fractions and their unweighted mean"""
    model_config = ConfigDict(frozen=True)

    categories: Dict[str, CategoryAccuracy]

    @property
    def per_category(self) -> Dict[str, float]:
        return {name: counts.accuracy for name, counts in self.categories.items()}

    @property
    def macro_average(self) -> float:
        return sum(self.per_category.values()) / len(self.categories)

    def display(self) -> Dict[str, str]:
        shown = {name: format_percent(value) for name, value in self.per_category.items()}
        shown["average"] = format_percent(self.macro_average)
        return shown


def format_percent(fraction: float) -> str:
    """Two decimals, half-up, in percent"""
    return str(Decimal(str(fraction * 100)).quantize(Decimal("0.01"), rounding=ROUND_HALF_UP))


def accuracy_report(records: Iterable[LabelRecord]) -> AccuracyReport:
    correct = {category: 0 for category in CATEGORIES}
    total = {category: 0 for category in CATEGORIES}
    for record in records:
        total[record.category] += 1
        correct[record.category] += record.correct

    missing = [category for category in CATEGORIES if total[category] == 0]
    if missing:
        raise MissingCategory(f"no records for {', '.join(missing)}")
    return AccuracyReport(categories={
        category: CategoryAccuracy(correct=correct[category], total=total[category])
        for category in CATEGORIES
    })


def records_from_drive(readings: Iterable[Tuple[int, SceneLabels, SceneLabels]]) -> List[LabelRecord]:
    """LabelRecords from (frame_id, predicted, truth) triples"""
    return [
        LabelRecord(frame_id=frame_id, category=category,
                    predicted=predicted.label(category), truth=truth.label(category))
        for frame_id, predicted, truth in readings
        for category in CATEGORIES
    ]


def label_records_from_rates(rates_pct: Union[Mapping[str, float], Sequence[float]],
                             total: int = 10000) -> List[LabelRecord]:
    """
    Synthetic records hitting the given per-category accuracies

    Sequences follow the category order distance, weather, light, surface, locality.
    """
    if not isinstance(rates_pct, Mapping):
        rates_pct = dict(zip(CATEGORIES, rates_pct))
    records = []
    for category, rate in rates_pct.items():
        members = [member.value for member in CATEGORY_ENUMS[category]]
        n_correct = int(round(rate * total / 100))
        for frame_id in range(total):
            predicted = members[0] if frame_id < n_correct else members[1]
            records.append(LabelRecord(frame_id=frame_id, category=category,
                                       predicted=predicted, truth=members[0]))
    return records


def read_label_records(path: PathLike) -> List[LabelRecord]:
    """Labeled-prediction JSONL, one {frame_id, category, predicted, truth} per line"""
    records = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                records.append(LabelRecord.model_validate_json(line))
            except ValidationError as exc:
                raise MalformedRecord(f"{path}:{line_no}: {exc.errors()[0]['msg']}") from None
    return records


# ================================================================
# REPORTS
# ================================================================

def write_smoothness_report(scores: Mapping[str, SmoothnessScore], out_dir: PathLike) -> Dict[str, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {"json": out_dir / "smoothness.json", "csv": out_dir / "smoothness.csv"}
    paths["json"].write_text(json.dumps(
        {name: score.model_dump() for name, score in scores.items()}, indent=2,
    ) + "\n", encoding="utf-8")
    pd.DataFrame(
        [{"log": name, **score.model_dump()} for name, score in scores.items()],
        columns=["log", "f_dot_t", "extrema_count", "running_time"],
    ).to_csv(paths["csv"], index=False, lineterminator="\n")
    return paths


def write_accuracy_report(report: AccuracyReport, out_dir: PathLike) -> Dict[str, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {"json": out_dir / "accuracy.json", "csv": out_dir / "accuracy.csv"}
    paths["json"].write_text(json.dumps({
        "per_category": report.per_category,
        "macro_average": report.macro_average,
        "display": report.display(),
    }, indent=2) + "\n", encoding="utf-8")
    pd.DataFrame(
        [{"category": name, "accuracy": counts.accuracy, "correct": counts.correct, "total": counts.total}
         for name, counts in report.categories.items()],
    ).to_csv(paths["csv"], index=False, lineterminator="\n")
    return paths
