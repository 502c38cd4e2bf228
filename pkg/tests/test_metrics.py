import json
import random
from pathlib import Path

import numpy as np
import pytest
from pydantic import ValidationError

from codriver.core.errors import DegenerateSeries, MalformedRecord, MissingCategory
from codriver.models.schemas import LabelRecord, SceneLabels
from codriver.services.metrics import (
    SmoothnessScore,
    TimeSeries,
    accuracy_report,
    label_records_from_rates,
    read_label_records,
    records_from_drive,
    relative_extrema,
    smoothness,
    smoothness_from_log,
    write_accuracy_report,
    write_smoothness_report,
)

FIXTURE_DIR = Path(__file__).resolve().parent / "fixtures"


def brute_force_extrema(values):
    x = np.asarray(values)
    middle = x[1:-1]
    peaks = (middle > x[:-2]) & (middle > x[2:])
    valleys = (middle < x[:-2]) & (middle < x[2:])
    return int(peaks.sum() + valleys.sum())


def test_single_peak():
    score = smoothness(TimeSeries(values=[0, 1, 0], dt=1.0))
    assert score == SmoothnessScore(f_dot_t=0.25, extrema_count=1, running_time=2.0)


def test_monotone_and_flat_series_have_no_extrema():
    assert smoothness(TimeSeries(values=list(range(10)), dt=0.1)).extrema_count == 0
    assert smoothness(TimeSeries(values=[2.0] * 10, dt=0.1)).extrema_count == 0


def test_plateaus_are_not_extrema():
    minima, maxima = relative_extrema(TimeSeries(values=[0, 1, 1, 0, -1, -1, 0], dt=1.0))
    assert minima.size == 0
    assert maxima.size == 0


def test_two_samples():
    score = smoothness(TimeSeries(values=[0.0, 5.0], dt=0.5))
    assert score.extrema_count == 0
    assert score.f_dot_t == 0.0


def test_too_short_series():
    with pytest.raises(ValidationError):
        TimeSeries(values=[1.0], dt=1.0)


def test_zero_running_time():
    with pytest.raises(DegenerateSeries):
        smoothness(TimeSeries(values=[0.0, 1.0, 0.0], dt=1.0, running_time=0.0))


def test_matches_brute_force_scan():
    rng = np.random.default_rng(1234)
    for _ in range(1000):
        n = int(rng.integers(3, 10_001))
        if rng.random() < 0.5:
            values = rng.standard_normal(n)
        else:
            values = rng.integers(-3, 4, size=n).astype(float)
        dt = float(rng.uniform(0.001, 1.0))

        score = smoothness(TimeSeries(values=values.tolist(), dt=dt))

        expected = brute_force_extrema(values)
        assert score.extrema_count == expected
        assert score.f_dot_t == pytest.approx(expected * 0.5 / ((n - 1) * dt), rel=1e-12)


@pytest.mark.parametrize("frequency", [1, 2, 3, 4, 5])
def test_sine_frequency_is_recovered(frequency):
    rate = 100 * frequency
    t = np.arange(10 * rate + 1) / rate
    score = smoothness(TimeSeries(values=np.sin(2 * np.pi * frequency * t).tolist(), dt=1 / rate))

    assert abs(score.f_dot_t - frequency) / frequency <= 0.02


def test_positive_scaling_keeps_extrema():
    values = np.random.default_rng(3).standard_normal(500)
    base = smoothness(TimeSeries(values=values.tolist(), dt=0.05))
    scaled = smoothness(TimeSeries(values=(values * 7.5).tolist(), dt=0.05))
    assert scaled == base


def test_frequency_scales_with_sample_spacing():
    values = np.random.default_rng(4).standard_normal(500).tolist()
    coarse = smoothness(TimeSeries(values=values, dt=0.1))
    fine = smoothness(TimeSeries(values=values, dt=0.05))

    assert coarse.extrema_count == fine.extrema_count
    assert fine.f_dot_t == pytest.approx(2 * coarse.f_dot_t)


def test_fixture_log_matches_golden_value():
    golden = json.loads((FIXTURE_DIR / "drive_log.smoothness.json").read_text())
    score = smoothness_from_log(FIXTURE_DIR / "drive_log.csv")
    assert score.model_dump() == pytest.approx(golden)


def test_log_without_acceleration(tmp_path):
    path = tmp_path / "other.csv"
    path.write_text("t,speed\n0,1\n1,2\n")
    with pytest.raises(ValueError):
        smoothness_from_log(path)


def test_log_with_one_sample(tmp_path):
    path = tmp_path / "short.csv"
    path.write_text("t,accel_mps2\n0,1\n")
    with pytest.raises(DegenerateSeries):
        smoothness_from_log(path)


def test_smoothness_report_files(tmp_path):
    scores = {"a.csv": SmoothnessScore(f_dot_t=0.375, extrema_count=3, running_time=4.0)}
    paths = write_smoothness_report(scores, tmp_path)

    assert json.loads(paths["json"].read_text()) == {"a.csv": scores["a.csv"].model_dump()}
    assert paths["csv"].read_text().splitlines()[0] == "log,f_dot_t,extrema_count,running_time"


# ================================================================
# ACCURACY
# ================================================================

def test_averaged_rates_round_half_up():
    report = accuracy_report(label_records_from_rates([98.67, 98.61, 97.08, 97.81, 92.69]))

    shown = report.display()
    assert shown["average"] == "96.97"
    assert shown["distance"] == "98.67"
    assert shown["locality"] == "92.69"


def test_macro_average_is_unweighted_mean_of_rows():
    # the printed average for these rows is 97.82; their mean is 97.74
    report = accuracy_report(label_records_from_rates([97.47, 92.94, 99.8, 98.8, 99.7]))
    assert report.display()["average"] == "97.74"


def test_average_ignores_category_sizes():
    records = label_records_from_rates({"distance": 50.0}, total=10)
    records += label_records_from_rates({c: 100.0 for c in ("weather", "light", "surface", "locality")}, total=1000)

    assert accuracy_report(records).macro_average == pytest.approx(0.9)


def test_missing_category():
    records = label_records_from_rates({"distance": 90.0, "weather": 90.0}, total=10)
    with pytest.raises(MissingCategory, match="light"):
        accuracy_report(records)


def test_record_order_does_not_matter():
    records = label_records_from_rates([91.0, 92.0, 93.0, 94.0, 95.0], total=200)
    shuffled = list(records)
    random.Random(0).shuffle(shuffled)
    assert accuracy_report(shuffled) == accuracy_report(records)


def test_label_comparison_ignores_case_and_whitespace():
    assert LabelRecord(frame_id=0, category="weather", predicted=" Rainy", truth="rainy").correct


def test_records_from_drive():
    truth = SceneLabels(weather="rainy", light="gloomy", locality="town", surface="wet", distance="safe")
    predicted = SceneLabels(**{**truth.labels(), "light": "dark"})

    records = records_from_drive([(7, predicted, truth)])

    assert len(records) == 5
    assert {r.category for r in records if not r.correct} == {"light"}
    assert all(r.frame_id == 7 for r in records)


def test_read_label_records(tmp_path):
    path = tmp_path / "pred.jsonl"
    path.write_text(
        '{"frame_id": 0, "category": "weather", "predicted": "rainy", "truth": "rainy"}\n'
        "\n"
        '{"frame_id": 1, "category": "light", "predicted": "dark", "truth": "gloomy"}\n'
    )
    records = read_label_records(path)

    assert [r.correct for r in records] == [True, False]


def test_malformed_label_record_names_the_line(tmp_path):
    path = tmp_path / "pred.jsonl"
    path.write_text(
        '{"frame_id": 0, "category": "weather", "predicted": "rainy", "truth": "rainy"}\n'
        '{"frame_id": 1, "category": "mood", "predicted": "x", "truth": "y"}\n'
    )
    with pytest.raises(MalformedRecord, match=r"pred\.jsonl:2"):
        read_label_records(path)


def test_accuracy_report_files(tmp_path):
    report = accuracy_report(label_records_from_rates([98.67, 98.61, 97.08, 97.81, 92.69]))
    paths = write_accuracy_report(report, tmp_path)

    data = json.loads(paths["json"].read_text())
    assert data["display"]["average"] == "96.97"
    assert len(paths["csv"].read_text().splitlines()) == 6
