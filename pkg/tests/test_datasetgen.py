import json
import re

import pytest

from codriver.core.prompts import build_system_prompt
from codriver.services.datasetgen import MISSIONS, enumerate_grid, generate, validate, write_dataset


def test_grid_covers_every_combination():
    grid = enumerate_grid()

    assert len(grid) == 54
    assert len({scene.render() for scene in grid}) == 54
    assert all(scene.surface.value == ("wet" if scene.weather.value == "rainy" else "dry") for scene in grid)


def test_one_sample_per_cell(policy_table):
    samples = list(generate(1, policy_table))

    assert len(samples) == 54
    assert [s.scene for s in samples] == enumerate_grid()
    assert samples[0].id == "00-000000"


@pytest.mark.parametrize("per_combo", [1, 10])
def test_generated_dataset_validates(tmp_path, policy_table, per_combo):
    path = tmp_path / "dataset.jsonl"
    count = write_dataset(generate(per_combo, policy_table, seed=3), path)

    report = validate(path, policy_table)

    assert count == 54 * per_combo
    assert report.total == count
    assert report.ok, report.violations[:3]


def test_generation_is_seeded(policy_table):
    same_a = [s.question for s in generate(3, policy_table, seed=1)]
    same_b = [s.question for s in generate(3, policy_table, seed=1)]
    other = [s.question for s in generate(3, policy_table, seed=2)]

    assert same_a == same_b
    assert same_a != other


def test_question_carries_prompt_and_scene(policy_table):
    sample = next(generate(1, policy_table))

    assert sample.question.startswith(build_system_prompt(*_mission_and_destination(sample.question)))
    assert sample.scene.render() in sample.question


def _mission_and_destination(question):
    mission = re.search(r"Mission: (.*)", question).group(1)
    destination = re.search(r"Destination: (.*)", question).group(1)
    assert mission in MISSIONS
    return mission, destination


def test_record_layout(policy_table):
    record = next(generate(1, policy_table)).to_record()

    assert [turn["from"] for turn in record["conversations"]] == ["user", "assistant"]
    assert record["conversations"][1]["value"].startswith("root {")
    assert set(record["scene"]) == {"distance", "weather", "light", "surface", "locality"}


def test_per_combo_must_be_positive(policy_table):
    with pytest.raises(ValueError):
        list(generate(0, policy_table))


def _dataset_lines(tmp_path, policy_table):
    path = tmp_path / "dataset.jsonl"
    write_dataset(generate(1, policy_table), path)
    return path, [json.loads(line) for line in path.read_text().splitlines()]


def _rewrite(path, records):
    path.write_text("".join(
        (record if isinstance(record, str) else json.dumps(record)) + "\n" for record in records
    ))


def test_validate_flags_each_fault(tmp_path, policy_table):
    path, records = _dataset_lines(tmp_path, policy_table)
    answer = records[1]["conversations"][1]["value"]
    records[1]["conversations"][1]["value"] = re.sub(r"max_speed = [0-9.]+", "max_speed = 71", answer)
    records[2]["scene"]["locality"] = "highway" if records[2]["scene"]["locality"] != "highway" else "city"
    records[3]["conversations"][1]["value"] = records[3]["conversations"][1]["value"].rstrip()[:-1]
    records[4] = "{not json"
    records[5] = {"id": "x"}
    _rewrite(path, records)

    report = validate(path, policy_table)

    assert report.total == 54
    assert [(v.line, v.error) for v in report.violations] == [
        (2, "DirectiveMismatch"),
        (3, "SceneMismatch"),
        (4, "UnbalancedBraces"),
        (5, "MalformedRecord"),
        (6, "MalformedRecord"),
    ]


def test_validate_missing_file(tmp_path, policy_table):
    with pytest.raises(FileNotFoundError):
        validate(tmp_path / "absent.jsonl", policy_table)
