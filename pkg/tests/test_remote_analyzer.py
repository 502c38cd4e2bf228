import importlib
import threading
import time

import pytest
from fastapi.testclient import TestClient

from codriver.core.errors import AnalyzerTimeout, ConfigError, ProtocolError, TransportError
from codriver.core.prompts import DEFAULT_DESTINATION, DEFAULT_MISSION, build_system_prompt
from codriver.main import create_app
from codriver.models.schemas import AnalyzerConfig, ScenarioConditions, SceneFrame
from codriver.routers.analyze import MockScript, ScriptStep, load_script
from codriver.services.analyzer import RemoteAnalyzer, encode_image, mock_analyze, remote_analyze

PROMPT = build_system_prompt(DEFAULT_MISSION, DEFAULT_DESTINATION)
FOGGY_HIGHWAY = ScenarioConditions(weather="foggy", light="gloomy", locality="highway", surface="dry", distance="safe")


def frame(frame_id=0, truth=FOGGY_HIGHWAY, image_ref=None):
    return SceneFrame(frame_id=frame_id, timestamp=0.0, truth=truth, image_ref=image_ref)


def test_fixed_text_comes_back_verbatim(mock_server, canonical_tree):
    url, _ = mock_server(MockScript(after=ScriptStep(text=canonical_tree)))
    assert remote_analyze(frame(), url, PROMPT) == canonical_tree


def test_server_error_is_transport_error(mock_server):
    url, _ = mock_server(MockScript(steps=[ScriptStep(status=500)]))
    with pytest.raises(TransportError, match="500"):
        remote_analyze(frame(), url, PROMPT)


@pytest.mark.parametrize("raw_body", ["not json at all", '{"answer": "root { }"}', '{"text": 42}'])
def test_malformed_body_is_protocol_error(mock_server, raw_body):
    url, _ = mock_server(MockScript(after=ScriptStep(raw_body=raw_body)))
    with pytest.raises(ProtocolError):
        remote_analyze(frame(), url, PROMPT)


def test_slow_server_times_out(mock_server):
    url, _ = mock_server(MockScript(steps=[ScriptStep(delay=0.5)]))
    with pytest.raises(AnalyzerTimeout):
        remote_analyze(frame(), url, PROMPT, deadline=0.05)


def test_nothing_listening_is_transport_error(dead_endpoint):
    with pytest.raises(TransportError):
        remote_analyze(frame(), dead_endpoint, PROMPT)


def test_oracle_answers_like_the_mock_analyzer(mock_server, policy_table):
    oracle = AnalyzerConfig.uniform(0.2, rng_seed=4)
    url, app = mock_server(MockScript(oracle=oracle))

    for frame_id in range(20):
        assert remote_analyze(frame(frame_id), url, PROMPT) == mock_analyze(frame(frame_id), oracle, policy_table)
    assert app.state.requests == 20


def test_script_runs_then_falls_through(mock_server, canonical_tree, policy_table):
    url, _ = mock_server(MockScript(steps=[ScriptStep(status=503), ScriptStep(text="root { }")]))

    with pytest.raises(TransportError):
        remote_analyze(frame(0), url, PROMPT)
    assert remote_analyze(frame(1), url, PROMPT) == "root { }"
    assert remote_analyze(frame(2), url, PROMPT) == mock_analyze(frame(2), AnalyzerConfig(), policy_table)


def test_cycling_script():
    script = MockScript(steps=[ScriptStep(status=500), ScriptStep()], cycle=True)
    assert [script.step_for(i).status for i in range(5)] == [500, 200, 500, 200, 500]


def test_remote_analyzer_gives_up_at_deadline():
    def slow_backend(_frame):
        time.sleep(0.5)
        return "root { }"

    with RemoteAnalyzer("http://unused", PROMPT, deadline=0.05, backend=slow_backend) as analyzer:
        started = time.monotonic()
        with pytest.raises(AnalyzerTimeout):
            analyzer.analyze(frame())
        assert time.monotonic() - started < 0.4


def test_stuck_request_does_not_delay_later_frames():
    release = threading.Event()

    def backend(scene_frame):
        if scene_frame.frame_id == 0:
            release.wait(5.0)
        return "root { }"

    try:
        with RemoteAnalyzer("http://unused", PROMPT, deadline=0.2, backend=backend) as analyzer:
            with pytest.raises(AnalyzerTimeout):
                analyzer.analyze(frame(0))
            assert analyzer.analyze(frame(1)) == "root { }"
            assert analyzer.analyze(frame(2)) == "root { }"
    finally:
        release.set()


def test_remote_analyzer_over_http(mock_server, canonical_tree):
    url, _ = mock_server(MockScript(after=ScriptStep(text=canonical_tree)))
    with RemoteAnalyzer(url, PROMPT, deadline=2.0) as analyzer:
        assert analyzer.analyze(frame(0)) == canonical_tree
        assert analyzer.analyze(frame(1)) == canonical_tree


def test_unreadable_scene_text_is_rejected():
    client = TestClient(create_app())
    resp = client.post("/v1/analyze", json={"system_prompt": PROMPT, "scene_text": "a blurry picture", "frame_id": 0})

    assert resp.status_code == 400


def test_rain_on_dry_road_is_rejected():
    client = TestClient(create_app())
    text = "weather=rainy; light=gloomy; locality=town; surface=dry; distance=safe"
    resp = client.post("/v1/analyze", json={"system_prompt": PROMPT, "scene_text": text, "frame_id": 0})

    assert resp.status_code == 400


def test_health_counts_requests(canonical_tree):
    client = TestClient(create_app(MockScript(after=ScriptStep(text=canonical_tree))))
    client.post("/v1/analyze", json={"system_prompt": PROMPT, "frame_id": 3})

    assert client.get("/health").json() == {"status": "ok", "requests": 1}


def test_load_script_from_file(tmp_path):
    path = tmp_path / "script.json"
    path.write_text('{"steps": [{"delay": 0.1}, {"status": 500}], "cycle": true}')

    script = load_script(path)

    assert script.steps[0].delay == 0.1
    assert script.step_for(3).status == 500


def test_bad_script_is_config_error(tmp_path):
    path = tmp_path / "script.json"
    path.write_text('{"steps": [{"delay": -1}]}')
    with pytest.raises(ConfigError):
        load_script(path)


def test_env_script_is_read_when_the_app_is_built(tmp_path, monkeypatch):
    bad = tmp_path / "bad.json"
    bad.write_text("{broken")
    monkeypatch.setenv("CODRIVER_MOCK_SCRIPT", str(bad))

    main = importlib.reload(importlib.import_module("codriver.main"))
    with pytest.raises(ConfigError):
        main.app_from_env()

    good = tmp_path / "good.json"
    good.write_text('{"steps": [{"status": 500}], "cycle": true}')
    monkeypatch.setenv("CODRIVER_MOCK_SCRIPT", str(good))
    assert main.app_from_env().state.script.cycle


def test_encode_image(tmp_path):
    image = tmp_path / "frame.png"
    image.write_bytes(b"\x89PNG")

    assert encode_image(str(image)) == "iVBORw=="
    assert encode_image("aGVsbG8=") == "aGVsbG8="
    assert encode_image(None) is None
