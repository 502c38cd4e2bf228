import json
import socket
import threading
import time
from pathlib import Path

import pytest
import uvicorn

from codriver.main import create_app
from codriver.routers.analyze import MockScript
from codriver.services.policy import load_policy_table

REPO_ROOT = Path(__file__).resolve().parent.parent
SCENARIO_DIR = REPO_ROOT / "codriver" / "data" / "scenarios"
FIXTURE_DIR = Path(__file__).resolve().parent / "fixtures"

CANONICAL_TREE = """root {
  sequence:environment_analysis {
    condition:distance = "safe"
    condition:weather = "rainy"
    condition:light = "gloomy"
    condition:surface = "wet"
    condition:locality = "town"
  }
  sequence:driving_suggestion {
    action:control_type = "cautious"
    action:max_speed = 60
    action:max_brake = 0.7
    action:max_throttle = 0.6
    action:max_acceleration = 2.0
    action:max_steering_speed = 0.6
  }
}
"""


def free_port() -> int:
    with socket.socket(socket.AF_INET, socket.SOCK_STREAM) as sock:
        sock.bind(("127.0.0.1", 0))
        return sock.getsockname()[1]


@pytest.fixture
def policy_table():
    return load_policy_table()


@pytest.fixture
def scenario_path():
    def _path(name: str) -> Path:
        return SCENARIO_DIR / f"{name}.json"
    return _path


@pytest.fixture
def short_scenario(tmp_path):
    """Bundled scenario cut down to `duration` seconds, written to tmp_path"""
    def _write(name: str = "town04_like_rainy_gloomy", duration: float = 5.0) -> Path:
        data = json.loads((SCENARIO_DIR / f"{name}.json").read_text())
        data["sim"]["duration"] = duration
        path = tmp_path / f"{name}_{int(duration)}s.json"
        path.write_text(json.dumps(data))
        return path
    return _write


@pytest.fixture
def mock_server():
    """Start the mock analyzer on a free port; returns (base_url, app)"""
    running = []

    def _start(script: MockScript = None):
        app = create_app(script or MockScript())
        port = free_port()
        server = uvicorn.Server(uvicorn.Config(app, host="127.0.0.1", port=port,
                                               log_level="warning", lifespan="off"))
        thread = threading.Thread(target=server.run, daemon=True)
        thread.start()
        deadline = time.monotonic() + 10
        while not server.started:
            if time.monotonic() > deadline:
                raise RuntimeError("mock server did not start")
            time.sleep(0.02)
        running.append((server, thread))
        return f"http://127.0.0.1:{port}", app

    yield _start

    for server, thread in running:
        server.should_exit = True
        thread.join(timeout=5)


@pytest.fixture
def canonical_tree():
    return CANONICAL_TREE


@pytest.fixture
def dead_endpoint():
    """URL of a local port nothing listens on"""
    return f"http://127.0.0.1:{free_port()}"
