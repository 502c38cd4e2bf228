# Analyzer service
# Step one of the analysis pipeline: turns scene frames into behavior-tree text.
# MockAnalyzer stands in for the vision-language model with calibrated label noise;
# RemoteAnalyzer forwards frames to an inference server over HTTP.

import base64
import logging
import os
from concurrent.futures import Future, ThreadPoolExecutor
from concurrent.futures import TimeoutError as FutureTimeout
from typing import Callable, Dict, Optional, Protocol

import httpx
import numpy as np
from pydantic import ValidationError

from codriver.core.errors import AnalyzerTimeout, ProtocolError, TransportError
from codriver.models.behavior_tree import serialize_behavior_tree, tree_from_reading
from codriver.models.schemas import (
    CATEGORIES,
    CATEGORY_ENUMS,
    AnalyzeRequest,
    AnalyzeResponse,
    AnalyzerConfig,
    AnalyzerSource,
    EnvironmentEstimate,
    SceneFrame,
)
from codriver.services.policy import PolicyTable, lookup

logger = logging.getLogger(__name__)

_UNIT = 2.0 ** -53


class Analyzer(Protocol):
    """Anything the pipeline can hand a frame to"""
    source: AnalyzerSource
    # Simulated seconds between a frame and its analysis arriving on the bus
    response_latency: float

    def analyze(self, frame: SceneFrame) -> str:
        ...


# ================================================================
# MOCK ORACLE
# ================================================================

def _draws(seed: int, frame_id: int, category_index: int):
    """Uniform in [0, 1) and a pick integer, a pure function of the key"""
    state = np.random.SeedSequence([seed, frame_id, category_index]).generate_state(2, dtype=np.uint64)
    return (int(state[0]) >> 11) * _UNIT, int(state[1])


def mock_estimate(frame: SceneFrame, cfg: AnalyzerConfig) -> EnvironmentEstimate:
    """
    Noisy labels for one frame

    Each category independently keeps its true label with probability 1 - error_rate,
    otherwise takes a uniformly chosen different label.
    """
    labels: Dict[str, str] = {}
    for index, category in enumerate(CATEGORIES):
        truth = frame.truth.label(category)
        u, pick = _draws(cfg.rng_seed, frame.frame_id, index)
        if u < cfg.error_rate(category):
            others = [member.value for member in CATEGORY_ENUMS[category] if member.value != truth]
            labels[category] = others[pick % len(others)]
        else:
            labels[category] = truth
    return EnvironmentEstimate(frame_id=frame.frame_id, source=AnalyzerSource.MOCK, **labels)


def mock_analyze(frame: SceneFrame, cfg: AnalyzerConfig, policy_table: PolicyTable) -> str:
    """Behavior-tree text for the (possibly wrong) estimate of frame"""
    estimate = mock_estimate(frame, cfg)
    directive = lookup(estimate, policy_table)
    return serialize_behavior_tree(tree_from_reading(estimate, directive))


class MockAnalyzer:
    """Deterministic stand-in for the vision-language model"""

    source = AnalyzerSource.MOCK

    def __init__(self, cfg: AnalyzerConfig, table: PolicyTable):
        self.cfg = cfg
        self.table = table
        self.response_latency = cfg.response_latency
        self._last_frame_id: Optional[int] = None

    def analyze(self, frame: SceneFrame) -> str:
        if self._last_frame_id is not None and frame.frame_id <= self._last_frame_id:
            raise ValueError(f"frame ids must increase: {frame.frame_id} after {self._last_frame_id}")
        self._last_frame_id = frame.frame_id
        return mock_analyze(frame, self.cfg, self.table)


# ================================================================
# REMOTE CLIENT
# ================================================================

def encode_image(image_ref: Optional[str]) -> Optional[str]:
    """Base64 of the referenced file, or the reference itself when it is already a payload"""
    if not image_ref:
        return None
    if os.path.isfile(image_ref):
        with open(image_ref, "rb") as fh:
            return base64.b64encode(fh.read()).decode("ascii")
    return image_ref


def remote_analyze(frame: SceneFrame, endpoint: str, system_prompt: str,
                   deadline: float = 1.0, client: Optional[httpx.Client] = None) -> str:
    """
    POST one frame to {endpoint}/v1/analyze and return the raw response text

    Raises:
        AnalyzerTimeout: deadline exceeded
        TransportError: connection failure or non-200 status
        ProtocolError: 200 response without a {"text": string} body
    """
    body = AnalyzeRequest(
        system_prompt=system_prompt,
        image_b64=encode_image(frame.image_ref),
        scene_text=frame.truth.render(),
        frame_id=frame.frame_id,
    )
    url = f"{endpoint.rstrip('/')}/v1/analyze"
    http = client or httpx.Client()
    try:
        resp = http.post(url, json=body.model_dump(), timeout=deadline)
    except httpx.TimeoutException as exc:
        raise AnalyzerTimeout(f"frame {frame.frame_id}: no response within {deadline}s") from exc
    except httpx.HTTPError as exc:
        raise TransportError(f"frame {frame.frame_id}: {exc}") from exc
    finally:
        if client is None:
            http.close()

    if resp.status_code != 200:
        raise TransportError(f"frame {frame.frame_id}: server answered {resp.status_code}")
    try:
        text = AnalyzeResponse.model_validate(resp.json()).text
    except (ValueError, ValidationError) as exc:
        raise ProtocolError(f"frame {frame.frame_id}: malformed response body: {exc}") from None
    logger.debug(f"[REMOTE] Frame {frame.frame_id}: {len(text)} chars from {url}")
    return text


class RemoteAnalyzer:
    """
    Runs a remote backend on a worker thread so the stepper never waits past the deadline

    The backend is any callable frame -> text; by default the HTTP wire protocol.
    """

    source = AnalyzerSource.REMOTE

    def __init__(self, endpoint: str, system_prompt: str, deadline: float = 1.0,
                 response_latency: float = 0.2,
                 backend: Optional[Callable[[SceneFrame], str]] = None):
        self.endpoint = endpoint
        self.deadline = deadline
        self.response_latency = response_latency
        self._client = httpx.Client()
        self._backend = backend or (
            lambda frame: remote_analyze(frame, endpoint, system_prompt, deadline, self._client)
        )
        self._executor = self._new_worker()

    @staticmethod
    def _new_worker() -> ThreadPoolExecutor:
        return ThreadPoolExecutor(max_workers=1, thread_name_prefix="codriver-remote")

    def submit(self, frame: SceneFrame) -> "Future[str]":
        return self._executor.submit(self._backend, frame)

    def analyze(self, frame: SceneFrame) -> str:
        future = self.submit(frame)
        try:
            return future.result(timeout=self.deadline)
        except FutureTimeout:
            # The stuck request keeps its thread; later frames get a fresh worker
            if not future.cancel():
                self._executor.shutdown(wait=False, cancel_futures=True)
                self._executor = self._new_worker()
            raise AnalyzerTimeout(f"frame {frame.frame_id}: no response within {self.deadline}s") from None

    def close(self) -> None:
        self._executor.shutdown(wait=False, cancel_futures=True)
        self._client.close()

    def __enter__(self) -> "RemoteAnalyzer":
        return self

    def __exit__(self, *exc) -> None:
        self.close()
