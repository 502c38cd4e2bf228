# Analyze Router Module
# Bundled mock of a vision-language inference server speaking the /v1/analyze protocol.
# Replays a scripted schedule of delays and faults, then answers as an oracle that
# reads the scene descriptor and applies the policy table.

import asyncio
import json
import logging
from pathlib import Path
from typing import List, Optional, Union

from fastapi import APIRouter, Request
from fastapi.responses import JSONResponse, Response
from pydantic import BaseModel, Field, ValidationError

from codriver.core.errors import ConfigError
from codriver.models.schemas import AnalyzeRequest, AnalyzeResponse, AnalyzerConfig, ScenarioConditions, SceneFrame
from codriver.services.analyzer import mock_analyze

logger = logging.getLogger(__name__)

router = APIRouter()


class ScriptStep(BaseModel):
    """How to answer one request"""
    # Seconds to wait before answering
    delay: float = Field(default=0.0, ge=0)
    status: int = 200
    # Fixed answer text; None answers as the oracle
    text: Optional[str] = None
    # Raw response body, sent as-is (protocol faults)
    raw_body: Optional[str] = None


class MockScript(BaseModel):
    """Scripted schedule; requests past the end use `after`, or cycle the steps"""
    steps: List[ScriptStep] = Field(default_factory=list)
    cycle: bool = False
    after: ScriptStep = Field(default_factory=ScriptStep)
    # Label noise of the oracle answers
    oracle: AnalyzerConfig = Field(default_factory=AnalyzerConfig)
    policy: Optional[str] = None

    def step_for(self, index: int) -> ScriptStep:
        if index < len(self.steps):
            return self.steps[index]
        if self.cycle and self.steps:
            return self.steps[index % len(self.steps)]
        return self.after


def load_script(path: Optional[Union[str, Path]]) -> MockScript:
    if path is None:
        return MockScript()
    try:
        return MockScript.model_validate(json.loads(Path(path).read_text(encoding="utf-8")))
    except (OSError, json.JSONDecodeError, ValidationError) as exc:
        raise ConfigError(f"invalid mock script {path}: {exc}") from None


def _oracle_text(body: AnalyzeRequest, script: MockScript, request: Request) -> str:
    truth = ScenarioConditions.from_scene_text(body.scene_text or "")
    frame = SceneFrame(frame_id=body.frame_id, timestamp=0.0, truth=truth)
    return mock_analyze(frame, script.oracle, request.app.state.policy)


@router.post("/v1/analyze", response_model=AnalyzeResponse)
async def analyze(body: AnalyzeRequest, request: Request):
    """
    Answer one analysis request according to the script
    """
    state = request.app.state
    index = state.requests
    state.requests += 1
    step = state.script.step_for(index)

    if step.delay:
        await asyncio.sleep(step.delay)

    if step.status != 200:
        logger.info(f"[MOCK_SERVER] Request {index} (frame {body.frame_id}): scripted {step.status}")
        return JSONResponse({"error": "scripted fault"}, status_code=step.status)
    if step.raw_body is not None:
        return Response(content=step.raw_body, media_type="application/json")
    if step.text is not None:
        return AnalyzeResponse(text=step.text)

    try:
        text = _oracle_text(body, state.script, request)
    except ValidationError as exc:
        logger.warning(f"[MOCK_SERVER] Frame {body.frame_id}: unreadable scene text {body.scene_text!r}")
        return JSONResponse({"error": f"unreadable scene_text: {exc.errors()[0]['msg']}"}, status_code=400)
    return AnalyzeResponse(text=text)


@router.get("/health")
async def health(request: Request):
    return {"status": "ok", "requests": request.app.state.requests}
