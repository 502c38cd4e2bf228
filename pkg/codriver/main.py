"""
# FastAPI entry-point
# Mock analyzer server: `uvicorn codriver.main:app_from_env --factory` replays the script
# named by CODRIVER_MOCK_SCRIPT; tests and `serve-mock` build their own app with create_app()
"""
import logging
from typing import Optional

from fastapi import FastAPI

from codriver.core.config import get_settings
from codriver.routers import analyze
from codriver.routers.analyze import MockScript, load_script
from codriver.services.policy import load_policy_table

logger = logging.getLogger(__name__)


def create_app(script: Optional[MockScript] = None) -> FastAPI:
    script = script or MockScript()
    app = FastAPI(title="codriver mock analyzer")
    app.state.script = script
    app.state.policy = load_policy_table(script.policy)
    app.state.requests = 0
    app.include_router(analyze.router)
    logger.info(f"[MOCK_SERVER] {len(script.steps)} scripted steps"
                f"{' (cycling)' if script.cycle else ''}")
    return app


def app_from_env() -> FastAPI:
    """uvicorn factory: the app for the script named by CODRIVER_MOCK_SCRIPT"""
    return create_app(load_script(get_settings().mock_script))
