# Configuration
# Loads .env once and exposes process-wide settings plus the logging setup

import logging
import os
from typing import Optional

from dotenv import load_dotenv
from pydantic import BaseModel, Field

# Load environment variables from .env (project root) before anything reads them
load_dotenv()


class Settings(BaseModel):
    """Process settings read from the environment"""
    log_level: str = "INFO"
    # Remote analyzer endpoint used when --endpoint is not given
    endpoint: str = "http://127.0.0.1:8765"
    # Wall-clock deadline for one remote analysis, seconds
    deadline: float = Field(default=1.0, gt=0)
    # Script replayed by `uvicorn codriver.main:app_from_env --factory`
    mock_script: Optional[str] = None
    openai_api_key: Optional[str] = None
    openai_base_url: Optional[str] = None
    openai_model: str = "qwen-vl-chat"


def get_settings() -> Settings:
    """Build settings from the current environment"""
    env = {
        "log_level": os.getenv("CODRIVER_LOG_LEVEL"),
        "endpoint": os.getenv("CODRIVER_ENDPOINT"),
        "deadline": os.getenv("CODRIVER_DEADLINE"),
        "mock_script": os.getenv("CODRIVER_MOCK_SCRIPT"),
        "openai_api_key": os.getenv("OPENAI_API_KEY"),
        "openai_base_url": os.getenv("OPENAI_BASE_URL"),
        "openai_model": os.getenv("CODRIVER_OPENAI_MODEL"),
    }
    return Settings(**{key: value for key, value in env.items() if value})


def configure_logging(level: Optional[str] = None) -> None:
    """Set up root logging; messages carry their own [TAG] prefix"""
    level_name = (level or get_settings().log_level).upper()
    logging.basicConfig(
        level=getattr(logging, level_name, logging.INFO),
        format='%(message)s',  # Only show the message without timestamp and level
    )
