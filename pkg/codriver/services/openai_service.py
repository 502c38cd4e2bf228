# OpenAI-compatible analyzer backend
# Vision-language inference servers (vLLM, Qwen-VL deployments, hosted APIs) commonly
# expose the chat completions API; this backend sends the system prompt plus the
# scene description / camera image and returns the model's raw text.

import logging
from typing import Any, Dict, List, Optional

import openai
from openai import OpenAI

from codriver.core.config import get_settings
from codriver.core.errors import AnalyzerTimeout, ProtocolError, TransportError
from codriver.models.schemas import SceneFrame
from codriver.services.analyzer import encode_image

logger = logging.getLogger(__name__)


class OpenAIAnalyzerBackend:
    """Callable frame -> behavior-tree text backed by a chat completions endpoint"""

    def __init__(self, system_prompt: str, model: Optional[str] = None,
                 deadline: float = 1.0, client: Optional[OpenAI] = None):
        settings = get_settings()
        self.system_prompt = system_prompt
        self.model = model or settings.openai_model
        self.deadline = deadline
        # Retries would stretch a frame past its deadline
        self.client = client or OpenAI(
            api_key=settings.openai_api_key or "not-needed",
            base_url=settings.openai_base_url,
            max_retries=0,
        )

    def _messages(self, frame: SceneFrame) -> List[Dict[str, Any]]:
        content: List[Dict[str, Any]] = [
            {"type": "text", "text": f"Scene: {frame.truth.render()}"},
        ]
        image = encode_image(frame.image_ref)
        if image:
            content.append({
                "type": "image_url",
                "image_url": {"url": f"data:image/png;base64,{image}"},
            })
        return [
            {"role": "system", "content": self.system_prompt},
            {"role": "user", "content": content},
        ]

    def __call__(self, frame: SceneFrame) -> str:
        try:
            resp = self.client.chat.completions.create(
                model=self.model,
                messages=self._messages(frame),
                temperature=0,
                timeout=self.deadline,
            )
        except openai.APITimeoutError as exc:
            raise AnalyzerTimeout(f"frame {frame.frame_id}: no completion within {self.deadline}s") from exc
        except (openai.APIConnectionError, openai.APIStatusError) as exc:
            raise TransportError(f"frame {frame.frame_id}: {exc}") from exc

        if not resp.choices:
            raise ProtocolError(f"frame {frame.frame_id}: completion has no choices")
        text = resp.choices[0].message.content or ""
        logger.debug(f"[OPENAI] Frame {frame.frame_id}: {len(text)} chars from {self.model}")
        return text
