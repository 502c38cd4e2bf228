# In-process topic bus
# Mirrors the robot-middleware topology of the pipeline (camera frames in, analysis and
# directives out) on simulated time: messages become visible once the caller's clock
# passes their delivery time.

import heapq
import itertools
import json
import logging
import threading
import zlib
from typing import Any, Dict, List, NamedTuple, Optional, TextIO, Tuple, Type

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from codriver.core.errors import TypeMismatch, UnknownTopic
from codriver.models.scenario import VehicleState
from codriver.models.schemas import AnalyzerSource, BehaviorDirective, SceneFrame

logger = logging.getLogger(__name__)

FRONT_CAMERA = "/ego/front_camera"
EGO_STATUS = "/ego/status"
ANALYSIS = "/codriver/analysis"
DIRECTIVE = "/codriver/directive"


class AnalysisResult(BaseModel):
    """Raw analyzer output for one frame, as carried on the analysis topic"""
    model_config = ConfigDict(frozen=True)

    frame_id: int
    text: str
    source: AnalyzerSource = AnalyzerSource.MOCK


class LatencyModel(BaseModel):
    """Fixed delay plus half-normal jitter (a normal truncated at zero)"""
    model_config = ConfigDict(frozen=True, allow_inf_nan=False)

    fixed: float = Field(default=0.0, ge=0)
    jitter_std: float = Field(default=0.0, ge=0)
    seed: int = Field(default=0, ge=0)


class Ack(NamedTuple):
    topic: str
    seq: int
    deliver_at: float


class Subscription:
    """Per-consumer queue; poll it from one consumer at a time"""

    def __init__(self, topic: str):
        self.topic = topic
        self._queue: List[Tuple[float, int, Any]] = []


class Topic:
    def __init__(self, name: str, message_type: Type, latency: LatencyModel):
        self.name = name
        self.message_type = message_type
        self.latency = latency
        self.subscribers: List[Subscription] = []
        self._rng = np.random.default_rng([latency.seed, zlib.crc32(name.encode("utf-8"))])
        self._seq = itertools.count()

    def delay(self) -> float:
        if self.latency.jitter_std == 0:
            return self.latency.fixed
        return self.latency.fixed + abs(float(self._rng.normal(0.0, self.latency.jitter_std)))


def _encode(message: Any) -> Any:
    if isinstance(message, BaseModel):
        return message.model_dump(mode="json")
    return message


class Bus:
    """Typed topics with per-subscriber exactly-once delivery"""

    def __init__(self, debug_stream: Optional[TextIO] = None):
        self._topics: Dict[str, Topic] = {}
        self._lock = threading.Lock()
        self._debug = debug_stream

    @classmethod
    def standard(cls, analysis_latency: float = 0.0, seed: int = 0,
                 debug_stream: Optional[TextIO] = None) -> "Bus":
        """Bus with the camera, status, analysis and directive topics registered"""
        bus = cls(debug_stream=debug_stream)
        bus.register(FRONT_CAMERA, SceneFrame, LatencyModel(seed=seed))
        bus.register(EGO_STATUS, VehicleState, LatencyModel(seed=seed))
        bus.register(ANALYSIS, AnalysisResult, LatencyModel(fixed=analysis_latency, seed=seed))
        bus.register(DIRECTIVE, BehaviorDirective, LatencyModel(seed=seed))
        return bus

    def register(self, name: str, message_type: Type, latency: Optional[LatencyModel] = None) -> Topic:
        with self._lock:
            topic = Topic(name, message_type, latency or LatencyModel())
            self._topics[name] = topic
        logger.debug(f"[BUS] Registered {name} ({message_type.__name__})")
        return topic

    def _topic(self, name: str) -> Topic:
        try:
            return self._topics[name]
        except KeyError:
            raise UnknownTopic(f"topic {name!r} is not registered") from None

    def publish(self, topic: str, message: Any, t_now: float) -> Ack:
        """Enqueue message for every current subscriber at t_now + latency sample"""
        target = self._topic(topic)
        if not isinstance(message, target.message_type):
            raise TypeMismatch(
                f"{topic} carries {target.message_type.__name__}, got {type(message).__name__}"
            )
        with self._lock:
            seq = next(target._seq)
            deliver_at = t_now + target.delay()
            for subscription in target.subscribers:
                heapq.heappush(subscription._queue, (deliver_at, seq, message))
        if self._debug is not None:
            self._debug.write(json.dumps({
                "event": "publish", "topic": topic, "seq": seq,
                "t": t_now, "deliver_at": deliver_at, "message": _encode(message),
            }) + "\n")
        return Ack(topic, seq, deliver_at)

    def subscribe(self, topic: str) -> Subscription:
        target = self._topic(topic)
        subscription = Subscription(topic)
        with self._lock:
            target.subscribers.append(subscription)
        return subscription

    def poll(self, handle: Subscription, t_now: float) -> List[Any]:
        """All messages due by t_now, in delivery-time order (ties by publish order)"""
        self._topic(handle.topic)
        due = []
        with self._lock:
            queue = handle._queue
            while queue and queue[0][0] <= t_now:
                deliver_at, seq, message = heapq.heappop(queue)
                due.append(message)
                if self._debug is not None:
                    self._debug.write(json.dumps({
                        "event": "deliver", "topic": handle.topic, "seq": seq,
                        "t": t_now, "deliver_at": deliver_at,
                    }) + "\n")
        return due
