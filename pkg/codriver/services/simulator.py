# Simulator service
# Deterministic longitudinal driving simulation: a first-order P-controller plant, a
# sparse weather-dependent bump disturbance, and the two agents (rule-following default,
# directive-capped adaptive) wired to the analyzer through the topic bus.

import json
import logging
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
import pandas as pd

from codriver.core.errors import AnalyzerError, AnalyzerUnavailable, BehaviorTreeError, ConfigError
from codriver.models.behavior_tree import directive_from_tree, parse_behavior_tree
from codriver.models.scenario import (
    AgentKind,
    DirectiveEvent,
    DriveLog,
    Route,
    RunMetadata,
    SimConfig,
    VehicleState,
)
from codriver.models.schemas import BehaviorDirective, LabelRecord, SceneFrame
from codriver.services.analyzer import Analyzer
from codriver.services.metrics import records_from_drive
from codriver.services.policy import FallbackState, LabelVote, PolicyTable, fallback_step, resolve_directive
from codriver.services.pubsub import ANALYSIS, DIRECTIVE, EGO_STATUS, FRONT_CAMERA, AnalysisResult, Bus

logger = logging.getLogger(__name__)

# Plant capability at full brake / full throttle, m/s^2
FULL_BRAKE_DECEL = 8.0
FULL_THROTTLE_ACCEL = 4.0

# Stream ids mixed into the seed so each random quantity has its own counter-based stream
_BUMP_STREAM = 1
_BUMP_SIZE_STREAM = 2

LOG_COLUMNS = ["t", "position", "speed_mps", "accel_mps2", "directive_tier"]
DEFAULT_TIER = "default"


def step(state: VehicleState, target_speed: float, caps: BehaviorDirective,
         disturbance: float, cfg: SimConfig, brake_above: Optional[float] = None) -> VehicleState:
    """
    Advance the plant by one dt

    a_cmd = clamp(Kp * (target - v), -max_brake * A_B, min(max_throttle * A_T, max_acceleration))
    v' = max(0, v + (a_cmd + disturbance) * dt)

    Above brake_above (m/s) the command is full max_brake regardless of the error.
    """
    v = state.speed
    error = target_speed - v
    upper = min(caps.max_throttle * FULL_THROTTLE_ACCEL, caps.max_acceleration)
    lower = -caps.max_brake * FULL_BRAKE_DECEL
    if brake_above is not None and v > brake_above:
        a_cmd = lower
    else:
        a_cmd = min(max(cfg.controller_gain * error, lower), upper)

    if disturbance == 0.0 and abs(error) < cfg.speed_tolerance:
        v_next = max(0.0, target_speed)
    else:
        v_next = max(0.0, v + (a_cmd + disturbance) * cfg.dt)

    return VehicleState(
        position=state.position + v_next * cfg.dt,
        speed=v_next,
        acceleration=(v_next - v) / cfg.dt,
        t=state.t + cfg.dt,
    )


def disturbance_stream(seed: int, n_steps: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    Uniform and standard-normal draws per step

    Element k depends only on (seed, k), so agents driven with the same seed meet the
    same road.
    """
    uniforms = np.random.default_rng(np.random.SeedSequence([seed, _BUMP_STREAM])).random(n_steps)
    normals = np.random.default_rng(np.random.SeedSequence([seed, _BUMP_SIZE_STREAM])).standard_normal(n_steps)
    return uniforms, normals


def bump(u: float, z: float, speed: float, coeff: float, cfg: SimConfig) -> float:
    """Disturbance for one step: a bump of size z * coeff * v fires with probability coeff * v * dt / spacing"""
    if coeff == 0.0 or speed == 0.0:
        return 0.0
    if u < coeff * speed * cfg.dt / cfg.bump_spacing:
        return float(z) * coeff * speed
    return 0.0


class _AdaptivePipeline:
    """Frames out, analysis in, directive resolved at step boundaries"""

    def __init__(self, analyzer: Analyzer, table: PolicyTable, cfg: SimConfig, bus: Bus,
                 max_failures: Optional[int]):
        self.analyzer = analyzer
        self.table = table
        self.bus = bus
        self.camera = bus.subscribe(FRONT_CAMERA)
        self.analysis = bus.subscribe(ANALYSIS)
        self.vote = LabelVote(cfg.label_vote_window)
        self.fallback = FallbackState.start(table, cfg.fallback_grace)
        self.directive = self.fallback.current
        self.truths: Dict[int, SceneFrame] = {}
        self.records: List[LabelRecord] = []
        self.failures = 0
        self._consecutive = 0
        self._max_failures = max_failures

    def _run_analyzer(self, t: float) -> None:
        for frame in self.bus.poll(self.camera, t):
            try:
                text = self.analyzer.analyze(frame)
            except AnalyzerError as exc:
                self.failures += 1
                self._consecutive += 1
                if self._consecutive == 1:
                    logger.warning(f"[SIM] Analyzer failed at t={t:.2f}s: {exc}")
                if self._max_failures is not None and self._consecutive > self._max_failures:
                    raise AnalyzerUnavailable(
                        f"{self._consecutive} consecutive analyzer failures (budget {self._max_failures})"
                    ) from exc
                continue
            if self._consecutive:
                logger.info(f"[SIM] Analyzer recovered after {self._consecutive} failures")
            self._consecutive = 0
            self.truths[frame.frame_id] = frame
            self.bus.publish(ANALYSIS, AnalysisResult(frame_id=frame.frame_id, text=text,
                                                      source=self.analyzer.source), t)

    def _fresh_directive(self, t: float) -> Optional[BehaviorDirective]:
        fresh = None
        for result in self.bus.poll(self.analysis, t):
            try:
                labels, suggested = directive_from_tree(parse_behavior_tree(result.text))
            except BehaviorTreeError as exc:
                logger.warning(f"[SIM] Discarding analysis of frame {result.frame_id}: {type(exc).__name__}: {exc}")
                continue
            frame = self.truths.pop(result.frame_id, None)
            if frame is not None:
                self.records.extend(records_from_drive([(frame.frame_id, labels, frame.truth)]))
            fresh = resolve_directive(self.vote.update(labels), suggested, self.table)
        return fresh

    def advance(self, t: float, dt: float) -> BehaviorDirective:
        self._run_analyzer(t)
        fresh = self._fresh_directive(t)
        self.fallback, directive = fallback_step(self.fallback, dt, fresh)
        changed = directive != self.directive
        self.directive = directive
        if changed:
            self.bus.publish(DIRECTIVE, directive, t)
        return directive


def run_scenario(route: Route, agent: Union[AgentKind, str], analyzer: Optional[Analyzer],
                 policy: PolicyTable, cfg: SimConfig, *, bus: Optional[Bus] = None,
                 max_failures: Optional[int] = None, manifest: Optional[dict] = None) -> DriveLog:
    """
    Drive route for cfg.duration and return the log

    The default agent tracks the posted limit with the least-severe tier's actuation limits.
    The adaptive agent targets min(posted limit, directive max_speed) under the directive's
    caps, analyzing a frame every 1/frame_rate simulated seconds. When a tighter directive
    leaves it more than cap_margin over max_speed it brakes at full max_brake back into the band.
    """
    agent = AgentKind(agent)
    if agent is AgentKind.ADAPTIVE and analyzer is None:
        raise ConfigError("the adaptive agent needs an analyzer")

    n_steps = int(round(cfg.duration / cfg.dt))
    uniforms, normals = disturbance_stream(cfg.rng_seed, n_steps)
    bus = bus or Bus.standard(
        analysis_latency=analyzer.response_latency if analyzer else 0.0, seed=cfg.rng_seed,
    )

    pipeline = None
    events: List[DirectiveEvent] = []
    if agent is AgentKind.ADAPTIVE:
        pipeline = _AdaptivePipeline(analyzer, policy, cfg, bus, max_failures)
        events.append(DirectiveEvent(t=0.0, directive=pipeline.directive))
        tier = pipeline.directive.control_type.value
    else:
        tier = DEFAULT_TIER
    default_caps = policy.least_severe

    state = VehicleState()
    samples = [state]
    tiers = [tier]
    frame_id = 0
    logger.info(f"[SIM] Running {agent.value} agent on {route.route_id} "
                f"({route.condition_label}, seed {cfg.rng_seed}, {n_steps} steps)")

    for k in range(n_steps):
        t = k * cfg.dt
        truth = route.conditions_at(state.position)
        limit = route.limit_at(state.position)

        if pipeline is not None:
            if k % cfg.steps_per_frame == 0:
                bus.publish(FRONT_CAMERA, SceneFrame(frame_id=frame_id, timestamp=t, truth=truth), t)
                bus.publish(EGO_STATUS, state, t)
                frame_id += 1
            directive = pipeline.advance(t, cfg.dt)
            if events[-1].directive != directive:
                events.append(DirectiveEvent(t=t, directive=directive))
            target_kmh = min(limit, directive.max_speed)
            caps = directive
            brake_above = (directive.max_speed + cfg.cap_margin) / 3.6
            tier = directive.control_type.value
        else:
            target_kmh = limit
            caps = default_caps
            brake_above = None

        disturbance = bump(uniforms[k], normals[k], state.speed, cfg.disturbance_for(truth), cfg)
        state = step(state, target_kmh / 3.6, caps, disturbance, cfg, brake_above).model_copy(
            update={"t": (k + 1) * cfg.dt}
        )
        samples.append(state)
        tiers.append(tier)

    metadata = RunMetadata(
        agent=agent,
        route_id=route.route_id,
        seed=cfg.rng_seed,
        conditions_label=route.condition_label,
        dt=cfg.dt,
        duration=cfg.duration,
        analyzer=analyzer.source.value if (analyzer and pipeline) else "none",
        manifest=manifest or {},
    )
    log = DriveLog(
        samples=samples,
        tiers=tiers,
        events=events,
        metadata=metadata,
        label_records=pipeline.records if pipeline else [],
        analyzer_failures=pipeline.failures if pipeline else 0,
    )
    if pipeline is not None and pipeline.failures:
        logger.warning(f"[SIM] Analyzer failed on {pipeline.failures}/{frame_id} frames; fallback applied")
    return log


# ================================================================
# LOG I/O
# ================================================================

def drive_log_frame(log: DriveLog) -> pd.DataFrame:
    return pd.DataFrame({
        "t": [s.t for s in log.samples],
        "position": [s.position for s in log.samples],
        "speed_mps": [s.speed for s in log.samples],
        "accel_mps2": [s.acceleration for s in log.samples],
        "directive_tier": log.tiers,
    }, columns=LOG_COLUMNS)


def write_drive_log(log: DriveLog, out_dir: Union[str, Path], stem: Optional[str] = None) -> Dict[str, Path]:
    """Write `<stem>.csv`, `<stem>.json` (events + metadata) and `<stem>.labels.jsonl`"""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    meta = log.metadata
    stem = stem or f"{meta.route_id}-{meta.agent.value}-s{meta.seed}"

    paths = {
        "csv": out_dir / f"{stem}.csv",
        "sidecar": out_dir / f"{stem}.json",
        "labels": out_dir / f"{stem}.labels.jsonl",
    }
    drive_log_frame(log).to_csv(paths["csv"], index=False, lineterminator="\n")
    sidecar = {
        "metadata": meta.model_dump(mode="json"),
        "events": [event.model_dump(mode="json") for event in log.events],
        "analyzer_failures": log.analyzer_failures,
    }
    paths["sidecar"].write_text(json.dumps(sidecar, indent=2) + "\n", encoding="utf-8")
    with open(paths["labels"], "w", encoding="utf-8") as fh:
        for record in log.label_records:
            fh.write(record.model_dump_json() + "\n")
    logger.info(f"[SIM] Wrote {paths['csv']} ({len(log.samples)} samples)")
    return paths
