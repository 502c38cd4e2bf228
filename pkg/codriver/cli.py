# Command-line entry point
# python -m codriver run | compare | eval | gen-dataset | validate-dataset | serve-mock
# Exit codes: 0 success, 1 failed check, 2 configuration error, 3 analyzer unavailable.

import argparse
import contextlib
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import List, Optional, Sequence

import pandas as pd
from pydantic import BaseModel, model_validator

from codriver.core.config import configure_logging, get_settings
from codriver.core.errors import AnalyzerUnavailable, CodriverError, ConfigError
from codriver.core.prompts import DEFAULT_DESTINATION, DEFAULT_MISSION, build_system_prompt
from codriver.models.scenario import AgentKind, Scenario, load_scenario
from codriver.services import datasetgen
from codriver.services.analyzer import MockAnalyzer, RemoteAnalyzer
from codriver.services.metrics import (
    TimeSeries,
    accuracy_report,
    read_label_records,
    smoothness,
    smoothness_from_log,
    write_accuracy_report,
    write_smoothness_report,
)
from codriver.services.policy import PolicyTable, load_policy_table
from codriver.services.pubsub import Bus
from codriver.services.simulator import run_scenario, write_drive_log

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_CONFIG = 2
EXIT_ANALYZER = 3


class RunManifest(BaseModel):
    """Everything needed to reproduce one run"""
    scenario: str
    agent: AgentKind
    seed: int
    out_dir: str
    analyzer: str = "mock"
    endpoint: Optional[str] = None
    backend: str = "analyze"
    policy: Optional[str] = None
    deadline: float = 1.0

    @model_validator(mode="after")
    def _one_analyzer_mode(self):
        if self.analyzer == "remote" and self.backend == "analyze" and not self.endpoint:
            raise ValueError("remote analyzer needs an endpoint")
        if self.analyzer == "mock" and self.endpoint:
            raise ValueError("--endpoint only applies to --analyzer remote")
        return self


def parse_seeds(text: str) -> List[int]:
    """'3' -> [3]; '1..5' -> [1, 2, 3, 4, 5]; '1,4,9' -> [1, 4, 9]"""
    try:
        if ".." in text:
            first, last = (int(part) for part in text.split("..", 1))
            seeds = list(range(first, last + 1))
        else:
            seeds = [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid seed list {text!r}") from None
    if not seeds:
        raise argparse.ArgumentTypeError(f"seed list {text!r} is empty")
    return seeds


# ================================================================
# RUN
# ================================================================

def _scenario_for_seed(scenario: Scenario, seed: int) -> Scenario:
    return scenario.model_copy(update={
        "sim": scenario.sim.model_copy(update={"rng_seed": seed}),
        "analyzer": scenario.analyzer.model_copy(update={"rng_seed": seed}),
    })


def build_analyzer(manifest: RunManifest, scenario: Scenario, table: PolicyTable):
    if manifest.analyzer == "mock":
        return MockAnalyzer(scenario.analyzer, table)

    prompt = build_system_prompt(DEFAULT_MISSION, DEFAULT_DESTINATION)
    backend = None
    if manifest.backend == "openai":
        from codriver.services.openai_service import OpenAIAnalyzerBackend
        backend = OpenAIAnalyzerBackend(prompt, deadline=manifest.deadline)
    return RemoteAnalyzer(
        manifest.endpoint, prompt,
        deadline=manifest.deadline,
        response_latency=scenario.analyzer.response_latency,
        backend=backend,
    )


def cmd_run(args: argparse.Namespace) -> int:
    scenario = load_scenario(args.scenario)
    seed = args.seed if args.seed is not None else scenario.sim.rng_seed
    scenario = _scenario_for_seed(scenario, seed)
    try:
        manifest = RunManifest(
            scenario=str(args.scenario),
            agent=args.agent or scenario.agent,
            seed=seed,
            out_dir=str(args.out),
            analyzer=args.analyzer,
            endpoint=args.endpoint or (get_settings().endpoint if args.analyzer == "remote" else None),
            backend=args.backend,
            policy=args.policy,
            deadline=args.deadline or get_settings().deadline,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    table = load_policy_table(args.policy)

    analyzer = build_analyzer(manifest, scenario, table) if manifest.agent is AgentKind.ADAPTIVE else None
    with contextlib.ExitStack() as stack:
        if isinstance(analyzer, RemoteAnalyzer):
            stack.enter_context(analyzer)
        debug = stack.enter_context(open(args.bus_debug, "w", encoding="utf-8")) if args.bus_debug else None
        bus = Bus.standard(
            analysis_latency=analyzer.response_latency if analyzer else 0.0,
            seed=seed, debug_stream=debug,
        )
        log = run_scenario(
            scenario.route, manifest.agent, analyzer, table, scenario.sim,
            bus=bus, max_failures=args.max_analyzer_failures,
            manifest=manifest.model_dump(mode="json"),
        )

    paths = write_drive_log(log, manifest.out_dir)
    if log.label_records:
        try:
            report = accuracy_report(log.label_records)
            logger.info(f"[CLI] Analyzer accuracy: {report.display()}")
        except CodriverError as exc:
            logger.debug(f"[CLI] No accuracy report: {exc}")
    print(paths["csv"])
    return EXIT_OK


# ================================================================
# COMPARE
# ================================================================

def _compare_seed(scenario_path: str, seed: int, policy_path: Optional[str]) -> List[dict]:
    """Both agents on one seed; runs in a worker process"""
    scenario = _scenario_for_seed(load_scenario(scenario_path), seed)
    table = load_policy_table(policy_path)
    rows = []
    for agent in (AgentKind.DEFAULT, AgentKind.ADAPTIVE):
        analyzer = MockAnalyzer(scenario.analyzer, table) if agent is AgentKind.ADAPTIVE else None
        log = run_scenario(scenario.route, agent, analyzer, table, scenario.sim)
        score = smoothness(TimeSeries(values=[s.acceleration for s in log.samples], dt=scenario.sim.dt))
        rows.append({
            "scenario": Path(scenario_path).stem,
            "condition": scenario.route.condition_label,
            "seed": seed,
            "agent": agent.value,
            "f_dot_t": score.f_dot_t,
            "extrema_count": score.extrema_count,
            "max_speed_kmh": max(s.speed for s in log.samples) * 3.6,
        })
    return rows


def compare(scenarios: Sequence[str], seeds: Sequence[int], policy: Optional[str] = None,
            jobs: int = 1) -> pd.DataFrame:
    """Per-seed smoothness of both agents on every scenario"""
    tasks = [(str(path), seed, policy) for path in scenarios for seed in seeds]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_compare_seed, *zip(*tasks)))
    else:
        results = [_compare_seed(*task) for task in tasks]
    return pd.DataFrame([row for rows in results for row in rows])


def summarize(per_seed: pd.DataFrame) -> pd.DataFrame:
    """Mean F per condition and agent, with the ordering verdict"""
    table = per_seed.pivot_table(index="condition", columns="agent", values="f_dot_t", aggfunc="mean")
    table = table.reindex(columns=[AgentKind.DEFAULT.value, AgentKind.ADAPTIVE.value])
    table["verdict"] = [
        "adaptive ≤ default" if adaptive <= default else "adaptive > default"
        for default, adaptive in zip(table[AgentKind.DEFAULT.value], table[AgentKind.ADAPTIVE.value])
    ]
    return table


def cmd_compare(args: argparse.Namespace) -> int:
    for path in args.scenario:
        load_scenario(path)
    load_policy_table(args.policy)

    per_seed = compare(args.scenario, args.seeds, args.policy, args.jobs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    per_seed.to_csv(out / "comparison.csv", index=False, lineterminator="\n")
    summary = summarize(per_seed)
    summary.to_csv(out / "summary.csv", lineterminator="\n")
    print(summary.to_string(float_format=lambda value: f"{value:.4f}"))
    logger.info(f"[CLI] Wrote {out / 'comparison.csv'} ({len(per_seed)} runs)")
    return EXIT_OK


# ================================================================
# EVAL / DATASET / SERVER
# ================================================================

def cmd_eval(args: argparse.Namespace) -> int:
    if args.metric == "smoothness":
        scores = {str(path): smoothness_from_log(path) for path in args.paths}
        for name, score in scores.items():
            print(f"{name}\tF={score.f_dot_t:.6f}\textrema={score.extrema_count}\tT={score.running_time:.2f}s")
        if args.out:
            write_smoothness_report(scores, args.out)
        return EXIT_OK

    records = [record for path in args.paths for record in read_label_records(path)]
    report = accuracy_report(records)
    for name, value in report.display().items():
        print(f"{name}\t{value}%")
    if args.out:
        write_accuracy_report(report, args.out)
    return EXIT_OK


def cmd_gen_dataset(args: argparse.Namespace) -> int:
    table = load_policy_table(args.policy)
    count = datasetgen.write_dataset(datasetgen.generate(args.per_combo, table, args.seed), args.out)
    print(f"{count} samples -> {args.out}")
    return EXIT_OK


def cmd_validate_dataset(args: argparse.Namespace) -> int:
    report = datasetgen.validate(args.path, load_policy_table(args.policy))
    for violation in report.violations:
        print(f"{args.path}:{violation.line}: {violation.error}: {violation.message}")
    print(f"{report.total} records, {len(report.violations)} violations")
    return EXIT_OK if report.ok else EXIT_CHECK_FAILED


def cmd_serve_mock(args: argparse.Namespace) -> int:
    import uvicorn

    from codriver.main import create_app
    from codriver.routers.analyze import load_script

    app = create_app(load_script(args.script))
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="codriver", description="Behavior-adaptive driving pipeline")
    commands = parser.add_subparsers(dest="command", required=True)

    run = commands.add_parser("run", help="drive one scenario and write its log")
    run.add_argument("--scenario", required=True)
    run.add_argument("--agent", choices=[kind.value for kind in AgentKind])
    run.add_argument("--seed", type=int)
    run.add_argument("--analyzer", choices=["mock", "remote"], default="mock")
    run.add_argument("--endpoint")
    run.add_argument("--backend", choices=["analyze", "openai"], default="analyze")
    run.add_argument("--deadline", type=float, help="remote deadline in seconds")
    run.add_argument("--policy")
    run.add_argument("--max-analyzer-failures", type=int, default=None)
    run.add_argument("--bus-debug", help="write bus traffic as JSON lines to this file")
    run.add_argument("--out", default="runs")
    run.set_defaults(handler=cmd_run)

    comp = commands.add_parser("compare", help="smoothness of both agents over seeds")
    comp.add_argument("--scenario", required=True, nargs="+")
    comp.add_argument("--seeds", type=parse_seeds, default=[0])
    comp.add_argument("--policy")
    comp.add_argument("--jobs", type=int, default=1)
    comp.add_argument("--out", default="runs/compare")
    comp.set_defaults(handler=cmd_compare)

    ev = commands.add_parser("eval", help="metric reports for logs")
    ev.add_argument("metric", choices=["smoothness", "accuracy"])
    ev.add_argument("paths", nargs="+")
    ev.add_argument("--out")
    ev.set_defaults(handler=cmd_eval)

    gen = commands.add_parser("gen-dataset", help="write the prompt dataset as JSONL")
    gen.add_argument("--per-combo", type=int, default=1)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--policy")
    gen.add_argument("--out", required=True)
    gen.set_defaults(handler=cmd_gen_dataset)

    val = commands.add_parser("validate-dataset", help="check a dataset JSONL")
    val.add_argument("path")
    val.add_argument("--policy")
    val.set_defaults(handler=cmd_validate_dataset)

    serve = commands.add_parser("serve-mock", help="host the mock analyzer server")
    serve.add_argument("--port", type=int, default=8765)
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--script")
    serve.set_defaults(handler=cmd_serve_mock)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    configure_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.handler(args)
    except ConfigError as exc:
        logger.error(f"[CLI] Configuration error: {exc}")
        return EXIT_CONFIG
    except AnalyzerUnavailable as exc:
        logger.error(f"[CLI] Analyzer unavailable: {exc}")
        return EXIT_ANALYZER
    except FileNotFoundError as exc:
        logger.error(f"[CLI] {exc}")
        return EXIT_CONFIG
    except CodriverError as exc:
        logger.error(f"[CLI] {type(exc).__name__}: {exc}")
        return EXIT_CHECK_FAILED


if __name__ == "__main__":
    sys.exit(main())
