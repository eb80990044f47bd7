"""Batch runs: plan every task, check every route, aggregate success rates."""

from __future__ import annotations

import json
import logging
import os
import time
import traceback
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Sequence

from .evaluator import ConstantJudge, Judge, LLMJudge, RuleJudge
from .llm import HttpChatClient
from .synthesizer import (
    PlannerConfig,
    PlanResult,
    ReactionDatabase,
    decision_log_header,
    plan,
    write_decision_log,
)
from .toolbox import HazardList, LookupPredictor, RemotePredictor, ToolRegistry
from .validation import (
    SUMMARY_COLUMNS,
    Metrics,
    RouteReport,
    aggregate_metrics,
    check_route,
    summary_row,
    write_csv,
    write_json,
)
from .world import Task, hazard_truth

logger = logging.getLogger(__name__)

JUDGE_MODES = ("rule", "llm", "constant")
METRIC_COLUMNS = ("group", "n_total", "n_present", "n_valid", "n_success", "presence", "validity", "success")


def build_registry(hazards: dict[str, HazardList]) -> ToolRegistry:
    """Tools backed by the hazard lists; ``LARC_CARCINOGEN_URL`` selects a remote predictor."""
    url = os.environ.get("LARC_CARCINOGEN_URL")
    carcinogen = hazards.get("carcinogen") or HazardList("carcinogen", frozenset())
    backend = RemotePredictor(url) if url else LookupPredictor(carcinogen)
    return ToolRegistry(backend, hazards.get("pyrophoric") or HazardList("pyrophoric", frozenset()))


def make_judge(mode: str, hazards: dict[str, HazardList], constant_score: int = 5) -> Judge:
    if mode == "rule":
        return RuleJudge(build_registry(hazards))
    if mode == "constant":
        return ConstantJudge(constant_score)
    if mode == "llm":
        return LLMJudge(HttpChatClient.from_env(), build_registry(hazards))
    raise ValueError(f"unknown judge mode {mode!r}")


@dataclass
class TaskOutcome:
    task: Task
    report: RouteReport
    status: str
    result: PlanResult | None = None
    error: str | None = None


@dataclass
class BenchReport:
    outcomes: list[TaskOutcome]
    metrics: dict[str, Metrics]
    out_dir: Path | None = None
    timing: dict[str, Any] = field(default_factory=dict)

    @property
    def overall(self) -> Metrics:
        return self.metrics["all"]


def _run_task(
    task: Task,
    db: ReactionDatabase,
    stock: frozenset[str],
    hazards: dict[str, HazardList],
    cfg: PlannerConfig,
    judge_factory: Callable[[], Judge],
    out_dir: Path | None,
) -> TaskOutcome:
    truth = hazard_truth(task.constraint, hazards)
    eval_log = out_dir / "evaluations" / f"{task.id}.jsonl" if out_dir else None
    try:
        result = plan(
            task.target, task.constraint, stock, cfg, judge_factory(), db, evaluation_log=eval_log
        )
    except Exception as exc:  # per-task failures are recorded, the run continues
        logger.error("task %s failed: %s", task.id, exc)
        report = check_route([], task.target, stock, truth)
        return TaskOutcome(task, report, "error", None, f"{type(exc).__name__}: {exc}\n{traceback.format_exc()}")
    report = check_route(result.route, task.target, stock, truth)
    report.seconds = result.seconds
    report.evaluations = result.evaluations
    if out_dir:
        write_json(
            out_dir / "routes" / f"{task.id}.json",
            {
                "task": task.to_dict(),
                "status": result.status,
                "route": result.route.to_dict(),
                "checks": {k: v for k, v in report.to_dict().items() if k != "seconds"},
            },
        )
        header = decision_log_header(cfg, task.target, task.constraint)
        write_decision_log(out_dir / "decisions" / f"{task.id}.jsonl", header, result.decisions)
    return TaskOutcome(task, report, result.status, result)


def group_metrics(outcomes: Sequence[TaskOutcome]) -> dict[str, Metrics]:
    groups: dict[str, list[RouteReport]] = {"all": [o.report for o in outcomes]}
    for o in outcomes:
        groups.setdefault(o.task.constraint.kind.value, []).append(o.report)
    return {k: aggregate_metrics(v) for k, v in groups.items()}


def run_bench(
    tasks: Sequence[Task],
    db: ReactionDatabase,
    stock: frozenset[str],
    hazards: dict[str, HazardList],
    cfg: PlannerConfig,
    judge_mode: str = "rule",
    *,
    out_dir: str | Path | None = None,
    jobs: int = 1,
    constant_score: int = 5,
) -> BenchReport:
    """Plan every task and write per-task routes, decision logs and summaries.

    Files under ``out_dir``: ``routes/<id>.json``, ``decisions/<id>.jsonl``,
    ``evaluations/<id>.jsonl``, ``summary.csv`` (one row per task),
    ``metrics.csv`` (overall and per constraint kind) and ``timing.json``.
    Only the timing and evaluation logs carry wall-clock values.
    """
    if not tasks:
        raise ValueError("no tasks to run")
    if judge_mode not in JUDGE_MODES:
        raise ValueError(f"unknown judge mode {judge_mode!r}")
    out = Path(out_dir) if out_dir else None
    if out:
        for sub in ("routes", "decisions", "evaluations"):
            (out / sub).mkdir(parents=True, exist_ok=True)

    def factory() -> Judge:
        return make_judge(judge_mode, hazards, constant_score)

    start = time.perf_counter()
    args = (db, frozenset(stock), hazards, cfg, factory, out)
    if jobs > 1:
        with ThreadPoolExecutor(jobs) as pool:
            outcomes = list(pool.map(lambda t: _run_task(t, *args), tasks))
    else:
        outcomes = [_run_task(t, *args) for t in tasks]
    metrics = group_metrics(outcomes)
    solved = [o.report.seconds for o in outcomes if o.report.success]
    timing = {
        "total_seconds": time.perf_counter() - start,
        "mean_minutes_per_successful_route": (sum(solved) / len(solved) / 60) if solved else None,
        "per_task_seconds": {o.task.id: o.report.seconds for o in outcomes},
        "note": "engine-only wall time; no language-model latency",
    }
    report = BenchReport(outcomes, metrics, out, timing)
    if out:
        write_csv(
            out / "summary.csv",
            [summary_row(o.task.id, o.task.constraint.kind.value, o.status, o.report) for o in outcomes],
            SUMMARY_COLUMNS,
        )
        write_csv(
            out / "metrics.csv",
            [{"group": k, **m.to_row()} for k, m in metrics.items()],
            METRIC_COLUMNS,
        )
        write_json(out / "timing.json", timing)
        errors = {o.task.id: o.error for o in outcomes if o.error}
        if errors:
            write_json(out / "errors.json", errors)
    return report


@dataclass
class Ablation:
    guided: BenchReport
    unguided: BenchReport
    rows: list[dict[str, Any]]


ABLATION_COLUMNS = ("group", "guided_success", "constant_success", "delta")


def run_ablation(
    tasks: Sequence[Task],
    db: ReactionDatabase,
    stock: frozenset[str],
    hazards: dict[str, HazardList],
    cfg: PlannerConfig,
    *,
    out_dir: str | Path | None = None,
    jobs: int = 1,
) -> Ablation:
    """Same tasks with the rule judge and with a judge that always answers 5."""
    out = Path(out_dir) if out_dir else None
    guided = run_bench(tasks, db, stock, hazards, cfg, "rule", out_dir=out and out / "rule", jobs=jobs)
    unguided = run_bench(
        tasks, db, stock, hazards, cfg, "constant", out_dir=out and out / "constant", jobs=jobs
    )
    rows = []
    for group, m in guided.metrics.items():
        other = unguided.metrics[group]
        rows.append(
            {
                "group": group,
                "guided_success": f"{m.success:.1f}",
                "constant_success": f"{other.success:.1f}",
                "delta": f"{m.success - other.success:.1f}",
            }
        )
    if out:
        write_csv(out / "ablation.csv", rows, ABLATION_COLUMNS)
    return Ablation(guided, unguided, rows)


def dump_report(report: BenchReport) -> str:
    return json.dumps({k: m.to_row() for k, m in report.metrics.items()}, indent=2)
