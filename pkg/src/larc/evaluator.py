"""Reaction judge: plans an evaluation once per task, then scores reactions 1-5.

Two interchangeable judges are provided. :class:`RuleJudge` executes a fixed
tool plan per constraint kind and maps the tool output through a threshold
rubric; :class:`LLMJudge` runs the two-phase chat protocol (tool calls, then
a final ``Answer``). :class:`Evaluator` wraps either one with a cache and an
evaluation budget.
"""

from __future__ import annotations

import json
import logging
import re
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from pathlib import Path
from collections.abc import Mapping
from typing import TYPE_CHECKING, Any, Iterable, Iterator, Protocol, Sequence

from .chem import canonicalize, fnv1a64
from .llm import ChatClient, Message
from .toolbox import (
    TOOL_NAMES,
    ActionParseError,
    ToolCall,
    ToolError,
    ToolRegistry,
    ToolResult,
    execute,
    parse_action_block,
    render_action_block,
    render_results,
)

if TYPE_CHECKING:
    from .synthesizer import Reaction

logger = logging.getLogger(__name__)

FALLBACK_SCORE = 3


class ConstraintKind(str, Enum):
    AVOID_CARCINOGENS = "AvoidCarcinogens"
    AVOID_PYROPHORICS = "AvoidPyrophorics"
    AVOID_SUBSTANCE = "AvoidSubstance"


class Provenance(str, Enum):
    EVALUATED = "evaluated"
    DEFAULT = "default"
    FALLBACK = "fallback"


class JudgeError(RuntimeError):
    pass


class EmptyPlanError(JudgeError):
    pass


class ScoreParseError(ValueError):
    pass


@dataclass(frozen=True)
class Constraint:
    kind: ConstraintKind
    payload: str | None = None
    description: str = ""

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", ConstraintKind(self.kind))
        if self.kind is ConstraintKind.AVOID_SUBSTANCE:
            if not self.payload:
                raise ValueError("AvoidSubstance needs a payload SMILES")
            object.__setattr__(self, "payload", canonicalize(self.payload))
        elif self.payload is not None:
            raise ValueError(f"{self.kind.value} takes no payload")
        if not self.description:
            object.__setattr__(self, "description", self._default_description())

    def _default_description(self) -> str:
        if self.kind is ConstraintKind.AVOID_CARCINOGENS:
            return "Avoid carcinogenic substances anywhere in the synthetic route."
        if self.kind is ConstraintKind.AVOID_PYROPHORICS:
            return "Avoid pyrophoric or water-reactive substances anywhere in the synthetic route."
        return f"Avoid using {self.payload} anywhere in the synthetic route."

    @property
    def key(self) -> str:
        return f"{self.kind.value}:{self.payload or ''}"

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {"kind": self.kind.value}
        if self.payload:
            d["payload"] = self.payload
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> Constraint:
        return cls(ConstraintKind(d["kind"]), d.get("payload"), d.get("description", ""))


@dataclass(frozen=True)
class PlanStep:
    tool: str
    argument: str


@dataclass(frozen=True)
class EvaluationPlan:
    constraint: Constraint
    steps: tuple[PlanStep, ...]
    rubric: tuple[tuple[int, str], ...]
    # (threshold, score) pairs, highest threshold first; rule mode only
    thresholds: tuple[tuple[float, int], ...] = ()
    transcript: str = ""

    def __post_init__(self) -> None:
        if not self.steps:
            raise EmptyPlanError("evaluation plan has no steps")
        scores = {s for s, _ in self.rubric}
        if not {1, 5} <= scores:
            raise ValueError("rubric must cover scores 1 and 5")

    @property
    def instructions(self) -> str:
        if self.transcript:
            return self.transcript
        lines = ["```"]
        lines += [f"{s.tool}({s.argument})" for s in self.steps]
        lines.append("```")
        lines += [f"{score}: {text}" for score, text in self.rubric]
        return "\n".join(lines)

    @property
    def plan_id(self) -> str:
        return f"{fnv1a64((self.constraint.key + self.instructions).encode()):016x}"

    def score_signal(self, signal: float) -> int:
        for threshold, score in self.thresholds:
            if signal >= threshold:
                return score
        return 5


@dataclass(frozen=True)
class ReactionScore:
    raw: int
    provenance: Provenance = Provenance.EVALUATED
    transcript: str = ""

    def __post_init__(self) -> None:
        if not 1 <= self.raw <= 5:
            raise ValueError(f"raw score {self.raw} outside 1..5")
        object.__setattr__(self, "provenance", Provenance(self.provenance))

    @property
    def normalized(self) -> float:
        return normalize_score(self.raw)

    def to_dict(self) -> dict[str, Any]:
        return {"raw": self.raw, "normalized": self.normalized, "provenance": self.provenance.value}


def normalize_score(raw: int) -> float:
    """Map a 1-5 judge score onto [0, 1]."""
    if not 1 <= raw <= 5:
        raise ValueError(f"score {raw} outside 1..5")
    return (raw - 1) / 4


_ANSWER = re.compile(r"Answer\s*(?::|\()\s*[`*]*\s*([+-]?\d+(?:\.\d+)?)")


def parse_final_score(text: str) -> int:
    """Last ``Answer: N`` or ``Answer(N)`` in ``text``, clamped to 1..5."""
    matches = _ANSWER.findall(text)
    if not matches:
        raise ScoreParseError("no Answer found in judge output")
    value = float(matches[-1])
    score = int(round(value))
    clamped = min(5, max(1, score))
    if clamped != value:
        logger.warning("judge answer %s adjusted to %d", matches[-1], clamped)
    return clamped


# ---------------------------------------------------------------------------
# Judges
# ---------------------------------------------------------------------------


@dataclass
class Judgement:
    raw: int
    provenance: Provenance = Provenance.EVALUATED
    transcript: str = ""
    calls: list[ToolCall] = field(default_factory=list)
    results: list[ToolResult] = field(default_factory=list)


class Judge(Protocol):
    name: str

    def plan(self, constraint: Constraint) -> EvaluationPlan: ...

    def score(self, reaction: Reaction, plan: EvaluationPlan) -> Judgement: ...


def reaction_molecules(reaction: Reaction) -> list[str]:
    return list(dict.fromkeys([*reaction.reactants, reaction.product]))


CARCINOGEN_THRESHOLDS = ((0.9, 1), (0.7, 2), (0.5, 3), (0.3, 4))
PYROPHORIC_THRESHOLDS = ((1.0, 1), (0.8, 2), (0.6, 3), (0.4, 4))


def rule_plan(constraint: Constraint) -> EvaluationPlan:
    """The fixed plan the rule judge uses for each constraint kind."""
    kind = constraint.kind
    if kind is ConstraintKind.AVOID_SUBSTANCE:
        return EvaluationPlan(
            constraint,
            (PlanStep("Identify", f"each reaction molecule, {constraint.payload}"),),
            (
                (1, f"some reactant or the product is {constraint.payload}"),
                (5, f"no reactant or product is {constraint.payload}"),
            ),
            ((1.0, 1),),
        )
    if kind is ConstraintKind.AVOID_CARCINOGENS:
        tool, thresholds, what = "Carcinogenicity", CARCINOGEN_THRESHOLDS, "carcinogen probability"
    else:
        tool, thresholds, what = "Pyrophoricity", PYROPHORIC_THRESHOLDS, "pyrophoric-list similarity"
    rubric = []
    lower = None
    for threshold, score in thresholds:
        bound = f">= {threshold:.1f}" if lower is None else f"in [{threshold:.1f}, {lower:.1f})"
        if threshold == 1.0:
            bound = "= 1.0"
        rubric.append((score, f"highest {what} {bound}"))
        lower = threshold
    rubric.append((5, f"highest {what} < {lower:.1f}"))
    return EvaluationPlan(
        constraint,
        (PlanStep(tool, "all reactants and the product"),),
        tuple(rubric),
        thresholds,
    )


@dataclass
class RuleJudge:
    """Deterministic judge: run the plan's tools, apply the threshold rubric."""

    registry: ToolRegistry
    name: str = "rule"

    def plan(self, constraint: Constraint) -> EvaluationPlan:
        return rule_plan(constraint)

    def _calls(self, step: PlanStep, molecules: list[str], plan: EvaluationPlan) -> list[ToolCall]:
        if step.tool == "Identify":
            return [ToolCall("Identify", (m, plan.constraint.payload)) for m in molecules]
        if step.tool == "AIExpert":
            return [ToolCall("AIExpert", (step.argument,))]
        return [ToolCall(step.tool, tuple(molecules))]

    def score(self, reaction: Reaction, plan: EvaluationPlan) -> Judgement:
        molecules = reaction_molecules(reaction)
        calls: list[ToolCall] = []
        results: list[ToolResult] = []
        signal = 0.0
        for step in plan.steps:
            for call in self._calls(step, molecules, plan):
                result = execute(call, self.registry)
                calls.append(call)
                results.append(result)
                for s in result.scores:
                    if s.error is not None:
                        raise JudgeError(f"{call.name} failed on {s.input}: {s.error}")
                    signal = max(signal, float(s.value))
        raw = plan.score_signal(signal)
        transcript = "\n".join(
            [render_action_block(calls), render_results(results), f"Answer: {raw}"]
        )
        return Judgement(raw, Provenance.EVALUATED, transcript, calls, results)


@dataclass
class ConstantJudge:
    """Returns the same score for every reaction; used for ablations and tests."""

    raw: int = 5
    name: str = "constant"

    def plan(self, constraint: Constraint) -> EvaluationPlan:
        return rule_plan(constraint)

    def score(self, reaction: Reaction, plan: EvaluationPlan) -> Judgement:
        return Judgement(self.raw, Provenance.EVALUATED, f"Answer: {self.raw}")


def load_prompt(name: str) -> str:
    return resources.files("larc").joinpath("prompts", f"{name}.txt").read_text(encoding="utf-8")


def fill(template: str, **values: str) -> str:
    for key, value in values.items():
        template = template.replace("{" + key.replace("_", " ") + "}", value)
    return template


_PLAN_CALL = re.compile(
    r"(?:Action:\s*)?\b(" + "|".join(n for n in TOOL_NAMES if n != "Answer") + r")\s*\((.*)\)"
)


@dataclass
class LLMJudge:
    """Judge speaking the two-phase chat protocol through a :class:`ChatClient`."""

    client: ChatClient
    registry: ToolRegistry
    retries: int = 1
    name: str = "llm"
    prompts: dict[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        for key in ("plan", "evaluate_tools", "evaluate_score"):
            self.prompts.setdefault(key, load_prompt(key))

    def _planning_messages(self, constraint: Constraint) -> list[Message]:
        return [
            {"role": "system", "content": fill(self.prompts["plan"], constraint=constraint.description)},
            {"role": "user", "content": "Write the evaluation plan and rubric."},
        ]

    def plan(self, constraint: Constraint) -> EvaluationPlan:
        text = self.client.complete(self._planning_messages(constraint))
        steps = tuple(
            PlanStep(m.group(1), m.group(2).strip()) for m in _PLAN_CALL.finditer(text)
        )
        if not steps:
            raise EmptyPlanError("language model returned a plan without tool steps")
        rubric = ((1, "constraint completely violated"), (5, "constraint completely satisfied"))
        return EvaluationPlan(constraint, steps, rubric, (), text)

    def _ask(self, messages: list[Message], parse) -> tuple[str, Any] | None:
        for attempt in range(1 + self.retries):
            reply = self.client.complete(messages)
            try:
                return reply, parse(reply)
            except (ActionParseError, ScoreParseError) as exc:
                logger.info("judge reply unparseable (attempt %d): %s", attempt + 1, exc)
        return None

    def score(self, reaction: Reaction, plan: EvaluationPlan) -> Judgement:
        messages = self._planning_messages(plan.constraint)
        messages.append({"role": "assistant", "content": plan.instructions})
        messages.append(
            {
                "role": "user",
                "content": fill(
                    self.prompts["evaluate_tools"],
                    reactants=".".join(f"`{r}`" for r in reaction.reactants),
                    product=reaction.product,
                    evaluation_instructions=plan.instructions,
                ),
            }
        )
        first = self._ask(messages, parse_action_block)
        if first is None:
            return Judgement(FALLBACK_SCORE, Provenance.FALLBACK, "unparseable tool block")
        reply, calls = first
        calls = [c for c in calls if c.name != "Answer"]
        results = []
        for call in calls:
            try:
                results.append(execute(call, self.registry))
            except ToolError as exc:
                results.append(ToolResult(call.name, (), f"failed: {exc}"))
        outputs = render_results(results) or "(no tool calls)"
        messages.append({"role": "assistant", "content": reply})
        messages.append(
            {
                "role": "user",
                "content": fill(
                    self.prompts["evaluate_score"],
                    tool_outputs=outputs,
                    constraint=plan.constraint.description,
                ),
            }
        )
        second = self._ask(messages, parse_final_score)
        transcript = "\n".join([reply, outputs])
        if second is None:
            return Judgement(FALLBACK_SCORE, Provenance.FALLBACK, transcript, calls, results)
        final, raw = second
        return Judgement(raw, Provenance.EVALUATED, transcript + "\n" + final, calls, results)


# ---------------------------------------------------------------------------
# Cache and budget
# ---------------------------------------------------------------------------


class EvaluationCache:
    """Scores keyed by (reaction key, constraint key), plus the judge call count."""

    def __init__(self) -> None:
        self._scores: dict[tuple[str, str], ReactionScore] = {}
        self._inflight: dict[tuple[str, str], threading.Event] = {}
        self._lock = threading.Lock()
        self.invocations = 0

    def get(self, key: tuple[str, str]) -> ReactionScore | None:
        return self._scores.get(key)

    def __contains__(self, key: tuple[str, str]) -> bool:
        return key in self._scores

    def __len__(self) -> int:
        return len(self._scores)

    def items(self):
        return list(self._scores.items())


class ScoreView(Mapping):
    """Read-only view of cached scores for one constraint, keyed by reaction key."""

    def __init__(self, cache: EvaluationCache, constraint_key: str) -> None:
        self._cache = cache
        self._constraint_key = constraint_key

    def __getitem__(self, reaction_key: str) -> ReactionScore:
        return self._cache._scores[(reaction_key, self._constraint_key)]

    def __iter__(self) -> Iterator[str]:
        return (r for r, c in self.cache_keys() if c == self._constraint_key)

    def __len__(self) -> int:
        return sum(1 for _ in self)

    def cache_keys(self) -> list[tuple[str, str]]:
        return list(self._cache._scores)


class Evaluator:
    """Scores reactions under one plan, caching results and enforcing the budget.

    Once ``max_evaluations`` judge calls have been made, every new reaction
    gets ``default_score`` with provenance ``default``.
    """

    def __init__(
        self,
        judge: Judge,
        plan: EvaluationPlan,
        *,
        max_evaluations: int = 300,
        default_score: int = 5,
        cache: EvaluationCache | None = None,
        log_path: str | Path | None = None,
        max_workers: int = 1,
    ) -> None:
        self.judge = judge
        self.plan = plan
        self.max_evaluations = max_evaluations
        self.default_score = default_score
        self.cache = cache if cache is not None else EvaluationCache()
        self.max_workers = max_workers
        self.log_path = Path(log_path) if log_path else None
        self._log_lock = threading.Lock()
        if self.log_path:
            self.log_path.parent.mkdir(parents=True, exist_ok=True)
            self.log_path.write_text("", encoding="utf-8")

    def key(self, reaction: Reaction) -> tuple[str, str]:
        return (reaction.key, self.plan.constraint.key)

    @property
    def scores(self) -> ScoreView:
        return ScoreView(self.cache, self.plan.constraint.key)

    def lookup(self, reaction: Reaction) -> ReactionScore | None:
        return self.cache.get(self.key(reaction))

    def _reserve(self, key: tuple[str, str]) -> tuple[str, Any]:
        """Decide under the lock whether this caller runs the judge."""
        cache = self.cache
        while True:
            with cache._lock:
                if key in cache._scores:
                    return "hit", cache._scores[key]
                event = cache._inflight.get(key)
                if event is None:
                    if cache.invocations >= self.max_evaluations:
                        score = ReactionScore(
                            self.default_score, Provenance.DEFAULT, "evaluation budget exhausted"
                        )
                        cache._scores[key] = score
                        return "default", score
                    cache.invocations += 1
                    cache._inflight[key] = threading.Event()
                    return "run", None
            event.wait()

    def evaluate(self, reaction: Reaction) -> ReactionScore:
        status, score = self._reserve(self.key(reaction))
        if status == "run":
            return self._run_reserved(reaction)
        if status == "default":
            self._log(reaction, None, score, 0.0)
        return score

    def evaluate_many(self, reactions: Iterable[Reaction]) -> list[ReactionScore]:
        """Score reactions, reserving budget in input order so results are deterministic."""
        unique = list({r.key: r for r in reactions}.values())
        if self.max_workers <= 1 or len(unique) <= 1:
            return [self.evaluate(r) for r in unique]
        with ThreadPoolExecutor(self.max_workers) as pool:
            reserved = [(r, self._reserve(self.key(r))) for r in unique]
            futures = [
                pool.submit(self._run_reserved, r) if status == "run" else None
                for r, (status, _) in reserved
            ]
            out = []
            for (r, (status, score)), fut in zip(reserved, futures):
                if fut is not None:
                    out.append(fut.result())
                else:
                    if status == "default":
                        self._log(r, None, score, 0.0)
                    out.append(score)
            return out

    def _run_reserved(self, reaction: Reaction) -> ReactionScore:
        key = self.key(reaction)
        start = time.perf_counter()
        try:
            judgement = self.judge.score(reaction, self.plan)
        except BaseException:
            with self.cache._lock:
                self.cache._inflight.pop(key).set()
            raise
        score = ReactionScore(judgement.raw, judgement.provenance, judgement.transcript)
        with self.cache._lock:
            self.cache._scores[key] = score
            self.cache._inflight.pop(key).set()
        self._log(reaction, judgement, score, time.perf_counter() - start)
        return score

    def _log(self, reaction: Reaction, judgement: Judgement | None, score: ReactionScore, seconds: float) -> None:
        if self.log_path is None:
            return
        record = {
            "reaction": reaction.key,
            "plan_id": self.plan.plan_id,
            "tool_calls": [c.render() for c in judgement.calls] if judgement else [],
            "results": [r.render() for r in judgement.results] if judgement else [],
            "raw": score.raw,
            "provenance": score.provenance.value,
            "seconds": round(seconds, 6),
        }
        with self._log_lock, self.log_path.open("a", encoding="utf-8") as fh:
            fh.write(json.dumps(record) + "\n")


def evaluate_reaction(
    reaction: Reaction,
    plan: EvaluationPlan,
    cache: EvaluationCache,
    cfg: Any,
    judge: Judge,
) -> ReactionScore:
    """One-shot helper: score ``reaction`` with the budget and default from ``cfg``."""
    evaluator = Evaluator(
        judge,
        plan,
        max_evaluations=cfg.max_evaluations,
        default_score=cfg.default_score,
        cache=cache,
    )
    return evaluator.evaluate(reaction)


def plan_evaluation(constraint: Constraint, judge: Judge) -> EvaluationPlan:
    return judge.plan(constraint)

