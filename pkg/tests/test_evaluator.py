from __future__ import annotations

import json
import threading

import pytest

from larc.evaluator import (
    FALLBACK_SCORE,
    ConstantJudge,
    Constraint,
    ConstraintKind,
    EmptyPlanError,
    EvaluationCache,
    Evaluator,
    JudgeError,
    LLMJudge,
    Provenance,
    ReactionScore,
    RuleJudge,
    ScoreParseError,
    evaluate_reaction,
    fill,
    load_prompt,
    normalize_score,
    parse_final_score,
    plan_evaluation,
    rule_plan,
)
from larc.llm import HttpChatClient, LLMTransportError
from larc.synthesizer import PlannerConfig
from larc.toolbox import HazardList, LookupPredictor, PredictorError, ToolRegistry

from conftest import registry, rxn

CARC = Constraint(ConstraintKind.AVOID_CARCINOGENS)
PYRO = Constraint(ConstraintKind.AVOID_PYROPHORICS)


class Scripted:
    """Chat client replaying canned replies and recording every request."""

    def __init__(self, *replies: str) -> None:
        self.replies = list(replies)
        self.requests: list[list[dict]] = []

    def complete(self, messages):
        self.requests.append([dict(m) for m in messages])
        if not self.replies:
            raise LLMTransportError("script exhausted")
        return self.replies.pop(0)


class CountingJudge(ConstantJudge):
    def __init__(self, raw=5):
        super().__init__(raw)
        self.calls = 0
        self._lock = threading.Lock()

    def score(self, reaction, plan):
        with self._lock:
            self.calls += 1
        return super().score(reaction, plan)


class TestConstraint:
    def test_substance_payload_canonical(self):
        c = Constraint(ConstraintKind.AVOID_SUBSTANCE, "OCC")
        assert c.payload == "C(C)O" and c.key == "AvoidSubstance:C(C)O"

    def test_substance_needs_payload(self):
        with pytest.raises(ValueError):
            Constraint(ConstraintKind.AVOID_SUBSTANCE)

    def test_other_kinds_reject_payload(self):
        with pytest.raises(ValueError):
            Constraint(ConstraintKind.AVOID_CARCINOGENS, "C")

    def test_dict_roundtrip(self):
        c = Constraint(ConstraintKind.AVOID_SUBSTANCE, "N")
        assert Constraint.from_dict(c.to_dict()) == c

    def test_kind_from_string(self):
        assert Constraint("AvoidPyrophorics").kind is ConstraintKind.AVOID_PYROPHORICS


class TestScores:
    @pytest.mark.parametrize("raw, norm", [(1, 0.0), (2, 0.25), (3, 0.5), (4, 0.75), (5, 1.0)])
    def test_normalize(self, raw, norm):
        assert normalize_score(raw) == norm

    @pytest.mark.parametrize("raw", [0, 6])
    def test_out_of_range(self, raw):
        with pytest.raises(ValueError):
            normalize_score(raw)
        with pytest.raises(ValueError):
            ReactionScore(raw)

    @pytest.mark.parametrize(
        "text, expected",
        [
            ("Answer: 4", 4),
            ("Answer(2)", 2),
            ("reasoning\nAnswer: **3**", 3),
            ("Answer: 1 ... on reflection Answer: 5", 5),
            ("Answer: 9", 5),
            ("Answer: 0", 1),
            ("Answer: -2", 1),
            ("Answer: 3.6", 4),
        ],
    )
    def test_parse_final_score(self, text, expected):
        assert parse_final_score(text) == expected

    def test_parse_final_score_missing(self):
        with pytest.raises(ScoreParseError):
            parse_final_score("I think it is fine")


class TestRuleJudge:
    @pytest.mark.parametrize(
        "probability, expected",
        [(1.0, 1), (0.9, 1), (0.89, 2), (0.7, 2), (0.69, 3), (0.5, 3), (0.3, 4), (0.29, 5)],
    )
    def test_carcinogen_rubric(self, probability, expected):
        hazards = HazardList("c", frozenset({"N"}), {"N": probability})
        judge = RuleJudge(ToolRegistry(LookupPredictor(hazards), HazardList("p", frozenset())))
        assert judge.score(rxn("N.C>>CC"), rule_plan(CARC)).raw == expected

    def test_clean_reaction_scores_five(self):
        judge = RuleJudge(registry(carcinogens=["N"]))
        result = judge.score(rxn("O.C>>CO"), rule_plan(CARC))
        assert result.raw == 5
        assert result.transcript.endswith("Answer: 5")
        assert result.calls[0].args == ("C", "O", "CO")

    def test_hazard_as_product_counts(self):
        judge = RuleJudge(registry(carcinogens=["CO"]))
        assert judge.score(rxn("O.C>>CO"), rule_plan(CARC)).raw == 1

    def test_pyrophoric_member(self):
        judge = RuleJudge(registry(pyrophorics=["C[Zn]C"]))
        assert judge.score(rxn("C[Zn]C.O>>CO"), rule_plan(PYRO)).raw == 1

    @pytest.mark.parametrize(
        "signal, expected",
        [(1.0, 1), (0.99, 2), (0.8, 2), (0.6, 3), (0.4, 4), (0.39, 5)],
    )
    def test_pyrophoric_thresholds(self, signal, expected):
        assert rule_plan(PYRO).score_signal(signal) == expected

    def test_substance(self):
        plan = rule_plan(Constraint(ConstraintKind.AVOID_SUBSTANCE, "OCC"))
        judge = RuleJudge(registry())
        assert judge.score(rxn("CCO.N>>CCON"), plan).raw == 1
        assert judge.score(rxn("CO.N>>CON"), plan).raw == 5
        assert len(judge.score(rxn("CO.N>>CON"), plan).calls) == 3

    def test_tool_error_raises(self):
        class Broken:
            def predict(self, smiles):
                raise PredictorError("down")

        judge = RuleJudge(ToolRegistry(Broken(), None))
        with pytest.raises(PredictorError):
            judge.score(rxn("C.O>>CO"), rule_plan(CARC))

    def test_plan_rubric_covers_all_scores(self):
        for c in (CARC, PYRO):
            assert [s for s, _ in rule_plan(c).rubric] == [1, 2, 3, 4, 5]

    def test_plan_id_stable(self):
        assert rule_plan(CARC).plan_id == rule_plan(CARC).plan_id != rule_plan(PYRO).plan_id


PLAN_REPLY = "I will check each molecule.\n```\nCarcinogenicity(all reactants and the product)\n```\n1: carcinogen present\n5: none"
TOOLS_REPLY = "Checking.\n```\nCarcinogenicity(`N`, `C`, `CN`)\n```"


class TestLLMJudge:
    def test_two_phase_protocol(self):
        client = Scripted(PLAN_REPLY, TOOLS_REPLY, "N is listed.\nAnswer: 1")
        judge = LLMJudge(client, registry(carcinogens=["N"]))
        plan = judge.plan(CARC)
        assert [s.tool for s in plan.steps] == ["Carcinogenicity"]
        assert plan.instructions == PLAN_REPLY
        result = judge.score(rxn("N.C>>CN"), plan)
        assert (result.raw, result.provenance) == (1, Provenance.EVALUATED)
        assert result.results[0].render() == "Carcinogenicity: 1.000, 0.000, 0.000"
        second = client.requests[2]
        assert [m["role"] for m in second] == ["system", "user", "assistant", "user", "assistant", "user"]
        assert "Carcinogenicity: 1.000, 0.000, 0.000" in second[-1]["content"]
        assert "`CN`" in second[3]["content"]

    def test_plan_without_steps(self):
        judge = LLMJudge(Scripted("I would just guess."), registry())
        with pytest.raises(EmptyPlanError):
            judge.plan(CARC)

    def test_retry_then_success(self):
        client = Scripted(PLAN_REPLY, "no block", TOOLS_REPLY, "Answer(4)")
        judge = LLMJudge(client, registry())
        assert judge.score(rxn("N.C>>CN"), judge.plan(CARC)).raw == 4

    def test_fallback_after_retries(self):
        client = Scripted(PLAN_REPLY, TOOLS_REPLY, "hmm", "still no score")
        judge = LLMJudge(client, registry())
        result = judge.score(rxn("N.C>>CN"), judge.plan(CARC))
        assert (result.raw, result.provenance) == (FALLBACK_SCORE, Provenance.FALLBACK)

    def test_transport_error_propagates(self):
        judge = LLMJudge(Scripted(PLAN_REPLY), registry())
        plan = judge.plan(CARC)
        with pytest.raises(LLMTransportError):
            judge.score(rxn("N.C>>CN"), plan)

    def test_unregistered_tool_reported_not_raised(self):
        client = Scripted(PLAN_REPLY, "```\nPyrophoricity(`C`)\n```", "Answer: 5")
        judge = LLMJudge(client, ToolRegistry())
        result = judge.score(rxn("N.C>>CN"), judge.plan(CARC))
        assert result.raw == 5 and "failed" in result.results[0].render()

    def test_prompts_are_filled(self):
        for name in ("plan", "evaluate_tools", "evaluate_score"):
            assert load_prompt(name)
        text = fill("a {tool outputs} b {constraint}", tool_outputs="X", constraint="Y")
        assert text == "a X b Y"


class TestHttpChatClient:
    def test_roundtrip(self, json_server):
        seen = {}

        def handler(path, body):
            seen.update(path=path, body=body)
            return 200, {"choices": [{"message": {"content": "Answer: 5"}}]}

        client = HttpChatClient(json_server(handler) + "/v1", "m", "k")
        assert client.complete([{"role": "user", "content": "hi"}]) == "Answer: 5"
        assert seen["path"] == "/v1/chat/completions"
        assert seen["body"]["model"] == "m" and seen["body"]["temperature"] == 0.0

    def test_bad_payload(self, json_server):
        client = HttpChatClient(json_server(lambda p, b: (200, {"oops": 1})), "m")
        with pytest.raises(LLMTransportError):
            client.complete([])

    def test_from_env_requires_settings(self, monkeypatch):
        monkeypatch.delenv("LARC_LLM_URL", raising=False)
        with pytest.raises(LLMTransportError):
            HttpChatClient.from_env()

    def test_from_env(self, monkeypatch):
        monkeypatch.setenv("LARC_LLM_URL", "http://x")
        monkeypatch.setenv("LARC_LLM_MODEL", "m")
        monkeypatch.setenv("LARC_LLM_KEY", "k")
        assert HttpChatClient.from_env() == HttpChatClient("http://x", "m", "k")


REACTIONS = [rxn(f"{'C' * i}.O>>{'C' * i}O") for i in range(1, 16)]


class TestEvaluator:
    def test_cache_hit_does_not_reinvoke(self):
        judge = CountingJudge(3)
        ev = Evaluator(judge, rule_plan(CARC))
        first = ev.evaluate(REACTIONS[0])
        assert ev.evaluate(REACTIONS[0]) is first
        assert judge.calls == 1 == ev.cache.invocations

    def test_cache_keyed_by_constraint(self):
        judge = CountingJudge()
        cache = EvaluationCache()
        Evaluator(judge, rule_plan(CARC), cache=cache).evaluate(REACTIONS[0])
        Evaluator(judge, rule_plan(PYRO), cache=cache).evaluate(REACTIONS[0])
        assert judge.calls == 2 and len(cache) == 2

    def test_budget(self):
        judge = CountingJudge(2)
        ev = Evaluator(judge, rule_plan(CARC), max_evaluations=10, default_score=5)
        scores = ev.evaluate_many(REACTIONS)
        assert judge.calls == 10
        assert [s.raw for s in scores] == [2] * 10 + [5] * 5
        assert {s.provenance for s in scores[10:]} == {Provenance.DEFAULT}

    def test_zero_budget(self):
        judge = CountingJudge()
        ev = Evaluator(judge, rule_plan(CARC), max_evaluations=0, default_score=4)
        assert ev.evaluate(REACTIONS[0]) == ReactionScore(4, Provenance.DEFAULT, "evaluation budget exhausted")
        assert judge.calls == 0

    def test_parallel_matches_serial(self):
        serial = Evaluator(CountingJudge(2), rule_plan(CARC), max_evaluations=7)
        parallel = Evaluator(CountingJudge(2), rule_plan(CARC), max_evaluations=7, max_workers=4)
        a = serial.evaluate_many(REACTIONS)
        b = parallel.evaluate_many(REACTIONS)
        assert [(s.raw, s.provenance) for s in a] == [(s.raw, s.provenance) for s in b]
        assert parallel.judge.calls == 7

    def test_duplicates_in_batch(self):
        judge = CountingJudge()
        ev = Evaluator(judge, rule_plan(CARC))
        assert len(ev.evaluate_many([REACTIONS[0], REACTIONS[0], REACTIONS[1]])) == 2
        assert judge.calls == 2

    def test_judge_failure_releases_slot(self):
        class Flaky(ConstantJudge):
            fail = True

            def score(self, reaction, plan):
                if self.fail:
                    self.fail = False
                    raise JudgeError("boom")
                return super().score(reaction, plan)

        ev = Evaluator(Flaky(), rule_plan(CARC))
        with pytest.raises(JudgeError):
            ev.evaluate(REACTIONS[0])
        assert ev.evaluate(REACTIONS[0]).raw == 5

    def test_score_view(self):
        ev = Evaluator(CountingJudge(4), rule_plan(CARC))
        ev.evaluate(REACTIONS[0])
        view = ev.scores
        assert view[REACTIONS[0].key].raw == 4
        assert REACTIONS[1].key not in view
        assert list(view) == [REACTIONS[0].key] and len(view) == 1

    def test_log(self, tmp_path):
        log = tmp_path / "eval.jsonl"
        ev = Evaluator(RuleJudge(registry(carcinogens=["N"])), rule_plan(CARC), max_evaluations=1, log_path=log)
        ev.evaluate_many([rxn("N.C>>CN"), rxn("O.C>>CO")])
        records = [json.loads(line) for line in log.read_text().splitlines()]
        assert [r["provenance"] for r in records] == ["evaluated", "default"]
        assert records[0]["raw"] == 1 and records[0]["tool_calls"] == ["Carcinogenicity(`C`, `N`, `CN`)"]
        assert records[0]["plan_id"] == rule_plan(CARC).plan_id

    def test_evaluate_reaction_helper(self):
        cfg = PlannerConfig(max_evaluations=0, default_score=5)
        cache = EvaluationCache()
        score = evaluate_reaction(REACTIONS[0], rule_plan(CARC), cache, cfg, ConstantJudge(1))
        assert score.provenance is Provenance.DEFAULT

    def test_plan_evaluation(self):
        assert plan_evaluation(CARC, ConstantJudge()) == rule_plan(CARC)
