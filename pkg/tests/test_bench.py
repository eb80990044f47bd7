from __future__ import annotations

import csv
import json

import pytest

from larc.bench import make_judge, run_ablation, run_bench
from larc.evaluator import ConstantJudge, LLMJudge, RuleJudge
from larc.synthesizer import PlannerConfig
from larc.world import Task, WorldParams, generate_world

from conftest import db_of


@pytest.fixture(scope="module")
def world():
    return generate_world(21, WorldParams(n_molecules=80, n_reactions=70, n_targets=6))


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_outputs(world, tmp_path):
    report = run_bench(world.tasks, world.reactions, world.stock, world.hazards, PlannerConfig(), out_dir=tmp_path)
    rows = read_csv(tmp_path / "summary.csv")
    assert [r["task_id"] for r in rows] == [t.id for t in world.tasks]
    groups = [r["group"] for r in read_csv(tmp_path / "metrics.csv")]
    assert groups == ["all", "AvoidCarcinogens", "AvoidPyrophorics", "AvoidSubstance"]
    for task in world.tasks:
        doc = json.loads((tmp_path / "routes" / f"{task.id}.json").read_text())
        assert doc["task"]["id"] == task.id and "seconds" not in doc["checks"]
        assert (tmp_path / "decisions" / f"{task.id}.jsonl").exists()
    timing = json.loads((tmp_path / "timing.json").read_text())
    assert set(timing["per_task_seconds"]) == {t.id for t in world.tasks}
    assert report.overall.n_total == len(world.tasks)


def test_deterministic_files(world, tmp_path):
    for name in ("a", "b"):
        run_bench(world.tasks, world.reactions, world.stock, world.hazards, PlannerConfig(), out_dir=tmp_path / name)
    assert (tmp_path / "a" / "summary.csv").read_bytes() == (tmp_path / "b" / "summary.csv").read_bytes()
    for task in world.tasks:
        a = (tmp_path / "a" / "routes" / f"{task.id}.json").read_bytes()
        assert a == (tmp_path / "b" / "routes" / f"{task.id}.json").read_bytes()


def test_parallel_matches_serial(world, tmp_path):
    run_bench(world.tasks, world.reactions, world.stock, world.hazards, PlannerConfig(), out_dir=tmp_path / "s")
    run_bench(world.tasks, world.reactions, world.stock, world.hazards, PlannerConfig(), out_dir=tmp_path / "p", jobs=3)
    assert (tmp_path / "s" / "summary.csv").read_bytes() == (tmp_path / "p" / "summary.csv").read_bytes()


def test_ablation(world, tmp_path):
    ab = run_ablation(world.tasks, world.reactions, world.stock, world.hazards, PlannerConfig(), out_dir=tmp_path)
    rows = read_csv(tmp_path / "ablation.csv")
    assert rows[0]["group"] == "all"
    delta = float(rows[0]["delta"])
    assert delta == pytest.approx(ab.guided.overall.success - ab.unguided.overall.success, abs=0.05)
    assert ab.guided.overall.success >= ab.unguided.overall.success


def test_failures_recorded(world, tmp_path):
    bad = Task("bad", "CCCCCCCCCCCCCCCCCC", world.tasks[0].constraint)
    report = run_bench(
        [bad, *world.tasks[:1]], world.reactions, world.stock, world.hazards,
        PlannerConfig(max_expansions=3), out_dir=tmp_path,
    )
    assert not report.outcomes[0].report.presence
    assert report.overall.n_total == 2


def test_llm_errors_do_not_stop_run(world, tmp_path, monkeypatch):
    monkeypatch.setenv("LARC_LLM_URL", "http://127.0.0.1:9")
    monkeypatch.setenv("LARC_LLM_MODEL", "none")
    report = run_bench(world.tasks[:2], world.reactions, world.stock, world.hazards, PlannerConfig(), "llm", out_dir=tmp_path)
    assert [o.status for o in report.outcomes] == ["error", "error"]
    assert json.loads((tmp_path / "errors.json").read_text())


def test_empty_tasks():
    with pytest.raises(ValueError):
        run_bench([], db_of(), frozenset(), {}, PlannerConfig())


def test_unknown_judge(world):
    with pytest.raises(ValueError):
        run_bench(world.tasks, world.reactions, world.stock, world.hazards, PlannerConfig(), "oracle")


def test_make_judge(world, monkeypatch):
    assert isinstance(make_judge("rule", world.hazards), RuleJudge)
    assert make_judge("constant", world.hazards, 2) == ConstantJudge(2)
    monkeypatch.setenv("LARC_LLM_URL", "http://x")
    monkeypatch.setenv("LARC_LLM_MODEL", "m")
    assert isinstance(make_judge("llm", world.hazards), LLMJudge)
