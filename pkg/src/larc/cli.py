"""Command-line entry point: ``larc {gen-world,plan,bench,oracle,eval}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

from .bench import JUDGE_MODES, dump_report, make_judge, run_ablation, run_bench
from .evaluator import Constraint, ConstraintKind, Evaluator
from .synthesizer import (
    PlannerConfig,
    PlanningError,
    Reaction,
    ReactionDatabase,
    decision_log_header,
    load_stock,
    plan,
    write_decision_log,
)
from .toolbox import HazardList
from .validation import check_route, write_json
from .world import HAZARD_KINDS, WorldParams, generate_world, hazard_truth, load_hazards, load_tasks, oracle_routes


def _world_files(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("world files")
    g.add_argument("--world", type=Path, help="directory written by gen-world")
    g.add_argument("--stock", type=Path, help="newline-delimited SMILES")
    g.add_argument("--reactions", type=Path, help="reaction database (JSON lines)")
    g.add_argument(
        "--hazards",
        action="append",
        default=[],
        metavar="KIND=PATH",
        help=f"hazard list, KIND in {HAZARD_KINDS}; repeatable",
    )


def _planner_flags(p: argparse.ArgumentParser) -> None:
    d = PlannerConfig()
    g = p.add_argument_group("planner")
    g.add_argument("--lambda", dest="lam", type=float, default=d.lam, help="constraint weight")
    g.add_argument("--k", type=int, default=d.k, help="simulations per iteration")
    g.add_argument("--max-expansions", type=int, default=d.max_expansions)
    g.add_argument("--max-evaluations", type=int, default=d.max_evaluations)
    g.add_argument("--ucb-scale", type=float, default=d.ucb_scale)
    g.add_argument("--default-score", type=int, default=d.default_score)
    g.add_argument("--seed", type=int, default=d.seed)
    g.add_argument("--eval-workers", type=int, default=1, help="parallel judge calls")


def _judge_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--judge", choices=JUDGE_MODES, default="rule")
    p.add_argument("--constant-score", type=int, default=5, help="score used by --judge constant")


def _constraint_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--constraint", required=True, choices=[k.value for k in ConstraintKind])
    p.add_argument("--payload", help="SMILES for AvoidSubstance")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="larc", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-world", help="write a seeded synthetic world")
    d = WorldParams()
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-molecules", type=int, default=d.n_molecules)
    p.add_argument("--n-reactions", type=int, default=d.n_reactions)
    p.add_argument("--max-reactants", type=int, default=d.max_reactants)
    p.add_argument("--stock-fraction", type=float, default=d.stock_fraction)
    p.add_argument("--hazard-fraction", type=float, default=d.hazard_fraction)
    p.add_argument("--n-targets", type=int, default=d.n_targets)
    p.add_argument("--no-guarantee", action="store_true", help="skip planting a safe route")
    p.add_argument("--out-dir", type=Path, required=True)

    p = sub.add_parser("plan", help="plan one target")
    p.add_argument("--target", required=True)
    _constraint_flags(p)
    _world_files(p)
    _planner_flags(p)
    _judge_flags(p)
    p.add_argument("--out-dir", type=Path)

    p = sub.add_parser("bench", help="plan every task in a task file")
    p.add_argument("--tasks", type=Path, help="JSON lines; defaults to <world>/tasks.jsonl")
    _world_files(p)
    _planner_flags(p)
    _judge_flags(p)
    p.add_argument("--ablation", action="store_true", help="also run a constant-5 judge")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out-dir", type=Path, required=True)

    p = sub.add_parser("oracle", help="enumerate all routes to a target")
    p.add_argument("--target", required=True)
    p.add_argument("--max-depth", type=int, default=6)
    p.add_argument("--cap", type=int, default=10**6)
    p.add_argument("--constraint", choices=[k.value for k in ConstraintKind])
    p.add_argument("--payload")
    _world_files(p)

    p = sub.add_parser("eval", help="score a single reaction with the judge")
    p.add_argument("--reaction", required=True, help="reactants>>product")
    _constraint_flags(p)
    _world_files(p)
    _judge_flags(p)
    return parser


def _load_hazards(args) -> dict[str, HazardList]:
    base = args.world
    hazards = load_hazards(base) if base else {k: HazardList(k, frozenset()) for k in HAZARD_KINDS}
    for item in args.hazards:
        kind, sep, path = item.partition("=")
        if not sep or kind not in HAZARD_KINDS:
            raise SystemExit(f"--hazards expects KIND=PATH with KIND in {HAZARD_KINDS}")
        hazards[kind] = HazardList.load(path, kind)
    return hazards


def _load_world(args) -> tuple[ReactionDatabase, frozenset[str], dict[str, HazardList]]:
    base = args.world
    reactions = args.reactions or (base / "reactions.jsonl" if base else None)
    stock = args.stock or (base / "stock.smi" if base else None)
    if reactions is None or stock is None:
        raise SystemExit("need --world or both --reactions and --stock")
    return ReactionDatabase.load(reactions), load_stock(stock), _load_hazards(args)


def _config(args) -> PlannerConfig:
    return PlannerConfig(
        lam=args.lam,
        k=args.k,
        max_expansions=args.max_expansions,
        max_evaluations=args.max_evaluations,
        ucb_scale=args.ucb_scale,
        default_score=args.default_score,
        seed=args.seed,
        eval_workers=args.eval_workers,
    )


def _cmd_gen_world(args) -> int:
    params = WorldParams(
        n_molecules=args.n_molecules,
        n_reactions=args.n_reactions,
        max_reactants=args.max_reactants,
        stock_fraction=args.stock_fraction,
        hazard_fraction=args.hazard_fraction,
        guarantee_safe_route=not args.no_guarantee,
        n_targets=args.n_targets,
    )
    world = generate_world(args.seed, params)
    world.save(args.out_dir)
    print(f"wrote {len(world.reactions)} reactions, {len(world.stock)} stock, {len(world.tasks)} tasks to {args.out_dir}")
    return 0


def _cmd_plan(args) -> int:
    db, stock, hazards = _load_world(args)
    constraint = Constraint(ConstraintKind(args.constraint), args.payload)
    cfg = _config(args)
    judge = make_judge(args.judge, hazards, args.constant_score)
    out = args.out_dir
    if out:
        out.mkdir(parents=True, exist_ok=True)
    try:
        result = plan(
            args.target, constraint, stock, cfg, judge, db,
            evaluation_log=out / "evaluations.jsonl" if out else None,
        )
    except PlanningError as exc:
        print(f"error: {exc}; stats {json.dumps(exc.stats)}", file=sys.stderr)
        return 1
    report = check_route(result.route, result.route.target, stock, hazard_truth(constraint, hazards))
    doc = {"status": result.status, "stats": result.stats(), "route": result.route.to_dict(), "checks": report.to_dict()}
    if out:
        write_json(out / "route.json", doc)
        write_decision_log(out / "decisions.jsonl", decision_log_header(cfg, result.route.target, constraint), result.decisions)
    print(json.dumps(doc, indent=2))
    return 0


def _cmd_bench(args) -> int:
    db, stock, hazards = _load_world(args)
    tasks_path = args.tasks or (args.world / "tasks.jsonl" if args.world else None)
    if tasks_path is None:
        raise SystemExit("need --tasks or --world")
    tasks = load_tasks(tasks_path)
    cfg = _config(args)
    if args.ablation:
        ab = run_ablation(tasks, db, stock, hazards, cfg, out_dir=args.out_dir, jobs=args.jobs)
        for row in ab.rows:
            print(f"{row['group']}: rule {row['guided_success']}% vs constant {row['constant_success']}% (delta {row['delta']})")
        return 0
    report = run_bench(
        tasks, db, stock, hazards, cfg, args.judge,
        out_dir=args.out_dir, jobs=args.jobs, constant_score=args.constant_score,
    )
    print(dump_report(report))
    return 0


def _cmd_oracle(args) -> int:
    db, stock, hazards = _load_world(args)
    truth: frozenset[str] = frozenset()
    if args.constraint:
        truth = hazard_truth(Constraint(ConstraintKind(args.constraint), args.payload), hazards)
    routes = oracle_routes(args.target, db, stock, args.max_depth, hazards=truth, cap=args.cap)
    for r in routes:
        label = "safe" if r.hazard_free else "hazardous"
        print(f"{r.length}\t{label}\t" + " | ".join(r.keys))
    print(f"{len(routes)} routes", file=sys.stderr)
    return 0


def _cmd_eval(args) -> int:
    hazards = _load_hazards(args)
    left, sep, right = args.reaction.partition(">>")
    if not sep:
        raise SystemExit("--reaction must look like A.B>>P")
    reaction = Reaction(tuple(left.split(".")), right)
    judge = make_judge(args.judge, hazards, args.constant_score)
    constraint = Constraint(ConstraintKind(args.constraint), args.payload)
    evaluator = Evaluator(judge, judge.plan(constraint))
    score = evaluator.evaluate(reaction)
    print(score.transcript)
    print(json.dumps({"reaction": reaction.key, **score.to_dict()}))
    return 0


COMMANDS = {
    "gen-world": _cmd_gen_world,
    "plan": _cmd_plan,
    "bench": _cmd_bench,
    "oracle": _cmd_oracle,
    "eval": _cmd_eval,
}


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
