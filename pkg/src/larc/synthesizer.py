"""Constraint-aware route search.

The planner alternates two steps per iteration. An MCTS-style simulation walks
the expanded search tree K times, each walk following the best (reaction,
reactant) pair by the constraint-aware value, and yields candidate frontiers.
All reactions on the candidates are then scored by the judge (within budget),
an A*-style step picks one candidate, and its frontier molecule is expanded
with the one-step backend. The loop stops at the first complete route or when
the expansion budget is spent.

Value of a candidate step::

    V'(m, R) = V(m, R) + lam * sum(normalized score of r for r in R)

where unevaluated reactions count with the (optimistic) default score.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Protocol, Sequence

from .chem import atom_count, canonicalize
from .evaluator import (
    Constraint,
    Evaluator,
    Judge,
    JudgeError,
    ReactionScore,
    normalize_score,
)
from .llm import LLMTransportError
from .toolbox import ToolError


class PlanningError(RuntimeError):
    """Planning aborted; ``stats`` holds the loop counters reached so far."""

    def __init__(self, message: str, stats: dict[str, Any]) -> None:
        super().__init__(message)
        self.stats = stats


class ExpansionError(RuntimeError):
    pass


@dataclass(frozen=True)
class Reaction:
    reactants: tuple[str, ...]
    product: str
    id: str = ""

    def __post_init__(self) -> None:
        if not self.reactants:
            raise ValueError("reaction needs at least one reactant")
        reactants = tuple(sorted({canonicalize(r) for r in self.reactants}))
        product = canonicalize(self.product)
        if product in reactants:
            raise ValueError(f"product {product} is also a reactant")
        object.__setattr__(self, "reactants", reactants)
        object.__setattr__(self, "product", product)

    @property
    def key(self) -> str:
        return ".".join(self.reactants) + ">>" + self.product

    def to_dict(self) -> dict[str, Any]:
        return {"id": self.id, "reactants": list(self.reactants), "product": self.product}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> Reaction:
        return cls(tuple(d["reactants"]), d["product"], str(d.get("id", "")))


class ReactionDatabase:
    """One-step retro backend: reactions indexed by canonical product."""

    def __init__(self, reactions: Iterable[Reaction] = ()) -> None:
        self._by_product: dict[str, list[Reaction]] = {}
        self._keys: set[str] = set()
        self._all: list[Reaction] = []
        for r in reactions:
            self.add(r)

    def add(self, reaction: Reaction) -> bool:
        if reaction.key in self._keys:
            return False
        self._keys.add(reaction.key)
        self._all.append(reaction)
        self._by_product.setdefault(reaction.product, []).append(reaction)
        return True

    def reactions_for(self, product: str) -> list[Reaction]:
        return list(self._by_product.get(product, ()))

    def __len__(self) -> int:
        return len(self._all)

    def __iter__(self):
        return iter(self._all)

    @classmethod
    def load(cls, path: str | Path) -> ReactionDatabase:
        db = cls()
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    db.add(Reaction.from_dict(json.loads(line)))
                except (ValueError, KeyError) as exc:
                    raise ValueError(f"{path}:{lineno}: {exc}") from exc
        return db

    def dump(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for r in self._all:
                fh.write(json.dumps(r.to_dict()) + "\n")


def load_stock(path: str | Path) -> frozenset[str]:
    with open(path, encoding="utf-8") as fh:
        return frozenset(canonicalize(line.strip()) for line in fh if line.strip())


def dump_stock(stock: Iterable[str], path: str | Path) -> None:
    Path(path).write_text("".join(f"{s}\n" for s in sorted(stock)), encoding="utf-8")


# ---------------------------------------------------------------------------
# Configuration and value backends
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PlannerConfig:
    lam: float = 2.0
    k: int = 5
    max_expansions: int = 500
    max_evaluations: int = 300
    ucb_scale: float = 4.0
    default_score: int = 5
    seed: int = 0
    value_backend: str = "heuristic"
    expansion_backend: str = "reaction-db"
    eval_workers: int = 1

    def __post_init__(self) -> None:
        if self.lam < 0:
            raise ValueError("lam must be >= 0")
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.max_expansions < 0 or self.max_evaluations < 0:
            raise ValueError("budgets must be >= 0")
        if not 1 <= self.default_score <= 5:
            raise ValueError("default score must be in 1..5")
        if self.value_backend not in VALUE_BACKENDS:
            raise ValueError(f"unknown value backend {self.value_backend!r}")
        if self.expansion_backend not in EXPANSION_BACKENDS:
            raise ValueError(f"unknown expansion backend {self.expansion_backend!r}")

    def to_dict(self) -> dict[str, Any]:
        return dict(self.__dict__)


class ExpansionBackend(Protocol):
    def reactions_for(self, product: str) -> Sequence[Reaction]: ...


class ValueBackend(Protocol):
    def mcts(self, molecule: str, route: Sequence[Reaction]) -> float: ...

    def astar(self, molecule: str, route: Sequence[Reaction]) -> float: ...


@dataclass(frozen=True)
class HeuristicValue:
    """Cheap stand-in for trained value networks; prefers short routes to stock."""

    stock: frozenset[str]

    def mcts(self, molecule: str, route: Sequence[Reaction]) -> float:
        if molecule in self.stock:
            return 1.0
        return -0.05 * atom_count(molecule) - 0.1 * len(route)

    def astar(self, molecule: str, route: Sequence[Reaction]) -> float:
        h = 0.0 if molecule in self.stock else 1.0 + atom_count(molecule) / 20
        return -(len(route) + h)


VALUE_BACKENDS = {"heuristic": HeuristicValue}
EXPANSION_BACKENDS = {"reaction-db": ReactionDatabase}


# ---------------------------------------------------------------------------
# Search tree
# ---------------------------------------------------------------------------


@dataclass
class MoleculeNode:
    smiles: str
    visits: int = 0
    expanded: bool = False
    reactions: list[str] = field(default_factory=list)


@dataclass
class ReactionEdge:
    reaction: Reaction
    count: int = 0


class SearchTree:
    """AND-OR search graph rooted at the target molecule.

    Molecule nodes hold visit counts, reaction edges hold selection counts;
    both only increase. ``dead`` holds molecules proven unsolvable within the
    expanded tree.
    """

    def __init__(self, root: str, stock: Iterable[str]) -> None:
        root = canonicalize(root)
        self.root = root
        self.stock = frozenset(canonicalize(s) for s in stock)
        self.nodes: dict[str, MoleculeNode] = {root: MoleculeNode(root)}
        self.edges: dict[str, ReactionEdge] = {}
        self.dead: frozenset[str] = frozenset()

    def children(self, molecule: str) -> list[Reaction]:
        node = self.nodes.get(molecule)
        if node is None:
            return []
        return [self.edges[k].reaction for k in node.reactions]

    def add_reaction(self, reaction: Reaction) -> bool:
        if reaction.key in self.edges:
            return False
        self.edges[reaction.key] = ReactionEdge(reaction)
        self.nodes.setdefault(reaction.product, MoleculeNode(reaction.product)).reactions.append(
            reaction.key
        )
        for m in reaction.reactants:
            self.nodes.setdefault(m, MoleculeNode(m))
        return True

    def refresh_dead(self) -> None:
        solvable = {
            m for m, node in self.nodes.items() if m in self.stock or not node.expanded
        }
        changed = True
        while changed:
            changed = False
            for m, node in self.nodes.items():
                if m in solvable:
                    continue
                for key in node.reactions:
                    if all(x in solvable for x in self.edges[key].reaction.reactants):
                        solvable.add(m)
                        changed = True
                        break
        self.dead = frozenset(self.nodes) - solvable


def expand(
    tree: SearchTree,
    route: PartialRoute | None,
    molecule: str,
    backend: ExpansionBackend,
) -> list[Reaction]:
    """Add the backend's retro-reactions for ``molecule`` to the tree.

    Returns the newly inserted reactions; empty when the molecule was already
    expanded or the backend knows no reaction for it (then it is dead).
    """
    molecule = canonicalize(molecule)
    if molecule not in tree.nodes:
        raise ValueError(f"{molecule} is not in the search tree")
    if molecule in tree.stock:
        raise ValueError(f"{molecule} is in stock and is never expanded")
    node = tree.nodes[molecule]
    if node.expanded:
        return []
    try:
        proposed = list(backend.reactions_for(molecule))
    except Exception as exc:
        raise ExpansionError(f"expansion of {molecule} failed: {exc}") from exc
    node.expanded = True
    inserted = [r for r in proposed if r.product == molecule and tree.add_reaction(r)]
    tree.refresh_dead()
    return inserted


# ---------------------------------------------------------------------------
# Routes and candidates
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PartialRoute:
    reactions: tuple[Reaction, ...]
    frontier: str
    open_goals: tuple[str, ...] = ()

    @property
    def keys(self) -> list[str]:
        return [r.key for r in self.reactions]


@dataclass(frozen=True)
class Candidate:
    route: PartialRoute
    complete: bool = False

    @property
    def frontier(self) -> str:
        return self.route.frontier


def route_leaves(reactions: Sequence[Reaction]) -> list[str]:
    produced = {r.product for r in reactions}
    return sorted({m for r in reactions for m in r.reactants if m not in produced})


def is_acyclic(reactions: Sequence[Reaction]) -> bool:
    """True when no molecule is made by two reactions and no product feeds itself."""
    producer = {}
    for r in reactions:
        if r.product in producer and producer[r.product] != r.key:
            return False
        producer[r.product] = r
    state: dict[str, int] = {}

    def visit(m: str) -> bool:
        if state.get(m) == 1:
            return False
        if state.get(m) == 2 or m not in producer:
            return True
        state[m] = 1
        ok = all(visit(x) for x in producer[m].reactants)
        state[m] = 2
        return ok

    return all(visit(m) for m in producer)


def is_complete(reactions: Sequence[Reaction], target: str, stock: frozenset[str]) -> bool:
    if not reactions:
        return False
    if not any(r.product == target for r in reactions):
        return False
    return all(m in stock for m in route_leaves(reactions)) and is_acyclic(reactions)


def score_sum(
    route: Sequence[Reaction], scores: Mapping[str, ReactionScore], default_score: int
) -> float:
    """Sum of normalized scores; reactions without a score count as ``default_score``."""
    total = 0.0
    for r in route:
        s = scores.get(r.key)
        total += s.normalized if s is not None else normalize_score(default_score)
    return total


def minmax(values: Sequence[float]) -> list[float]:
    """Rescale to [0, 1]; a degenerate (constant) set maps to all zeros."""
    if not values:
        return []
    lo, hi = min(values), max(values)
    if hi == lo:
        return [0.0] * len(values)
    return [(v - lo) / (hi - lo) for v in values]


def ucb_bonus(parent_visits: int, edge_count: int, scale: float) -> float:
    return scale * math.sqrt(math.log(parent_visits + 1) / (edge_count + 1))


def value_mcts(
    molecule: str,
    route: Sequence[Reaction],
    tree: SearchTree,
    scores: Mapping[str, ReactionScore],
    cfg: PlannerConfig,
    *,
    base: float,
) -> float:
    """Constraint-aware simulation value of descending to ``molecule`` via ``route``.

    ``base`` is the unconstrained heuristic value, already min-max scaled over
    the alternatives at this step; the UCB bonus of the route's last edge and
    the weighted score sum are added to it.
    """
    bonus = 0.0
    if route:
        last = route[-1]
        node = tree.nodes.get(last.product)
        edge = tree.edges.get(last.key)
        if node is not None and edge is not None:
            bonus = ucb_bonus(node.visits, edge.count, cfg.ucb_scale)
    return base + bonus + cfg.lam * score_sum(route, scores, cfg.default_score)


def _walk(
    tree: SearchTree,
    scores: Mapping[str, ReactionScore],
    cfg: PlannerConfig,
    values: ValueBackend,
) -> Candidate:
    route: list[Reaction] = []
    produced: set[str] = set()
    goals: list[str] = []
    ancestors: dict[str, frozenset[str]] = {tree.root: frozenset()}
    m = tree.root
    while True:
        blocked = ancestors[m] | {m}
        options = [
            (r, x)
            for r in tree.children(m)
            if not any(x in tree.dead or x in blocked for x in r.reactants)
            for x in r.reactants
        ]
        if not options:
            return Candidate(PartialRoute(tuple(route), m, tuple(goals)), complete=False)
        bases = minmax([values.mcts(x, route + [r]) for r, x in options])
        best, best_value = 0, -math.inf
        for i, ((r, x), base) in enumerate(zip(options, bases)):
            v = value_mcts(x, route + [r], tree, scores, cfg, base=base)
            if v > best_value:
                best, best_value = i, v
        chosen, nxt = options[best]
        tree.nodes[m].visits += 1
        tree.edges[chosen.key].count += 1
        route.append(chosen)
        produced.add(m)
        for x in chosen.reactants:
            ancestors[x] = ancestors.get(x, frozenset()) | blocked
            resolved = x in tree.stock or x in produced
            if x != nxt and not resolved and x not in goals:
                goals.append(x)
        if nxt in tree.stock or nxt in produced:
            if goals:
                m = goals.pop(0)
                continue
            done = is_complete(route, tree.root, tree.stock)
            return Candidate(PartialRoute(tuple(route), nxt, ()), complete=done)
        if nxt in goals:
            goals.remove(nxt)
        m = nxt


def simulate_mcts(
    tree: SearchTree,
    scores: Mapping[str, ReactionScore],
    cfg: PlannerConfig,
    values: ValueBackend,
) -> list[Candidate]:
    """Run ``cfg.k`` greedy walks; return their candidates, first one per frontier."""
    seen: set[str] = set()
    out = []
    for _ in range(cfg.k):
        cand = _walk(tree, scores, cfg, values)
        if cand.frontier not in seen:
            seen.add(cand.frontier)
            out.append(cand)
    return out


@dataclass(frozen=True)
class Selection:
    index: int
    v: tuple[float, ...]
    weighted: tuple[float, ...]
    v_prime: tuple[float, ...]


def select_astar(
    candidates: Sequence[Candidate],
    scores: Mapping[str, ReactionScore],
    cfg: PlannerConfig,
    values: ValueBackend,
) -> Selection:
    """Pick the candidate maximizing min-max-scaled V_A* plus the weighted score sum."""
    if not candidates:
        raise ValueError("no candidates to select from")
    raw = [values.astar(c.frontier, c.route.reactions) for c in candidates]
    v = minmax(raw)
    weighted = []
    for c in candidates:
        missing = [r.key for r in c.route.reactions if r.key not in scores]
        if missing:
            raise ValueError(f"unscored reactions in candidate: {missing}")
        weighted.append(cfg.lam * score_sum(c.route.reactions, scores, cfg.default_score))
    v_prime = [a + b for a, b in zip(v, weighted)]
    best = max(range(len(candidates)), key=lambda i: (v_prime[i], -i))
    return Selection(best, tuple(v), tuple(weighted), tuple(v_prime))


# ---------------------------------------------------------------------------
# Main loop
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Route:
    target: str
    reactions: tuple[Reaction, ...] = ()
    scores: tuple[ReactionScore, ...] = ()

    @property
    def length(self) -> int:
        return len(self.reactions)

    @property
    def leaves(self) -> list[str]:
        return route_leaves(self.reactions)

    def to_dict(self) -> dict[str, Any]:
        return {
            "target": self.target,
            "length": self.length,
            "reactions": [
                {**r.to_dict(), "score": s.to_dict() if s else None}
                for r, s in zip(self.reactions, self.scores or [None] * self.length)
            ],
            "leaves": self.leaves,
        }


@dataclass
class PlanResult:
    route: Route
    status: str  # solved | trivial | budget | exhausted
    expansions: int = 0
    iterations: int = 0
    evaluations: int = 0
    seconds: float = 0.0
    decisions: list[dict[str, Any]] = field(default_factory=list)

    @property
    def solved(self) -> bool:
        return self.status == "solved"

    def stats(self) -> dict[str, Any]:
        return {
            "status": self.status,
            "expansions": self.expansions,
            "iterations": self.iterations,
            "evaluations": self.evaluations,
            "length": self.route.length,
        }


def decision_log_header(cfg: PlannerConfig, target: str, constraint: Constraint) -> dict[str, Any]:
    return {
        "header": True,
        "target": target,
        "constraint": constraint.to_dict(),
        "config": {k: v for k, v in cfg.to_dict().items() if k != "eval_workers"},
        "note": "visit and selection counts persist for the whole run",
    }


def write_decision_log(path: str | Path, header: dict[str, Any], decisions: Iterable[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for d in decisions:
            fh.write(json.dumps(d, sort_keys=True) + "\n")


def plan(
    target: str,
    constraint: Constraint,
    stock: frozenset[str],
    cfg: PlannerConfig,
    judge: Judge,
    backend: ExpansionBackend,
    *,
    values: ValueBackend | None = None,
    evaluation_log: str | Path | None = None,
) -> PlanResult:
    """Search for a route from stock to ``target`` steered by ``judge``.

    Returns a :class:`PlanResult` whose route is empty unless a complete route
    was found. Judge transport failures raise :class:`PlanningError`.
    """
    start = time.perf_counter()
    target = canonicalize(target)
    stock = frozenset(canonicalize(s) for s in stock)
    if target in stock:
        return PlanResult(Route(target), "trivial", seconds=time.perf_counter() - start)
    values = values if values is not None else VALUE_BACKENDS[cfg.value_backend](stock)
    tree = SearchTree(target, stock)
    result = PlanResult(Route(target), "budget")

    def stats() -> dict[str, Any]:
        return {**result.stats(), "evaluations": evaluator.cache.invocations if evaluator else 0}

    evaluator = None
    try:
        eval_plan = judge.plan(constraint)
        evaluator = Evaluator(
            judge,
            eval_plan,
            max_evaluations=cfg.max_evaluations,
            default_score=cfg.default_score,
            log_path=evaluation_log,
            max_workers=cfg.eval_workers,
        )
        scores = evaluator.scores
        found: tuple[Reaction, ...] | None = None
        while found is None and result.expansions < cfg.max_expansions:
            if tree.root in tree.dead:
                result.status = "exhausted"
                break
            result.iterations += 1
            candidates = simulate_mcts(tree, scores, cfg, values)
            evaluator.evaluate_many(r for c in candidates for r in c.route.reactions)
            sel = select_astar(candidates, scores, cfg, values)
            chosen = candidates[sel.index]
            entry: dict[str, Any] = {
                "iteration": result.iterations,
                "candidates": [
                    {
                        "frontier": c.frontier,
                        "route": c.route.keys,
                        "open_goals": list(c.route.open_goals),
                        "complete": c.complete,
                        "v": sel.v[i],
                        "weighted_score": sel.weighted[i],
                        "v_prime": sel.v_prime[i],
                    }
                    for i, c in enumerate(candidates)
                ],
                "selected": chosen.frontier,
            }
            if chosen.complete:
                found = chosen.route.reactions
                entry["expanded"] = None
            else:
                new = expand(tree, chosen.route, chosen.frontier, backend)
                result.expansions += 1
                entry["expanded"] = chosen.frontier
                entry["new_reactions"] = [r.key for r in new]
                for r in new:
                    trial = chosen.route.reactions + (r,)
                    if not chosen.route.open_goals and is_complete(trial, target, stock):
                        found = trial
                        break
            entry["n_exp"] = result.expansions
            entry["n_eval"] = evaluator.cache.invocations
            entry["route_found"] = found is not None
            result.decisions.append(entry)
        if found is not None:
            route_scores = evaluator.evaluate_many(found)
            by_key = {r.key: s for r, s in zip(dict.fromkeys(found), route_scores)}
            result.route = Route(target, found, tuple(by_key[r.key] for r in found))
            result.status = "solved"
    except (LLMTransportError, JudgeError, ToolError) as exc:
        raise PlanningError(f"planning for {target} aborted: {exc}", stats()) from exc
    result.evaluations = evaluator.cache.invocations
    result.seconds = time.perf_counter() - start
    return result
