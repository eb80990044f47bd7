"""Seeded synthetic reaction worlds and an exhaustive route oracle.

A world is a layered acyclic reaction network over small random C/N/O
molecules: the smallest molecules form the stock, the largest are targets.
With ``guarantee_safe_route`` each target gets a planted hazard-free route and,
when hazards are enabled, a hazardous decoy route no longer than the safe one
whose hazard is a non-stock intermediate.
"""

from __future__ import annotations

import itertools
import json
import random
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

from .chem import atom_count, canonicalize, fingerprint_smiles
from .evaluator import Constraint, ConstraintKind
from .synthesizer import Reaction, ReactionDatabase, dump_stock, is_acyclic, load_stock
from .toolbox import HazardList

HAZARD_KINDS = ("carcinogen", "pyrophoric")
TASK_KINDS = (
    ConstraintKind.AVOID_CARCINOGENS,
    ConstraintKind.AVOID_PYROPHORICS,
    ConstraintKind.AVOID_SUBSTANCE,
)
_VALENCE = {"C": 4, "N": 3, "O": 2}


class OracleOverflow(RuntimeError):
    pass


@dataclass(frozen=True)
class Task:
    id: str
    target: str
    constraint: Constraint
    notes: str = ""

    def __post_init__(self) -> None:
        object.__setattr__(self, "target", canonicalize(self.target))

    def to_dict(self) -> dict[str, Any]:
        d = {"id": self.id, "target": self.target, "constraint": self.constraint.to_dict()}
        if self.notes:
            d["notes"] = self.notes
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> Task:
        return cls(str(d["id"]), d["target"], Constraint.from_dict(d["constraint"]), d.get("notes", ""))


def load_tasks(path: str | Path) -> list[Task]:
    tasks = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                tasks.append(Task.from_dict(json.loads(line)))
            except (ValueError, KeyError) as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from exc
    if not tasks:
        raise ValueError(f"task file {path} is empty")
    return tasks


def dump_tasks(tasks: Iterable[Task], path: str | Path) -> None:
    Path(path).write_text("".join(json.dumps(t.to_dict()) + "\n" for t in tasks), encoding="utf-8")


@dataclass(frozen=True)
class WorldParams:
    n_molecules: int = 30
    n_reactions: int = 25
    max_reactants: int = 2
    stock_fraction: float = 0.35
    hazard_fraction: float = 0.1
    guarantee_safe_route: bool = True
    n_targets: int = 1
    max_atoms: int = 10

    def validate(self) -> None:
        if min(self.n_molecules, self.n_reactions, self.max_reactants, self.n_targets) < 1:
            raise ValueError("world sizes must be positive")
        if not 0 < self.stock_fraction < 1:
            raise ValueError("stock_fraction must lie in (0, 1)")
        if not 0 <= self.hazard_fraction < 1:
            raise ValueError("hazard_fraction must lie in [0, 1)")


@dataclass
class World:
    reactions: ReactionDatabase
    stock: frozenset[str]
    hazards: dict[str, HazardList]
    tasks: list[Task]
    params: WorldParams
    seed: int
    planted: dict[str, dict[str, list[str]]] = field(default_factory=dict)

    @property
    def molecules(self) -> set[str]:
        out = set(self.stock)
        for r in self.reactions:
            out.add(r.product)
            out.update(r.reactants)
        return out

    def truth(self, constraint: Constraint) -> frozenset[str]:
        return hazard_truth(constraint, self.hazards)

    def oracle(self, target: str, max_depth: int | None = None, **kw) -> list[OracleRoute]:
        depth = max_depth if max_depth is not None else len(self.reactions) + 1
        return oracle_routes(target, self.reactions, self.stock, depth, **kw)

    def save(self, directory: str | Path) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        self.reactions.dump(d / "reactions.jsonl")
        dump_stock(self.stock, d / "stock.smi")
        for kind in HAZARD_KINDS:
            hazard = self.hazards.get(kind)
            if hazard is not None and len(hazard):
                hazard.dump(d / f"{kind}.tsv")
        dump_tasks(self.tasks, d / "tasks.jsonl")
        meta = {"seed": self.seed, "params": asdict(self.params), "planted": self.planted}
        (d / "world.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, directory: str | Path) -> World:
        d = Path(directory)
        meta = json.loads((d / "world.json").read_text(encoding="utf-8"))
        return cls(
            ReactionDatabase.load(d / "reactions.jsonl"),
            load_stock(d / "stock.smi"),
            load_hazards(d),
            load_tasks(d / "tasks.jsonl"),
            WorldParams(**meta["params"]),
            meta["seed"],
            meta.get("planted", {}),
        )


def load_hazards(directory: str | Path) -> dict[str, HazardList]:
    d = Path(directory)
    out = {}
    for kind in HAZARD_KINDS:
        path = d / f"{kind}.tsv"
        out[kind] = HazardList.load(path, kind) if path.exists() else HazardList(kind, frozenset())
    return out


def hazard_truth(constraint: Constraint, hazards: dict[str, HazardList]) -> frozenset[str]:
    """Ground-truth forbidden molecules for one constraint."""
    if constraint.kind is ConstraintKind.AVOID_SUBSTANCE:
        return frozenset({constraint.payload})
    kind = "carcinogen" if constraint.kind is ConstraintKind.AVOID_CARCINOGENS else "pyrophoric"
    hazard = hazards.get(kind)
    return hazard.entries if hazard is not None else frozenset()


# ---------------------------------------------------------------------------
# Generation
# ---------------------------------------------------------------------------


def task_kind(seed: int, index: int) -> ConstraintKind:
    return TASK_KINDS[(seed + index) % len(TASK_KINDS)]


def random_molecule(rng: random.Random, n_atoms: int) -> str:
    """Random acyclic single-bonded C/N/O tree as a canonical SMILES."""
    elements = [rng.choices("CNO", weights=(6, 2, 2))[0]]
    children: list[list[int]] = [[]]
    free = [_VALENCE[elements[0]]]
    for i in range(1, n_atoms):
        open_atoms = [j for j in range(i) if free[j] > 0]
        if not open_atoms:
            break
        parent = rng.choice(open_atoms)
        element = rng.choices("CNO", weights=(6, 2, 2))[0]
        elements.append(element)
        children.append([])
        free.append(_VALENCE[element] - 1)
        free[parent] -= 1
        children[parent].append(i)

    def write(i: int) -> str:
        kids = [write(c) for c in children[i]]
        return elements[i] + "".join(f"({k})" for k in kids[:-1]) + (kids[-1] if kids else "")

    return canonicalize(write(0))


def _molecule_pool(rng: random.Random, n: int, max_atoms: int) -> list[str]:
    seen: set[str] = set()
    fingerprints: set = set()
    pool: list[str] = []
    attempts = 0
    while len(pool) < n:
        attempts += 1
        if attempts > 200 * n:
            raise ValueError(f"could not draw {n} distinct molecules with <= {max_atoms} atoms")
        smiles = random_molecule(rng, rng.randint(1, max_atoms))
        fp = fingerprint_smiles(smiles)
        if smiles in seen or fp in fingerprints:
            continue
        seen.add(smiles)
        fingerprints.add(fp)
        pool.append(smiles)
    pool.sort(key=lambda s: (atom_count(s), s))
    return pool


def generate_world(seed: int, params: WorldParams | None = None) -> World:
    """Build a deterministic synthetic world from ``seed``.

    Raises:
        ValueError: parameters too small to host the planted routes or
            reactions.
    """
    params = params or WorldParams()
    params.validate()
    rng = random.Random(seed)
    # one spare molecule serves as an off-world substance payload
    pool = _molecule_pool(rng, params.n_molecules + 1, params.max_atoms)
    spare = pool.pop(rng.randrange(len(pool)))
    n_stock = max(1, round(params.n_molecules * params.stock_fraction))
    if n_stock < params.max_reactants or n_stock >= params.n_molecules:
        raise ValueError("stock_fraction leaves too few stock or non-stock molecules")
    order = {m: i for i, m in enumerate(pool)}
    stock = pool[:n_stock]
    middle = pool[n_stock:-params.n_targets]
    targets = pool[-params.n_targets:]
    with_decoy = params.hazard_fraction > 0

    db = ReactionDatabase()
    planted: dict[str, dict[str, list[str]]] = {}
    reserved_safe: set[str] = set(targets)
    decoy_hazards: dict[str, str] = {}
    counter = itertools.count()

    def add(reactants: Sequence[str], product: str) -> Reaction:
        r = Reaction(tuple(reactants), product, f"R{next(counter):04d}")
        db.add(r)
        return r

    def lower(molecules: Sequence[str], than: str, k: int, avoid: set[str]) -> list[str]:
        pick = [m for m in molecules if order[m] < order[than] and m not in avoid]
        if len(pick) < k:
            raise ValueError("too few molecules to build planted routes")
        return rng.sample(pick, k)

    if params.guarantee_safe_route:
        for target in targets:
            free_middle = [m for m in middle if m not in reserved_safe and m not in decoy_hazards.values()]
            safe_len = rng.choice((2, 3, 3))
            decoy_len = rng.randint(2, safe_len) if with_decoy else 0
            need = (safe_len - 1) + (decoy_len - 1)
            if len(free_middle) < need:
                raise ValueError("n_molecules too small for the planted routes")
            # the decoy takes the smallest intermediates so it looks at least as cheap
            chosen = sorted(rng.sample(free_middle, need), key=order.get)
            decoy_chain = sorted(chosen[: max(decoy_len - 1, 0)], key=order.get, reverse=True)
            safe_chain = sorted(chosen[len(decoy_chain):], key=order.get, reverse=True)
            safe = _plant_chain(target, safe_chain, stock, params.max_reactants, rng, add)
            reserved_safe.update(m for r in safe for m in r.reactants)
            planted[target] = {"safe": [r.key for r in safe]}
            if decoy_chain:
                decoy_hazards[target] = rng.choice(decoy_chain)
                decoy = _plant_chain(target, decoy_chain, stock, params.max_reactants, rng, add)
                planted[target]["decoy"] = [r.key for r in decoy]

    solvable = set(stock) | {r.product for r in db}
    candidates = [m for m in pool[n_stock:]]
    tries = 0
    while len(db) < params.n_reactions:
        tries += 1
        if tries > 50 * params.n_reactions:
            raise ValueError("could not place the requested number of reactions")
        product = rng.choice(candidates)
        source = sorted(solvable) if params.guarantee_safe_route else pool
        below = [m for m in source if order[m] < order[product]]
        if not below:
            continue
        k = rng.randint(1, min(params.max_reactants, len(below)))
        reactants = rng.sample(below, k)
        if Reaction(tuple(reactants), product).key in {r.key for r in db}:
            continue
        add(reactants, product)
        solvable.add(product)

    world_mols = set(stock) | {m for r in db for m in (*r.reactants, r.product)}
    hazards = _label_hazards(rng, seed, params, world_mols, reserved_safe, decoy_hazards, targets)
    tasks = []
    for ti, target in enumerate(targets):
        kind = task_kind(seed, ti)
        payload = None
        if kind is ConstraintKind.AVOID_SUBSTANCE:
            payload = decoy_hazards.get(target, spare)
        tasks.append(Task(f"w{seed}-t{ti}", target, Constraint(kind, payload)))
    world = World(db, frozenset(stock), hazards, tasks, params, seed, planted)
    if params.guarantee_safe_route:
        _verify(world)
    return world


def _plant_chain(target, chain, stock, max_reactants, rng, add) -> list[Reaction]:
    """T <- c0 <- c1 <- ... <- stock, each step topped up with stock co-reactants."""
    out = []
    product = target
    for nxt in [*chain, None]:
        k = rng.randint(1, max_reactants) if nxt is None else rng.randint(0, max_reactants - 1)
        extra = rng.sample(stock, k)
        reactants = ([nxt] if nxt else []) + extra
        out.append(add(reactants, product))
        product = nxt
    return out


def _label_hazards(rng, seed, params, world_mols, safe, decoy_hazards, targets) -> dict[str, HazardList]:
    by_kind: dict[str, set[str]] = {k: set() for k in HAZARD_KINDS}
    kind_of_target = {t: task_kind(seed, i) for i, t in enumerate(targets)}
    for target, hazard in decoy_hazards.items():
        kind = kind_of_target[target]
        if kind is ConstraintKind.AVOID_CARCINOGENS:
            by_kind["carcinogen"].add(hazard)
        elif kind is ConstraintKind.AVOID_PYROPHORICS:
            by_kind["pyrophoric"].add(hazard)
    eligible = sorted(world_mols - safe - set(targets))
    extra = round(params.hazard_fraction * len(world_mols))
    for m in rng.sample(eligible, min(extra, len(eligible))):
        by_kind[rng.choice(HAZARD_KINDS)].add(m)
    return {k: HazardList.from_smiles(k, v) for k, v in by_kind.items()}


def _verify(world: World) -> None:
    for task in world.tasks:
        routes = world.oracle(task.target)
        truth = world.truth(task.constraint)
        if not any(not (r.molecules & truth) for r in routes):
            raise AssertionError(f"no hazard-free route for {task.target} in world {world.seed}")


# ---------------------------------------------------------------------------
# Oracle
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class OracleRoute:
    reactions: tuple[Reaction, ...]
    hazard_free: bool = True

    @property
    def keys(self) -> tuple[str, ...]:
        return tuple(r.key for r in self.reactions)

    @property
    def molecules(self) -> frozenset[str]:
        return frozenset(m for r in self.reactions for m in (*r.reactants, r.product))

    @property
    def length(self) -> int:
        return len(self.reactions)


def oracle_routes(
    target: str,
    db: ReactionDatabase,
    stock: frozenset[str],
    max_depth: int,
    *,
    hazards: Iterable[str] = (),
    cap: int = 10**6,
) -> list[OracleRoute]:
    """Every complete route to ``target`` with at most ``max_depth`` reaction layers.

    Routes are reaction sets in which each molecule has one producer. Order is
    by length, then by sorted reaction keys.

    Raises:
        OracleOverflow: more than ``cap`` partial or complete routes arise.
    """
    target = canonicalize(target)
    stock = frozenset(canonicalize(s) for s in stock)
    hazard_set = {canonicalize(h) for h in hazards}
    memo: dict[tuple[str, int, frozenset[str]], list[frozenset[Reaction]]] = {}

    def check(n: int) -> None:
        if n > cap:
            raise OracleOverflow(f"more than {cap} routes enumerated for {target}")

    def solve(m: str, depth: int, above: frozenset[str]) -> list[frozenset[Reaction]]:
        if m in stock:
            return [frozenset()]
        if depth <= 0:
            return []
        key = (m, depth, above)
        if key in memo:
            return memo[key]
        out: list[frozenset[Reaction]] = []
        below = above | {m}
        for r in db.reactions_for(m):
            if any(x in below for x in r.reactants):
                continue
            partial = [frozenset([r])]
            for x in r.reactants:
                subs = solve(x, depth - 1, below)
                check(len(partial) * len(subs))
                partial = [p | s for p in partial for s in subs if _consistent(p | s)]
                if not partial:
                    break
            out.extend(partial)
            check(len(out))
        memo[key] = out
        return out

    if max_depth < 1 or target in stock:
        return []
    found = {r for r in solve(target, max_depth, frozenset()) if is_acyclic(list(r))}
    routes = [
        tuple(sorted(r, key=lambda x: x.key))
        for r in sorted(found, key=lambda s: (len(s), sorted(x.key for x in s)))
    ]
    return [
        OracleRoute(rs, not ({m for x in rs for m in (*x.reactants, x.product)} & hazard_set))
        for rs in routes
    ]


def _consistent(reactions: frozenset[Reaction]) -> bool:
    products = [r.product for r in reactions]
    return len(products) == len(set(products))
