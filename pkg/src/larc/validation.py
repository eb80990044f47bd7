"""Route checks and success-rate aggregation.

Every flag is re-derived from the route's SMILES text, the stock set and the
ground-truth hazard set; nothing is taken from the planner or the judge.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from .chem import SmilesError, canonicalize

CRITERIA = ("presence", "connectivity", "reachability", "availability", "validity", "constraint")


@dataclass
class RouteReport:
    presence: bool = False
    connectivity: bool = False
    reachability: bool = False
    availability: bool = False
    validity: bool = False
    constraint: bool = False
    length: int = 0
    seconds: float = 0.0
    evaluations: int = 0
    diagnostics: list[str] = field(default_factory=list)

    @property
    def valid(self) -> bool:
        """Criteria 1-5: a usable route, regardless of the constraint."""
        return all(getattr(self, c) for c in CRITERIA[:5])

    @property
    def success(self) -> bool:
        return self.valid and self.constraint

    def to_dict(self) -> dict[str, Any]:
        return {**asdict(self), "valid": self.valid, "success": self.success}


def _route_pairs(route: Any) -> list[tuple[list[str], str]]:
    """(reactants, product) text pairs from a Route, a route dict or reaction strings."""
    if hasattr(route, "reactions"):
        items = route.reactions
    elif isinstance(route, Mapping):
        items = route.get("reactions", [])
    else:
        items = route
    pairs = []
    for item in items:
        if isinstance(item, str):
            left, _, right = item.partition(">>")
            pairs.append(([s for s in left.split(".") if s], right))
        elif isinstance(item, Mapping):
            pairs.append((list(item["reactants"]), item["product"]))
        else:
            pairs.append((list(item.reactants), item.product))
    return pairs


def _acyclic(producer: Mapping[str, list[str]]) -> bool:
    state: dict[str, int] = {}
    for start in producer:
        if state.get(start):
            continue
        stack = [(start, iter(producer[start]))]
        state[start] = 1
        while stack:
            node, children = stack[-1]
            for child in children:
                if child not in producer:
                    continue
                if state.get(child) == 1:
                    return False
                if not state.get(child):
                    state[child] = 1
                    stack.append((child, iter(producer[child])))
                    break
            else:
                state[node] = 2
                stack.pop()
    return True


def check_route(
    route: Any,
    target: str,
    stock: Iterable[str],
    hazards: Iterable[str],
) -> RouteReport:
    """Evaluate the six route criteria; failures are false flags with diagnostics.

    ``hazards`` is the ground-truth set of forbidden molecules for the task's
    constraint. Every molecule in the route, including the target, is checked.
    """
    report = RouteReport()
    pairs = _route_pairs(route)
    report.length = len(pairs)
    if not pairs:
        report.diagnostics.append("empty route")
        return report
    report.presence = True

    canon: dict[str, str] = {}
    bad = []
    for reactants, product in pairs:
        for s in [*reactants, product]:
            if s in canon:
                continue
            try:
                canon[s] = canonicalize(s)
            except SmilesError as exc:
                bad.append(f"{s!r}: {exc}")
    report.validity = not bad and all(reactants for reactants, _ in pairs)
    report.diagnostics += [f"unparseable molecule {b}" for b in bad]
    if bad:
        return report

    target_c = canonicalize(target)
    stock_c = {canonicalize(s) for s in stock}
    hazard_c = {canonicalize(s) for s in hazards}
    reactions = [([canon[s] for s in r], canon[p]) for r, p in pairs]
    products = [p for _, p in reactions]
    consumed = {m for r, _ in reactions for m in r}
    molecules = consumed | set(products) | {target_c}

    producer: dict[str, list[str]] = {}
    duplicated = sorted({p for p in products if products.count(p) > 1})
    for r, p in reactions:
        producer.setdefault(p, list(r))
    dangling = sorted({p for p in products if p != target_c and p not in consumed})
    acyclic = _acyclic(producer)
    report.connectivity = not duplicated and not dangling and acyclic
    if duplicated:
        report.diagnostics.append(f"produced more than once: {duplicated}")
    if dangling:
        report.diagnostics.append(f"products used nowhere: {dangling}")
    if not acyclic:
        report.diagnostics.append("reaction graph has a cycle")

    report.reachability = target_c in producer
    if not report.reachability:
        report.diagnostics.append("no reaction produces the target")

    leaves = sorted(consumed - set(producer))
    missing = [m for m in leaves if m not in stock_c]
    report.availability = not missing
    if missing:
        report.diagnostics.append(f"leaves not in stock: {missing}")

    flagged = sorted(molecules & hazard_c)
    report.constraint = not flagged
    if flagged:
        report.diagnostics.append(f"hazardous molecules in route: {flagged}")
    return report


@dataclass(frozen=True)
class Metrics:
    n_total: int
    n_present: int
    n_valid: int
    n_success: int

    def _rate(self, count: int) -> float:
        return 100.0 * count / self.n_total

    @property
    def presence(self) -> float:
        return self._rate(self.n_present)

    @property
    def validity(self) -> float:
        return self._rate(self.n_valid)

    @property
    def success(self) -> float:
        return self._rate(self.n_success)

    def display(self) -> dict[str, float]:
        return {
            "presence": round(self.presence, 1),
            "validity": round(self.validity, 1),
            "success": round(self.success, 1),
        }

    def to_row(self) -> dict[str, Any]:
        return {
            "n_total": self.n_total,
            "n_present": self.n_present,
            "n_valid": self.n_valid,
            "n_success": self.n_success,
            **{k: f"{v:.1f}" for k, v in self.display().items()},
        }


def aggregate_metrics(reports: Sequence[RouteReport]) -> Metrics:
    if not reports:
        raise ValueError("cannot aggregate an empty report list")
    return Metrics(
        n_total=len(reports),
        n_present=sum(r.presence for r in reports),
        n_valid=sum(r.presence and r.valid for r in reports),
        n_success=sum(r.presence and r.success for r in reports),
    )


SUMMARY_COLUMNS = (
    "task_id",
    "kind",
    "status",
    *CRITERIA,
    "success",
    "length",
    "evaluations",
)


def summary_row(task_id: str, kind: str, status: str, report: RouteReport) -> dict[str, Any]:
    row: dict[str, Any] = {"task_id": task_id, "kind": kind, "status": status}
    for c in CRITERIA:
        row[c] = int(getattr(report, c))
    row["success"] = int(report.success)
    row["length"] = report.length
    row["evaluations"] = report.evaluations
    return row


def write_csv(path: str | Path, rows: Iterable[Mapping[str, Any]], columns: Sequence[str]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(columns), lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


def write_json(path: str | Path, data: Any) -> None:
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")
