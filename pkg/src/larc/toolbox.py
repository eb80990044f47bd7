"""Tools the judge can call, and the text protocol used to call them.

Tool calls are written one per line inside a triple-backtick block, e.g.::

    ```
    Carcinogenicity(`CCO`, `ClCCl`)
    Similarity(`CCO`, `OCC`)
    ```

Results are rendered with three decimals so transcripts are reproducible.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Protocol, Sequence

import requests

from .chem import SmilesError, canonicalize, fingerprint_smiles, tanimoto

logger = logging.getLogger(__name__)

TOOL_NAMES = ("AIExpert", "Carcinogenicity", "Pyrophoricity", "Similarity", "Identify", "Answer")
FP_RADIUS = 2
FP_BITS = 2048
EXPERT_UNAVAILABLE = "no external expert available"


class ToolError(Exception):
    """Tool call could not be executed at all (unknown tool, bad arity)."""


class PredictorError(ToolError):
    """Remote predictor unreachable or returned a malformed response."""


class ActionParseError(ValueError):
    pass


@dataclass(frozen=True)
class HazardList:
    name: str
    entries: frozenset[str]
    probabilities: dict[str, float] = field(default_factory=dict, compare=False)
    labels: dict[str, str] = field(default_factory=dict, compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "entries", frozenset(canonicalize(s) for s in self.entries))
        object.__setattr__(self, "probabilities", {canonicalize(k): v for k, v in self.probabilities.items()})
        object.__setattr__(self, "labels", {canonicalize(k): v for k, v in self.labels.items()})

    @classmethod
    def from_smiles(cls, name: str, smiles: Iterable[str]) -> HazardList:
        return cls(name, frozenset(smiles))

    @classmethod
    def load(cls, path: str | Path, name: str | None = None) -> HazardList:
        """Read ``SMILES<TAB>label`` lines; ``#`` comments and blanks skipped.

        A label that parses as a number in [0, 1] is taken as the entry's
        probability; anything else is kept as a free-text label.
        """
        path = Path(path)
        entries, probs, labels = set(), {}, {}
        for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
            if not line.strip() or line.startswith("#"):
                continue
            smiles, _, label = line.partition("\t")
            try:
                key = canonicalize(smiles.strip())
            except SmilesError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from exc
            entries.add(key)
            label = label.strip()
            if label:
                try:
                    p = float(label)
                except ValueError:
                    labels[key] = label
                else:
                    if not 0.0 <= p <= 1.0:
                        raise ValueError(f"{path}:{lineno}: probability {p} outside [0, 1]")
                    probs[key] = p
        if not entries:
            raise ValueError(f"hazard list {path} is empty")
        return cls(name or path.stem, frozenset(entries), probs, labels)

    def dump(self, path: str | Path) -> None:
        lines = [f"# {self.name}"]
        for s in sorted(self.entries):
            extra = self.probabilities.get(s, self.labels.get(s))
            lines.append(s if extra is None else f"{s}\t{extra}")
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    def __contains__(self, smiles: str) -> bool:
        return smiles in self.entries

    def __len__(self) -> int:
        return len(self.entries)


@dataclass(frozen=True)
class ToolCall:
    name: str
    args: tuple[str, ...]

    def __post_init__(self) -> None:
        if self.name not in TOOL_NAMES:
            raise ToolError(f"unknown tool {self.name!r}")
        n = len(self.args)
        if self.name in ("Similarity", "Identify") and n != 2:
            raise ToolError(f"{self.name} takes exactly 2 arguments, got {n}")
        if self.name == "Answer" and n != 1:
            raise ToolError(f"Answer takes exactly 1 argument, got {n}")
        if n < 1:
            raise ToolError(f"{self.name} needs at least 1 argument")

    def render(self) -> str:
        return f"{self.name}({', '.join(_quote(a) for a in self.args)})"


@dataclass(frozen=True)
class ToolScore:
    input: str
    value: float | bool | None
    error: str | None = None


@dataclass(frozen=True)
class ToolResult:
    tool: str
    scores: tuple[ToolScore, ...] = ()
    diagnostics: str = ""

    def render(self) -> str:
        if not self.scores:
            return f"{self.tool}: {self.diagnostics}"
        parts = []
        for s in self.scores:
            if s.error is not None:
                parts.append(f"error ({s.error})")
            elif isinstance(s.value, bool):
                parts.append("true" if s.value else "false")
            else:
                parts.append(f"{s.value:.3f}")
        return f"{self.tool}: {', '.join(parts)}"

    def values(self) -> list[float | bool | None]:
        return [s.value for s in self.scores]


# ---------------------------------------------------------------------------
# Carcinogenicity backends
# ---------------------------------------------------------------------------


class CarcinogenPredictor(Protocol):
    def predict(self, smiles: Sequence[str]) -> list[float]: ...


@dataclass(frozen=True)
class LookupPredictor:
    """1.0 for listed molecules (or the listed probability), else 0.0."""

    hazards: HazardList

    def predict(self, smiles: Sequence[str]) -> list[float]:
        return [
            self.hazards.probabilities.get(s, 1.0) if s in self.hazards else 0.0
            for s in smiles
        ]


@dataclass(frozen=True)
class RemotePredictor:
    """POSTs ``{"smiles": [...]}`` and expects ``{"scores": [...]}`` back."""

    url: str
    timeout: float = 30.0

    def predict(self, smiles: Sequence[str]) -> list[float]:
        try:
            resp = requests.post(self.url, json={"smiles": list(smiles)}, timeout=self.timeout)
            resp.raise_for_status()
            scores = resp.json()["scores"]
        except (requests.RequestException, ValueError, KeyError, TypeError) as exc:
            raise PredictorError(f"carcinogenicity predictor at {self.url} failed: {exc}") from exc
        if not isinstance(scores, list) or len(scores) != len(smiles):
            raise PredictorError(
                f"predictor returned {len(scores) if isinstance(scores, list) else scores!r} "
                f"scores for {len(smiles)} molecules"
            )
        return [min(1.0, max(0.0, float(x))) for x in scores]


# ---------------------------------------------------------------------------
# Tools
# ---------------------------------------------------------------------------


def _canonical_or_error(smiles: str) -> tuple[str | None, str | None]:
    try:
        return canonicalize(smiles), None
    except SmilesError as exc:
        return None, str(exc)


def carcinogenicity(mols: Sequence[str], backend: CarcinogenPredictor) -> ToolResult:
    parsed = [_canonical_or_error(m) for m in mols]
    good = [c for c, err in parsed if err is None]
    predicted = iter(backend.predict(good)) if good else iter(())
    scores = []
    for m, (c, err) in zip(mols, parsed):
        if err is not None:
            scores.append(ToolScore(m, None, err))
        else:
            scores.append(ToolScore(m, next(predicted)))
    return ToolResult("Carcinogenicity", tuple(scores))


def pyrophoricity(mols: Sequence[str], hazards: HazardList) -> ToolResult:
    """Nearest-neighbour Tanimoto similarity of each molecule to the list."""
    refs = [fingerprint_smiles(e, FP_RADIUS, FP_BITS) for e in sorted(hazards.entries)]
    scores = []
    for m in mols:
        c, err = _canonical_or_error(m)
        if err is not None:
            scores.append(ToolScore(m, None, err))
            continue
        if c in hazards.entries:
            scores.append(ToolScore(m, 1.0))
            continue
        fp = fingerprint_smiles(c, FP_RADIUS, FP_BITS)
        scores.append(ToolScore(m, max((tanimoto(fp, r) for r in refs), default=0.0)))
    return ToolResult("Pyrophoricity", tuple(scores))


def similarity(a: str, b: str) -> float:
    fa = fingerprint_smiles(canonicalize(a), FP_RADIUS, FP_BITS)
    fb = fingerprint_smiles(canonicalize(b), FP_RADIUS, FP_BITS)
    return tanimoto(fa, fb)


def identify(m: str, target: str) -> bool:
    """True iff both SMILES denote the same molecule."""
    cm, ct = canonicalize(m), canonicalize(target)
    if fingerprint_smiles(cm, FP_RADIUS, FP_BITS) != fingerprint_smiles(ct, FP_RADIUS, FP_BITS):
        return False
    return cm == ct


# ---------------------------------------------------------------------------
# Action-block protocol
# ---------------------------------------------------------------------------

_BLOCK = re.compile(r"```(.*?)```", re.DOTALL)
_CALL = re.compile(r"^(?:Action:\s*)?([A-Za-z]+)\s*\((.*)\)\s*;?\s*$")
_QUOTES = {'"': '"', "'": "'", "`": "`"}


def _quote(arg: str) -> str:
    if "`" not in arg:
        return f"`{arg}`"
    if '"' not in arg:
        return f'"{arg}"'
    return f"'{arg}'"


def _split_args(inner: str) -> list[str]:
    args, buf, quote = [], [], None
    for ch in inner:
        if quote:
            if ch == quote:
                quote = None
            else:
                buf.append(ch)
        elif ch in _QUOTES:
            quote = ch
        elif ch == ",":
            args.append("".join(buf).strip())
            buf = []
        else:
            buf.append(ch)
    args.append("".join(buf).strip())
    return [a for a in args if a]


def _unquote(text: str) -> str:
    text = text.strip()
    if len(text) >= 2 and text[0] in _QUOTES and text[-1] == text[0]:
        return text[1:-1]
    return text


def parse_action_block(text: str) -> list[ToolCall]:
    """Extract tool calls from the last triple-backtick block in ``text``.

    Lines that do not look like ``Name(arg, ...)`` or name an unknown tool are
    skipped with a log message. Raises :class:`ActionParseError` when there is
    no block or no usable line in it.
    """
    blocks = _BLOCK.findall(text)
    if not blocks:
        raise ActionParseError("no triple-backtick block found")
    body = blocks[-1]
    # drop a language tag on the opening fence
    first, sep, rest = body.partition("\n")
    if sep and re.fullmatch(r"[A-Za-z0-9_+-]*", first.strip()):
        body = rest
    calls = []
    for line in body.splitlines():
        line = line.strip()
        if not line:
            continue
        m = _CALL.match(line)
        if not m:
            logger.debug("skipping non-call line %r", line)
            continue
        name, inner = m.groups()
        if name not in TOOL_NAMES:
            logger.info("rejecting unknown tool %r", name)
            continue
        args = [_unquote(inner)] if name == "AIExpert" else _split_args(inner)
        try:
            calls.append(ToolCall(name, tuple(args)))
        except ToolError as exc:
            logger.info("rejecting %r: %s", line, exc)
    if not calls:
        raise ActionParseError("no parseable tool calls in block")
    return calls


def render_action_block(calls: Iterable[ToolCall]) -> str:
    return "```\n" + "\n".join(c.render() for c in calls) + "\n```"


# ---------------------------------------------------------------------------
# Dispatch
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ToolRegistry:
    carcinogen_backend: CarcinogenPredictor | None = None
    pyrophorics: HazardList | None = None
    expert: Callable[[str], str] | None = None

    @property
    def available(self) -> tuple[str, ...]:
        names = ["AIExpert", "Similarity", "Identify"]
        if self.carcinogen_backend is not None:
            names.append("Carcinogenicity")
        if self.pyrophorics is not None:
            names.append("Pyrophoricity")
        return tuple(sorted(names))


def _pairwise(call: ToolCall, fn: Callable[[str, str], float | bool]) -> ToolResult:
    a, b = call.args
    try:
        value = fn(a, b)
    except SmilesError as exc:
        return ToolResult(call.name, (ToolScore(f"{a}, {b}", None, str(exc)),))
    return ToolResult(call.name, (ToolScore(f"{a}, {b}", value),))


def execute(call: ToolCall, registry: ToolRegistry) -> ToolResult:
    """Run one tool call against the registry.

    Raises:
        ToolError: tool not registered, or a :class:`PredictorError` from a
            remote backend.
    """
    # ToolCall validates arity on construction; re-check for hand-built objects
    ToolCall(call.name, tuple(call.args))
    if call.name == "Carcinogenicity":
        if registry.carcinogen_backend is None:
            raise ToolError("Carcinogenicity is not registered")
        return carcinogenicity(call.args, registry.carcinogen_backend)
    if call.name == "Pyrophoricity":
        if registry.pyrophorics is None:
            raise ToolError("Pyrophoricity is not registered")
        return pyrophoricity(call.args, registry.pyrophorics)
    if call.name == "Similarity":
        return _pairwise(call, similarity)
    if call.name == "Identify":
        return _pairwise(call, identify)
    if call.name == "AIExpert":
        question = ", ".join(call.args)
        if registry.expert is None:
            return ToolResult("AIExpert", (), EXPERT_UNAVAILABLE)
        return ToolResult("AIExpert", (), registry.expert(question).strip())
    raise ToolError(f"{call.name} is not an executable tool")


def render_results(results: Iterable[ToolResult]) -> str:
    return "\n".join(r.render() for r in results)
