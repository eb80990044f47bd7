"""Minimal cheminformatics core.

SMILES parsing into molecular graphs, canonical SMILES, Morgan-style circular
fingerprints and Tanimoto similarity. No RDKit: aromaticity is taken as
written, stereo tokens are read and dropped, and valences are not validated.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from enum import IntEnum
from functools import cached_property, lru_cache
from typing import Iterable, Sequence

__all__ = [
    "Atom",
    "Bond",
    "BondOrder",
    "Fingerprint",
    "MoleculeGraph",
    "SmilesError",
    "atom_count",
    "canonical_smiles",
    "canonicalize",
    "fingerprint_smiles",
    "morgan_fingerprint",
    "parse_smiles",
    "tanimoto",
]

ELEMENTS = (
    "H He Li Be B C N O F Ne Na Mg Al Si P S Cl Ar K Ca Sc Ti V Cr Mn Fe Co Ni Cu Zn "
    "Ga Ge As Se Br Kr Rb Sr Y Zr Nb Mo Tc Ru Rh Pd Ag Cd In Sn Sb Te I Xe Cs Ba La Ce "
    "Pr Nd Pm Sm Eu Gd Tb Dy Ho Er Tm Yb Lu Hf Ta W Re Os Ir Pt Au Hg Tl Pb Bi Po At Rn "
    "Fr Ra Ac Th Pa U Np Pu Am Cm Bk Cf Es Fm Md No Lr Rf Db Sg Bh Hs Mt Ds Rg Cn Nh Fl "
    "Mc Lv Ts Og"
).split()
ATOMIC_NUMBER = {sym: z for z, sym in enumerate(ELEMENTS, start=1)}

ORGANIC_SUBSET = ("Cl", "Br", "B", "C", "N", "O", "P", "S", "F", "I")
AROMATIC_ORGANIC = ("b", "c", "n", "o", "p", "s")
AROMATIC_BRACKET = ("se", "as", "te", "b", "c", "n", "o", "p", "s")

DEFAULT_VALENCES = {
    "B": (3,),
    "C": (4,),
    "N": (3, 5),
    "O": (2,),
    "P": (3, 5),
    "S": (2, 4, 6),
    "F": (1,),
    "Cl": (1,),
    "Br": (1,),
    "I": (1,),
}


class SmilesError(ValueError):
    """Malformed SMILES. ``offset`` is the byte offset of the offending token."""

    def __init__(self, message: str, offset: int) -> None:
        super().__init__(f"{message} at offset {offset}")
        self.reason = message
        self.offset = offset


class BondOrder(IntEnum):
    SINGLE = 1
    DOUBLE = 2
    TRIPLE = 3
    AROMATIC = 4


@dataclass(frozen=True)
class Atom:
    element: str
    charge: int = 0
    hcount: int = 0
    aromatic: bool = False
    in_ring: bool = False
    isotope: int | None = None

    @property
    def atomic_number(self) -> int:
        return ATOMIC_NUMBER[self.element]


@dataclass(frozen=True)
class Bond:
    begin: int
    end: int
    order: BondOrder = BondOrder.SINGLE


@dataclass(frozen=True)
class MoleculeGraph:
    atoms: tuple[Atom, ...]
    bonds: tuple[Bond, ...] = ()

    def __post_init__(self) -> None:
        if not self.atoms:
            raise ValueError("molecule graph needs at least one atom")
        n = len(self.atoms)
        seen: set[tuple[int, int]] = set()
        for b in self.bonds:
            if not (0 <= b.begin < n and 0 <= b.end < n):
                raise ValueError(f"bond endpoint out of range: {b}")
            if b.begin == b.end:
                raise ValueError(f"self bond on atom {b.begin}")
            key = (min(b.begin, b.end), max(b.begin, b.end))
            if key in seen:
                raise ValueError(f"duplicate bond {key}")
            seen.add(key)

    @cached_property
    def adjacency(self) -> tuple[tuple[tuple[int, BondOrder], ...], ...]:
        adj: list[list[tuple[int, BondOrder]]] = [[] for _ in self.atoms]
        for b in self.bonds:
            adj[b.begin].append((b.end, b.order))
            adj[b.end].append((b.begin, b.order))
        return tuple(tuple(a) for a in adj)

    def degree(self, i: int) -> int:
        return len(self.adjacency[i])

    def bond_between(self, i: int, j: int) -> BondOrder | None:
        for k, order in self.adjacency[i]:
            if k == j:
                return order
        return None

    def permuted(self, order: Sequence[int]) -> MoleculeGraph:
        """Relabel atoms: new atom ``k`` is old atom ``order[k]``."""
        if sorted(order) != list(range(len(self.atoms))):
            raise ValueError("order must be a permutation of atom indices")
        new_index = {old: new for new, old in enumerate(order)}
        atoms = tuple(self.atoms[old] for old in order)
        bonds = tuple(
            Bond(new_index[b.end], new_index[b.begin], b.order) for b in self.bonds
        )
        return MoleculeGraph(atoms, tuple(reversed(bonds)))

    def components(self) -> list[MoleculeGraph]:
        """Connected components, ordered by their lowest atom index."""
        comp = [-1] * len(self.atoms)
        groups: list[list[int]] = []
        for start in range(len(self.atoms)):
            if comp[start] != -1:
                continue
            members = []
            comp[start] = len(groups)
            queue = [start]
            while queue:
                u = queue.pop()
                members.append(u)
                for v, _ in self.adjacency[u]:
                    if comp[v] == -1:
                        comp[v] = len(groups)
                        queue.append(v)
            groups.append(sorted(members))
        if len(groups) == 1:
            return [self]
        result = []
        for members in groups:
            index = {old: new for new, old in enumerate(members)}
            atoms = tuple(self.atoms[i] for i in members)
            bonds = tuple(
                Bond(index[b.begin], index[b.end], b.order)
                for b in self.bonds
                if b.begin in index
            )
            result.append(MoleculeGraph(atoms, bonds))
        return result


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------

_BOND_SYMBOLS = {
    "-": BondOrder.SINGLE,
    "=": BondOrder.DOUBLE,
    "#": BondOrder.TRIPLE,
    ":": BondOrder.AROMATIC,
    "/": BondOrder.SINGLE,
    "\\": BondOrder.SINGLE,
}


@dataclass
class _ProtoAtom:
    element: str
    aromatic: bool
    bracket: bool
    charge: int = 0
    hcount: int = 0
    isotope: int | None = None


@dataclass
class _Parser:
    text: str
    atoms: list[_ProtoAtom] = field(default_factory=list)
    bonds: dict[tuple[int, int], BondOrder] = field(default_factory=dict)

    def offset(self, i: int) -> int:
        return len(self.text[:i].encode("utf-8"))

    def fail(self, message: str, i: int) -> SmilesError:
        return SmilesError(message, self.offset(i))

    def add_bond(self, a: int, b: int, order: BondOrder | None, i: int) -> None:
        if a == b:
            raise self.fail("ring closure bonds an atom to itself", i)
        key = (min(a, b), max(a, b))
        if key in self.bonds:
            raise self.fail("duplicate bond", i)
        if order is None:
            both = self.atoms[a].aromatic and self.atoms[b].aromatic
            order = BondOrder.AROMATIC if both else BondOrder.SINGLE
        self.bonds[key] = order

    def parse(self) -> None:
        text = self.text
        n = len(text)
        prev: int | None = None
        branches: list[tuple[int, int, bool]] = []  # (atom, offset, has_content)
        pending: tuple[BondOrder, int] | None = None
        rings: dict[int, tuple[int, BondOrder | None, int]] = {}
        fragment_start = True
        i = 0
        while i < n:
            ch = text[i]
            if ch == "(":
                if prev is None:
                    raise self.fail("branch without a preceding atom", i)
                if pending is not None:
                    raise self.fail("dangling bond", pending[1])
                branches.append((prev, i, False))
                i += 1
            elif ch == ")":
                if not branches:
                    raise self.fail("unbalanced parenthesis", i)
                if pending is not None:
                    raise self.fail("dangling bond", pending[1])
                atom, start, has_content = branches.pop()
                if not has_content:
                    raise self.fail("empty branch", start)
                prev = atom
                i += 1
            elif ch in _BOND_SYMBOLS:
                if prev is None or pending is not None:
                    raise self.fail("dangling bond", i)
                pending = (_BOND_SYMBOLS[ch], i)
                i += 1
            elif ch == ".":
                if pending is not None:
                    raise self.fail("dangling bond", pending[1])
                if branches:
                    raise self.fail("unbalanced parenthesis", branches[-1][1])
                if fragment_start:
                    raise self.fail("empty fragment", i)
                prev = None
                fragment_start = True
                i += 1
            elif ch.isdigit() or ch == "%":
                if prev is None:
                    raise self.fail("ring closure without a preceding atom", i)
                if ch == "%":
                    digits = text[i + 1 : i + 3]
                    if len(digits) != 2 or not digits.isdigit():
                        raise self.fail("malformed ring closure", i)
                    number, width = int(digits), 3
                else:
                    number, width = int(ch), 1
                order = pending[0] if pending else None
                pending = None
                if number in rings:
                    other, other_order, _ = rings.pop(number)
                    if order is not None and other_order is not None and order != other_order:
                        raise self.fail("conflicting ring closure bonds", i)
                    self.add_bond(other, prev, order if order is not None else other_order, i)
                else:
                    rings[number] = (prev, order, i)
                i += width
            elif ch == "[":
                close = text.find("]", i)
                if close == -1:
                    raise self.fail("unterminated bracket atom", i)
                atom = self._bracket_atom(text[i + 1 : close], i)
                prev = self._attach(atom, prev, pending, i)
                pending = None
                fragment_start = False
                if branches:
                    branches[-1] = branches[-1][:2] + (True,)
                i = close + 1
            else:
                symbol = None
                for cand in ORGANIC_SUBSET + AROMATIC_ORGANIC:
                    if text.startswith(cand, i):
                        symbol = cand
                        break
                if symbol is None:
                    if ch.isalpha() or ch == "*":
                        raise self.fail("unknown atom symbol", i)
                    raise self.fail(f"unexpected character {ch!r}", i)
                aromatic = symbol.islower()
                element = symbol.capitalize() if aromatic else symbol
                atom = _ProtoAtom(element=element, aromatic=aromatic, bracket=False)
                prev = self._attach(atom, prev, pending, i)
                pending = None
                fragment_start = False
                if branches:
                    branches[-1] = branches[-1][:2] + (True,)
                i += len(symbol)
        if branches:
            raise self.fail("unbalanced parenthesis", branches[-1][1])
        if pending is not None:
            raise self.fail("dangling bond", pending[1])
        if rings:
            first = min(rings.values(), key=lambda r: r[2])
            raise self.fail("unmatched ring closure", first[2])
        if fragment_start:
            raise self.fail("empty fragment", n)

    def _attach(
        self, atom: _ProtoAtom, prev: int | None, pending: tuple[BondOrder, int] | None, i: int
    ) -> int:
        self.atoms.append(atom)
        idx = len(self.atoms) - 1
        if prev is not None:
            self.add_bond(prev, idx, pending[0] if pending else None, i)
        return idx

    def _bracket_atom(self, body: str, start: int) -> _ProtoAtom:
        j = 0
        while j < len(body) and body[j].isdigit():
            j += 1
        isotope = int(body[:j]) if j else None
        symbol = None
        for cand in AROMATIC_BRACKET:
            if body.startswith(cand, j):
                symbol = cand
                break
        if symbol is None:
            two, one = body[j : j + 2], body[j : j + 1]
            if two in ATOMIC_NUMBER:
                symbol = two
            elif one in ATOMIC_NUMBER:
                symbol = one
        if symbol is None:
            raise self.fail("unknown atom symbol", start + 1 + j)
        aromatic = symbol.islower()
        element = symbol.capitalize() if aromatic else symbol
        j += len(symbol)
        if body.startswith("@", j):
            j += 2 if body.startswith("@@", j) else 1
            if body[j : j + 2] in ("TH", "AL", "SP", "TB", "OH"):
                j += 2
                while j < len(body) and body[j].isdigit():
                    j += 1
        hcount = 0
        if body.startswith("H", j):
            j += 1
            k = j
            while j < len(body) and body[j].isdigit():
                j += 1
            hcount = int(body[k:j]) if j > k else 1
        charge = 0
        if j < len(body) and body[j] in "+-":
            sign = 1 if body[j] == "+" else -1
            k = j + 1
            while k < len(body) and body[k] == body[j]:
                k += 1
            if k > j + 1:
                charge = sign * (k - j)
                j = k
            else:
                j += 1
                m = j
                while j < len(body) and body[j].isdigit():
                    j += 1
                charge = sign * (int(body[m:j]) if j > m else 1)
        if body.startswith(":", j):
            j += 1
            while j < len(body) and body[j].isdigit():
                j += 1
        if j != len(body):
            raise self.fail("malformed bracket atom", start + 1 + j)
        return _ProtoAtom(
            element=element,
            aromatic=aromatic,
            bracket=True,
            charge=charge,
            hcount=hcount,
            isotope=isotope,
        )


def _implicit_hcount(element: str, aromatic: bool, orders: Iterable[BondOrder]) -> int:
    valences = DEFAULT_VALENCES.get(element)
    if valences is None:
        return 0
    n_aromatic = 0
    total = 0
    for order in orders:
        if order == BondOrder.AROMATIC:
            n_aromatic += 1
        else:
            total += int(order)
    if aromatic:
        return max(0, valences[0] - (total + n_aromatic + 1))
    total += n_aromatic
    for v in valences:
        if v >= total:
            return v - total
    return 0


def _ring_atoms(n: int, bonds: Sequence[Bond]) -> set[int]:
    """Atoms incident to a non-bridge bond (i.e. on some cycle)."""
    adj: list[list[tuple[int, int]]] = [[] for _ in range(n)]
    for k, b in enumerate(bonds):
        adj[b.begin].append((b.end, k))
        adj[b.end].append((b.begin, k))
    disc = [-1] * n
    low = [0] * n
    bridges: set[int] = set()
    clock = 0
    for root in range(n):
        if disc[root] != -1:
            continue
        disc[root] = low[root] = clock
        clock += 1
        stack = [(root, -1, iter(adj[root]))]
        while stack:
            u, via, it = stack[-1]
            advanced = False
            for v, k in it:
                if k == via:
                    continue
                if disc[v] == -1:
                    disc[v] = low[v] = clock
                    clock += 1
                    stack.append((v, k, iter(adj[v])))
                    advanced = True
                    break
                low[u] = min(low[u], disc[v])
            if not advanced:
                stack.pop()
                if stack:
                    p = stack[-1][0]
                    low[p] = min(low[p], low[u])
                    if low[u] > disc[p]:
                        bridges.add(via)
    ring = set()
    for k, b in enumerate(bonds):
        if k not in bridges:
            ring.add(b.begin)
            ring.add(b.end)
    return ring


def parse_smiles(text: str) -> list[MoleculeGraph]:
    """Parse SMILES into one :class:`MoleculeGraph` per disconnected fragment.

    Supports the organic subset (plus aromatic ``b c n o p s``), bracket atoms
    with isotope, hydrogen count and charge, bonds ``- = # :``, branches and
    ring closures (digits and ``%nn``). Stereo marks are accepted and dropped.

    Raises:
        SmilesError: with the byte offset of the offending token.
    """
    if not text:
        raise SmilesError("empty SMILES", 0)
    parser = _Parser(text)
    parser.parse()
    n = len(parser.atoms)
    bonds = tuple(Bond(a, b, order) for (a, b), order in parser.bonds.items())
    per_atom: list[list[BondOrder]] = [[] for _ in range(n)]
    for b in bonds:
        per_atom[b.begin].append(b.order)
        per_atom[b.end].append(b.order)
    ring = _ring_atoms(n, bonds)
    atoms = []
    for i, proto in enumerate(parser.atoms):
        hcount = (
            proto.hcount
            if proto.bracket
            else _implicit_hcount(proto.element, proto.aromatic, per_atom[i])
        )
        atoms.append(
            Atom(
                element=proto.element,
                charge=proto.charge,
                hcount=hcount,
                aromatic=proto.aromatic,
                in_ring=i in ring,
                isotope=proto.isotope,
            )
        )
    return MoleculeGraph(tuple(atoms), bonds).components()


# ---------------------------------------------------------------------------
# Canonical SMILES
# ---------------------------------------------------------------------------


def _dense_ranks(keys: Sequence) -> list[int]:
    order = {k: r for r, k in enumerate(sorted(set(keys)))}
    return [order[k] for k in keys]


def _refine(g: MoleculeGraph, ranks: list[int]) -> list[int]:
    n_classes = len(set(ranks))
    while True:
        keys = [
            (ranks[i], tuple(sorted((int(o), ranks[j]) for j, o in g.adjacency[i])))
            for i in range(len(g.atoms))
        ]
        new = _dense_ranks(keys)
        n_new = len(set(new))
        if n_new == n_classes:
            return new
        ranks, n_classes = new, n_new


def _atom_invariant(g: MoleculeGraph, i: int) -> tuple:
    a = g.atoms[i]
    return (
        a.atomic_number,
        a.isotope or 0,
        a.charge,
        a.hcount,
        a.aromatic,
        g.degree(i),
        a.in_ring,
    )


def _bond_token(order: BondOrder, a_arom: bool, b_arom: bool) -> str:
    if order == BondOrder.AROMATIC:
        return "" if a_arom and b_arom else ":"
    if order == BondOrder.SINGLE:
        return "-" if a_arom and b_arom else ""
    return "=" if order == BondOrder.DOUBLE else "#"


def _atom_token(g: MoleculeGraph, i: int) -> str:
    a = g.atoms[i]
    symbol = a.element.lower() if a.aromatic else a.element
    plain = (
        symbol in AROMATIC_ORGANIC if a.aromatic else symbol in ORGANIC_SUBSET
    )
    implicit = _implicit_hcount(a.element, a.aromatic, (o for _, o in g.adjacency[i]))
    if plain and a.charge == 0 and a.isotope is None and a.hcount == implicit:
        return symbol
    parts = ["[", str(a.isotope) if a.isotope is not None else "", symbol]
    if a.hcount:
        parts.append("H" if a.hcount == 1 else f"H{a.hcount}")
    if a.charge:
        sign = "+" if a.charge > 0 else "-"
        parts.append(sign if abs(a.charge) == 1 else f"{sign}{abs(a.charge)}")
    parts.append("]")
    return "".join(parts)


def _ring_label(n: int) -> str:
    return str(n) if n < 10 else f"%{n:02d}"


def _write_smiles(g: MoleculeGraph, ranks: Sequence[int]) -> str:
    """SMILES for a connected graph whose atom ranks are all distinct."""
    n = len(g.atoms)
    nbrs = [sorted(g.adjacency[i], key=lambda t: ranks[t[0]]) for i in range(n)]
    start = min(range(n), key=lambda i: ranks[i])
    children: list[list[int]] = [[] for _ in range(n)]
    closures: list[list[tuple[int, BondOrder]]] = [[] for _ in range(n)]
    visited = [False] * n
    seen_edges: set[tuple[int, int]] = set()

    # first pass: spanning tree and ring-closure edges
    visited[start] = True
    stack = [(start, -1, iter(nbrs[start]))]
    while stack:
        u, parent, it = stack[-1]
        for v, order in it:
            if v == parent:
                continue
            edge = (min(u, v), max(u, v))
            if visited[v]:
                if edge not in seen_edges:
                    seen_edges.add(edge)
                    closures[u].append((v, order))
                    closures[v].append((u, order))
                continue
            seen_edges.add(edge)
            visited[v] = True
            children[u].append(v)
            stack.append((v, u, iter(nbrs[v])))
            break
        else:
            stack.pop()

    out: list[str] = []
    open_labels: dict[tuple[int, int], int] = {}
    in_use: set[int] = set()

    def emit(u: int, bond: str) -> None:
        out.append(bond + _atom_token(g, u))
        released = []
        for v, order in sorted(closures[u], key=lambda t: ranks[t[0]]):
            edge = (min(u, v), max(u, v))
            if edge in open_labels:
                label = open_labels.pop(edge)
                out.append(_ring_label(label))
                released.append(label)
            else:
                label = 1
                while label in in_use:
                    label += 1
                in_use.add(label)
                open_labels[edge] = label
                out.append(
                    _bond_token(order, g.atoms[u].aromatic, g.atoms[v].aromatic)
                    + _ring_label(label)
                )
        in_use.difference_update(released)
        kids = children[u]
        for k, v in enumerate(kids):
            order = g.bond_between(u, v)
            token = _bond_token(order, g.atoms[u].aromatic, g.atoms[v].aromatic)
            if k < len(kids) - 1:
                out.append("(")
                emit(v, token)
                out.append(")")
            else:
                emit(v, token)

    emit(start, "")
    return "".join(out)


def _canonical_component(g: MoleculeGraph) -> str:
    n = len(g.atoms)
    initial = _refine(g, _dense_ranks([_atom_invariant(g, i) for i in range(n)]))
    best: str | None = None
    pending = [initial]
    while pending:
        ranks = pending.pop()
        if len(set(ranks)) == n:
            s = _write_smiles(g, ranks)
            if best is None or s < best:
                best = s
            continue
        counts: dict[int, int] = {}
        for r in ranks:
            counts[r] = counts.get(r, 0) + 1
        cell = min(r for r, c in counts.items() if c > 1)
        for a in range(n):
            if ranks[a] == cell:
                split = _dense_ranks([(r, 0 if i == a else 1) for i, r in enumerate(ranks)])
                pending.append(_refine(g, split))
    assert best is not None
    return best


def canonical_smiles(g: MoleculeGraph) -> str:
    """Canonical SMILES, independent of the input atom order.

    Ranks atoms by iterative neighbourhood refinement of their invariants;
    remaining ties are broken by trying every atom of the first tied class
    and keeping the lexicographically smallest string.
    """
    return ".".join(sorted(_canonical_component(c) for c in g.components()))


@lru_cache(maxsize=65536)
def canonicalize(smiles: str) -> str:
    """Canonical form of a (possibly multi-fragment) SMILES string."""
    return ".".join(sorted(canonical_smiles(g) for g in parse_smiles(smiles)))


@lru_cache(maxsize=65536)
def atom_count(smiles: str) -> int:
    return sum(len(g.atoms) for g in parse_smiles(smiles))


# ---------------------------------------------------------------------------
# Fingerprints
# ---------------------------------------------------------------------------

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1


def fnv1a64(data: bytes) -> int:
    h = FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * FNV_PRIME) & _MASK64
    return h


@dataclass(frozen=True)
class Fingerprint:
    nbits: int
    bits: int = 0

    def __post_init__(self) -> None:
        if self.nbits <= 0 or self.nbits & (self.nbits - 1):
            raise ValueError(f"fingerprint width must be a power of two, got {self.nbits}")
        if self.bits >> self.nbits:
            raise ValueError("bit set wider than fingerprint")

    @classmethod
    def from_positions(cls, positions: Iterable[int], nbits: int = 2048) -> Fingerprint:
        bits = 0
        for p in positions:
            bits |= 1 << p
        return cls(nbits, bits)

    @property
    def count(self) -> int:
        return self.bits.bit_count()

    def positions(self) -> tuple[int, ...]:
        return tuple(i for i in range(self.nbits) if self.bits >> i & 1)

    def __or__(self, other: Fingerprint) -> Fingerprint:
        if self.nbits != other.nbits:
            raise ValueError("fingerprint width mismatch")
        return Fingerprint(self.nbits, self.bits | other.bits)


def morgan_fingerprint(g: MoleculeGraph, radius: int = 2, nbits: int = 2048) -> Fingerprint:
    """Circular fingerprint by iterative neighbourhood hashing.

    Round 0 hashes each atom's (atomic number, degree, charge, H count,
    aromatic, in ring) as six little-endian int64. Round k hashes the atom's
    previous code (uint64) followed by its neighbours' (bond order int64,
    code uint64) pairs in sorted order. Every code of every round sets bit
    ``code % nbits``. Hash is 64-bit FNV-1a.
    """
    if radius < 0:
        raise ValueError("radius must be >= 0")
    bits = 0
    codes = []
    for i, a in enumerate(g.atoms):
        inv = (a.atomic_number, g.degree(i), a.charge, a.hcount, int(a.aromatic), int(a.in_ring))
        codes.append(fnv1a64(struct.pack("<6q", *inv)))
    for c in codes:
        bits |= 1 << (c % nbits)
    for _ in range(radius):
        new = []
        for i in range(len(g.atoms)):
            pairs = sorted((int(o), codes[j]) for j, o in g.adjacency[i])
            data = struct.pack("<Q", codes[i]) + b"".join(
                struct.pack("<qQ", o, c) for o, c in pairs
            )
            new.append(fnv1a64(data))
        codes = new
        for c in codes:
            bits |= 1 << (c % nbits)
    return Fingerprint(nbits, bits)


@lru_cache(maxsize=65536)
def fingerprint_smiles(smiles: str, radius: int = 2, nbits: int = 2048) -> Fingerprint:
    """Fingerprint of a SMILES string; fragments are OR-ed together."""
    fp = Fingerprint(nbits)
    for g in parse_smiles(smiles):
        fp = fp | morgan_fingerprint(g, radius, nbits)
    return fp


def tanimoto(a: Fingerprint, b: Fingerprint) -> float:
    if a.nbits != b.nbits:
        raise ValueError(f"fingerprint width mismatch: {a.nbits} vs {b.nbits}")
    union = (a.bits | b.bits).bit_count()
    if union == 0:
        return 1.0
    return (a.bits & b.bits).bit_count() / union
