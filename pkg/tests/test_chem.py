from __future__ import annotations

import random
import struct

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from larc.chem import (
    BondOrder,
    Fingerprint,
    SmilesError,
    atom_count,
    canonical_smiles,
    canonicalize,
    fingerprint_smiles,
    fnv1a64,
    morgan_fingerprint,
    parse_smiles,
    tanimoto,
)

PERMUTATION_SET = [
    "CCO",
    "CC(=O)O",
    "c1ccccc1",
    "Cc1ccccc1O",
    "CC(C)(C)O",
    "C1CCC2CCCCC2C1",
    "OC(=O)C1=CC=CC=C1",
    "N#CC(N)C(=O)[O-]",
    "[NH4+].[Cl-]",
    "c1ccc2[nH]ccc2c1",
    "CC(C)(C)C(C)(C)C",
    "O=S(=O)(O)c1ccc(N)cc1",
]


class TestParse:
    def test_ethanol_atoms(self):
        (g,) = parse_smiles("CCO")
        assert [a.element for a in g.atoms] == ["C", "C", "O"]
        assert [a.hcount for a in g.atoms] == [3, 2, 1]

    def test_aromatic_ring_flags(self):
        (g,) = parse_smiles("c1ccccc1")
        assert all(a.aromatic and a.in_ring and a.hcount == 1 for a in g.atoms)
        assert {b.order for b in g.bonds} == {BondOrder.AROMATIC}

    def test_bracket_atom(self):
        (g,) = parse_smiles("[13CH3-]")
        (a,) = g.atoms
        assert (a.element, a.isotope, a.hcount, a.charge) == ("C", 13, 3, -1)

    def test_fragments(self):
        assert len(parse_smiles("[Na+].[Cl-]")) == 2

    def test_stereo_marks_ignored(self):
        assert canonicalize("F/C=C/F") == canonicalize("FC=CF")
        assert canonicalize("N[C@@H](C)C(=O)O") == canonicalize("NC(C)C(=O)O")

    def test_two_digit_ring_label(self):
        assert canonicalize("C%10CC%10") == canonicalize("C1CC1")

    @pytest.mark.parametrize(
        "text, offset",
        [
            ("CC(C", 2),
            ("C1CC", 1),
            ("CXC", 1),
            ("CC=", 2),
            ("", 0),
        ],
    )
    def test_error_offsets(self, text, offset):
        with pytest.raises(SmilesError) as info:
            parse_smiles(text)
        assert info.value.offset == offset

    def test_error_is_value_error(self):
        with pytest.raises(ValueError):
            canonicalize("C(")


class TestCanonical:
    @pytest.mark.parametrize("smiles", PERMUTATION_SET)
    def test_idempotent(self, smiles):
        once = canonicalize(smiles)
        assert canonicalize(once) == once

    @pytest.mark.parametrize(
        "a, b",
        [
            ("OCC", "CCO"),
            ("c1ccccc1", "c1ccccc1"),
            ("C1=CC=CC=C1", "C=1C=CC=CC=1"),
            ("C(C)(C)(C)O", "CC(C)(C)O"),
            ("[Cl-].[NH4+]", "[NH4+].[Cl-]"),
        ],
    )
    def test_equivalent_inputs(self, a, b):
        assert canonicalize(a) == canonicalize(b)

    def test_aromaticity_taken_as_written(self):
        assert canonicalize("C1=CC=CC=C1") != canonicalize("c1ccccc1")

    def test_distinguishes_isomers(self):
        assert canonicalize("CCCO") != canonicalize("CC(C)O")

    @pytest.mark.parametrize("smiles", ["CCO", "c1ccccc1O", "CC(C)(C)O"])
    def test_permutation_invariance_small(self, smiles):
        (g,) = parse_smiles(smiles)
        ref = canonical_smiles(g)
        rng = random.Random(7)
        for _ in range(50):
            order = list(range(len(g.atoms)))
            rng.shuffle(order)
            assert canonical_smiles(g.permuted(order)) == ref

    def test_atom_count_is_heavy_atoms(self):
        assert atom_count("CCO") == 3
        assert atom_count("[NH4+].[Cl-]") == 2


class TestFnv:
    # published FNV-1a 64-bit test vectors
    @pytest.mark.parametrize(
        "data, expected",
        [
            (b"", 0xCBF29CE484222325),
            (b"a", 0xAF63DC4C8601EC8C),
            (b"foobar", 0x85944171F73967E8),
        ],
    )
    def test_vectors(self, data, expected):
        assert fnv1a64(data) == expected


def _reference_fnv(data: bytes) -> int:
    h = 14695981039346656037
    for b in data:
        h = ((h ^ b) * 1099511628211) % 2**64
    return h


def _reference_morgan(atoms, bonds, radius=2, nbits=2048) -> set[int]:
    """Hand-built graph: atoms as (Z, H count, aromatic, ring), bonds as (i, j, order)."""
    neighbours = {i: [] for i in range(len(atoms))}
    for i, j, order in bonds:
        neighbours[i].append((j, order))
        neighbours[j].append((i, order))
    codes = [
        _reference_fnv(struct.pack("<6q", z, len(neighbours[i]), 0, h, arom, ring))
        for i, (z, h, arom, ring) in enumerate(atoms)
    ]
    bits = {c % nbits for c in codes}
    for _ in range(radius):
        new = []
        for i in range(len(atoms)):
            blob = struct.pack("<Q", codes[i])
            for order, code in sorted((o, codes[j]) for j, o in neighbours[i]):
                blob += struct.pack("<qQ", order, code)
            new.append(_reference_fnv(blob))
        codes = new
        bits |= {c % nbits for c in codes}
    return bits


class TestFingerprint:
    @pytest.mark.parametrize(
        "smiles, atoms, bonds",
        [
            ("CCO", [(6, 3, 0, 0), (6, 2, 0, 0), (8, 1, 0, 0)], [(0, 1, 1), (1, 2, 1)]),
            ("C=O", [(6, 2, 0, 0), (8, 0, 0, 0)], [(0, 1, 2)]),
            ("C#N", [(6, 1, 0, 0), (7, 0, 0, 0)], [(0, 1, 3)]),
            (
                "c1ccccc1",
                [(6, 1, 1, 1)] * 6,
                [(i, (i + 1) % 6, 4) for i in range(6)],
            ),
            (
                "C1CC1",
                [(6, 2, 0, 1)] * 3,
                [(0, 1, 1), (1, 2, 1), (2, 0, 1)],
            ),
        ],
    )
    def test_matches_reference_oracle(self, smiles, atoms, bonds):
        (g,) = parse_smiles(smiles)
        assert set(morgan_fingerprint(g).positions()) == _reference_morgan(atoms, bonds)

    def test_radius_zero_counts_atom_environments(self):
        (g,) = parse_smiles("CCO")
        assert morgan_fingerprint(g, radius=0).count == 3

    def test_fragments_are_or_ed(self):
        both = fingerprint_smiles("CCO.N")
        assert both == fingerprint_smiles("CCO") | fingerprint_smiles("N")

    def test_width_must_be_power_of_two(self):
        with pytest.raises(ValueError):
            Fingerprint(1000)

    def test_width_mismatch(self):
        with pytest.raises(ValueError):
            tanimoto(Fingerprint(64), Fingerprint(128))


class TestTanimoto:
    def test_identity(self):
        fp = fingerprint_smiles("CCO")
        assert tanimoto(fp, fp) == 1.0

    def test_both_empty_is_one(self):
        assert tanimoto(Fingerprint(64), Fingerprint(64)) == 1.0

    def test_disjoint_is_zero(self):
        a = Fingerprint.from_positions([1, 2], 64)
        b = Fingerprint.from_positions([3], 64)
        assert tanimoto(a, b) == 0.0

    def test_hand_computed(self):
        a = Fingerprint.from_positions([1, 2, 3], 64)
        b = Fingerprint.from_positions([2, 3, 4, 5], 64)
        assert tanimoto(a, b) == pytest.approx(2 / 5)


bitsets = st.sets(st.integers(0, 255), max_size=40).map(lambda s: Fingerprint.from_positions(s, 256))


@given(bitsets, bitsets)
def test_tanimoto_symmetric_and_bounded(a, b):
    t = tanimoto(a, b)
    assert t == tanimoto(b, a)
    assert 0.0 <= t <= 1.0


@given(bitsets)
def test_tanimoto_self_is_one(a):
    assert tanimoto(a, a) == 1.0


@settings(max_examples=40, deadline=None)
@given(st.sampled_from(PERMUTATION_SET), st.randoms(use_true_random=False))
def test_canonical_invariant_under_random_atom_order(smiles, rng):
    for g in parse_smiles(smiles):
        order = list(range(len(g.atoms)))
        rng.shuffle(order)
        h = g.permuted(order)
        assert canonical_smiles(h) == canonical_smiles(g)
        assert morgan_fingerprint(h) == morgan_fingerprint(g)
