"""Molecular graphs: a small SMILES reader/writer, canonical labels and
label-aware subgraph matching.

Only connectivity and labels are modelled. Implicit hydrogens are never
materialized, stereo marks and isotopes are dropped, and aromaticity is
taken verbatim from the input tokens.
"""

from __future__ import annotations

import re
import sys
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Iterator

__all__ = [
    "Atom",
    "Bond",
    "MolGraph",
    "SmilesError",
    "UnclosedRingError",
    "UnmatchedParenthesisError",
    "UnknownElementError",
    "DanglingBondError",
    "parse_smiles",
    "to_smiles",
    "canonical_label",
    "graph_from_canonical",
    "count_embeddings",
    "has_embedding",
    "read_compounds",
    "write_compounds",
]

SINGLE, DOUBLE, TRIPLE, AROMATIC = 1, 2, 3, 4
BOND_SYMBOLS = {"-": SINGLE, "=": DOUBLE, "#": TRIPLE, ":": AROMATIC, "/": SINGLE, "\\": SINGLE}
_ORDER_SYMBOL = {SINGLE: "-", DOUBLE: "=", TRIPLE: "#", AROMATIC: ":"}

ORGANIC = ("Cl", "Br", "B", "C", "N", "O", "P", "S", "F", "I")
AROMATIC_ORGANIC = ("b", "c", "n", "o", "p", "s")
# elements accepted inside brackets; lowercase forms are the aromatic ones
BRACKET_ELEMENTS = frozenset(
    "H He Li Be B C N O F Ne Na Mg Al Si P S Cl Ar K Ca Ti V Cr Mn Fe Co Ni Cu Zn "
    "Ga Ge As Se Br Kr Rb Sr Ag Cd In Sn Sb Te I Xe Cs Ba Pt Au Hg Tl Pb Bi".split()
)
BRACKET_AROMATIC = frozenset("b c n o p s se as te".split())


class SmilesError(ValueError):
    """Malformed SMILES. ``position`` is the byte offset of the problem."""

    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (at offset {position})")
        self.position = position


class UnclosedRingError(SmilesError):
    pass


class UnmatchedParenthesisError(SmilesError):
    pass


class UnknownElementError(SmilesError):
    pass


class DanglingBondError(SmilesError):
    pass


@dataclass(frozen=True)
class Atom:
    element: str
    aromatic: bool = False
    formal_charge: int = 0

    @property
    def label(self) -> str:
        sym = self.element.lower() if self.aromatic else self.element
        if self.formal_charge:
            sym += f"{self.formal_charge:+d}"
        return sym


@dataclass(frozen=True)
class Bond:
    a: int
    b: int
    order: int = SINGLE

    @property
    def endpoints(self) -> frozenset[int]:
        return frozenset((self.a, self.b))


@dataclass
class MolGraph:
    """Simple undirected labeled graph. Treat instances as immutable."""

    atoms: list[Atom]
    bonds: list[Bond]
    id: str = ""
    _adj: list[dict[int, int]] = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        adj: list[dict[int, int]] = [dict() for _ in self.atoms]
        for bond in self.bonds:
            if bond.a == bond.b:
                raise ValueError(f"self-loop on atom {bond.a}")
            if not (0 <= bond.a < len(self.atoms) and 0 <= bond.b < len(self.atoms)):
                raise ValueError(f"bond {bond} out of range")
            if bond.b in adj[bond.a]:
                raise ValueError(f"duplicate bond between {bond.a} and {bond.b}")
            adj[bond.a][bond.b] = bond.order
            adj[bond.b][bond.a] = bond.order
        self._adj = adj

    @property
    def adjacency(self) -> list[dict[int, int]]:
        """Per-atom ``{neighbor: bond order}``."""
        return self._adj

    @property
    def n_atoms(self) -> int:
        return len(self.atoms)

    def degree(self, i: int) -> int:
        return len(self._adj[i])

    def labels(self) -> list[str]:
        return [a.label for a in self.atoms]

    def n_components(self) -> int:
        seen = [False] * self.n_atoms
        comps = 0
        for start in range(self.n_atoms):
            if seen[start]:
                continue
            comps += 1
            stack = [start]
            seen[start] = True
            while stack:
                u = stack.pop()
                for v in self._adj[u]:
                    if not seen[v]:
                        seen[v] = True
                        stack.append(v)
        return comps

    def relabeled(self, perm: list[int]) -> "MolGraph":
        """Return a copy where old atom ``i`` becomes atom ``perm[i]``."""
        atoms = [None] * self.n_atoms
        for old, new in enumerate(perm):
            atoms[new] = self.atoms[old]
        bonds = [Bond(perm[b.a], perm[b.b], b.order) for b in self.bonds]
        return MolGraph(atoms, bonds, self.id)

    def edge_subgraph(self, edges: Iterable[tuple[int, int]]) -> "MolGraph":
        """Subgraph induced by a set of edges (atoms = their endpoints)."""
        edges = sorted({(min(u, v), max(u, v)) for u, v in edges})
        index: dict[int, int] = {}
        for u, v in edges:
            index.setdefault(u, len(index))
            index.setdefault(v, len(index))
        atoms = [None] * len(index)
        for old, new in index.items():
            atoms[new] = self.atoms[old]
        bonds = [Bond(index[u], index[v], self._adj[u][v]) for u, v in edges]
        return MolGraph(atoms, bonds)

    def __len__(self) -> int:
        return self.n_atoms


# ---------------------------------------------------------------------------
# SMILES reading


def _read_bracket(text: str, start: int) -> tuple[Atom, int]:
    end = text.find("]", start)
    if end < 0:
        raise SmilesError("unterminated bracket atom", start)
    body = text[start + 1 : end]
    i = 0
    while i < len(body) and body[i].isdigit():  # isotope, ignored
        i += 1
    sym = None
    for cand in (body[i : i + 2], body[i : i + 1]):
        if len(cand) == 2 and not cand[1].islower():
            continue
        if cand in BRACKET_ELEMENTS or cand in BRACKET_AROMATIC:
            sym = cand
            break
    if sym is None:
        raise UnknownElementError(f"unknown element in [{body}]", start + 1 + i)
    i += len(sym)
    aromatic = sym[0].islower()
    element = sym.capitalize() if aromatic else sym
    while i < len(body) and body[i] == "@":  # chirality, ignored
        i += 1
    if i < len(body) and body[i] == "H":
        i += 1
        while i < len(body) and body[i].isdigit():
            i += 1
    charge = 0
    if i < len(body) and body[i] in "+-":
        sign = 1 if body[i] == "+" else -1
        i += 1
        if i < len(body) and body[i].isdigit():
            j = i
            while j < len(body) and body[j].isdigit():
                j += 1
            charge = sign * int(body[i:j])
            i = j
        else:
            charge = sign
            while i < len(body) and body[i] == body[i - 1]:
                charge += sign
                i += 1
    if i < len(body) and body[i] == ":":  # atom class, ignored
        i += 1
        while i < len(body) and body[i].isdigit():
            i += 1
    if i != len(body):
        raise SmilesError(f"unsupported bracket atom [{body}]", start + 1 + i)
    return Atom(element, aromatic, charge), end + 1


def parse_smiles(text: str, id: str = "") -> MolGraph:
    """Parse the supported SMILES subset into a :class:`MolGraph`.

    Raises a :class:`SmilesError` subclass carrying the byte offset of the
    first problem.
    """
    if not text or not text.isascii():
        raise SmilesError("SMILES must be non-empty ASCII", 0)
    atoms: list[Atom] = []
    bonds: dict[tuple[int, int], int] = {}
    prev: int | None = None
    pending: int | None = None  # explicit bond symbol waiting for an atom
    pending_pos = 0
    branches: list[tuple[int | None, int]] = []
    rings: dict[int, tuple[int, int | None, int]] = {}

    def add_bond(u: int, v: int, order: int | None, pos: int) -> None:
        if order is None:
            order = AROMATIC if atoms[u].aromatic and atoms[v].aromatic else SINGLE
        key = (min(u, v), max(u, v))
        if u == v or key in bonds:
            raise SmilesError("self or duplicate bond", pos)
        bonds[key] = order

    i, n = 0, len(text)
    while i < n:
        ch = text[i]
        if ch in BOND_SYMBOLS:
            if pending is not None or prev is None:
                raise DanglingBondError(f"bond symbol {ch!r} has no preceding atom", i)
            pending, pending_pos = BOND_SYMBOLS[ch], i
            i += 1
        elif ch == "(":
            if prev is None or pending is not None:
                raise UnmatchedParenthesisError("branch opened without an atom", i)
            branches.append((prev, i))
            i += 1
        elif ch == ")":
            if not branches:
                raise UnmatchedParenthesisError("unmatched ')'", i)
            if pending is not None:
                raise DanglingBondError("bond symbol before ')'", pending_pos)
            prev, _ = branches.pop()
            i += 1
        elif ch == ".":
            if pending is not None:
                raise DanglingBondError("bond symbol before '.'", pending_pos)
            prev = None
            i += 1
        elif ch.isdigit() or ch == "%":
            if prev is None:
                raise SmilesError("ring closure without an atom", i)
            if ch == "%":
                if len(text[i + 1 : i + 3]) != 2 or not text[i + 1 : i + 3].isdigit():
                    raise SmilesError("malformed %nn ring closure", i)
                num, width = int(text[i + 1 : i + 3]), 3
            else:
                num, width = int(ch), 1
            if num in rings:
                other, order, _ = rings.pop(num)
                if order is not None and pending is not None and order != pending:
                    raise SmilesError(f"conflicting bond orders on ring {num}", i)
                add_bond(other, prev, pending if pending is not None else order, i)
            else:
                rings[num] = (prev, pending, i)
            pending = None
            i += width
        else:
            if ch == "[":
                atom, j = _read_bracket(text, i)
            else:
                two = text[i : i + 2]
                if two in ("Cl", "Br"):
                    atom, j = Atom(two), i + 2
                elif ch in ORGANIC:
                    atom, j = Atom(ch), i + 1
                elif ch in AROMATIC_ORGANIC:
                    atom, j = Atom(ch.upper(), True), i + 1
                else:
                    raise UnknownElementError(f"unknown element {ch!r}", i)
            atoms.append(atom)
            cur = len(atoms) - 1
            if prev is not None:
                add_bond(prev, cur, pending, i)
            elif pending is not None:
                raise DanglingBondError("bond symbol has no preceding atom", pending_pos)
            pending = None
            prev = cur
            i = j
    if pending is not None:
        raise DanglingBondError("trailing bond symbol", pending_pos)
    if branches:
        raise UnmatchedParenthesisError("unclosed '('", branches[-1][1])
    if rings:
        num, (_, _, pos) = min(rings.items(), key=lambda kv: kv[1][2])
        raise UnclosedRingError(f"unclosed ring closure {num}", pos)
    if not atoms:
        raise SmilesError("no atoms", 0)
    return MolGraph(atoms, [Bond(u, v, o) for (u, v), o in bonds.items()], id)


# ---------------------------------------------------------------------------
# SMILES writing


def _atom_token(atom: Atom) -> str:
    if atom.formal_charge == 0:
        if not atom.aromatic and atom.element in ORGANIC:
            return atom.element
        if atom.aromatic and atom.element.lower() in AROMATIC_ORGANIC:
            return atom.element.lower()
    sym = atom.element.lower() if atom.aromatic else atom.element
    charge = f"{atom.formal_charge:+d}" if atom.formal_charge else ""
    return f"[{sym}{charge}]"


def _bond_token(g: MolGraph, u: int, v: int) -> str:
    order = g.adjacency[u][v]
    both_aromatic = g.atoms[u].aromatic and g.atoms[v].aromatic
    if order == AROMATIC:
        return "" if both_aromatic else ":"
    if order == SINGLE:
        return "-" if both_aromatic else ""
    return _ORDER_SYMBOL[order]


def to_smiles(g: MolGraph) -> str:
    """Write ``g`` as SMILES (not canonical; atom order follows indices)."""
    adj = g.adjacency
    visited = [False] * g.n_atoms
    parts: list[str] = []
    next_ring = [1]
    free_rings: list[int] = []

    def ring_token(num: int) -> str:
        return str(num) if num < 10 else f"%{num:02d}"

    for root in range(g.n_atoms):
        if visited[root]:
            continue
        # first pass: DFS tree, collect ring-closure (back) edges
        order, parent = [], {root: None}
        tree_children: dict[int, list[int]] = {}
        closures: dict[int, list[tuple[int, int]]] = {}
        seen_edges = set()
        stack = [root]
        on_tree = set()
        while stack:
            u = stack.pop()
            if u in on_tree:
                continue
            on_tree.add(u)
            order.append(u)
            p = parent[u]
            if p is not None:
                tree_children.setdefault(p, []).append(u)
                seen_edges.add(frozenset((p, u)))
            for v in sorted(adj[u], reverse=True):
                if v not in on_tree:
                    parent[v] = u
                    stack.append(v)
        rank = {u: k for k, u in enumerate(order)}
        for u in order:
            for v in adj[u]:
                e = frozenset((u, v))
                if e in seen_edges or rank[v] >= rank[u]:
                    continue
                seen_edges.add(e)
                closures.setdefault(v, []).append((u, 0))  # opened at earlier atom v
                closures.setdefault(u, []).append((v, 1))  # closed at later atom u
        ring_ids: dict[frozenset, int] = {}

        def emit(u: int) -> None:
            visited[u] = True
            parts.append(_atom_token(g.atoms[u]))
            for v, closing in sorted(closures.get(u, []), key=lambda t: (t[1] == 0, rank[t[0]])):
                e = frozenset((u, v))
                if closing:
                    num = ring_ids.pop(e)
                    parts.append(_bond_token(g, u, v) + ring_token(num))
                    free_rings.append(num)
                    free_rings.sort()
                else:
                    num = free_rings.pop(0) if free_rings else next_ring[0]
                    if num == next_ring[0]:
                        next_ring[0] += 1
                    ring_ids[e] = num
                    parts.append(_bond_token(g, u, v) + ring_token(num))
            kids = tree_children.get(u, [])
            for k, v in enumerate(kids):
                branch = k < len(kids) - 1
                if branch:
                    parts.append("(")
                parts.append(_bond_token(g, u, v))
                emit(v)
                if branch:
                    parts.append(")")

        if parts:
            parts.append(".")
        if g.n_atoms + 100 > sys.getrecursionlimit():
            sys.setrecursionlimit(g.n_atoms + 100)
        emit(root)
    return "".join(parts)


# ---------------------------------------------------------------------------
# canonical labeling


def _refine(g: MolGraph, colors: list[int]) -> list[int]:
    """Color refinement to a stable partition; colors are dense ranks."""
    adj = g.adjacency
    n_cls = len(set(colors))
    while True:
        sigs = [
            (colors[u], tuple(sorted((o, colors[v]) for v, o in adj[u].items())))
            for u in range(g.n_atoms)
        ]
        ranking = {s: k for k, s in enumerate(sorted(set(sigs)))}
        new = [ranking[s] for s in sigs]
        if len(ranking) == n_cls:
            return new
        colors, n_cls = new, len(ranking)


def _certificate(g: MolGraph, colors: list[int]) -> tuple:
    pos = colors  # discrete: colors are positions 0..n-1
    atoms = [None] * g.n_atoms
    for u, p in enumerate(pos):
        atoms[p] = g.atoms[u].label
    edges = sorted((min(pos[b.a], pos[b.b]), max(pos[b.a], pos[b.b]), b.order) for b in g.bonds)
    return tuple(atoms), tuple(edges)


def _search(g: MolGraph, colors: list[int], best: list) -> None:
    n = g.n_atoms
    counts = Counter(colors)
    if len(counts) == n:
        cert = _certificate(g, colors)
        if best[0] is None or cert < best[0]:
            best[0] = cert
        return
    # first smallest non-singleton cell
    target = min((c for c, k in counts.items() if k > 1), key=lambda c: (counts[c], c))
    for u in (u for u in range(n) if colors[u] == target):
        # individualize u: it precedes the rest of its cell
        split = [2 * c + (1 if (c == target and v != u) else 0) for v, c in enumerate(colors)]
        ranks = {c: k for k, c in enumerate(sorted(set(split)))}
        _search(g, _refine(g, [ranks[c] for c in split]), best)


def canonical_label(g: MolGraph) -> str:
    """Isomorphism-invariant string for a labeled graph.

    Colour refinement seeded by atom labels, then individualization of
    tied atoms with exhaustive backtracking; the lexicographically smallest
    leaf certificate is the label.
    """
    if g.n_atoms == 0:
        return ""
    labels = g.labels()
    ranks = {lab: k for k, lab in enumerate(sorted(set(labels)))}
    colors = _refine(g, [ranks[lab] for lab in labels])
    best = [None]
    _search(g, colors, best)
    atoms, edges = best[0]
    return ".".join(atoms) + ";" + ",".join(f"{a}-{b}{_ORDER_SYMBOL[o]}" for a, b, o in edges)


_LABEL_RE = re.compile(r"^([A-Za-z]+)([+-]\d+)?$")
_EDGE_RE = re.compile(r"^(\d+)-(\d+)([-=#:])$")


def graph_from_canonical(canon: str) -> MolGraph:
    """Rebuild the graph encoded by a :func:`canonical_label` string."""
    try:
        atom_part, edge_part = canon.split(";")
        atoms = []
        for lab in atom_part.split("."):
            sym, charge = _LABEL_RE.match(lab).groups()
            aromatic = sym[0].islower()
            atoms.append(Atom(sym.capitalize() if aromatic else sym, aromatic, int(charge or 0)))
        bonds = []
        for tok in filter(None, edge_part.split(",")):
            a, b, sym = _EDGE_RE.match(tok).groups()
            bonds.append(Bond(int(a), int(b), BOND_SYMBOLS[sym]))
    except (ValueError, AttributeError) as exc:
        raise ValueError(f"malformed canonical label {canon!r}") from exc
    return MolGraph(atoms, bonds)


# ---------------------------------------------------------------------------
# subgraph matching


def _match_order(pattern: MolGraph) -> list[tuple[int, int | None]]:
    """Pattern atoms in BFS order with an already-placed anchor neighbor."""
    adj = pattern.adjacency
    placed: dict[int, None] = {}
    seq: list[tuple[int, int | None]] = []
    # start from the rarest-looking atom: highest degree, then label
    remaining = sorted(range(pattern.n_atoms), key=lambda u: (-len(adj[u]), pattern.atoms[u].label))
    for root in remaining:
        if root in placed:
            continue
        placed[root] = None
        seq.append((root, None))
        frontier = [root]
        while frontier:
            nxt = []
            for u in frontier:
                for v in sorted(adj[u], key=lambda v: -len(adj[v])):
                    if v not in placed:
                        placed[v] = None
                        seq.append((v, u))
                        nxt.append(v)
            frontier = nxt
    return seq


def _embeddings(pattern: MolGraph, host: MolGraph) -> Iterator[dict[int, int]]:
    k = pattern.n_atoms
    if k == 0 or k > host.n_atoms:
        return
    plabels, hlabels = pattern.labels(), host.labels()
    if Counter(plabels) - Counter(hlabels):
        return
    if len(pattern.bonds) > len(host.bonds):
        return
    padj, hadj = pattern.adjacency, host.adjacency
    seq = _match_order(pattern)
    mapping: dict[int, int] = {}
    used: set[int] = set()

    def feasible(p: int, h: int) -> bool:
        if plabels[p] != hlabels[h] or len(padj[p]) > len(hadj[h]):
            return False
        for q, order in padj[p].items():
            hq = mapping.get(q)
            if hq is not None and hadj[h].get(hq) != order:
                return False
        return True

    def extend(depth: int) -> Iterator[dict[int, int]]:
        if depth == k:
            yield mapping
            return
        p, anchor = seq[depth]
        cands = hadj[mapping[anchor]] if anchor is not None else range(host.n_atoms)
        for h in cands:
            if h in used or not feasible(p, h):
                continue
            mapping[p] = h
            used.add(h)
            yield from extend(depth + 1)
            del mapping[p]
            used.discard(h)

    yield from extend(0)


def has_embedding(pattern: MolGraph, host: MolGraph) -> bool:
    """True if ``pattern`` is label-monomorphic to a subgraph of ``host``."""
    return next(_embeddings(pattern, host), None) is not None


def count_embeddings(pattern: MolGraph, host: MolGraph) -> int:
    """Number of distinct host atom subsets carrying an image of ``pattern``.

    Element, aromatic flag, charge and bond order must match; extra host
    bonds between matched atoms are allowed (monomorphism). Automorphic
    images of the same atom subset count once.
    """
    return len({frozenset(m.values()) for m in _embeddings(pattern, host)})


# ---------------------------------------------------------------------------
# compound files


def read_compounds(path) -> list[tuple[str, str]]:
    """Read ``<id>\\t<smiles>`` lines; ``#`` lines and blanks are skipped."""
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n\r")
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) < 2:
                raise ValueError(f"{path}:{lineno}: expected '<id>\\t<smiles>'")
            records.append((parts[0], parts[1].strip()))
    return records


def write_compounds(path, records: Iterable[tuple[str, str]]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for cid, smi in records:
            fh.write(f"{cid}\t{smi}\n")
