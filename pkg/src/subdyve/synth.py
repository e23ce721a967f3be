"""Seeded synthetic data: planted-motif molecule corpora, planted-partition
networks and block-structured fingerprints for them."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .chem import AROMATIC, DOUBLE, SINGLE, Atom, Bond, MolGraph, count_embeddings, parse_smiles, to_smiles
from .simnet import SimilarityGraph

__all__ = [
    "PlantedCorpus",
    "GraftError",
    "gen_scaffold",
    "gen_planted_corpus",
    "gen_planted_partition",
    "gen_block_fingerprints",
]

_VALENCE = {"C": 4, "N": 3, "O": 2, "S": 2, "F": 1, "Cl": 1, "Br": 1, "I": 1, "P": 3, "B": 3}


class GraftError(ValueError):
    """The motif cannot be attached to a scaffold of the requested size."""


@dataclass
class PlantedCorpus:
    molecules: list[MolGraph]
    labels: list[bool]
    motif: MolGraph
    seed: int

    @property
    def smiles(self) -> list[str]:
        return [to_smiles(m) for m in self.molecules]

    @property
    def ids(self) -> list[str]:
        return [m.id for m in self.molecules]

    def records(self) -> list[tuple[str, str]]:
        return list(zip(self.ids, self.smiles))


def _free_valence(atoms: list[Atom], bonds: list[Bond]) -> list[float]:
    used = [0.0] * len(atoms)
    for b in bonds:
        v = 1.5 if b.order == AROMATIC else float(b.order)
        used[b.a] += v
        used[b.b] += v
    free = []
    for a, u in zip(atoms, used):
        cap = _VALENCE.get(a.element, 4) + (1 if a.formal_charge > 0 and a.element == "N" else 0)
        free.append(cap - u)
    return free


def gen_scaffold(n_atoms: int, rng: np.random.Generator) -> tuple[list[Atom], list[Bond]]:
    """Random C/N/O tree, optionally built around one benzene ring.

    A tree that saturates before reaching ``n_atoms`` is discarded and regrown
    from the same stream.
    """
    while True:
        grown = _grow_scaffold(n_atoms, rng)
        if grown is not None:
            return grown


def _grow_scaffold(n_atoms: int, rng: np.random.Generator):
    atoms: list[Atom] = []
    bonds: list[Bond] = []
    if n_atoms >= 8 and rng.random() < 0.5:
        atoms = [Atom("C", True) for _ in range(6)]
        bonds = [Bond(i, (i + 1) % 6, AROMATIC) for i in range(6)]
    elif n_atoms >= 1:
        atoms = [Atom("C")]
    while len(atoms) < n_atoms:
        free = _free_valence(atoms, bonds)
        hosts = [i for i, f in enumerate(free) if f >= 1]
        if not hosts:
            return None
        host = int(rng.choice(hosts))
        elem = rng.choice(["C", "C", "C", "C", "N", "O"])
        atoms.append(Atom(str(elem)))
        new = len(atoms) - 1
        order = SINGLE
        if (
            not atoms[host].aromatic
            and free[host] >= 2
            and elem in ("C", "O")
            and atoms[host].element == "C"
            and rng.random() < 0.25
        ):
            order = DOUBLE
        bonds.append(Bond(host, new, order))
    return atoms, bonds


def _graft(atoms, bonds, motif: MolGraph, rng) -> tuple[list[Atom], list[Bond]]:
    free = _free_valence(atoms, bonds)
    hosts = [i for i, f in enumerate(free) if f >= 1]
    mfree = _free_valence(motif.atoms, motif.bonds)
    anchors = [i for i, f in enumerate(mfree) if f >= 1]
    if not hosts or not anchors:
        raise GraftError("no free valence to attach the motif")
    offset = len(atoms)
    atoms = atoms + list(motif.atoms)
    bonds = bonds + [Bond(b.a + offset, b.b + offset, b.order) for b in motif.bonds]
    bonds.append(Bond(int(rng.choice(hosts)), offset + int(rng.choice(anchors)), SINGLE))
    return atoms, bonds


def gen_planted_corpus(
    n_active: int,
    n_inactive: int,
    motif: str = "NC=O",
    scaffold_len: int = 10,
    seed: int = 0,
    max_tries: int = 1000,
) -> PlantedCorpus:
    """Actives carry ``motif`` grafted onto a random scaffold; inactives are
    scaffolds verified to contain no embedding of it. Actives come first."""
    motif_g = parse_smiles(motif)
    if scaffold_len < motif_g.n_atoms:
        raise GraftError("scaffold_len must be at least the motif size")
    rng = np.random.default_rng([seed, 0xC0])
    mols: list[MolGraph] = []
    labels: list[bool] = []
    for i in range(n_active):
        atoms, bonds = gen_scaffold(scaffold_len, rng)
        atoms, bonds = _graft(atoms, bonds, motif_g, rng)
        mol = MolGraph(atoms, bonds, f"act{i:04d}")
        assert count_embeddings(motif_g, mol) >= 1
        mols.append(mol)
        labels.append(True)
    for i in range(n_inactive):
        for _ in range(max_tries):
            atoms, bonds = gen_scaffold(scaffold_len + motif_g.n_atoms, rng)
            mol = MolGraph(atoms, bonds, f"ina{i:04d}")
            if count_embeddings(motif_g, mol) == 0:
                break
        else:
            raise GraftError("could not draw a motif-free scaffold")
        mols.append(mol)
        labels.append(False)
    return PlantedCorpus(mols, labels, motif_g, seed)


def gen_planted_partition(
    n_per_block: int,
    blocks: int,
    p_in: float,
    p_out: float,
    seed: int = 0,
) -> SimilarityGraph:
    """Stochastic block graph. Intra-block edges appear with ``p_in`` and
    weight U[0.7, 1.0]; inter-block edges with ``p_out`` and weight U[0.1, 0.4].
    Node ``i`` belongs to block ``i // n_per_block``."""
    if not 0 <= p_out < p_in <= 1:
        raise ValueError("need 0 <= p_out < p_in <= 1")
    rng = np.random.default_rng([seed, 0xB10C])
    n = n_per_block * blocks
    block = np.arange(n) // n_per_block
    iu, ju = np.triu_indices(n, k=1)
    same = block[iu] == block[ju]
    draw = rng.random(len(iu))
    keep = np.where(same, draw < p_in, draw < p_out)
    w = np.where(same, rng.uniform(0.7, 1.0, len(iu)), rng.uniform(0.1, 0.4, len(iu)))
    return SimilarityGraph([f"n{i:05d}" for i in range(n)], iu[keep], ju[keep], w[keep])


def gen_block_fingerprints(
    block: np.ndarray,
    active: np.ndarray,
    d: int = 32,
    motif_dims: int = 4,
    noise: float = 0.5,
    seed: int = 0,
    motif_rate: float = 2.0,
) -> np.ndarray:
    """Non-negative integer fingerprints for a planted-partition screen.

    Every block owns a Poisson intensity profile over the first
    ``d - motif_dims`` dimensions; actives additionally light up the last
    ``motif_dims`` dimensions (extra Poisson rate ``motif_rate``), which play the role of the planted
    discriminative patterns. ``noise`` is a background Poisson rate.
    """
    rng = np.random.default_rng([seed, 0xF1])
    block = np.asarray(block)
    active = np.asarray(active, dtype=bool)
    n_blocks = int(block.max()) + 1
    base = d - motif_dims
    profiles = rng.gamma(1.0, 2.0, size=(n_blocks, base)) * (rng.random((n_blocks, base)) < 0.4)
    rate = np.full((len(block), d), noise * 0.2)
    rate[:, :base] += profiles[block]
    rate[active, base:] += motif_rate
    return rng.poisson(rate).astype(np.int64)
