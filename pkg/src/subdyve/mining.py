"""Supervised subgraph mining, discriminative subgraph combinations (DiSCs)
and subgraph-pattern fingerprints."""

from __future__ import annotations

import bisect
import itertools
import math
import warnings
from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .chem import MolGraph, canonical_label, count_embeddings, graph_from_canonical, has_embedding

__all__ = [
    "Pattern",
    "DiSC",
    "ShortDimensionWarning",
    "binary_entropy",
    "support_entropy",
    "disc_score",
    "mine_patterns",
    "select_structural_alerts",
    "presence_matrix",
    "build_discs",
    "encode_fingerprint",
    "fingerprint_matrix",
    "filter_candidates",
    "write_discs",
    "read_discs",
    "write_fingerprints",
    "read_fingerprints",
]


class ShortDimensionWarning(UserWarning):
    """Fewer DiSCs survived than the requested fingerprint dimension."""


@dataclass
class Pattern:
    graph: MolGraph
    canon: str
    supp_pos: float = 0.0
    supp_neg: float = 0.0

    @classmethod
    def from_graph(cls, graph: MolGraph, **supports) -> "Pattern":
        return cls(graph, canonical_label(graph), **supports)

    @classmethod
    def from_canonical(cls, canon: str, **supports) -> "Pattern":
        return cls(graph_from_canonical(canon), canon, **supports)


@dataclass
class DiSC:
    members: tuple[Pattern, ...]
    score: float
    supp_pos: float
    supp_neg: float

    @property
    def canon(self) -> str:
        return "|".join(m.canon for m in self.members)

    @property
    def k(self) -> int:
        return len(self.members)


def binary_entropy(p: float) -> float:
    """Entropy in bits of a Bernoulli(p)."""
    if p <= 0.0 or p >= 1.0:
        return 0.0
    return -(p * math.log2(p) + (1 - p) * math.log2(1 - p))


def support_entropy(supp_pos: float, supp_neg: float) -> float:
    total = supp_pos + supp_neg
    if total <= 0:
        return 0.0
    return binary_entropy(supp_pos / total)


def disc_score(supp_pos: float, supp_neg: float) -> float:
    """``1 - Entropy(supp_pos, supp_neg)``; 0 when both supports vanish."""
    if supp_pos + supp_neg <= 0:
        return 0.0
    return 1.0 - support_entropy(supp_pos, supp_neg)


# ---------------------------------------------------------------------------
# supervised random-walk mining


@dataclass
class WalkPolicy:
    """Class-specific preference per ordered (label, bond order, label) doublet."""

    doublet_weights: dict[tuple[str, int, str], float] = field(default_factory=dict)

    def weight(self, key: tuple[str, int, str]) -> float:
        return self.doublet_weights.get(key, 1.0)


def _transition_tables(mol: MolGraph, policy: WalkPolicy):
    """Per atom: neighbor list and cumulative transition probabilities."""
    labels = mol.labels()
    tables = []
    for u, nbrs in enumerate(mol.adjacency):
        items = sorted(nbrs.items())
        w = [policy.weight((labels[u], o, labels[v])) for v, o in items]
        total = sum(w)
        cdf = list(itertools.accumulate(x / total for x in w))
        tables.append(([v for v, _ in items], cdf))
    return tables


def _walk_edges(tables, start: int, length: int, u01) -> frozenset:
    cur = start
    edges = set()
    for step in range(length):
        nbrs, cdf = tables[cur]
        if not nbrs:
            break
        nxt = nbrs[min(bisect.bisect_right(cdf, u01[step]), len(nbrs) - 1)]
        edges.add((cur, nxt) if cur < nxt else (nxt, cur))
        cur = nxt
    return frozenset(edges)


def _sample_round(mols, policy, L, R, seed, round_idx, class_tag):
    """All walks of one round over ``mols``; returns per-molecule edge-set counts.

    Each molecule draws from its own generator keyed by (seed, round, class,
    molecule), so results do not depend on processing order.
    """
    out = []
    for mi, mol in enumerate(mols):
        rng = np.random.default_rng([seed, round_idx, class_tag, mi])
        draws = rng.random((mol.n_atoms, R, L)).tolist()
        tables = _transition_tables(mol, policy)
        walks = Counter()
        for a in range(mol.n_atoms):
            for r in range(R):
                e = _walk_edges(tables, a, L, draws[a][r])
                if e:
                    walks[e] += 1
        out.append(walks)
    return out


def _doublet_counts(mols, walk_counts) -> Counter:
    counts = Counter()
    for mol, walks in zip(mols, walk_counts):
        labels = mol.labels()
        adj = mol.adjacency
        for edges, mult in walks.items():
            for u, v in edges:
                o = adj[u][v]
                counts[(labels[u], o, labels[v])] += mult
                counts[(labels[v], o, labels[u])] += mult
    return counts


def _stratified_holdout(n: int, frac: float, rng: np.random.Generator) -> np.ndarray:
    mask = np.zeros(n, dtype=bool)
    if n >= 2:
        k = min(n - 1, max(1, int(round(frac * n))))
        mask[rng.choice(n, size=k, replace=False)] = True
    return mask


class _PresenceCache:
    def __init__(self, mols: Sequence[MolGraph]):
        self.mols = mols
        self.cache: dict[tuple[str, int], bool] = {}

    def __call__(self, pat: Pattern, mi: int) -> bool:
        key = (pat.canon, mi)
        hit = self.cache.get(key)
        if hit is None:
            hit = self.cache[key] = has_embedding(pat.graph, self.mols[mi])
        return hit


def mine_patterns(
    pos: Sequence[MolGraph],
    neg: Sequence[MolGraph],
    walk_length: int = 6,
    restarts: int = 20,
    rounds: int = 5,
    seed: int = 0,
    eps: float = 1.0,
    holdout_frac: float = 0.2,
) -> list[Pattern]:
    """Mine class-discriminative subgraphs with policy-biased random walks.

    Every round walks ``restarts`` times for ``walk_length`` steps from each
    atom of each training-fold molecule. The edge set visited by a walk on a
    positive molecule is a candidate pattern. Doublet frequencies in
    positive vs negative walks (per molecule, ``eps``-smoothed ratio) become
    the next round's policy. The round whose candidates give the best
    single-pattern AUC on a stratified held-out fold is returned, with
    supports measured on all of ``pos`` and ``neg``.
    """
    if not pos or not neg:
        raise ValueError("mining needs at least one positive and one negative molecule")
    if walk_length < 1 or restarts < 1 or rounds < 1:
        raise ValueError("walk_length, restarts and rounds must all be >= 1")

    rng = np.random.default_rng([seed, 0x5EED])
    hold_pos = _stratified_holdout(len(pos), holdout_frac, rng)
    hold_neg = _stratified_holdout(len(neg), holdout_frac, rng)
    train_pos = [m for m, h in zip(pos, hold_pos) if not h]
    train_neg = [m for m, h in zip(neg, hold_neg) if not h]
    eval_pos_idx = np.flatnonzero(hold_pos) if hold_pos.any() else np.arange(len(pos))
    eval_neg_idx = np.flatnonzero(hold_neg) if hold_neg.any() else np.arange(len(neg))

    all_mols = list(pos) + list(neg)
    present = _PresenceCache(all_mols)
    canon_cache: dict[tuple[int, frozenset], Pattern] = {}
    train_pos_index = [i for i, h in enumerate(hold_pos) if not h]

    policy = WalkPolicy()
    best = None  # (score key, round, patterns)
    for t in range(rounds):
        pos_walks = _sample_round(train_pos, policy, walk_length, restarts, seed, t, 1)
        neg_walks = _sample_round(train_neg, policy, walk_length, restarts, seed, t, 0)

        candidates: dict[str, Pattern] = {}
        for local, walks in enumerate(pos_walks):
            mi = train_pos_index[local]
            for edges in walks:
                pat = canon_cache.get((mi, edges))
                if pat is None:
                    pat = Pattern.from_graph(all_mols[mi].edge_subgraph(edges))
                    canon_cache[(mi, edges)] = pat
                    present.cache[(pat.canon, mi)] = True
                candidates.setdefault(pat.canon, pat)

        aucs = []
        for pat in candidates.values():
            tpr = np.mean([present(pat, i) for i in eval_pos_idx])
            fpr = np.mean([present(pat, len(pos) + j) for j in eval_neg_idx])
            aucs.append(0.5 + 0.5 * (tpr - fpr))
        aucs = np.sort(np.asarray(aucs))[::-1]
        key = (aucs[0], aucs[:10].mean()) if len(aucs) else (0.0, 0.0)
        if best is None or key > best[0]:
            best = (key, t, candidates)

        # policy update from per-molecule doublet frequencies
        fp = _doublet_counts(train_pos, pos_walks)
        fn = _doublet_counts(train_neg, neg_walks)
        n_p, n_n = max(len(train_pos), 1), max(len(train_neg), 1)
        policy = WalkPolicy(
            {k: (fp.get(k, 0) / n_p + eps) / (fn.get(k, 0) / n_n + eps) for k in set(fp) | set(fn)}
        )

    patterns = []
    for canon in sorted(best[2]):
        pat = best[2][canon]
        sp = np.mean([present(pat, i) for i in range(len(pos))])
        sn = np.mean([present(pat, len(pos) + j) for j in range(len(neg))])
        patterns.append(Pattern(pat.graph, canon, float(sp), float(sn)))
    return patterns


def select_structural_alerts(
    patterns: Sequence[Pattern],
    labels: Sequence[bool],
    min_importance: float = 1e-4,
    max_entropy: float = 0.5,
) -> list[Pattern]:
    """Keep patterns with information gain > ``min_importance`` and support
    entropy < ``max_entropy``. ``labels`` are the training-set class flags the
    supports were measured on."""
    labels = np.asarray(labels, dtype=bool)
    n_pos, n_neg = int(labels.sum()), int((~labels).sum())
    n = n_pos + n_neg
    prior = binary_entropy(n_pos / n) if n else 0.0
    keep = []
    for pat in patterns:
        a_pos, a_neg = pat.supp_pos * n_pos, pat.supp_neg * n_neg  # carriers
        present = a_pos + a_neg
        absent = n - present
        cond = 0.0
        if present > 0:
            cond += present / n * binary_entropy(a_pos / present)
        if absent > 0:
            cond += absent / n * binary_entropy((n_pos - a_pos) / absent)
        gain = prior - cond
        if gain > min_importance and support_entropy(pat.supp_pos, pat.supp_neg) < max_entropy:
            keep.append(pat)
    return keep


# ---------------------------------------------------------------------------
# DiSC construction


def presence_matrix(patterns: Sequence[Pattern], mols: Sequence[MolGraph]) -> np.ndarray:
    """Boolean ``(len(patterns), len(mols))`` embedding-presence table."""
    out = np.zeros((len(patterns), len(mols)), dtype=bool)
    for i, pat in enumerate(patterns):
        for j, mol in enumerate(mols):
            out[i, j] = has_embedding(pat.graph, mol)
    return out


def build_discs(
    patterns: Sequence[Pattern],
    pos: Sequence[MolGraph],
    neg: Sequence[MolGraph],
    d: int = 100,
    k_max: int = 3,
    min_supp: float = 0.02,
    max_entropy: float = 0.5,
    beam: int = 64,
) -> list[DiSC]:
    """Top-``d`` discriminative subgraph combinations.

    Level 1 holds every pattern with positive support >= ``min_supp``.
    Level k+1 extends the best ``beam`` combinations of level k by one of the
    best ``beam`` 1-mers. Joint support can only shrink as members are added,
    so a combination below ``min_supp`` is cut together with its whole
    subtree. Combinations with k >= 2 must also have support entropy below
    ``max_entropy`` and score strictly higher than the combination they
    extend. Ranking is by score, then positive support, then canon.
    """
    if not patterns:
        raise ValueError("no patterns to combine")
    patterns = sorted(patterns, key=lambda p: p.canon)
    pres_pos = presence_matrix(patterns, pos)
    pres_neg = presence_matrix(patterns, neg)

    def supports(idx: tuple[int, ...]) -> tuple[float, float]:
        jp = np.logical_and.reduce(pres_pos[list(idx)], axis=0)
        jn = np.logical_and.reduce(pres_neg[list(idx)], axis=0)
        return float(jp.mean()), float(jn.mean())

    def rank_key(item):
        idx, sc, sp, _ = item
        return (-sc, -sp, "|".join(patterns[i].canon for i in idx))

    level = []
    for i in range(len(patterns)):
        sp, sn = supports((i,))
        if sp >= min_supp:
            level.append(((i,), disc_score(sp, sn), sp, sn))
    level.sort(key=rank_key)
    survivors = list(level)
    seeds = [item[0][0] for item in level[:beam]]
    for _k in range(2, k_max + 1):
        nxt = {}
        for idx, sc, _, _ in level[:beam]:
            for j in seeds:
                if j in idx:
                    continue
                cand = tuple(sorted(idx + (j,)))
                if cand in nxt:
                    continue
                sp, sn = supports(cand)
                if sp < min_supp:
                    continue  # bound: every superset is below min_supp too
                csc = disc_score(sp, sn)
                if support_entropy(sp, sn) >= max_entropy or csc <= sc:
                    continue
                nxt[cand] = (cand, csc, sp, sn)
        level = sorted(nxt.values(), key=rank_key)
        if not level:
            break
        survivors.extend(level)
    survivors.sort(key=rank_key)
    if len(survivors) < d:
        warnings.warn(
            f"only {len(survivors)} DiSCs survived; fingerprint dimension {d} is short",
            ShortDimensionWarning,
            stacklevel=2,
        )
    return [
        DiSC(tuple(patterns[i] for i in idx), sc, sp, sn) for idx, sc, sp, sn in survivors[:d]
    ]


# ---------------------------------------------------------------------------
# fingerprints


def encode_fingerprint(mol: MolGraph, discs: Sequence[DiSC], _counts: dict | None = None) -> np.ndarray:
    """Per-DiSC bottleneck count: min embedding count over the members,
    0 as soon as one member is absent."""
    counts = {} if _counts is None else _counts
    fp = np.zeros(len(discs), dtype=np.int64)
    for j, disc in enumerate(discs):
        value = None
        for member in disc.members:
            c = counts.get(member.canon)
            if c is None:
                c = counts[member.canon] = count_embeddings(member.graph, mol)
            value = c if value is None else min(value, c)
            if value == 0:
                break
        fp[j] = value or 0
    return fp


def fingerprint_matrix(mols: Sequence[MolGraph], discs: Sequence[DiSC]) -> np.ndarray:
    if not mols:
        return np.zeros((0, len(discs)), dtype=np.int64)
    return np.vstack([encode_fingerprint(m, discs, {}) for m in mols])


def filter_candidates(pool: Sequence[MolGraph], patterns: Sequence[Pattern]) -> list[MolGraph]:
    """Molecules carrying at least one pattern, in their original order."""
    return [m for m in pool if any(has_embedding(p.graph, m) for p in patterns)]


# ---------------------------------------------------------------------------
# persistence


def write_discs(path, discs: Sequence[DiSC]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for disc in discs:
            fh.write(f"{disc.score:.17g}\t{disc.supp_pos:.17g}\t{disc.supp_neg:.17g}\t{disc.canon}\n")


def read_discs(path) -> list[DiSC]:
    discs = []
    pattern_cache: dict[str, Pattern] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            try:
                score, sp, sn, canons = line.split("\t")
                members = []
                for canon in canons.split("|"):
                    if canon not in pattern_cache:
                        pattern_cache[canon] = Pattern.from_canonical(canon)
                    members.append(pattern_cache[canon])
                discs.append(DiSC(tuple(members), float(score), float(sp), float(sn)))
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: malformed DiSC line") from exc
    return discs


def write_fingerprints(path, ids: Sequence[str], fps: np.ndarray) -> None:
    fps = np.asarray(fps)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("id\t" + "\t".join(f"f{j}" for j in range(fps.shape[1])) + "\n")
        for cid, row in zip(ids, fps):
            fh.write(cid + "\t" + "\t".join(str(int(v)) for v in row) + "\n")


def read_fingerprints(path) -> tuple[list[str], np.ndarray]:
    ids, rows = [], []
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n").split("\t")
        width = len(header) - 1
        for lineno, line in enumerate(fh, 2):
            parts = line.rstrip("\n").split("\t")
            if len(parts) != width + 1:
                raise ValueError(f"{path}:{lineno}: expected {width} fingerprint columns")
            ids.append(parts[0])
            rows.append([int(v) for v in parts[1:]])
    return ids, np.asarray(rows, dtype=np.int64).reshape(len(ids), width)
