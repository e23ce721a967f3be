"""Cosine-similarity compound network over subgraph-pattern fingerprints."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.sparse as sp

__all__ = [
    "SimilarityGraph",
    "cosine",
    "build_graph",
    "column_normalize",
    "write_graph",
    "read_graph",
]


@dataclass
class SimilarityGraph:
    """Undirected weighted graph; each edge is stored once with ``i < j``."""

    node_ids: list[str]
    src: np.ndarray
    dst: np.ndarray
    weight: np.ndarray

    def __post_init__(self):
        self.src = np.asarray(self.src, dtype=np.int64)
        self.dst = np.asarray(self.dst, dtype=np.int64)
        self.weight = np.asarray(self.weight, dtype=np.float64)
        if np.any(self.src == self.dst):
            raise ValueError("self-loops are not allowed")

    @property
    def n_nodes(self) -> int:
        return len(self.node_ids)

    @property
    def n_edges(self) -> int:
        return len(self.src)

    def edges(self) -> list[tuple[int, int, float]]:
        return list(zip(self.src.tolist(), self.dst.tolist(), self.weight.tolist()))

    def adjacency(self) -> sp.csr_matrix:
        """Symmetric weighted adjacency matrix."""
        n = self.n_nodes
        rows = np.concatenate([self.src, self.dst])
        cols = np.concatenate([self.dst, self.src])
        vals = np.concatenate([self.weight, self.weight])
        return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))

    def subgraph(self, keep: Sequence[int]) -> "SimilarityGraph":
        keep = np.asarray(keep, dtype=np.int64)
        new_index = -np.ones(self.n_nodes, dtype=np.int64)
        new_index[keep] = np.arange(len(keep))
        mask = (new_index[self.src] >= 0) & (new_index[self.dst] >= 0)
        a, b = new_index[self.src[mask]], new_index[self.dst[mask]]
        return SimilarityGraph(
            [self.node_ids[i] for i in keep], np.minimum(a, b), np.maximum(a, b), self.weight[mask]
        )


def cosine(a, b) -> float:
    """Cosine similarity of two non-negative vectors; 0 if either is all-zero."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.shape} vs {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return 0.0
    return float(min(1.0, max(0.0, a @ b / (na * nb))))


def build_graph(
    fps,
    k: int = 10,
    sim_min: float = 0.0,
    ids: Sequence[str] | None = None,
    block_size: int = 1024,
) -> SimilarityGraph:
    """Symmetrized kNN graph on cosine similarity.

    Each node keeps up to ``k`` neighbors with similarity >= ``sim_min``
    (ties: higher similarity, then lower index); zero similarity never makes
    an edge. ``k=0`` keeps every pair above ``sim_min``. The final edge set
    is the union over nodes.
    """
    X = np.asarray(fps, dtype=np.float64)
    n = X.shape[0]
    if k < 1 and sim_min <= 0:
        raise ValueError("need k >= 1 or sim_min > 0")
    ids = [str(i) for i in range(n)] if ids is None else list(ids)
    norms = np.linalg.norm(X, axis=1)
    Xn = np.divide(X, norms[:, None], out=np.zeros_like(X), where=norms[:, None] > 0)

    pairs: set[tuple[int, int]] = set()
    weights: dict[tuple[int, int], float] = {}
    for lo in range(0, n, block_size):
        hi = min(n, lo + block_size)
        S = np.clip(Xn[lo:hi] @ Xn.T, 0.0, 1.0)
        for r in range(hi - lo):
            i = lo + r
            row = S[r]
            ok = (row > 0) & (row >= sim_min)
            ok[i] = False
            cand = np.flatnonzero(ok)
            if k >= 1 and len(cand) > k:
                order = np.lexsort((cand, -row[cand]))
                cand = cand[order[:k]]
            for j in cand.tolist():
                key = (i, j) if i < j else (j, i)
                if key not in pairs:
                    pairs.add(key)
                    weights[key] = float(row[j])
    keys = sorted(pairs)
    src = np.array([a for a, _ in keys], dtype=np.int64)
    dst = np.array([b for _, b in keys], dtype=np.int64)
    w = np.array([weights[key] for key in keys], dtype=np.float64)
    return SimilarityGraph(ids, src, dst, w)


def column_normalize(g: SimilarityGraph) -> sp.csc_matrix:
    """Adjacency divided by its column sums; isolated nodes get zero columns."""
    A = g.adjacency().tocsc()
    colsum = np.asarray(A.sum(axis=0)).ravel()
    inv = np.divide(1.0, colsum, out=np.zeros_like(colsum), where=colsum > 0)
    return (A @ sp.diags(inv)).tocsc()


def write_graph(edge_path, node_path, g: SimilarityGraph) -> None:
    with open(edge_path, "w", encoding="utf-8") as fh:
        fh.write(f"#nodes={g.n_nodes}\n")
        for i, j, w in g.edges():
            fh.write(f"{i}\t{j}\t{w:.17g}\n")
    with open(node_path, "w", encoding="utf-8") as fh:
        for idx, cid in enumerate(g.node_ids):
            fh.write(f"{idx}\t{cid}\n")


def read_graph(edge_path, node_path) -> SimilarityGraph:
    ids = {}
    with open(node_path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                idx, cid = line.rstrip("\n").split("\t")
                ids[int(idx)] = cid
    with open(edge_path, encoding="utf-8") as fh:
        header = fh.readline().strip()
        if not header.startswith("#nodes="):
            raise ValueError(f"{edge_path}: missing '#nodes=<n>' header")
        n = int(header.split("=", 1)[1])
        rows = [line.rstrip("\n").split("\t") for line in fh if line.strip()]
    if sorted(ids) != list(range(n)):
        raise ValueError(f"{node_path}: node map does not cover 0..{n - 1}")
    src = np.array([int(r[0]) for r in rows], dtype=np.int64)
    dst = np.array([int(r[1]) for r in rows], dtype=np.int64)
    w = np.array([float(r[2]) for r in rows], dtype=np.float64)
    if len(src) and (src.max() >= n or dst.max() >= n or src.min() < 0 or dst.min() < 0):
        raise ValueError(f"{edge_path}: edge endpoint out of range")
    lo, hi = np.minimum(src, dst), np.maximum(src, dst)
    return SimilarityGraph([ids[i] for i in range(n)], lo, hi, w)
