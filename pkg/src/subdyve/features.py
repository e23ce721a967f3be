"""Per-compound input features for the graph model.

Row layout: ``[w, np_score, fingerprint (d, L2-normalized), pca_sim,
hybrid_rank, external (e, optional)]``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy.stats import rankdata

__all__ = [
    "PCAResult",
    "FeatureMatrix",
    "pca_project",
    "median_gamma",
    "rbf_seed_similarity",
    "hybrid_rank",
    "assemble",
    "read_embeddings",
]


@dataclass
class PCAResult:
    projections: np.ndarray  # (n, k)
    variances: np.ndarray  # (k,), non-increasing
    components: np.ndarray  # (d, k), orthonormal columns
    mean: np.ndarray
    degenerate: bool = False

    def reconstruct(self) -> np.ndarray:
        return self.projections @ self.components.T + self.mean


def pca_project(fps, k: int = 16, tol: float = 1e-13, max_iter: int = 2000, seed: int = 0) -> PCAResult:
    """Top-``k`` principal components by orthogonal (subspace) power iteration.

    Uses the sample covariance (n - 1 divisor). A Rayleigh-Ritz step orders
    the converged directions by explained variance.
    """
    X = np.asarray(fps, dtype=np.float64)
    n, d = X.shape
    if n < 2:
        raise ValueError("PCA needs at least two samples")
    if not 1 <= k <= d:
        raise ValueError(f"k must lie in [1, {d}]")
    mean = X.mean(axis=0)
    Xc = X - mean
    if np.abs(Xc).max() == 0:
        return PCAResult(np.zeros((n, k)), np.zeros(k), np.eye(d)[:, :k], mean, degenerate=True)

    def cov(V):
        return Xc.T @ (Xc @ V) / (n - 1)

    rng = np.random.default_rng(seed)
    Q, _ = np.linalg.qr(rng.standard_normal((d, k)))
    prev = None
    for _ in range(max_iter):
        Q, _ = np.linalg.qr(cov(Q))
        ritz = np.linalg.eigvalsh(Q.T @ cov(Q))
        if prev is not None and np.max(np.abs(ritz - prev)) <= tol * max(1.0, ritz.max()):
            break
        prev = ritz
    evals, evecs = np.linalg.eigh(Q.T @ cov(Q))
    order = np.argsort(evals)[::-1]
    comps = Q @ evecs[:, order]
    variances = np.clip(evals[order], 0.0, None)
    return PCAResult(Xc @ comps, variances, comps, mean)


def median_gamma(projected, seed_idx) -> float:
    """``1 / (2 median^2)`` over pairwise seed distances; 1.0 if undefined."""
    Z = np.asarray(projected, dtype=np.float64)[list(seed_idx)]
    if len(Z) < 2:
        return 1.0
    diff = Z[:, None, :] - Z[None, :, :]
    dist = np.sqrt((diff**2).sum(-1))[np.triu_indices(len(Z), 1)]
    med = float(np.median(dist))
    return 1.0 / (2.0 * med * med) if med > 0 else 1.0


def rbf_seed_similarity(projected, seed_idx, gamma: float | None = None, reduce: str = "max") -> np.ndarray:
    """RBF kernel similarity of every node to the seed set (max over seeds by default)."""
    Z = np.asarray(projected, dtype=np.float64)
    seed_idx = sorted(set(int(i) for i in seed_idx))
    if not seed_idx:
        raise ValueError("seed set is empty")
    if gamma is None:
        gamma = median_gamma(Z, seed_idx)
    S = Z[seed_idx]
    d2 = (Z**2).sum(1)[:, None] - 2 * Z @ S.T + (S**2).sum(1)[None, :]
    d2 = np.maximum(d2, 0.0)
    d2[seed_idx, np.arange(len(seed_idx))] = 0.0
    K = np.exp(-gamma * d2)
    if reduce == "max":
        return K.max(axis=1)
    if reduce == "mean":
        return K.mean(axis=1)
    raise ValueError(f"unknown reduction {reduce!r}")


def hybrid_rank(np_scores, pca_sims) -> np.ndarray:
    """Mean of the two descending ranks (1 = best, ties share the mean rank)."""
    a = np.asarray(np_scores, dtype=np.float64)
    b = np.asarray(pca_sims, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("score vectors differ in length")
    return (rankdata(-a) + rankdata(-b)) / 2.0


@dataclass
class FeatureMatrix:
    values: np.ndarray
    fp_dim: int
    ext_dim: int = 0
    n_missing_external: int = 0

    W_COL, NP_COL = 0, 1

    @property
    def pca_col(self) -> int:
        return 2 + self.fp_dim

    @property
    def hybrid_col(self) -> int:
        return 3 + self.fp_dim

    @property
    def width(self) -> int:
        return self.values.shape[1]

    def with_seed_columns(self, w, np_scores) -> "FeatureMatrix":
        """Copy with refreshed weight, propagation-score and hybrid-rank columns."""
        vals = self.values.copy()
        vals[:, self.W_COL] = w
        vals[:, self.NP_COL] = np_scores
        vals[:, self.hybrid_col] = hybrid_rank(np_scores, vals[:, self.pca_col])
        return FeatureMatrix(vals, self.fp_dim, self.ext_dim, self.n_missing_external)

    def standardized(self) -> np.ndarray:
        """Column z-scores (constant columns become 0) for model input."""
        mu = self.values.mean(axis=0)
        sd = self.values.std(axis=0)
        return np.divide(self.values - mu, sd, out=np.zeros_like(self.values), where=sd > 1e-12)


def assemble(
    w,
    np_scores,
    fps,
    pca_sims,
    hybrid,
    external: Mapping[str, np.ndarray] | None = None,
    ids: Sequence[str] | None = None,
    ext_dim: int | None = None,
) -> FeatureMatrix:
    """Concatenate the feature blocks; rows missing from ``external`` are zero-filled."""
    F = np.asarray(fps, dtype=np.float64)
    n = F.shape[0]
    cols = [np.asarray(w, dtype=np.float64), np.asarray(np_scores, dtype=np.float64)]
    if any(c.shape != (n,) for c in cols + [np.asarray(pca_sims), np.asarray(hybrid)]):
        raise ValueError("feature blocks disagree on the number of nodes")
    norms = np.linalg.norm(F, axis=1, keepdims=True)
    Fn = np.divide(F, norms, out=np.zeros_like(F), where=norms > 0)
    blocks = [cols[0][:, None], cols[1][:, None], Fn, np.asarray(pca_sims, float)[:, None], np.asarray(hybrid, float)[:, None]]
    missing = 0
    e = 0
    if external is not None:
        if ids is None:
            raise ValueError("external embeddings need compound ids")
        widths = {len(np.atleast_1d(v)) for v in external.values()}
        if ext_dim is None:
            if len(widths) != 1:
                raise ValueError("external embeddings have inconsistent widths")
            ext_dim = widths.pop()
        elif widths and widths != {ext_dim}:
            raise ValueError(f"external embedding width {sorted(widths)} != declared {ext_dim}")
        e = ext_dim
        E = np.zeros((n, e))
        for i, cid in enumerate(ids):
            row = external.get(cid)
            if row is None:
                missing += 1
            else:
                E[i] = row
        blocks.append(E)
    return FeatureMatrix(np.hstack(blocks), F.shape[1], e, missing)


def read_embeddings(path) -> tuple[dict[str, np.ndarray], int]:
    """Read ``compound_id`` + e real columns with a header row."""
    table = {}
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n").split("\t")
        width = len(header) - 1
        for lineno, line in enumerate(fh, 2):
            parts = line.rstrip("\n").split("\t")
            if not line.strip():
                continue
            if len(parts) != width + 1:
                raise ValueError(f"{path}:{lineno}: expected {width} embedding columns")
            table[parts[0]] = np.array([float(x) for x in parts[1:]])
    return table, width
