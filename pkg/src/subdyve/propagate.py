"""Random walk with restart over a column-normalized network."""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

__all__ = [
    "NonConvergenceError",
    "propagate",
    "propagate_exact",
    "rank_order",
    "write_scores",
]


class NonConvergenceError(RuntimeError):
    def __init__(self, residual: float, iterations: int):
        super().__init__(f"propagation did not converge after {iterations} iterations (residual {residual:.3e})")
        self.residual = residual
        self.iterations = iterations


def propagate(W_N, p0, alpha: float = 0.2, tol: float = 1e-9, max_iter: int = 1000, residuals=None) -> np.ndarray:
    """Iterate ``P <- (1 - alpha) W_N P + alpha p0`` from ``P = p0``.

    Stops once the L1 change drops below ``tol``. The seed vector is used as
    given, without renormalization. Pass a list as ``residuals`` to collect
    the L1 change of every step.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    if not 0 <= alpha <= 1:
        raise ValueError("alpha must lie in [0, 1]")
    p0 = np.asarray(p0, dtype=np.float64)
    if not np.all(np.isfinite(p0)) or np.any(p0 < 0):
        raise ValueError("seed vector must be finite and non-negative")
    p = p0.copy()
    restart = alpha * p0
    res = np.inf
    for it in range(1, max_iter + 1):
        nxt = (1.0 - alpha) * (W_N @ p) + restart
        res = float(np.abs(nxt - p).sum())
        if residuals is not None:
            residuals.append(res)
        p = nxt
        if res < tol:
            return p
    raise NonConvergenceError(res, max_iter)


def propagate_exact(W_N, p0, alpha: float = 0.2) -> np.ndarray:
    """Stationary point ``alpha (I - (1 - alpha) W_N)^-1 p0`` by dense solve."""
    W = W_N.toarray() if sp.issparse(W_N) else np.asarray(W_N, dtype=np.float64)
    n = W.shape[0]
    if n > 200:
        raise ValueError("dense solve is limited to n <= 200")
    M = np.eye(n) - (1.0 - alpha) * W
    try:
        return alpha * np.linalg.solve(M, np.asarray(p0, dtype=np.float64))
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("singular propagation system (alpha = 0?)") from exc


def rank_order(scores, exclude=()) -> np.ndarray:
    """Node indices by descending score, ties by ascending index."""
    scores = np.asarray(scores, dtype=np.float64)
    idx = np.arange(len(scores))
    if len(exclude):
        keep = np.ones(len(scores), dtype=bool)
        keep[list(exclude)] = False
        idx = idx[keep]
    return idx[np.lexsort((idx, -scores[idx]))]


def write_scores(path, ids, scores, exclude=()) -> None:
    """Write ``compound_id  score  rank`` for every ranked node."""
    order = rank_order(scores, exclude)
    with open(path, "w", encoding="utf-8") as fh:
        for r, i in enumerate(order, 1):
            fh.write(f"{ids[i]}\t{float(scores[i]):.17g}\t{r}\n")
