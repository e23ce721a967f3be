"""Early-recognition and calibration metrics for ranked screening lists."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

__all__ = [
    "DegenerateMetricError",
    "RankedList",
    "ranked_list",
    "bedroc",
    "enrichment_factor",
    "auroc",
    "ece",
    "bootstrap",
]


class DegenerateMetricError(ValueError):
    """The ranked list has no actives, or only actives."""


@dataclass
class RankedList:
    """Compounds in rank order (index 0 is rank 1) with their activity flags.

    ``scores`` is optional and only used by :func:`auroc` for midranks.
    """

    ids: list[str]
    active: np.ndarray
    scores: np.ndarray | None = None

    def __post_init__(self):
        self.active = np.asarray(self.active, dtype=bool)
        if len(self.ids) != len(self.active):
            raise ValueError("ids and active flags differ in length")

    @property
    def N(self) -> int:
        return len(self.active)

    @property
    def n(self) -> int:
        return int(self.active.sum())

    def active_ranks(self) -> np.ndarray:
        return np.flatnonzero(self.active) + 1

    def _check(self) -> None:
        if self.n == 0 or self.n == self.N:
            raise DegenerateMetricError(f"need 0 < n < N actives, got n={self.n}, N={self.N}")


def ranked_list(ids: Sequence[str], scores, actives) -> RankedList:
    """Rank by descending score; ties broken by compound id."""
    ids = list(ids)
    scores = np.asarray(scores, dtype=np.float64)
    active_set = set(actives)
    order = sorted(range(len(ids)), key=lambda i: (-scores[i], ids[i]))
    return RankedList(
        [ids[i] for i in order],
        np.array([ids[i] in active_set for i in order], dtype=bool),
        scores[order],
    )


def bedroc(rl: RankedList, alpha: float = 20.0) -> float:
    """BEDROC of Truchon & Bayly with ``R_a = n / N``."""
    rl._check()
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    N, n = rl.N, rl.n
    ra = n / N
    r = rl.active_ranks()
    s = np.exp(-alpha * r / N).sum()
    rie = s / (ra * (1 - math.exp(-alpha)) / math.expm1(alpha / N))
    scale = ra * math.sinh(alpha / 2) / (math.cosh(alpha / 2) - math.cosh(alpha / 2 - alpha * ra))
    value = rie * scale + 1.0 / (1.0 - math.exp(alpha * (1 - ra)))
    return float(min(1.0, max(0.0, value)))  # roundoff only


def enrichment_factor(rl: RankedList, pct: float = 1.0) -> float:
    """Active rate among the top ``floor(pct * N / 100)`` over the global rate."""
    N, n = rl.N, rl.n
    top = int(math.floor(pct * N / 100.0 + 1e-9))
    if top < 1:
        raise DegenerateMetricError(f"top {pct}% of {N} compounds is empty")
    if n == 0:
        raise DegenerateMetricError("no actives in the list")
    hits = int(rl.active[:top].sum())
    return (hits / top) / (n / N)


def auroc(rl: RankedList) -> float:
    """Mann-Whitney AUROC; tied scores get midranks when scores are known."""
    rl._check()
    N, n = rl.N, rl.n
    if rl.scores is not None:
        ranks = rankdata(rl.scores)  # ascending, 1 = lowest score
    else:
        ranks = np.arange(N, 0, -1, dtype=np.float64)
    u = ranks[rl.active].sum() - n * (n + 1) / 2.0
    return float(u / (n * (N - n)))


def ece(confidences, outcomes, bins: int = 10) -> float:
    """Expected calibration error over equal-width confidence bins."""
    conf = np.asarray(confidences, dtype=np.float64)
    out = np.asarray(outcomes, dtype=np.float64)
    if conf.size == 0:
        raise ValueError("empty input")
    if conf.shape != out.shape:
        raise ValueError("confidences and outcomes differ in length")
    idx = np.minimum((conf * bins).astype(int), bins - 1)
    total = 0.0
    for b in range(bins):
        m = idx == b
        if m.any():
            total += m.sum() * abs(conf[m].mean() - out[m].mean())
    return float(total / conf.size)


def bootstrap(rl: RankedList, metric, n_resamples: int = 100, seed: int = 0) -> tuple[float, float]:
    """Mean and standard deviation of ``metric`` over resampled ranked lists.

    Compounds are drawn with replacement and keep their relative order;
    resamples without both classes are skipped.
    """
    rng = np.random.default_rng(seed)
    values = []
    for _ in range(n_resamples):
        pick = np.sort(rng.integers(0, rl.N, rl.N))
        sub = RankedList(
            [rl.ids[i] for i in pick],
            rl.active[pick],
            None if rl.scores is None else rl.scores[pick],
        )
        try:
            values.append(metric(sub))
        except DegenerateMetricError:
            continue
    if not values:
        raise DegenerateMetricError("every bootstrap resample was degenerate")
    return float(np.mean(values)), float(np.std(values))
