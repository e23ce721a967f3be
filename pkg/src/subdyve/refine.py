"""Dynamic seed refinement.

Each stratified split holds out a few known actives (``s2``) and iterates:
train the graph model to recover them, turn its logits into local false
discovery rates, grow or prune the augmented seed set, re-propagate and
score the held-out actives. The best weights of every split are max-pooled
and propagated once more for the final ranking.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from . import gnn, lfdr
from .features import FeatureMatrix, assemble, hybrid_rank, pca_project, rbf_seed_similarity
from .metrics import RankedList, bedroc
from .propagate import propagate, rank_order
from .simnet import SimilarityGraph, column_normalize

__all__ = [
    "SeedState",
    "RefineConfig",
    "IterationOutcome",
    "RefinementResult",
    "SubDyveResult",
    "InvariantError",
    "stratified_split",
    "initial_state",
    "check_invariants",
    "lfdr_seed_update",
    "Context",
    "refinement_iteration",
    "early_stopping",
    "run_split",
    "max_pool",
    "ensemble_and_rank",
    "run_subdyve",
    "heldout_scores",
    "write_trace",
]


class InvariantError(AssertionError):
    """A seed-state invariant was violated."""


@dataclass
class SeedState:
    s1: frozenset[int]
    s2: frozenset[int]
    s_aug: frozenset[int]
    w: np.ndarray

    def copy(self) -> "SeedState":
        return replace(self, w=self.w.copy())


@dataclass
class RefineConfig:
    max_iter: int = 6
    patience: int = 3
    n_splits: int = 2
    holdout_frac: float = 0.1
    tau_fdr: float = 0.1
    beta: float = 0.7
    baseline: float | None = None  # None: use pi0
    sigmoid_arg: str = "logit"  # or "z"
    one_sided: bool = True  # only nodes with z > 0 can enter
    mask_train_seeds: bool = True  # s1 is neither target nor negative in the loss
    include_initial: bool = True  # the initial propagation competes as iteration 0
    alpha: float = 0.2
    tol: float = 1e-9
    epochs: int = 50
    pca_k: int = 16
    lfdr_bins: int = 50
    lfdr_degree: int = 7
    lfdr_ridge: float = 1e-4
    pi0: float = 0.9
    ef_pct: float = 1.0
    bedroc_alpha: float = 20.0
    loss: gnn.LossWeights = field(default_factory=gnn.LossWeights)

    def __post_init__(self):
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        if self.patience < 1:
            raise ValueError("patience must be at least 1")
        if self.n_splits < 1:
            raise ValueError("n_splits must be at least 1")
        if self.sigmoid_arg not in ("logit", "z"):
            raise ValueError("sigmoid_arg must be 'logit' or 'z'")


def stratified_split(s_train: Sequence[int], holdout_frac: float = 0.1, seed: int = 0) -> tuple[frozenset[int], frozenset[int]]:
    """Hold out ``max(1, round(frac * n))`` seeds, keeping at least one in ``s1``."""
    items = sorted(set(int(i) for i in s_train))
    if len(items) < 2:
        raise ValueError("need at least two training seeds to split")
    if not 0 < holdout_frac < 1:
        raise ValueError("holdout_frac must lie in (0, 1)")
    n2 = min(len(items) - 1, max(1, int(round(holdout_frac * len(items)))))
    perm = np.random.default_rng([seed, 0x5B]).permutation(len(items))
    s2 = frozenset(items[i] for i in perm[:n2])
    return frozenset(items) - s2, s2


def initial_state(n_nodes: int, s1, s2) -> SeedState:
    w = np.zeros(n_nodes)
    w[sorted(s1)] = 1.0
    return SeedState(frozenset(s1), frozenset(s2), frozenset(s1), w)


def check_invariants(state: SeedState) -> None:
    if state.s1 & state.s2:
        raise InvariantError("s1 and s2 overlap")
    if not state.s1 <= state.s_aug:
        raise InvariantError("s1 is not contained in s_aug")
    if not np.all(np.isfinite(state.w)) or np.any(state.w < 0):
        raise InvariantError("weights must be finite and non-negative")
    outside = np.ones(len(state.w), dtype=bool)
    outside[sorted(state.s_aug)] = False
    if np.any(state.w[outside] != 0):
        raise InvariantError("nodes outside s_aug carry weight")


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def lfdr_seed_update(
    logits,
    model: lfdr.LfdrModel,
    state: SeedState,
    tau_fdr: float = 0.1,
    beta: float = 0.7,
    baseline: float | None = None,
    sigmoid_arg: str = "logit",
    one_sided: bool = True,
) -> SeedState:
    """Add confident nodes, drop unconfident augmented ones, nudge the rest.

    * ``i`` not in ``s_aug`` and lfdr < tau: enters with weight 1.
    * ``i`` in ``s_aug - s1`` and lfdr > tau: removed, weight 0.
    * otherwise, for ``i`` in ``s_aug``: ``w += beta (sigmoid(.) - b)``, floored at 0.

    Held-out actives never enter. With ``one_sided`` only nodes scored above
    the mean (z > 0) may enter, since the lower tail is not evidence of
    activity.
    """
    logits = np.asarray(logits, dtype=np.float64)
    z, _, _ = lfdr.zscore(logits)
    q = model.lfdr(z)
    b = model.pi0 if baseline is None else baseline
    arg = logits if sigmoid_arg == "logit" else z
    sig = _sigmoid(arg)
    w = state.w.copy()
    aug = set(state.s_aug)
    for i in range(len(logits)):
        if i not in state.s_aug:
            if q[i] < tau_fdr and i not in state.s2 and (z[i] > 0 or not one_sided):
                aug.add(i)
                w[i] = 1.0
        elif i not in state.s1 and q[i] > tau_fdr:
            aug.discard(i)
            w[i] = 0.0
        else:
            w[i] = max(0.0, w[i] + beta * (sig[i] - b))
    return SeedState(state.s1, state.s2, frozenset(aug), w)


@dataclass
class Context:
    """Per-screen quantities that do not change across iterations."""

    graph: SimilarityGraph
    fps: np.ndarray
    W_N: object
    A_hat: object
    pca: np.ndarray
    external: dict | None = None
    ext_ids: list[str] | None = None

    @classmethod
    def build(cls, graph: SimilarityGraph, fps, pca_k: int = 16, external=None) -> "Context":
        fps = np.asarray(fps, dtype=np.float64)
        k = min(pca_k, fps.shape[1])
        proj = pca_project(fps, k).projections
        return cls(graph, fps, column_normalize(graph), gnn.normalized_adjacency(graph), proj, external, list(graph.node_ids))

    @property
    def n(self) -> int:
        return self.graph.n_nodes

    def features(self, state: SeedState, np_scores) -> FeatureMatrix:
        pca_sim = rbf_seed_similarity(self.pca, sorted(state.s_aug))
        return assemble(
            state.w,
            np_scores,
            self.fps,
            pca_sim,
            hybrid_rank(np_scores, pca_sim),
            self.external,
            self.ext_ids if self.external is not None else None,
        )


def heldout_scores(scores, state: SeedState, ef_pct: float = 1.0, bedroc_alpha: float = 20.0) -> tuple[float, float]:
    """EF and BEDROC of the held-out actives among non-seed nodes.

    The EF bucket is ``max(1, floor(pct * N / 100))`` so that small screens
    still get a score.
    """
    exclude = state.s1 | state.s_aug
    order = rank_order(scores, sorted(exclude))
    active = np.array([i in state.s2 for i in order], dtype=bool)
    N, n = len(order), int(active.sum())
    if n == 0:
        raise ValueError("no held-out actives in the ranked list")
    top = max(1, int(math.floor(ef_pct * N / 100.0 + 1e-9)))
    ef = (active[:top].sum() / top) / (n / N)
    bd = bedroc(RankedList([str(i) for i in order], active), bedroc_alpha) if n < N else 1.0
    return float(ef), float(bd)


@dataclass
class IterationOutcome:
    state: SeedState
    ef: float
    bedroc: float
    params: dict
    np_scores: np.ndarray
    lfdr_model: lfdr.LfdrModel


def _np_weights(np_scores):
    m = float(np.max(np_scores))
    return np_scores / m if m > 0 else np.zeros_like(np_scores)


def refinement_iteration(
    state: SeedState, ctx: Context, params, cfg: RefineConfig, np_initial=None
) -> IterationOutcome:
    """Train, fit lfdr, update seeds, re-propagate and score ``s2``.

    BCE node weights use ``np_initial`` (the split's first propagation);
    by default the current propagation.
    """
    np_scores = propagate(ctx.W_N, state.w, cfg.alpha, cfg.tol)
    if np_initial is None:
        np_initial = np_scores
    X = ctx.features(state, np_scores).standardized()
    labels = np.zeros(ctx.n, dtype=bool)
    labels[sorted(state.s2)] = True
    include = np.ones(ctx.n, dtype=bool)
    if cfg.mask_train_seeds:
        include[sorted(state.s1)] = False
    with _quiet_singleton():
        res = gnn.train(params, X, ctx.A_hat, labels, _np_weights(np_initial), ctx.fps, cfg.loss, cfg.epochs, include)
    z, _, _ = lfdr.zscore(res.logits)
    model = lfdr.fit(z, cfg.lfdr_bins, cfg.lfdr_degree, cfg.lfdr_ridge, cfg.pi0)
    new = lfdr_seed_update(
        res.logits, model, state, cfg.tau_fdr, cfg.beta, cfg.baseline, cfg.sigmoid_arg, cfg.one_sided
    )
    check_invariants(new)
    scores = propagate(ctx.W_N, new.w, cfg.alpha, cfg.tol)
    ef, bd = heldout_scores(scores, new, cfg.ef_pct, cfg.bedroc_alpha)
    return IterationOutcome(new, ef, bd, res.params, scores, model)


class _quiet_singleton:
    def __enter__(self):
        import warnings

        self._cm = warnings.catch_warnings()
        self._cm.__enter__()
        warnings.simplefilter("ignore", gnn.SingletonContrastWarning)

    def __exit__(self, *exc):
        return self._cm.__exit__(*exc)


@dataclass
class RefinementResult:
    best_weights: np.ndarray
    best_ef: float
    best_bedroc: float
    best_iteration: int
    iterations_run: int
    stop_reason: str  # "max_iter" or "early_stop"
    trace: list[dict] = field(default_factory=list)
    best_state: SeedState | None = None


def early_stopping(
    step: Callable[[int], tuple[float, float]],
    max_iter: int,
    patience: int,
    baseline: tuple[float, float] | None = None,
) -> tuple[int, int, str]:
    """Run ``step(it)`` for it = 1..max_iter and return ``(best_it, run, reason)``.

    ``step`` returns ``(ef, bedroc)``. An iteration is better when its EF is
    higher, or equal with a higher BEDROC. Stops after ``patience``
    iterations without improvement. A ``baseline`` score competes as
    iteration 0, so ``best_it`` can be 0.
    """
    best_key, best_it, stale = baseline, 0, 0
    for it in range(1, max_iter + 1):
        key = step(it)
        if best_key is None or key > best_key:
            best_key, best_it, stale = key, it, 0
        else:
            stale += 1
            if stale >= patience and it < max_iter:
                return best_it, it, "early_stop"
    return best_it, max_iter, "max_iter"


def run_split(state0: SeedState, ctx: Context, cfg: RefineConfig, seed: int = 0) -> RefinementResult:
    """Refine one split from fresh model parameters (warm-started across iterations)."""
    check_invariants(state0)
    in_dim = ctx.features(state0, np.zeros(ctx.n)).width
    params = gnn.init_params(in_dim, seed)
    state = state0
    outcomes: list[IterationOutcome] = []

    np_initial = propagate(ctx.W_N, state0.w, cfg.alpha, cfg.tol)

    def step(it):
        nonlocal state, params
        out = refinement_iteration(state, ctx, params, cfg, np_initial)
        state, params = out.state, out.params
        outcomes.append(out)
        return (out.ef, out.bedroc)

    baseline = None
    if cfg.include_initial:
        baseline = heldout_scores(np_initial, state0, cfg.ef_pct, cfg.bedroc_alpha)
    best_it, ran, reason = early_stopping(step, cfg.max_iter, cfg.patience, baseline)
    trace = [
        {
            "iteration": i,
            "n_aug": len(o.state.s_aug),
            "ef": o.ef,
            "bedroc": o.bedroc,
            "stop": int(i == ran and reason == "early_stop"),
        }
        for i, o in enumerate(outcomes, 1)
    ]
    if best_it == 0:
        ef0, bd0 = baseline
        return RefinementResult(state0.w.copy(), ef0, bd0, 0, ran, reason, trace, state0)
    best = outcomes[best_it - 1]
    return RefinementResult(best.state.w.copy(), best.ef, best.bedroc, best_it, ran, reason, trace, best.state)


def max_pool(weight_vectors: Sequence[np.ndarray]) -> np.ndarray:
    if not weight_vectors:
        raise ValueError("need at least one weight vector")
    shapes = {np.shape(w) for w in weight_vectors}
    if len(shapes) != 1:
        raise ValueError("weight vectors cover different node sets")
    return np.max(np.vstack(weight_vectors), axis=0)


def ensemble_and_rank(results: Sequence[RefinementResult], W_N, alpha: float = 0.2, tol: float = 1e-9, exclude=()):
    """Element-wise max of the per-split best weights, then one propagation.

    Returns ``(pooled_weights, scores, order)``.
    """
    w = max_pool([r.best_weights for r in results])
    scores = propagate(W_N, w, alpha, tol)
    return w, scores, rank_order(scores, exclude)


@dataclass
class SubDyveResult:
    weights: np.ndarray
    scores: np.ndarray
    order: np.ndarray
    splits: list[RefinementResult]


def run_subdyve(
    graph: SimilarityGraph,
    fps,
    train_seeds: Sequence[int],
    cfg: RefineConfig | None = None,
    seed: int = 0,
    external=None,
    ctx: Context | None = None,
) -> SubDyveResult:
    """Full refinement over ``cfg.n_splits`` stratified splits of ``train_seeds``.

    Training seeds are excluded from the returned order.
    """
    cfg = cfg or RefineConfig()
    ctx = ctx or Context.build(graph, fps, cfg.pca_k, external)
    results = []
    for k in range(cfg.n_splits):
        s1, s2 = stratified_split(train_seeds, cfg.holdout_frac, seed=seed * 1000 + k)
        results.append(run_split(initial_state(ctx.n, s1, s2), ctx, cfg, seed=seed * 1000 + k))
    w, scores, order = ensemble_and_rank(results, ctx.W_N, cfg.alpha, cfg.tol, sorted(set(train_seeds)))
    return SubDyveResult(w, scores, order, results)


def write_trace(path, results: Sequence[RefinementResult]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("split\titeration\tn_aug\tef\tbedroc\tstop\n")
        for k, r in enumerate(results):
            for row in r.trace:
                fh.write(
                    f"{k}\t{row['iteration']}\t{row['n_aug']}\t{row['ef']:.17g}\t{row['bedroc']:.17g}\t{row['stop']}\n"
                )
