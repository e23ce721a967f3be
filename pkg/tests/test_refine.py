import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from subdyve import lfdr
from subdyve.gnn import init_params
from subdyve.propagate import propagate
from subdyve.refine import (
    Context,
    InvariantError,
    RefineConfig,
    RefinementResult,
    SeedState,
    check_invariants,
    early_stopping,
    ensemble_and_rank,
    heldout_scores,
    initial_state,
    lfdr_seed_update,
    max_pool,
    refinement_iteration,
    run_split,
    run_subdyve,
    stratified_split,
    write_trace,
)
from subdyve.simnet import column_normalize
from subdyve.synth import gen_block_fingerprints, gen_planted_partition


def test_stratified_split_sizes():
    s1, s2 = stratified_split(range(10), 0.1, seed=0)
    assert len(s2) == 1 and len(s1) == 9
    s1, s2 = stratified_split(range(4), 0.5, seed=0)
    assert len(s1) == len(s2) == 2
    assert stratified_split(range(10), 0.3, 5) == stratified_split(range(10), 0.3, 5)
    with pytest.raises(ValueError):
        stratified_split([1], 0.1)


@given(st.integers(2, 40), st.floats(0.01, 0.99), st.integers(0, 1000))
def test_stratified_split_partition(n, frac, seed):
    s1, s2 = stratified_split(range(n), frac, seed)
    assert not s1 & s2 and s1 | s2 == frozenset(range(n)) and s1 and s2


class _FixedModel:
    """Stands in for a fitted lfdr model with prescribed per-node values."""

    def __init__(self, q, pi0=0.9):
        self.q = np.asarray(q, dtype=float)
        self.pi0 = pi0

    def lfdr(self, z):
        return self.q


def _state(w, s1, s_aug, s2=()):
    return SeedState(frozenset(s1), frozenset(s2), frozenset(s_aug), np.asarray(w, dtype=float))


def test_update_rules():
    # node 0: s1 with lfdr 0.99 (kept); node 1: augmented, lfdr 0.5 (removed);
    # node 2: fresh, lfdr 0.05 (added); node 3: fresh, lfdr 0.5 (ignored)
    logits = np.array([0.0, -1.0, 3.0, -2.0])
    st_ = _state([1.0, 1.0, 0.0, 0.0], s1=[0], s_aug=[0, 1])
    new = lfdr_seed_update(logits, _FixedModel([0.99, 0.5, 0.05, 0.5]), st_, 0.1, 0.7, baseline=0.5)
    assert new.s_aug == frozenset({0, 2})
    assert new.w[1] == 0.0 and new.w[2] == 1.0 and new.w[3] == 0.0
    assert new.w[0] == pytest.approx(1.0)  # sigmoid(0) - 0.5 = 0
    check_invariants(new)


def test_retained_seed_increment():
    st_ = _state([1.0, 0.0], s1=[0], s_aug=[0])
    new = lfdr_seed_update(np.array([60.0, -60.0]), _FixedModel([0.5, 0.5]), st_, 0.1, 0.7, baseline=0.9)
    assert new.w[0] == pytest.approx(1.07)
    same = lfdr_seed_update(np.array([0.0, 1.0]), _FixedModel([0.5, 0.5]), st_, 0.1, 0.7, baseline=0.5)
    assert same.w[0] == 1.0


def test_weights_clamped_at_zero():
    st_ = _state([0.1, 0.0], s1=[0], s_aug=[0])
    new = lfdr_seed_update(np.array([-40.0, 0.0]), _FixedModel([0.9, 0.9]), st_, beta=0.7)
    assert new.w[0] == 0.0 and 0 in new.s_aug


def test_threshold_zero_never_grows_and_heldout_never_enters():
    st_ = _state([1.0, 0.0, 0.0], s1=[0], s_aug=[0], s2=[1])
    q = [0.0, 0.0, 0.0]
    assert lfdr_seed_update(np.array([0.0, 2.0, 1.0]), _FixedModel(q), st_, tau_fdr=0.0).s_aug == {0}
    grown = lfdr_seed_update(np.array([0.0, 2.0, 3.0]), _FixedModel(q), st_, tau_fdr=0.1)
    assert grown.s_aug == {0, 2}


def test_one_sided_entry():
    st_ = _state([1.0, 0.0, 0.0], s1=[0], s_aug=[0])
    q = _FixedModel([0.5, 0.01, 0.01])
    logits = np.array([0.0, 5.0, -5.0])
    assert lfdr_seed_update(logits, q, st_).s_aug == {0, 1}
    assert lfdr_seed_update(logits, q, st_, one_sided=False).s_aug == {0, 1, 2}


def test_beta_zero_freezes_retained_weights():
    st_ = _state([1.0, 0.7, 0.0], s1=[0], s_aug=[0, 1])
    new = lfdr_seed_update(np.array([5.0, -3.0, 0.0]), _FixedModel([0.5, 0.05, 0.5]), st_, beta=0.0)
    assert new.w.tolist() == [1.0, 0.7, 0.0]


def test_sigmoid_on_z_switch():
    logits = np.array([10.0, 0.0])
    st_ = _state([1.0, 1.0], s1=[0, 1], s_aug=[0, 1])
    a = lfdr_seed_update(logits, _FixedModel([0.5, 0.5]), st_, beta=1.0, baseline=0.0, sigmoid_arg="z")
    assert a.w == pytest.approx(1 + 1 / (1 + np.exp(-np.array([1.0, -1.0]))))


def test_invariant_checks():
    with pytest.raises(InvariantError):
        check_invariants(_state([1.0, 0.0], s1=[0], s_aug=[1]))
    with pytest.raises(InvariantError):
        check_invariants(_state([-1.0, 0.0], s1=[0], s_aug=[0]))
    with pytest.raises(InvariantError):
        check_invariants(_state([1.0, 0.5], s1=[0], s_aug=[0]))


def test_early_stopping_traces():
    def run(seq, m, patience, baseline=None):
        calls = []

        def step(it):
            calls.append(it)
            return (seq[it - 1], 0.0)

        return early_stopping(step, m, patience, baseline), calls

    (best, ran, reason), calls = run([5, 4, 4, 4, 9, 9], 6, 3)
    assert (best, ran, reason) == (1, 4, "early_stop") and calls == [1, 2, 3, 4]
    assert run([1, 2, 3, 4, 5, 6], 6, 3)[0] == (6, 6, "max_iter")
    assert run([3], 1, 3)[0] == (1, 1, "max_iter")
    assert run([1, 1, 1, 1], 4, 3, baseline=(2.0, 0.0))[0] == (0, 3, "early_stop")


def test_heldout_scores_excludes_seeds():
    st_ = _state([1.0, 0.0, 0.0, 0.0], s1=[0], s_aug=[0], s2=[2])
    ef, bd = heldout_scores(np.array([9.0, 1.0, 5.0, 0.5]), st_)
    assert ef == pytest.approx(3.0)  # top-1 of 3 ranked nodes, one active
    assert bd == pytest.approx(1.0)


def test_max_pool_examples(rng):
    assert max_pool([np.array([1.0, 0.0]), np.array([0.0, 1.0])]).tolist() == [1.0, 1.0]
    ws = [rng.random(7) for _ in range(3)]
    pooled = max_pool(ws)
    assert all(pooled[i] == max(w[i] for w in ws) for i in range(7))
    assert np.array_equal(max_pool(ws[::-1]), pooled)
    assert np.array_equal(max_pool([pooled, pooled]), pooled)
    with pytest.raises(ValueError):
        max_pool([np.zeros(2), np.zeros(3)])


def test_ensemble_single_result():
    g = gen_planted_partition(5, 2, 0.8, 0.1, 0)
    W = column_normalize(g)
    w = np.zeros(10)
    w[[1, 3]] = [1.0, 0.5]
    r = RefinementResult(w, 1.0, 1.0, 1, 1, "max_iter")
    pooled, scores, order = ensemble_and_rank([r], W)
    assert np.array_equal(pooled, w)
    assert np.allclose(scores, propagate(W, w))
    assert order[0] == 1


def _community_problem(seed, p_in=0.5, p_out=0.03):
    g = gen_planted_partition(15, 2, p_in, p_out, seed)
    block = np.arange(30) // 15
    active = block == 0
    fps = gen_block_fingerprints(block, active, d=16, motif_dims=4, motif_rate=3.0, seed=seed)
    return g, fps, active


def test_iteration_pulls_in_same_community_nodes():
    # Dense communities so graph smoothing separates the two logit clusters;
    # the null fraction is set to its true value (half the nodes are inactive).
    hits = 0
    for seed in range(10, 30):
        g, fps, active = _community_problem(seed, p_in=0.9, p_out=0.01)
        rng = np.random.default_rng(seed)
        train = rng.choice(15, 5, replace=False).tolist()
        state = initial_state(30, frozenset(train[:4]), frozenset(train[4:]))
        ctx = Context.build(g, fps)
        params = init_params(ctx.features(state, np.zeros(30)).width, seed)
        out = refinement_iteration(state, ctx, params, RefineConfig(pi0=0.5))
        check_invariants(out.state)
        new = out.state.s_aug - state.s_aug
        assert all(active[i] for i in new)
        hits += bool(new)
    assert hits >= 16


def test_run_split_and_subdyve_invariants(tmp_path):
    g, fps, active = _community_problem(3)
    cfg = RefineConfig(max_iter=3, n_splits=2, holdout_frac=0.25)
    res = run_subdyve(g, fps, [0, 2, 4, 6, 8, 10], cfg, seed=1)
    for r in res.splits:
        assert r.best_state.s1 <= r.best_state.s_aug
        assert np.all(r.best_weights >= 0)
        assert r.best_ef >= max(row["ef"] for row in r.trace)
        assert 1 <= r.iterations_run <= 3
    assert np.array_equal(res.weights, max_pool([r.best_weights for r in res.splits]))
    assert not {0, 2, 4, 6, 8, 10} & set(res.order.tolist())
    write_trace(tmp_path / "trace.tsv", res.splits)
    lines = (tmp_path / "trace.tsv").read_text().splitlines()
    assert lines[0].split("\t") == ["split", "iteration", "n_aug", "ef", "bedroc", "stop"]
    again = run_subdyve(g, fps, [0, 2, 4, 6, 8, 10], cfg, seed=1)
    assert np.array_equal(again.scores, res.scores)


def test_run_split_single_iteration():
    g, fps, _ = _community_problem(4)
    ctx = Context.build(g, fps)
    r = run_split(initial_state(30, {0, 1, 2}, {3}), ctx, RefineConfig(max_iter=1, patience=1))
    assert r.iterations_run == 1 and r.stop_reason == "max_iter"


def test_config_validation():
    with pytest.raises(ValueError):
        RefineConfig(max_iter=0)
    with pytest.raises(ValueError):
        RefineConfig(sigmoid_arg="x")
