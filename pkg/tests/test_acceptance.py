"""Acceptance criteria A1-A9. Each test prints one PASS/FAIL line."""

import time
import warnings

import numpy as np
import pytest

from subdyve import gnn, lfdr, refine
from subdyve.chem import (
    DanglingBondError,
    SmilesError,
    UnclosedRingError,
    UnknownElementError,
    UnmatchedParenthesisError,
    canonical_label,
    parse_smiles,
    to_smiles,
)
from subdyve.cli import main as cli_main
from subdyve.metrics import RankedList, auroc, bedroc, enrichment_factor
from subdyve.mining import (
    build_discs,
    filter_candidates,
    mine_patterns,
    select_structural_alerts,
)
from subdyve.propagate import propagate, propagate_exact, rank_order
from subdyve.simnet import SimilarityGraph, column_normalize
from subdyve.synth import gen_block_fingerprints, gen_planted_corpus, gen_planted_partition

from gnn_oracles import finite_difference_check


@pytest.fixture
def report(capsys):
    def emit(tag, ok, detail):
        with capsys.disabled():
            print(f"\n{tag} {'PASS' if ok else 'FAIL'}: {detail}")
        assert ok, detail

    return emit


# ---------------------------------------------------------------------------
# A1: two-group simulation, lfdr selection at tau = 0.1


def test_a1_fdr_control(report):
    t0 = time.perf_counter()
    fdp = []
    for trial in range(100):
        rng = np.random.default_rng([trial, 0xA1])
        null = rng.random(5000) < 0.9
        z = np.where(null, rng.standard_normal(5000), rng.normal(2.5, 1.0, 5000))
        model = lfdr.fit(z, pi0=0.9)
        sel = lfdr.select(model, z, 0.1)
        fdp.append(null[sel].sum() / max(len(sel), 1))
    elapsed = time.perf_counter() - t0
    mean = float(np.mean(fdp))
    report("A1", mean <= 0.13 and elapsed < 60, f"mean FDR {mean:.4f} <= 0.13 over 100 trials, {elapsed:.1f}s")


# ---------------------------------------------------------------------------
# A2: iterative vs closed-form propagation


def test_a2_propagation_matches_closed_form(report):
    t0 = time.perf_counter()
    worst = 0.0
    for k in range(50):
        rng = np.random.default_rng([k, 0xA2])
        n = int(rng.integers(2, 51))
        iu, ju = np.triu_indices(n, 1)
        keep = rng.random(len(iu)) < 0.3
        g = SimilarityGraph([str(i) for i in range(n)], iu[keep], ju[keep], rng.uniform(0.1, 1.0, keep.sum()))
        W = column_normalize(g)
        p0 = rng.random(n) * (rng.random(n) < 0.3)
        p0[0] = 1.0
        for alpha in (0.1, 0.2, 0.5, 0.9):
            diff = np.max(np.abs(propagate(W, p0, alpha, tol=1e-13) - propagate_exact(W, p0, alpha)))
            worst = max(worst, diff)
    two = SimilarityGraph(["a", "b"], [0], [1], [1.0])
    p = propagate(column_normalize(two), np.array([1.0, 0.0]), alpha=0.5, tol=1e-12)
    two_ok = np.allclose(p, [2 / 3, 1 / 3], rtol=0, atol=1e-11)
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-8 and two_ok and elapsed < 10
    report("A2", ok, f"max |iter - exact| {worst:.2e} on 200 cases, two-node case {p.round(12)}, {elapsed:.1f}s")


# ---------------------------------------------------------------------------
# A3: composite-loss gradients against central differences


def _a3_instance(seed):
    rng = np.random.default_rng([seed, 0xA3])
    g = gen_planted_partition(5, 2, 0.8, 0.2, seed)
    X = rng.standard_normal((10, 6))
    fps = rng.poisson(1.0, (10, 6))
    y = np.zeros(10, bool)
    y[rng.choice(10, 3, replace=False)] = True
    include = rng.random(10) < 0.8
    partners = gnn.contrast_partners(fps, np.flatnonzero(y))
    return g, X, fps, y, rng.random(10), include, partners


def test_a3_gradient_fidelity(report):
    t0 = time.perf_counter()
    worst, skipped, recomb = 0.0, 0, 0.0
    weights = gnn.LossWeights(lambda_rank=0.3, lambda_contrast=0.6)
    for seed in range(5):
        g, X, fps, y, nps, include, partners = _a3_instance(seed)
        params = gnn.init_params(X.shape[1], seed)
        A = gnn.normalized_adjacency(g)
        res, sk = finite_difference_check(params, X, A, y, nps, weights, partners, include, h=1e-4)
        assert set(res) == set(gnn.PARAM_NAMES)
        worst, skipped = max(worst, max(res.values())), skipped + sk
        logits, Z = gnn.forward(params, X, A)
        t = gnn.loss_total(logits, Z, y, nps, weights, fps, include)
        recomb = max(recomb, abs(t["total"] - (0.7 * t["bce"] + 0.3 * t["rank"] + 0.6 * t["contrast"])))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-3 and recomb <= 1e-12 and elapsed < 30
    report(
        "A3",
        ok,
        f"worst tensor rel. error {worst:.2e} ({skipped} kink-crossing coordinates skipped), "
        f"recombination {recomb:.1e}, {elapsed:.1f}s",
    )


# ---------------------------------------------------------------------------
# A4: metric oracles


def _brute_bedroc(flags, alpha):
    N, n = len(flags), int(sum(flags))
    w = [np.exp(-alpha * r / N) for r in range(1, N + 1)]
    obs = sum(wi for wi, f in zip(w, flags) if f)
    return (obs - sum(w[N - n :])) / (sum(w[:n]) - sum(w[N - n :]))


def _brute_ef(flags, pct):
    N, n = len(flags), sum(flags)
    top = int(pct * N // 100)
    return (sum(flags[:top]) / top) / (n / N)


def _brute_auroc(flags):
    # rank i beats rank j when i < j
    wins = sum(1 for i, a in enumerate(flags) for j, b in enumerate(flags) if a and not b and i < j)
    return wins / (sum(flags) * (len(flags) - sum(flags)))


def test_a4_metric_oracles(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(0xA4)
    worst = 0.0
    for _ in range(1000):
        N = int(rng.integers(10, 51))
        n = int(rng.integers(1, N))
        flags = np.zeros(N, bool)
        flags[rng.choice(N, n, replace=False)] = True
        rl = RankedList([f"c{i}" for i in range(N)], flags)
        alpha = float(rng.choice([1.0, 20.0, 85.0]))
        pct = float(rng.choice([10.0, 20.0, 50.0]))
        fl = flags.tolist()
        worst = max(
            worst,
            abs(bedroc(rl, alpha) - _brute_bedroc(fl, alpha)),
            abs(enrichment_factor(rl, pct) - _brute_ef(fl, pct)),
            abs(auroc(rl) - _brute_auroc(fl)),
        )
    flags = np.zeros(100, bool)
    flags[[0, 20, 30, 40, 50, 60, 70, 80, 90, 99]] = True
    ef10 = enrichment_factor(RankedList([str(i) for i in range(100)], flags), 1.0)
    au = auroc(RankedList(list("abcd"), np.array([1, 0, 1, 0], bool)))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-10 and ef10 == 10.0 and au == 0.75 and elapsed < 10
    report("A4", ok, f"max oracle gap {worst:.1e} on 1000 rankings, EF_1% example {ef10}, AUROC example {au}, {elapsed:.1f}s")


# ---------------------------------------------------------------------------
# A5: planted-motif mining


def test_a5_planted_motif_mining(report):
    t0 = time.perf_counter()
    canon = canonical_label(parse_smiles("NC=O"))
    found, exact = 0, 0
    for seed in range(20):
        c = gen_planted_corpus(20, 20, "NC=O", seed=seed)
        pos = [m for m, y in zip(c.molecules, c.labels) if y]
        neg = [m for m, y in zip(c.molecules, c.labels) if not y]
        pats = mine_patterns(pos, neg, seed=seed)
        alerts = select_structural_alerts(pats, [True] * len(pos) + [False] * len(neg))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")  # short dimension is expected here
            discs = build_discs(alerts, pos, neg, d=100)
        members = {p.canon: p for d in discs for p in d.members}
        if canon in members:
            found += 1
            kept = filter_candidates(c.molecules, [members[canon]])
            exact += [m.id for m in kept] == [m.id for m in pos]
    elapsed = time.perf_counter() - t0
    ok = found >= 18 and exact == found and elapsed < 120
    report("A5", ok, f"motif in top-d patterns for {found}/20 seeds, carriers recovered exactly in {exact}, {elapsed:.1f}s")


# ---------------------------------------------------------------------------
# A6 + A7: ablation signal and refinement invariants on a 500-node screen


def screening_problem(seed):
    """Five 100-node communities, 40 actives (25 concentrated in one block),
    20 of them revealed as seeds. Node labels are shuffled so that index
    order carries no block information."""
    g0 = gen_planted_partition(100, 5, 0.1, 0.01, seed)
    rng = np.random.default_rng([seed, 7])
    block = np.arange(500) // 100
    act = np.concatenate([rng.choice(100, 25, replace=False), 100 + rng.choice(400, 15, replace=False)])
    active = np.zeros(500, bool)
    active[act] = True
    fps = gen_block_fingerprints(block, active, seed=seed, motif_dims=8, motif_rate=3.0)
    perm = rng.permutation(500)
    inv = np.argsort(perm)
    src, dst = inv[g0.src], inv[g0.dst]
    g = SimilarityGraph(g0.node_ids, np.minimum(src, dst), np.maximum(src, dst), g0.weight)
    active, fps = active[perm], fps[perm]
    seeds = sorted(rng.choice(np.flatnonzero(active), 20, replace=False).tolist())
    return g, fps, active, seeds


def _ef1(scores, active, seeds):
    order = rank_order(scores, seeds)
    return enrichment_factor(RankedList([str(i) for i in order], active[order]), 1.0)


@pytest.fixture(scope="module")
def ablation_runs():
    mp = pytest.MonkeyPatch()
    violations = []
    original = refine.refinement_iteration

    def checked(state, *args, **kwargs):
        out = original(state, *args, **kwargs)
        s = out.state
        if not (s.s1 <= s.s_aug and np.all(s.w >= 0) and not (s.s1 & s.s2)):
            violations.append(s)
        return out

    mp.setattr(refine, "refinement_iteration", checked)
    t0 = time.perf_counter()
    runs = []
    try:
        for seed in range(10):
            g, fps, active, seeds = screening_problem(seed)
            W = column_normalize(g)
            p0 = np.zeros(g.n_nodes)
            p0[seeds] = 1.0
            plain = _ef1(propagate(W, p0), active, seeds)
            cfg = refine.RefineConfig()
            res = refine.run_subdyve(g, fps, seeds, cfg, seed=seed)
            runs.append(dict(seed=seed, plain=plain, full=_ef1(res.scores, active, seeds), res=res, W=W, seeds=seeds, cfg=cfg))
    finally:
        mp.undo()
    return runs, violations, time.perf_counter() - t0


def test_a6_ablation_signal(report, ablation_runs):
    runs, _, elapsed = ablation_runs
    plain = np.array([r["plain"] for r in runs])
    full = np.array([r["full"] for r in runs])
    wins = int((full >= plain).sum())
    ok = wins >= 8 and np.median(full) >= np.median(plain) and elapsed < 600
    report(
        "A6",
        ok,
        f"full >= plain EF_1% in {wins}/10 seeds, median {np.median(full):.2f} vs {np.median(plain):.2f}, "
        f"mean {full.mean():.2f} vs {plain.mean():.2f}, {elapsed:.0f}s",
    )


def test_a7_refinement_invariants(report, ablation_runs):
    runs, violations, _ = ablation_runs
    problems = len(violations)
    for r in runs:
        res, cfg = r["res"], r["cfg"]
        for k, split in enumerate(res.splits):
            s1, s2 = refine.stratified_split(r["seeds"], cfg.holdout_frac, seed=r["seed"] * 1000 + k)
            state0 = refine.initial_state(len(res.weights), s1, s2)
            keys = [refine.heldout_scores(propagate(r["W"], state0.w, cfg.alpha, cfg.tol), state0, cfg.ef_pct, cfg.bedroc_alpha)]
            keys += [(row["ef"], row["bedroc"]) for row in split.trace]
            best = max(range(len(keys)), key=lambda i: (keys[i], -i))
            problems += split.best_iteration != best or split.best_ef != keys[best][0]
            problems += not (split.best_state.s1 <= split.best_state.s_aug)
            problems += bool(np.any(split.best_weights < 0))
        stacked = [s.best_weights for s in res.splits]
        oracle = np.array([max(w[i] for w in stacked) for i in range(len(res.weights))])
        problems += not np.array_equal(res.weights, oracle)
    checked = sum(len(s.trace) for r in runs for s in r["res"].splits)
    report("A7", problems == 0, f"{problems} violations across {checked} refinement iterations in 10 A6 runs")


# ---------------------------------------------------------------------------
# A8: determinism of the command-line pipeline


def test_a8_pipeline_determinism(report, tmp_path):
    stages = ("synth", "mine", "fingerprint", "network", "propagate", "refine", "eval")
    outs = [tmp_path / "one", tmp_path / "two"]
    for out in outs:
        for stage in stages:
            assert cli_main(["--seed", "11", "--out", str(out), stage]) == 0
    names = sorted(p.name for p in outs[0].iterdir())
    differ = [n for n in names if (outs[0] / n).read_bytes() != (outs[1] / n).read_bytes()]
    manifests = [n for n in names if n.endswith(".manifest.json")]
    ok = not differ and names == sorted(p.name for p in outs[1].iterdir()) and len(manifests) == len(stages)
    report("A8", ok, f"{len(names)} artifacts incl. {len(manifests)} manifests compared, {len(differ)} differ")


# ---------------------------------------------------------------------------
# A9: parser round trip and error classes

EDGE_CASES = [
    "C", "CC(C)(C)C", "c1ccccc1O", "C1CC2CCC1CC2", "O=C(N)c1ccncc1", "[NH4+]", "[O-]C(=O)C", "C#N",
    "ClC(Br)I", "C%10CCCCC%10", "c1ccc2ccccc2c1", "CC(=O)OC1CC(C)(C)CC1", "F/C=C/F", "C.C",
    "[Fe+2]", "[13CH4]", "C1CC1C1CC1", "OC(=O)C(N)Cc1ccccc1", "n1ccccc1", "[nH]1cccc1", "S(=O)(=O)(O)O",
    "P(Cl)(Cl)Cl", "B(O)O", "C=C=C", "CCCCCCCCCCCCCCCCCCCC",
]
MALFORMED = [
    ("C1CC", UnclosedRingError),
    ("CC(", UnmatchedParenthesisError),
    ("CC)C", UnmatchedParenthesisError),
    ("CX", UnknownElementError),
    ("C=", DanglingBondError),
    ("C(C", UnmatchedParenthesisError),
    ("C1CC2CC1", UnclosedRingError),
    ("[Xx]", UnknownElementError),
]


def test_a9_parser_round_trip(report):
    corpus = gen_planted_corpus(100, 100, "NC=O", seed=9)
    inputs = corpus.smiles + EDGE_CASES
    bad = [s for s in inputs if canonical_label(parse_smiles(to_smiles(parse_smiles(s)))) != canonical_label(parse_smiles(s))]
    wrong = []
    for text, cls in MALFORMED:
        try:
            parse_smiles(text)
            wrong.append(text)
        except SmilesError as exc:
            if not isinstance(exc, cls):
                wrong.append(text)
    ok = not bad and not wrong and len(corpus.smiles) == 200
    report("A9", ok, f"{len(inputs) - len(bad)}/{len(inputs)} round trips preserved, {len(MALFORMED) - len(wrong)}/{len(MALFORMED)} malformed inputs raise the right class")
