"""End-to-end acceptance gate.

Each criterion prints exactly one PASS/FAIL line on the live terminal (via
capsys.disabled) and then asserts.  The synthetic 5-fold experiment behind
criteria 5/6/8 runs once per session and is shared.
"""

import math
import os
import time

import numpy as np
import pytest

from cocorec import brm, evaluate, gradcheck, ingest, kernels, numerics, synth
from cocorec.counterfactual import CocoConfig, CocoRecommender, jaccard

SYNTH_SEED = 0
FOLD_SEED = 0


def _report(capsys, num, ok, detail):
    with capsys.disabled():
        print(f"\ncriterion {num}: {'PASS' if ok else 'FAIL'} - {detail}")
    assert ok, f"criterion {num}: {detail}"


# ---------------------------------------------------------------------------
# shared synthetic experiment (criteria 5, 6, 8)
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def experiment():
    sd = synth.generate(synth.SynthConfig(seed=SYNTH_SEED))
    ds = sd.dataset
    folds = ingest.make_folds(ds.sessions, n_folds=5, seed=FOLD_SEED)
    bcfg = brm.BrmConfig(seed=0)
    ccfg = CocoConfig()

    t0 = time.time()
    r20 = {m: [] for m in evaluate.MODELS}
    aucs = []
    fold0_models = None
    for fold in folds:
        reports, fm = evaluate.evaluate_fold(ds, fold, list(evaluate.MODELS),
                                             bcfg, ccfg, threads=4)
        test_events = brm.prepare_events(ds, fold.test_ids)
        aucs.append(synth.cause_auc(fm.params, sd, test_events))
        for m in evaluate.MODELS:
            assert not reports[m].failed
            r20[m].append(reports[m].per_k[20][0])
        if fold.fold == 0:
            fold0_models = fm
    elapsed = time.time() - t0
    return {
        "dataset": ds, "folds": folds, "bcfg": bcfg, "ccfg": ccfg,
        "r20": r20, "aucs": aucs, "elapsed": elapsed,
        "fold0_models": fold0_models,
    }


# ---------------------------------------------------------------------------
# 1. gradient correctness
# ---------------------------------------------------------------------------

def test_criterion_1_gradient_correctness(capsys):
    t0 = time.time()
    errors, ok = gradcheck.run_suite(n_trials=20, seed=0, tol=1e-4)
    elapsed = time.time() - t0
    ok = ok and elapsed < 60.0
    _report(capsys, 1, ok,
            f"gradient check on 20 toys: max rel err {max(errors):.2e} "
            f"(tol 1e-4) in {elapsed:.1f}s")


# ---------------------------------------------------------------------------
# 2. formula-level oracles
# ---------------------------------------------------------------------------

def test_criterion_2_formula_oracles(capsys):
    checks = []

    # jaccard
    checks.append(abs(jaccard({"a", "b", "c"}, {"b", "c", "d"}) - 0.5) < 1e-9)
    checks.append(jaccard({1, 2}, {1, 2}) == 1.0)
    checks.append(jaccard(set(), set()) == 0.0)

    # attention
    tr = numerics.attention(np.array([1.0, 2.0]), np.array([[3.0, 4.0]]),
                            np.array([[5.0, 6.0]]))
    checks.append(np.allclose(tr.alpha, [1.0]) and np.allclose(tr.output, [5.0, 6.0]))
    q = np.array([1.0, 0.0])
    K = np.array([[1.0, 0.0], [-1.0, 0.0]])
    tr = numerics.attention(q, K, K)
    s = 1.0 / math.sqrt(2.0)
    a0 = math.exp(s) / (math.exp(s) + math.exp(-s))  # = 0.804430 for +-1/sqrt(2)
    checks.append(abs(tr.alpha[0] - a0) < 1e-9 and abs(tr.alpha[1] - (1 - a0)) < 1e-9)

    # sigmoid gate
    p = brm.BrmParams.init(3, 6, 4, seed=0)
    checks.append(brm.gate_lambda(p, p.item_emb[0], p.item_emb[1], 2) == 0.5)
    p.gate_b[0] = 20.0
    checks.append(abs(brm.gate_lambda(p, p.item_emb[0], p.item_emb[1], 2) - 1.0) < 1e-8)

    # in-batch cross entropy with log(1-p) terms
    checks.append(abs(brm.loss_l1(np.array([0.5, 0.5]), 0) - (-2.0 * math.log(0.5))) < 1e-9)
    probs = np.array([0.2, 0.5, 0.3])
    direct = -(math.log(0.5) + math.log(0.8) + math.log(0.7))
    checks.append(abs(brm.loss_l1(probs, 1) - direct) < 1e-9)

    # gate BCE pair
    checks.append(abs(brm.loss_l2(0.5, brm.PseudoLabels(1, 1)) - (-2.0 * math.log(0.5))) < 1e-9)
    checks.append(abs(brm.loss_l2(0.8, brm.PseudoLabels(1, 0)) - (-2.0 * math.log(0.8))) < 1e-9)

    # additive boost
    params = brm.BrmParams.init(2, 4, 3, seed=0)
    rec = CocoRecommender(params, [], {}, CocoConfig())
    ev = brm.EventData(0, np.zeros(0, dtype=np.int64), np.array([2], dtype=np.int64),
                       -1, 0.0, 0.0, 0, 2)
    out = rec.boost(np.full(4, 0.25), ev, epsilon=0.1)
    checks.append(abs(out[2] - 0.35 / 1.1) < 1e-9 and abs(out[0] - 0.25 / 1.1) < 1e-9)

    _report(capsys, 2, all(checks),
            f"formula oracles: {sum(checks)}/{len(checks)} exact checks hold (tol 1e-9)")


# ---------------------------------------------------------------------------
# 3. degenerate-configuration identities
# ---------------------------------------------------------------------------

def test_criterion_3_degenerate_identities(capsys):
    checks = []
    rng = np.random.default_rng(0)
    params = brm.BrmParams.init(4, 8, 4, seed=1)
    params.gate_w = rng.normal(0, 0.3, 12)

    from cocorec.core import Interaction, Session
    sessions = [Session(0, 1, (0, 1), 10_000, 10_060),
                Session(1, 2, (2, 3), 20_000, 20_060)]
    histories = {1: [Interaction(1, 4, 9_000), Interaction(1, 5, 9_100)],
                 2: [Interaction(2, 4, 19_000), Interaction(2, 6, 19_100)]}
    rec = CocoRecommender(params, sessions, histories, CocoConfig())
    ev = brm.EventData(3, np.array([4, 5], dtype=np.int64),
                       np.array([2], dtype=np.int64), -1, 0.0, 0.0, 99, 2)

    # epsilon = 0 leaves probabilities untouched
    p = rng.dirichlet(np.ones(8))
    checks.append(np.array_equal(rec.boost(p, ev, epsilon=0.0), p))

    # beta = 0 removes the gate labels from the gradient entirely
    recent = np.array([1, 2], dtype=np.int64)
    ctx = np.array([3], dtype=np.int64)
    cand = np.array([0, 4, 6], dtype=np.int64)
    grads = []
    for y_n, y_m in ((1.0, 0.0), (0.0, 1.0)):
        d_item = np.zeros_like(params.item_emb)
        d_user = np.zeros_like(params.user_emb)
        d_w = np.zeros_like(params.gate_w)
        d_b = np.zeros(1)
        l1, l2 = kernels.event_loss_grad(
            params.item_emb, params.user_emb, params.gate_w,
            float(params.gate_b[0]), 1, recent, ctx, cand, 1, y_n, y_m,
            0.0, 1.0, d_item, d_user, d_w, d_b)
        grads.append(np.concatenate([d_item.ravel(), d_user.ravel(), d_w, d_b]))
    checks.append(np.max(np.abs(grads[0] - grads[1])) <= 1e-12)

    # single neighbor: aggregate equals that neighbor's action output
    ns = rec.index.find_neighbors(ev, pi=1)
    checks.append(len(ns.neighbors) == 1)
    agg = rec.aggregate(ev, ns)
    act = rec.action(ev, ns.neighbors[0])
    checks.append(np.max(np.abs(agg - act)) <= 1e-12)

    # rescaling all similarities leaves the aggregate unchanged
    ns2 = rec.index.find_neighbors(ev, pi=2)
    base = rec.aggregate(ev, ns2)
    for k, nb in enumerate(ns2.neighbors):
        ns2.neighbors[k] = nb._replace(similarity=nb.similarity * 12.5)
    checks.append(np.max(np.abs(rec.aggregate(ev, ns2) - base)) <= 1e-12)

    _report(capsys, 3, all(checks),
            f"degenerate identities: {sum(checks)}/{len(checks)} hold (tol 1e-12)")


# ---------------------------------------------------------------------------
# 4. metric oracle
# ---------------------------------------------------------------------------

def test_criterion_4_metric_oracle(capsys):
    rng = np.random.default_rng(0)
    n_vectors, n_items = 1000, 50
    ranks_fast = []
    ranks_brute = []
    for _ in range(n_vectors):
        scores = rng.choice(np.linspace(0.0, 1.0, 20), size=n_items)
        target = int(rng.integers(0, n_items))
        ranks_fast.append(evaluate.rank_of_target(scores, target))
        order = sorted(range(n_items), key=lambda v: (-scores[v], v))
        ranks_brute.append(order.index(target) + 1)
    ok = ranks_fast == ranks_brute
    for k in (1, 5, 20, 50):
        brute_recall = sum(1 for r in ranks_brute if r <= k) / n_vectors
        brute_ndcg = sum(1.0 / math.log2(r + 1) for r in ranks_brute if r <= k) / n_vectors
        ok = ok and evaluate.recall_at_k(ranks_fast, k) == brute_recall
        ok = ok and abs(evaluate.ndcg_at_k(ranks_fast, k) - brute_ndcg) < 1e-12
    _report(capsys, 4, ok,
            f"rank/recall/NDCG match brute force on {n_vectors} vectors (|V|={n_items})")


# ---------------------------------------------------------------------------
# 5. deconfounding on the default synthetic dataset
# ---------------------------------------------------------------------------

def test_criterion_5_deconfounding(experiment, capsys):
    coco = experiment["r20"]["coco"]
    bare = experiment["r20"]["brm"]
    aucs = experiment["aucs"]
    per_fold = all(c > b for c, b in zip(coco, bare))
    auc_ok = all(a > 0.75 for a in aucs)
    time_ok = experiment["elapsed"] < 600.0
    ok = per_fold and auc_ok and time_ok
    _report(capsys, 5, ok,
            f"coco R@20 {np.mean(coco):.4f} > brm {np.mean(bare):.4f} on all 5 folds "
            f"({per_fold}); cause AUC min {min(aucs):.3f} > 0.75 ({auc_ok}); "
            f"experiment {experiment['elapsed']:.0f}s < 600s ({time_ok})")


# ---------------------------------------------------------------------------
# 6. ablation ordering
# ---------------------------------------------------------------------------

def test_criterion_6_ablation_ordering(experiment, capsys):
    mean = {m: float(np.mean(v)) for m, v in experiment["r20"].items()}
    boost_chain = mean["brm"] < mean["coco-noboost"] < mean["coco"]
    ssl_chain = mean["brm"] < mean["coco-nossl"] < mean["coco"]
    ok = boost_chain and ssl_chain
    _report(capsys, 6, ok,
            f"mean R@20 brm {mean['brm']:.4f} < no-boost {mean['coco-noboost']:.4f} "
            f"< coco {mean['coco']:.4f} ({boost_chain}); brm < no-ssl "
            f"{mean['coco-nossl']:.4f} < coco ({ssl_chain})")


# ---------------------------------------------------------------------------
# 7. real-data reproduction (stretch, non-gating)
# ---------------------------------------------------------------------------

def test_criterion_7_real_data(capsys):
    path = os.environ.get("COCOREC_LASTFM_LOG", "data/lastfm.tsv")
    if not os.path.exists(path):
        with capsys.disabled():
            print("\ncriterion 7: SKIP - real listening log not present "
                  f"(set COCOREC_LASTFM_LOG; looked at {path!r}); non-gating")
        pytest.skip("real dataset not available")

    config = ingest.IngestConfig()
    dataset, folds, _ = ingest.prepare(path, config)
    stats_ok = (abs(len(dataset.sessions) - 5915) / 5915 < 0.05
                and abs(dataset.n_interactions - 38367) / 38367 < 0.05)
    reports, mean = evaluate.run_cv(dataset, folds, "coco", brm.BrmConfig(seed=0),
                                    CocoConfig(), threads=4)
    r20, n20 = mean.per_k[20]
    sknn_reports, sknn_mean = evaluate.run_cv(dataset, folds, "sknn",
                                              brm.BrmConfig(seed=0))
    ok = (stats_ok and abs(r20 - 0.793) <= 0.05 and abs(n20 - 0.374) <= 0.05
          and abs(sknn_mean.per_k[20][0] - 0.536) <= 0.05)
    _report(capsys, 7, ok,
            f"real data: stats ok={stats_ok}, coco R@20={r20:.3f}, "
            f"N@20={n20:.3f}, sknn R@20={sknn_mean.per_k[20][0]:.3f}")


# ---------------------------------------------------------------------------
# 8. sensitivity smoke test
# ---------------------------------------------------------------------------

def test_criterion_8_sensitivity(experiment, capsys):
    ds = experiment["dataset"]
    fold = experiment["folds"][0]
    ccfg = experiment["ccfg"]
    test_events = brm.prepare_events(ds, fold.test_ids)
    pool = [s for s in ds.sessions if s.session_id in set(fold.train_ids)]

    # beta sweep: beta=1 and beta=0 models come from the shared run
    r_beta1 = experiment["r20"]["coco"][0]
    r_beta0 = experiment["r20"]["coco-nossl"][0]
    cfg10 = brm.BrmConfig(**{**experiment["bcfg"].__dict__, "beta": 10.0})
    params10, _ = brm.train(ds, fold, cfg10)
    rec10 = CocoRecommender(params10, pool, ds.interactions, ccfg)
    ranks, _ = evaluate._rank_events(test_events, rec10.scores, threads=4)
    r_beta10 = evaluate.recall_at_k(ranks, 20)
    beta_ok = r_beta1 >= r_beta0 and r_beta1 >= r_beta10

    # neighborhood size sweep: pi=1 vs pi=10 with the beta=1 model
    params1 = experiment["fold0_models"].params
    r_pi = {}
    for pi in (1, 10):
        rec = CocoRecommender(params1, pool, ds.interactions, CocoConfig(pi=pi))
        ranks, _ = evaluate._rank_events(test_events, rec.scores, threads=4)
        r_pi[pi] = evaluate.recall_at_k(ranks, 20)
    pi_ok = r_pi[10] >= r_pi[1]

    ok = beta_ok and pi_ok
    _report(capsys, 8, ok,
            f"R@20 beta: 1 -> {r_beta1:.4f} >= 0 -> {r_beta0:.4f}, "
            f"10 -> {r_beta10:.4f} ({beta_ok}); pi: 1 -> {r_pi[1]:.4f} "
            f"<= 10 -> {r_pi[10]:.4f} ({pi_ok})")
