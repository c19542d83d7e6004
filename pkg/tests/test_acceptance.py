"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The lines are repeated in the pytest terminal summary. Run alone with
``pytest tests/test_acceptance.py -v`` or as a script with
``python3 tests/test_acceptance.py``.
"""

import functools
import json
import os
import subprocess
import sys
import time
from dataclasses import replace

import numpy as np
import scipy.sparse as sp

sys.path.insert(0, os.path.dirname(__file__))

from cmkr.distance import DistMatrix, assemble_joint, divided_matrix, pairwise_euclidean  # noqa: E402
from cmkr.evaluation import (average_precision, cmc, evaluate_block, grid_search,  # noqa: E402
                             map_score, rank, raw_distance)
from cmkr.jrm import invariant_report  # noqa: E402
from cmkr.rerank import (RerankConfig, cmkr_pipeline, jaccard_distance,  # noqa: E402
                         reciprocal_neighbors)
from cmkr.store import EmbeddingSet  # noqa: E402
from cmkr.synth import SynthConfig, generate  # noqa: E402
from cmkr.textiou import kl_loss, normalize_targets  # noqa: E402
from oracles import (brute_strategy_sets, naive_cmc, naive_map, random_instance,  # noqa: E402
                     reference_rerank)

STRATEGIES = ("baseline", "constrained", "divided", "extended")
BENCH = dict(n_ids=100, per_modality=10, dim=64, modality_offset=1.5, intra_noise=0.3)
BENCH_SEEDS = range(10)


def _es(x, modality):
    n = len(x)
    return EmbeddingSet(np.asarray(x, np.float32), np.arange(n), [modality] * n, np.zeros(n, int))


# Lines collected here are echoed in pytest's terminal summary (see conftest).
RESULT_LINES = []


def announce(number, title, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {title} ({detail})"
    RESULT_LINES.append(line)
    print(line, flush=True)
    return line


# -- criterion bodies ----------------------------------------------------------

def criterion_1():
    start = time.perf_counter()
    worst = 0.0
    for seed in range(100):
        rng = np.random.default_rng(1000 + seed)
        q, g, _, _ = random_instance(rng, n_max=200)
        k1 = int(rng.integers(2, 21))
        k2 = int(rng.integers(1, min(k1, 6) + 1))
        lam = float(rng.random())
        cfg = RerankConfig(k1=k1, k2=k2, k3=0, lambda_jaccard=lam, strategy="baseline",
                           use_neighbor_expansion=True, use_ma_lqe=False)
        got = cmkr_pipeline(_es(q, "infrared"), _es(g, "visible"), cfg, normalize=False)
        worst = max(worst, float(np.abs(got - reference_rerank(q, g, k1, k2, lam)).max()))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-9 and elapsed < 60
    return ok, f"max |diff| {worst:.2e} over 100 instances, {elapsed:.1f} s"


def criterion_2():
    mismatches = 0
    checks = 0
    for seed in range(100):
        rng = np.random.default_rng(2000 + seed)
        q, g, _, _ = random_instance(rng, n_max=200)
        d = assemble_joint(_es(q, "infrared"), _es(g, "visible"))
        k1 = int(rng.integers(1, 16))
        for strategy in STRATEGIES:
            for expansion in (False, True):
                got = [set(x.tolist()) for x in reciprocal_neighbors(d, k1, strategy, expansion)]
                want = brute_strategy_sets(d.values, d.n_query, k1, strategy, expansion)
                checks += 1
                mismatches += got != want
    return mismatches == 0, f"{checks - mismatches}/{checks} strategy x expansion x seed cases equal"


@functools.lru_cache(maxsize=None)
def bench_maps(seed):
    """Raw, baseline and extended mAP (grid-searched) on one benchmark seed."""
    ds = generate(SynthConfig(seed=seed, **BENCH))
    q, g = ds.infrared, ds.visible
    raw = evaluate_block(raw_distance(q, g), q, g).map
    no_ma = RerankConfig(use_ma_lqe=False)
    base = grid_search(q, g, replace(no_ma, strategy="baseline"))[1].map
    ext = grid_search(q, g, replace(no_ma, strategy="extended"))[1].map
    return {"raw": raw, "baseline": base, "extended": ext}


def criterion_3():
    start = time.perf_counter()
    wins = 0
    for seed in BENCH_SEEDS:
        m = bench_maps(seed)
        wins += m["extended"] >= m["baseline"] >= m["raw"]
    elapsed = time.perf_counter() - start
    return wins >= 8 and elapsed < 300, f"ext >= base >= raw in {wins}/10 seeds, {elapsed:.1f} s"


def criterion_4():
    wins = 0
    for seed in BENCH_SEEDS:
        m = bench_maps(seed)
        ds = generate(SynthConfig(seed=seed, **BENCH))
        ma = grid_search(ds.infrared, ds.visible, RerankConfig(strategy="extended"))[1].map
        wins += ma >= m["extended"]
    return wins >= 7, f"ext+MA-LQE >= ext in {wins}/10 seeds"


def criterion_5():
    got = normalize_targets(np.array([1.0, 1.0, 0.5, 0.0, 0.0]))
    err = float(np.abs(got - [0.4, 0.4, 0.2, 0.0, 0.0]).max())
    return err <= 1e-12, f"max |diff| {err:.1e}"


def criterion_6():
    bad = 0
    for seed in range(50):
        rng = np.random.default_rng(6000 + seed)
        nq, ng = int(rng.integers(1, 30)), int(rng.integers(2, 60))
        n_ids = int(rng.integers(1, 8))
        qids = rng.integers(0, n_ids, nq)
        gids = rng.integers(0, n_ids, ng)
        gids[: min(ng, n_ids)] = np.arange(min(ng, n_ids))
        qids = np.minimum(qids, min(ng, n_ids) - 1)
        d = np.round(rng.random((nq, ng)), 2)
        mask = rng.random((nq, ng)) > 0.3
        mask[:, : min(ng, n_ids)] = True
        rk = rank(d, mask)
        max_rank = int(rng.integers(1, ng + 1))
        bad += not np.array_equal(cmc(rk, qids, gids, max_rank),
                                  naive_cmc(d.tolist(), qids, gids, max_rank, mask.tolist()))
        bad += map_score(rk, qids, gids) != naive_map(d.tolist(), qids, gids, mask.tolist())
    ap1 = average_precision(np.array([1, 0, 1], bool))
    ap2 = average_precision(np.array([0, 0, 1], bool))
    hand = abs(ap1 - (1 + 2 / 3) / 2) <= 1e-9 and abs(ap2 - 1 / 3) <= 1e-9
    return bad == 0 and hand, f"{100 - bad}/100 oracle comparisons exact, AP examples {ap1:.4f}, {ap2:.4f}"


def criterion_7():
    failures = []
    rng = np.random.default_rng(7)

    for _ in range(30):
        dense = rng.random((25, 25)) * (rng.random((25, 25)) < 0.3)
        dj = jaccard_distance(sp.csr_matrix(dense))
        if not (np.array_equal(dj, dj.T) and not np.diag(dj).any() and dj.min() >= 0 and dj.max() <= 1):
            failures.append("jaccard")
            break

    d = rng.random((40, 60))
    ids_q, ids_g = rng.integers(0, 6, 40), np.arange(60) % 6
    curve = cmc(rank(d), ids_q, ids_g, 60)
    if not ((np.diff(curve) >= 0).all() and curve[-1] == 1.0):
        failures.append("cmc monotone")
    warped = np.exp(2 * d) + d ** 3
    a, b = rank(d), rank(warped)
    if not (all(np.array_equal(x, y) for x, y in zip(a, b))
            and map_score(a, ids_q, ids_g) == map_score(b, ids_q, ids_g)):
        failures.append("rank invariance")

    x = rng.standard_normal((30, 4))
    v = pairwise_euclidean(x, x)
    dm = DistMatrix(v, 12, 18, np.array(["infrared"] * 12 + ["visible"] * 18))
    changed = v.copy()
    changed[20, 25] += 5.0
    before, after = divided_matrix(dm).values, divided_matrix(dm.with_values(changed)).values
    mask = np.ones_like(v, bool)
    mask[12:, 12:] = False
    if not np.array_equal(before[mask], after[mask]):
        failures.append("divided isolation")

    for dims in ((2, 4, 3, 2), (1, 3, 1, 1), (3, 2, 5, 4)):
        if not invariant_report(11, dims)["passed"]:
            failures.append(f"jrm {dims}")

    p = rng.dirichlet(np.ones(6), size=6)
    if not abs(kl_loss(p, p)) < 1e-6:
        failures.append("kl(p,p)")

    q, g, _, _ = random_instance(np.random.default_rng(77), n_max=200)
    big = np.vstack([q, g] * 3)
    query, gallery = _es(big[:300], "infrared"), _es(big[300:], "visible")
    cfg = RerankConfig(k1=10, k2=4, k3=1)
    outs = [cmkr_pipeline(query, gallery, cfg, threads=t).tobytes() for t in (1, 2, 4)]
    if len(set(outs)) != 1:
        failures.append("thread determinism")

    return not failures, "all suites hold" if not failures else "failed: " + ", ".join(failures)


PERF_SCRIPT = r"""
import json, resource, time
import numpy as np
from cmkr.store import EmbeddingSet
from cmkr.rerank import RerankConfig, cmkr_pipeline
rng = np.random.default_rng(8)
centers = rng.standard_normal((600, 512))
def make(n, modality, shift):
    ids = rng.integers(0, 600, n)
    x = centers[ids] + 0.6 * rng.standard_normal((n, 512)) + shift
    return EmbeddingSet(x.astype(np.float32), ids, [modality] * n, np.zeros(n, int))
q, g = make(2000, "infrared", 0.5), make(3000, "visible", 0.0)
t = time.perf_counter()
out = cmkr_pipeline(q, g, RerankConfig(), threads=4)
secs = time.perf_counter() - t
rss = resource.getrusage(resource.RUSAGE_SELF).ru_maxrss * 1024
print(json.dumps({"seconds": secs, "max_rss_bytes": rss, "shape": list(out.shape),
                  "finite": bool(np.isfinite(out).all())}))
"""


def criterion_8():
    proc = subprocess.run([sys.executable, "-c", PERF_SCRIPT], capture_output=True, text=True,
                          timeout=600)
    if proc.returncode:
        return False, f"subprocess failed: {proc.stderr.strip()[-200:]}"
    res = json.loads(proc.stdout.strip().splitlines()[-1])
    ok = res["seconds"] < 60 and res["max_rss_bytes"] < 4 * 2**30 and res["finite"] \
        and res["shape"] == [2000, 3000]
    return ok, (f"{res['seconds']:.1f} s, peak RSS {res['max_rss_bytes'] / 2**20:.0f} MiB "
                f"on {os.cpu_count()} core(s)")


CRITERIA = [
    (1, "baseline fidelity vs reference re-ranking", criterion_1),
    (2, "neighbor sets equal brute force for every strategy", criterion_2),
    (3, "extended >= baseline >= no re-ranking on the synthetic benchmark", criterion_3),
    (4, "MA-LQE does not lower extended mAP", criterion_4),
    (5, "text-IoU target row [0.4, 0.4, 0.2, 0, 0]", criterion_5),
    (6, "CMC / mAP equal scalar-loop oracles", criterion_6),
    (7, "invariant suites", criterion_7),
    (8, "2000 x 3000 x 512 pipeline under 60 s and 4 GB", criterion_8),
]


def _check(number):
    _, title, fn = CRITERIA[number - 1]
    ok, detail = fn()
    announce(number, title, ok, detail)
    assert ok, detail


def test_criterion_1_baseline_fidelity():
    _check(1)


def test_criterion_2_neighbor_oracle():
    _check(2)


def test_criterion_3_strategy_direction():
    _check(3)


def test_criterion_4_ma_lqe_direction():
    _check(4)


def test_criterion_5_text_iou_pin():
    _check(5)


def test_criterion_6_metric_oracle():
    _check(6)


def test_criterion_7_invariants():
    _check(7)


def test_criterion_8_performance():
    _check(8)


if __name__ == "__main__":
    results = []
    for number, title, fn in CRITERIA:
        ok, detail = fn()
        announce(number, title, ok, detail)
        results.append(ok)
    sys.exit(0 if all(results) else 1)
