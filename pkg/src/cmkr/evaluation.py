"""Ranking, CMC / mAP, single-shot gallery sampling and distance-gap statistics."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from typing import List, Optional

import numpy as np

from .distance import assemble_joint, pairwise_euclidean
from .rerank import RerankConfig, blend, cmkr_jaccard, cmkr_pipeline
from .store import EmbeddingSet, l2_normalize
from .synth import make_rng


class ProtocolError(ValueError):
    pass


def standard_mask(query: EmbeddingSet, gallery: EmbeddingSet) -> np.ndarray:
    """Valid unless the gallery image shares both identity and camera with the query."""
    same_id = query.ids[:, None] == gallery.ids[None, :]
    same_cam = query.cameras[:, None] == gallery.cameras[None, :]
    return ~(same_id & same_cam)


def rank(dist_qg: np.ndarray, mask: Optional[np.ndarray] = None) -> List[np.ndarray]:
    dist_qg = np.asarray(dist_qg, dtype=np.float64)
    if mask is None:
        mask = np.ones(dist_qg.shape, dtype=bool)
    if mask.shape != dist_qg.shape:
        raise ValueError(f"mask shape {mask.shape} does not match distances {dist_qg.shape}")
    counts = mask.sum(axis=1)
    empty = np.flatnonzero(counts == 0)
    if len(empty):
        raise ProtocolError(f"query {int(empty[0])} has no valid gallery entries")
    # Masked entries sort last; row-wise (value, index) order.
    keyed = np.where(mask, dist_qg, np.inf)
    order = np.argsort(keyed, axis=1, kind="stable")
    return [order[q, :counts[q]] for q in range(len(order))]


def _relevance(rankings, query_ids, gallery_ids):
    gallery_ids = np.asarray(gallery_ids)
    return [gallery_ids[r] == qid for r, qid in zip(rankings, query_ids)]


def cmc(rankings, query_ids, gallery_ids, max_rank: int = 20) -> np.ndarray:
    """Fraction of queries whose first correct match sits at rank <= r + 1."""
    hits = np.zeros(max_rank)
    rel = _relevance(rankings, query_ids, gallery_ids)
    for good in rel:
        pos = np.flatnonzero(good)
        if len(pos) and pos[0] < max_rank:
            hits[pos[0]:] += 1
    return hits / max(len(rel), 1)


def average_precision(good: np.ndarray) -> float:
    pos = np.flatnonzero(good)
    if len(pos) == 0:
        raise ProtocolError("ranking contains no positive")
    # Sequential (cumsum) accumulation keeps the summation order fixed.
    return float(np.cumsum(np.arange(1, len(pos) + 1) / (pos + 1))[-1] / len(pos))


def map_score(rankings, query_ids, gallery_ids) -> float:
    aps = []
    for q, good in enumerate(_relevance(rankings, query_ids, gallery_ids)):
        if not good.any():
            raise ProtocolError(f"query {q} has no valid positive in the gallery")
        aps.append(average_precision(good))
    return float(np.cumsum(aps)[-1] / len(aps))


@dataclass
class GapReport:
    delta_mu: float
    intra_mean: float
    inter_mean: float
    bin_edges: np.ndarray
    intra_hist: np.ndarray
    inter_hist: np.ndarray


def distance_gap_report(dist_qg, query_ids, gallery_ids, bins: int = 50) -> GapReport:
    """Mean inter-identity minus mean intra-identity distance, plus histograms."""
    dist_qg = np.asarray(dist_qg, dtype=np.float64)
    same = np.asarray(query_ids)[:, None] == np.asarray(gallery_ids)[None, :]
    intra, inter = dist_qg[same], dist_qg[~same]
    if len(intra) == 0 or len(inter) == 0:
        raise ProtocolError("need at least one intra-identity and one inter-identity pair")
    lo, hi = float(dist_qg.min()), float(dist_qg.max())
    if hi == lo:
        hi = lo + 1.0
    edges = np.linspace(lo, hi, bins + 1)
    return GapReport(
        delta_mu=float(inter.mean() - intra.mean()),
        intra_mean=float(intra.mean()),
        inter_mean=float(inter.mean()),
        bin_edges=edges,
        intra_hist=np.histogram(intra, edges)[0],
        inter_hist=np.histogram(inter, edges)[0],
    )


def sample_gallery_single_shot(gallery: EmbeddingSet, seed: int) -> np.ndarray:
    """One image per (identity, camera), drawn in ascending (id, camera) order."""
    rng = make_rng(seed)
    groups = {}
    for idx, key in enumerate(zip(gallery.ids.tolist(), gallery.cameras.tolist())):
        groups.setdefault(key, []).append(idx)
    picks = [members[int(rng.integers(len(members)))] for _, members in sorted(groups.items())]
    return np.array(sorted(picks), dtype=np.int64)


@dataclass
class MetricsReport:
    cmc: np.ndarray
    map: float
    delta_mu: float
    n_queries_evaluated: int
    per_trial: List[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        out = {
            "cmc": [float(x) for x in self.cmc],
            "map": float(self.map),
            "delta_mu": float(self.delta_mu),
            "n_queries_evaluated": int(self.n_queries_evaluated),
        }
        if self.per_trial:
            out["per_trial"] = self.per_trial
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict()) + "\n"


def evaluate_block(dist_qg, query: EmbeddingSet, gallery: EmbeddingSet,
                   max_rank: int = 20, mask=None) -> MetricsReport:
    """Metrics for one query x gallery distance block under a protocol mask."""
    if mask is None:
        mask = standard_mask(query, gallery)
    positives = (query.ids[:, None] == gallery.ids[None, :]) & mask
    missing = np.flatnonzero(~positives.any(axis=1))
    if len(missing):
        q = int(missing[0])
        name = query.keys[q] if query.keys is not None else q
        raise ProtocolError(f"query {name} has no valid positive under the protocol mask")
    rankings = rank(dist_qg, mask)
    gap = distance_gap_report(dist_qg, query.ids, gallery.ids)
    return MetricsReport(
        cmc=cmc(rankings, query.ids, gallery.ids, max_rank),
        map=map_score(rankings, query.ids, gallery.ids),
        delta_mu=gap.delta_mu,
        n_queries_evaluated=len(query),
    )


def raw_distance(query: EmbeddingSet, gallery: EmbeddingSet, normalize: bool = True,
                 threads: int = 1) -> np.ndarray:
    if normalize:
        query, gallery = l2_normalize(query), l2_normalize(gallery)
    return pairwise_euclidean(query, gallery, threads)


def multi_trial_eval(query: EmbeddingSet, gallery: EmbeddingSet, cfg=None, trials: int = 10,
                     seed: int = 0, max_rank: int = 20, normalize: bool = True,
                     threads: int = 1) -> MetricsReport:
    """Average metrics over single-shot gallery draws with seeds seed .. seed+trials-1.

    ``cfg`` is a RerankConfig for re-ranked distances, or None for raw ones.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    reports = []
    for t in range(trials):
        sub = gallery.subset(sample_gallery_single_shot(gallery, seed + t))
        if cfg is None:
            dist = raw_distance(query, sub, normalize, threads)
        else:
            dist = cmkr_pipeline(query, sub, cfg, normalize, threads)
        reports.append(evaluate_block(dist, query, sub, max_rank))
    per_trial = [dict(r.to_dict(), seed=seed + t) for t, r in enumerate(reports)]
    return MetricsReport(
        cmc=np.mean([r.cmc for r in reports], axis=0),
        map=float(np.mean([r.map for r in reports])),
        delta_mu=float(np.mean([r.delta_mu for r in reports])),
        n_queries_evaluated=len(query),
        per_trial=per_trial if trials > 1 else [],
    )


def write_rank_list(path, dist_qg, rankings, query_keys, gallery_keys, max_rank: int = 20) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["query_key", "rank", "gallery_key", "distance"])
        for q, order in enumerate(rankings):
            for r, g in enumerate(order[:max_rank], 1):
                writer.writerow([query_keys[q], r, gallery_keys[g], repr(float(dist_qg[q, g]))])


def grid_search(query: EmbeddingSet, gallery: EmbeddingSet, base: RerankConfig,
                k1s=(10, 20, 30), k2s=(3, 6), k3s=(1, 2), lambdas=(0.3, 0.5, 0.7, 0.9),
                max_rank: int = 20, normalize: bool = True, threads: int = 1):
    """Exhaustive search over (k1, k2, k3, lambda) for the best mAP.

    Invalid combinations (k3 > k2 > k1) are skipped; k3 is only varied when
    MA-LQE is on. Returns ``(best_cfg, best_report, rows)`` where ``rows``
    lists every evaluated configuration with its mAP. Ties keep the first.
    """
    if normalize:
        query, gallery = l2_normalize(query), l2_normalize(gallery)
    joint = assemble_joint(query, gallery, threads)
    mask = standard_mask(query, gallery)
    k3_values = k3s if base.use_ma_lqe else (min(k3s),)
    best = None
    rows = []
    for k1 in k1s:
        for k2 in k2s:
            for k3 in k3_values:
                if not 0 <= k3 <= k2 <= k1:
                    continue
                cfg = replace(base, k1=k1, k2=k2, k3=k3)
                d_jacc = cmkr_jaccard(joint, cfg, threads)
                for lam in lambdas:
                    cfg_l = replace(cfg, lambda_jaccard=lam)
                    report = evaluate_block(blend(d_jacc, joint.qg, lam), query, gallery, max_rank, mask)
                    rows.append({**cfg_l.to_dict(), "map": report.map})
                    if best is None or report.map > best[1].map:
                        best = (cfg_l, report)
    if best is None:
        raise ValueError("grid contains no valid configuration")
    return best[0], best[1], rows
