"""Cross-modal k-reciprocal re-ranking.

Neighbor sets are plain lists with one int64 index array per sample, in the
joint (query then gallery) index space. Neighbor features are
``scipy.sparse.csr_matrix`` rows over the same space.

Conventions shared by every search here: a sample is never its own k-NN,
distance ties go to the smaller index, and the sample itself is included in
its own neighbor feature and in its query-expansion neighborhood.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import Callable, List, Optional

import numpy as np
import scipy.sparse as sp

from .distance import ROW_CHUNK, DistMatrix, assemble_joint, divided_matrix
from .store import EmbeddingSet, l2_normalize

NeighborSet = List[np.ndarray]

STRATEGIES = ("baseline", "constrained", "divided", "extended")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RerankConfig:
    k1: int = 20
    k2: int = 6
    k3: int = 2
    lambda_jaccard: float = 0.7
    strategy: str = "extended"
    use_neighbor_expansion: bool = True
    use_ma_lqe: bool = True
    gaussian_weights: bool = True

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"unknown strategy {self.strategy!r}; choose from {STRATEGIES}")
        if self.k1 < 1 or self.k2 < 1:
            raise ConfigError("k1 and k2 must be positive")
        if not 0 <= self.k3 <= self.k2 <= self.k1:
            raise ConfigError(
                f"need 0 <= k3 <= k2 <= k1, got k1={self.k1}, k2={self.k2}, k3={self.k3}")
        if not 0.0 <= self.lambda_jaccard <= 1.0:
            raise ConfigError(f"lambda_jaccard must lie in [0, 1], got {self.lambda_jaccard}")

    def to_dict(self) -> dict:
        return asdict(self)


# -- neighbor search ---------------------------------------------------------

Domain = Optional[Callable[[int, int], np.ndarray]]


def cross_side_domain(d: DistMatrix) -> Domain:
    """Queries search the gallery block and gallery samples the query block."""
    side = d.is_query
    return lambda lo, hi: side[lo:hi, None] != side[None, :]


def modality_domain(d: DistMatrix, same: bool) -> Domain:
    mod = np.asarray(d.modality_of_row)
    if same:
        return lambda lo, hi: mod[lo:hi, None] == mod[None, :]
    return lambda lo, hi: mod[lo:hi, None] != mod[None, :]


def knn(d: DistMatrix, i: int, k: int, domain=None) -> np.ndarray:
    """The ``k`` nearest members of ``domain`` to sample ``i`` (self excluded).

    ``domain`` is an index subset of the joint space; None means everything.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    n = d.size
    cand = np.arange(n) if domain is None else np.unique(np.asarray(domain, dtype=np.int64))
    cand = cand[cand != i]
    if len(cand) == 0:
        raise ValueError(f"empty search domain for sample {i}")
    row = d.values[i, cand]
    order = np.lexsort((cand, row))
    return cand[order[:k]]


def knn_table(values: np.ndarray, k: int, domain: Domain = None, threads: int = 1) -> np.ndarray:
    """Row-wise k-NN for every sample; short rows are padded with -1."""
    n = values.shape[0]
    k = max(0, min(k, n))
    table = np.full((n, k), -1, dtype=np.int64)
    if k == 0:
        return table

    def work(lo, hi):
        sub = np.array(values[lo:hi], dtype=np.float64)
        if domain is not None:
            sub[~domain(lo, hi)] = np.inf
        sub[np.arange(hi - lo), np.arange(lo, hi)] = np.inf
        # Everything up to the k-th smallest value, then an exact (value, index) sort.
        kth = np.partition(sub, k - 1, axis=1)[:, k - 1:k] if k < n else np.full((hi - lo, 1), np.inf)
        r, c = np.nonzero(sub <= kth)
        vals = sub[r, c]
        order = np.lexsort((c, vals, r))
        r, c, vals = r[order], c[order], vals[order]
        first = np.searchsorted(r, np.arange(hi - lo))
        slot = np.arange(len(r)) - first[r]
        keep = (slot < k) & np.isfinite(vals)
        table[lo + r[keep], slot[keep]] = c[keep]

    _run_chunks(work, n, threads)
    return table


def _run_chunks(fn, n, threads):
    spans = [(s, min(s + ROW_CHUNK, n)) for s in range(0, n, ROW_CHUNK)]
    if threads <= 1 or len(spans) <= 1:
        for span in spans:
            fn(*span)
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(lambda span: fn(*span), spans))


def mutual_neighbors(table: np.ndarray) -> NeighborSet:
    """Keep j in row i only if i also appears in row j (k-NN order preserved)."""
    n, k = table.shape
    rows = np.repeat(np.arange(n, dtype=np.int64), k)
    cols = table.reshape(-1)
    ok = cols >= 0
    rows, cols = rows[ok], cols[ok]
    forward = np.sort(rows * n + cols)
    backward = cols * n + rows
    pos = np.searchsorted(forward, backward)
    pos[pos == len(forward)] = 0
    mutual = forward[pos] == backward if len(forward) else np.zeros(0, bool)
    keep = np.zeros(n * k, dtype=bool)
    keep[np.flatnonzero(ok)[mutual]] = True
    keep = keep.reshape(n, k)
    return [table[i][keep[i]] for i in range(n)]


def k_reciprocal(d: DistMatrix, k1: int, domain: Domain = None, threads: int = 1) -> NeighborSet:
    return mutual_neighbors(knn_table(d.values, k1, domain, threads))


def k_reciprocal_constrained(d: DistMatrix, k1: int, threads: int = 1) -> NeighborSet:
    if d.n_query == 0 or d.n_gallery == 0:
        raise ValueError("constrained search needs non-empty query and gallery")
    return k_reciprocal(d, k1, cross_side_domain(d), threads)


def k_reciprocal_divided(d: DistMatrix, k1: int, threads: int = 1) -> NeighborSet:
    return k_reciprocal(divided_matrix(d), k1, None, threads)


def union_neighbors(a: NeighborSet, b: NeighborSet) -> NeighborSet:
    return [np.union1d(x, y).astype(np.int64) for x, y in zip(a, b)]


def k_reciprocal_extended(d: DistMatrix, k1: int, threads: int = 1) -> NeighborSet:
    return union_neighbors(k_reciprocal(d, k1, None, threads),
                           k_reciprocal_constrained(d, k1, threads))


def expand_reciprocal(r: NeighborSet, d: DistMatrix, k1: int,
                      half: Optional[NeighborSet] = None) -> NeighborSet:
    """Grow each set with the half-size reciprocal sets of its members.

    ``R(j, ceil(k1/2))`` is merged into ``R(i)`` when at least two thirds of
    it already lies in ``R(i)``; i itself is never added. ``half`` supplies
    those smaller sets (for non-baseline strategies); by default they come
    from plain search on ``d``.
    """
    if half is None:
        half = k_reciprocal(d, math.ceil(k1 / 2))
    half_sets = [set(h.tolist()) for h in half]
    out = []
    for i, members in enumerate(r):
        base = set(members.tolist())
        grown = set(base)
        for j in members.tolist():
            cand = half_sets[j]
            if 3 * len(base & cand) >= 2 * len(cand):
                grown |= cand
        grown.discard(i)
        out.append(np.array(sorted(grown), dtype=np.int64))
    return out


# -- neighbor features -------------------------------------------------------

def encode_neighbor_features(r: NeighborSet, d: DistMatrix, gaussian: bool = True) -> sp.csr_matrix:
    """Sparse rows with weight exp(-d(i, j)) on R(i) and on i itself."""
    n = d.size
    indptr = [0]
    indices = []
    for i, members in enumerate(r):
        idx = np.union1d(members, [i]).astype(np.int64)
        indices.append(idx)
        indptr.append(indptr[-1] + len(idx))
    cols = np.concatenate(indices) if indices else np.zeros(0, np.int64)
    rows = np.repeat(np.arange(n), np.diff(indptr))
    data = np.exp(-d.values[rows, cols]) if gaussian else np.ones(len(cols))
    v = sp.csr_matrix((data, cols, np.asarray(indptr)), shape=(n, n))
    v.eliminate_zeros()
    return v


def _average_rows(v: sp.csr_matrix, groups: List[np.ndarray]) -> sp.csr_matrix:
    n = v.shape[0]
    lengths = np.array([len(g) for g in groups])
    cols = np.concatenate(groups).astype(np.int64)
    rows = np.repeat(np.arange(n), lengths)
    weights = 1.0 / np.repeat(lengths, lengths)
    avg = sp.csr_matrix((weights, (rows, cols)), shape=(n, n))
    out = (avg @ v).tocsr()
    out.sort_indices()
    out.eliminate_zeros()
    return out


def lqe(v: sp.csr_matrix, d: DistMatrix, k2: int, table: Optional[np.ndarray] = None) -> sp.csr_matrix:
    """Average each feature row over the sample and its k2 - 1 nearest neighbors."""
    if k2 < 1:
        raise ValueError("k2 must be >= 1")
    if table is None:
        table = knn_table(d.values, k2 - 1)
    table = table[:, : k2 - 1]
    groups = [np.concatenate([[i], row[row >= 0]]) for i, row in enumerate(table)]
    return _average_rows(v, groups)


def ma_lqe(v: sp.csr_matrix, d: DistMatrix, k2: int, k3: int,
           same_table: Optional[np.ndarray] = None,
           other_table: Optional[np.ndarray] = None) -> sp.csr_matrix:
    """Modality-aware expansion: k2 - k3 own-modality members (self included)
    plus k3 nearest samples of the other modality.

    Divides by the neighborhood's actual size, which is k2 unless one
    modality runs short. An empty neighborhood keeps the row unchanged.
    """
    if not 0 <= k3 <= k2:
        raise ValueError("need 0 <= k3 <= k2")
    n_intra = k2 - k3
    if same_table is None:
        same_table = knn_table(d.values, max(n_intra - 1, 0), modality_domain(d, True))
    if other_table is None:
        other_table = knn_table(d.values, k3, modality_domain(d, False))
    same_table = same_table[:, : max(n_intra - 1, 0)]
    other_table = other_table[:, :k3]
    groups = []
    for i in range(d.size):
        intra = np.concatenate([[i], same_table[i]]) if n_intra > 0 else np.zeros(0, np.int64)
        cross = other_table[i]
        g = np.concatenate([intra[intra >= 0], cross[cross >= 0]])
        groups.append(g if len(g) else np.array([i]))
    return _average_rows(v, groups)


# -- Jaccard distance and blending -------------------------------------------

def jaccard_distance(v, rows=None, cols=None, threads: int = 1) -> np.ndarray:
    """1 - sum(min) / sum(max) between neighbor-feature rows.

    ``rows``/``cols`` select the block to compute (default: all x all). The
    max-sum is taken as sum_i + sum_j - min-sum; per-pair sums run over the
    shared support in ascending column order, so the full matrix is exactly
    symmetric.
    """
    v = sp.csr_matrix(v, dtype=np.float64)
    v.sum_duplicates()
    v.sort_indices()
    if v.nnz and v.data.min() < 0:
        raise ValueError("neighbor features must be non-negative")
    n = v.shape[0]
    rows = np.arange(n) if rows is None else np.asarray(rows, dtype=np.int64)
    cols = np.arange(n) if cols is None else np.asarray(cols, dtype=np.int64)
    totals = np.asarray(v.sum(axis=1)).ravel()
    g = v[cols].tocsc()
    g.sort_indices()
    col_totals = totals[cols]
    out = np.empty((len(rows), len(cols)))

    def work(lo, hi):
        for r in range(lo, hi):
            i = rows[r]
            a, b = v.indptr[i], v.indptr[i + 1]
            feat_cols, feat_vals = v.indices[a:b], v.data[a:b]
            starts = g.indptr[feat_cols]
            lengths = g.indptr[feat_cols + 1] - starts
            total = int(lengths.sum())
            if total:
                offsets = np.repeat(starts - np.cumsum(lengths) + lengths, lengths)
                flat = offsets + np.arange(total)
                mins = np.minimum(np.repeat(feat_vals, lengths), g.data[flat])
                min_sum = np.bincount(g.indices[flat], weights=mins, minlength=len(cols))
            else:
                min_sum = np.zeros(len(cols))
            max_sum = (totals[i] + col_totals) - min_sum
            with np.errstate(divide="ignore", invalid="ignore"):
                dist = np.where(max_sum > 0, 1.0 - min_sum / max_sum, 1.0)
            out[r] = np.clip(dist, 0.0, 1.0)

    _run_chunks(work, len(rows), threads)
    out[rows[:, None] == cols[None, :]] = 0.0
    return out


def blend(d_jacc: np.ndarray, d_orig: np.ndarray, lambda_jaccard: float) -> np.ndarray:
    d_jacc = np.asarray(d_jacc, dtype=np.float64)
    d_orig = np.asarray(d_orig, dtype=np.float64)
    if d_jacc.shape != d_orig.shape:
        raise ValueError(f"shape mismatch: {d_jacc.shape} vs {d_orig.shape}")
    return lambda_jaccard * d_jacc + (1.0 - lambda_jaccard) * d_orig


# -- pipeline ----------------------------------------------------------------

def reciprocal_neighbors(d: DistMatrix, k1: int, strategy: str,
                         expansion: bool = True, threads: int = 1) -> NeighborSet:
    """Strategy-selected k-reciprocal sets, optionally expanded.

    Expansion draws its half-size sets from the same strategy.
    """
    search = divided_matrix(d) if strategy == "divided" else d
    need_full = strategy in ("baseline", "divided", "extended")
    need_cross = strategy in ("constrained", "extended")
    full = knn_table(search.values, k1, None, threads) if need_full else None
    cross = knn_table(d.values, k1, cross_side_domain(d), threads) if need_cross else None

    def at(k):
        parts = []
        if full is not None:
            parts.append(mutual_neighbors(full[:, :k]))
        if cross is not None:
            parts.append(mutual_neighbors(cross[:, :k]))
        return parts[0] if len(parts) == 1 else union_neighbors(*parts)

    r = at(k1)
    if expansion:
        r = expand_reciprocal(r, search, k1, half=at(math.ceil(k1 / 2)))
    return r


def cmkr_jaccard(d: DistMatrix, cfg: RerankConfig, threads: int = 1) -> np.ndarray:
    """Query x gallery Jaccard distances of the refined neighbor features."""
    nq = d.n_query
    search = divided_matrix(d) if cfg.strategy == "divided" else d
    r = reciprocal_neighbors(d, cfg.k1, cfg.strategy, cfg.use_neighbor_expansion, threads)
    v = encode_neighbor_features(r, d, cfg.gaussian_weights)
    if cfg.use_ma_lqe:
        v = ma_lqe(
            v, search, cfg.k2, cfg.k3,
            knn_table(search.values, max(cfg.k2 - cfg.k3 - 1, 0), modality_domain(d, True), threads),
            knn_table(search.values, cfg.k3, modality_domain(d, False), threads))
    elif cfg.k2 > 1:
        v = lqe(v, search, cfg.k2, knn_table(search.values, cfg.k2 - 1, None, threads))
    return jaccard_distance(v, np.arange(nq), np.arange(nq, d.size), threads)


def cmkr_distance(d: DistMatrix, cfg: RerankConfig, threads: int = 1) -> np.ndarray:
    """Re-ranked query x gallery distances for a prepared joint matrix."""
    return blend(cmkr_jaccard(d, cfg, threads), d.qg, cfg.lambda_jaccard)


def cmkr_pipeline(query: EmbeddingSet, gallery: EmbeddingSet, cfg: RerankConfig = RerankConfig(),
                  normalize: bool = True, threads: int = 1) -> np.ndarray:
    """End-to-end re-ranking; returns the N_q x N_g final distance block."""
    if normalize:
        query, gallery = l2_normalize(query), l2_normalize(gallery)
    return cmkr_distance(assemble_joint(query, gallery, threads), cfg, threads)
