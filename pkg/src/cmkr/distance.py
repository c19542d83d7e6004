"""Pairwise Euclidean distances and the joint query/gallery distance matrix."""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .store import EmbeddingSet

# Row partition is fixed so results do not depend on the thread count.
ROW_CHUNK = 256


def _as_matrix(x) -> np.ndarray:
    if isinstance(x, EmbeddingSet):
        x = x.features
    return np.asarray(x, dtype=np.float64)


def _map_chunks(fn, n_rows: int, threads: int = 1):
    starts = range(0, n_rows, ROW_CHUNK)
    spans = [(s, min(s + ROW_CHUNK, n_rows)) for s in starts]
    if threads <= 1 or len(spans) <= 1:
        for span in spans:
            fn(*span)
        return
    with ThreadPoolExecutor(max_workers=threads) as pool:
        list(pool.map(lambda span: fn(*span), spans))


def pairwise_euclidean(a, b, threads: int = 1) -> np.ndarray:
    """Euclidean distances between the rows of ``a`` and ``b`` in float64.

    Uses the Gram expansion for speed and recomputes the near-zero entries
    (where cancellation dominates) from explicit differences.
    """
    xa, xb = _as_matrix(a), _as_matrix(b)
    if xa.ndim != 2 or xb.ndim != 2 or xa.shape[1] != xb.shape[1]:
        raise ValueError(f"dimension mismatch: {xa.shape} vs {xb.shape}")
    na = np.einsum("ij,ij->i", xa, xa)
    nb = np.einsum("ij,ij->i", xb, xb)
    out = np.empty((xa.shape[0], xb.shape[0]), dtype=np.float64)

    def work(lo, hi):
        sq = na[lo:hi, None] + nb[None, :] - 2.0 * (xa[lo:hi] @ xb.T)
        np.maximum(sq, 0.0, out=sq)
        rows, cols = np.nonzero(sq < 1e-2 * (na[lo:hi, None] + nb[None, :]))
        if len(rows):
            diff = xa[lo + rows] - xb[cols]
            sq[rows, cols] = np.einsum("ij,ij->i", diff, diff)
        out[lo:hi] = np.sqrt(sq)

    _map_chunks(work, xa.shape[0], threads)
    return out


@dataclass(frozen=True, eq=False)
class DistMatrix:
    """Square (N_q + N_g) distance matrix; queries first, then gallery."""

    values: np.ndarray
    n_query: int
    n_gallery: int
    modality_of_row: np.ndarray

    def __post_init__(self):
        n = self.n_query + self.n_gallery
        if self.values.shape != (n, n):
            raise ValueError(f"expected {n}x{n} matrix, got {self.values.shape}")
        if len(self.modality_of_row) != n:
            raise ValueError("modality_of_row length mismatch")

    @property
    def size(self) -> int:
        return self.n_query + self.n_gallery

    @property
    def is_query(self) -> np.ndarray:
        return np.arange(self.size) < self.n_query

    @property
    def qq(self):
        return self.values[: self.n_query, : self.n_query]

    @property
    def qg(self):
        return self.values[: self.n_query, self.n_query:]

    @property
    def gq(self):
        return self.values[self.n_query:, : self.n_query]

    @property
    def gg(self):
        return self.values[self.n_query:, self.n_query:]

    def with_values(self, values: np.ndarray) -> "DistMatrix":
        return DistMatrix(values, self.n_query, self.n_gallery, self.modality_of_row)


def assemble_joint(query: EmbeddingSet, gallery: EmbeddingSet, threads: int = 1) -> DistMatrix:
    if len(query) == 0 or len(gallery) == 0:
        raise ValueError("query and gallery must both be non-empty")
    if query.dim != gallery.dim:
        raise ValueError(f"dimension mismatch: {query.dim} vs {gallery.dim}")
    nq = len(query)
    values = np.empty((nq + len(gallery),) * 2)
    values[:nq, :nq] = pairwise_euclidean(query, query, threads)
    values[:nq, nq:] = pairwise_euclidean(query, gallery, threads)
    values[nq:, :nq] = values[:nq, nq:].T
    values[nq:, nq:] = pairwise_euclidean(gallery, gallery, threads)
    # Enforce exact symmetry and a zero diagonal.
    values = np.minimum(values, values.T)
    np.fill_diagonal(values, 0.0)
    modality = np.concatenate([query.modality, gallery.modality])
    return DistMatrix(values, nq, len(gallery), modality)


def row_minmax_normalize(m: np.ndarray) -> np.ndarray:
    """Map each row to [0, 1] by (x - min) / (max - min); constant rows become 0."""
    m = np.asarray(m, dtype=np.float64)
    lo = m.min(axis=1, keepdims=True)
    span = m.max(axis=1, keepdims=True) - lo
    out = np.zeros_like(m)
    ok = span[:, 0] > 0
    out[ok] = (m[ok] - lo[ok]) / span[ok]
    return out


def divided_matrix(d: DistMatrix) -> DistMatrix:
    """Row-normalise the four query/gallery blocks independently."""
    nq = d.n_query
    out = np.empty_like(d.values)
    out[:nq, :nq] = row_minmax_normalize(d.qq)
    out[:nq, nq:] = row_minmax_normalize(d.qg)
    out[nq:, :nq] = row_minmax_normalize(d.gq)
    out[nq:, nq:] = row_minmax_normalize(d.gg)
    return d.with_values(out)


def save_dist(values: np.ndarray, path, name: str = "dist", **meta) -> None:
    """Write ``<name>.bin`` (float64 LE, row-major) and ``<name>.meta.json``."""
    os.makedirs(path, exist_ok=True)
    values = np.ascontiguousarray(values, dtype="<f8")
    header = {"rows": values.shape[0], "cols": values.shape[1], **meta}
    with open(os.path.join(path, f"{name}.meta.json"), "w", encoding="utf-8") as fh:
        json.dump(header, fh)
        fh.write("\n")
    with open(os.path.join(path, f"{name}.bin"), "wb") as fh:
        fh.write(values.tobytes())


def load_dist(path):
    """Return ``(values, meta)``; checks the payload against the header."""
    with open(os.path.join(path, "dist.meta.json"), encoding="utf-8") as fh:
        meta = json.load(fh)
    payload = open(os.path.join(path, "dist.bin"), "rb").read()
    nq, ng = meta.get("n_query"), meta.get("n_gallery")
    if nq is None or ng is None:
        raise ValueError("dist.meta.json must carry n_query and n_gallery")
    rows = meta.get("rows", nq + ng)
    cols = meta.get("cols", nq + ng)
    if (rows, cols) not in ((nq, ng), (nq + ng, nq + ng)):
        raise ValueError(f"shape {rows}x{cols} inconsistent with n_query={nq}, n_gallery={ng}")
    if len(payload) != rows * cols * 8:
        raise ValueError(f"dist.bin has {len(payload)} bytes, header implies {rows * cols * 8}")
    return np.frombuffer(payload, dtype="<f8").reshape(rows, cols).copy(), meta
