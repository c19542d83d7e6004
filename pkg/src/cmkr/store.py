"""Embedding sets, description sets and their on-disk format.

A dataset directory holds ``meta.json`` (labels and shape) next to
``features.bin`` (little-endian float32, row-major).
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

VISIBLE = "visible"
INFRARED = "infrared"
MODALITIES = (VISIBLE, INFRARED)

_FEATURE_DTYPE = np.dtype("<f4")


class DatasetError(ValueError):
    """Base class for malformed embedding datasets."""


class LengthMismatchError(DatasetError):
    pass


class NonFiniteError(DatasetError):
    def __init__(self, row: int):
        super().__init__(f"non-finite feature value in row {row}")
        self.row = row


class UnknownModalityError(DatasetError):
    pass


class ZeroNormError(DatasetError):
    def __init__(self, row: int):
        super().__init__(f"row {row} has zero norm")
        self.row = row


@dataclass(frozen=True, eq=False)
class EmbeddingSet:
    """N x D float32 features with identity, modality and camera labels.

    ``modality`` holds the strings ``"visible"`` / ``"infrared"``; ``keys``
    is either None or one opaque name per row.
    """

    features: np.ndarray
    ids: np.ndarray
    modality: np.ndarray
    cameras: np.ndarray
    keys: Optional[tuple] = None

    def __post_init__(self):
        feats = np.ascontiguousarray(self.features, dtype=np.float32)
        if feats.ndim != 2:
            raise DatasetError(f"features must be 2-D, got shape {feats.shape}")
        n, dim = feats.shape
        if dim < 1:
            raise DatasetError("feature dimension must be >= 1")
        ids = np.asarray(self.ids, dtype=np.int64).reshape(-1)
        cams = np.asarray(self.cameras, dtype=np.int64).reshape(-1)
        mod = np.asarray(self.modality, dtype=object).reshape(-1)
        for name, arr in (("ids", ids), ("modality", mod), ("cameras", cams)):
            if len(arr) != n:
                raise LengthMismatchError(f"{name} has length {len(arr)}, expected {n}")
        keys = self.keys
        if keys is not None:
            keys = tuple(str(k) for k in keys)
            if len(keys) != n:
                raise LengthMismatchError(f"keys has length {len(keys)}, expected {n}")
        if n and (ids.min() < 0 or cams.min() < 0):
            raise DatasetError("ids and cameras must be non-negative")
        for row, tag in enumerate(mod):
            if tag not in MODALITIES:
                raise UnknownModalityError(f"unknown modality {tag!r} in row {row}")
        bad = ~np.isfinite(feats).all(axis=1)
        if bad.any():
            raise NonFiniteError(int(np.flatnonzero(bad)[0]))
        mod = mod.astype(str)
        for arr in (feats, ids, cams, mod):
            arr.setflags(write=False)
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "cameras", cams)
        object.__setattr__(self, "modality", mod)
        object.__setattr__(self, "keys", keys)

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def subset(self, index: Sequence[int]) -> "EmbeddingSet":
        index = np.asarray(index, dtype=np.int64)
        keys = None if self.keys is None else tuple(self.keys[i] for i in index)
        return EmbeddingSet(
            self.features[index], self.ids[index], self.modality[index],
            self.cameras[index], keys)

    def equals(self, other: "EmbeddingSet") -> bool:
        """Exact equality of feature bytes and labels."""
        return (
            self.features.shape == other.features.shape
            and self.features.tobytes() == other.features.tobytes()
            and np.array_equal(self.ids, other.ids)
            and np.array_equal(self.cameras, other.cameras)
            and list(self.modality) == list(other.modality)
            and self.keys == other.keys
        )


def concat(a: EmbeddingSet, b: EmbeddingSet) -> EmbeddingSet:
    if a.dim != b.dim:
        raise ValueError(f"dimension mismatch: {a.dim} vs {b.dim}")
    if (a.keys is None) != (b.keys is None):
        keys = None
    else:
        keys = None if a.keys is None else a.keys + b.keys
    return EmbeddingSet(
        np.vstack([a.features, b.features]),
        np.concatenate([a.ids, b.ids]),
        np.concatenate([a.modality, b.modality]),
        np.concatenate([a.cameras, b.cameras]),
        keys,
    )


def save_embeddings(es: EmbeddingSet, path) -> None:
    os.makedirs(path, exist_ok=True)
    meta = {
        "n": len(es),
        "dim": es.dim,
        "dtype": "f32",
        "order": "row-major",
        "ids": [int(x) for x in es.ids],
        "modality": [str(x) for x in es.modality],
        "cameras": [int(x) for x in es.cameras],
    }
    if es.keys is not None:
        meta["keys"] = list(es.keys)
    with open(os.path.join(path, "meta.json"), "w", encoding="utf-8") as fh:
        json.dump(meta, fh)
        fh.write("\n")
    with open(os.path.join(path, "features.bin"), "wb") as fh:
        fh.write(es.features.astype(_FEATURE_DTYPE, copy=False).tobytes(order="C"))


def load_embeddings(path) -> EmbeddingSet:
    meta_path = os.path.join(path, "meta.json")
    bin_path = os.path.join(path, "features.bin")
    for p in (meta_path, bin_path):
        if not os.path.isfile(p):
            raise FileNotFoundError(f"missing dataset file: {p}")
    with open(meta_path, encoding="utf-8") as fh:
        meta = json.load(fh)
    try:
        n, dim = int(meta["n"]), int(meta["dim"])
        ids, modality, cameras = meta["ids"], meta["modality"], meta["cameras"]
    except KeyError as exc:
        raise DatasetError(f"meta.json lacks field {exc.args[0]!r}") from None
    if meta.get("dtype", "f32") != "f32" or meta.get("order", "row-major") != "row-major":
        raise DatasetError("only dtype 'f32' with 'row-major' order is supported")
    payload = open(bin_path, "rb").read()
    if len(payload) != n * dim * 4:
        raise LengthMismatchError(
            f"features.bin has {len(payload)} bytes, header implies {n * dim * 4}")
    feats = np.frombuffer(payload, dtype=_FEATURE_DTYPE).reshape(n, dim)
    return EmbeddingSet(feats, ids, modality, cameras, meta.get("keys"))


def l2_normalize(es: EmbeddingSet) -> EmbeddingSet:
    """Scale every row to unit Euclidean norm (norm taken in float64)."""
    x = es.features.astype(np.float64)
    norms = np.sqrt(np.einsum("ij,ij->i", x, x))
    zero = np.flatnonzero(norms == 0)
    if len(zero):
        raise ZeroNormError(int(zero[0]))
    return EmbeddingSet(
        (x / norms[:, None]).astype(np.float32), es.ids, es.modality, es.cameras, es.keys)


@dataclass(frozen=True)
class DescriptionSet:
    """Mapping identity -> coarse description sentence."""

    entries: dict = field(default_factory=dict)

    def __post_init__(self):
        for key, text in self.entries.items():
            if not isinstance(text, str) or not text.strip():
                raise DatasetError(f"empty description for identity {key}")


def save_descriptions(ds: DescriptionSet, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for key in sorted(ds.entries):
            text = ds.entries[key].replace("\t", " ").replace("\n", " ")
            fh.write(f"{key}\t{text}\n")


def load_descriptions(path) -> DescriptionSet:
    entries = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t", 1)
            if len(parts) != 2:
                raise DatasetError(f"{path}:{lineno}: expected 'id<TAB>description'")
            key = int(parts[0])
            if key in entries:
                raise DatasetError(f"{path}:{lineno}: duplicate identity {key}")
            entries[key] = parts[1]
    return DescriptionSet(entries)
