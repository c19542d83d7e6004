"""Seeded synthetic visible/infrared embedding benchmark.

Random stream order (PCG64, one generator per dataset): identity centers,
offset direction, visible noise, infrared noise, then per-identity colors.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from typing import Dict, Tuple

import numpy as np

from .distance import pairwise_euclidean
from .rerank import knn_table
from .store import (INFRARED, VISIBLE, DescriptionSet, EmbeddingSet, concat,
                    l2_normalize)
from .textiou import BASIC_COLORS


def make_rng(seed: int) -> np.random.Generator:
    """The package's only random source: numpy's PCG64 seeded with ``seed``."""
    return np.random.Generator(np.random.PCG64(seed))


@dataclass(frozen=True)
class SynthConfig:
    n_ids: int = 100
    per_modality: int = 10
    dim: int = 64
    modality_offset: float = 1.5
    intra_noise: float = 0.3
    n_cameras: int = 2
    palette_size: int = 11
    seed: int = 0

    def __post_init__(self):
        for name in ("n_ids", "per_modality", "dim", "n_cameras", "palette_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.modality_offset < 0 or self.intra_noise < 0:
            raise ValueError("modality_offset and intra_noise must be >= 0")
        if self.palette_size > len(BASIC_COLORS):
            raise ValueError(f"palette_size must be <= {len(BASIC_COLORS)}")

    @classmethod
    def from_mapping(cls, values: Dict[str, object]) -> "SynthConfig":
        types = {f.name: f.type for f in fields(cls)}
        kwargs = {}
        for key, raw in values.items():
            key = key.replace("-", "_")
            if key not in types:
                raise ValueError(f"unknown synth option {key!r}")
            kwargs[key] = float(raw) if types[key] in (float, "float") else int(raw)
        return cls(**kwargs)


@dataclass(frozen=True, eq=False)
class SynthDataset:
    visible: EmbeddingSet
    infrared: EmbeddingSet
    descriptions: DescriptionSet
    ground_truth: dict


def _render(colors) -> str:
    if len(colors) == 1:
        return f"a person with {colors[0]} top and {colors[0]} pants"
    if len(colors) == 2:
        return f"a person with {colors[0]} top and {colors[1]} pants"
    return f"a person with {colors[0]} and {colors[1]} top and {colors[2]} pants"


def generate(cfg: SynthConfig) -> SynthDataset:
    rng = make_rng(cfg.seed)
    n, m, dim = cfg.n_ids, cfg.per_modality, cfg.dim
    centers = rng.standard_normal((n, dim))
    centers /= np.linalg.norm(centers, axis=1, keepdims=True)
    direction = rng.standard_normal(dim)
    direction /= np.linalg.norm(direction)
    offset = cfg.modality_offset * direction
    scale = cfg.intra_noise / np.sqrt(dim)
    vis_noise = rng.standard_normal((n * m, dim)) * scale
    ir_noise = rng.standard_normal((n * m, dim)) * scale

    ids = np.repeat(np.arange(n), m)
    shot = np.tile(np.arange(m), n)
    base = centers[ids]
    visible = EmbeddingSet(
        (base + vis_noise).astype(np.float32), ids, [VISIBLE] * (n * m),
        shot % cfg.n_cameras, [f"v{i}_{j}" for i, j in zip(ids, shot)])
    infrared = EmbeddingSet(
        (base + offset + ir_noise).astype(np.float32), ids, [INFRARED] * (n * m),
        cfg.n_cameras + shot % cfg.n_cameras, [f"i{i}_{j}" for i, j in zip(ids, shot)])

    palette = BASIC_COLORS[: cfg.palette_size]
    entries = {}
    for ident in range(n):
        count = int(rng.integers(1, min(3, len(palette)) + 1))
        picks = rng.choice(len(palette), size=count, replace=False)
        entries[ident] = _render([palette[p] for p in picks])

    truth = dict(asdict(cfg), offset_direction=[float(x) for x in direction])
    return SynthDataset(visible, infrared, DescriptionSet(entries), truth)


def bias_report(ds: SynthDataset, k: int, normalize: bool = False) -> Tuple[np.ndarray, float]:
    """Per-sample share of other-modality samples among the k nearest
    neighbors in the joint set (self excluded), and its mean.

    Measured in the raw generator space unless ``normalize`` is set.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    joint = concat(ds.visible, ds.infrared)
    if normalize:
        joint = l2_normalize(joint)
    table = knn_table(pairwise_euclidean(joint, joint), k)
    mod = joint.modality
    valid = table >= 0
    other = (mod[np.where(valid, table, 0)] != mod[:, None]) & valid
    frac = other.sum(axis=1) / np.maximum(valid.sum(axis=1), 1)
    return frac, float(frac.mean())
