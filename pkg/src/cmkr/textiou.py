"""Color-word extraction, text-IoU targets and the KL matching loss."""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import FrozenSet, Iterable, Sequence

import numpy as np
from scipy.special import softmax, xlogy

BASIC_COLORS = (
    "black", "white", "red", "green", "yellow", "blue",
    "brown", "orange", "pink", "purple", "gray",
)

ColorWordSet = FrozenSet[str]

_TOKEN = re.compile(r"[a-z]+")


@dataclass(frozen=True)
class ColorLexicon:
    """Lower-case color terms; multi-word terms win over their parts."""

    terms: tuple

    def __post_init__(self):
        terms = tuple(" ".join(t.lower().split()) for t in self.terms)
        if not terms:
            raise ValueError("color lexicon is empty")
        if len(set(terms)) != len(terms):
            raise ValueError("color lexicon has duplicate terms")
        object.__setattr__(self, "terms", terms)
        object.__setattr__(self, "_by_len", _index(terms))

    @classmethod
    def default(cls) -> "ColorLexicon":
        compounds = [f"{shade} {c}" for shade in ("light", "dark") for c in BASIC_COLORS]
        return cls(BASIC_COLORS + tuple(compounds))

    @classmethod
    def from_file(cls, path) -> "ColorLexicon":
        terms = []
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.split("#", 1)[0].strip()
                if line:
                    terms.append(line)
        return cls(tuple(terms))


def _index(terms):
    by_len = {}
    for t in terms:
        by_len.setdefault(len(t.split()), set()).add(t)
    return sorted(by_len.items(), reverse=True)


def extract_colors(text: str, lexicon: ColorLexicon = None) -> ColorWordSet:
    """Greedy longest-match scan over lower-cased word tokens."""
    lexicon = lexicon or ColorLexicon.default()
    tokens = _TOKEN.findall(text.lower())
    found = set()
    pos = 0
    while pos < len(tokens):
        for width, terms in lexicon._by_len:
            cand = " ".join(tokens[pos:pos + width])
            if pos + width <= len(tokens) and cand in terms:
                found.add(cand)
                pos += width
                break
        else:
            pos += 1
    return frozenset(found)


def text_iou(a: Iterable[str], b: Iterable[str]) -> float:
    a, b = set(a), set(b)
    union = a | b
    return len(a & b) / len(union) if union else 0.0


def iou_matrix(sets: Sequence[Iterable[str]]) -> np.ndarray:
    n = len(sets)
    out = np.empty((n, n))
    for i in range(n):
        for j in range(i, n):
            out[i, j] = out[j, i] = text_iou(sets[i], sets[j])
    return out


def normalize_targets(iou: np.ndarray) -> np.ndarray:
    """Divide each IoU row (self term included) by its sum; all-zero rows go uniform."""
    iou = np.asarray(iou, dtype=np.float64)
    if iou.ndim == 1:
        return normalize_targets(iou[None, :])[0]
    sums = iou.sum(axis=1, keepdims=True)
    out = np.full_like(iou, 1.0 / iou.shape[1])
    ok = sums[:, 0] > 0
    out[ok] = iou[ok] / sums[ok]
    return out


def regularization_targets(sets: Sequence[Iterable[str]]) -> np.ndarray:
    if len(sets) < 1:
        raise ValueError("batch must hold at least one sample")
    return normalize_targets(iou_matrix(sets))


def matching_prob(features_a, features_b, temperature: float = 0.1) -> np.ndarray:
    """Row-wise softmax of cosine similarity / temperature."""
    a = np.asarray(features_a, dtype=np.float64)
    b = np.asarray(features_b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    na, nb = np.linalg.norm(a, axis=1), np.linalg.norm(b, axis=1)
    if (na == 0).any() or (nb == 0).any():
        raise ValueError("zero-norm feature row")
    cos = (a / na[:, None]) @ (b / nb[:, None]).T
    return softmax(cos / temperature, axis=1)


def kl_loss(p, q_hat, epsilon: float = 1e-8) -> float:
    """(1/N_B) sum_n sum_m p log(p / (q_hat + eps)), with 0 log 0 = 0."""
    p = np.asarray(p, dtype=np.float64)
    q_hat = np.asarray(q_hat, dtype=np.float64)
    if p.shape != q_hat.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {q_hat.shape}")
    terms = xlogy(p, p) - xlogy(p, q_hat + epsilon)
    return float(terms.sum() / p.shape[0])


def paired_kl_loss(color_visible, color_infrared, q_hat, temperature: float = 0.1,
                   epsilon: float = 1e-8) -> float:
    """Sum of the four visible/infrared pairings (v-i, i-v, v-v, i-i)."""
    pairs = ((color_visible, color_infrared), (color_infrared, color_visible),
             (color_visible, color_visible), (color_infrared, color_infrared))
    return sum(kl_loss(matching_prob(a, b, temperature), q_hat, epsilon) for a, b in pairs)
