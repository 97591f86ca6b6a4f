"""Representation diagnostics for trained checkpoints.

Mean-pooled, z-scored video features support between/intra-class Average
Cosine Similarity (ACS) matrices; attribute word embeddings support nearest
neighbor reports (a plot-free stand-in for embedding-space visualization).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
import torch

from .attributes import AttributeVocabulary
from .data import CaptionVocabulary, VideoRecord
from .model import CaptionModel


def pooled_features(
    model: CaptionModel, records: Sequence[VideoRecord], z_score: bool = True
) -> dict[str, np.ndarray]:
    """Per-video mean over the fused tokens, then per-dimension z-scoring
    across the given records. Zero-variance dimensions are centered but not
    divided (a single-record split therefore yields all-zero vectors)."""
    if not records:
        raise ValueError("no records to pool")
    model.eval()
    pooled = {}
    with torch.no_grad():
        for rec in records:
            pooled[rec.video_id] = (
                model.encode(rec.features).mean(dim=0).double().cpu().numpy()
            )
    if not z_score:
        return pooled
    mat = np.stack(list(pooled.values()))
    mean = mat.mean(axis=0)
    std = mat.std(axis=0)
    scale = np.where(std > 0, std, 1.0)
    return {vid: (vec - mean) / scale for vid, vec in pooled.items()}


@dataclass
class AcsMatrix:
    """Square matrix of between/intra-class average cosine similarities.

    The diagonal averages all |A|^2 ordered pairs of a class with itself
    (self-pairs included); flags record singleton classes and zero vectors,
    whose pair cosines count as 0.
    """

    categories: tuple
    values: np.ndarray
    flags: list[str]

    def as_dict(self) -> dict:
        return {
            "categories": list(self.categories),
            "values": self.values.tolist(),
            "flags": self.flags,
        }


def acs(features_by_category: Mapping[object, Sequence[np.ndarray]]) -> AcsMatrix:
    """Average cosine similarity between every pair of categories."""
    if not features_by_category:
        raise ValueError("no categories given")
    categories = tuple(sorted(features_by_category, key=str))
    flags = []
    unit = {}
    for cat in categories:
        vecs = np.stack([np.asarray(v, dtype=np.float64) for v in features_by_category[cat]])
        norms = np.linalg.norm(vecs, axis=1, keepdims=True)
        zero_rows = (norms[:, 0] == 0).sum()
        if zero_rows:
            flags.append(f"category {cat!r}: {int(zero_rows)} zero vector(s) score cosine 0")
        if len(vecs) == 1:
            flags.append(f"category {cat!r}: singleton (intra-class ACS is its self-pair)")
        unit[cat] = vecs / np.where(norms > 0, norms, 1.0)
    values = np.zeros((len(categories), len(categories)))
    for i, a in enumerate(categories):
        for j, b in enumerate(categories):
            values[i, j] = float(np.mean(unit[a] @ unit[b].T))
    return AcsMatrix(categories=categories, values=values, flags=flags)


def acs_by_category(
    model: CaptionModel, records: Sequence[VideoRecord], z_score: bool = True
) -> AcsMatrix:
    """ACS over pooled (z-scored) features, grouped by record category."""
    feats = pooled_features(model, records, z_score=z_score)
    groups: dict[object, list[np.ndarray]] = {}
    for rec in records:
        if rec.category is None:
            raise ValueError(f"video {rec.video_id!r} has no category tag")
        groups.setdefault(rec.category, []).append(feats[rec.video_id])
    return acs(groups)


def attribute_neighbors(
    model: CaptionModel,
    attribute_vocab: AttributeVocabulary,
    caption_vocab: CaptionVocabulary,
    top_n: int = 10,
) -> tuple[dict[str, list[tuple[str, float]]], np.ndarray, list[str]]:
    """Nearest attributes by cosine over the shared word embeddings.

    Returns (neighbor lists, the raw (K, d_h) attribute embedding block in
    attribute order, attribute words missing from the caption vocabulary).
    Neighbor lists never contain the query word; ties break alphabetically.
    """
    present, skipped = [], []
    for word in attribute_vocab.words:
        (present if word in caption_vocab.index_of else skipped).append(word)
    if skipped:
        warnings.warn(
            f"{len(skipped)} attribute words missing from caption vocabulary", stacklevel=2
        )
    if not present:
        raise ValueError("no attribute word exists in the caption vocabulary")
    with torch.no_grad():
        emb = model.word_embedding.weight.double().cpu().numpy()
    block = np.stack([emb[caption_vocab.index_of[w]] for w in present])
    norms = np.linalg.norm(block, axis=1, keepdims=True)
    unit = block / np.where(norms > 0, norms, 1.0)
    cos = unit @ unit.T
    neighbors = {}
    for i, word in enumerate(present):
        others = [(present[j], float(cos[i, j])) for j in range(len(present)) if j != i]
        others.sort(key=lambda t: (-t[1], t[0]))
        neighbors[word] = others[:top_n]
    return neighbors, block, skipped
