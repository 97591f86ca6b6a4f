"""Caption quality, caption diversity, and attribute ranking metrics.

Conventions
-----------
* bleu4: corpus-level, uniform 1-4 gram weights, clipped (modified)
  precisions, brevity penalty from per-segment closest reference lengths
  (ties prefer the shorter reference). No smoothing. Range [0, 1].
* rouge_l: per-sample LCS F-measure with beta = 1.2, max over references,
  mean over samples. Range [0, 1].
* cider_d: tf-idf n-gram cosine for n = 1..4 with candidate-count clipping,
  Gaussian length penalty (sigma = 6), idf from the reference corpus,
  averaged over n and references, x10. Range [0, 10].
* MetricReport carries the x100 reporting scale for the quality metrics, so
  the partial Meta-Sum is comparable with the usual captioning tables
  (METEOR is intentionally absent and the sum is labeled accordingly).

All candidate/reference text is run through the shared caption tokenizer, so
casing and punctuation never affect scores.
"""

from __future__ import annotations

import math
import warnings
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
import torch

from .attributes import AttributeVocabulary, MultiHotLabel, make_multi_hot_label, tokenize_caption
from .data import SPECIAL_TOKENS, VideoRecord, load_manifest
from .decoding import generate_caption
from .mil import merged_probabilities
from .model import CaptionModel
from .objectives import take_frames
from .training import load_checkpoint

MAX_NGRAM = 4


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def _check_pairs(candidates: Mapping[str, str], references: Mapping[str, Sequence[str]]):
    if not candidates:
        raise ValueError("empty candidate set")
    missing = [vid for vid in candidates if not references.get(vid)]
    if missing:
        raise ValueError(f"candidates without references: {missing[:5]}")


def bleu4(candidates: Mapping[str, str], references: Mapping[str, Sequence[str]]) -> float:
    _check_pairs(candidates, references)
    clipped = np.zeros(MAX_NGRAM)
    totals = np.zeros(MAX_NGRAM)
    cand_len, ref_len = 0, 0
    for vid, cand in candidates.items():
        cand_toks = tokenize_caption(cand)
        ref_toks = [tokenize_caption(r) for r in references[vid]]
        cand_len += len(cand_toks)
        # closest reference length; ties go to the shorter reference
        ref_len += min((abs(len(r) - len(cand_toks)), len(r)) for r in ref_toks)[1]
        for n in range(1, MAX_NGRAM + 1):
            counts = _ngrams(cand_toks, n)
            max_ref = Counter()
            for r in ref_toks:
                for gram, c in _ngrams(r, n).items():
                    max_ref[gram] = max(max_ref[gram], c)
            totals[n - 1] += sum(counts.values())
            clipped[n - 1] += sum(min(c, max_ref[g]) for g, c in counts.items())
    if (clipped == 0).any() or (totals == 0).any():
        return 0.0
    log_precision = np.log(clipped / totals).mean()
    bp = 1.0 if cand_len > ref_len else math.exp(1.0 - ref_len / max(cand_len, 1))
    return float(bp * math.exp(log_precision))


def _lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, 1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[-1]))
        prev = cur
    return prev[-1]


def rouge_l(
    candidates: Mapping[str, str],
    references: Mapping[str, Sequence[str]],
    beta: float = 1.2,
) -> float:
    _check_pairs(candidates, references)
    scores = []
    for vid, cand in candidates.items():
        cand_toks = tokenize_caption(cand)
        best = 0.0
        for ref in references[vid]:
            ref_toks = tokenize_caption(ref)
            lcs = _lcs_length(cand_toks, ref_toks)
            if lcs == 0 or not cand_toks or not ref_toks:
                continue
            prec = lcs / len(cand_toks)
            rec = lcs / len(ref_toks)
            best = max(best, (1 + beta**2) * prec * rec / (rec + beta**2 * prec))
        scores.append(best)
    return float(np.mean(scores))


def cider_d(
    candidates: Mapping[str, str],
    references: Mapping[str, Sequence[str]],
    sigma: float = 6.0,
) -> float:
    _check_pairs(candidates, references)
    if len(candidates) < 2:
        warnings.warn("cider_d over a single video: idf is degenerate", stacklevel=2)

    ref_tokens = {
        vid: [tokenize_caption(r) for r in refs] for vid, refs in references.items()
    }
    doc_freq: Counter = Counter()
    for vid in candidates:
        grams = set()
        for toks in ref_tokens[vid]:
            for n in range(1, MAX_NGRAM + 1):
                grams.update(_ngrams(toks, n))
        doc_freq.update(grams)
    log_corpus = math.log(len(candidates))

    def tfidf(tokens: Sequence[str]):
        vecs, norms = [], []
        for n in range(1, MAX_NGRAM + 1):
            vec = {
                gram: tf * (log_corpus - math.log(max(1.0, doc_freq[gram])))
                for gram, tf in _ngrams(tokens, n).items()
            }
            vecs.append(vec)
            norms.append(math.sqrt(sum(v * v for v in vec.values())))
        return vecs, norms, len(tokens)

    scores = []
    for vid, cand in candidates.items():
        c_vecs, c_norms, c_len = tfidf(tokenize_caption(cand))
        per_ref = []
        for toks in ref_tokens[vid]:
            r_vecs, r_norms, r_len = tfidf(toks)
            penalty = math.exp(-((c_len - r_len) ** 2) / (2 * sigma**2))
            vals = []
            for n in range(MAX_NGRAM):
                num = sum(
                    min(w, r_vecs[n].get(g, 0.0)) * r_vecs[n].get(g, 0.0)
                    for g, w in c_vecs[n].items()
                )
                if c_norms[n] > 0 and r_norms[n] > 0:
                    num /= c_norms[n] * r_norms[n]
                else:
                    num = 0.0
                vals.append(num * penalty)
            per_ref.append(float(np.mean(vals)))
        scores.append(10.0 * float(np.mean(per_ref)))
    return float(np.mean(scores))


def diversity_metrics(
    candidates: Mapping[str, str], train_captions: Iterable[str]
) -> tuple[float, float, int]:
    """(novel %, unique %, distinct words used). Matching is over tokenized
    captions; special-token strings never count toward the word tally."""
    cand_tokens = [tuple(tokenize_caption(c)) for c in candidates.values()]
    if not cand_tokens:
        return 0.0, 0.0, 0
    train_set = {tuple(tokenize_caption(c)) for c in train_captions}
    novel = sum(1 for c in cand_tokens if c not in train_set)
    multiplicity = Counter(cand_tokens)
    unique = sum(1 for c in cand_tokens if multiplicity[c] == 1)
    # special markers may appear bracket-stripped after tokenization
    excluded = set(SPECIAL_TOKENS) | {tokenize_caption(s)[0] for s in SPECIAL_TOKENS}
    words = set().union(*cand_tokens) - excluded
    n = len(cand_tokens)
    return 100.0 * novel / n, 100.0 * unique / n, len(words)


def average_precision(scores: Sequence[float], positives: Sequence[int], ids: Sequence[str]) -> float:
    """AP of one attribute's video ranking; ties break by ascending video id."""
    order = sorted(range(len(ids)), key=lambda i: (-scores[i], ids[i]))
    hits, total = 0, 0.0
    for rank, i in enumerate(order, 1):
        if positives[i]:
            hits += 1
            total += hits / rank
    if hits == 0:
        raise ValueError("average_precision needs at least one positive")
    return total / hits


def attribute_map(
    scores: Mapping[str, np.ndarray], labels: Mapping[str, MultiHotLabel]
) -> float:
    """Mean over attributes (with >= 1 positive) of average precision."""
    ids = sorted(scores)
    if not ids:
        raise ValueError("no videos to rank")
    mat = np.stack([np.asarray(scores[v], dtype=np.float64) for v in ids])
    bits = np.stack([labels[v].bits for v in ids])
    aps = [
        average_precision(mat[:, k], bits[:, k], ids)
        for k in range(mat.shape[1])
        if bits[:, k].any()
    ]
    if not aps:
        raise ValueError("no attribute has a positive example in this split")
    return float(np.mean(aps))


# ---------------------------------------------------------------------------
# end-to-end evaluation
# ---------------------------------------------------------------------------

def uniform_frame_indices(n_total: int, n_keep: int) -> list[int]:
    """Evenly spaced distinct frame positions (floor(i * n_total / n_keep))."""
    n_keep = min(n_keep, n_total)
    if n_keep < 1:
        raise ValueError("need at least one frame")
    return [i * n_total // n_keep for i in range(n_keep)]


def video_attribute_scores(
    model: CaptionModel, records: Sequence[VideoRecord], n_frames: int | None = None
) -> dict[str, np.ndarray]:
    """Merged video-head probabilities per video, optionally evaluated on an
    evenly subsampled set of frames."""
    model.eval()
    out = {}
    with torch.no_grad():
        for rec in records:
            fused = model.encode(rec.features)
            if n_frames is not None and n_frames < rec.n_frames:
                idx = uniform_frame_indices(rec.n_frames, n_frames)
                fused = take_frames(fused, rec.n_frames, idx)
            out[rec.video_id] = merged_probabilities(fused, model.video_apnet)
    return out


def attribute_labels(
    records: Sequence[VideoRecord], vocab: AttributeVocabulary
) -> dict[str, MultiHotLabel]:
    return {
        rec.video_id: make_multi_hot_label(
            [tokenize_caption(c) for c in rec.captions], vocab
        )
        for rec in records
    }


@dataclass
class MetricReport:
    """Quality metrics are on the x100 reporting scale (bleu4/rouge_l in
    [0, 100], cider in [0, 1000]); meta_sum_partial is their sum without
    METEOR, as labeled."""

    bleu4: float
    rouge_l: float
    cider: float
    meta_sum_partial: float
    meta_sum_label: str
    novel_pct: float
    unique_pct: float
    vocab_used: int
    attribute_map: float
    map_by_frame_count: dict[int, float] | None = None

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def evaluate_model(
    model: CaptionModel,
    caption_vocab,
    attribute_vocab: AttributeVocabulary,
    records: Sequence[VideoRecord],
    split: str = "test",
    beam_size: int = 5,
    map_frame_counts: Sequence[int] | None = None,
) -> tuple[MetricReport, dict[str, str]]:
    """Decode a split, score captions against its references, and rank
    attributes with the video head (optionally across inference frame
    counts). Returns (report, decoded captions by video id)."""
    eval_records = [r for r in records if r.split == split]
    if not eval_records:
        raise ValueError(f"split {split!r} is empty")
    train_captions = [c for r in records if r.split == "train" for c in r.captions]

    candidates = {
        rec.video_id: generate_caption(model, rec.features, caption_vocab, beam_size)
        for rec in eval_records
    }
    references = {rec.video_id: list(rec.captions) for rec in eval_records}

    b = bleu4(candidates, references)
    r = rouge_l(candidates, references)
    c = cider_d(candidates, references)
    novel, unique, vocab_used = diversity_metrics(candidates, train_captions)

    labels = attribute_labels(eval_records, attribute_vocab)
    scores = video_attribute_scores(model, eval_records)
    m_ap = attribute_map(scores, labels)

    curve = None
    if map_frame_counts:
        curve = {}
        for n in sorted(set(int(x) for x in map_frame_counts)):
            sub_scores = video_attribute_scores(model, eval_records, n_frames=n)
            curve[n] = attribute_map(sub_scores, labels)

    report = MetricReport(
        bleu4=100.0 * b,
        rouge_l=100.0 * r,
        cider=100.0 * c,
        meta_sum_partial=100.0 * (b + r + c),
        meta_sum_label="BLEU-4 + ROUGE-L + CIDEr-D (no METEOR)",
        novel_pct=novel,
        unique_pct=unique,
        vocab_used=vocab_used,
        attribute_map=m_ap,
        map_by_frame_count=curve,
    )
    return report, candidates


def evaluate_run(
    checkpoint: Path,
    manifest: Path,
    split: str = "test",
    beam_size: int = 5,
    map_frame_counts: Sequence[int] | None = None,
) -> tuple[MetricReport, dict[str, str]]:
    """Checkpoint-file front end for evaluate_model."""
    model, caption_vocab, attribute_vocab, _ = load_checkpoint(checkpoint)
    records = load_manifest(manifest)
    return evaluate_model(
        model, caption_vocab, attribute_vocab, records,
        split=split, beam_size=beam_size, map_frame_counts=map_frame_counts,
    )
