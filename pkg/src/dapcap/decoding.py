"""Caption generation: greedy and beam search.

The search core is decoder-agnostic: it only needs a step function that maps
a batch of same-length prefixes to next-token log-probabilities. Hypothesis
scores are raw summed log-probabilities (no length normalization unless
asked), ties are broken deterministically (lower hypothesis index, then
lower token id), and finished hypotheses retire into an n-best pool of size
beam_size.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import torch

from .data import BOS, EOS, CaptionVocabulary, decode_caption
from .model import CaptionModel

StepFn = Callable[[Sequence[Sequence[int]]], np.ndarray]


@dataclass(order=True)
class BeamHypothesis:
    sort_key: tuple = field(init=False, repr=False)
    ids: tuple[int, ...] = field(compare=False)
    score: float = field(compare=False)
    finished: bool = field(compare=False, default=False)

    def __post_init__(self):
        # best-first ordering: higher score first, then lexicographic ids
        self.sort_key = (-self.score, self.ids)


def greedy_decode(step_fn: StepFn, t_max: int, bos_id: int = BOS, eos_id: int = EOS) -> list[int]:
    """Argmax decoding; ties resolve to the lowest token id. The returned
    sequence includes bos (and eos when emitted) and never exceeds t_max."""
    ids = [bos_id]
    while len(ids) < t_max:
        logp = np.asarray(step_fn([ids]))[0]
        nxt = int(np.argmax(logp))
        ids.append(nxt)
        if nxt == eos_id:
            break
    return ids


def beam_decode(
    step_fn: StepFn,
    t_max: int,
    beam_size: int = 5,
    bos_id: int = BOS,
    eos_id: int = EOS,
    length_normalize: bool = False,
) -> tuple[list[int], list[BeamHypothesis]]:
    """Beam search over summed log-probabilities.

    At each step all (live hypothesis, token) extensions compete and the top
    beam_size survive; extensions ending in eos (or hitting t_max) retire
    into the pool, which keeps its best beam_size entries. Returns the best
    finished hypothesis's ids plus the final pool, best-first.
    """
    if beam_size < 1:
        raise ValueError(f"beam_size must be >= 1, got {beam_size}")
    live = [BeamHypothesis(ids=(bos_id,), score=0.0)]
    pool: list[BeamHypothesis] = []

    def ranked(score: float, hyp: BeamHypothesis) -> float:
        return score / (len(hyp.ids)) if length_normalize else score

    while live:
        logp = np.asarray(step_fn([list(h.ids) for h in live]))
        n_live, n_vocab = logp.shape
        totals = np.array([[h.score] for h in live]) + logp
        flat = totals.ravel()
        k = min(beam_size, flat.size)
        # deterministic top-k: score desc, then hypothesis index, then token id
        order = np.lexsort((np.tile(np.arange(n_vocab), n_live),
                            np.repeat(np.arange(n_live), n_vocab),
                            -flat))
        next_live = []
        for pos in order[:k]:
            hi, tok = divmod(int(pos), n_vocab)
            ids = live[hi].ids + (tok,)
            hyp = BeamHypothesis(ids=ids, score=float(flat[pos]))
            if tok == eos_id or len(ids) >= t_max:
                hyp.finished = True
                pool.append(hyp)
            else:
                next_live.append(hyp)
        pool.sort()
        del pool[beam_size:]
        live = next_live
        if (
            not length_normalize
            and len(pool) >= beam_size
            and (not live or pool[-1].score >= max(h.score for h in live))
        ):
            break  # scores only decrease; nothing live can enter the pool

    pool.sort(key=lambda h: (-ranked(h.score, h), h.ids))
    return list(pool[0].ids), pool


# ---------------------------------------------------------------------------
# model-facing wrappers
# ---------------------------------------------------------------------------

def model_step_fn(model: CaptionModel, features) -> StepFn:
    """Bind a captioner and one video's features into a step function.

    Switches the model to eval mode (decoding must run without dropout).
    """
    model.eval()
    with torch.no_grad():
        fused = model.encode(features)

    def step(prefixes: Sequence[Sequence[int]]) -> np.ndarray:
        ids = torch.as_tensor(np.asarray(prefixes, dtype=np.int64))
        with torch.no_grad():
            hidden = model.decode_hidden(
                model.embed(ids), fused.unsqueeze(0).expand(ids.shape[0], -1, -1)
            )
            logits = model.head(hidden[:, -1])
            return torch.log_softmax(logits.double(), dim=-1).cpu().numpy()

    return step


def generate_ids(
    model: CaptionModel, features, beam_size: int = 5, length_normalize: bool = False
) -> list[int]:
    """Decode one video to token ids (beam_size 1 falls back to greedy)."""
    step = model_step_fn(model, features)
    if beam_size == 1:
        return greedy_decode(step, model.cfg.t_max)
    ids, _ = beam_decode(
        step, model.cfg.t_max, beam_size=beam_size, length_normalize=length_normalize
    )
    return ids


def generate_caption(
    model: CaptionModel,
    features,
    vocab: CaptionVocabulary,
    beam_size: int = 5,
    length_normalize: bool = False,
) -> str:
    return decode_caption(
        generate_ids(model, features, beam_size, length_normalize), vocab
    )
