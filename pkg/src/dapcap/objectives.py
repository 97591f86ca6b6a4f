"""Joint training objective: captioning plus dual attribute prediction.

The video branch scores sparsely sampled fused video tokens; the text branch
scores the caption's own (shared) token embeddings. Both reuse the MIL head
machinery with separate affine scoring heads, and the total loss is the
weighted sum with the caption cross entropy.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import ceil
from typing import Sequence

import numpy as np
import torch

from .data import PAD
from .mil import attribute_prediction_loss, bag_loss_terms
from .model import CaptionModel


@dataclass
class DapWeights:
    lambda_video: float = 1.0
    lambda_text: float = 1.0

    def __post_init__(self):
        if self.lambda_video < 0 or self.lambda_text < 0:
            raise ValueError("loss weights must be nonnegative")


@dataclass
class SparseSampleConfig:
    """Frame subsampling for video-based attribute prediction.

    mode "random-subset" draws a fresh ratio r ~ Uniform(0, 1] per training
    sample and keeps ceil(n_frames * r) frames; "full" disables sampling.
    """

    mode: str = "random-subset"

    def __post_init__(self):
        if self.mode not in ("random-subset", "full"):
            raise ValueError(f"unknown sparse sampling mode {self.mode!r}")

    @property
    def enabled(self) -> bool:
        return self.mode == "random-subset"


@dataclass
class LossBreakdown:
    """Per-batch scalar components of the joint objective.

    l_bce and l_reg sum the video and text branches, averaged over the valid
    (k_pos > 0) samples, so l_vap + l_tap == l_bce + l_reg.
    """

    l_cap: float = 0.0
    l_vap: float = 0.0
    l_tap: float = 0.0
    l_bce: float = 0.0
    l_reg: float = 0.0
    total: float = 0.0

    def as_dict(self) -> dict[str, float]:
        return {
            "l_cap": self.l_cap,
            "l_vap": self.l_vap,
            "l_tap": self.l_tap,
            "l_bce": self.l_bce,
            "l_reg": self.l_reg,
            "total": self.total,
        }


def num_sampled_frames(n_frames: int, r: float) -> int:
    if not (0.0 < r <= 1.0):
        raise ValueError(f"sampling ratio must be in (0, 1], got {r}")
    return max(1, ceil(n_frames * r))


def take_frames(fused: torch.Tensor, n_frames: int, frame_indices) -> torch.Tensor:
    """Keep the given frame positions inside every modality block of a fused
    (M * n_frames, d_h) matrix, preserving order."""
    tokens = fused.shape[0]
    if tokens % n_frames != 0:
        raise ValueError(f"{tokens} fused tokens not divisible by n_frames={n_frames}")
    m = tokens // n_frames
    idx = np.asarray(sorted(int(i) for i in frame_indices))
    if idx.size == 0 or idx.min() < 0 or idx.max() >= n_frames:
        raise ValueError("frame indices out of range")
    flat = np.concatenate([idx + block * n_frames for block in range(m)])
    return fused[torch.as_tensor(flat, dtype=torch.long)]


def sparse_sample(
    fused: torch.Tensor, n_frames: int, r: float, rng: np.random.Generator
) -> torch.Tensor:
    """Random frame subset of a fused matrix: ceil(n_frames * r) distinct
    frames drawn uniformly without replacement, same frames kept in every
    modality block, original order preserved. r = 1 is the identity."""
    n_keep = num_sampled_frames(n_frames, r)
    if n_keep >= n_frames:
        return fused
    indices = rng.choice(n_frames, size=n_keep, replace=False)
    return take_frames(fused, n_frames, indices)


def draw_ratio(rng: np.random.Generator) -> float:
    """Sampling ratio, uniform on (0, 1]."""
    return 1.0 - float(rng.random())


def _maybe_sample(fused, n_frames, training, sampling, rng):
    if training and sampling.enabled:
        if rng is None:
            raise ValueError("training-mode sparse sampling needs an rng")
        return sparse_sample(fused, n_frames, draw_ratio(rng), rng)
    return fused


def vap_loss(
    fused: torch.Tensor,
    n_frames: int,
    label,
    apnet: torch.nn.Module,
    rng: np.random.Generator | None = None,
    training: bool = False,
    sampling: SparseSampleConfig | None = None,
):
    """Video-based attribute prediction loss. Training mode (with sampling
    enabled) draws a fresh ratio per call; evaluation uses full features."""
    sampling = sampling or SparseSampleConfig()
    fused = _maybe_sample(fused, n_frames, training, sampling, rng)
    return attribute_prediction_loss(fused, label, apnet)


def caption_instances(token_ids, model: CaptionModel) -> torch.Tensor:
    """Non-pad token embeddings of a caption (bos/eos kept), via the decoder's
    own shared embedding."""
    ids = torch.as_tensor(token_ids, dtype=torch.long)
    return model.embed(ids[ids != PAD])


def tap_loss(token_ids, label, model: CaptionModel, apnet: torch.nn.Module | None = None):
    """Text-based attribute prediction loss over the caption's shared
    embeddings. Uses the model's text head unless another head is given."""
    return attribute_prediction_loss(
        caption_instances(token_ids, model), label, apnet or model.text_apnet
    )


@dataclass
class TrainSample:
    """One (video, caption) training pair, features already fused."""

    fused: torch.Tensor
    n_frames: int
    target_ids: np.ndarray
    label: object  # MultiHotLabel


def total_loss(
    model: CaptionModel,
    batch: Sequence[TrainSample],
    weights: DapWeights | None = None,
    sampling: SparseSampleConfig | None = None,
    rng: np.random.Generator | None = None,
    training: bool = True,
):
    """Weighted joint objective over a batch; returns (loss, LossBreakdown).

    Caption loss is the batch mean of per-sample token-sum cross entropies;
    each attribute branch is the mean over samples with at least one positive
    attribute. The text branch scores the same caption the sample's caption
    loss is trained on.
    """
    weights = weights or DapWeights()
    sampling = sampling or SparseSampleConfig()
    if not batch:
        raise ValueError("empty batch")

    l_cap = model.caption_loss(
        [s.fused for s in batch], np.stack([s.target_ids for s in batch])
    )

    # a branch with zero weight stays out of the graph entirely, so its head
    # is never gradient-updated (and never weight-decayed)
    use_video = weights.lambda_video > 0
    use_text = weights.lambda_text > 0
    vap_terms, tap_terms, bce_sum, reg_sum = [], [], 0.0, 0.0
    for sample in batch:
        if sample.label.k_pos == 0 or not (use_video or use_text):
            continue
        if use_video:
            v_inst = _maybe_sample(sample.fused, sample.n_frames, training, sampling, rng)
            v_bce, v_reg, _ = bag_loss_terms(v_inst, sample.label, model.video_apnet)
            vap_terms.append(v_bce + v_reg)
            bce_sum += float(v_bce.detach())
            reg_sum += float(v_reg.detach())
        if use_text:
            t_bce, t_reg, _ = bag_loss_terms(
                caption_instances(sample.target_ids, model), sample.label, model.text_apnet
            )
            tap_terms.append(t_bce + t_reg)
            bce_sum += float(t_bce.detach())
            reg_sum += float(t_reg.detach())

    zero = l_cap.new_zeros(())
    l_vap = torch.stack(vap_terms).mean() if vap_terms else zero
    l_tap = torch.stack(tap_terms).mean() if tap_terms else zero
    loss = l_cap
    if use_video and vap_terms:
        loss = loss + weights.lambda_video * l_vap
    if use_text and tap_terms:
        loss = loss + weights.lambda_text * l_tap

    n_valid = max(len(vap_terms), len(tap_terms), 1)
    breakdown = LossBreakdown(
        l_cap=float(l_cap.detach()),
        l_vap=float(l_vap.detach()),
        l_tap=float(l_tap.detach()),
        l_bce=bce_sum / n_valid,
        l_reg=reg_sum / n_valid,
        total=float(loss.detach()),
    )
    return loss, breakdown
