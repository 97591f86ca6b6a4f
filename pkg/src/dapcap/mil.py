"""Multiple-instance attribute prediction.

A bag of instance vectors (video tokens or caption token embeddings) is
scored per attribute by a single affine map + sigmoid, the per-instance
probabilities are merged with a noisy-OR, and the merged vector is trained
with a binary cross entropy normalized by the number of positive attributes
plus a hinge regularizer that keeps the raw scores conservative.
"""

from __future__ import annotations

import numpy as np
import torch

from .attributes import MultiHotLabel

EPS = 1e-7


def _as_bits(label) -> torch.Tensor:
    if isinstance(label, MultiHotLabel):
        return torch.as_tensor(label.bits)
    bits = torch.as_tensor(label)
    if bits.ndim != 1:
        raise ValueError("label must be a 1-d 0/1 vector")
    return bits


def apnet_forward(instances: torch.Tensor, apnet: torch.nn.Module) -> torch.Tensor:
    """Raw per-instance probabilities, shape (K, L).

    instances: (L, d_h) bag of instance vectors, L >= 1. Scores are clamped
    to [EPS, 1-EPS] so downstream logs never see 0 or 1.
    """
    instances = torch.as_tensor(instances)
    if instances.ndim != 2 or instances.shape[0] == 0:
        raise ValueError(f"need a nonempty (L, d_h) instance matrix, got {tuple(instances.shape)}")
    return torch.sigmoid(apnet(instances)).clamp(EPS, 1.0 - EPS).T


def noisy_or(p_raw: torch.Tensor) -> torch.Tensor:
    """Merge instance probabilities per attribute: p_k = 1 - prod_l (1 - P[k,l]).

    Evaluated in log space (sum of log1p(-P)) so large bags cannot underflow.
    """
    p_raw = torch.as_tensor(p_raw)
    return 1.0 - torch.exp(torch.log1p(-p_raw).sum(dim=-1))


def bce_loss(p: torch.Tensor, label) -> torch.Tensor:
    """Binary cross entropy over attributes, normalized by k_pos.

    A label with no positive attribute contributes exactly zero (the 1/k_pos
    normalizer is undefined there); callers exclude such samples from any
    batch averaging.
    """
    bits = _as_bits(label)
    p = torch.as_tensor(p)
    k_pos = int(bits.sum())
    if k_pos == 0:
        return p.new_zeros(())
    bits = bits.to(p.dtype)
    p = p.clamp(EPS, 1.0 - EPS)
    ll = bits * torch.log(p) + (1.0 - bits) * torch.log1p(-p)
    return -ll.sum() / k_pos


def reg_loss(p_raw: torch.Tensor, k_pos: int, k: int) -> torch.Tensor:
    """Hinge on the mean raw score: max(mean(P_raw) - k_pos/k, 0)."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    p_raw = torch.as_tensor(p_raw)
    return torch.clamp(p_raw.mean() - k_pos / k, min=0.0)


def bag_loss_terms(instances: torch.Tensor, label, apnet: torch.nn.Module):
    """(bce, reg, p) for one bag; both loss terms are zero when k_pos = 0."""
    bits = _as_bits(label)
    p_raw = apnet_forward(instances, apnet)
    p = noisy_or(p_raw)
    k_pos = int(bits.sum())
    if k_pos == 0:
        zero = p_raw.new_zeros(())
        return zero, zero, p
    return bce_loss(p, bits), reg_loss(p_raw, k_pos, int(bits.shape[0])), p


def attribute_prediction_loss(instances: torch.Tensor, label, apnet: torch.nn.Module):
    """bce + regularizer for one bag; also returns the merged probabilities.

    Returns (loss, p) where p has shape (K,). For a k_pos = 0 label the loss
    is zero and the sample should be skipped in batch normalization.
    """
    bce, reg, p = bag_loss_terms(instances, label, apnet)
    return bce + reg, p


def merged_probabilities(instances: torch.Tensor, apnet: torch.nn.Module) -> np.ndarray:
    """Inference helper: noisy-OR merged attribute probabilities as numpy."""
    with torch.no_grad():
        return noisy_or(apnet_forward(instances, apnet)).cpu().numpy()
