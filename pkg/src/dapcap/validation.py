"""Input validation helpers shared across the package."""

from __future__ import annotations

from typing import Iterable, Mapping

import numpy as np

VALID_SPLITS = ("train", "validation", "test")


def check_split(split: str, context: str = "") -> str:
    if split not in VALID_SPLITS:
        where = f" in {context}" if context else ""
        raise ValueError(f"unknown split {split!r}{where}; expected one of {VALID_SPLITS}")
    return split


def check_feature_matrix(arr, name: str, dim: int | None = None) -> np.ndarray:
    """Coerce to a 2-d float32 matrix, optionally checking the feature dim."""
    arr = np.asarray(arr, dtype=np.float32)
    if arr.ndim != 2:
        raise ValueError(f"feature matrix {name!r} must be 2-d, got shape {arr.shape}")
    if dim is not None and arr.shape[1] != dim:
        raise ValueError(
            f"feature matrix {name!r} has dim {arr.shape[1]}, expected {dim}"
        )
    return arr


def check_same_rows(features: Mapping[str, np.ndarray], video_id: str) -> int:
    """All modalities of one video must share the frame count."""
    rows = {name: mat.shape[0] for name, mat in features.items()}
    distinct = set(rows.values())
    if len(distinct) > 1:
        raise ValueError(f"video {video_id!r} has mismatched frame counts: {rows}")
    if not rows:
        raise ValueError(f"video {video_id!r} declares no modalities")
    return distinct.pop()

def check_records(records: Iterable, require_captions: bool = False) -> list:
    records = list(records)
    if not records:
        raise ValueError("need at least one video record")
    if require_captions:
        missing = [r.video_id for r in records if not r.captions]
        if missing:
            raise ValueError(f"records without captions: {missing[:5]}")
    return records


def check_fitted(estimator, attribute: str = "model_") -> None:
    if getattr(estimator, attribute, None) is None:
        raise RuntimeError(
            f"{type(estimator).__name__} is not fitted yet; call fit() first"
        )
