"""Scikit-learn style front end for the whole pipeline.

`DapVideoCaptioner` wraps vocabulary mining, model construction, joint
training, decoding, attribute scoring, and feature export behind the usual
fit/predict/transform surface so it composes with sklearn tooling
(get_params/set_params/clone work out of the box).
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import torch
from sklearn.base import BaseEstimator

from .analysis import pooled_features
from .attributes import build_attribute_vocabulary, tokenize_caption
from .data import build_caption_vocabulary
from .decoding import generate_caption
from .metrics import attribute_labels, attribute_map, video_attribute_scores
from .model import CaptionModel, CaptionModelConfig
from .stopwords import DEFAULT_STOPWORDS
from .training import TrainConfig, load_checkpoint, save_checkpoint, train
from .validation import check_fitted, check_records


class DapVideoCaptioner(BaseEstimator):
    """Multimodal video captioner trained jointly with dual attribute heads.

    Parameters mirror the model and trainer configs; fitted state lives in
    trailing-underscore attributes (sklearn convention).

    Parameters
    ----------
    d_h : hidden size (multiple of 64; attention heads = d_h / 64).
    num_decoder_layers : depth of the caption decoder stack.
    num_attributes : number of attribute words mined from training captions.
    t_max : fixed encoded caption length.
    dropout_attention, dropout_other : dropout rates (attention vs rest).
    min_count : caption-vocabulary frequency threshold.
    batch_size, epochs, lr_init, lr_decay, lr_floor, weight_decay :
        optimization schedule (AdamW, per-epoch exponential decay with floor).
    lambda_video, lambda_text : weights of the two attribute objectives.
    sparse_sampling : random frame subsets for the video objective.
    beam_size : decoding beam (1 = greedy).
    stopwords : words excluded from attribute mining (None = built-in list).
    seed : seeds model init, shuffling, frame sampling, and dropout.
    checkpoint_dir : if set, fit() writes epoch/best checkpoints and logs there.
    """

    def __init__(
        self,
        d_h: int = 512,
        num_decoder_layers: int = 1,
        num_attributes: int = 500,
        t_max: int = 30,
        dropout_attention: float = 0.1,
        dropout_other: float = 0.5,
        min_count: int = 2,
        batch_size: int = 64,
        epochs: int = 50,
        lr_init: float = 5e-4,
        lr_decay: float = 0.9,
        lr_floor: float = 1e-6,
        weight_decay: float = 1e-3,
        lambda_video: float = 1.0,
        lambda_text: float = 1.0,
        sparse_sampling: bool = True,
        beam_size: int = 5,
        stopwords=None,
        seed: int = 0,
        checkpoint_dir=None,
    ):
        self.d_h = d_h
        self.num_decoder_layers = num_decoder_layers
        self.num_attributes = num_attributes
        self.t_max = t_max
        self.dropout_attention = dropout_attention
        self.dropout_other = dropout_other
        self.min_count = min_count
        self.batch_size = batch_size
        self.epochs = epochs
        self.lr_init = lr_init
        self.lr_decay = lr_decay
        self.lr_floor = lr_floor
        self.weight_decay = weight_decay
        self.lambda_video = lambda_video
        self.lambda_text = lambda_text
        self.sparse_sampling = sparse_sampling
        self.beam_size = beam_size
        self.stopwords = stopwords
        self.seed = seed
        self.checkpoint_dir = checkpoint_dir

    # ------------------------------------------------------------------

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            batch_size=self.batch_size,
            epochs=self.epochs,
            lr_init=self.lr_init,
            lr_decay=self.lr_decay,
            lr_floor=self.lr_floor,
            weight_decay=self.weight_decay,
            seed=self.seed,
            lambda_video=self.lambda_video,
            lambda_text=self.lambda_text,
            sparse_sampling=self.sparse_sampling,
        )

    def fit(self, records, y=None):
        """Mine vocabularies from the train split, build the model, train."""
        records = check_records(records, require_captions=False)
        train_caps = [c for r in records if r.split == "train" for c in r.captions]
        if not train_caps:
            raise ValueError("train split has no captions to learn from")
        stop = DEFAULT_STOPWORDS if self.stopwords is None else frozenset(self.stopwords)
        self.attribute_vocab_ = build_attribute_vocabulary(
            [tokenize_caption(c) for c in train_caps], k=self.num_attributes, stopwords=stop
        )
        self.caption_vocab_ = build_caption_vocabulary(train_caps, min_count=self.min_count)

        modalities = {
            name: mat.shape[1] for name, mat in records[0].features.items()
        }
        config = CaptionModelConfig(
            modalities=modalities,
            vocab_size=len(self.caption_vocab_),
            num_attributes=self.attribute_vocab_.k,
            d_h=self.d_h,
            num_decoder_layers=self.num_decoder_layers,
            dropout_attention=self.dropout_attention,
            dropout_other=self.dropout_other,
            t_max=self.t_max,
        )
        torch.manual_seed(self.seed)
        model = CaptionModel(config)
        out_dir = Path(self.checkpoint_dir) if self.checkpoint_dir else None
        self.model_, self.train_log_ = train(
            records, model, self.caption_vocab_, self.attribute_vocab_,
            self.train_config(), out_dir=out_dir,
        )
        self.config_ = config
        return self

    def predict(self, records) -> list[str]:
        """Beam-decoded caption per record, in order."""
        check_fitted(self)
        records = check_records(records)
        return [
            generate_caption(self.model_, r.features, self.caption_vocab_, self.beam_size)
            for r in records
        ]

    def predict_proba(self, records) -> np.ndarray:
        """(n_videos, K) merged attribute probabilities from the video head."""
        check_fitted(self)
        records = check_records(records)
        scores = video_attribute_scores(self.model_, records)
        return np.stack([scores[r.video_id] for r in records])

    def transform(self, records) -> np.ndarray:
        """(n_videos, d_h) pooled features, z-scored across the given records."""
        check_fitted(self)
        records = check_records(records)
        feats = pooled_features(self.model_, records, z_score=True)
        return np.stack([feats[r.video_id] for r in records])

    def score(self, records, y=None) -> float:
        """Attribute ranking mAP against labels mined from the records' captions."""
        check_fitted(self)
        records = check_records(records, require_captions=True)
        labels = attribute_labels(records, self.attribute_vocab_)
        return attribute_map(
            video_attribute_scores(self.model_, records), labels
        )

    # ------------------------------------------------------------------

    def save(self, path) -> None:
        check_fitted(self)
        save_checkpoint(Path(path), self.model_, self.caption_vocab_, self.attribute_vocab_)

    @classmethod
    def from_checkpoint(cls, path, **params) -> "DapVideoCaptioner":
        """Rebuild a fitted captioner (decode/score/transform only) from disk."""
        model, caption_vocab, attribute_vocab, _ = load_checkpoint(Path(path))
        est = cls(**params)
        est.model_ = model
        est.caption_vocab_ = caption_vocab
        est.attribute_vocab_ = attribute_vocab
        est.config_ = model.cfg
        est.train_log_ = []
        return est
