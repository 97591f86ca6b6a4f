"""dapcap: multimodal video captioning trained jointly with noisy-OR
multiple-instance attribute prediction over video tokens and caption
embeddings."""

from .attributes import (
    AttributeVocabulary,
    MultiHotLabel,
    build_attribute_vocabulary,
    make_multi_hot_label,
    tokenize_caption,
)
from .data import (
    CaptionVocabulary,
    SyntheticSpec,
    VideoRecord,
    build_caption_vocabulary,
    decode_caption,
    encode_caption,
    generate_synthetic_dataset,
    load_manifest,
    save_manifest,
)
from .decoding import beam_decode, generate_caption, greedy_decode
from .estimator import DapVideoCaptioner
from .metrics import MetricReport, evaluate_model, evaluate_run
from .mil import attribute_prediction_loss, bce_loss, noisy_or, reg_loss
from .model import CaptionModel, CaptionModelConfig
from .objectives import DapWeights, LossBreakdown, SparseSampleConfig, sparse_sample
from .training import TrainConfig, gradient_check, learning_rate, load_checkpoint, save_checkpoint, train

__version__ = "0.1.0"

__all__ = [
    "AttributeVocabulary",
    "MultiHotLabel",
    "build_attribute_vocabulary",
    "make_multi_hot_label",
    "tokenize_caption",
    "CaptionVocabulary",
    "SyntheticSpec",
    "VideoRecord",
    "build_caption_vocabulary",
    "decode_caption",
    "encode_caption",
    "generate_synthetic_dataset",
    "load_manifest",
    "save_manifest",
    "beam_decode",
    "generate_caption",
    "greedy_decode",
    "DapVideoCaptioner",
    "MetricReport",
    "evaluate_model",
    "evaluate_run",
    "attribute_prediction_loss",
    "bce_loss",
    "noisy_or",
    "reg_loss",
    "CaptionModel",
    "CaptionModelConfig",
    "DapWeights",
    "LossBreakdown",
    "SparseSampleConfig",
    "sparse_sample",
    "TrainConfig",
    "gradient_check",
    "learning_rate",
    "load_checkpoint",
    "save_checkpoint",
    "train",
]
