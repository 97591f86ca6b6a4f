import numpy as np
import pytest
import torch

from dapcap.data import SyntheticSpec, generate_synthetic_dataset, load_manifest
from dapcap.model import CaptionModel, CaptionModelConfig


def tiny_model(seed=0, vocab_size=11, num_attributes=6, d_h=64, t_max=10,
               modalities=None, dropout=False):
    torch.manual_seed(seed)
    cfg = CaptionModelConfig(
        modalities=modalities or {"image": 5, "motion": 3},
        vocab_size=vocab_size,
        num_attributes=num_attributes,
        d_h=d_h,
        num_decoder_layers=1,
        dropout_attention=0.1 if dropout else 0.0,
        dropout_other=0.5 if dropout else 0.0,
        t_max=t_max,
    )
    model = CaptionModel(cfg)
    if not dropout:
        model.eval()
    return model


def random_features(rng, cfg, n_frames=4):
    return {
        name: rng.standard_normal((n_frames, dim)).astype(np.float32)
        for name, dim in cfg.modalities.items()
    }


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    spec = SyntheticSpec(num_videos=20, n_frames=6, captions_per_video=2)
    manifest = generate_synthetic_dataset(out, spec, seed=7)
    return manifest, load_manifest(manifest)
