import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dapcap.data import (
    BOS,
    EOS,
    PAD,
    UNK,
    CaptionVocabulary,
    SyntheticSpec,
    VideoRecord,
    build_caption_vocabulary,
    decode_caption,
    encode_caption,
    generate_synthetic_dataset,
    load_manifest,
    read_feature_array,
    save_manifest,
    write_feature_array,
)
from oracles import average_precision_bruteforce


def write_manifest(tmp_path, records_json, modalities, feature_arrays):
    for rel, arr in feature_arrays.items():
        write_feature_array(tmp_path / rel, arr)
    lines = [json.dumps({"modalities": modalities})]
    lines += [json.dumps(r) for r in records_json]
    path = tmp_path / "manifest.jsonl"
    path.write_text("\n".join(lines) + "\n")
    return path


class TestFeatureFiles:
    def test_roundtrip(self, tmp_path):
        arr = np.arange(12, dtype=np.float32).reshape(4, 3)
        write_feature_array(tmp_path / "x.bin", arr)
        assert np.array_equal(read_feature_array(tmp_path / "x.bin"), arr)

    def test_sidecar_mismatch(self, tmp_path):
        arr = np.ones((2, 3), dtype=np.float32)
        write_feature_array(tmp_path / "x.bin", arr)
        (tmp_path / "x.bin.json").write_text(json.dumps({"shape": [3, 3]}))
        with pytest.raises(ValueError):
            read_feature_array(tmp_path / "x.bin")


class TestLoadManifest:
    def test_single_video_passthrough(self, tmp_path):
        arr = np.random.rand(28, 4).astype(np.float32)
        path = write_manifest(
            tmp_path,
            [{
                "video_id": "v0", "split": "train", "captions": ["a man"],
                "features": {"image": "v0.bin"},
            }],
            {"image": 4},
            {"v0.bin": arr},
        )
        records = load_manifest(path)
        assert len(records) == 1
        assert records[0].features["image"].shape == (28, 4)
        assert np.array_equal(records[0].features["image"], arr)

    def test_null_modality_zero_padded(self, tmp_path):
        arr = np.random.rand(28, 4).astype(np.float32)
        path = write_manifest(
            tmp_path,
            [{
                "video_id": "v0", "split": "train", "captions": [],
                "features": {"image": "v0.bin", "audio": None},
            }],
            {"image": 4, "audio": 3},
            {"v0.bin": arr},
        )
        rec = load_manifest(path)[0]
        assert rec.features["audio"].shape == (28, 3)
        assert not rec.features["audio"].any()

    def test_row_mismatch_names_video(self, tmp_path):
        path = write_manifest(
            tmp_path,
            [{
                "video_id": "v7", "split": "train", "captions": [],
                "features": {"image": "a.bin", "motion": "b.bin"},
            }],
            {"image": 4, "motion": 2},
            {"a.bin": np.zeros((28, 4), np.float32), "b.bin": np.zeros((27, 2), np.float32)},
        )
        with pytest.raises(ValueError, match="v7"):
            load_manifest(path)

    def test_unknown_split_rejected(self, tmp_path):
        path = write_manifest(
            tmp_path,
            [{
                "video_id": "v0", "split": "dev", "captions": [],
                "features": {"image": "a.bin"},
            }],
            {"image": 4},
            {"a.bin": np.zeros((2, 4), np.float32)},
        )
        with pytest.raises(ValueError, match="split"):
            load_manifest(path)

    def test_all_null_needs_n_frames(self, tmp_path):
        path = write_manifest(
            tmp_path,
            [{"video_id": "v0", "split": "test", "captions": [], "features": {"image": None}}],
            {"image": 4},
            {},
        )
        with pytest.raises(ValueError, match="n_frames"):
            load_manifest(path)

    def test_save_load_roundtrip(self, tmp_path):
        rec = VideoRecord(
            video_id="v0", split="validation", category=2,
            features={"image": np.random.rand(3, 4).astype(np.float32)},
            captions=["hello there"],
        )
        manifest = save_manifest(tmp_path, [rec], {"image": 4})
        out = load_manifest(manifest)[0]
        assert out.video_id == "v0" and out.category == 2
        assert np.array_equal(out.features["image"], rec.features["image"])


class TestCaptionVocabulary:
    def test_min_count_two(self):
        vocab = build_caption_vocabulary(["a man", "a man"], min_count=2)
        assert vocab.tokens == ("<pad>", "<bos>", "<eos>", "<unk>", "a", "man")

    def test_empty_corpus_specials_only(self):
        vocab = build_caption_vocabulary([], min_count=1)
        assert len(vocab) == 4

    def test_below_threshold_words_become_unk(self):
        vocab = build_caption_vocabulary(["a man", "a man walks"], min_count=2)
        ids = encode_caption("a man walks", vocab, t_max=8)
        assert ids.tolist()[:5] == [BOS, vocab.index_of["a"], vocab.index_of["man"], UNK, EOS]

    def test_specials_pinned(self):
        vocab = build_caption_vocabulary(["x x"], min_count=1)
        assert (vocab.index_of["<pad>"], vocab.index_of["<bos>"],
                vocab.index_of["<eos>"], vocab.index_of["<unk>"]) == (0, 1, 2, 3)


class TestEncodeCaption:
    def setup_method(self):
        self.vocab = build_caption_vocabulary(["a man runs fast today ok fine"] * 2, min_count=1)

    def test_empty_caption(self):
        ids = encode_caption("", self.vocab, t_max=6)
        assert ids.tolist() == [BOS, EOS, PAD, PAD, PAD, PAD]

    def test_long_caption_truncates_keeping_eos(self):
        text = " ".join(["man"] * 40)
        ids = encode_caption(text, self.vocab, t_max=30)
        assert len(ids) == 30
        assert ids[0] == BOS and ids[-1] == EOS
        assert (ids != PAD).all()

    def test_roundtrip(self):
        text = "a man runs"
        ids = encode_caption(text, self.vocab, t_max=10)
        assert decode_caption(ids, self.vocab) == text

    @given(st.lists(st.sampled_from(["a", "man", "runs", "fast"]), max_size=12))
    @settings(max_examples=60, deadline=None)
    def test_length_always_t_max_and_pad_position(self, words):
        t_max = 8
        ids = encode_caption(" ".join(words), self.vocab, t_max)
        assert len(ids) == t_max
        non_pad = int((ids != PAD).sum())
        assert non_pad == min(len(words) + 2, t_max)
        # all pads strictly after the content
        assert (ids[non_pad:] == PAD).all()


class TestSyntheticDataset:
    def test_same_seed_byte_identical(self, tmp_path):
        spec = SyntheticSpec(num_videos=6, n_frames=4)
        m1 = generate_synthetic_dataset(tmp_path / "a", spec, seed=3)
        m2 = generate_synthetic_dataset(tmp_path / "b", spec, seed=3)
        assert m1.read_bytes() == m2.read_bytes()
        for f in sorted((tmp_path / "a" / "feats").iterdir()):
            other = tmp_path / "b" / "feats" / f.name
            assert f.read_bytes() == other.read_bytes()

    def test_shapes(self, tmp_path):
        spec = SyntheticSpec(num_videos=50, n_frames=8)
        records = load_manifest(generate_synthetic_dataset(tmp_path, spec, seed=13))
        assert len(records) == 50
        assert [r.video_id for r in records] == [f"v{i:03d}" for i in range(50)]
        assert all(r.n_frames == 8 for r in records)
        assert all(set(r.features) == {"image", "motion"} for r in records)

    def test_noiseless_linear_probe_reaches_perfect_map(self, tmp_path):
        spec = SyntheticSpec(num_videos=24, n_frames=4, noise=0.0)
        records = load_manifest(generate_synthetic_dataset(tmp_path, spec, seed=5))
        from dapcap.attributes import build_attribute_vocabulary, make_multi_hot_label, tokenize_caption
        from dapcap.data import ATTRIBUTE_WORDS
        from dapcap.stopwords import DEFAULT_STOPWORDS

        corpus = [tokenize_caption(c) for r in records for c in r.captions]
        present = {t for toks in corpus for t in toks} & set(ATTRIBUTE_WORDS)
        vocab = build_attribute_vocabulary(corpus, k=len(present), stopwords=DEFAULT_STOPWORDS)
        assert set(vocab.words) == present
        pooled = np.stack([
            np.concatenate([r.features[m].mean(axis=0) for m in ("image", "motion")])
            for r in records
        ])
        labels = np.stack([
            make_multi_hot_label([tokenize_caption(c) for c in r.captions], vocab).bits
            for r in records
        ])
        design = np.hstack([pooled, np.ones((len(records), 1))])
        weights, *_ = np.linalg.lstsq(design, labels.astype(np.float64), rcond=None)
        scores = design @ weights
        ids = [r.video_id for r in records]
        aps = []
        for k in range(vocab.k):
            if labels[:, k].any():
                aps.append(average_precision_bruteforce(scores[:, k], labels[:, k], ids))
        assert np.mean(aps) == pytest.approx(1.0)
