"""Dataset loading, caption vocabulary, and synthetic dataset generation.

On-disk layout
--------------
A dataset is a JSON-lines manifest plus one binary file per (video, modality):

* line 1 of ``manifest.jsonl`` is a dataset header::

      {"modalities": {"image": 32, "motion": 24}}

  declaring the modality order and per-modality feature dims (needed to
  zero-pad modalities a video declares as missing).
* every following line is one video record::

      {"video_id": "v000", "split": "train", "category": 3,
       "captions": ["a baker with a canyon", ...],
       "n_frames": 8,
       "features": {"image": "feats/v000_image.bin", "motion": null}}

  A ``null`` feature path means the modality is absent for that video and is
  represented by an all-zero matrix of the declared width.
* feature files are flat little-endian float32 arrays; each has a JSON
  sidecar ``<file>.json`` of the form ``{"shape": [n_frames, dim]}``.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .attributes import tokenize_caption
from .validation import check_feature_matrix, check_same_rows, check_split

PAD, BOS, EOS, UNK = 0, 1, 2, 3
SPECIAL_TOKENS = ("<pad>", "<bos>", "<eos>", "<unk>")


@dataclass
class VideoRecord:
    """One video: per-modality feature matrices plus its captions."""

    video_id: str
    split: str
    features: dict[str, np.ndarray]
    captions: list[str]
    category: int | None = None

    def __post_init__(self):
        check_split(self.split, context=f"video {self.video_id!r}")
        self.features = {
            name: check_feature_matrix(mat, f"{self.video_id}/{name}")
            for name, mat in self.features.items()
        }
        check_same_rows(self.features, self.video_id)

    @property
    def n_frames(self) -> int:
        return next(iter(self.features.values())).shape[0]


@dataclass(frozen=True)
class CaptionVocabulary:
    """Token <-> id mapping with pad/bos/eos/unk reserved at ids 0-3."""

    tokens: tuple[str, ...]
    index_of: dict[str, int] = field(compare=False)

    def __post_init__(self):
        if self.tokens[: len(SPECIAL_TOKENS)] != SPECIAL_TOKENS:
            raise ValueError(f"vocabulary must start with specials {SPECIAL_TOKENS}")
        if len(set(self.tokens)) != len(self.tokens):
            raise ValueError("vocabulary tokens must be distinct")

    def __len__(self) -> int:
        return len(self.tokens)

    @classmethod
    def from_tokens(cls, tokens: Sequence[str]) -> "CaptionVocabulary":
        tokens = tuple(tokens)
        return cls(tokens=tokens, index_of={t: i for i, t in enumerate(tokens)})

    def to_json(self) -> str:
        return json.dumps({"tokens": list(self.tokens)})

    @classmethod
    def from_json(cls, text: str) -> "CaptionVocabulary":
        return cls.from_tokens(json.loads(text)["tokens"])


def build_caption_vocabulary(
    train_captions: Iterable[str], min_count: int = 2
) -> CaptionVocabulary:
    """Vocabulary of tokens with corpus frequency >= min_count, plus specials.

    Tokens are ordered by descending frequency then lexicographically, so the
    id assignment is deterministic. Rarer tokens encode as <unk>.
    """
    if min_count < 1:
        raise ValueError(f"min_count must be >= 1, got {min_count}")
    counts = Counter()
    for text in train_captions:
        counts.update(tokenize_caption(text))
    kept = sorted(
        (t for t, c in counts.items() if c >= min_count),
        key=lambda t: (-counts[t], t),
    )
    return CaptionVocabulary.from_tokens(SPECIAL_TOKENS + tuple(kept))


def encode_caption(text: str, vocab: CaptionVocabulary, t_max: int) -> np.ndarray:
    """<bos> + ids + <eos>, truncated to t_max total, right-padded with <pad>.

    Truncation drops content tokens but keeps the terminating <eos>, so every
    encoded caption ends its content with <eos> and has length exactly t_max.
    """
    if t_max < 2:
        raise ValueError(f"t_max must be >= 2, got {t_max}")
    ids = [vocab.index_of.get(t, UNK) for t in tokenize_caption(text)]
    ids = ids[: t_max - 2]
    seq = [BOS] + ids + [EOS]
    seq.extend([PAD] * (t_max - len(seq)))
    return np.asarray(seq, dtype=np.int64)


def decode_caption(ids: Iterable[int], vocab: CaptionVocabulary) -> str:
    """Inverse of encode_caption for display: stops at <eos>, skips specials."""
    words = []
    for i in ids:
        if i == EOS:
            break
        if i in (PAD, BOS):
            continue
        words.append(vocab.tokens[int(i)])
    return " ".join(words)


# ---------------------------------------------------------------------------
# feature file + manifest I/O
# ---------------------------------------------------------------------------

def write_feature_array(path: Path, arr: np.ndarray) -> None:
    arr = check_feature_matrix(arr, str(path))
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(arr.astype("<f4").tobytes())
    Path(str(path) + ".json").write_text(json.dumps({"shape": list(arr.shape)}))


def read_feature_array(path: Path) -> np.ndarray:
    path = Path(path)
    sidecar = json.loads(Path(str(path) + ".json").read_text())
    shape = tuple(sidecar["shape"])
    flat = np.frombuffer(path.read_bytes(), dtype="<f4")
    if flat.size != shape[0] * shape[1]:
        raise ValueError(f"{path}: {flat.size} values do not fill shape {shape}")
    return flat.reshape(shape).copy()


def save_manifest(
    out_dir: Path, records: Sequence[VideoRecord], modalities: dict[str, int]
) -> Path:
    """Write records and their feature files under out_dir; returns manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = out_dir / "manifest.jsonl"
    lines = [json.dumps({"modalities": modalities})]
    for rec in records:
        paths = {}
        for name in modalities:
            mat = rec.features[name]
            rel = f"feats/{rec.video_id}_{name}.bin"
            write_feature_array(out_dir / rel, mat)
            paths[name] = rel
        lines.append(
            json.dumps(
                {
                    "video_id": rec.video_id,
                    "split": rec.split,
                    "category": rec.category,
                    "captions": rec.captions,
                    "n_frames": rec.n_frames,
                    "features": paths,
                }
            )
        )
    manifest.write_text("\n".join(lines) + "\n")
    return manifest


def load_manifest(path: Path) -> list[VideoRecord]:
    """Load all records of a manifest, validating shapes against the header.

    Declared-missing modalities (null paths) become all-zero matrices of the
    header width. Record order follows the manifest.
    """
    path = Path(path)
    lines = [ln for ln in path.read_text().splitlines() if ln.strip()]
    if not lines:
        raise ValueError(f"{path}: empty manifest")
    header = json.loads(lines[0])
    if "modalities" not in header:
        raise ValueError(f"{path}: first line must be a header with 'modalities'")
    modalities: dict[str, int] = {k: int(v) for k, v in header["modalities"].items()}
    base = path.parent

    records = []
    for ln in lines[1:]:
        doc = json.loads(ln)
        vid = doc["video_id"]
        feats: dict[str, np.ndarray] = {}
        missing = []
        for name, dim in modalities.items():
            rel = doc["features"].get(name)
            if rel is None:
                missing.append(name)
                continue
            mat = read_feature_array(base / rel)
            feats[name] = check_feature_matrix(mat, f"{vid}/{name}", dim=dim)
        if feats:
            n = check_same_rows(feats, vid)
        elif doc.get("n_frames") is not None:
            n = int(doc["n_frames"])
        else:
            raise ValueError(f"video {vid!r}: all modalities null and no n_frames given")
        if doc.get("n_frames") is not None and int(doc["n_frames"]) != n:
            raise ValueError(
                f"video {vid!r}: n_frames={doc['n_frames']} but feature files have {n} rows"
            )
        for name in missing:
            feats[name] = np.zeros((n, modalities[name]), dtype=np.float32)
        # keep header order for deterministic fusion
        feats = {name: feats[name] for name in modalities}
        records.append(
            VideoRecord(
                video_id=vid,
                split=doc["split"],
                features=feats,
                captions=list(doc.get("captions", [])),
                category=doc.get("category"),
            )
        )
    return records


def manifest_modalities(path: Path) -> dict[str, int]:
    with open(path) as fh:
        return {k: int(v) for k, v in json.loads(fh.readline())["modalities"].items()}


# ---------------------------------------------------------------------------
# synthetic datasets
# ---------------------------------------------------------------------------

ATTRIBUTE_WORDS = (
    "baker", "canyon", "dancer", "engine", "falcon",
    "garden", "harbor", "island", "jungle", "kettle",
    "ladder", "magnet", "needle", "orchid", "parrot",
    "quartz", "ribbon", "saddle", "temple", "walrus",
)

_TEMPLATES = (
    "a {0} with a {1}",
    "the {0} and the {1}",
    "a {0} is on the {1}",
    "the {1} with the {0}",
)


@dataclass
class SyntheticSpec:
    """Knobs for generate_synthetic_dataset.

    co_occurrence "paired" locks attributes 2i and 2i+1 together in every
    video. caption_style "single" puts only one attribute word in each
    caption (labels still carry the full set), so co-occurring partners must
    be inferred rather than read off the text.
    """

    num_videos: int = 50
    n_frames: int = 8
    modality_dims: dict[str, int] = field(
        default_factory=lambda: {"image": 32, "motion": 24}
    )
    num_attributes: int = 20
    attrs_per_video: int = 2
    captions_per_video: int = 3
    noise: float = 0.1
    centroid_scale: float = 2.0
    co_occurrence: str = "random"
    caption_style: str = "pair"
    train_fraction: float = 0.8
    validation_fraction: float = 0.1


def generate_synthetic_dataset(
    out_dir: Path, spec: SyntheticSpec | None = None, seed: int = 0
) -> Path:
    """Write a deterministic desk-scale dataset and return its manifest path.

    Every frame row is one attribute's centroid plus Gaussian noise, and the
    captions are templated from the same attributes, so attribute presence is
    linearly decodable from the features and the captioning problem is
    solvable by construction. Centroids are orthonormal rows (scaled), which
    requires every modality dim >= num_attributes.
    """
    spec = spec or SyntheticSpec()
    if spec.attrs_per_video > spec.num_attributes:
        raise ValueError("attrs_per_video cannot exceed num_attributes")
    if spec.num_attributes > len(ATTRIBUTE_WORDS):
        raise ValueError(f"at most {len(ATTRIBUTE_WORDS)} attribute words available")
    for name, dim in spec.modality_dims.items():
        if dim < spec.num_attributes:
            raise ValueError(
                f"modality {name!r} dim {dim} < num_attributes {spec.num_attributes}; "
                "orthonormal centroids need dim >= num_attributes"
            )
    rng = np.random.default_rng(seed)
    words = ATTRIBUTE_WORDS[: spec.num_attributes]

    centroids = {}
    for name, dim in spec.modality_dims.items():
        q, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
        centroids[name] = (q[:, : spec.num_attributes].T * spec.centroid_scale).astype(
            np.float32
        )

    n_train = max(1, math.ceil(spec.num_videos * spec.train_fraction))
    if spec.num_videos >= 3:
        # keep all three splits nonempty
        n_train = min(n_train, spec.num_videos - 2)
        n_val = max(1, min(
            math.ceil(spec.num_videos * spec.validation_fraction),
            spec.num_videos - n_train - 1,
        ))
    else:
        n_val = spec.num_videos - n_train

    # videos draw their attribute sets from a fixed pool of windows; the
    # pool's leading entries tile every attribute, and the earliest videos
    # walk the pool in order, so (a) the full attribute vocabulary is always
    # minable from the train split and (b) on datasets with enough train
    # videos every attribute combination seen at evaluation time also occurs
    # in training, keeping the caption-learning problem solvable on held-out
    # splits. The offset windows give each attribute a second pair context so
    # attributes remain individually decodable, not just pair-decodable.
    a, k = spec.num_attributes, spec.attrs_per_video
    if spec.co_occurrence == "paired":
        if a % 2:
            raise ValueError("paired co-occurrence needs an even attribute count")
        pool = [
            tuple(2 * p + j for j in range(k))
            for p in range(a // 2)
        ]
    else:
        tiles = [
            tuple(sorted((i * k + j) % a for j in range(k)))
            for i in range(math.ceil(a / k))
        ]
        offset = [
            tuple(sorted((i * k + k // 2 + j) % a for j in range(k)))
            for i in range(math.ceil(a / k))
        ]
        pool = list(dict.fromkeys(tiles + offset))
    records = []
    for i in range(spec.num_videos):
        window = pool[i] if i < len(pool) else pool[int(rng.integers(len(pool)))]
        attrs = sorted(window)
        frame_attrs = [attrs[t % len(attrs)] for t in range(spec.n_frames)]
        feats = {}
        for name, dim in spec.modality_dims.items():
            rows = centroids[name][frame_attrs]
            if spec.noise > 0:
                rows = rows + spec.noise * rng.standard_normal((spec.n_frames, dim))
            feats[name] = rows.astype(np.float32)
        captions = []
        for c in range(spec.captions_per_video):
            # caption set is a pure function of the attribute set, so held-out
            # captions are predictable from features and the task is solvable
            template = _TEMPLATES[(attrs[0] + c) % len(_TEMPLATES)]
            if spec.caption_style == "single":
                first = second = attrs[c % len(attrs)]
            else:
                order = attrs if c % 2 == 0 else attrs[::-1]
                first = order[0]
                second = order[1] if len(order) > 1 else order[0]
            captions.append(template.format(words[first], words[second]))
        if i < n_train:
            split = "train"
        elif i < n_train + n_val:
            split = "validation"
        else:
            split = "test"
        records.append(
            VideoRecord(
                video_id=f"v{i:03d}",
                split=split,
                features=feats,
                captions=captions,
                category=int(attrs[0]),
            )
        )
    return save_manifest(Path(out_dir), records, dict(spec.modality_dims))
