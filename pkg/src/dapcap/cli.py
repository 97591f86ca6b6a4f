"""Command line interface.

Subcommands: make-synthetic, build-vocab, train, decode, evaluate,
analyze-acs, attribute-neighbors. All outputs are JSON (plus optional CSV
for curves) so runs are diffable and reproducible.
"""

from __future__ import annotations

import argparse
import json
from dataclasses import asdict
from pathlib import Path

import numpy as np
import torch

from .analysis import acs_by_category, attribute_neighbors
from .attributes import build_attribute_vocabulary, tokenize_caption
from .data import (
    SyntheticSpec,
    build_caption_vocabulary,
    generate_synthetic_dataset,
    load_manifest,
    write_feature_array,
)
from .decoding import generate_caption
from .metrics import evaluate_run
from .model import CaptionModel, CaptionModelConfig
from .stopwords import DEFAULT_STOPWORDS
from .training import TrainConfig, load_checkpoint, train


def _cmd_make_synthetic(args):
    spec = SyntheticSpec(
        num_videos=args.videos,
        n_frames=args.frames,
        num_attributes=args.attributes,
        captions_per_video=args.captions,
        noise=args.noise,
        co_occurrence=args.co_occurrence,
    )
    manifest = generate_synthetic_dataset(Path(args.out), spec, seed=args.seed)
    print(manifest)


def _cmd_build_vocab(args):
    records = load_manifest(Path(args.manifest))
    captions = [c for r in records if r.split == "train" for c in r.captions]
    if args.stopwords:
        stop = frozenset(Path(args.stopwords).read_text().split())
    else:
        stop = DEFAULT_STOPWORDS
    vocab = build_attribute_vocabulary(
        [tokenize_caption(c) for c in captions], k=args.k, stopwords=stop
    )
    Path(args.out).write_text(vocab.to_json() + "\n")
    print(f"wrote {vocab.k} attribute words to {args.out}")


def _cmd_train(args):
    doc = json.loads(Path(args.config).read_text()) if args.config else {}
    records = load_manifest(Path(args.manifest))
    train_caps = [c for r in records if r.split == "train" for c in r.captions]

    data_cfg = doc.get("data", {})
    attribute_vocab = build_attribute_vocabulary(
        [tokenize_caption(c) for c in train_caps],
        k=data_cfg.get("k", 500),
        stopwords=frozenset(data_cfg["stopwords"]) if "stopwords" in data_cfg else DEFAULT_STOPWORDS,
    )
    caption_vocab = build_caption_vocabulary(
        train_caps, min_count=data_cfg.get("min_count", 2)
    )
    modalities = {n: m.shape[1] for n, m in records[0].features.items()}
    model_cfg = CaptionModelConfig(
        modalities=modalities,
        vocab_size=len(caption_vocab),
        num_attributes=attribute_vocab.k,
        **doc.get("model", {}),
    )
    train_cfg = TrainConfig(**doc.get("train", {}))

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(
        json.dumps({"model": asdict(model_cfg), "train": asdict(train_cfg)}, indent=2)
    )
    torch.manual_seed(train_cfg.seed)
    model = CaptionModel(model_cfg)
    _, logs = train(records, model, caption_vocab, attribute_vocab, train_cfg, out_dir=out)
    last = logs[-1]["train"] if logs else {}
    print(f"trained {train_cfg.epochs} epochs; final train loss {last.get('total'):.4f}")
    print(out / "best.pt")


def _cmd_decode(args):
    model, caption_vocab, _, _ = load_checkpoint(Path(args.checkpoint))
    records = [r for r in load_manifest(Path(args.manifest)) if r.split == args.split]
    captions = {
        r.video_id: generate_caption(model, r.features, caption_vocab, args.beam)
        for r in records
    }
    Path(args.out).write_text(json.dumps(captions, indent=2) + "\n")
    print(f"decoded {len(captions)} videos to {args.out}")


def _cmd_evaluate(args):
    counts = (
        [int(x) for x in args.map_frame_counts.split(",")]
        if args.map_frame_counts
        else None
    )
    report, _ = evaluate_run(
        Path(args.checkpoint),
        Path(args.manifest),
        split=args.split,
        beam_size=args.beam,
        map_frame_counts=counts,
    )
    doc = report.as_dict()
    Path(args.out).write_text(json.dumps(doc, indent=2) + "\n")
    if args.curve_csv and report.map_by_frame_count:
        lines = ["n_frames,map"] + [
            f"{n},{v}" for n, v in sorted(report.map_by_frame_count.items())
        ]
        Path(args.curve_csv).write_text("\n".join(lines) + "\n")
    print(json.dumps(doc, indent=2))


def _cmd_analyze_acs(args):
    model, _, _, _ = load_checkpoint(Path(args.checkpoint))
    records = [r for r in load_manifest(Path(args.manifest)) if r.split == args.split]
    matrix = acs_by_category(model, records)
    Path(args.out).write_text(json.dumps(matrix.as_dict(), indent=2) + "\n")
    if args.csv:
        header = "category," + ",".join(str(c) for c in matrix.categories)
        rows = [
            f"{cat}," + ",".join(f"{v:.6f}" for v in matrix.values[i])
            for i, cat in enumerate(matrix.categories)
        ]
        Path(args.csv).write_text("\n".join([header] + rows) + "\n")
    print(f"wrote {len(matrix.categories)}x{len(matrix.categories)} ACS matrix to {args.out}")


def _cmd_attribute_neighbors(args):
    model, caption_vocab, attribute_vocab, _ = load_checkpoint(Path(args.checkpoint))
    neighbors, block, skipped = attribute_neighbors(
        model, attribute_vocab, caption_vocab, top_n=args.top_n
    )
    doc = {
        "neighbors": {w: [[n, c] for n, c in lst] for w, lst in neighbors.items()},
        "skipped": skipped,
    }
    Path(args.out).write_text(json.dumps(doc, indent=2) + "\n")
    if args.embeddings_out:
        write_feature_array(Path(args.embeddings_out), np.asarray(block, dtype=np.float32))
    print(f"wrote neighbor lists for {len(neighbors)} attributes to {args.out}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dapcap",
        description="Video captioning with joint multiple-instance attribute prediction",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-synthetic", help="generate a deterministic toy dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--videos", type=int, default=50)
    p.add_argument("--frames", type=int, default=8)
    p.add_argument("--attributes", type=int, default=20)
    p.add_argument("--captions", type=int, default=3)
    p.add_argument("--noise", type=float, default=0.1)
    p.add_argument("--co-occurrence", choices=["random", "paired"], default="random")
    p.add_argument("--seed", type=int, default=13)
    p.set_defaults(func=_cmd_make_synthetic)

    p = sub.add_parser("build-vocab", help="mine the attribute vocabulary")
    p.add_argument("--manifest", required=True)
    p.add_argument("--k", type=int, default=500)
    p.add_argument("--stopwords", help="optional whitespace-separated stop-word file")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_build_vocab)

    p = sub.add_parser("train", help="joint training run")
    p.add_argument("--config", help="JSON with optional 'model'/'train'/'data' sections")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("decode", help="generate captions for a split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--beam", type=int, default=5)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_decode)

    p = sub.add_parser("evaluate", help="caption metrics + attribute ranking report")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--beam", type=int, default=5)
    p.add_argument("--map-frame-counts", help="comma list, e.g. 1,2,4,8")
    p.add_argument("--out", required=True)
    p.add_argument("--curve-csv")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("analyze-acs", help="between/intra-class cosine structure")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--out", required=True)
    p.add_argument("--csv")
    p.set_defaults(func=_cmd_analyze_acs)

    p = sub.add_parser("attribute-neighbors", help="nearest attributes by embedding cosine")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--top-n", type=int, default=10)
    p.add_argument("--out", required=True)
    p.add_argument("--embeddings-out", help="raw (K, d_h) block, flat f32 + sidecar")
    p.set_defaults(func=_cmd_attribute_neighbors)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    args.func(args)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
