"""Joint optimization loop, checkpointing, and gradient verification.

Every (video, caption) pair of the train split is one sample; epochs shuffle
the pairs with a seeded generator, optimize the joint objective with AdamW
(decoupled weight decay; layer-norm parameters and biases excluded from
decay), step the learning rate down once per epoch, and log every loss
component. A checkpoint is written per epoch plus a best-by-validation-l_cap
checkpoint.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch

from .attributes import AttributeVocabulary, MultiHotLabel, make_multi_hot_label, tokenize_caption
from .data import CaptionVocabulary, VideoRecord, encode_caption
from .model import CaptionModel, CaptionModelConfig
from .objectives import DapWeights, LossBreakdown, SparseSampleConfig, TrainSample, total_loss


@dataclass
class TrainConfig:
    batch_size: int = 64
    epochs: int = 50
    lr_init: float = 5e-4
    lr_decay: float = 0.9
    lr_floor: float = 1e-6
    weight_decay: float = 1e-3
    seed: int = 0
    lambda_video: float = 1.0
    lambda_text: float = 1.0
    sparse_sampling: bool = True

    def weights(self) -> DapWeights:
        return DapWeights(self.lambda_video, self.lambda_text)

    def sampling(self) -> SparseSampleConfig:
        return SparseSampleConfig("random-subset" if self.sparse_sampling else "full")


def learning_rate(epoch: int, cfg: TrainConfig) -> float:
    """max(lr_init * decay^epoch, lr_floor)."""
    if epoch < 0:
        raise ValueError(f"epoch must be >= 0, got {epoch}")
    return max(cfg.lr_init * cfg.lr_decay**epoch, cfg.lr_floor)


def _param_groups(model: torch.nn.Module, weight_decay: float):
    """Decay on weight matrices only; biases and layer-norm params exempt."""
    no_decay_ids = set()
    for module in model.modules():
        if isinstance(module, torch.nn.LayerNorm):
            no_decay_ids.update(id(p) for p in module.parameters())
    decay, no_decay = [], []
    for name, param in model.named_parameters():
        if id(param) in no_decay_ids or name.endswith("bias"):
            no_decay.append(param)
        else:
            decay.append(param)
    return [
        {"params": decay, "weight_decay": weight_decay},
        {"params": no_decay, "weight_decay": 0.0},
    ]


def make_samples(
    records: Sequence[VideoRecord],
    model: CaptionModel,
    caption_vocab: CaptionVocabulary,
    attribute_vocab: AttributeVocabulary,
) -> list[tuple[VideoRecord, int, np.ndarray, MultiHotLabel]]:
    """Expand records into (record, caption_index, encoded_target, label) pairs."""
    pairs = []
    for rec in records:
        label = make_multi_hot_label(
            [tokenize_caption(c) for c in rec.captions], attribute_vocab
        )
        for ci, caption in enumerate(rec.captions):
            target = encode_caption(caption, caption_vocab, model.cfg.t_max)
            pairs.append((rec, ci, target, label))
    return pairs


def _batch_breakdown(
    model: CaptionModel, pairs, cfg: TrainConfig, rng, training: bool
) -> tuple[torch.Tensor, LossBreakdown]:
    batch = [
        TrainSample(
            fused=model.encode(rec.features),
            n_frames=rec.n_frames,
            target_ids=target,
            label=label,
        )
        for rec, _, target, label in pairs
    ]
    return total_loss(
        model,
        batch,
        weights=cfg.weights(),
        sampling=cfg.sampling(),
        rng=rng,
        training=training,
    )


def evaluate_loss(
    model: CaptionModel,
    records: Sequence[VideoRecord],
    caption_vocab: CaptionVocabulary,
    attribute_vocab: AttributeVocabulary,
    cfg: TrainConfig,
) -> LossBreakdown | None:
    """Deterministic full-feature loss over a split (dropout off, no sampling)."""
    pairs = make_samples(records, model, caption_vocab, attribute_vocab)
    if not pairs:
        return None
    was_training = model.training
    model.eval()
    sums, n = {}, 0
    with torch.no_grad():
        for start in range(0, len(pairs), cfg.batch_size):
            chunk = pairs[start : start + cfg.batch_size]
            _, bd = _batch_breakdown(model, chunk, cfg, rng=None, training=False)
            for key, val in bd.as_dict().items():
                sums[key] = sums.get(key, 0.0) + val * len(chunk)
            n += len(chunk)
    if was_training:
        model.train()
    return LossBreakdown(**{k: v / n for k, v in sums.items()})


def train(
    records: Sequence[VideoRecord],
    model: CaptionModel,
    caption_vocab: CaptionVocabulary,
    attribute_vocab: AttributeVocabulary,
    cfg: TrainConfig,
    out_dir: Path | None = None,
) -> tuple[CaptionModel, list[dict]]:
    """Run the joint optimization; returns (model, per-epoch log entries).

    Aborts on a non-finite loss, naming the offending batch. With out_dir
    set, writes log.jsonl, epoch checkpoints, and best.pt (lowest validation
    l_cap; final epoch when there is no validation split).
    """
    train_records = [r for r in records if r.split == "train"]
    val_records = [r for r in records if r.split == "validation"]
    if not train_records:
        raise ValueError("dataset has no train split")

    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    pairs = make_samples(train_records, model, caption_vocab, attribute_vocab)

    optimizer = torch.optim.AdamW(
        _param_groups(model, cfg.weight_decay), lr=cfg.lr_init
    )
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        log_fh = open(out_dir / "log.jsonl", "w")
    else:
        log_fh = None

    logs: list[dict] = []
    best_val = math.inf
    try:
        for epoch in range(cfg.epochs):
            lr = learning_rate(epoch, cfg)
            for group in optimizer.param_groups:
                group["lr"] = lr
            model.train()
            order = rng.permutation(len(pairs))
            sums, seen = {}, 0
            for bi, start in enumerate(range(0, len(pairs), cfg.batch_size)):
                chunk = [pairs[i] for i in order[start : start + cfg.batch_size]]
                loss, bd = _batch_breakdown(model, chunk, cfg, rng, training=True)
                if not torch.isfinite(loss):
                    raise RuntimeError(
                        f"non-finite loss at epoch {epoch}, batch {bi}: {bd.as_dict()}"
                    )
                optimizer.zero_grad()
                loss.backward()
                optimizer.step()
                for key, val in bd.as_dict().items():
                    sums[key] = sums.get(key, 0.0) + val * len(chunk)
                seen += len(chunk)
            entry = {
                "epoch": epoch,
                "lr": lr,
                "train": {k: v / seen for k, v in sums.items()},
            }
            val_bd = evaluate_loss(model, val_records, caption_vocab, attribute_vocab, cfg)
            entry["val"] = val_bd.as_dict() if val_bd else None
            logs.append(entry)
            if log_fh:
                log_fh.write(json.dumps(entry) + "\n")
                log_fh.flush()
            if out_dir is not None:
                save_checkpoint(
                    out_dir / f"epoch_{epoch:03d}.pt", model, caption_vocab,
                    attribute_vocab, extra={"epoch": epoch},
                )
                val_cap = val_bd.l_cap if val_bd else -epoch  # no val: prefer latest
                if val_cap < best_val:
                    best_val = val_cap
                    save_checkpoint(
                        out_dir / "best.pt", model, caption_vocab, attribute_vocab,
                        extra={"epoch": epoch, "val_l_cap": val_bd.l_cap if val_bd else None},
                    )
    finally:
        if log_fh:
            log_fh.close()
    model.eval()
    return model, logs


# ---------------------------------------------------------------------------
# checkpointing
# ---------------------------------------------------------------------------

def save_checkpoint(
    path: Path,
    model: CaptionModel,
    caption_vocab: CaptionVocabulary,
    attribute_vocab: AttributeVocabulary,
    extra: dict | None = None,
) -> None:
    """Single-archive checkpoint: named tensors + config + both vocabularies."""
    torch.save(
        {
            "model_config": asdict(model.cfg),
            "state_dict": model.state_dict(),
            "caption_vocab": list(caption_vocab.tokens),
            "attribute_vocab": list(attribute_vocab.words),
            "extra": extra or {},
        },
        path,
    )


def load_checkpoint(path: Path):
    """Rebuild (model, caption_vocab, attribute_vocab, extra) from an archive.

    Fails loudly if any stored tensor's shape disagrees with the rebuilt
    architecture.
    """
    blob = torch.load(path, weights_only=True)
    cfg = CaptionModelConfig(**blob["model_config"])
    model = CaptionModel(cfg)
    expected = model.state_dict()
    stored = blob["state_dict"]
    problems = [
        f"{name}: checkpoint {tuple(stored[name].shape) if name in stored else 'missing'}"
        f" vs model {tuple(t.shape)}"
        for name, t in expected.items()
        if name not in stored or tuple(stored[name].shape) != tuple(t.shape)
    ]
    extras = [name for name in stored if name not in expected]
    if problems or extras:
        raise ValueError(
            f"checkpoint {path} does not match the declared config; "
            f"mismatches={problems[:8]} unexpected={extras[:8]}"
        )
    model.load_state_dict(stored)
    model.eval()
    caption_vocab = CaptionVocabulary.from_tokens(blob["caption_vocab"])
    attribute_vocab = AttributeVocabulary.from_words(blob["attribute_vocab"])
    return model, caption_vocab, attribute_vocab, blob.get("extra", {})


# ---------------------------------------------------------------------------
# gradient verification
# ---------------------------------------------------------------------------

def gradient_check(
    loss_fn: Callable[[], torch.Tensor],
    named_params: Sequence[tuple[str, torch.nn.Parameter]],
    tolerance: float = 1e-4,
    coords_per_group: int = 200,
    step: float = 1e-6,
    seed: int = 0,
    analytic_fn: Callable[[], dict[str, torch.Tensor]] | None = None,
) -> dict:
    """Compare analytic gradients against central finite differences.

    For each named parameter, up to coords_per_group coordinates are sampled
    and perturbed by +-step. The reported per-group relative error is the
    largest |analytic - numeric| over the checked coordinates divided by the
    group's gradient infinity-norm: central differences carry an absolute
    noise floor (~|loss| * 1e-16 / step), so coordinates whose true gradient
    is zero (attention key biases, inactive hinges) cannot be judged by a
    per-coordinate ratio, while any genuinely wrong gradient shows up at the
    scale of the gradient itself. Run the model in double precision with
    dropout off, and make loss_fn deterministic, or the comparison is
    meaningless.
    """
    named_params = list(named_params)
    report = {"tolerance": tolerance, "groups": {}, "passed": True}
    if not named_params:
        return report
    rng = np.random.default_rng(seed)

    if analytic_fn is None:
        def analytic_fn():
            for _, p in named_params:
                if p.grad is not None:
                    p.grad = None
            loss = loss_fn()
            loss.backward()
            return {
                name: (p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p))
                for name, p in named_params
            }

    analytic = analytic_fn()
    for name, param in named_params:
        flat = param.data.view(-1)
        n = flat.numel()
        coords = (
            np.arange(n)
            if n <= coords_per_group
            else np.sort(rng.choice(n, size=coords_per_group, replace=False))
        )
        grad_flat = analytic[name].view(-1)
        scale = max(float(grad_flat.abs().max()), 1e-8)
        max_abs_diff = 0.0
        with torch.no_grad():
            for idx in coords:
                original = flat[idx].item()
                flat[idx] = original + step
                up = float(loss_fn())
                flat[idx] = original - step
                down = float(loss_fn())
                flat[idx] = original
                numeric = (up - down) / (2 * step)
                max_abs_diff = max(max_abs_diff, abs(float(grad_flat[idx]) - numeric))
        max_rel = max_abs_diff / scale
        ok = max_rel < tolerance
        report["groups"][name] = {
            "max_rel_error": max_rel,
            "max_abs_diff": max_abs_diff,
            "grad_scale": scale,
            "checked": int(len(coords)),
            "ok": ok,
        }
        report["passed"] = report["passed"] and ok
    return report
