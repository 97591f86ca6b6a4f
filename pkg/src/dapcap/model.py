"""The trainable captioner.

Per-modality features are projected to the hidden size, layer-normalized and
concatenated along the token axis (no positional term on video tokens). The
decoder is a stack of post-LN transformer decoder layers over the shared
caption embedding (word + position, layer-normalized), and a linear head
produces the vocabulary distribution. The two attribute-scoring heads (one
for video instances, one for text instances) live on the same module so a
single optimizer covers everything.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
import torch
from torch import nn

from .data import PAD


@dataclass
class CaptionModelConfig:
    modalities: dict[str, int] = field(default_factory=lambda: {"image": 512})
    vocab_size: int = 4
    num_attributes: int = 500
    d_h: int = 512
    num_decoder_layers: int = 1
    dropout_attention: float = 0.1
    dropout_other: float = 0.5
    t_max: int = 30

    def __post_init__(self):
        if self.d_h % 64 != 0 or self.d_h < 64:
            raise ValueError(f"d_h must be a positive multiple of 64, got {self.d_h}")
        if self.vocab_size < 4:
            raise ValueError("vocab_size must cover the 4 reserved specials")
        if not self.modalities:
            raise ValueError("need at least one modality")

    @property
    def num_heads(self) -> int:
        return self.d_h // 64

    @property
    def ffn_size(self) -> int:
        return 4 * self.d_h


class DecoderLayer(nn.Module):
    """Post-LN decoder block: masked self-attention, cross-attention, FFN."""

    def __init__(self, cfg: CaptionModelConfig):
        super().__init__()
        self.self_attn = nn.MultiheadAttention(
            cfg.d_h, cfg.num_heads, dropout=cfg.dropout_attention, batch_first=True
        )
        self.cross_attn = nn.MultiheadAttention(
            cfg.d_h, cfg.num_heads, dropout=cfg.dropout_attention, batch_first=True
        )
        self.linear1 = nn.Linear(cfg.d_h, cfg.ffn_size)
        self.linear2 = nn.Linear(cfg.ffn_size, cfg.d_h)
        self.norm1 = nn.LayerNorm(cfg.d_h)
        self.norm2 = nn.LayerNorm(cfg.d_h)
        self.norm3 = nn.LayerNorm(cfg.d_h)
        self.dropout = nn.Dropout(cfg.dropout_other)

    def forward(self, x, memory, causal_mask):
        a, _ = self.self_attn(x, x, x, attn_mask=causal_mask, need_weights=False)
        x = self.norm1(x + self.dropout(a))
        a, _ = self.cross_attn(x, memory, memory, need_weights=False)
        x = self.norm2(x + self.dropout(a))
        f = self.linear2(self.dropout(torch.relu(self.linear1(x))))
        return self.norm3(x + self.dropout(f))


class CaptionModel(nn.Module):
    def __init__(self, cfg: CaptionModelConfig):
        super().__init__()
        self.cfg = cfg
        self.proj = nn.ModuleDict(
            {name: nn.Linear(dim, cfg.d_h) for name, dim in cfg.modalities.items()}
        )
        self.proj_norm = nn.ModuleDict(
            {name: nn.LayerNorm(cfg.d_h) for name in cfg.modalities}
        )
        self.word_embedding = nn.Embedding(cfg.vocab_size, cfg.d_h)
        self.position_embedding = nn.Embedding(cfg.t_max, cfg.d_h)
        self.embedding_norm = nn.LayerNorm(cfg.d_h)
        self.decoder_layers = nn.ModuleList(
            DecoderLayer(cfg) for _ in range(cfg.num_decoder_layers)
        )
        self.head = nn.Linear(cfg.d_h, cfg.vocab_size)
        self.video_apnet = nn.Linear(cfg.d_h, cfg.num_attributes)
        self.text_apnet = nn.Linear(cfg.d_h, cfg.num_attributes)
        self.reset_parameters()

    def reset_parameters(self):
        for module in self.modules():
            if isinstance(module, (nn.Linear, nn.Embedding)):
                nn.init.trunc_normal_(module.weight, std=0.02, a=-0.04, b=0.04)
                if getattr(module, "bias", None) is not None:
                    nn.init.zeros_(module.bias)
            elif isinstance(module, nn.MultiheadAttention):
                nn.init.trunc_normal_(module.in_proj_weight, std=0.02, a=-0.04, b=0.04)
                nn.init.zeros_(module.in_proj_bias)
            elif isinstance(module, nn.LayerNorm):
                nn.init.ones_(module.weight)
                nn.init.zeros_(module.bias)

    # ------------------------------------------------------------------
    # encoding / embedding
    # ------------------------------------------------------------------

    def encode(self, features: Mapping[str, "np.ndarray | torch.Tensor"]) -> torch.Tensor:
        """Project + layer-normalize each modality, fuse along the token axis.

        features: {modality: (n_frames, d_m)} in the configured modality set.
        Returns the fused matrix of shape (M * n_frames, d_h).
        """
        if set(features) != set(self.cfg.modalities):
            raise ValueError(
                f"modalities {sorted(features)} do not match configured "
                f"{sorted(self.cfg.modalities)}"
            )
        dtype = self.head.weight.dtype
        blocks = []
        n_frames = None
        for name, dim in self.cfg.modalities.items():
            mat = torch.as_tensor(features[name], dtype=dtype)
            if mat.ndim != 2 or mat.shape[1] != dim:
                raise ValueError(
                    f"modality {name!r}: expected (n_frames, {dim}), got {tuple(mat.shape)}"
                )
            if n_frames is None:
                n_frames = mat.shape[0]
            elif mat.shape[0] != n_frames:
                raise ValueError(f"modality {name!r}: frame count differs across modalities")
            blocks.append(self.proj_norm[name](self.proj[name](mat)))
        return torch.cat(blocks, dim=0)

    def embed(self, token_ids) -> torch.Tensor:
        """Shared caption embedding: LN(word_embedding[y_t] + position_embedding[t]).

        Accepts (t,) or (batch, t) int tensors; positions count from 0.
        """
        ids = torch.as_tensor(token_ids, dtype=torch.long)
        t = ids.shape[-1]
        if t == 0:
            raise ValueError("cannot embed an empty token sequence")
        if t > self.cfg.t_max:
            raise ValueError(f"sequence length {t} exceeds t_max={self.cfg.t_max}")
        if int(ids.max()) >= self.cfg.vocab_size or int(ids.min()) < 0:
            raise ValueError("token id out of vocabulary range")
        positions = torch.arange(t, device=ids.device)
        return self.embedding_norm(
            self.word_embedding(ids) + self.position_embedding(positions)
        )

    # ------------------------------------------------------------------
    # decoding
    # ------------------------------------------------------------------

    @staticmethod
    def _causal_mask(t: int, device) -> torch.Tensor:
        return torch.triu(torch.ones(t, t, device=device, dtype=torch.bool), diagonal=1)

    def decode_hidden(self, embedded: torch.Tensor, fused: torch.Tensor) -> torch.Tensor:
        """Run the decoder stack. embedded: (B, t, d_h) or (t, d_h); fused likewise."""
        squeeze = embedded.ndim == 2
        if squeeze:
            embedded = embedded.unsqueeze(0)
        if fused.ndim == 2:
            fused = fused.unsqueeze(0).expand(embedded.shape[0], -1, -1)
        if embedded.shape[1] == 0:
            raise ValueError("decoder needs at least one embedded token")
        x = embedded
        mask = self._causal_mask(x.shape[1], x.device)
        for layer in self.decoder_layers:
            x = layer(x, fused, mask)
        return x.squeeze(0) if squeeze else x

    def decode_step(self, embedded: torch.Tensor, fused: torch.Tensor):
        """Hidden state and next-token distribution after the last prefix token."""
        hidden = self.decode_hidden(embedded, fused)
        h_t = hidden[-1] if hidden.ndim == 2 else hidden[:, -1]
        return h_t, torch.softmax(self.head(h_t), dim=-1)

    # ------------------------------------------------------------------
    # training loss
    # ------------------------------------------------------------------

    def caption_loss(self, fused_batch, targets) -> torch.Tensor:
        """Teacher-forced cross entropy.

        fused_batch: (B, MN, d_h) tensor, or a list of (MN, d_h) tensors.
        targets: (B, t_max) encoded captions (<bos> ... <eos> <pad>*).
        Per sample the loss sums -log p over every non-pad target token; the
        batch value is the mean of the per-sample sums.
        """
        targets = torch.as_tensor(targets, dtype=torch.long)
        if targets.ndim == 1:
            targets = targets.unsqueeze(0)
        if isinstance(fused_batch, (list, tuple)):
            fused_batch = torch.stack(list(fused_batch))
        if fused_batch.ndim == 2:
            fused_batch = fused_batch.unsqueeze(0)
        n_content = (targets != PAD).sum(dim=1)
        if (n_content < 2).any():
            raise ValueError("every target needs <bos> plus at least one real token")
        t_in = int(n_content.max()) - 1
        inputs = targets[:, :t_in]
        labels = targets[:, 1 : t_in + 1]
        hidden = self.decode_hidden(self.embed(inputs), fused_batch)
        logp = torch.log_softmax(self.head(hidden), dim=-1)
        tok_logp = logp.gather(-1, labels.unsqueeze(-1)).squeeze(-1)
        mask = labels != PAD
        return -(tok_logp * mask).sum(dim=1).mean()

    # convenience for checkpointing / tests
    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.parameters())
