"""Temporal memory fusion: per-track attention update of a single memory token."""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from .core import ModelDims


@dataclass
class TrackMemory:
    """One track's compressed history embedding."""

    vector: torch.Tensor  # (d_lm,)
    initialized: bool = True


class TemporalMemoryFusion(nn.Module):
    """Fold the decoder's per-object hidden state and track history into new memory.

    The fused vector (element-wise sum of hidden state and history) serves as
    both query and key of a multi-head attention over the track's length-1
    sequence, with the current aligned object embedding as value, followed by a
    residual add and layer normalization. With a single key the softmax is 1,
    so the attention output reduces to a learned value transform; tests exploit
    this closed form. Each track is updated independently.
    """

    def __init__(self, dims: ModelDims, heads: int = 4):
        super().__init__()
        if dims.d_lm % heads:
            raise ValueError(f"d_lm {dims.d_lm} not divisible by heads {heads}")
        self.dims = dims
        self.attn = nn.MultiheadAttention(dims.d_lm, heads, batch_first=True)
        self.norm = nn.LayerNorm(dims.d_lm)

    def update(
        self,
        current_hidden: torch.Tensor,
        history: TrackMemory | None,
        current_embed: torch.Tensor,
    ) -> TrackMemory:
        d = self.dims.d_lm
        for name, vec in (("current_hidden", current_hidden), ("current_embed", current_embed)):
            if vec.shape != (d,):
                raise ValueError(f"{name} must have shape ({d},), got {tuple(vec.shape)}")
        if history is not None and history.initialized:
            if history.vector.shape != (d,):
                raise ValueError(
                    f"history vector must have shape ({d},), got {tuple(history.vector.shape)}"
                )
            past = history.vector
        else:
            # first frame of a track: self-initialize history from the hidden state
            past = current_hidden
        fused = current_hidden + past
        q = fused.view(1, 1, d)
        v = current_embed.view(1, 1, d)
        attended, _ = self.attn(q, q, v, need_weights=False)
        updated = self.norm(fused + attended.view(d))
        return TrackMemory(vector=updated, initialized=True)

    def forward(
        self,
        current_hidden: torch.Tensor,
        history: TrackMemory | None,
        current_embed: torch.Tensor,
    ) -> TrackMemory:
        return self.update(current_hidden, history, current_embed)
