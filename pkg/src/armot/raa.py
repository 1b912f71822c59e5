"""Region-aware alignment: fuse each object token with the image tokens its box covers."""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import nn

from .core import BBox, ModelDims
from .tokenizer import ImageTokens


@dataclass
class AlignedObjectToken:
    """Object token enriched with its region's mean image token, plus provenance."""

    token: torch.Tensor  # (d_lm,)
    detection_index: int
    patches: frozenset[int]

    def __post_init__(self) -> None:
        if not self.patches:
            raise ValueError("aligned token must cover at least one patch")


def covered_patches(bbox: BBox, grid_h: int, grid_w: int) -> frozenset[int]:
    """Row-major indices of grid cells the box intersects with positive area.

    A box that degenerates to sub-cell size falls back to the single cell
    containing its center, so the cover is never empty.
    """
    c_lo = max(int(math.floor(bbox.x1 * grid_w)), 0)
    c_hi = min(int(math.ceil(bbox.x2 * grid_w)) - 1, grid_w - 1)
    r_lo = max(int(math.floor(bbox.y1 * grid_h)), 0)
    r_hi = min(int(math.ceil(bbox.y2 * grid_h)) - 1, grid_h - 1)
    if c_lo > c_hi or r_lo > r_hi:
        cx, cy = bbox.center
        col = min(int(cx * grid_w), grid_w - 1)
        row = min(int(cy * grid_h), grid_h - 1)
        return frozenset({row * grid_w + col})
    return frozenset(
        r * grid_w + c for r in range(r_lo, r_hi + 1) for c in range(c_lo, c_hi + 1)
    )


class RegionAwareAlignment(nn.Module):
    """Concatenate (object token, covered-region mean) and fuse with one linear layer."""

    def __init__(self, dims: ModelDims):
        super().__init__()
        self.dims = dims
        self.fuse = nn.Linear(2 * dims.d_lm, dims.d_lm)

    def region_vector(self, bbox: BBox, img: ImageTokens) -> tuple[torch.Tensor, frozenset[int]]:
        patches = covered_patches(bbox, img.grid_h, img.grid_w)
        index = torch.tensor(sorted(patches), dtype=torch.long)
        return img.tokens[index].mean(dim=0), patches

    def forward(
        self,
        obj_token: torch.Tensor,
        bbox: BBox,
        img: ImageTokens,
        detection_index: int = 0,
    ) -> AlignedObjectToken:
        if obj_token.shape[-1] != self.dims.d_lm:
            raise ValueError(
                f"object token width {obj_token.shape[-1]} != d_lm {self.dims.d_lm}"
            )
        region, patches = self.region_vector(bbox, img)
        fused = self.fuse(torch.cat([obj_token, region]))
        return AlignedObjectToken(token=fused, detection_index=detection_index, patches=patches)


def align(
    obj_token: torch.Tensor,
    bbox: BBox,
    img: ImageTokens,
    module: RegionAwareAlignment,
    detection_index: int = 0,
) -> AlignedObjectToken:
    return module(obj_token, bbox, img, detection_index)
