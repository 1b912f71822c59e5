"""Image and object tokenizers mapping frame content into the decoder's space.

Two routes for objects: a learned projection of detection query embeddings
(continuous tokens), or box discretization into grid-bin vocabulary tokens
used as implicit location prompts.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .core import BBox, Detection, ModelDims
from .simdata import APPEARANCE_DIM


class ShapeError(ValueError):
    """Input shape incompatible with the patch grid or an adapter width."""


@dataclass
class ImageTokens:
    """Patch tokens in row-major order (left-to-right, top-to-bottom)."""

    tokens: torch.Tensor  # (grid_h * grid_w, d_lm)
    grid_h: int
    grid_w: int

    def __post_init__(self) -> None:
        if self.tokens.shape[0] != self.grid_h * self.grid_w:
            raise ShapeError(
                f"token count {self.tokens.shape[0]} != grid {self.grid_h}x{self.grid_w}"
            )


class ImageTokenizer(nn.Module):
    """Per-patch feature encoder followed by a two-layer adapter into d_lm.

    The patch encoder has no positional terms, so identical patches produce
    identical tokens; position is supplied later by the decoder.
    """

    def __init__(self, dims: ModelDims, channels: int = 3):
        super().__init__()
        self.dims = dims
        self.channels = channels
        self.patch_encoder = nn.Sequential(
            nn.Linear(dims.patch * dims.patch * channels, dims.d_img),
            nn.GELU(),
        )
        self.adapter = nn.Sequential(
            nn.Linear(dims.d_img, dims.d_lm),
            nn.GELU(),
            nn.Linear(dims.d_lm, dims.d_lm),
        )

    def forward(self, image: np.ndarray | torch.Tensor) -> ImageTokens:
        dtype = next(self.parameters()).dtype
        if isinstance(image, np.ndarray):
            image = torch.as_tensor(image)
        image = image.to(dtype)
        if image.ndim != 3:
            raise ShapeError(f"image must be H x W x C, got {tuple(image.shape)}")
        h, w, c = image.shape
        p = self.dims.patch
        if h % p or w % p:
            raise ShapeError(f"image {h}x{w} not divisible by patch size {p}")
        if c != self.channels:
            raise ShapeError(f"expected {self.channels} channels, got {c}")
        grid_h, grid_w = h // p, w // p
        patches = (
            image.reshape(grid_h, p, grid_w, p, c)
            .permute(0, 2, 1, 3, 4)
            .reshape(grid_h * grid_w, p * p * c)
        )
        # center pixel values; an all-positive input range leaves every patch
        # feature sharing one dominant direction, which buries content
        # differences that downstream attention must compare
        tokens = self.adapter(self.patch_encoder(patches * 2.0 - 1.0))
        return ImageTokens(tokens=tokens, grid_h=grid_h, grid_w=grid_w)


class QueryEncoder(nn.Module):
    """Stand-in for a detector's query head: (box, appearance stats) -> d_det."""

    def __init__(self, dims: ModelDims, appearance_dim: int = APPEARANCE_DIM):
        super().__init__()
        self.appearance_dim = appearance_dim
        self.net = nn.Sequential(
            nn.Linear(4 + appearance_dim, dims.d_det),
            nn.GELU(),
            nn.Linear(dims.d_det, dims.d_det),
        )

    def forward(self, bbox: BBox, appearance: np.ndarray | None) -> torch.Tensor:
        dtype = next(self.parameters()).dtype
        if appearance is None:
            appearance = np.zeros(self.appearance_dim)
        app = torch.as_tensor(np.asarray(appearance), dtype=dtype).reshape(-1)
        if app.numel() != self.appearance_dim:
            raise ShapeError(
                f"appearance length {app.numel()} != {self.appearance_dim}"
            )
        box = torch.tensor([bbox.x1, bbox.y1, bbox.x2, bbox.y2], dtype=dtype)
        # centered inputs keep identity differences first-order in token space
        return self.net(torch.cat([box, app]) * 2.0 - 1.0)


class ObjectAdapter(nn.Module):
    """Stack of perceptron layers projecting query embeddings d_det -> d_lm."""

    def __init__(self, dims: ModelDims):
        super().__init__()
        self.dims = dims
        self.net = nn.Sequential(
            nn.Linear(dims.d_det, dims.d_lm),
            nn.GELU(),
            nn.Linear(dims.d_lm, dims.d_lm),
        )

    def forward(self, embedding: torch.Tensor) -> torch.Tensor:
        if embedding.shape[-1] != self.dims.d_det:
            raise ShapeError(
                f"query embedding width {embedding.shape[-1]} != d_det {self.dims.d_det}"
            )
        return self.net(embedding)


def object_tokenize_query(det: Detection, adapter: ObjectAdapter) -> torch.Tensor:
    """Project one detection's query embedding into the decoder space."""
    if det.query_embedding is None:
        raise ShapeError("detection has no query embedding; encode the frame first")
    emb = torch.as_tensor(np.asarray(det.query_embedding), dtype=torch.float32)
    return adapter(emb)


@dataclass(frozen=True)
class BoxDiscretizer:
    """Uniform grid over [0, 1] with a resolution scale alpha.

    The effective bin count is max(1, round(alpha * n_bins)); token indices are
    offset into the discrete vocabulary after the identity tokens.
    """

    n_bins: int = 200
    alpha: float = 1.0
    offset: int = 0

    def __post_init__(self) -> None:
        if self.n_bins < 1:
            raise ValueError("n_bins must be positive")
        if not (0.0 < self.alpha <= 1.0):
            raise ValueError("alpha must be in (0, 1]")
        if self.offset < 0:
            raise ValueError("offset must be non-negative")

    @property
    def effective_bins(self) -> int:
        return max(1, int(round(self.alpha * self.n_bins)))

    def bin_of(self, coord: float) -> int:
        bins = self.effective_bins
        return min(int(coord * bins), bins - 1)


def discretize_box(bbox: BBox, disc: BoxDiscretizer) -> tuple[int, int, int, int]:
    """Map a box to four vocabulary token indices, order (x1, y1, x2, y2)."""
    return tuple(
        disc.offset + disc.bin_of(c) for c in (bbox.x1, bbox.y1, bbox.x2, bbox.y2)
    )
