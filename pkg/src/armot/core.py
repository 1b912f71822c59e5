"""Domain types shared across the tracking pipeline, plus track-ID bookkeeping."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch


class CapacityExhaustedError(RuntimeError):
    """Every concrete track ID is in use; the vocabulary is too small for the scene."""


@dataclass(frozen=True)
class ModelDims:
    """Widths of the learned components and the side length of image patches.

    d_img: channel width of the patch encoder.
    d_lm:  embedding width of the causal decoder; every token lives here.
    d_det: width of detection query embeddings.
    patch: patch side length; input images must be divisible by it.
    """

    d_img: int = 64
    d_lm: int = 128
    d_det: int = 64
    patch: int = 8

    def __post_init__(self) -> None:
        for name in ("d_img", "d_lm", "d_det", "patch"):
            value = getattr(self, name)
            if not isinstance(value, int) or value < 1:
                raise ValueError(f"{name} must be a positive integer, got {value!r}")


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box in normalized image coordinates, corners in [0, 1]."""

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self) -> None:
        if not (0.0 <= self.x1 < self.x2 <= 1.0 and 0.0 <= self.y1 < self.y2 <= 1.0):
            raise ValueError(
                f"invalid bbox ({self.x1}, {self.y1}, {self.x2}, {self.y2}): "
                "need 0 <= x1 < x2 <= 1 and 0 <= y1 < y2 <= 1"
            )

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def center(self) -> tuple[float, float]:
        return (0.5 * (self.x1 + self.x2), 0.5 * (self.y1 + self.y2))

    def as_array(self) -> np.ndarray:
        return np.array([self.x1, self.y1, self.x2, self.y2], dtype=np.float64)


@dataclass
class Detection:
    """One detected object in a frame.

    query_embedding is the detector-side feature (length d_det). The simulation
    oracle leaves it as None; the model's frame encoder fills it from the box and
    appearance statistics at tokenization time.

    appearance and source_index are simulator annotations: source_index is the
    ground-truth object the detection came from (None for false positives) and is
    read only when building training targets, never by tracking or evaluation.
    """

    bbox: BBox
    confidence: float
    query_embedding: np.ndarray | None = None
    appearance: np.ndarray | None = None
    source_index: int | None = None

    def __post_init__(self) -> None:
        if not (0.0 <= self.confidence <= 1.0):
            raise ValueError(f"confidence must be in [0, 1], got {self.confidence}")


@dataclass
class FrameObservation:
    """One video frame: image array, its detections, and optional ground truth.

    image has shape (H, W, C) with values in [0, 1]. gt_ids and gt_visible,
    when present, align 1:1 with detections; gt_visible flags boxes that are
    recorded but occluded (they emit no oracle detection).
    """

    frame_index: int
    image: np.ndarray
    detections: list[Detection] = field(default_factory=list)
    gt_ids: list[int] | None = None
    gt_visible: list[bool] | None = None

    def __post_init__(self) -> None:
        if self.frame_index < 0:
            raise ValueError("frame_index must be non-negative")
        if self.image.ndim != 3:
            raise ValueError(f"image must be H x W x C, got shape {self.image.shape}")
        if self.gt_ids is not None and len(self.gt_ids) != len(self.detections):
            raise ValueError("gt_ids must align with detections")
        if self.gt_visible is not None and len(self.gt_visible) != len(self.detections):
            raise ValueError("gt_visible must align with detections")


@dataclass(frozen=True)
class IDVocabulary:
    """Identity token space: concrete IDs 0..capacity-1 plus a reserved new-object token.

    The learnable embedding rows for these indices live in the decoder; this type
    owns the index arithmetic only.
    """

    capacity: int = 64

    def __post_init__(self) -> None:
        if not isinstance(self.capacity, int) or self.capacity < 1:
            raise ValueError(f"capacity must be a positive integer, got {self.capacity!r}")

    @property
    def new_index(self) -> int:
        """Index of the reserved new-object token; never a concrete ID."""
        return self.capacity

    @property
    def n_tokens(self) -> int:
        """Concrete IDs plus the new-object token."""
        return self.capacity + 1

    def is_concrete(self, index: int) -> bool:
        return 0 <= index < self.capacity


@dataclass
class TrackContext:
    """Per-track state kept by the temporal context manager during inference.

    latest_token is the most recent object representation for the track: a
    d_lm tensor in query-token mode, a tuple of bin token indices in box mode.
    While a track is unmatched, n_lost equals current_frame - last_seen - 1 at
    the start of each frame's processing and is incremented at frame end.
    """

    track_id: int
    latest_token: torch.Tensor | tuple[int, ...]
    n_lost: int = 0
    last_seen: int = 0


@dataclass(frozen=True)
class TrackEntry:
    """One (frame, id, box) record of a tracking result; frame and id are 0-based."""

    frame: int
    track_id: int
    bbox: BBox
    confidence: float = 1.0


@dataclass
class TrackingResult:
    """Per-video tracker output, serializable to MOTChallenge text via simdata."""

    entries: list[TrackEntry] = field(default_factory=list)
    n_frames: int = 0
    width: int = 0
    height: int = 0

    @property
    def max_frame(self) -> int:
        return max((e.frame for e in self.entries), default=-1)


def assign_free_id(active_ids: set[int], vocab: IDVocabulary) -> int:
    """Return the smallest concrete ID not currently active.

    Raises CapacityExhaustedError when all capacity IDs are taken.
    """
    for candidate in range(vocab.capacity):
        if candidate not in active_ids:
            return candidate
    raise CapacityExhaustedError(
        f"all {vocab.capacity} track IDs are active; increase the vocabulary capacity"
    )
