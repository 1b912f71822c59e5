"""Frame-by-frame tracking in sliding-window or memory-fusion mode.

Each frame's detections are confidence-filtered, tokenized, and processed in
canonical order. For every object the decoder predicts an identity restricted
to the reference IDs not yet claimed this frame plus the new-object token; a
new-object prediction immediately claims the smallest free ID. The temporal
context manager keeps each track's latest token and lost-frame counter and
prunes a track once n_lost exceeds tau_loss, after which its ID returns to the
free pool.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import torch

from .core import (
    BBox,
    FrameObservation,
    TrackContext,
    TrackEntry,
    TrackingResult,
    assign_free_id,
)
from .decoder import TrackingModel
from .sequence import (
    ObjectRepr,
    TmfHistory,
    WindowHistory,
    build_frame_block,
    build_inference_prefix,
    canonical_order,
)
from .tmf import TrackMemory
from .tokenizer import ImageTokens


class ConfigMismatchError(RuntimeError):
    """Inference configuration incompatible with the loaded model."""


@dataclass(frozen=True)
class InferConfig:
    mode: str = "window"  # window | tmf
    window: int = 4  # frames of history kept in window mode (T)
    tau_det: float = 0.5
    tau_loss: int = 10
    capacity: int | None = None  # must match the model's ID capacity when set

    def __post_init__(self) -> None:
        if self.mode not in ("window", "tmf"):
            raise ValueError(f"mode must be 'window' or 'tmf', got {self.mode!r}")
        if self.mode == "window" and self.window < 1:
            raise ValueError("window mode requires window >= 1")
        if not (0.0 <= self.tau_det <= 1.0):
            raise ValueError("tau_det must be in [0, 1]")
        if self.tau_loss < 1:
            raise ValueError("tau_loss must be >= 1")


@dataclass
class _WindowRecord:
    frame_index: int
    pairs: list[tuple[ObjectRepr, int]]
    image_tokens: ImageTokens | None


@dataclass
class TrackerState:
    """Mutable per-video state: TCM contexts, TMF memories, window records."""

    contexts: dict[int, TrackContext] = field(default_factory=dict)
    memories: dict[int, TrackMemory] = field(default_factory=dict)
    window: deque[_WindowRecord] = field(default_factory=deque)
    frame_count: int = 0


def init_state(cfg: InferConfig) -> TrackerState:
    return TrackerState(window=deque(maxlen=cfg.window))


def _reference_history(
    model: TrackingModel, state: TrackerState, cfg: InferConfig
) -> WindowHistory | TmfHistory:
    if cfg.mode == "tmf":
        pairs = sorted(
            ((mem.vector, tid) for tid, mem in state.memories.items()),
            key=lambda item: item[1],
        )
        return TmfHistory(memory_pairs=pairs)
    blocks = [
        build_frame_block(
            record.image_tokens if model.include_history_images else None,
            record.pairs,
            frame_tag=f"f{record.frame_index}",
        )
        for record in state.window
    ]
    visible_ids = {tid for record in state.window for _, tid in record.pairs}
    lost = sorted(
        (ctx for tid, ctx in state.contexts.items() if tid not in visible_ids),
        key=lambda ctx: (ctx.last_seen, ctx.track_id),
    )
    lost_pairs = [(ctx.latest_token, ctx.track_id) for ctx in lost]
    return WindowHistory(frame_blocks=blocks, lost_pairs=lost_pairs)


def track_frame(
    model: TrackingModel,
    state: TrackerState,
    frame: FrameObservation,
    cfg: InferConfig,
) -> list[tuple[int, BBox, float]]:
    """Assign an ID to each confident detection and update the tracker state."""
    current = state.frame_count
    detections = [d for d in frame.detections if d.confidence >= cfg.tau_det]
    detections = [detections[i] for i in canonical_order(detections)]
    image_tokens: ImageTokens | None = None
    reprs: list[ObjectRepr] = []
    if detections:
        image_tokens, reprs = model.encode_frame(frame.image, detections)
    history = _reference_history(model, state, cfg)

    outputs: list[tuple[int, BBox, float]] = []
    answered: list[tuple[ObjectRepr, int]] = []
    matched: dict[int, tuple[torch.Tensor, ObjectRepr]] = {}
    used: set[int] = set()
    seq_cfg = model.sequence_config()
    for det, repr_ in zip(detections, reprs):
        admissible = {tid for tid in state.contexts if tid not in used}
        admissible.add(model.vocab.new_index)
        prefix = build_inference_prefix(history, image_tokens, answered, repr_, seq_cfg)
        choice, _, hidden = model.decoder.predict_id(prefix, admissible)
        if choice == model.vocab.new_index:
            track_id = assign_free_id(set(state.contexts), model.vocab)
            state.contexts[track_id] = TrackContext(
                track_id=track_id, latest_token=repr_, n_lost=0, last_seen=current
            )
        else:
            track_id = choice
        used.add(track_id)
        answered.append((repr_, track_id))
        matched[track_id] = (hidden, repr_)
        outputs.append((track_id, det.bbox, det.confidence))

    # Temporal context update: matched tracks refresh, others age, expired prune.
    for track_id, (hidden, repr_) in matched.items():
        ctx = state.contexts[track_id]
        ctx.latest_token = repr_
        ctx.n_lost = 0
        ctx.last_seen = current
        if cfg.mode == "tmf":
            state.memories[track_id] = model.tmf.update(
                hidden, state.memories.get(track_id), repr_
            )
    expired: set[int] = set()
    for track_id, ctx in list(state.contexts.items()):
        if track_id not in matched:
            ctx.n_lost += 1
            if ctx.n_lost > cfg.tau_loss:
                expired.add(track_id)
                del state.contexts[track_id]
                state.memories.pop(track_id, None)
    if expired:
        # expired tracks leave the whole reference: a recycled ID must never
        # label two different tokens in one prefix
        for record in state.window:
            record.pairs = [(r, tid) for r, tid in record.pairs if tid not in expired]
    state.window.append(
        _WindowRecord(frame_index=current, pairs=answered, image_tokens=image_tokens)
    )
    state.frame_count += 1
    return outputs


def track_video(
    model: TrackingModel,
    video: list[FrameObservation],
    cfg: InferConfig = InferConfig(),
) -> TrackingResult:
    """Track a whole video; deterministic for a fixed checkpoint and config."""
    if cfg.capacity is not None and cfg.capacity != model.vocab.capacity:
        raise ConfigMismatchError(
            f"config capacity {cfg.capacity} != model capacity {model.vocab.capacity}"
        )
    if cfg.mode == "tmf" and model.box_mode:
        raise ConfigMismatchError("tmf mode requires continuous object tokens, not box mode")
    model.eval()
    state = init_state(cfg)
    entries: list[TrackEntry] = []
    width = height = 0
    with torch.no_grad():
        for i, frame in enumerate(video):
            height, width = frame.image.shape[0], frame.image.shape[1]
            for track_id, bbox, conf in track_frame(model, state, frame, cfg):
                entries.append(TrackEntry(i, track_id, bbox, conf))
    return TrackingResult(
        entries=entries, n_frames=len(video), width=width, height=height
    )
