"""Construction of the decoder's heterogeneous token prefixes.

A sequence is a list of slots, each either a continuous vector (image patch
token, object token, or track memory) or a discrete vocabulary index (identity
token or box-bin token). Training sequences are teacher-forced: the slot at a
prediction position holds the concrete ID assigned to the object, while the
aligned target is that ID or the new-object token at the identity's first
appearance, mirroring inference where a new-object prediction triggers an
immediate ID assignment.

Objects within a frame always appear in canonical order: descending detection
confidence, ties broken by ascending x1, y1, x2, y2. This makes construction
invariant to the permutation of the detector's output.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch

from .core import Detection, IDVocabulary, assign_free_id
from .tokenizer import BoxDiscretizer, ImageTokens

# An object representation is a continuous token (query mode) or the 4 box-bin
# vocabulary indices (box mode).
ObjectRepr = torch.Tensor | tuple[int, int, int, int]


class ClipTooShortError(ValueError):
    """Training clips need at least two frames."""


@dataclass
class ContinuousSlot:
    vector: torch.Tensor
    source: str


@dataclass
class DiscreteSlot:
    index: int
    source: str


Slot = ContinuousSlot | DiscreteSlot


@dataclass
class TokenSequence:
    """Decoder input: slots, positions where an ID must be predicted, targets.

    A predict position p means the ID token at slot index p is predicted from
    slots[0:p]; it always immediately follows the object's last slot. During
    inference p equals len(slots): the ID is generated, not teacher-forced.
    target_ids aligns with predict_positions and is None at inference.
    """

    slots: list[Slot] = field(default_factory=list)
    predict_positions: list[int] = field(default_factory=list)
    target_ids: list[int] | None = None

    def __len__(self) -> int:
        return len(self.slots)


@dataclass(frozen=True)
class SequenceConfig:
    include_history_images: bool = False
    box_mode: bool = False
    discretizer: BoxDiscretizer | None = None
    supervise_all_frames: bool = False

    def __post_init__(self) -> None:
        if self.box_mode and self.discretizer is None:
            raise ValueError("box_mode requires a discretizer")


def canonical_order(detections: list[Detection]) -> list[int]:
    """Deterministic within-frame processing order over detection indices."""
    def key(i: int):
        d = detections[i]
        return (-d.confidence, d.bbox.x1, d.bbox.y1, d.bbox.x2, d.bbox.y2)

    return sorted(range(len(detections)), key=key)


def object_slots(obj: ObjectRepr, source: str) -> list[Slot]:
    if isinstance(obj, torch.Tensor):
        return [ContinuousSlot(obj, source)]
    return [DiscreteSlot(int(b), f"{source}.bin{k}") for k, b in enumerate(obj)]


def build_frame_block(
    image_tokens: ImageTokens | None,
    pairs: list[tuple[ObjectRepr, int]],
    frame_tag: str = "f?",
) -> list[Slot]:
    """One frame's slots: optional image tokens, then (object, ID) pairs in order."""
    slots: list[Slot] = []
    if image_tokens is not None:
        slots.extend(
            ContinuousSlot(image_tokens.tokens[k], f"img[{frame_tag},p{k}]")
            for k in range(image_tokens.tokens.shape[0])
        )
    for j, (obj, id_index) in enumerate(pairs):
        slots.extend(object_slots(obj, f"obj[{frame_tag},{j}]"))
        slots.append(DiscreteSlot(id_index, f"id[{frame_tag},{j}]"))
    return slots


@dataclass
class FrameTokens:
    """One clip frame prepared for sequence building; objects in canonical order."""

    image_tokens: ImageTokens | None
    objects: list[ObjectRepr]
    gt_ids: list[int]

    def __post_init__(self) -> None:
        if len(self.objects) != len(self.gt_ids):
            raise ValueError("objects and gt_ids must align")


def assign_clip_ids(
    frames_gt_ids: list[list[int]], vocab: IDVocabulary
) -> tuple[list[list[int]], list[list[int]]]:
    """Per-frame (context IDs, target IDs) under the first-appearance protocol.

    The first time a ground-truth identity appears in the clip its target is
    the new-object token and the smallest free concrete ID becomes its context
    ID for the rest of the clip; later appearances target that concrete ID.
    """
    assigned: dict[int, int] = {}
    context_ids, target_ids = [], []
    for gt_ids in frames_gt_ids:
        ctx, tgt = [], []
        for gid in gt_ids:
            if gid in assigned:
                ctx.append(assigned[gid])
                tgt.append(assigned[gid])
            else:
                new_id = assign_free_id(set(assigned.values()), vocab)
                assigned[gid] = new_id
                ctx.append(new_id)
                tgt.append(vocab.new_index)
        context_ids.append(ctx)
        target_ids.append(tgt)
    return context_ids, target_ids


def build_training_sequence(
    frames: list[FrameTokens],
    vocab: IDVocabulary,
    config: SequenceConfig = SequenceConfig(),
) -> list[TokenSequence]:
    """Teacher-forced sequences, one per supervised frame of the clip.

    Frame i's sequence concatenates the blocks of frames 0..i-1 (image tokens
    included only when configured), frame i's image tokens, then its (object,
    ID) pairs; every ID slot of frame i is a prediction position. The first
    frame is skipped unless supervise_all_frames is set, since its targets are
    all forced to the new-object token by construction.
    """
    if len(frames) < 2:
        raise ClipTooShortError(f"clip has {len(frames)} frame(s); need at least 2")
    context_ids, target_ids = assign_clip_ids([f.gt_ids for f in frames], vocab)

    history: list[Slot] = []
    sequences = []
    for i, frame in enumerate(frames):
        pairs = list(zip(frame.objects, context_ids[i]))
        if i > 0 or config.supervise_all_frames:
            slots = list(history)
            if frame.image_tokens is not None:
                slots.extend(
                    ContinuousSlot(frame.image_tokens.tokens[k], f"img[f{i},p{k}]")
                    for k in range(frame.image_tokens.tokens.shape[0])
                )
            predict_positions = []
            for j, (obj, ctx_id) in enumerate(pairs):
                slots.extend(object_slots(obj, f"obj[f{i},{j}]"))
                predict_positions.append(len(slots))
                slots.append(DiscreteSlot(ctx_id, f"id[f{i},{j}]"))
            sequences.append(
                TokenSequence(
                    slots=slots,
                    predict_positions=predict_positions,
                    target_ids=list(target_ids[i]),
                )
            )
        history.extend(
            build_frame_block(
                frame.image_tokens if config.include_history_images else None,
                pairs,
                frame_tag=f"f{i}",
            )
        )
    return sequences


@dataclass
class WindowHistory:
    """Sliding-window reference: past frame blocks plus lost-track pairs, oldest first."""

    frame_blocks: list[list[Slot]] = field(default_factory=list)
    lost_pairs: list[tuple[ObjectRepr, int]] = field(default_factory=list)


@dataclass
class TmfHistory:
    """Compressed reference: one (memory token, ID) pair per live track."""

    memory_pairs: list[tuple[torch.Tensor, int]] = field(default_factory=list)


def build_inference_prefix(
    history: WindowHistory | TmfHistory,
    current: ImageTokens | None,
    answered: list[tuple[ObjectRepr, int]],
    next_obj: ObjectRepr,
    config: SequenceConfig = SequenceConfig(),
) -> TokenSequence:
    """Prefix for predicting one object's ID; ends at the single predict position."""
    slots: list[Slot] = []
    if isinstance(history, WindowHistory):
        for block in history.frame_blocks:
            slots.extend(block)
        for j, (obj, id_index) in enumerate(history.lost_pairs):
            slots.extend(object_slots(obj, f"tcm[{j}]"))
            slots.append(DiscreteSlot(id_index, f"tcm-id[{j}]"))
    else:
        for vector, id_index in history.memory_pairs:
            slots.append(ContinuousSlot(vector, f"mem[{id_index}]"))
            slots.append(DiscreteSlot(id_index, f"mem-id[{id_index}]"))
    if current is not None:
        slots.extend(
            ContinuousSlot(current.tokens[k], f"img[cur,p{k}]")
            for k in range(current.tokens.shape[0])
        )
    for j, (obj, id_index) in enumerate(answered):
        slots.extend(object_slots(obj, f"obj[cur,{j}]"))
        slots.append(DiscreteSlot(id_index, f"id[cur,{j}]"))
    slots.extend(object_slots(next_obj, "obj[cur,next]"))
    return TokenSequence(slots=slots, predict_positions=[len(slots)], target_ids=None)


def dump_sequence(seq: TokenSequence) -> str:
    """Debug dump, one slot per line: kind, source, vocab index or vector norm."""
    lines = []
    for slot in seq.slots:
        if isinstance(slot, DiscreteSlot):
            lines.append(f"discrete\t{slot.source}\tindex={slot.index}")
        else:
            lines.append(f"continuous\t{slot.source}\tnorm={float(slot.vector.norm()):.6f}")
    positions = ",".join(str(p) for p in seq.predict_positions)
    targets = (
        ",".join(str(t) for t in seq.target_ids) if seq.target_ids is not None else "-"
    )
    lines.append(f"predict\tpositions={positions}\ttargets={targets}")
    return "\n".join(lines) + "\n"
