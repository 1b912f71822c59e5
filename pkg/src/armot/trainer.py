"""End-to-end optimization: clip sampling, progressive clip-length schedule,
weighted loss, and a cosine learning-rate schedule.

Identity supervision is teacher-forced cross-entropy over every prediction
position of the supervised frames. Detection losses (classification CE, L1 on
normalized coordinates, generalized IoU) apply only when the trainable toy
detector is enabled; in oracle-detector mode their weights are zero because
detections are given.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch
from scipy.optimize import linear_sum_assignment
from torch import nn
from torch.nn import functional as F

from .core import FrameObservation, ModelDims
from .decoder import TrackingModel
from .sequence import (
    ContinuousSlot,
    DiscreteSlot,
    FrameTokens,
    TokenSequence,
    assign_clip_ids,
    build_training_sequence,
    canonical_order,
    object_slots,
)
from .simdata import OracleConfig, oracle_detect
from .tmf import TrackMemory


class VideoTooShortError(ValueError):
    """Video cannot supply a clip of the requested length at the maximum gap."""


class NonFiniteLossError(RuntimeError):
    """Loss became NaN or infinite; message carries component diagnostics."""


@dataclass(frozen=True)
class LossWeights:
    """Non-negative weights of the four loss components; identity CE must be active."""

    cls: float = 2.0
    l1: float = 5.0
    giou: float = 2.0
    ce: float = 1.0

    def __post_init__(self) -> None:
        if min(self.cls, self.l1, self.giou, self.ce) < 0:
            raise ValueError("loss weights must be non-negative")
        if self.ce <= 0:
            raise ValueError("identity cross-entropy weight must be positive")

    @classmethod
    def oracle_mode(cls) -> "LossWeights":
        """Detections are given; only the identity loss is optimized."""
        return cls(cls=0.0, l1=0.0, giou=0.0, ce=1.0)

    @classmethod
    def toy_mode(cls) -> "LossWeights":
        return cls()


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 15
    steps_per_epoch: int = 50
    batch_size: int = 4
    lr: float = 6.0e-5
    weight_decay: float = 0.01
    cosine: bool = True
    clip_schedule: tuple[int, ...] = (2, 3, 4, 5)
    gap_range: tuple[int, int] = (0, 2)
    mode: str = "window"  # window | tmf
    supervise_all_frames: bool = False
    seed: int = 0

    def __post_init__(self) -> None:
        if self.epochs < 1 or self.steps_per_epoch < 1 or self.batch_size < 1:
            raise ValueError("epochs, steps_per_epoch, batch_size must be positive")
        if not self.clip_schedule or min(self.clip_schedule) < 2:
            raise ValueError("clip lengths must be at least 2")
        lo, hi = self.gap_range
        if lo < 0 or hi < lo:
            raise ValueError("gap range must satisfy 0 <= lo <= hi")
        if self.mode not in ("window", "tmf"):
            raise ValueError(f"mode must be 'window' or 'tmf', got {self.mode!r}")


def cosine_lr(step: int, total_steps: int, lr0: float, enabled: bool = True) -> float:
    """Cosine-annealed rate lr0 * 0.5 * (1 + cos(pi * step / total_steps))."""
    if not enabled:
        return lr0
    fraction = min(max(step / max(total_steps, 1), 0.0), 1.0)
    return lr0 * 0.5 * (1.0 + math.cos(math.pi * fraction))


def clip_length_for_epoch(epoch: int, total_epochs: int, schedule: tuple[int, ...]) -> int:
    """Progressive clip length; switch points spread evenly over the epochs."""
    stage_len = math.ceil(total_epochs / len(schedule))
    return schedule[min(epoch // stage_len, len(schedule) - 1)]


def sample_clip(
    video: list[FrameObservation],
    clip_len: int,
    gap_range: tuple[int, int],
    rng: np.random.Generator,
) -> list[FrameObservation]:
    """Clip of clip_len frames at stride gap+1, gap uniform over gap_range."""
    lo, hi = gap_range
    needed = (clip_len - 1) * (hi + 1) + 1
    if len(video) < needed:
        raise VideoTooShortError(
            f"video of {len(video)} frames cannot supply clip_len={clip_len} "
            f"at maximum gap {hi} (needs {needed})"
        )
    gap = int(rng.integers(lo, hi + 1))
    stride = gap + 1
    max_start = len(video) - ((clip_len - 1) * stride + 1)
    start = int(rng.integers(0, max_start + 1))
    return [video[start + k * stride] for k in range(clip_len)]


# --- toy detector (optional detection-loss mode) -------------------------------

class ToyDetector(nn.Module):
    """Minimal proposal head: image -> fixed set of boxes, objectness, queries."""

    def __init__(self, dims: ModelDims, n_queries: int = 8, channels: int = 3):
        super().__init__()
        self.dims = dims
        self.n_queries = n_queries
        self.stem = nn.Sequential(
            nn.Conv2d(channels, 16, 3, stride=2, padding=1),
            nn.GELU(),
            nn.Conv2d(16, 32, 3, stride=2, padding=1),
            nn.GELU(),
            nn.AdaptiveAvgPool2d((4, 4)),
        )
        self.trunk = nn.Sequential(nn.Flatten(0, -1), nn.Linear(32 * 16, 128), nn.GELU())
        self.box_head = nn.Linear(128, n_queries * 4)
        self.logit_head = nn.Linear(128, n_queries)
        self.query_head = nn.Linear(128, n_queries * dims.d_det)

    def forward(self, image: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        x = image.permute(2, 0, 1).unsqueeze(0)  # HWC -> 1CHW
        features = self.trunk(self.stem(x))
        raw = torch.sigmoid(self.box_head(features)).view(self.n_queries, 4)
        cx, cy, w, h = raw.unbind(dim=1)
        boxes = torch.stack(
            [
                (cx - w / 2).clamp(0.0, 1.0),
                (cy - h / 2).clamp(0.0, 1.0),
                (cx + w / 2).clamp(0.0, 1.0),
                (cy + h / 2).clamp(0.0, 1.0),
            ],
            dim=1,
        )
        logits = self.logit_head(features)
        queries = self.query_head(features).view(self.n_queries, self.dims.d_det)
        return boxes, logits, queries


def generalized_iou(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Elementwise generalized IoU of aligned (n, 4) x1y1x2y2 boxes."""
    area_a = (a[:, 2] - a[:, 0]).clamp(min=0) * (a[:, 3] - a[:, 1]).clamp(min=0)
    area_b = (b[:, 2] - b[:, 0]).clamp(min=0) * (b[:, 3] - b[:, 1]).clamp(min=0)
    iw = (torch.minimum(a[:, 2], b[:, 2]) - torch.maximum(a[:, 0], b[:, 0])).clamp(min=0)
    ih = (torch.minimum(a[:, 3], b[:, 3]) - torch.maximum(a[:, 1], b[:, 1])).clamp(min=0)
    inter = iw * ih
    union = area_a + area_b - inter
    iou = inter / union.clamp(min=1e-9)
    hw = torch.maximum(a[:, 2], b[:, 2]) - torch.minimum(a[:, 0], b[:, 0])
    hh = torch.maximum(a[:, 3], b[:, 3]) - torch.minimum(a[:, 1], b[:, 1])
    hull = (hw * hh).clamp(min=1e-9)
    return iou - (hull - union) / hull


def detection_loss(
    pred_boxes: torch.Tensor,
    pred_logits: torch.Tensor,
    gt_boxes: torch.Tensor,
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Hungarian-matched (classification CE, L1, GIoU) losses for one frame."""
    n_pred = pred_boxes.shape[0]
    targets = torch.zeros(n_pred)
    if gt_boxes.shape[0] == 0:
        zero = pred_boxes.sum() * 0.0
        return F.binary_cross_entropy_with_logits(pred_logits, targets), zero, zero
    with torch.no_grad():
        cost_l1 = torch.cdist(pred_boxes, gt_boxes, p=1)
        giou_mat = torch.stack(
            [generalized_iou(pred_boxes, g.expand_as(pred_boxes)) for g in gt_boxes],
            dim=1,
        )
        cost = cost_l1 + (1.0 - giou_mat)
    rows, cols = linear_sum_assignment(cost.numpy())
    targets[rows] = 1.0
    cls_loss = F.binary_cross_entropy_with_logits(pred_logits, targets)
    matched_pred = pred_boxes[rows]
    matched_gt = gt_boxes[cols]
    l1_loss = torch.abs(matched_pred - matched_gt).sum(dim=1).mean()
    giou_loss = (1.0 - generalized_iou(matched_pred, matched_gt)).mean()
    return cls_loss, l1_loss, giou_loss


# --- clip preparation and identity loss ----------------------------------------

def clip_frame_tokens(
    model: TrackingModel,
    clip: list[FrameObservation],
    oracle_cfg: OracleConfig,
    rng: np.random.Generator,
) -> list[FrameTokens]:
    """Run the oracle on each clip frame and tokenize, in canonical object order.

    False positives carry no identity and are excluded from the token stream;
    identity targets come from the ground-truth object behind each detection.
    """
    out = []
    for frame in clip:
        dets = [
            d for d in oracle_detect(frame, oracle_cfg, rng) if d.source_index is not None
        ]
        dets = [dets[i] for i in canonical_order(dets)]
        gt_ids = [frame.gt_ids[d.source_index] for d in dets]
        image_tokens, reprs = model.encode_frame(frame.image, dets)
        out.append(FrameTokens(image_tokens, reprs, gt_ids))
    return out


def _tmf_frame_sequence(
    memory_pairs: list[tuple[torch.Tensor, int]],
    frame: FrameTokens,
    context_ids: list[int],
) -> TokenSequence:
    """Teacher-forced per-frame sequence whose history is the memory pairs."""
    slots = []
    for vector, id_index in memory_pairs:
        slots.append(ContinuousSlot(vector, f"mem[{id_index}]"))
        slots.append(DiscreteSlot(id_index, f"mem-id[{id_index}]"))
    if frame.image_tokens is not None:
        slots.extend(
            ContinuousSlot(frame.image_tokens.tokens[k], f"img[cur,p{k}]")
            for k in range(frame.image_tokens.tokens.shape[0])
        )
    predict_positions = []
    for j, (obj, ctx_id) in enumerate(zip(frame.objects, context_ids)):
        slots.extend(object_slots(obj, f"obj[cur,{j}]"))
        predict_positions.append(len(slots))
        slots.append(DiscreteSlot(ctx_id, f"id[cur,{j}]"))
    return TokenSequence(slots=slots, predict_positions=predict_positions)


def _combined_window_sequence(
    model: TrackingModel,
    clip_tokens: list[FrameTokens],
    supervise_all_frames: bool,
) -> TokenSequence:
    """One teacher-forced sequence covering every supervised frame of the clip.

    Valid only when history blocks carry image tokens: each frame's prefix is
    then literally a prefix of the next frame's, so causal masking makes the
    logits at every predict position identical to the per-frame construction,
    at a fraction of the forward passes.
    """
    context_ids, target_ids = assign_clip_ids([f.gt_ids for f in clip_tokens], model.vocab)
    slots: list = []
    predict_positions: list[int] = []
    targets: list[int] = []
    for i, frame in enumerate(clip_tokens):
        if frame.image_tokens is not None:
            slots.extend(
                ContinuousSlot(frame.image_tokens.tokens[k], f"img[f{i},p{k}]")
                for k in range(frame.image_tokens.tokens.shape[0])
            )
        for j, (obj, ctx) in enumerate(zip(frame.objects, context_ids[i])):
            slots.extend(object_slots(obj, f"obj[f{i},{j}]"))
            if i > 0 or supervise_all_frames:
                predict_positions.append(len(slots))
                targets.append(target_ids[i][j])
            slots.append(DiscreteSlot(ctx, f"id[f{i},{j}]"))
    return TokenSequence(slots=slots, predict_positions=predict_positions, target_ids=targets)


def clip_id_logits(
    model: TrackingModel,
    clip_tokens: list[FrameTokens],
    mode: str,
    supervise_all_frames: bool = False,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Concatenated (logits, targets) over the clip's supervised predict positions."""
    logits_parts: list[torch.Tensor] = []
    target_parts: list[int] = []
    if mode == "window" and model.include_history_images:
        seq = _combined_window_sequence(model, clip_tokens, supervise_all_frames)
        if seq.predict_positions:
            logits, _ = model.decoder(seq)
            logits_parts.append(logits)
            target_parts.extend(seq.target_ids)
    elif mode == "window":
        seq_cfg = model.sequence_config(supervise_all_frames)
        for seq in build_training_sequence(clip_tokens, model.vocab, seq_cfg):
            if not seq.predict_positions:
                continue
            logits, _ = model.decoder(seq)
            logits_parts.append(logits)
            target_parts.extend(seq.target_ids)
    elif mode == "tmf":
        if model.box_mode:
            raise ValueError("tmf mode requires continuous object tokens, not box mode")
        context_ids, target_ids = assign_clip_ids(
            [f.gt_ids for f in clip_tokens], model.vocab
        )
        memories: dict[int, TrackMemory] = {}
        for i, frame in enumerate(clip_tokens):
            pairs = sorted(
                ((mem.vector, tid) for tid, mem in memories.items()), key=lambda p: p[1]
            )
            seq = _tmf_frame_sequence(pairs, frame, context_ids[i])
            if not frame.objects:
                continue
            logits, hidden = model.decoder(seq)
            if i > 0 or supervise_all_frames:
                logits_parts.append(logits)
                target_parts.extend(target_ids[i])
            for j, (obj, ctx) in enumerate(zip(frame.objects, context_ids[i])):
                state = hidden[seq.predict_positions[j] - 1]
                memories[ctx] = model.tmf.update(state, memories.get(ctx), obj)
    else:
        raise ValueError(f"unknown training mode {mode!r}")
    if not logits_parts:
        empty = torch.zeros((0, model.vocab.n_tokens))
        return empty, torch.zeros(0, dtype=torch.long)
    return torch.cat(logits_parts), torch.tensor(target_parts, dtype=torch.long)


def train_step(
    model: TrackingModel,
    batch: list[list[FrameObservation]],
    weights: LossWeights,
    optimizer: torch.optim.Optimizer,
    lr: float,
    cfg: TrainConfig,
    oracle_cfg: OracleConfig,
    rng: np.random.Generator,
    detector: ToyDetector | None = None,
) -> dict[str, float]:
    """One optimizer step over a batch of clips; returns loss components."""
    model.train()
    for group in optimizer.param_groups:
        group["lr"] = lr
    logits_all, targets_all = [], []
    det_terms = {"cls": [], "l1": [], "giou": []}
    for clip in batch:
        tokens = clip_frame_tokens(model, clip, oracle_cfg, rng)
        logits, targets = clip_id_logits(model, tokens, cfg.mode, cfg.supervise_all_frames)
        if logits.shape[0]:
            logits_all.append(logits)
            targets_all.append(targets)
        if detector is not None:
            for frame in clip:
                image = torch.as_tensor(frame.image, dtype=torch.float32)
                boxes, logit, _ = detector(image)
                visible = frame.gt_visible or [True] * len(frame.detections)
                gt_arr = np.array(
                    [d.bbox.as_array() for d, v in zip(frame.detections, visible) if v],
                    dtype=np.float32,
                ).reshape(-1, 4)
                gt = torch.from_numpy(gt_arr)
                cls_l, l1_l, giou_l = detection_loss(boxes, logit, gt)
                det_terms["cls"].append(cls_l)
                det_terms["l1"].append(l1_l)
                det_terms["giou"].append(giou_l)

    ce = (
        F.cross_entropy(torch.cat(logits_all), torch.cat(targets_all))
        if logits_all
        else torch.zeros(())
    )
    components = {"ce": ce}
    for name in ("cls", "l1", "giou"):
        components[name] = (
            torch.stack(det_terms[name]).mean() if det_terms[name] else torch.zeros(())
        )
    total = (
        weights.ce * components["ce"]
        + weights.cls * components["cls"]
        + weights.l1 * components["l1"]
        + weights.giou * components["giou"]
    )
    if not torch.isfinite(total):
        detail = ", ".join(f"{k}={float(v.detach()):.4g}" for k, v in components.items())
        raise NonFiniteLossError(f"non-finite training loss ({detail})")
    optimizer.zero_grad()
    if total.requires_grad:
        total.backward()
        optimizer.step()
    return {
        "loss": float(total.item()),
        "ce": float(components["ce"].item()),
        "cls": float(components["cls"].item()),
        "l1": float(components["l1"].item()),
        "giou": float(components["giou"].item()),
        "lr": lr,
        "n_targets": int(sum(t.shape[0] for t in targets_all)),
    }


@dataclass
class TrainingLog:
    """Per-step metrics, serializable as `step,loss,ce,lr` lines."""

    steps: list[tuple[int, float, float, float]] = field(default_factory=list)

    def append(self, step: int, metrics: dict[str, float]) -> None:
        self.steps.append((step, metrics["loss"], metrics["ce"], metrics["lr"]))

    def to_text(self) -> str:
        return "".join(
            f"{step},{loss:.6f},{ce:.6f},{lr:.8g}\n" for step, loss, ce, lr in self.steps
        )


def run_training(
    model: TrackingModel,
    videos: list[list[FrameObservation]],
    cfg: TrainConfig,
    oracle_cfg: OracleConfig = OracleConfig(),
    weights: LossWeights | None = None,
    detector: ToyDetector | None = None,
    progress_every: int = 0,
) -> TrainingLog:
    """Optimize the model on scenario videos; deterministic given cfg.seed."""
    if not videos:
        raise ValueError("no training videos")
    if weights is None:
        weights = LossWeights.toy_mode() if detector else LossWeights.oracle_mode()
    max_clip = max(cfg.clip_schedule)
    needed = (max_clip - 1) * (cfg.gap_range[1] + 1) + 1
    for i, video in enumerate(videos):
        if len(video) < needed:
            raise VideoTooShortError(
                f"video {i} has {len(video)} frames; schedule needs {needed}"
            )
    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    named = list(model.named_parameters())
    if detector is not None:
        named += list(detector.named_parameters())
    # no decay on embeddings, norms, and biases: the tied ID table doubles as
    # the output dictionary and must be free to grow
    decay = [p for name, p in named if p.ndim >= 2 and "embedding" not in name]
    no_decay = [p for name, p in named if p.ndim < 2 or "embedding" in name]
    optimizer = torch.optim.AdamW(
        [
            {"params": decay, "weight_decay": cfg.weight_decay},
            {"params": no_decay, "weight_decay": 0.0},
        ],
        lr=cfg.lr,
    )
    total_steps = cfg.epochs * cfg.steps_per_epoch
    log = TrainingLog()
    step = 0
    for epoch in range(cfg.epochs):
        clip_len = clip_length_for_epoch(epoch, cfg.epochs, cfg.clip_schedule)
        for _ in range(cfg.steps_per_epoch):
            lr = cosine_lr(step, total_steps, cfg.lr, cfg.cosine)
            batch = [
                sample_clip(
                    videos[int(rng.integers(len(videos)))], clip_len, cfg.gap_range, rng
                )
                for _ in range(cfg.batch_size)
            ]
            metrics = train_step(
                model, batch, weights, optimizer, lr, cfg, oracle_cfg, rng, detector
            )
            log.append(step, metrics)
            if progress_every and step % progress_every == 0:
                print(
                    f"step {step}/{total_steps} epoch {epoch} clip_len {clip_len} "
                    f"loss {metrics['loss']:.4f} ce {metrics['ce']:.4f} lr {lr:.3g}"
                )
            step += 1
    return log


def evaluate_id_accuracy(
    model: TrackingModel,
    videos: list[list[FrameObservation]],
    clip_len: int = 4,
    mode: str = "window",
    oracle_cfg: OracleConfig = OracleConfig(),
    seed: int = 0,
) -> float:
    """Teacher-forced identity accuracy over one deterministic clip per video."""
    rng = np.random.default_rng(seed)
    correct = total = 0
    model.eval()
    with torch.no_grad():
        for video in videos:
            length = min(clip_len, len(video))
            if length < 2:
                continue
            clip = video[:length]
            tokens = clip_frame_tokens(model, clip, oracle_cfg, rng)
            logits, targets = clip_id_logits(model, tokens, mode)
            if logits.shape[0] == 0:
                continue
            correct += int((logits.argmax(dim=1) == targets).sum().item())
            total += targets.shape[0]
    return correct / total if total else 0.0
