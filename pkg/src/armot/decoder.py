"""Causal transformer decoder over heterogeneous slots, the full tracking model,
and versioned checkpoint I/O.

Discrete slots are embedded through a single learnable table covering concrete
IDs, the new-object token, and (in box mode) the box-bin tokens; the ID output
head is tied to the first rows of that table. Continuous slots are injected
directly. Masking is strictly causal, so logits at a position depend only on
earlier slots.
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import asdict, dataclass

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from .core import IDVocabulary, ModelDims
from .raa import RegionAwareAlignment
from .sequence import (
    ContinuousSlot,
    DiscreteSlot,
    ObjectRepr,
    SequenceConfig,
    TokenSequence,
)
from .simdata import APPEARANCE_DIM
from .tmf import TemporalMemoryFusion
from .tokenizer import (
    BoxDiscretizer,
    ImageTokens,
    ImageTokenizer,
    ObjectAdapter,
    QueryEncoder,
    discretize_box,
)

CHECKPOINT_MAGIC = "armot-checkpoint"
CHECKPOINT_VERSION = 1


class OverlongSequenceError(ValueError):
    """Sequence exceeds the decoder's positional-embedding range."""


class CheckpointError(RuntimeError):
    """Unreadable, mismatched, or unwritable checkpoint file."""


@dataclass(frozen=True)
class DecoderConfig:
    layers: int = 6
    heads: int = 4
    d_lm: int = 128
    d_ff: int = 256
    max_len: int = 512
    dropout: float = 0.0
    positional: str = "learned"

    def __post_init__(self) -> None:
        if self.layers < 1 or self.heads < 1 or self.d_lm < 1 or self.d_ff < 1:
            raise ValueError("layers, heads, d_lm, d_ff must be positive")
        if self.d_lm % self.heads:
            raise ValueError(f"d_lm {self.d_lm} not divisible by heads {self.heads}")
        if self.positional != "learned":
            raise ValueError(f"unsupported positional encoding {self.positional!r}")


class CausalSelfAttention(nn.Module):
    def __init__(self, cfg: DecoderConfig):
        super().__init__()
        self.heads = cfg.heads
        self.head_dim = cfg.d_lm // cfg.heads
        self.q = nn.Linear(cfg.d_lm, cfg.d_lm)
        self.k = nn.Linear(cfg.d_lm, cfg.d_lm)
        self.v = nn.Linear(cfg.d_lm, cfg.d_lm)
        self.out = nn.Linear(cfg.d_lm, cfg.d_lm)
        self.dropout = nn.Dropout(cfg.dropout)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        length = x.shape[0]
        shape = (length, self.heads, self.head_dim)
        q = self.q(x).view(shape).transpose(0, 1)  # (heads, L, hd)
        k = self.k(x).view(shape).transpose(0, 1)
        v = self.v(x).view(shape).transpose(0, 1)
        scores = q @ k.transpose(-2, -1) / math.sqrt(self.head_dim)
        mask = torch.triu(
            torch.ones(length, length, dtype=torch.bool, device=x.device), diagonal=1
        )
        scores = scores.masked_fill(mask, float("-inf"))
        attended = torch.softmax(scores, dim=-1) @ v
        merged = attended.transpose(0, 1).reshape(length, -1)
        return self.dropout(self.out(merged))


class DecoderBlock(nn.Module):
    def __init__(self, cfg: DecoderConfig):
        super().__init__()
        self.norm1 = nn.LayerNorm(cfg.d_lm)
        self.attn = CausalSelfAttention(cfg)
        self.norm2 = nn.LayerNorm(cfg.d_lm)
        self.ff = nn.Sequential(
            nn.Linear(cfg.d_lm, cfg.d_ff),
            nn.GELU(),
            nn.Linear(cfg.d_ff, cfg.d_lm),
            nn.Dropout(cfg.dropout),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = x + self.attn(self.norm1(x))
        return x + self.ff(self.norm2(x))


class CausalDecoder(nn.Module):
    """Small causal decoder producing identity logits at prediction positions.

    vocab_size covers all discrete tokens; n_ids is the size of the identity
    head (concrete IDs plus the new-object token), read through the first
    n_ids embedding rows so head and embedding share one parameter.
    """

    def __init__(self, cfg: DecoderConfig, vocab_size: int, n_ids: int):
        super().__init__()
        if n_ids > vocab_size:
            raise ValueError("n_ids cannot exceed vocab_size")
        self.cfg = cfg
        self.vocab_size = vocab_size
        self.n_ids = n_ids
        self.token_embedding = nn.Embedding(vocab_size, cfg.d_lm)
        self.pos_embedding = nn.Embedding(cfg.max_len, cfg.d_lm)
        self.blocks = nn.ModuleList(DecoderBlock(cfg) for _ in range(cfg.layers))
        self.norm_f = nn.LayerNorm(cfg.d_lm)
        # unit-scale token embeddings with sqrt(d)-scaled logits keep the tied
        # head trainable at AdamW's natural step size; small positional terms
        # avoid drowning the continuous tokens
        nn.init.normal_(self.pos_embedding.weight, std=0.02)

    def embed_slots(self, seq: TokenSequence) -> torch.Tensor:
        vectors = []
        for slot in seq.slots:
            if isinstance(slot, DiscreteSlot):
                if not (0 <= slot.index < self.vocab_size):
                    raise ValueError(f"token index {slot.index} outside vocabulary")
                vectors.append(self.token_embedding.weight[slot.index])
            else:
                vectors.append(slot.vector)
        return torch.stack(vectors)

    def forward(self, seq: TokenSequence) -> tuple[torch.Tensor, torch.Tensor]:
        """Return (logits at predict positions, hidden states for every slot)."""
        length = len(seq.slots)
        if length == 0:
            raise ValueError("cannot run the decoder on an empty sequence")
        if length > self.cfg.max_len:
            raise OverlongSequenceError(
                f"sequence length {length} exceeds max_len {self.cfg.max_len}"
            )
        for p in seq.predict_positions:
            if not (1 <= p <= length):
                raise ValueError(f"predict position {p} outside (0, {length}]")
        x = self.embed_slots(seq)
        positions = torch.arange(length, device=x.device)
        x = x + self.pos_embedding(positions)
        for block in self.blocks:
            x = block(x)
        hidden = self.norm_f(x)
        id_rows = self.token_embedding.weight[: self.n_ids]
        if seq.predict_positions:
            states = hidden[[p - 1 for p in seq.predict_positions]]
            logits = states @ id_rows.T / math.sqrt(self.cfg.d_lm)
        else:
            logits = hidden.new_zeros((0, self.n_ids))
        return logits, hidden

    def predict_id(
        self, seq: TokenSequence, admissible: set[int]
    ) -> tuple[int, float, torch.Tensor]:
        """Constrained argmax over the identity head at the sequence's predict position.

        Returns (token index, softmax confidence within the admissible set, and
        the hidden state at the object's last slot, consumed by memory fusion).
        """
        if not admissible:
            raise ValueError("admissible set must not be empty")
        if len(seq.predict_positions) != 1:
            raise ValueError("predict_id expects exactly one predict position")
        logits, hidden = self.forward(seq)
        row = logits[0]
        mask = torch.full_like(row, float("-inf"))
        index = torch.tensor(sorted(admissible), dtype=torch.long)
        mask[index] = 0.0
        constrained = row + mask
        probs = torch.softmax(constrained[index], dim=0)
        best = int(torch.argmax(constrained).item())
        confidence = float(probs[index.tolist().index(best)].item())
        return best, confidence, hidden[seq.predict_positions[0] - 1]


class TrackingModel(nn.Module):
    """Everything learnable: tokenizers, alignment, memory fusion, and the decoder."""

    def __init__(
        self,
        dims: ModelDims | None = None,
        vocab: IDVocabulary | None = None,
        decoder_cfg: DecoderConfig | None = None,
        use_raa: bool = True,
        box_mode: bool = False,
        n_bins: int = 200,
        alpha: float = 1.0,
        include_history_images: bool = False,
        appearance_dim: int = APPEARANCE_DIM,
        channels: int = 3,
    ):
        super().__init__()
        self.dims = dims or ModelDims()
        self.vocab = vocab or IDVocabulary()
        self.decoder_cfg = decoder_cfg or DecoderConfig(d_lm=self.dims.d_lm)
        if self.decoder_cfg.d_lm != self.dims.d_lm:
            raise ValueError("decoder d_lm must match ModelDims.d_lm")
        self.use_raa = use_raa
        self.box_mode = box_mode
        self.include_history_images = include_history_images
        self.appearance_dim = appearance_dim
        self.channels = channels
        self.discretizer = BoxDiscretizer(
            n_bins=n_bins, alpha=alpha, offset=self.vocab.n_tokens
        )
        vocab_size = self.vocab.n_tokens + (n_bins if box_mode else 0)

        self.image_tokenizer = ImageTokenizer(self.dims, channels=channels)
        self.query_encoder = QueryEncoder(self.dims, appearance_dim=appearance_dim)
        self.object_adapter = ObjectAdapter(self.dims)
        self.raa = RegionAwareAlignment(self.dims)
        self.tmf = TemporalMemoryFusion(self.dims, heads=self.decoder_cfg.heads)
        self.decoder = CausalDecoder(self.decoder_cfg, vocab_size, self.vocab.n_tokens)

    def sequence_config(self, supervise_all_frames: bool = False) -> SequenceConfig:
        return SequenceConfig(
            include_history_images=self.include_history_images,
            box_mode=self.box_mode,
            discretizer=self.discretizer if self.box_mode else None,
            supervise_all_frames=supervise_all_frames,
        )

    def encode_frame(self, image, detections) -> tuple[ImageTokens, list[ObjectRepr]]:
        """Tokenize a frame image and its detections, in the detections' order."""
        image_tokens = self.image_tokenizer(image)
        reprs: list[ObjectRepr] = []
        for j, det in enumerate(detections):
            if self.box_mode:
                reprs.append(discretize_box(det.bbox, self.discretizer))
                continue
            if det.query_embedding is not None:
                query = torch.as_tensor(
                    np.asarray(det.query_embedding), dtype=torch.float32
                )
            else:
                query = self.query_encoder(det.bbox, det.appearance)
            token = self.object_adapter(query)
            if self.use_raa:
                token = self.raa(token, det.bbox, image_tokens, detection_index=j).token
            reprs.append(token)
        return image_tokens, reprs


def _meta_for(model: TrackingModel) -> dict:
    return {
        "magic": CHECKPOINT_MAGIC,
        "version": CHECKPOINT_VERSION,
        "dims": asdict(model.dims),
        "capacity": model.vocab.capacity,
        "decoder": asdict(model.decoder_cfg),
        "use_raa": model.use_raa,
        "box_mode": model.box_mode,
        "n_bins": model.discretizer.n_bins,
        "alpha": model.discretizer.alpha,
        "include_history_images": model.include_history_images,
        "appearance_dim": model.appearance_dim,
        "channels": model.channels,
    }


def model_from_meta(meta: dict) -> TrackingModel:
    return TrackingModel(
        dims=ModelDims(**meta["dims"]),
        vocab=IDVocabulary(capacity=meta["capacity"]),
        decoder_cfg=DecoderConfig(**meta["decoder"]),
        use_raa=meta["use_raa"],
        box_mode=meta["box_mode"],
        n_bins=meta["n_bins"],
        alpha=meta["alpha"],
        include_history_images=meta["include_history_images"],
        appearance_dim=meta["appearance_dim"],
        channels=meta["channels"],
    )


def save_checkpoint(path, model: TrackingModel, extra: dict | None = None) -> None:
    """Write header metadata plus named parameter blocks; fails loudly with the path."""
    meta = _meta_for(model)
    if extra:
        meta["extra"] = extra
    arrays = {
        name: tensor.detach().cpu().numpy()
        for name, tensor in model.state_dict().items()
    }
    buffer = io.BytesIO()
    np.savez(buffer, __meta__=np.array(json.dumps(meta)), **arrays)
    try:
        with open(path, "wb") as fh:
            fh.write(buffer.getvalue())
    except OSError as exc:
        raise CheckpointError(f"cannot write checkpoint {path}: {exc}") from exc


def load_checkpoint(path) -> TrackingModel:
    """Rebuild the model from a checkpoint, rejecting mismatched magic or version."""
    try:
        payload = np.load(path, allow_pickle=False)
    except (OSError, ValueError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if "__meta__" not in payload:
        raise CheckpointError(f"checkpoint {path} has no metadata header")
    meta = json.loads(str(payload["__meta__"].item()))
    if meta.get("magic") != CHECKPOINT_MAGIC:
        raise CheckpointError(f"checkpoint {path} has wrong magic {meta.get('magic')!r}")
    if meta.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"checkpoint {path} has version {meta.get('version')}, "
            f"expected {CHECKPOINT_VERSION}"
        )
    model = model_from_meta(meta)
    state = {
        name: torch.from_numpy(payload[name])
        for name in payload.files
        if name != "__meta__"
    }
    model.load_state_dict(state, strict=True)
    return model
