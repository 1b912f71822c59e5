"""Synthetic videos with ground-truth tracks, a noisy detection oracle, and MOT text I/O.

Scenarios are rectangles with per-object colors and texture moving over a plain
background under linear, sinusoidal, or bounce motion. Occlusion events hide an
object for a window of frames: its ground-truth box is still recorded, flagged
invisible, and it emits no oracle detection. Everything is deterministic given
the config seed. Pixel<->normalized conversion happens only at the MOT text
boundary; all internal coordinates are normalized.
"""

from __future__ import annotations

import colorsys
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import BBox, Detection, FrameObservation, TrackEntry, TrackingResult

APPEARANCE_DIM = 4  # (r, g, b, texture amplitude)

MOTION_MODELS = ("linear", "sinusoidal", "bounce")


class ScenarioConfigError(ValueError):
    """Invalid scenario or oracle configuration."""


class MotFormatError(ValueError):
    """Malformed MOTChallenge text; message names the offending line."""


@dataclass(frozen=True)
class OcclusionEvent:
    """Object `object_index` is invisible for frames [start, start + duration)."""

    start: int
    duration: int
    object_index: int

    def covers(self, frame: int) -> bool:
        return self.start <= frame < self.start + self.duration

    @classmethod
    def parse(cls, text: str) -> "OcclusionEvent":
        parts = text.split(":")
        if len(parts) != 3:
            raise ScenarioConfigError(
                f"occlusion event must be start:duration:object, got {text!r}"
            )
        return cls(int(parts[0]), int(parts[1]), int(parts[2]))

    def __str__(self) -> str:
        return f"{self.start}:{self.duration}:{self.object_index}"


@dataclass(frozen=True)
class ScenarioConfig:
    n_objects: int = 3
    n_frames: int = 24
    height: int = 32
    width: int = 32
    motion: str = "linear"
    occlusions: tuple[OcclusionEvent, ...] = ()
    appearance_similarity: float = 0.0
    min_separation: float = 0.0
    size_min: float = 0.14
    size_max: float = 0.30
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_objects < 1 or self.n_frames < 1:
            raise ScenarioConfigError("n_objects and n_frames must be positive")
        if not (0.0 < self.size_min <= self.size_max <= 0.9):
            raise ScenarioConfigError("need 0 < size_min <= size_max <= 0.9")
        if self.motion not in MOTION_MODELS:
            raise ScenarioConfigError(
                f"motion must be one of {MOTION_MODELS}, got {self.motion!r}"
            )
        if not (0.0 <= self.appearance_similarity <= 1.0):
            raise ScenarioConfigError("appearance_similarity must be in [0, 1]")
        for event in self.occlusions:
            if event.duration < 1:
                raise ScenarioConfigError(f"occlusion duration must be >= 1: {event}")
            if not (0 <= event.start and event.start + event.duration <= self.n_frames):
                raise ScenarioConfigError(
                    f"occlusion window {event} outside [0, {self.n_frames})"
                )
            if not (0 <= event.object_index < self.n_objects):
                raise ScenarioConfigError(f"occlusion object out of range: {event}")


@dataclass(frozen=True)
class OracleConfig:
    """Detection noise model: dropout, coordinate jitter, and Poisson false positives."""

    p_miss: float = 0.0
    fp_rate: float = 0.0
    jitter_sigma: float = 0.0
    conf_loc: float = 1.0
    conf_scale: float = 0.0
    fp_conf_loc: float = 0.6
    fp_conf_scale: float = 0.1

    def __post_init__(self) -> None:
        if not (0.0 <= self.p_miss <= 1.0):
            raise ScenarioConfigError("p_miss must be in [0, 1]")
        if self.fp_rate < 0.0 or self.jitter_sigma < 0.0:
            raise ScenarioConfigError("fp_rate and jitter_sigma must be >= 0")


@dataclass(frozen=True)
class _ObjectTrack:
    """Analytic trajectory: center(frame) plus fixed size and appearance."""

    cx0: float
    cy0: float
    vx: float
    vy: float
    w: float
    h: float
    amp_x: float
    amp_y: float
    freq: float
    phase: float
    color: np.ndarray
    texture_amp: float
    texture: np.ndarray

    def center(self, frame: int, motion: str, n_frames: int) -> tuple[float, float]:
        t = float(frame)
        if motion == "linear":
            return (self.cx0 + self.vx * t, self.cy0 + self.vy * t)
        if motion == "sinusoidal":
            cx = self.cx0 + self.amp_x * math.sin(2.0 * math.pi * self.freq * t + self.phase)
            cy = self.cy0 + self.amp_y * math.sin(4.0 * math.pi * self.freq * t)
            return (cx, cy)
        # bounce: reflect the linear path off the walls of the admissible center box
        return (
            _reflect(self.cx0 + self.vx * t, self.w / 2.0, 1.0 - self.w / 2.0),
            _reflect(self.cy0 + self.vy * t, self.h / 2.0, 1.0 - self.h / 2.0),
        )

    @property
    def appearance(self) -> np.ndarray:
        return np.concatenate([self.color, [self.texture_amp]]).astype(np.float64)


def _reflect(value: float, lo: float, hi: float) -> float:
    span = hi - lo
    if span <= 0:
        return lo
    period = 2.0 * span
    offset = (value - lo) % period
    return lo + (offset if offset <= span else period - offset)


def _bbox_at(track: _ObjectTrack, frame: int, cfg: ScenarioConfig) -> BBox:
    cx, cy = track.center(frame, cfg.motion, cfg.n_frames)
    x1 = min(max(cx - track.w / 2.0, 0.0), 1.0 - track.w)
    y1 = min(max(cy - track.h / 2.0, 0.0), 1.0 - track.h)
    return BBox(x1, y1, min(x1 + track.w, 1.0), min(y1 + track.h, 1.0))


def _sample_tracks(cfg: ScenarioConfig, rng: np.random.Generator) -> list[_ObjectTrack]:
    # evenly spread hues (with jitter) keep identities visually distinct at
    # similarity 0; the similarity scalar pulls all colors toward their mean
    offset = rng.uniform(0.0, 1.0)
    palette = np.empty((cfg.n_objects, 3))
    for j in range(cfg.n_objects):
        hue = (offset + (j + rng.uniform(-0.2, 0.2)) / cfg.n_objects) % 1.0
        palette[j] = colorsys.hsv_to_rgb(hue, rng.uniform(0.7, 1.0), rng.uniform(0.7, 1.0))
    mean_color = palette.mean(axis=0)
    s = cfg.appearance_similarity
    colors = (1.0 - s) * palette + s * mean_color

    tracks = []
    for j in range(cfg.n_objects):
        w = rng.uniform(cfg.size_min, cfg.size_max)
        h = rng.uniform(cfg.size_min, cfg.size_max)
        margin_x, margin_y = w / 2.0 + 0.02, h / 2.0 + 0.02
        cx0 = rng.uniform(margin_x, 1.0 - margin_x)
        cy0 = rng.uniform(margin_y, 1.0 - margin_y)
        if cfg.motion == "linear":
            # choose an endpoint inside the frame so the whole path stays valid
            ex = rng.uniform(margin_x, 1.0 - margin_x)
            ey = rng.uniform(margin_y, 1.0 - margin_y)
            steps = max(cfg.n_frames - 1, 1)
            vx, vy = (ex - cx0) / steps, (ey - cy0) / steps
        else:
            speed = rng.uniform(0.005, 0.02)
            angle = rng.uniform(0.0, 2.0 * math.pi)
            vx, vy = speed * math.cos(angle), speed * math.sin(angle)
        head_x = max(min(0.25, cx0 - margin_x, 1.0 - margin_x - cx0), 0.0)
        head_y = max(min(0.25, cy0 - margin_y, 1.0 - margin_y - cy0), 0.0)
        amp_x = rng.uniform(0.0, head_x)
        amp_y = rng.uniform(0.0, head_y)
        tracks.append(
            _ObjectTrack(
                cx0=cx0, cy0=cy0, vx=vx, vy=vy, w=w, h=h,
                amp_x=amp_x, amp_y=amp_y,
                freq=rng.uniform(0.02, 0.08),
                phase=rng.uniform(0.0, 2.0 * math.pi),
                color=colors[j],
                texture_amp=rng.uniform(0.03, 0.12),
                texture=rng.uniform(-1.0, 1.0, size=(8, 8)),
            )
        )
    return tracks


def _min_pairwise_separation(tracks: list[_ObjectTrack], cfg: ScenarioConfig) -> float:
    best = math.inf
    for f in range(cfg.n_frames):
        centers = [t.center(f, cfg.motion, cfg.n_frames) for t in tracks]
        for a in range(len(centers)):
            for b in range(a + 1, len(centers)):
                d = math.hypot(centers[a][0] - centers[b][0], centers[a][1] - centers[b][1])
                best = min(best, d)
    return best


def _render(cfg: ScenarioConfig, tracks: list[_ObjectTrack], frame: int,
            visible: list[bool]) -> np.ndarray:
    image = np.full((cfg.height, cfg.width, 3), 0.1, dtype=np.float32)
    for j, track in enumerate(tracks):
        if not visible[j]:
            continue
        box = _bbox_at(track, frame, cfg)
        c0 = int(math.floor(box.x1 * cfg.width))
        c1 = max(c0 + 1, int(math.ceil(box.x2 * cfg.width)))
        r0 = int(math.floor(box.y1 * cfg.height))
        r1 = max(r0 + 1, int(math.ceil(box.y2 * cfg.height)))
        c1, r1 = min(c1, cfg.width), min(r1, cfg.height)
        rows = np.arange(r0, r1)
        cols = np.arange(c0, c1)
        tex = track.texture[np.ix_(rows % 8, cols % 8)] * track.texture_amp
        patch = track.color[None, None, :] + tex[:, :, None]
        image[r0:r1, c0:c1, :] = np.clip(patch, 0.0, 1.0)
    return image


def generate_scenario(cfg: ScenarioConfig) -> list[FrameObservation]:
    """Render a scenario into frames with ground-truth detections and stable IDs.

    Ground-truth IDs equal object indices for the whole video. Occluded boxes
    are recorded with gt_visible=False and are not drawn.
    """
    if cfg.n_objects > 64:
        raise ScenarioConfigError("n_objects exceeds the default identity capacity")
    rng = np.random.default_rng(cfg.seed)
    tracks = _sample_tracks(cfg, rng)
    if cfg.min_separation > 0.0:
        attempts = 0
        while _min_pairwise_separation(tracks, cfg) < cfg.min_separation:
            attempts += 1
            if attempts > 5000:
                raise ScenarioConfigError(
                    f"could not place {cfg.n_objects} objects with "
                    f"min_separation={cfg.min_separation}"
                )
            tracks = _sample_tracks(cfg, rng)

    frames = []
    for f in range(cfg.n_frames):
        visible = [
            not any(ev.object_index == j and ev.covers(f) for ev in cfg.occlusions)
            for j in range(cfg.n_objects)
        ]
        detections = [
            Detection(
                bbox=_bbox_at(track, f, cfg),
                confidence=1.0,
                appearance=track.appearance,
                source_index=j,
            )
            for j, track in enumerate(tracks)
        ]
        frames.append(
            FrameObservation(
                frame_index=f,
                image=_render(cfg, tracks, f, visible),
                detections=detections,
                gt_ids=list(range(cfg.n_objects)),
                gt_visible=visible,
            )
        )
    return frames


def oracle_detect(
    frame: FrameObservation,
    cfg: OracleConfig,
    rng: np.random.Generator | int,
) -> list[Detection]:
    """Corrupt a frame's visible ground-truth boxes into detector-like output.

    Each visible box survives with probability 1 - p_miss and is jittered by
    N(0, jitter_sigma^2) per coordinate, clamped to the image; boxes that
    degenerate after clamping are dropped. Poisson(fp_rate) false positives are
    added with random boxes and appearances. Deterministic given the rng seed.
    """
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(int(rng))
    visible = frame.gt_visible or [True] * len(frame.detections)
    out: list[Detection] = []
    for j, det in enumerate(frame.detections):
        if not visible[j]:
            continue
        if cfg.p_miss > 0.0 and rng.random() < cfg.p_miss:
            continue
        coords = det.bbox.as_array()
        if cfg.jitter_sigma > 0.0:
            coords = coords + rng.normal(0.0, cfg.jitter_sigma, size=4)
        x1, y1, x2, y2 = np.clip(coords, 0.0, 1.0)
        if not (x1 < x2 and y1 < y2):
            continue
        conf = float(np.clip(rng.normal(cfg.conf_loc, cfg.conf_scale), 0.0, 1.0)) \
            if cfg.conf_scale > 0.0 else float(np.clip(cfg.conf_loc, 0.0, 1.0))
        out.append(
            Detection(
                bbox=BBox(float(x1), float(y1), float(x2), float(y2)),
                confidence=conf,
                appearance=det.appearance,
                source_index=j,
            )
        )
    n_fp = int(rng.poisson(cfg.fp_rate)) if cfg.fp_rate > 0.0 else 0
    for _ in range(n_fp):
        w = rng.uniform(0.05, 0.3)
        h = rng.uniform(0.05, 0.3)
        x1 = rng.uniform(0.0, 1.0 - w)
        y1 = rng.uniform(0.0, 1.0 - h)
        conf = float(np.clip(rng.normal(cfg.fp_conf_loc, cfg.fp_conf_scale), 0.0, 1.0))
        appearance = np.concatenate([rng.uniform(0.2, 1.0, size=3), [0.05]])
        out.append(
            Detection(
                bbox=BBox(float(x1), float(y1), float(x1 + w), float(y1 + h)),
                confidence=conf,
                appearance=appearance,
                source_index=None,
            )
        )
    return out


def scenario_ground_truth(frames: list[FrameObservation],
                          width: int, height: int) -> TrackingResult:
    """Collect visible ground-truth boxes into a TrackingResult for evaluation."""
    entries = []
    for frame in frames:
        visible = frame.gt_visible or [True] * len(frame.detections)
        ids = frame.gt_ids or list(range(len(frame.detections)))
        for det, gid, vis in zip(frame.detections, ids, visible):
            if vis:
                entries.append(TrackEntry(frame.frame_index, gid, det.bbox, 1.0))
    return TrackingResult(entries=entries, n_frames=len(frames), width=width, height=height)


@dataclass(frozen=True)
class DatasetConfig:
    """Distribution over scenarios for building a dataset of videos."""

    scenarios: int = 10
    n_frames: int = 24
    height: int = 32
    width: int = 32
    objects_min: int = 2
    objects_max: int = 5
    motions: tuple[str, ...] = MOTION_MODELS
    occlusion_count_max: int = 0
    occlusion_duration_min: int = 1
    occlusion_duration_max: int = 3
    appearance_similarity: float = 0.0
    min_separation: float = 0.0
    size_min: float = 0.14
    size_max: float = 0.30
    seed: int = 0

    def __post_init__(self) -> None:
        if self.scenarios < 1:
            raise ScenarioConfigError("scenarios must be positive")
        if not (1 <= self.objects_min <= self.objects_max):
            raise ScenarioConfigError("need 1 <= objects_min <= objects_max")
        if self.occlusion_duration_min > self.occlusion_duration_max:
            raise ScenarioConfigError("occlusion duration range inverted")


def sample_scenario_configs(cfg: DatasetConfig) -> list[ScenarioConfig]:
    """Draw per-scenario configs from the dataset distribution, seeded."""
    rng = np.random.default_rng(cfg.seed)
    out = []
    for _ in range(cfg.scenarios):
        n_objects = int(rng.integers(cfg.objects_min, cfg.objects_max + 1))
        motion = str(rng.choice(list(cfg.motions)))
        occlusions = []
        n_events = int(rng.integers(0, cfg.occlusion_count_max + 1))
        for _ in range(n_events):
            duration = int(
                rng.integers(cfg.occlusion_duration_min, cfg.occlusion_duration_max + 1)
            )
            duration = min(duration, cfg.n_frames - 2)
            if duration < 1:
                continue
            start = int(rng.integers(1, cfg.n_frames - duration + 1))
            occlusions.append(
                OcclusionEvent(start, duration, int(rng.integers(0, n_objects)))
            )
        out.append(
            ScenarioConfig(
                n_objects=n_objects,
                n_frames=cfg.n_frames,
                height=cfg.height,
                width=cfg.width,
                motion=motion,
                occlusions=tuple(occlusions),
                appearance_similarity=cfg.appearance_similarity,
                min_separation=cfg.min_separation,
                size_min=cfg.size_min,
                size_max=cfg.size_max,
                seed=int(rng.integers(0, 2**31 - 1)),
            )
        )
    return out


def dataset_from_mapping(values: dict) -> DatasetConfig:
    base = DatasetConfig()
    motions = values.get("motions")
    return DatasetConfig(
        scenarios=int(values.get("scenarios", base.scenarios)),
        n_frames=int(values.get("n_frames", base.n_frames)),
        height=int(values.get("height", base.height)),
        width=int(values.get("width", base.width)),
        objects_min=int(values.get("objects_min", base.objects_min)),
        objects_max=int(values.get("objects_max", base.objects_max)),
        motions=tuple(str(m) for m in motions) if motions else base.motions,
        occlusion_count_max=int(values.get("occlusion_count_max", 0)),
        occlusion_duration_min=int(values.get("occlusion_duration_min", 1)),
        occlusion_duration_max=int(values.get("occlusion_duration_max", 3)),
        appearance_similarity=float(values.get("appearance_similarity", 0.0)),
        min_separation=float(values.get("min_separation", 0.0)),
        size_min=float(values.get("size_min", base.size_min)),
        size_max=float(values.get("size_max", base.size_max)),
        seed=int(values.get("seed", 0)),
    )


def dataset_to_mapping(cfg: DatasetConfig) -> dict:
    return {
        "scenarios": cfg.scenarios,
        "n_frames": cfg.n_frames,
        "height": cfg.height,
        "width": cfg.width,
        "objects_min": cfg.objects_min,
        "objects_max": cfg.objects_max,
        "motions": list(cfg.motions),
        "occlusion_count_max": cfg.occlusion_count_max,
        "occlusion_duration_min": cfg.occlusion_duration_min,
        "occlusion_duration_max": cfg.occlusion_duration_max,
        "appearance_similarity": cfg.appearance_similarity,
        "min_separation": cfg.min_separation,
        "size_min": cfg.size_min,
        "size_max": cfg.size_max,
        "seed": cfg.seed,
    }


# --- scenario config file round-trip -----------------------------------------

def scenario_to_mapping(cfg: ScenarioConfig) -> dict:
    return {
        "n_objects": cfg.n_objects,
        "n_frames": cfg.n_frames,
        "height": cfg.height,
        "width": cfg.width,
        "motion": cfg.motion,
        "occlusions": [str(ev) for ev in cfg.occlusions],
        "appearance_similarity": cfg.appearance_similarity,
        "min_separation": cfg.min_separation,
        "size_min": cfg.size_min,
        "size_max": cfg.size_max,
        "seed": cfg.seed,
    }


def scenario_from_mapping(values: dict) -> ScenarioConfig:
    occlusions = tuple(
        OcclusionEvent.parse(str(item)) for item in values.get("occlusions", [])
    )
    base = ScenarioConfig()
    return ScenarioConfig(
        n_objects=int(values.get("n_objects", base.n_objects)),
        n_frames=int(values.get("n_frames", base.n_frames)),
        height=int(values.get("height", base.height)),
        width=int(values.get("width", base.width)),
        motion=str(values.get("motion", base.motion)),
        occlusions=occlusions,
        appearance_similarity=float(values.get("appearance_similarity", 0.0)),
        min_separation=float(values.get("min_separation", 0.0)),
        size_min=float(values.get("size_min", base.size_min)),
        size_max=float(values.get("size_max", base.size_max)),
        seed=int(values.get("seed", 0)),
    )


# --- MOTChallenge text format -------------------------------------------------

@dataclass(frozen=True)
class MotRecord:
    """One MOTChallenge line; frame and track_id are 1-based, box in pixels."""

    frame: int
    track_id: int
    left: float
    top: float
    width: float
    height: float
    conf: float


def _format_float(value: float) -> str:
    # integral values print without a trailing ".0"; others use the shortest
    # representation that parses back to the same float
    if value == int(value) and abs(value) < 1e15:
        return str(int(value))
    return repr(float(value))


def format_mot_line(record: MotRecord) -> str:
    return (
        f"{record.frame},{record.track_id},"
        f"{_format_float(record.left)},{_format_float(record.top)},"
        f"{_format_float(record.width)},{_format_float(record.height)},"
        f"{record.conf:.6f},-1,-1,-1"
    )


def records_from_result(result: TrackingResult) -> list[MotRecord]:
    """Convert 0-based normalized entries to 1-based pixel records."""
    return [
        MotRecord(
            frame=e.frame + 1,
            track_id=e.track_id + 1,
            left=e.bbox.x1 * result.width,
            top=e.bbox.y1 * result.height,
            width=e.bbox.width * result.width,
            height=e.bbox.height * result.height,
            conf=e.confidence,
        )
        for e in result.entries
    ]


def result_from_records(records: list[MotRecord], width: int, height: int,
                        n_frames: int | None = None) -> TrackingResult:
    entries = []
    for r in records:
        x1, y1 = r.left / width, r.top / height
        x2, y2 = (r.left + r.width) / width, (r.top + r.height) / height
        entries.append(
            TrackEntry(
                frame=r.frame - 1,
                track_id=r.track_id - 1,
                bbox=BBox(max(x1, 0.0), max(y1, 0.0), min(x2, 1.0), min(y2, 1.0)),
                confidence=r.conf,
            )
        )
    if n_frames is None:
        n_frames = max((r.frame for r in records), default=0)
    return TrackingResult(entries=entries, n_frames=n_frames, width=width, height=height)


def write_motchallenge(data: TrackingResult | list[MotRecord], path: str | Path) -> None:
    records = records_from_result(data) if isinstance(data, TrackingResult) else data
    text = "".join(format_mot_line(r) + "\n" for r in records)
    Path(path).write_text(text)


def read_motchallenge(path: str | Path) -> list[MotRecord]:
    """Parse a MOTChallenge file; raises MotFormatError naming the bad line."""
    path = Path(path)
    records = []
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        fields = line.split(",")
        if len(fields) != 10:
            raise MotFormatError(
                f"{path}: line {lineno}: expected 10 comma-separated fields, "
                f"got {len(fields)}"
            )
        try:
            frame = int(fields[0])
            track_id = int(fields[1])
            left, top, width, height = (float(v) for v in fields[2:6])
            conf = float(fields[6])
        except ValueError as exc:
            raise MotFormatError(f"{path}: line {lineno}: {exc}") from exc
        if frame < 1 or track_id < 1:
            raise MotFormatError(
                f"{path}: line {lineno}: frame and id must be 1-based positive integers"
            )
        records.append(MotRecord(frame, track_id, left, top, width, height, conf))
    return records
