"""Autoregressive multi-object tracking at desk scale.

Detections are encoded as object tokens, a causal decoder predicts an identity
token for each object conditioned on history, and the system trains end to end
on synthetic videos, evaluated with HOTA/MOTA/IDF1.
"""

__version__ = "0.1.0"

from .core import (
    BBox,
    CapacityExhaustedError,
    Detection,
    FrameObservation,
    IDVocabulary,
    ModelDims,
    TrackContext,
    TrackEntry,
    TrackingResult,
    assign_free_id,
)
from .decoder import (
    CausalDecoder,
    DecoderConfig,
    TrackingModel,
    load_checkpoint,
    save_checkpoint,
)
from .inference import InferConfig, track_frame, track_video
from .metrics import EvalReport, evaluate, match_frame
from .simdata import (
    OracleConfig,
    ScenarioConfig,
    generate_scenario,
    oracle_detect,
    read_motchallenge,
    scenario_ground_truth,
    write_motchallenge,
)
from .trainer import LossWeights, TrainConfig, run_training

__all__ = [
    "BBox",
    "CapacityExhaustedError",
    "CausalDecoder",
    "DecoderConfig",
    "Detection",
    "EvalReport",
    "FrameObservation",
    "IDVocabulary",
    "InferConfig",
    "LossWeights",
    "ModelDims",
    "OracleConfig",
    "ScenarioConfig",
    "TrackContext",
    "TrackEntry",
    "TrackingModel",
    "TrackingResult",
    "TrainConfig",
    "assign_free_id",
    "evaluate",
    "generate_scenario",
    "load_checkpoint",
    "match_frame",
    "oracle_detect",
    "read_motchallenge",
    "run_training",
    "save_checkpoint",
    "scenario_ground_truth",
    "track_frame",
    "track_video",
    "write_motchallenge",
]
