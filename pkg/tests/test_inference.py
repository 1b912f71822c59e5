import numpy as np
import pytest
import torch

from armot.core import BBox, CapacityExhaustedError, Detection, FrameObservation, IDVocabulary
from armot.inference import (
    ConfigMismatchError,
    InferConfig,
    TrackerState,
    init_state,
    track_frame,
    track_video,
)
from armot.simdata import OcclusionEvent, OracleConfig, ScenarioConfig, generate_scenario, oracle_detect
from armot.sequence import dump_sequence

from conftest import make_tiny_model


def _frame(index, boxes, confidences=None, size=32):
    confidences = confidences or [1.0] * len(boxes)
    dets = [
        Detection(bbox=BBox(*b), confidence=c, appearance=np.full(4, 0.5))
        for b, c in zip(boxes, confidences)
    ]
    return FrameObservation(
        frame_index=index,
        image=np.zeros((size, size, 3), dtype=np.float32),
        detections=dets,
    )


BOX_A = (0.05, 0.05, 0.25, 0.25)
BOX_B = (0.6, 0.6, 0.85, 0.85)


def test_first_frame_assigns_new_ids_in_order():
    model = make_tiny_model(seed=0)
    state = init_state(InferConfig())
    out = track_frame(model, state, _frame(0, [BOX_A, BOX_B]), InferConfig())
    assert [tid for tid, _, _ in out] == [0, 1]
    assert set(state.contexts) == {0, 1}


def test_confidence_threshold_filters_detections():
    model = make_tiny_model(seed=0)
    state = init_state(InferConfig(tau_det=0.5))
    out = track_frame(
        model, state, _frame(0, [BOX_A, BOX_B], [0.9, 0.4]), InferConfig(tau_det=0.5)
    )
    assert len(out) == 1
    # threshold is inclusive
    state2 = init_state(InferConfig(tau_det=0.5))
    out2 = track_frame(
        model, state2, _frame(0, [BOX_A, BOX_B], [0.9, 0.5]), InferConfig(tau_det=0.5)
    )
    assert len(out2) == 2


def test_no_duplicate_ids_within_frame():
    model = make_tiny_model(seed=1)
    cfg = InferConfig()
    state = init_state(cfg)
    for index in range(4):
        out = track_frame(model, state, _frame(index, [BOX_A, BOX_B, (0.4, 0.4, 0.55, 0.55)]), cfg)
        ids = [tid for tid, _, _ in out]
        assert len(ids) == len(set(ids))


def test_track_absent_exactly_tau_loss_still_referenced():
    # strict inequality: a track missing exactly tau_loss frames survives pruning
    model = make_tiny_model(seed=2)
    cfg = InferConfig(tau_loss=2)
    state = init_state(cfg)
    track_frame(model, state, _frame(0, [BOX_A]), cfg)
    assert 0 in state.contexts
    track_frame(model, state, _frame(1, []), cfg)
    track_frame(model, state, _frame(2, []), cfg)
    assert state.contexts[0].n_lost == 2
    assert 0 in state.contexts  # n_lost == tau_loss, not pruned
    track_frame(model, state, _frame(3, []), cfg)
    assert 0 not in state.contexts  # n_lost == 3 > tau_loss


def test_tcm_state_machine_two_frame_occlusion_with_tau_one():
    # hand-trace: tau_loss=1, object absent frames 1-2, reappears at 3.
    # After frame 1 n_lost=1 (kept); after frame 2 n_lost=2 > 1 -> pruned,
    # so the reappearing object must receive a fresh ID: one fragmentation.
    model = make_tiny_model(seed=3)
    cfg = InferConfig(tau_loss=1)
    state = init_state(cfg)
    out0 = track_frame(model, state, _frame(0, [BOX_A]), cfg)
    assert out0[0][0] == 0
    track_frame(model, state, _frame(1, []), cfg)
    assert 0 in state.contexts and state.contexts[0].n_lost == 1
    track_frame(model, state, _frame(2, []), cfg)
    assert 0 not in state.contexts
    out3 = track_frame(model, state, _frame(3, [BOX_A]), cfg)
    assert out3[0][0] == 0  # recycled: the old ID returned to the free pool


def test_one_frame_occlusion_with_tau_one_is_retained():
    # per the strict-inequality prune rule a single missed frame survives
    model = make_tiny_model(seed=3)
    cfg = InferConfig(tau_loss=1)
    state = init_state(cfg)
    track_frame(model, state, _frame(0, [BOX_A]), cfg)
    track_frame(model, state, _frame(1, []), cfg)
    assert 0 in state.contexts


def test_pruning_invariant_after_every_frame():
    cfg = ScenarioConfig(
        n_objects=3,
        n_frames=12,
        seed=5,
        occlusions=(OcclusionEvent(2, 4, 0), OcclusionEvent(5, 6, 1)),
    )
    frames = generate_scenario(cfg)
    model = make_tiny_model(seed=4)
    infer = InferConfig(tau_loss=2)
    state = init_state(infer)
    rng = np.random.default_rng(0)
    with torch.no_grad():
        for frame in frames:
            obs = FrameObservation(
                frame_index=frame.frame_index,
                image=frame.image,
                detections=oracle_detect(frame, OracleConfig(), rng),
            )
            track_frame(model, state, obs, infer)
            assert all(ctx.n_lost <= infer.tau_loss for ctx in state.contexts.values())


def test_track_video_empty():
    model = make_tiny_model(seed=5)
    result = track_video(model, [], InferConfig())
    assert result.entries == [] and result.n_frames == 0


def test_track_video_deterministic():
    cfg = ScenarioConfig(n_objects=2, n_frames=8, seed=6)
    frames = generate_scenario(cfg)
    model = make_tiny_model(seed=6)
    a = track_video(model, frames, InferConfig())
    b = track_video(model, frames, InferConfig())
    assert a.entries == b.entries


def test_track_video_modes_give_entries_for_all_frames():
    cfg = ScenarioConfig(n_objects=2, n_frames=6, seed=7)
    frames = generate_scenario(cfg)
    model = make_tiny_model(seed=7)
    for mode in ("window", "tmf"):
        result = track_video(model, frames, InferConfig(mode=mode))
        assert {e.frame for e in result.entries} == set(range(6))
        per_frame_ids = {}
        for e in result.entries:
            per_frame_ids.setdefault(e.frame, []).append(e.track_id)
        for ids in per_frame_ids.values():
            assert len(ids) == len(set(ids))


def test_config_mismatch_errors():
    model = make_tiny_model(seed=8)
    with pytest.raises(ConfigMismatchError):
        track_video(model, [], InferConfig(capacity=99))
    box_model = make_tiny_model(seed=8, box_mode=True, n_bins=10)
    with pytest.raises(ConfigMismatchError):
        track_video(box_model, [], InferConfig(mode="tmf"))


def test_capacity_exhausted_propagates():
    model = make_tiny_model(seed=9, vocab=IDVocabulary(capacity=1))
    cfg = InferConfig()
    state = init_state(cfg)
    with pytest.raises(CapacityExhaustedError):
        # two objects in the first frame: both must be <new>, capacity is 1
        track_frame(model, state, _frame(0, [BOX_A, BOX_B]), cfg)


def test_window_prefix_bounded_by_window_and_tcm():
    model = make_tiny_model(seed=10)
    cfg = InferConfig(window=2, tau_loss=10)
    state = init_state(cfg)
    for index in range(6):
        track_frame(model, state, _frame(index, [BOX_A, BOX_B]), cfg)
    assert len(state.window) == 2  # deque bounded by T


def test_window_t1_vs_tmf_prefix_dump_differs():
    # same video, two history encodings; golden-dump comparison documents the
    # structural difference between window T=1 and tmf prefixes
    from armot.inference import _reference_history
    from armot.sequence import build_inference_prefix

    model = make_tiny_model(seed=11)
    frames = generate_scenario(ScenarioConfig(n_objects=1, n_frames=3, seed=12))
    win_state = init_state(InferConfig(mode="window", window=1))
    tmf_state = init_state(InferConfig(mode="tmf"))
    with torch.no_grad():
        for frame in frames[:2]:
            track_frame(model, win_state, frame, InferConfig(mode="window", window=1))
            track_frame(model, tmf_state, frame, InferConfig(mode="tmf"))
        img_tokens, (repr_,) = model.encode_frame(frames[2].image, frames[2].detections)
        win_hist = _reference_history(model, win_state, InferConfig(mode="window", window=1))
        tmf_hist = _reference_history(model, tmf_state, InferConfig(mode="tmf"))
    win_seq = build_inference_prefix(win_hist, img_tokens, [], repr_)
    tmf_seq = build_inference_prefix(tmf_hist, img_tokens, [], repr_)
    win_dump, tmf_dump = dump_sequence(win_seq), dump_sequence(tmf_seq)
    assert win_dump != tmf_dump
    assert "mem[" in tmf_dump and "mem[" not in win_dump
    assert any(src.startswith(("obj[f", "tcm")) for src in win_dump.split())


def test_tmf_prefix_size_independent_of_video_length():
    # bounded-memory contract: the tmf reference holds one (memory, id) pair
    # per live TCM track, so its size is bounded by the track population (an
    # untrained model churns new IDs; pruning keeps the population finite)
    from armot.core import IDVocabulary
    from armot.inference import _reference_history

    model = make_tiny_model(seed=20, vocab=IDVocabulary(capacity=64))
    cfg = InferConfig(mode="tmf", tau_loss=2)
    state = init_state(cfg)
    sizes = []
    with torch.no_grad():
        for index in range(30):
            track_frame(model, state, _frame(index, [BOX_A, BOX_B]), cfg)
            history = _reference_history(model, state, cfg)
            assert len(history.memory_pairs) == len(state.contexts)
            sizes.append(len(history.memory_pairs))
    # 2 detections/frame, misses pruned after tau_loss=2: population <= 2*(2+2)
    assert max(sizes) <= 8
    assert max(sizes[10:]) <= max(sizes[:10])  # no growth with video length


def test_expired_track_scrubbed_from_window_blocks():
    # after expiry no reference (window block or TCM pair) may mention the ID
    from armot.inference import _reference_history

    model = make_tiny_model(seed=13)
    cfg = InferConfig(mode="window", window=6, tau_loss=1)
    state = init_state(cfg)
    track_frame(model, state, _frame(0, [BOX_A]), cfg)
    track_frame(model, state, _frame(1, []), cfg)
    track_frame(model, state, _frame(2, []), cfg)  # n_lost=2 > 1: expired
    assert 0 not in state.contexts
    history = _reference_history(model, state, cfg)
    assert history.lost_pairs == []
    for block in history.frame_blocks:
        assert block == []


def test_lost_track_pair_in_window_reference():
    # a lost track (n_lost <= tau_loss) re-enters the prefix via its TCM pair
    from armot.inference import _reference_history

    model = make_tiny_model(seed=12)
    cfg = InferConfig(mode="window", window=1, tau_loss=5)
    state = init_state(cfg)
    track_frame(model, state, _frame(0, [BOX_A]), cfg)
    track_frame(model, state, _frame(1, []), cfg)  # track 0 lost, window holds empty frame
    history = _reference_history(model, state, cfg)
    assert [tid for _, tid in history.lost_pairs] == [0]
