import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from armot.core import (
    BBox,
    CapacityExhaustedError,
    Detection,
    FrameObservation,
    IDVocabulary,
    ModelDims,
    assign_free_id,
)


def test_assign_free_id_empty():
    assert assign_free_id(set(), IDVocabulary(capacity=8)) == 0


def test_assign_free_id_smallest_gap():
    assert assign_free_id({0, 1, 3}, IDVocabulary(capacity=8)) == 2


def test_assign_free_id_exhausted():
    vocab = IDVocabulary(capacity=4)
    with pytest.raises(CapacityExhaustedError):
        assign_free_id({0, 1, 2, 3}, vocab)


@given(st.sets(st.integers(min_value=0, max_value=15), max_size=15))
def test_assign_free_id_properties(active):
    vocab = IDVocabulary(capacity=16)
    got = assign_free_id(active, vocab)
    assert got not in active
    assert 0 <= got < vocab.capacity
    assert got != vocab.new_index
    assert assign_free_id(active, vocab) == got  # deterministic


def test_new_index_distinct_from_concrete():
    vocab = IDVocabulary(capacity=64)
    assert vocab.new_index == 64
    assert not vocab.is_concrete(vocab.new_index)
    assert all(vocab.is_concrete(i) for i in range(vocab.capacity))


def test_model_dims_validation():
    ModelDims()  # defaults valid
    with pytest.raises(ValueError):
        ModelDims(d_lm=0)
    with pytest.raises(ValueError):
        ModelDims(patch=-1)


@pytest.mark.parametrize(
    "coords",
    [(0.5, 0.0, 0.4, 1.0), (0.0, 0.2, 0.0, 0.4), (-0.1, 0.0, 0.5, 0.5), (0.0, 0.0, 1.1, 1.0)],
)
def test_bbox_rejects_invalid(coords):
    with pytest.raises(ValueError):
        BBox(*coords)


def test_bbox_accessors():
    box = BBox(0.1, 0.2, 0.5, 0.8)
    assert box.width == pytest.approx(0.4)
    assert box.height == pytest.approx(0.6)
    assert box.center == (pytest.approx(0.3), pytest.approx(0.5))
    np.testing.assert_allclose(box.as_array(), [0.1, 0.2, 0.5, 0.8])


def test_detection_confidence_range():
    box = BBox(0.1, 0.1, 0.2, 0.2)
    Detection(bbox=box, confidence=1.0)
    with pytest.raises(ValueError):
        Detection(bbox=box, confidence=1.5)


def test_frame_observation_alignment():
    image = np.zeros((8, 8, 3), dtype=np.float32)
    det = Detection(bbox=BBox(0.1, 0.1, 0.3, 0.3), confidence=1.0)
    FrameObservation(frame_index=0, image=image, detections=[det], gt_ids=[0])
    with pytest.raises(ValueError):
        FrameObservation(frame_index=0, image=image, detections=[det], gt_ids=[0, 1])
    with pytest.raises(ValueError):
        FrameObservation(frame_index=-1, image=image)
