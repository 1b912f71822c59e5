import numpy as np
import pytest
import torch
from hypothesis import HealthCheck, settings

from armot.core import IDVocabulary, ModelDims
from armot.decoder import DecoderConfig, TrackingModel

settings.register_profile(
    "ci", deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("ci")


TINY_DIMS = ModelDims(d_img=8, d_lm=16, d_det=8, patch=8)


def make_tiny_model(seed: int = 0, **kwargs) -> TrackingModel:
    torch.manual_seed(seed)
    defaults = dict(
        dims=TINY_DIMS,
        vocab=IDVocabulary(capacity=8),
        decoder_cfg=DecoderConfig(layers=2, heads=2, d_lm=16, d_ff=32, max_len=256),
    )
    defaults.update(kwargs)
    return TrackingModel(**defaults)


@pytest.fixture
def tiny_dims() -> ModelDims:
    return TINY_DIMS


@pytest.fixture
def tiny_model() -> TrackingModel:
    return make_tiny_model()


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)
