import math

import numpy as np
import pytest
import torch
from scipy.special import erf

from armot.core import BBox, Detection, IDVocabulary, ModelDims
from armot.decoder import (
    CausalDecoder,
    CheckpointError,
    DecoderConfig,
    OverlongSequenceError,
    TrackingModel,
    load_checkpoint,
    save_checkpoint,
)
from armot.sequence import ContinuousSlot, DiscreteSlot, TokenSequence

from conftest import make_tiny_model
from gradcheck import fd_gradcheck


def _random_sequence(decoder, length=10, n_predict=2, seed=0, d=16):
    g = torch.Generator().manual_seed(seed)
    slots = []
    for k in range(length):
        if k % 3 == 2:
            slots.append(DiscreteSlot(k % decoder.vocab_size, f"id[{k}]"))
        else:
            slots.append(ContinuousSlot(torch.randn(d, generator=g), f"obj[{k}]"))
    positions = list(range(length - n_predict + 1, length + 1))
    return TokenSequence(slots=slots, predict_positions=positions)


def test_single_slot_logit_shape():
    torch.manual_seed(0)
    decoder = CausalDecoder(DecoderConfig(layers=1, heads=2, d_lm=16, d_ff=32), 9, 9)
    seq = TokenSequence(
        slots=[ContinuousSlot(torch.randn(16), "obj")], predict_positions=[1]
    )
    logits, hidden = decoder(seq)
    assert logits.shape == (1, 9)
    assert hidden.shape == (1, 16)


def test_causality_suffix_perturbation_exact():
    torch.manual_seed(1)
    decoder = CausalDecoder(DecoderConfig(layers=2, heads=2, d_lm=16, d_ff=32), 9, 9)
    decoder.eval()
    seq = _random_sequence(decoder, length=12, n_predict=12)
    logits, _ = decoder(seq)
    rng = np.random.default_rng(0)
    for _ in range(5):
        p = int(rng.integers(1, 12))  # perturb slot at index p
        perturbed = TokenSequence(
            slots=list(seq.slots), predict_positions=seq.predict_positions
        )
        if isinstance(perturbed.slots[p], ContinuousSlot):
            perturbed.slots[p] = ContinuousSlot(
                perturbed.slots[p].vector + 10.0, perturbed.slots[p].source
            )
        else:
            perturbed.slots[p] = DiscreteSlot(
                (perturbed.slots[p].index + 1) % decoder.vocab_size,
                perturbed.slots[p].source,
            )
        new_logits, _ = decoder(perturbed)
        for pos_i, pos in enumerate(seq.predict_positions):
            if pos <= p:
                assert torch.equal(logits[pos_i], new_logits[pos_i])
            else:
                assert not torch.equal(logits[pos_i], new_logits[pos_i])


def test_micro_decoder_matches_matrix_recomputation():
    # 1 layer, 1 head, d_lm=4, K=2: recompute step by step with numpy
    torch.manual_seed(2)
    cfg = DecoderConfig(layers=1, heads=1, d_lm=4, d_ff=8, max_len=16)
    decoder = CausalDecoder(cfg, vocab_size=3, n_ids=3)
    decoder.eval()
    g = torch.Generator().manual_seed(3)
    slots = [
        ContinuousSlot(torch.randn(4, generator=g), "obj0"),
        DiscreteSlot(1, "id0"),
        ContinuousSlot(torch.randn(4, generator=g), "obj1"),
    ]
    seq = TokenSequence(slots=slots, predict_positions=[2, 3])
    logits, hidden = decoder(seq)

    def ln(x, weight, bias, eps=1e-5):
        mu = x.mean(axis=-1, keepdims=True)
        var = x.var(axis=-1, keepdims=True)  # population variance, as LayerNorm
        return (x - mu) / np.sqrt(var + eps) * weight + bias

    def gelu(x):
        return 0.5 * x * (1.0 + erf(x / math.sqrt(2.0)))

    p = {k: v.detach().numpy().astype(np.float64) for k, v in decoder.state_dict().items()}
    emb = p["token_embedding.weight"]
    x = np.stack(
        [
            slots[0].vector.numpy().astype(np.float64),
            emb[1],
            slots[2].vector.numpy().astype(np.float64),
        ]
    )
    x = x + p["pos_embedding.weight"][:3]

    h = ln(x, p["blocks.0.norm1.weight"], p["blocks.0.norm1.bias"])
    q = h @ p["blocks.0.attn.q.weight"].T + p["blocks.0.attn.q.bias"]
    k = h @ p["blocks.0.attn.k.weight"].T + p["blocks.0.attn.k.bias"]
    v = h @ p["blocks.0.attn.v.weight"].T + p["blocks.0.attn.v.bias"]
    scores = q @ k.T / math.sqrt(4.0)
    for i in range(3):
        for j in range(3):
            if j > i:
                scores[i, j] = -np.inf
    weights = np.exp(scores - scores.max(axis=1, keepdims=True))
    weights = weights / weights.sum(axis=1, keepdims=True)
    attended = weights @ v
    out = attended @ p["blocks.0.attn.out.weight"].T + p["blocks.0.attn.out.bias"]
    x = x + out
    h2 = ln(x, p["blocks.0.norm2.weight"], p["blocks.0.norm2.bias"])
    ff = gelu(h2 @ p["blocks.0.ff.0.weight"].T + p["blocks.0.ff.0.bias"])
    ff = ff @ p["blocks.0.ff.2.weight"].T + p["blocks.0.ff.2.bias"]
    x = x + ff
    final = ln(x, p["norm_f.weight"], p["norm_f.bias"])
    expected_logits = final[[1, 2]] @ emb.T / math.sqrt(4.0)

    np.testing.assert_allclose(hidden.detach().numpy(), final, atol=1e-5)
    np.testing.assert_allclose(logits.detach().numpy(), expected_logits, atol=1e-5)


def test_tied_embedding_output_head():
    torch.manual_seed(4)
    decoder = CausalDecoder(DecoderConfig(layers=1, heads=2, d_lm=16, d_ff=32), 9, 9)
    seq = TokenSequence(
        slots=[ContinuousSlot(torch.ones(16), "obj")], predict_positions=[1]
    )
    before, _ = decoder(seq)
    with torch.no_grad():
        decoder.token_embedding.weight[0] += 1.0
    after, _ = decoder(seq)
    assert not torch.equal(before[0, 0], after[0, 0])
    # a single parameter backs both: sum of gradient paths lands in one tensor
    params = dict(decoder.named_parameters())
    assert "token_embedding.weight" in params
    assert not any("output" in name or "head" in name for name in params)


def test_overlong_sequence_error():
    decoder = CausalDecoder(
        DecoderConfig(layers=1, heads=2, d_lm=16, d_ff=32, max_len=4), 9, 9
    )
    seq = TokenSequence(
        slots=[ContinuousSlot(torch.zeros(16), "x") for _ in range(5)],
        predict_positions=[5],
    )
    with pytest.raises(OverlongSequenceError):
        decoder(seq)


def test_predict_id_singleton_constraint():
    torch.manual_seed(5)
    decoder = CausalDecoder(DecoderConfig(layers=1, heads=2, d_lm=16, d_ff=32), 9, 9)
    seq = TokenSequence(
        slots=[ContinuousSlot(torch.randn(16), "obj")], predict_positions=[1]
    )
    choice, conf, _ = decoder.predict_id(seq, {8})
    assert choice == 8
    assert conf == pytest.approx(1.0)


def test_predict_id_masks_excluded():
    torch.manual_seed(6)
    decoder = CausalDecoder(DecoderConfig(layers=1, heads=2, d_lm=16, d_ff=32), 9, 9)
    seq = TokenSequence(
        slots=[ContinuousSlot(torch.randn(16), "obj")], predict_positions=[1]
    )
    logits, _ = decoder(seq)
    best_overall = int(logits[0].argmax())
    admissible = set(range(9)) - {best_overall}
    choice, _, _ = decoder.predict_id(seq, admissible)
    assert choice != best_overall
    assert choice == int(
        max(admissible, key=lambda i: logits[0][i].item())
    )


def test_predict_id_uniform_logits_confidence():
    torch.manual_seed(7)
    decoder = CausalDecoder(DecoderConfig(layers=1, heads=2, d_lm=16, d_ff=32), 9, 9)
    with torch.no_grad():
        decoder.token_embedding.weight.zero_()  # all logits identical (zero)
    seq = TokenSequence(
        slots=[ContinuousSlot(torch.randn(16), "obj")], predict_positions=[1]
    )
    for m in (2, 3, 5):
        _, conf, _ = decoder.predict_id(seq, set(range(m)))
        assert conf == pytest.approx(1.0 / m, abs=1e-6)


def test_decoder_gradients_match_finite_differences():
    torch.manual_seed(8)
    cfg = DecoderConfig(layers=1, heads=1, d_lm=4, d_ff=8, max_len=8)
    decoder = CausalDecoder(cfg, vocab_size=3, n_ids=3).double()
    g = torch.Generator().manual_seed(9)
    slots = [
        ContinuousSlot(torch.randn(4, generator=g, dtype=torch.float64), "obj"),
        DiscreteSlot(0, "id"),
        ContinuousSlot(torch.randn(4, generator=g, dtype=torch.float64), "obj"),
    ]
    seq = TokenSequence(slots=slots, predict_positions=[2, 3])
    target = torch.tensor([1, 2])

    def loss_fn(m):
        logits, _ = m(seq)
        return torch.nn.functional.cross_entropy(logits, target)

    fd_gradcheck(decoder, loss_fn, eps=1e-5)


# --- checkpoints ------------------------------------------------------------------

def test_checkpoint_round_trip(tmp_path):
    model = make_tiny_model(seed=11, box_mode=True, n_bins=20, alpha=0.5)
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, model, extra={"steps": 7})
    loaded = load_checkpoint(path)
    assert loaded.vocab.capacity == model.vocab.capacity
    assert loaded.box_mode and loaded.discretizer.n_bins == 20
    assert loaded.discretizer.alpha == 0.5
    for (name_a, a), (name_b, b) in zip(
        model.state_dict().items(), loaded.state_dict().items()
    ):
        assert name_a == name_b
        assert torch.equal(a, b)


def test_checkpoint_rejects_wrong_version(tmp_path):
    import json

    import numpy as np

    model = make_tiny_model(seed=12)
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, model)
    payload = dict(np.load(path, allow_pickle=False))
    meta = json.loads(str(payload["__meta__"].item()))
    meta["version"] = 999
    payload["__meta__"] = np.array(json.dumps(meta))
    with open(path, "wb") as fh:
        np.savez(fh, **payload)
    with pytest.raises(CheckpointError, match="version"):
        load_checkpoint(path)


def test_checkpoint_rejects_wrong_magic(tmp_path):
    path = tmp_path / "bogus.ckpt"
    np.savez(open(path, "wb"), __meta__=np.array('{"magic": "other"}'))
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(path)


def test_checkpoint_write_failure_surfaces_path(tmp_path):
    model = make_tiny_model(seed=13)
    bad = tmp_path / "missing_dir" / "model.ckpt"
    with pytest.raises(CheckpointError, match="missing_dir"):
        save_checkpoint(bad, model)


def test_encode_frame_query_and_box_modes():
    model = make_tiny_model(seed=14)
    image = np.zeros((32, 32, 3), dtype=np.float32)
    det = Detection(
        bbox=BBox(0.2, 0.2, 0.5, 0.5), confidence=1.0, appearance=np.ones(4) * 0.5
    )
    tokens, reprs = model.encode_frame(image, [det])
    assert tokens.tokens.shape == (16, 16)
    assert reprs[0].shape == (16,)

    box_model = make_tiny_model(seed=14, box_mode=True, n_bins=10)
    _, box_reprs = box_model.encode_frame(image, [det])
    assert box_reprs[0] == (
        box_model.discretizer.offset + 2,
        box_model.discretizer.offset + 2,
        box_model.discretizer.offset + 5,
        box_model.discretizer.offset + 5,
    )


def test_encode_frame_uses_provided_query_embedding():
    model = make_tiny_model(seed=15, use_raa=False)
    image = np.zeros((32, 32, 3), dtype=np.float32)
    emb = np.linspace(0, 1, 8).astype(np.float32)
    det = Detection(bbox=BBox(0.2, 0.2, 0.5, 0.5), confidence=1.0, query_embedding=emb)
    _, (repr_,) = model.encode_frame(image, [det])
    expected = model.object_adapter(torch.as_tensor(emb))
    assert torch.equal(repr_, expected)
