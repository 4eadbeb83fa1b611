import numpy as np
import pytest

import oracles
from cor.avti import AVTI
from cor.backbones import BackboneConfig, Backbones, stride_pair, token_row, tokenize
from cor.errors import DimensionError, EmptyText, InvalidMask
from cor.numerics import Tensor, grad_check, sigmoid
from cor.numerics.nn import rng_for
from cor.rre import RRE, RreConfig, SFEBlock, aggregate, normalize_maps


@pytest.fixture(scope="module")
def backbones():
    return Backbones(BackboneConfig(), seed=3)


def image(seed, size=64):
    return np.random.default_rng(seed).integers(0, 256, size=(size, size, 3), dtype=np.uint8)


def param(a):
    return Tensor(np.asarray(a, dtype=float), requires_grad=True)


def zero_out(module):
    for _, p in module.named_parameters():
        p.data[...] = 0.0


# -------------------------------------------------------------- backbones
def test_stride_split():
    assert stride_pair(4) == (2, 2)
    assert stride_pair(8) == (2, 4)
    assert stride_pair(1) == (1, 1)


def test_target_and_reference_encoders(backbones):
    img = image(0)
    f_tar = backbones.encode_target(img)
    f_ref = backbones.encode_reference(img)
    assert f_tar.shape == (16, 16, 32)
    assert f_ref.shape == (8, 8, 32)
    np.testing.assert_array_equal(backbones.encode_target(img.copy()).data, f_tar.data)
    np.testing.assert_array_equal(backbones.encode_reference(img.copy()).data, f_ref.data)
    # separate weights: pool the target grid down to the reference grid and compare
    pooled = f_tar.data.reshape(8, 2, 8, 2, 32).mean(axis=(1, 3))
    assert not np.allclose(pooled, f_ref.data)
    with pytest.raises(DimensionError):
        backbones.encode_target(image(0, size=32))


def test_frozen_encoders_get_no_gradient(backbones):
    f = backbones.encode_target(image(1))
    assert not f.requires_grad
    for _, p in backbones.target.named_parameters():
        assert p.grad is None and not p.requires_grad
    for enc in (backbones.reference, backbones.text):
        assert all(not p.requires_grad for p in enc.parameters())
    assert all(p.requires_grad for p in backbones.mask.parameters())
    assert all(p.requires_grad for p in backbones.decoder.parameters())


def test_text_encoder(backbones):
    a = backbones.encode_text("change the color to light")
    assert a.shape == (32,)
    np.testing.assert_array_equal(a.data, backbones.encode_text("change the color to light").data)
    vocab = ["light", "dark", "red", "blue", "bigger", "smaller", "left", "right", "top", "bottom", "rotated"]
    rows = {token_row(w, 4096) for w in vocab}
    assert len(rows) == len(vocab)
    vecs = [backbones.encode_text(f"change the color to {w}").data for w in vocab]
    for i in range(len(vecs)):
        for j in range(i + 1, len(vecs)):
            assert not np.allclose(vecs[i], vecs[j])
    with pytest.raises(EmptyText):
        backbones.encode_text("")
    assert tokenize("Change the COLOR, to-light") == ["change", "the", "color", "to", "light"]


def test_mask_encoder(backbones):
    zeros = np.zeros((64, 64))
    f = backbones.encode_mask(zeros)
    assert f.shape == (8, 8, 32)
    # zero input: the first conv emits its bias everywhere, the second sees a constant field
    m = backbones.mask.body
    h = oracles.gelu(np.broadcast_to(m.conv1.bias.data, (16, 16, 16)).copy())
    want = oracles.gelu(oracles.conv(h, m.conv2.weight.data, m.conv2.bias.data, stride=2, pad=1))
    np.testing.assert_allclose(f.data, want, atol=1e-12)
    with pytest.raises(InvalidMask):
        backbones.encode_mask(np.full((64, 64), 0.5))


def test_mask_encoder_gradient():
    bb = Backbones(BackboneConfig(image_size=16, target_grid=4, ref_grid=2, channels=4), seed=1)
    mask = np.zeros((16, 16))
    mask[3:11, 5:13] = 1
    proj = np.random.default_rng(0).normal(size=(2, 2, 4))
    params = [p for _, p in bb.mask.named_parameters()]
    err = grad_check(lambda *ps: (bb.encode_mask(mask) * proj).sum(), params)
    assert err < 1e-4
    assert all(p.grad is not None for p in params)


def test_decoder(backbones):
    f_tar = backbones.encode_target(image(2))
    prompt = Tensor(np.random.default_rng(0).normal(size=32))
    out = backbones.decode_mask(f_tar, prompt)
    assert out.shape == (64, 64)
    np.testing.assert_array_equal(out.data, backbones.decode_mask(f_tar, prompt).data)
    with pytest.raises(DimensionError):
        backbones.decode_mask(f_tar, Tensor(np.zeros(16)))


def test_decoder_gradcheck():
    bb = Backbones(BackboneConfig(image_size=16, target_grid=4, ref_grid=2, channels=4), seed=2)
    rng = np.random.default_rng(1)
    f_tar = param(rng.normal(size=(4, 4, 4)))
    prompt = param(rng.normal(size=4))
    proj = rng.normal(size=(16, 16))
    params = [p for _, p in bb.decoder.named_parameters()]
    err = grad_check(lambda f, q, *ps: (bb.decode_mask(f, q) * proj).sum(), [f_tar, prompt, *params])
    assert err < 1e-4


# -------------------------------------------------------------------- rre
def test_sfe_zero_branch_is_identity():
    block = SFEBlock(32, rng_for(0, "sfe"))
    zero_out(block)
    x = np.random.default_rng(0).normal(size=(8, 8, 32))
    np.testing.assert_array_equal(block(Tensor(x)).data, x)


def test_sfe_matches_stepwise_oracle():
    block = SFEBlock(6, rng_for(1, "sfe"))
    x = np.random.default_rng(1).normal(size=(5, 5, 6))
    out = block(Tensor(x))
    assert out.shape == (5, 5, 6)
    np.testing.assert_allclose(out.data, oracles.sfe(x, block), atol=1e-12)
    with pytest.raises(DimensionError):
        block(Tensor(np.zeros((5, 5, 4))))


@pytest.fixture(scope="module")
def rre():
    return RRE(RreConfig(channels=32, num_maps=4), rng_for(0, "rre"))


def test_activation_maps_shape_and_commutation(rre):
    rng = np.random.default_rng(2)
    a, b = Tensor(rng.normal(size=(8, 8, 32))), Tensor(rng.normal(size=(8, 8, 32)))
    out = rre.activation_maps(a, b)
    assert out.shape == (8, 8, 4)
    np.testing.assert_array_equal(out.data, rre.activation_maps(b, a).data)
    with pytest.raises(DimensionError):
        rre.activation_maps(a, Tensor(np.zeros((4, 4, 32))))


def test_activation_maps_with_zero_mask_features():
    rre = RRE(RreConfig(channels=6, num_maps=3), rng_for(4, "rre"))
    f_ref = np.random.default_rng(3).normal(size=(4, 4, 6))
    x = f_ref
    for block in (rre.sfe1, rre.sfe2, rre.sfe3):
        x = oracles.sfe(x, block)
    want = oracles.conv(x, rre.proj.weight.data, rre.proj.bias.data)
    got = rre.activation_maps(Tensor(f_ref), Tensor(np.zeros_like(f_ref)))
    np.testing.assert_allclose(got.data, want, atol=1e-12)


def test_normalize_maps():
    np.testing.assert_allclose(normalize_maps(Tensor(np.full((3, 3, 2), 4.0))).data, 1 / 9)
    a = np.random.default_rng(4).normal(size=(5, 5, 4)) * 3
    out = normalize_maps(Tensor(a)).data
    np.testing.assert_allclose(out.sum(axis=(0, 1)), 1.0, atol=1e-9)
    np.testing.assert_allclose(out, oracles.spatial_softmax(a), atol=1e-12)


def test_aggregate_examples():
    rng = np.random.default_rng(5)
    v = rng.normal(size=6)
    const = Tensor(np.broadcast_to(v, (4, 4, 6)).copy())
    a_bar = normalize_maps(Tensor(rng.normal(size=(4, 4, 3))))
    np.testing.assert_allclose(aggregate(const, a_bar).data, v, atol=1e-12)
    onehot = np.zeros((4, 4, 3))
    onehot[2, 1, :] = 1
    f = rng.normal(size=(4, 4, 6))
    np.testing.assert_allclose(aggregate(Tensor(f), Tensor(onehot)).data, f[2, 1], atol=1e-12)
    a = oracles.spatial_softmax(rng.normal(size=(4, 4, 3)))
    np.testing.assert_allclose(aggregate(Tensor(f), Tensor(a)).data, oracles.aggregate(f, a), atol=1e-12)
    with pytest.raises(DimensionError):
        aggregate(Tensor(f), Tensor(np.zeros((3, 3, 3))))


def test_aggregate_is_linear_and_convex():
    rng = np.random.default_rng(6)
    a = Tensor(oracles.spatial_softmax(rng.normal(size=(4, 4, 3))))
    f1, f2 = rng.normal(size=(4, 4, 5)), rng.normal(size=(4, 4, 5))
    lhs = aggregate(Tensor(2.5 * f1 - 0.7 * f2), a).data
    rhs = 2.5 * aggregate(Tensor(f1), a).data - 0.7 * aggregate(Tensor(f2), a).data
    np.testing.assert_allclose(lhs, rhs, atol=1e-9)
    out = aggregate(Tensor(f1), a).data
    assert np.all(out >= f1.min(axis=(0, 1)) - 1e-12) and np.all(out <= f1.max(axis=(0, 1)) + 1e-12)


def test_rre_forward_composition_and_constant_input(rre):
    rng = np.random.default_rng(7)
    f_ref, f_mask = Tensor(rng.normal(size=(8, 8, 32))), Tensor(rng.normal(size=(8, 8, 32)))
    chained = aggregate(f_ref, normalize_maps(rre.activation_maps(f_ref, f_mask)))
    np.testing.assert_array_equal(rre(f_ref, f_mask).data, chained.data)
    v = rng.normal(size=32)
    const = Tensor(np.broadcast_to(v, (8, 8, 32)).copy())
    np.testing.assert_allclose(rre(const, f_mask).data, v, atol=1e-12)


def test_rre_gradcheck():
    rre = RRE(RreConfig(channels=4, num_maps=2), rng_for(8, "rre"))
    rng = np.random.default_rng(8)
    f_ref, f_mask = param(rng.normal(size=(3, 3, 4))), param(rng.normal(size=(3, 3, 4)))
    proj = rng.normal(size=4)
    params = [p for _, p in rre.named_parameters()]
    err = grad_check(lambda a, b, *ps: (rre(a, b) * proj).sum(), [f_ref, f_mask, *params])
    assert err < 1e-4


# ------------------------------------------------------------------- avti
@pytest.fixture(scope="module")
def avti():
    return AVTI(8, seed=1)


def test_gates_zero_init():
    m = AVTI(8, seed=0)
    zero_out(m)
    rng = np.random.default_rng(0)
    r, t = Tensor(rng.normal(size=8)), Tensor(rng.normal(size=8))
    gv, gt = m.modality_gates(r, t)
    np.testing.assert_array_equal(gv.data, 0.5)
    np.testing.assert_array_equal(gt.data, 0.5)
    assert m.fusion_weight(r, t).item() == 0.5
    c = m.compose(r, t)
    np.testing.assert_array_equal(c.f_avti.data, 0.25 * (r.data + t.data))
    np.testing.assert_array_equal(m.compose(r, r).f_avti.data, 0.25 * (r.data + r.data))


def test_gates_match_oracle(avti):
    rng = np.random.default_rng(1)
    r, t = rng.normal(size=8), rng.normal(size=8)
    gv, gt = avti.modality_gates(Tensor(r), Tensor(t))
    comb = np.concatenate([r, t])
    np.testing.assert_allclose(gv.data, oracles.two_layer(comb, avti.gate_v), atol=1e-12)
    np.testing.assert_allclose(gt.data, oracles.two_layer(comb, avti.gate_t), atol=1e-12)
    assert np.all((gv.data > 0) & (gv.data < 1))
    alpha = avti.fusion_weight(gv * Tensor(r), gt * Tensor(t)).item()
    want = oracles.two_layer(np.concatenate([gv.data * r, gt.data * t]), avti.alpha)[0]
    assert alpha == pytest.approx(want, abs=1e-12)
    assert 0 < alpha < 1
    with pytest.raises(DimensionError):
        avti.modality_gates(Tensor(r), Tensor(np.zeros(4)))
    with pytest.raises(DimensionError):
        avti.fusion_weight(Tensor(r), Tensor(np.zeros(4)))


def test_compose_record_invariants(avti):
    rng = np.random.default_rng(2)
    c = avti.compose(Tensor(rng.normal(size=8)), Tensor(rng.normal(size=8)))
    a = c.alpha.item()
    want = a * c.attn_v.data * c.f_rre.data + (1 - a) * c.attn_t.data * c.f_txt.data
    np.testing.assert_allclose(c.f_avti.data, want, atol=1e-12)


def test_compose_alpha_moves_towards_visual(avti):
    # d f_avti / d alpha = gated_v - gated_t; stepping alpha up reduces the distance to gated_v
    rng = np.random.default_rng(3)
    c = avti.compose(Tensor(rng.normal(size=8)), Tensor(rng.normal(size=8)))
    gv = c.attn_v.data * c.f_rre.data
    gt = c.attn_t.data * c.f_txt.data
    direction = gv - gt
    grad_dist = -2 * (gv - c.f_avti.data) @ direction
    assert grad_dist < 0


def test_compose_gradcheck(avti):
    rng = np.random.default_rng(4)
    r, t = param(rng.normal(size=8)), param(rng.normal(size=8))
    proj = rng.normal(size=8)
    params = [p for _, p in avti.named_parameters()]
    err = grad_check(lambda a, b, *ps: (avti(a, b) * proj).sum(), [r, t, *params])
    assert err < 1e-4


def test_sigmoid_never_saturates_for_moderate_inputs():
    assert 0 < sigmoid(Tensor(30.0)).item() < 1
