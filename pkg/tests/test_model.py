import numpy as np
import pytest

from cor.backbones import BackboneConfig
from cor.losses import LossConfig, downsample_mask, loss_total
from cor.model import CoreModel, ModelConfig
from cor.numerics import Tensor, grad_check, masked_pool

SMALL = dict(image_size=16, target_grid=4, ref_grid=4, channels=8)


def sample(size=64, seed=0):
    rng = np.random.default_rng(seed)
    img = rng.integers(0, 256, size=(size, size, 3), dtype=np.uint8)
    mask = np.zeros((size, size))
    mask[size // 4 : size // 2, size // 4 : size // 2] = 1
    return img, mask


def test_forward_shapes_and_determinism():
    model = CoreModel(ModelConfig(seed=1))
    img, mask = sample()
    inputs = model.frozen_inputs(img, img, "change the color to light")
    pred = model.forward(inputs, mask)
    assert pred.logits.shape == (64, 64)
    assert pred.f_avti.shape == (32,)
    assert pred.f_tar.shape == (16, 16, 32)
    again = CoreModel(ModelConfig(seed=1)).forward(inputs, mask)
    np.testing.assert_array_equal(pred.logits.data, again.logits.data)
    prob = model.predict_proba(inputs, mask)
    assert prob.shape == (64, 64) and np.all((prob > 0) & (prob < 1))


def test_backward_reaches_only_trainable_parts():
    model = CoreModel(ModelConfig(seed=2))
    img, mask = sample(seed=2)
    bundle = model.encode(img, img, mask, "move it to the left")
    pred = model.forward(bundle, mask)
    pred.logits.sum().backward()
    frozen = set(model.frozen_names())
    assert frozen and all(n.startswith(("backbones.target", "backbones.reference", "backbones.text")) for n in frozen)
    for name, p in model.named_parameters():
        if name in frozen:
            assert p.grad is None
        elif name.startswith(("rre.", "avti.", "backbones.decoder", "backbones.mask")):
            assert p.grad is not None, name


def test_ablation_switches():
    img, mask = sample(seed=3)
    text = "change the color to dark"
    base = CoreModel(ModelConfig(seed=0))
    inputs = base.frozen_inputs(img, img, text)

    no_avti = CoreModel(ModelConfig(seed=0, use_avti=False))
    f_rre = base.region_embedding(inputs.f_ref, mask)
    np.testing.assert_allclose(no_avti.forward(inputs, mask).f_avti.data, f_rre.data + inputs.f_txt.data)

    no_rre = CoreModel(ModelConfig(seed=0, use_rre=False, use_avti=False))
    cells = downsample_mask(mask, 8)
    want = masked_pool(inputs.f_ref, cells).data + inputs.f_txt.data
    np.testing.assert_allclose(no_rre.forward(inputs, mask).f_avti.data, want)

    # shared weights across variants: the decoder of each is identical
    for a, b in zip(base.backbones.decoder.parameters(), no_rre.backbones.decoder.parameters()):
        np.testing.assert_array_equal(a.data, b.data)


def test_expression_components():
    img, mask = sample(seed=4)
    model = CoreModel(ModelConfig(seed=0, expr="t"))
    inputs = model.frozen_inputs(img, img, "rotate it")
    np.testing.assert_array_equal(model.forward(inputs, mask).f_avti.data, inputs.f_txt.data)

    irm = CoreModel(ModelConfig(seed=0, expr="irm"))
    np.testing.assert_array_equal(irm.forward(inputs, mask).f_avti.data, irm.rre(inputs.f_ref, irm.backbones.encode_mask(mask)).data)

    only_i = CoreModel(ModelConfig(seed=0, expr="i"))
    np.testing.assert_allclose(only_i.forward(inputs, mask).f_avti.data, inputs.f_ref.data.mean(axis=(0, 1)))

    it = CoreModel(ModelConfig(seed=0, expr="it"))
    c = it.forward(inputs, mask).composed
    np.testing.assert_allclose(c.f_rre.data, inputs.f_ref.data.mean(axis=(0, 1)))
    with pytest.raises(ValueError):
        ModelConfig(expr="mt")


def test_small_mask_without_rre_falls_back_to_touched_cells():
    model = CoreModel(ModelConfig(seed=0, use_rre=False))
    img, _ = sample(seed=5)
    mask = np.zeros((64, 64))
    mask[3, 3] = 1
    inputs = model.frozen_inputs(img, img, "make it bigger")
    np.testing.assert_allclose(model.region_embedding(inputs.f_ref, mask).data, inputs.f_ref.data[0, 0])


def test_config_dict_roundtrip():
    cfg = ModelConfig(backbone=BackboneConfig(**SMALL), use_rre=False, seed=9)
    again = ModelConfig(**cfg.to_dict())
    assert again == cfg


def test_end_to_end_total_loss_gradcheck():
    model = CoreModel(ModelConfig(backbone=BackboneConfig(**SMALL), num_maps=2, seed=3))
    img, mask = sample(16, seed=6)
    gt = np.zeros((16, 16))
    gt[6:14, 2:10] = 1
    inputs = model.frozen_inputs(img, img, "change the color to red")
    params = [p for _, p in model.trainable_parameters()]
    cfg = LossConfig()
    grid = downsample_mask(gt, 4)

    def fn(*_):
        pred = model.forward(inputs, mask)
        return loss_total([pred.logits], [gt], cfg, [pred.f_tar], [grid], [pred.f_avti]).l_total

    assert grad_check(fn, params, max_coords=6) < 1e-4
