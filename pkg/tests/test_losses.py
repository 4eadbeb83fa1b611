import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cor.errors import DimensionError, EmptyMask
from cor.losses import (
    LossConfig,
    TargetProjection,
    downsample_mask,
    edge_weights,
    loss_bg,
    loss_cor,
    loss_fg,
    loss_total,
    loss_wbce,
    loss_wiou,
)
from cor.numerics import Tensor, grad_check


def const_field(v, side=4):
    return Tensor(np.broadcast_to(np.asarray(v, dtype=float), (side, side, len(v))).copy())


def half_mask(side=4):
    m = np.zeros((side, side))
    m[:, : side // 2] = 1
    return m


def param(a):
    return Tensor(np.asarray(a, dtype=float), requires_grad=True)


def square_gt(side=16, lo=4, hi=12):
    g = np.zeros((side, side))
    g[lo:hi, lo:hi] = 1
    return g


# ------------------------------------------------------------- projection
def test_projection_identity_and_shape():
    x = Tensor(np.random.default_rng(0).normal(size=(16, 16, 32)))
    assert TargetProjection(32, 32)(x) is x
    p = TargetProjection(48, 32, enabled=True)
    assert p(Tensor(np.zeros((16, 16, 48)))).shape == (16, 16, 32)
    with pytest.raises(DimensionError):
        TargetProjection(48, 32)


def test_projection_gradcheck():
    p = TargetProjection(5, 3, enabled=True, seed=1)
    x = param(np.random.default_rng(1).normal(size=(3, 3, 5)))
    w = np.random.default_rng(2).normal(size=(3, 3, 3))
    assert grad_check(lambda a, *ps: (p(a) * w).sum(), [x, *p.parameters()]) < 1e-4


# -------------------------------------------------------------- contrast
def test_loss_fg_examples():
    v = np.array([1.0, -2.0, 0.5])
    m = half_mask()
    assert loss_fg(const_field(v), m, Tensor(v)).item() == pytest.approx(0.0, abs=1e-12)
    assert loss_fg(const_field(-v), m, Tensor(v)).item() == pytest.approx(2.0, abs=1e-12)
    ortho = np.array([2.0, 1.0, 0.0])
    assert loss_fg(const_field(ortho), m, Tensor(v)).item() == pytest.approx(1.0, abs=1e-12)


def test_loss_bg_examples():
    v = np.array([0.3, 0.1, -1.0])
    m = half_mask()
    assert loss_bg(const_field(v), m, Tensor(v)).item() == pytest.approx(2.0, abs=1e-12)
    assert loss_bg(const_field(-v), m, Tensor(v)).item() == pytest.approx(0.0, abs=1e-12)
    ortho = np.array([1.0, -3.0, 0.0])
    assert loss_bg(const_field(ortho), m, Tensor(v)).item() == pytest.approx(1.0, abs=1e-12)


def test_fg_and_bg_pool_their_own_regions():
    f = np.zeros((4, 4, 2))
    f[:, :2] = [1.0, 0.0]
    f[:, 2:] = [0.0, 1.0]
    m = half_mask()
    assert loss_fg(Tensor(f), m, Tensor([1.0, 0.0])).item() == pytest.approx(0.0, abs=1e-12)
    assert loss_bg(Tensor(f), m, Tensor([1.0, 0.0])).item() == pytest.approx(1.0, abs=1e-12)


def test_loss_cor_examples():
    v = np.array([1.0, 0.0])
    f = np.zeros((4, 4, 2))
    f[:, :2] = v
    f[:, 2:] = -v
    fg, bg, cor = loss_cor(Tensor(f), half_mask(), Tensor(v))
    assert (fg.item(), bg.item(), cor.item()) == pytest.approx((0.0, 0.0, 0.0), abs=1e-12)
    _, _, cor = loss_cor(const_field([0.0, 1.0]), half_mask(), Tensor(v))
    assert cor.item() == pytest.approx(2.0, abs=1e-12)


def test_contrast_batch_mean():
    rng = np.random.default_rng(3)
    feats = [Tensor(rng.normal(size=(4, 4, 3))) for _ in range(3)]
    prompts = [Tensor(rng.normal(size=3)) for _ in range(3)]
    masks = [half_mask(), 1 - half_mask(), np.eye(4)]
    whole = loss_fg(feats, masks, prompts).item()
    parts = [loss_fg(f, m, p).item() for f, m, p in zip(feats, masks, prompts)]
    assert whole == pytest.approx(np.mean(parts), abs=1e-12)
    fg, bg, cor = loss_cor(feats, masks, prompts)
    assert cor.item() == fg.item() + bg.item()


def test_contrast_empty_region():
    v = Tensor([1.0, 0.0])
    with pytest.raises(EmptyMask):
        loss_fg(const_field([1.0, 0.0]), np.zeros((4, 4)), v)
    with pytest.raises(EmptyMask):
        loss_bg(const_field([1.0, 0.0]), np.ones((4, 4)), v)
    feats = [const_field([1.0, 0.0]), const_field([0.0, 1.0])]
    got = loss_fg(feats, [np.zeros((4, 4)), half_mask()], [v, v], skip_empty=True).item()
    assert got == pytest.approx(1.0, abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.01, 100.0))
def test_contrast_bounds_and_scale_invariance(seed, lam):
    rng = np.random.default_rng(seed)
    f = Tensor(rng.normal(size=(4, 4, 3)))
    m = (rng.random((4, 4)) < 0.5).astype(float)
    m[0, 0], m[3, 3] = 1, 0
    p = rng.normal(size=3)
    fg, bg = loss_fg(f, m, Tensor(p)).item(), loss_bg(f, m, Tensor(p)).item()
    assert -1e-9 <= fg <= 2 + 1e-9 and -1e-9 <= bg <= 2 + 1e-9
    assert loss_fg(f, m, Tensor(lam * p)).item() == pytest.approx(fg, abs=1e-9)
    assert loss_bg(f, m, Tensor(lam * p)).item() == pytest.approx(bg, abs=1e-9)


def test_contrast_gradcheck():
    rng = np.random.default_rng(4)
    f, p = param(rng.normal(size=(4, 4, 3))), param(rng.normal(size=3))
    assert grad_check(lambda a, b: loss_cor(a, half_mask(), b)[2], [f, p]) < 1e-6


def test_downsample_mask():
    m = np.zeros((8, 8))
    m[0:2, 0:2] = 1  # full cell
    m[2:4, 0] = 1  # half cell -> kept
    m[4, 4] = 1  # quarter cell -> dropped
    got = downsample_mask(m, 4)
    want = np.zeros((4, 4))
    want[0, 0] = want[1, 0] = 1
    np.testing.assert_array_equal(got, want)
    with pytest.raises(DimensionError):
        downsample_mask(np.zeros((6, 6)), 4)


# ----------------------------------------------------------- segmentation
def loop_avgpool(g, k):
    h, w = g.shape
    r = k // 2
    out = np.zeros_like(g)
    for i in range(h):
        for j in range(w):
            s = 0.0
            for di in range(-r, r + 1):
                for dj in range(-r, r + 1):
                    if 0 <= i + di < h and 0 <= j + dj < w:
                        s += g[i + di, j + dj]
            out[i, j] = s / (k * k)
    return out


def test_window_default():
    assert LossConfig().window_for(64) == 31
    assert LossConfig().window_for(16) == 7
    assert LossConfig().window_for(2) == 1
    assert LossConfig(window=5).window_for(64) == 5
    with pytest.raises(ValueError):
        LossConfig(window=4)
    with pytest.raises(ValueError):
        LossConfig(edge_weight=-1)


def test_edge_weights_against_loop_oracle():
    g = square_gt(12, 2, 9)
    want = 1 + 5 * np.abs(loop_avgpool(g, 3) - g)
    np.testing.assert_allclose(edge_weights(g, 5, 3), want, atol=1e-12)


def test_edge_weight_field_shape():
    g = square_gt(32, 4, 28)
    w = edge_weights(g, 5, 3)
    assert np.all(w[6:26, 6:26] == 1)
    assert np.all(w[4, 4:28] > 1) and np.all(w[3, 5:27] > 1)


def test_wbce_examples():
    z = Tensor(np.zeros((16, 16)))
    assert loss_wbce(z, np.zeros((16, 16))).item() == pytest.approx(math.log(2), abs=1e-4)
    assert loss_wbce(Tensor(np.full((16, 16), 40.0)), np.ones((16, 16))).item() < 1e-12
    # edge weighting moves nothing when logits are uniform and the per-pixel loss is uniform
    assert loss_wbce(z, square_gt()).item() == pytest.approx(math.log(2), abs=1e-12)


def test_wbce_direct_formula():
    rng = np.random.default_rng(5)
    z, g = rng.normal(size=(16, 16)) * 3, square_gt()
    w = 1 + 5 * np.abs(loop_avgpool(g, 7) - g)
    p = 1 / (1 + np.exp(-z))
    want = np.sum(w * -(g * np.log(p) + (1 - g) * np.log(1 - p))) / w.sum()
    assert loss_wbce(Tensor(z), g).item() == pytest.approx(want, abs=1e-12)
    with pytest.raises(DimensionError):
        loss_wbce(Tensor(z), np.zeros((8, 8)))


def test_wiou_examples():
    g = square_gt()
    sat = Tensor(np.where(g > 0, 60.0, -60.0))
    assert loss_wiou(sat, g).item() == pytest.approx(0.0, abs=1e-12)
    flipped = Tensor(np.where(g > 0, -60.0, 60.0))
    assert loss_wiou(flipped, g, smooth=1e-9).item() == pytest.approx(1.0, abs=1e-9)
    assert 0.99 < loss_wiou(flipped, g).item() < 1.0


def test_wiou_direct_formula():
    rng = np.random.default_rng(6)
    z, g = rng.normal(size=(16, 16)), square_gt()
    w = 1 + 5 * np.abs(loop_avgpool(g, 7) - g)
    p = 1 / (1 + np.exp(-z))
    want = 1 - (np.sum(w * p * g) + 1) / (np.sum(w * (p + g - p * g)) + 1)
    assert loss_wiou(Tensor(z), g).item() == pytest.approx(want, abs=1e-12)
    assert 0 <= loss_wiou(Tensor(z), g).item() < 1


def test_segmentation_gradcheck():
    rng = np.random.default_rng(7)
    z, g = param(rng.normal(size=(12, 12))), square_gt(12, 3, 8)
    assert grad_check(lambda a: loss_wbce(a, g) + loss_wiou(a, g), [z]) < 1e-6


# ------------------------------------------------------------------ total
def batch(rng, n=2):
    logits = [param(rng.normal(size=(16, 16))) for _ in range(n)]
    gts = [square_gt(16, 2 + i, 10 + i) for i in range(n)]
    feats = [param(rng.normal(size=(4, 4, 3))) for _ in range(n)]
    grids = [downsample_mask(g, 4) for g in gts]
    prompts = [param(rng.normal(size=3)) for _ in range(n)]
    return logits, gts, feats, grids, prompts


def test_total_identities():
    logits, gts, feats, grids, prompts = batch(np.random.default_rng(8))
    off = loss_total(logits, gts, LossConfig(contrastive=False))
    assert off.l_total.item() == off.l_seg.item()
    assert off.l_cor is None and set(off.as_floats()) == {"l_wbce", "l_wiou", "l_seg", "l_total"}
    on = loss_total(logits, gts, LossConfig(), feats, grids, prompts)
    assert on.l_seg.item() == on.l_wbce.item() + on.l_wiou.item()
    assert on.l_cor.item() == on.l_fg.item() + on.l_bg.item()
    assert on.l_total.item() == on.l_seg.item() + on.l_cor.item()
    assert on.l_seg.item() == off.l_seg.item()
    per = [loss_wbce(z, g, 5, 7).item() for z, g in zip(logits, gts)]
    assert on.l_wbce.item() == pytest.approx(np.mean(per), abs=1e-12)
    with pytest.raises(ValueError):
        loss_total(logits, gts, LossConfig())
    with pytest.raises(DimensionError):
        loss_total(logits, gts[:1], LossConfig(contrastive=False))


def test_total_gradcheck():
    logits, gts, feats, grids, prompts = batch(np.random.default_rng(9))
    cfg = LossConfig()

    def fn(*_):
        return loss_total(logits, gts, cfg, feats, grids, prompts).l_total

    assert grad_check(fn, [*logits, *feats, *prompts]) < 1e-4
