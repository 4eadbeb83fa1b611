"""Contrastive alignment loss, edge-weighted segmentation losses, total objective."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from cor.errors import DimensionError, EmptyMask
from cor.numerics import ops
from cor.numerics.nn import Conv2d, Module, rng_for
from cor.numerics.tensor import Tensor


@dataclass
class LossConfig:
    contrastive: bool = True
    edge_weight: float = 5.0
    window: int | None = None  # None: largest odd size <= half the mask side
    smooth: float = 1.0
    skip_empty: bool = False  # drop samples with an empty fg/bg cell set instead of raising

    def __post_init__(self):
        if self.edge_weight < 0:
            raise ValueError("edge weight must be nonnegative")
        if self.window is not None and (self.window < 1 or self.window % 2 == 0):
            raise ValueError("pooling window must be odd and >= 1")

    def window_for(self, side: int) -> int:
        if self.window is not None:
            return self.window
        w = max(side // 2, 1)
        return w if w % 2 else w - 1


@dataclass
class LossBreakdown:
    l_wbce: Tensor
    l_wiou: Tensor
    l_seg: Tensor
    l_total: Tensor
    l_fg: Tensor | None = None
    l_bg: Tensor | None = None
    l_cor: Tensor | None = None

    def as_floats(self) -> dict[str, float]:
        names = ["l_fg", "l_bg", "l_cor", "l_wbce", "l_wiou", "l_seg", "l_total"]
        return {n: getattr(self, n).item() for n in names if getattr(self, n) is not None}


def downsample_mask(mask: np.ndarray, grid: int, threshold: float = 0.5) -> np.ndarray:
    """Cell is foreground when at least ``threshold`` of its pixels are."""
    m = np.asarray(mask, dtype=np.float64)
    h, w = m.shape
    if h % grid or w % grid:
        raise DimensionError(f"mask {m.shape} is not divisible into a {grid}x{grid} grid")
    cover = m.reshape(grid, h // grid, grid, w // grid).mean(axis=(1, 3))
    return (cover >= threshold).astype(np.float64)


class TargetProjection(Module):
    """Per-position linear map of target features to the prompt width."""

    def __init__(self, c_in: int, dim: int, enabled: bool = False, seed: int = 0):
        super().__init__()
        if not enabled and c_in != dim:
            raise DimensionError(f"projection disabled but widths differ ({c_in} vs {dim})")
        self.enabled = enabled
        if enabled:
            self.conv = Conv2d(c_in, dim, 1, rng_for(seed, "proj"))

    def forward(self, f_tar: Tensor) -> Tensor:
        return self.conv(f_tar) if self.enabled else f_tar


def _pooled_cosines(feats: Sequence[Tensor], masks: Sequence[np.ndarray], prompts: Sequence[Tensor], skip_empty: bool):
    sims = []
    for f, m, p in zip(feats, masks, prompts):
        if not np.any(m):
            if skip_empty:
                continue
            raise EmptyMask("pooling region is empty on the feature grid")
        sims.append(ops.cosine_similarity(ops.masked_pool(f, m), p))
    if not sims:
        raise EmptyMask("every sample in the batch has an empty pooling region")
    total = sims[0]
    for s in sims[1:]:
        total = total + s
    return total * (1.0 / len(sims))


def loss_fg(f_tar, gt_grid, f_avti, skip_empty: bool = False) -> Tensor:
    """1 - mean cosine between pooled foreground features and the prompt."""
    f_tar, gt_grid, f_avti = _as_batch(f_tar, gt_grid, f_avti)
    return 1.0 - _pooled_cosines(f_tar, gt_grid, f_avti, skip_empty)


def loss_bg(f_tar, gt_grid, f_avti, skip_empty: bool = False) -> Tensor:
    """1 + mean cosine between pooled background features and the prompt."""
    f_tar, gt_grid, f_avti = _as_batch(f_tar, gt_grid, f_avti)
    bg = [1.0 - np.asarray(g, dtype=np.float64) for g in gt_grid]
    return 1.0 + _pooled_cosines(f_tar, bg, f_avti, skip_empty)


def loss_cor(f_tar, gt_grid, f_avti, skip_empty: bool = False) -> tuple[Tensor, Tensor, Tensor]:
    fg = loss_fg(f_tar, gt_grid, f_avti, skip_empty)
    bg = loss_bg(f_tar, gt_grid, f_avti, skip_empty)
    return fg, bg, fg + bg


def edge_weights(gt: np.ndarray, edge_weight: float = 5.0, window: int | None = None) -> np.ndarray:
    gt = np.asarray(gt, dtype=np.float64)
    if window is None:
        window = LossConfig().window_for(min(gt.shape))
    return 1.0 + edge_weight * np.abs(ops.avg_pool_same(gt, window) - gt)


def _check_pair(logits: Tensor, gt: np.ndarray) -> None:
    if logits.shape != np.shape(gt):
        raise DimensionError(f"prediction {logits.shape} vs ground truth {np.shape(gt)}")


def loss_wbce(logits: Tensor, gt, edge_weight: float = 5.0, window: int | None = None) -> Tensor:
    _check_pair(logits, gt)
    w = edge_weights(gt, edge_weight, window)
    return (ops.bce_with_logits(logits, gt) * w).sum() * (1.0 / w.sum())


def loss_wiou(logits: Tensor, gt, edge_weight: float = 5.0, window: int | None = None, smooth: float = 1.0) -> Tensor:
    _check_pair(logits, gt)
    g = np.asarray(gt, dtype=np.float64)
    w = edge_weights(g, edge_weight, window)
    p = ops.sigmoid(logits)
    inter = (p * (w * g)).sum()
    union = (p * (w * (1.0 - g))).sum() + float((w * g).sum())
    return 1.0 - (inter + smooth) / (union + smooth)


def loss_total(
    logits: Sequence[Tensor],
    gts: Sequence[np.ndarray],
    config: LossConfig,
    f_tar: Sequence[Tensor] | None = None,
    gt_grids: Sequence[np.ndarray] | None = None,
    f_avti: Sequence[Tensor] | None = None,
) -> LossBreakdown:
    """Batch-mean segmentation loss plus, when enabled, the contrastive term."""
    if isinstance(logits, Tensor):
        logits, gts = [logits], [gts]
    if len(logits) != len(gts) or not logits:
        raise DimensionError("need one ground truth per prediction")
    wbce = wiou = None
    for z, g in zip(logits, gts):
        win = config.window_for(min(np.shape(g)))
        b = loss_wbce(z, g, config.edge_weight, win)
        i = loss_wiou(z, g, config.edge_weight, win, config.smooth)
        wbce = b if wbce is None else wbce + b
        wiou = i if wiou is None else wiou + i
    n = 1.0 / len(logits)
    wbce, wiou = wbce * n, wiou * n
    seg = wbce + wiou
    if not config.contrastive:
        return LossBreakdown(wbce, wiou, seg, seg)
    if f_tar is None or gt_grids is None or f_avti is None:
        raise ValueError("contrastive loss needs target features, grid masks and prompts")
    fg, bg, cor = loss_cor(f_tar, gt_grids, f_avti, config.skip_empty)
    return LossBreakdown(wbce, wiou, seg, seg + cor, fg, bg, cor)


def _as_batch(f_tar, gt_grid, f_avti):
    if isinstance(f_tar, Tensor):
        f_tar, gt_grid, f_avti = [f_tar], [gt_grid], [f_avti]
    if not (len(f_tar) == len(gt_grid) == len(f_avti)) or not f_tar:
        raise DimensionError("batch members disagree in count")
    return list(f_tar), [np.asarray(g) for g in gt_grid], list(f_avti)
