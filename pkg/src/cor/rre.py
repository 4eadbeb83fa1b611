"""Reference region embedding.

The reference-image features and the mask features are summed, refined by
three residual SFE blocks (depthwise 7x7 conv, layer norm, pointwise conv,
GeLU, pointwise conv), projected to K activation maps, normalized with a
spatial softmax per map, and used as convex weights to pool the reference
features. The K pooled vectors are averaged into a single region embedding.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from cor.errors import DimensionError
from cor.numerics import ops
from cor.numerics.nn import Conv2d, LayerNorm, Module
from cor.numerics.tensor import Tensor

NUM_BLOCKS = 3


@dataclass
class RreConfig:
    channels: int = 32
    num_maps: int = 8

    def __post_init__(self):
        if self.num_maps < 1:
            raise ValueError("need at least one activation map")


@dataclass
class ActivationMaps:
    raw: Tensor
    normalized: Tensor


class SFEBlock(Module):
    def __init__(self, channels: int, rng: np.random.Generator):
        super().__init__()
        self.channels = channels
        self.dwc = Conv2d(channels, channels, 7, rng, padding=3, groups=channels)
        self.ln = LayerNorm(channels)
        self.pwc1 = Conv2d(channels, channels, 1, rng)
        self.pwc2 = Conv2d(channels, channels, 1, rng)

    def branch(self, x: Tensor) -> Tensor:
        return self.pwc2(ops.gelu(self.pwc1(self.ln(self.dwc(x)))))

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 3 or x.shape[-1] != self.channels:
            raise DimensionError(f"SFE block expects (h, w, {self.channels}), got {x.shape}")
        return x + self.branch(x)


def normalize_maps(a_map: Tensor) -> Tensor:
    """Spatial softmax of every activation map independently."""
    return ops.softmax_over_positions(a_map)


def aggregate(f_ref: Tensor, a_bar: Tensor) -> Tensor:
    """Average over maps of the map-weighted sum of reference features."""
    if f_ref.ndim != 3 or a_bar.ndim != 3 or f_ref.shape[:2] != a_bar.shape[:2]:
        raise DimensionError(f"aggregate: features {f_ref.shape} vs maps {a_bar.shape}")
    h, w, c = f_ref.shape
    k = a_bar.shape[-1]
    weights = a_bar.reshape(h * w, k).mean(axis=1)
    return weights @ f_ref.reshape(h * w, c)


class RRE(Module):
    def __init__(self, config: RreConfig, rng: np.random.Generator):
        super().__init__()
        self.config = config
        c = config.channels
        self.sfe1 = SFEBlock(c, rng)
        self.sfe2 = SFEBlock(c, rng)
        self.sfe3 = SFEBlock(c, rng)
        self.proj = Conv2d(c, config.num_maps, 1, rng)

    def activation_maps(self, f_ref: Tensor, f_mask: Tensor) -> Tensor:
        if f_ref.shape != f_mask.shape:
            raise DimensionError(f"reference features {f_ref.shape} vs mask features {f_mask.shape}")
        x = f_ref + f_mask
        return self.proj(self.sfe3(self.sfe2(self.sfe1(x))))

    def maps(self, f_ref: Tensor, f_mask: Tensor) -> ActivationMaps:
        raw = self.activation_maps(f_ref, f_mask)
        return ActivationMaps(raw, normalize_maps(raw))

    def forward(self, f_ref: Tensor, f_mask: Tensor) -> Tensor:
        return aggregate(f_ref, normalize_maps(self.activation_maps(f_ref, f_mask)))
