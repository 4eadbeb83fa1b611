"""Adaptive vision-text interaction.

Two gate networks read the concatenated (region, text) vector and emit
per-channel sigmoid gates; a third network reads the gated pair and emits a
scalar mixing weight alpha. The composed embedding is
``alpha * gate_v * f_rre + (1 - alpha) * gate_t * f_txt``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from cor.errors import DimensionError
from cor.numerics import ops
from cor.numerics.nn import Linear, Module, rng_for
from cor.numerics.tensor import Tensor, concat


@dataclass
class ComposedEmbedding:
    f_rre: Tensor
    f_txt: Tensor
    attn_v: Tensor
    attn_t: Tensor
    alpha: Tensor
    f_avti: Tensor


class TwoLayer(Module):
    """Linear -> ReLU -> Linear -> sigmoid."""

    def __init__(self, n_in: int, n_hidden: int, n_out: int, rng: np.random.Generator):
        super().__init__()
        self.fc1 = Linear(n_in, n_hidden, rng)
        self.fc2 = Linear(n_hidden, n_out, rng)

    def forward(self, x: Tensor) -> Tensor:
        return ops.sigmoid(self.fc2(ops.relu(self.fc1(x))))


class AVTI(Module):
    def __init__(self, dim: int, seed: int = 0):
        super().__init__()
        self.dim = dim
        self.gate_v = TwoLayer(2 * dim, dim, dim, rng_for(seed, "avti.gate_v"))
        self.gate_t = TwoLayer(2 * dim, dim, dim, rng_for(seed, "avti.gate_t"))
        self.alpha = TwoLayer(2 * dim, dim, 1, rng_for(seed, "avti.alpha"))

    def _check(self, a: Tensor, b: Tensor) -> None:
        if a.shape != (self.dim,) or b.shape != (self.dim,):
            raise DimensionError(f"AVTI expects two ({self.dim},) vectors, got {a.shape} and {b.shape}")

    def modality_gates(self, f_rre: Tensor, f_txt: Tensor) -> tuple[Tensor, Tensor]:
        self._check(f_rre, f_txt)
        comb = concat([f_rre, f_txt])
        return self.gate_v(comb), self.gate_t(comb)

    def fusion_weight(self, gated_v: Tensor, gated_t: Tensor) -> Tensor:
        self._check(gated_v, gated_t)
        return self.alpha(concat([gated_v, gated_t])).reshape(())

    def compose(self, f_rre: Tensor, f_txt: Tensor) -> ComposedEmbedding:
        attn_v, attn_t = self.modality_gates(f_rre, f_txt)
        gv = attn_v * f_rre
        gt = attn_t * f_txt
        alpha = self.fusion_weight(gv, gt)
        f_avti = alpha * gv + (1.0 - alpha) * gt
        return ComposedEmbedding(f_rre, f_txt, attn_v, attn_t, alpha, f_avti)

    def forward(self, f_rre: Tensor, f_txt: Tensor) -> Tensor:
        return self.compose(f_rre, f_txt).f_avti
