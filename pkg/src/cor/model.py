"""The full retrieval model: encoders, region embedding, fusion, decoder."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from cor.avti import AVTI, ComposedEmbedding
from cor.backbones import BackboneConfig, Backbones
from cor.errors import DimensionError
from cor.losses import TargetProjection, downsample_mask
from cor.numerics import ops
from cor.numerics.nn import Module, rng_for
from cor.numerics.tensor import Tensor, no_grad
from cor.rre import RRE, RreConfig

EXPRESSIONS = {
    "full": frozenset("imt"),
    "irm": frozenset("im"),
    "it": frozenset("it"),
    "i": frozenset("i"),
    "t": frozenset("t"),
}


@dataclass
class ModelConfig:
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    num_maps: int = 8
    use_rre: bool = True
    use_avti: bool = True
    expr: str = "full"
    project_target: bool = False
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.backbone, dict):
            self.backbone = BackboneConfig(**self.backbone)
        if self.expr not in EXPRESSIONS:
            raise ValueError(f"expression must be one of {sorted(EXPRESSIONS)}")

    @property
    def components(self) -> frozenset:
        return EXPRESSIONS[self.expr]

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class FeatureBundle:
    f_tar: Tensor
    f_ref: Tensor
    f_mask: Tensor | None
    f_txt: Tensor

    def __post_init__(self):
        if self.f_mask is not None and self.f_mask.shape != self.f_ref.shape:
            raise DimensionError(f"mask features {self.f_mask.shape} vs reference features {self.f_ref.shape}")


@dataclass
class FrozenInputs:
    """Outputs of the frozen encoders for one sample; cacheable across epochs."""

    f_tar: Tensor
    f_ref: Tensor
    f_txt: Tensor


@dataclass
class Prediction:
    logits: Tensor
    f_avti: Tensor
    f_tar: Tensor
    composed: ComposedEmbedding | None = None


class CoreModel(Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        bc = config.backbone
        self.backbones = Backbones(bc, config.seed)
        self.rre = RRE(RreConfig(bc.channels, config.num_maps), rng_for(config.seed, "rre"))
        self.avti = AVTI(bc.channels, config.seed)
        self.proj = TargetProjection(bc.channels, bc.channels, config.project_target, config.seed)

    # ---------------------------------------------------------------- inputs
    def frozen_inputs(self, target_image, ref_image, text: str) -> FrozenInputs:
        """Run the image and text encoders. Only valid to cache when they are frozen."""
        with no_grad():
            return FrozenInputs(
                self.backbones.encode_target(target_image),
                self.backbones.encode_reference(ref_image),
                self.backbones.encode_text(text),
            )

    def encode(self, target_image, ref_image, ref_mask, text: str) -> FeatureBundle:
        b = self.backbones
        return FeatureBundle(
            b.encode_target(target_image), b.encode_reference(ref_image), b.encode_mask(ref_mask), b.encode_text(text)
        )

    # ----------------------------------------------------------------- fusion
    def region_embedding(self, f_ref: Tensor, ref_mask: np.ndarray) -> Tensor:
        comps = self.config.components
        if "i" not in comps:
            f_ref = Tensor(np.zeros(f_ref.shape))
        if "m" not in comps:
            return f_ref.mean(axis=(0, 1))
        if not self.config.use_rre:
            grid = f_ref.shape[0]
            cells = downsample_mask(ref_mask, grid)
            if not cells.any():
                cells = downsample_mask(ref_mask, grid, threshold=1e-9)
            return ops.masked_pool(f_ref, cells)
        f_mask = self.backbones.encode_mask(ref_mask)
        return self.rre(f_ref, f_mask)

    def prompt(self, f_ref: Tensor, ref_mask: np.ndarray, f_txt: Tensor) -> tuple[Tensor, ComposedEmbedding | None]:
        comps = self.config.components
        if "i" not in comps and "m" not in comps:
            return f_txt, None
        f_rre = self.region_embedding(f_ref, ref_mask)
        if "t" not in comps:
            return f_rre, None
        if not self.config.use_avti:
            return f_rre + f_txt, None
        composed = self.avti.compose(f_rre, f_txt)
        return composed.f_avti, composed

    def forward(self, inputs: FrozenInputs | FeatureBundle, ref_mask: np.ndarray) -> Prediction:
        f_avti, composed = self.prompt(inputs.f_ref, ref_mask, inputs.f_txt)
        logits = self.backbones.decode_mask(inputs.f_tar, f_avti)
        return Prediction(logits, f_avti, self.proj(inputs.f_tar), composed)

    def predict_proba(self, inputs: FrozenInputs, ref_mask: np.ndarray) -> np.ndarray:
        with no_grad():
            return ops.sigmoid(self.forward(inputs, ref_mask).logits).data

    # ------------------------------------------------------------ parameters
    def frozen_names(self) -> list[str]:
        return [n for n, p in self.named_parameters() if not p.requires_grad]
