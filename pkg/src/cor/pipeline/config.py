from __future__ import annotations

from dataclasses import asdict, dataclass, field

from cor.dataset.schema import OFFICIAL_SETTINGS


@dataclass
class PipelineConfig:
    min_area: float = 0.03  # object / image area, below -> TooSmall
    max_area: float = 0.80  # above -> TooLarge
    min_fill: float = 0.20  # mask / box area must exceed this
    max_instances: int = 3  # more raw objects of a category in one image -> category dropped there
    min_images: int = 2  # categories seen in fewer distinct images are dropped
    category_cap: int = 300
    ref_min_area: float = 0.05
    similarity_cutoff: float = 0.8
    max_references: int = 5
    max_text_words: int = 10
    novel_fraction: float = 78 / 408
    train_fraction: float = 0.75
    min_categories: int = 5
    seed: int = 0
    allowed_settings: list = field(default_factory=lambda: list(OFFICIAL_SETTINGS))
    max_concurrency: int = 4
    banned_words: tuple = ("reference", "target")

    def __post_init__(self):
        if not 0 < self.min_area < self.max_area <= 1:
            raise ValueError("area thresholds must satisfy 0 < min < max <= 1")
        if not 0 < self.similarity_cutoff <= 1:
            raise ValueError("similarity cutoff must lie in (0, 1]")
        if not 0 < self.novel_fraction < 1 or not 0 < self.train_fraction < 1:
            raise ValueError("split fractions must lie in (0, 1)")
        if self.category_cap < 1 or self.max_references < 1 or self.max_concurrency < 1:
            raise ValueError("caps and limits must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["banned_words"] = list(self.banned_words)
        return d
