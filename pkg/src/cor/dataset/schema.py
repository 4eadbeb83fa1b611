"""Retrieval quintuples, settings and the manifest container."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from cor.errors import DimensionError, InputError, ParseError, UnsupportedSetting

SPLITS = ("train", "test_base", "test_novel")
OFFICIAL_SETTINGS = ("1p0n", "1p1n", "1p2n", "2p0n", "2p1n", "3p0n")
_LABEL = re.compile(r"^(\d+)p(\d+)n$")


@dataclass(frozen=True)
class Setting:
    positives: int
    negatives: int

    @property
    def label(self) -> str:
        return f"{self.positives}p{self.negatives}n"

    def __str__(self) -> str:
        return self.label

    @classmethod
    def parse(cls, label: str) -> "Setting":
        m = _LABEL.match(label)
        if not m:
            raise InputError(f"not a setting label: {label!r}")
        return cls(int(m.group(1)), int(m.group(2)))


def classify_setting(n_pos: int, n_neg: int, allowed: Iterable[str] | None = OFFICIAL_SETTINGS) -> Setting:
    """Label a target image by its positive/negative counts; ``allowed=None`` accepts any."""
    if n_pos < 1 or n_neg < 0:
        raise InputError(f"need at least one positive and no negative counts, got ({n_pos}, {n_neg})")
    s = Setting(n_pos, n_neg)
    if allowed is not None and s.label not in set(allowed):
        raise UnsupportedSetting(f"{s.label} is outside the allowed settings")
    return s


def union_mask(masks: Sequence[np.ndarray]) -> np.ndarray:
    if len(masks) == 0:
        raise InputError("union of zero masks")
    out = np.zeros(np.shape(masks[0]), dtype=bool)
    for m in masks:
        if np.shape(m) != out.shape:
            raise DimensionError(f"mask shapes differ: {np.shape(m)} vs {out.shape}")
        out |= np.asarray(m) != 0
    return out


def category_lexicon(category: str) -> set[str]:
    """Surface forms of a category noun: the name, its words, and naive plurals."""
    words = {category.lower(), *re.findall(r"[a-z0-9]+", category.lower())}
    forms = set()
    for w in words:
        forms |= {w, w + "s", w + "es"}
        if w.endswith("y"):
            forms.add(w[:-1] + "ies")
    return forms


def mentions_category(text: str, category: str) -> bool:
    t = text.lower()
    tokens = set(re.findall(r"[a-z0-9]+", t))
    for form in category_lexicon(category):
        if " " in form or "_" in form:
            if form.replace("_", " ") in t:
                return True
        elif form in tokens:
            return True
    return False


@dataclass
class CorSample:
    pair_id: str
    split: str
    category: str
    setting: str
    ref_image: str
    ref_mask: str
    retrieval_text: str
    target_image: str
    positive_masks: list[str]
    negative_masks: list[str]
    root: Path | None = field(default=None, compare=False, repr=False)
    provenance: dict | None = None  # set by the curation pipeline

    def validate(self, allowed: Iterable[str] | None = OFFICIAL_SETTINGS) -> None:
        if self.split not in SPLITS:
            raise InputError(f"unknown split {self.split!r}")
        if not self.retrieval_text.strip():
            raise InputError("retrieval text is empty")
        if mentions_category(self.retrieval_text, self.category):
            raise InputError(f"retrieval text names the category {self.category!r}")
        label = classify_setting(len(self.positive_masks), len(self.negative_masks), allowed).label
        if label != self.setting:
            raise InputError(f"setting {self.setting} disagrees with {label} from the mask lists")

    # -------------------------------------------------------- file access
    def path(self, rel: str) -> Path:
        p = Path(rel)
        return p if p.is_absolute() or self.root is None else self.root / p

    def load_ref_image(self) -> np.ndarray:
        from cor.dataset.io import read_image

        return read_image(self.path(self.ref_image))

    def load_target_image(self) -> np.ndarray:
        from cor.dataset.io import read_image

        return read_image(self.path(self.target_image))

    def load_ref_mask(self) -> np.ndarray:
        from cor.dataset.io import read_mask

        return read_mask(self.path(self.ref_mask))

    def load_positive_masks(self) -> list[np.ndarray]:
        from cor.dataset.io import read_mask

        return [read_mask(self.path(p)) for p in self.positive_masks]

    def load_negative_masks(self) -> list[np.ndarray]:
        from cor.dataset.io import read_mask

        return [read_mask(self.path(p)) for p in self.negative_masks]

    def union_mask(self) -> np.ndarray:
        return union_mask(self.load_positive_masks())

    # ------------------------------------------------------ serialization
    FIELDS = (
        "pair_id",
        "split",
        "category",
        "setting",
        "ref_image",
        "ref_mask",
        "retrieval_text",
        "target_image",
        "positive_masks",
        "negative_masks",
    )

    def to_record(self) -> dict:
        rec = {k: getattr(self, k) for k in self.FIELDS}
        rec["positive_masks"] = list(self.positive_masks)
        rec["negative_masks"] = list(self.negative_masks)
        if self.provenance is not None:
            rec["provenance"] = self.provenance
        return rec


@dataclass
class Manifest:
    samples: list[CorSample] = field(default_factory=list)
    base_categories: list[str] = field(default_factory=list)
    novel_categories: list[str] = field(default_factory=list)
    version: int = 1
    allowed_settings: list[str] | None = field(default_factory=lambda: list(OFFICIAL_SETTINGS))

    def validate(self) -> None:
        seen = set()
        novel = set(self.novel_categories)
        overlap = novel & set(self.base_categories)
        if overlap:
            raise ParseError(f"categories listed as both base and novel: {sorted(overlap)}")
        for i, s in enumerate(self.samples):
            try:
                if s.pair_id in seen:
                    raise InputError(f"duplicate pair_id {s.pair_id!r}")
                seen.add(s.pair_id)
                s.validate(self.allowed_settings)
                if s.category in novel and s.split != "test_novel":
                    raise InputError(f"novel category {s.category!r} outside test_novel")
            except (InputError, UnsupportedSetting) as e:
                raise ParseError(str(e), index=i) from e

    def split(self, name: str) -> list[CorSample]:
        return [s for s in self.samples if s.split == name]

    def by_setting(self, label: str, split: str | None = None) -> list[CorSample]:
        return [s for s in self.samples if s.setting == label and (split is None or s.split == split)]
