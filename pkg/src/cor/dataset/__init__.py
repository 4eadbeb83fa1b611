"""Retrieval quintuples, manifests, statistics and the synthetic shape world."""

from cor.dataset.io import load_manifest, read_image, read_mask, save_manifest, write_image, write_mask
from cor.dataset.schema import (
    OFFICIAL_SETTINGS,
    SPLITS,
    CorSample,
    Manifest,
    Setting,
    category_lexicon,
    classify_setting,
    mentions_category,
    union_mask,
)
from cor.dataset.stats import StatsTable, format_summary, split_summary, stats
from cor.dataset.synth import SynthConfig, synth_generate

__all__ = [
    "OFFICIAL_SETTINGS",
    "SPLITS",
    "CorSample",
    "Manifest",
    "Setting",
    "StatsTable",
    "SynthConfig",
    "category_lexicon",
    "classify_setting",
    "format_summary",
    "load_manifest",
    "mentions_category",
    "read_image",
    "read_mask",
    "save_manifest",
    "split_summary",
    "stats",
    "synth_generate",
    "union_mask",
    "write_image",
    "write_mask",
]
