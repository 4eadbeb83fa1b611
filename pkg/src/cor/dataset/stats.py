"""Dataset statistics in the per-split table layout, and per-category histograms."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from cor.dataset.schema import SPLITS, Manifest

COLUMNS = ("all", *SPLITS)
COLUMN_TITLES = {"all": "All", "train": "Train", "test_base": "Test-Base", "test_novel": "Test-Novel"}
ROWS = (
    ("total_pairs", "total pairs"),
    ("total_categories", "total categories"),
    ("target_images", "target images I_tar"),
    ("target_objects", "target objects O_tar"),
    ("reference_images", "reference images I_ref"),
    ("reference_objects", "reference objects O_ref"),
    ("all_images", "all images I_all"),
    ("all_objects", "all objects O_all"),
)


@dataclass
class StatsTable:
    values: dict[str, dict[str, int]] = field(default_factory=dict)  # row -> column -> count

    def get(self, row: str, column: str = "all") -> int:
        return self.values[row][column]

    def to_text(self) -> str:
        header = ["Metric", *[COLUMN_TITLES[c] for c in COLUMNS]]
        rows = [[title, *[f"{self.values[key][c]:,}" for c in COLUMNS]] for key, title in ROWS]
        widths = [max(len(r[i]) for r in [header, *rows]) for i in range(len(header))]
        fmt = lambda r: "  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(r, widths)))
        return "\n".join([fmt(header), "-" * len(fmt(header)), *map(fmt, rows)]) + "\n"

    def to_json(self) -> str:
        return json.dumps(self.values, indent=1) + "\n"


def _column(samples) -> dict[str, int]:
    # images and objects are identified by their file paths; positives are the target objects
    tar_img = {s.target_image for s in samples}
    ref_img = {s.ref_image for s in samples}
    tar_obj = {p for s in samples for p in s.positive_masks}
    neg_obj = {p for s in samples for p in s.negative_masks}
    ref_obj = {s.ref_mask for s in samples}
    return {
        "total_pairs": len(samples),
        "total_categories": len({s.category for s in samples}),
        "target_images": len(tar_img),
        "target_objects": len(tar_obj),
        "reference_images": len(ref_img),
        "reference_objects": len(ref_obj),
        "all_images": len(tar_img | ref_img),
        "all_objects": len(tar_obj | neg_obj | ref_obj),
    }


def stats(manifest: Manifest) -> StatsTable:
    cols = {"all": _column(manifest.samples)}
    for split in SPLITS:
        cols[split] = _column(manifest.split(split))
    return StatsTable({key: {c: cols[c][key] for c in COLUMNS} for key, _ in ROWS})


def split_summary(manifest: Manifest) -> dict[str, dict[str, int]]:
    """Pair counts per category, per split; categories sorted by name."""
    out: dict[str, dict[str, int]] = {}
    for split in SPLITS:
        hist: dict[str, int] = {}
        for s in manifest.split(split):
            hist[s.category] = hist.get(s.category, 0) + 1
        out[split] = dict(sorted(hist.items()))
    return out


def format_summary(summary: dict[str, dict[str, int]]) -> str:
    lines = []
    for split, hist in summary.items():
        lines.append(f"[{COLUMN_TITLES[split]}] {sum(hist.values())} pairs, {len(hist)} categories")
        lines += [f"  {cat:<24} {n:>8}" for cat, n in hist.items()]
    return "\n".join(lines) + "\n"
