"""Mask metrics and the split/setting-stratified evaluation report."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from cor.errors import DimensionError, InputError

THRESHOLD = 0.5
N_THRESHOLDS = 256
SETTINGS = ("1p0n", "1p1n", "1p2n", "2p0n", "2p1n", "3p0n")
SPLITS = ("train", "test_base", "test_novel")
METRICS = ("dice", "iou", "m_dice", "m_iou", "mae")


def _pair(pred, gt) -> tuple[np.ndarray, np.ndarray]:
    p, g = np.asarray(pred), np.asarray(gt)
    if p.shape != g.shape:
        raise DimensionError(f"prediction {p.shape} vs ground truth {g.shape}")
    return p, g.astype(bool)


def _counts(p: np.ndarray, g: np.ndarray) -> tuple[int, int, int]:
    return int(np.count_nonzero(p & g)), int(np.count_nonzero(p)), int(np.count_nonzero(g))


def dice(pred_bin, gt) -> float:
    p, g = _pair(pred_bin, gt)
    inter, np_, ng = _counts(p.astype(bool), g)
    if np_ + ng == 0:
        return 1.0
    return 2.0 * inter / (np_ + ng)


def iou(pred_bin, gt) -> float:
    p, g = _pair(pred_bin, gt)
    inter, np_, ng = _counts(p.astype(bool), g)
    union = np_ + ng - inter
    if union == 0:
        return 1.0
    return inter / union


def mae(pred_soft, gt) -> float:
    p, g = _pair(pred_soft, gt)
    return float(np.mean(np.abs(p.astype(np.float64) - g)))


def thresholds(n: int = N_THRESHOLDS) -> np.ndarray:
    """Bin centres (i + 0.5) / n, so 0 and 1 are never used."""
    return (np.arange(n) + 0.5) / n


def _threshold_counts(pred_soft, gt, n: int):
    p, g = _pair(pred_soft, gt)
    p = p.astype(np.float64).ravel()
    g = g.ravel()
    t = thresholds(n)
    # a pixel with value v is positive for every threshold <= v
    n_pos = np.searchsorted(t, p, side="right")
    per_t_pred = np.bincount(n_pos, minlength=n + 1)[::-1].cumsum()[::-1][1:]
    per_t_inter = np.bincount(n_pos[g], minlength=n + 1)[::-1].cumsum()[::-1][1:]
    return per_t_inter.astype(np.float64), per_t_pred.astype(np.float64), float(g.sum())


def m_dice(pred_soft, gt, n: int = N_THRESHOLDS) -> float:
    inter, pred, ng = _threshold_counts(pred_soft, gt, n)
    total = pred + ng
    vals = np.where(total == 0, 1.0, 2.0 * inter / np.maximum(total, 1))
    return float(vals.mean())


def m_iou(pred_soft, gt, n: int = N_THRESHOLDS) -> float:
    inter, pred, ng = _threshold_counts(pred_soft, gt, n)
    union = pred + ng - inter
    vals = np.where(union == 0, 1.0, inter / np.maximum(union, 1))
    return float(vals.mean())


@dataclass
class MetricSet:
    dice: float
    iou: float
    mae: float
    m_dice: float
    m_iou: float

    @classmethod
    def of(cls, pred_soft, gt) -> "MetricSet":
        p = np.asarray(pred_soft, dtype=np.float64)
        b = p >= THRESHOLD
        return cls(dice(b, gt), iou(b, gt), mae(p, gt), m_dice(p, gt), m_iou(p, gt))

    @classmethod
    def mean(cls, items: Sequence["MetricSet"]) -> "MetricSet":
        if not items:
            raise InputError("cannot average an empty set of metrics")
        return cls(**{k: float(np.mean([getattr(m, k) for m in items])) for k in METRICS})

    def as_dict(self) -> dict[str, float]:
        return asdict(self)


@dataclass
class EvalReport:
    overall: dict[str, MetricSet] = field(default_factory=dict)
    by_setting: dict[str, dict[str, MetricSet]] = field(default_factory=dict)
    counts: dict[str, int] = field(default_factory=dict)
    setting_counts: dict[str, dict[str, int]] = field(default_factory=dict)
    per_sample: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "overall": {s: m.as_dict() for s, m in self.overall.items()},
            "by_setting": {s: {k: m.as_dict() for k, m in d.items()} for s, d in self.by_setting.items()},
            "counts": dict(self.counts),
            "setting_counts": {s: dict(d) for s, d in self.setting_counts.items()},
        }


def _ordered(keys: Iterable[str], canon: Sequence[str]) -> list[str]:
    keys = set(keys)
    return [k for k in canon if k in keys] + sorted(keys - set(canon))


def evaluate(samples: Sequence, predictions: Sequence, gts: Sequence | None = None) -> EvalReport:
    """Macro-average per-sample metrics within each split and each (split, setting).

    ``samples`` need ``pair_id``, ``split`` and ``setting`` attributes; ground
    truth comes from ``gts`` or else each sample's ``union_mask()``.
    """
    if len(samples) != len(predictions) or (gts is not None and len(gts) != len(samples)):
        raise InputError(f"{len(samples)} samples but {len(predictions)} predictions")
    per_split: dict[str, list[MetricSet]] = {}
    per_setting: dict[str, dict[str, list[MetricSet]]] = {}
    rows = []
    for i, (s, pred) in enumerate(zip(samples, predictions)):
        gt = gts[i] if gts is not None else s.union_mask()
        m = MetricSet.of(pred, gt)
        per_split.setdefault(s.split, []).append(m)
        per_setting.setdefault(s.split, {}).setdefault(str(s.setting), []).append(m)
        rows.append({"pair_id": s.pair_id, "split": s.split, "setting": str(s.setting), **m.as_dict()})
    report = EvalReport(per_sample=rows)
    for split in _ordered(per_split, SPLITS):
        report.overall[split] = MetricSet.mean(per_split[split])
        report.counts[split] = len(per_split[split])
        d = per_setting[split]
        report.by_setting[split] = {k: MetricSet.mean(d[k]) for k in _ordered(d, SETTINGS)}
        report.setting_counts[split] = {k: len(d[k]) for k in _ordered(d, SETTINGS)}
    return report


SPLIT_TITLES = {"train": "Train", "test_base": "Test-Base", "test_novel": "Test-Novel"}
METRIC_TITLES = {"dice": "Dice", "iou": "IoU", "m_dice": "mDice", "m_iou": "mIoU", "mae": "MAE"}


def _table(header: list[str], rows: list[list[str]]) -> str:
    widths = [max(len(r[i]) for r in [header, *rows]) for i in range(len(header))]
    fmt = lambda r: "  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(r, widths)))
    line = "-" * len(fmt(header))
    return "\n".join([fmt(header), line, *[fmt(r) for r in rows]])


def format_overall(rows: dict[str, EvalReport], split: str) -> str:
    """One row per method for one split, metric columns, as in the overall comparison table."""
    header = ["Method", *[METRIC_TITLES[m] for m in METRICS]]
    body = []
    for name, rep in rows.items():
        if split in rep.overall:
            ms = rep.overall[split]
            body.append([name, *[f"{getattr(ms, m):.4f}" for m in METRICS]])
    return f"[{SPLIT_TITLES.get(split, split)}]\n" + _table(header, body)


def format_by_setting(rows: dict[str, EvalReport], split: str, metrics: Sequence[str] = ("dice", "iou")) -> str:
    """One row per method, one column per (setting, metric), as in the per-setting table."""
    settings = _ordered({k for r in rows.values() for k in r.by_setting.get(split, {})}, SETTINGS)
    header = ["Method", *[f"{s} {METRIC_TITLES[m]}" for s in settings for m in metrics]]
    body = []
    for name, rep in rows.items():
        d = rep.by_setting.get(split, {})
        cells = [f"{getattr(d[s], m):.4f}" if s in d else "-" for s in settings for m in metrics]
        body.append([name, *cells])
    counts = [
        "n",
        *[str(next((r.setting_counts[split].get(s, 0) for r in rows.values() if split in r.setting_counts), 0)) for s in settings for _ in metrics],
    ]
    return f"[{SPLIT_TITLES.get(split, split)} by setting]\n" + _table(header, [*body, counts])


def format_report(rows: dict[str, EvalReport] | EvalReport, name: str = "CORE") -> str:
    if isinstance(rows, EvalReport):
        rows = {name: rows}
    splits = _ordered({s for r in rows.values() for s in r.overall}, SPLITS)
    parts = [format_overall(rows, s) for s in splits]
    parts += [format_by_setting(rows, s) for s in splits]
    return "\n\n".join(parts) + "\n"


def write_report(rows: dict[str, EvalReport] | EvalReport, out_dir: str | Path, stem: str = "report") -> tuple[Path, Path]:
    """Write the text tables and a JSON file keyed by method, split and setting."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if isinstance(rows, EvalReport):
        rows = {"CORE": rows}
    txt = out / f"{stem}.txt"
    js = out / f"{stem}.json"
    txt.write_text(format_report(rows))
    js.write_text(json.dumps({k: r.to_dict() for k, r in rows.items()}, indent=2, sort_keys=True) + "\n")
    return txt, js


def report_from_dict(d: dict) -> EvalReport:
    return EvalReport(
        overall={s: MetricSet(**m) for s, m in d["overall"].items()},
        by_setting={s: {k: MetricSet(**m) for k, m in v.items()} for s, v in d["by_setting"].items()},
        counts=dict(d["counts"]),
        setting_counts={s: dict(v) for s, v in d["setting_counts"].items()},
    )
