"""Ablation study and baseline comparison over one manifest."""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

from cor.baseline import StagePipeline, run_baseline
from cor.dataset import Manifest
from cor.errors import InputError
from cor.metrics import EvalReport, evaluate
from cor.model import CoreModel
from cor.train import TrainConfig, TrainResult, evaluate_model, prepare, train

log = logging.getLogger(__name__)

# report row name -> TrainConfig overrides
ABLATIONS = {
    "CORE": {},
    "w/o RRE": {"disable_rre": True},
    "w/o AVTI": {"disable_avti": True},
    "w/o L_cor": {"disable_lcor": True},
}


@dataclass
class Run:
    config: TrainConfig
    result: TrainResult
    report: EvalReport


def _split(manifest: Manifest, split: str):
    samples = manifest.split(split)
    if not samples:
        raise InputError(f"split {split!r} is empty")
    return samples


def ablation_study(manifest: Manifest, base: TrainConfig, variants=None, split: str = "test_base") -> dict[str, Run]:
    """Train and evaluate every variant with the same seed, data and frozen features."""
    variants = ABLATIONS if variants is None else variants
    # the frozen encoders depend only on the seed, so their outputs are shared by all variants
    encoder = CoreModel(base.model_config())
    train_set = prepare(encoder, _split(manifest, "train"))
    test_set = prepare(encoder, _split(manifest, split))
    runs = {}
    for name, overrides in variants.items():
        cfg = replace(base, **overrides)
        res = train(manifest, cfg, prepared=train_set)
        rep = evaluate_model(res.model, manifest, prepared=test_set)
        log.info("%s: dice %.4f in %.0fs", name, rep.overall[split].dice, res.seconds)
        runs[name] = Run(cfg, res, rep)
    return runs


def baseline_report(manifest: Manifest, split: str = "test_base", pipeline: StagePipeline | None = None) -> EvalReport:
    samples = _split(manifest, split)
    return evaluate(samples, [run_baseline(s, pipeline) for s in samples])
