"""Training loop, checkpoint I/O and evaluation over a manifest."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from cor.backbones import BackboneConfig
from cor.dataset import CorSample, Manifest
from cor.errors import CheckpointError, InputError
from cor.losses import LossConfig, downsample_mask, loss_total
from cor.metrics import EvalReport, evaluate
from cor.model import EXPRESSIONS, CoreModel, FrozenInputs, ModelConfig
from cor.numerics import AdamW, load_checkpoint, save_checkpoint

log = logging.getLogger(__name__)

LOG_COLUMNS = ("epoch", "l_fg", "l_bg", "l_cor", "l_wbce", "l_wiou", "l_seg", "l_total")


@dataclass
class TrainConfig:
    epochs: int = 15
    lr: float = 1e-4
    batch_size: int = 6
    seed: int = 42
    weight_decay: float = 0.01
    disable_rre: bool = False
    disable_avti: bool = False
    disable_lcor: bool = False
    expr: str = "full"
    backbone: BackboneConfig = field(default_factory=BackboneConfig)

    def __post_init__(self):
        if isinstance(self.backbone, dict):
            self.backbone = BackboneConfig(**self.backbone)
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")
        if self.expr not in EXPRESSIONS:
            raise ValueError(f"expression must be one of {sorted(EXPRESSIONS)}")

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            backbone=self.backbone,
            use_rre=not self.disable_rre,
            use_avti=not self.disable_avti,
            expr=self.expr,
            seed=self.seed,
        )

    def loss_config(self) -> LossConfig:
        return LossConfig(contrastive=not self.disable_lcor)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Prepared:
    """A sample with frozen-encoder outputs and ground truth cached for reuse across epochs."""

    sample: CorSample
    inputs: FrozenInputs
    ref_mask: np.ndarray
    gt: np.ndarray
    gt_grid: np.ndarray


def grid_mask(gt: np.ndarray, grid: int) -> np.ndarray:
    cells = downsample_mask(gt, grid)
    if not cells.any():
        # small objects: fall back to every cell the object touches
        cells = downsample_mask(gt, grid, threshold=1e-9)
    return cells


def prepare(model: CoreModel, samples: Sequence[CorSample]) -> list[Prepared]:
    grid = model.config.backbone.target_grid
    out = []
    for s in samples:
        gt = s.union_mask().astype(np.float64)
        inputs = model.frozen_inputs(s.load_target_image(), s.load_ref_image(), s.retrieval_text)
        out.append(Prepared(s, inputs, s.load_ref_mask(), gt, grid_mask(gt, grid)))
    return out


def train_step(model: CoreModel, batch: Sequence[Prepared], loss_cfg: LossConfig, opt: AdamW) -> dict[str, float]:
    opt.zero_grad()
    preds = [model.forward(p.inputs, p.ref_mask) for p in batch]
    parts = loss_total(
        [q.logits for q in preds],
        [p.gt for p in batch],
        loss_cfg,
        [q.f_tar for q in preds],
        [p.gt_grid for p in batch],
        [q.f_avti for q in preds],
    )
    parts.l_total.backward()
    opt.step()
    return parts.as_floats()


@dataclass
class TrainResult:
    model: CoreModel
    history: list[dict[str, float]]
    seconds: float


def train(manifest: Manifest, config: TrainConfig, prepared: list[Prepared] | None = None) -> TrainResult:
    model = CoreModel(config.model_config())
    if prepared is None:
        samples = manifest.split("train")
        if not samples:
            raise InputError("the train split is empty")
        prepared = prepare(model, samples)
    if not prepared:
        raise InputError("the train split is empty")
    loss_cfg = config.loss_config()
    params = [p for _, p in model.trainable_parameters()]
    opt = AdamW(params, lr=config.lr, weight_decay=config.weight_decay)
    rng = np.random.default_rng(config.seed)
    history = []
    start = time.perf_counter()
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(prepared))
        sums: dict[str, float] = {}
        n_batches = 0
        for i in range(0, len(order), config.batch_size):
            batch = [prepared[j] for j in order[i : i + config.batch_size]]
            for k, v in train_step(model, batch, loss_cfg, opt).items():
                sums[k] = sums.get(k, 0.0) + v
            n_batches += 1
        row = {"epoch": epoch, **{k: v / n_batches for k, v in sums.items()}}
        history.append(row)
        log.info("epoch %d: %s", epoch, ", ".join(f"{k}={v:.4f}" for k, v in row.items() if k != "epoch"))
    return TrainResult(model, history, time.perf_counter() - start)


def write_log(path, history: list[dict[str, float]], contrastive: bool) -> Path:
    cols = [c for c in LOG_COLUMNS if contrastive or c not in ("l_fg", "l_bg", "l_cor")]
    path = Path(path)
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(cols)
        for row in history:
            w.writerow([row["epoch"], *[repr(float(row[c])) for c in cols[1:]]])
    return path


def save_model(path, model: CoreModel, train_config: TrainConfig | None = None) -> Path:
    meta = {"model": model.config.to_dict()}
    if train_config is not None:
        meta["train"] = train_config.to_dict()
    save_checkpoint(path, model.state_dict(), meta)
    return Path(path)


def load_model(path) -> CoreModel:
    params, meta = load_checkpoint(path)
    if "model" not in meta:
        raise CheckpointError(f"{path}: no model configuration in checkpoint")
    model = CoreModel(ModelConfig(**meta["model"]))
    try:
        model.load_state_dict(params)
    except (KeyError, ValueError) as e:
        raise CheckpointError(f"{path}: {e}") from e
    return model


def predict(model: CoreModel, prepared: Sequence[Prepared]) -> list[np.ndarray]:
    return [model.predict_proba(p.inputs, p.ref_mask) for p in prepared]


def evaluate_model(model: CoreModel, manifest: Manifest, split: str | None = "test_base", prepared=None) -> EvalReport:
    if prepared is None:
        samples = manifest.samples if split is None else manifest.split(split)
        if not samples:
            raise InputError(f"split {split!r} is empty")
        prepared = prepare(model, samples)
    preds = predict(model, prepared)
    return evaluate([p.sample for p in prepared], preds, [p.gt for p in prepared])
