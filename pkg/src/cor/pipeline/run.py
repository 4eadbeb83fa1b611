"""End-to-end curation: raw annotations in, manifest plus audit log out.

Work is grouped into four stages. After each stage a snapshot of its
survivors is written under ``stages/`` and a ``stage`` record is appended to
``audit.jsonl``; ``resume=True`` restarts after the last recorded stage.
"""

from __future__ import annotations

import json
import logging
import threading
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from cor.dataset.io import save_manifest, write_image, write_mask
from cor.dataset.schema import CorSample, Manifest
from cor.errors import InputError
from cor.pipeline.config import PipelineConfig
from cor.pipeline.embed import ColorHistogramEmbedder, Embedder
from cor.pipeline.raw import RawDataset
from cor.pipeline.steps import (
    Pair,
    SplitPlan,
    StepResult,
    Target,
    Triplet,
    instance_census,
    plan_splits,
    step1_filter,
    step2_filter,
    step5_reference_select,
    step6_target_select,
    step7_pair_construct,
    step8_text_generate,
    step9_positive_verify,
    step10_false_match_reject,
)
from cor.pipeline.vlm import VlmClient

log = logging.getLogger(__name__)

STAGES = ("candidates", "splits", "pairs", "triplets")


class AuditLog:
    """Append-only JSON-lines log; one lock, one writer."""

    def __init__(self, path: Path | None, fresh: bool = True):
        self.path = path
        self.records: list[dict] = []
        self._lock = threading.Lock()
        if path is not None:
            path.parent.mkdir(parents=True, exist_ok=True)
            if fresh or not path.exists():
                path.write_text("")
            else:
                self.records = [json.loads(line) for line in path.read_text().splitlines() if line.strip()]

    def write(self, record: dict) -> None:
        with self._lock:
            self.records.append(record)
            if self.path is not None:
                with open(self.path, "a", encoding="utf-8") as f:
                    f.write(json.dumps(record, sort_keys=True) + "\n")

    def step(self, result: StepResult) -> None:
        for r in result.rejections:
            self.write(r.to_record())
        self.write(result.summary())

    def completed_stages(self) -> list[str]:
        return [r["stage"] for r in self.records if r.get("kind") == "stage"]

    def rejections(self, step: int | None = None) -> list[dict]:
        return [r for r in self.records if r.get("kind") == "reject" and (step is None or r["step"] == step)]

    def summaries(self) -> dict[int, dict]:
        return {r["step"]: r for r in self.records if r.get("kind") == "step"}


@dataclass
class PipelineResult:
    manifest: Manifest
    audit: AuditLog
    out_dir: Path


def _target_dict(t: Target) -> dict:
    return {"image_id": t.image_id, "category": t.category, "positives": t.positives, "negatives": t.negatives}


def _pair_dict(p: Pair) -> dict:
    return {"target": _target_dict(p.target), "reference": p.reference}


def _pair_from(d: dict) -> Pair:
    return Pair(Target(**d["target"]), d["reference"])


class _Images:
    """Lazy, thread-safe cache of decoded raw images."""

    def __init__(self, raw: RawDataset):
        self.raw = raw
        self.cache: dict[int, np.ndarray] = {}
        self.lock = threading.Lock()

    def __call__(self, image_id: int) -> np.ndarray:
        with self.lock:
            if image_id not in self.cache:
                self.cache[image_id] = self.raw.images[image_id].load()
            return self.cache[image_id]


def run_pipeline(
    raw: RawDataset,
    config: PipelineConfig,
    vlm: VlmClient,
    out_dir,
    embedder: Embedder | None = None,
    resume: bool = False,
) -> PipelineResult:
    out = Path(out_dir)
    embedder = embedder or ColorHistogramEmbedder()
    audit = AuditLog(out / "audit.jsonl", fresh=not resume)
    done = audit.completed_stages() if resume else []
    if list(done) != list(STAGES[: len(done)]):
        raise InputError(f"audit log lists stages out of order: {done}")
    snapshots = out / "stages"
    images = _Images(raw)
    by_id = {o.ann_id: o for o in raw.objects}
    census = instance_census(raw.objects)

    def save(stage: str, payload: dict) -> None:
        snapshots.mkdir(parents=True, exist_ok=True)
        path = snapshots / f"{stage}.json"
        path.write_text(json.dumps({"config": config.to_dict(), **payload}, sort_keys=True, indent=1) + "\n")
        audit.write({"kind": "stage", "stage": stage, "snapshot": str(path.relative_to(out))})

    def load(stage: str) -> dict:
        doc = json.loads((snapshots / f"{stage}.json").read_text())
        if doc.pop("config") != config.to_dict():
            raise InputError(f"snapshot {stage} was made with a different configuration")
        log.info("resuming past stage %s", stage)
        return doc

    if resume and not done:
        audit = AuditLog(out / "audit.jsonl", fresh=True)

    # stage 1: candidate filtering and quality check (steps 1-2)
    if "candidates" in done:
        survivors = [by_id[i] for i in load("candidates")["objects"]]
    else:
        r1 = step1_filter(raw.objects, config)
        audit.step(r1)
        r2 = step2_filter(r1.kept, raw, vlm, config, images)
        audit.step(r2)
        survivors = r2.kept
        save("candidates", {"objects": [o.ann_id for o in survivors]})

    # stage 2: category split, image split, reference pool (steps 3-5)
    if "splits" in done:
        doc = load("splits")
        plan = SplitPlan(doc["base"], doc["novel"], doc["train_images"], doc["test_images"])
        references = [by_id[i] for i in doc["references"]]
    else:
        # nothing left to split when every candidate was rejected
        plan = plan_splits(survivors, raw.objects, config) if survivors else SplitPlan([], [], [], [])
        cats = len(plan.base) + len(plan.novel)
        audit.write({"kind": "split", "step": 3, "categories": cats, "base": len(plan.base), "novel": len(plan.novel)})
        audit.write(
            {"kind": "split", "step": 4, "train_images": len(plan.train_images), "test_images": len(plan.test_images)}
        )
        r5 = step5_reference_select(survivors, census, config)
        audit.step(r5)
        references = r5.kept
        save(
            "splits",
            {
                "base": plan.base,
                "novel": plan.novel,
                "train_images": plan.train_images,
                "test_images": plan.test_images,
                "references": [o.ann_id for o in references],
            },
        )

    # stage 3: targets and pairs (steps 6-7)
    if "pairs" in done:
        pairs = [_pair_from(d) for d in load("pairs")["pairs"]]
    else:
        r6 = step6_target_select(survivors, embedder, vlm, config, images, census)
        audit.step(r6)
        r7 = step7_pair_construct(r6.kept, references, by_id, plan.split_of, vlm, config, images)
        audit.step(r7)
        pairs = r7.kept
        save("pairs", {"pairs": [_pair_dict(p) for p in pairs]})

    # stage 4: texts and verification (steps 8-10)
    if "triplets" in done:
        triplets = [Triplet(_pair_from(d["pair"]), d["text"], d["index"]) for d in load("triplets")["triplets"]]
    else:
        r8 = step8_text_generate(pairs, by_id, vlm, config, images)
        audit.step(r8)
        r9 = step9_positive_verify(r8.kept, by_id, vlm, config, images)
        audit.step(r9)
        r10 = step10_false_match_reject(r9.kept, by_id, vlm, config, images)
        audit.step(r10)
        triplets = r10.kept
        save("triplets", {"triplets": [{"pair": _pair_dict(t.pair), "text": t.text, "index": t.index} for t in triplets]})

    manifest = write_outputs(triplets, plan, raw, config, out, images)
    return PipelineResult(manifest, audit, out)


def write_outputs(triplets, plan: SplitPlan, raw: RawDataset, config: PipelineConfig, out: Path, images) -> Manifest:
    """Write the images and masks the triplets use, then the manifest."""
    by_id = {o.ann_id: o for o in raw.objects}
    written: set[str] = set()

    def image_file(image_id: int) -> str:
        rel = f"images/{image_id}.png"
        if rel not in written:
            write_image(out / rel, images(image_id))
            written.add(rel)
        return rel

    def mask_file(ann: int) -> str:
        rel = f"masks/{ann}.png"
        if rel not in written:
            write_mask(out / rel, by_id[ann].mask)
            written.add(rel)
        return rel

    samples = []
    for t in triplets:
        target = t.pair.target
        ref = by_id[t.pair.reference]
        samples.append(
            CorSample(
                pair_id=t.key,
                split=plan.split_of(target.image_id, target.category),
                category=target.category,
                setting=target.setting,
                ref_image=image_file(ref.image_id),
                ref_mask=mask_file(ref.ann_id),
                retrieval_text=t.text,
                target_image=image_file(target.image_id),
                positive_masks=[mask_file(i) for i in target.positives],
                negative_masks=[mask_file(i) for i in target.negatives],
                root=out.resolve(),
                provenance={
                    "steps_passed": list(range(1, 11)),
                    "target_image_id": target.image_id,
                    "positive_ann_ids": list(target.positives),
                    "negative_ann_ids": list(target.negatives),
                    "reference_ann_id": ref.ann_id,
                    "reference_image_id": ref.image_id,
                    "text_index": t.index,
                    "source": raw.images[target.image_id].source,
                },
            )
        )
    manifest = Manifest(samples, list(plan.base), list(plan.novel), allowed_settings=list(config.allowed_settings))
    manifest.validate()
    save_manifest(manifest, out / "manifest.json")
    return manifest
