"""The ten curation steps as pure functions over raw objects and validator replies.

Each step returns kept items plus a list of ``Rejection`` values; nothing is
dropped silently, so inputs always equal kept plus rejected.
"""

from __future__ import annotations

import itertools
import math
import zlib
from collections import Counter, defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from cor.dataset.schema import Setting, mentions_category
from cor.errors import InputError
from cor.pipeline.config import PipelineConfig
from cor.pipeline.embed import Embedder, cosine
from cor.pipeline.raw import RawDataset, RawObject
from cor.pipeline.render import draw_boxes, mask_out
from cor.pipeline.vlm import VlmClient, load_template, parse_binary, parse_changes

# reason codes
TOO_MANY = "TooManyInstances"
TOO_SMALL = "TooSmall"
TOO_LARGE = "TooLarge"
SPARSE = "SparseMask"
FEW_IMAGES = "FewImages"
CAPPED = "CategoryCap"
QUALITY = "QualityCheck"
NOT_SINGLE = "NotSingleInstance"
REF_SMALL = "ReferenceTooSmall"
NO_SETTING = "NoAllowedSetting"
INCOMPLETE = "IncompleteInstances"
TOO_SIMILAR = "TooSimilar"
INDISTINCT = "Indistinct"
NO_REFERENCE = "NoReference"
PAIR_REJECTED = "PairRejected"
TOO_LONG = "TooLong"
NAMES_CATEGORY = "NamesCategory"
BANNED_WORD = "BannedWord"
NOT_MATCHED = "NotMatched"
FALSE_MATCH = "FalseMatch"


@dataclass
class Rejection:
    step: int
    key: str
    reason: str
    detail: dict = field(default_factory=dict)

    def to_record(self) -> dict:
        return {"kind": "reject", **asdict(self)}


@dataclass
class StepResult:
    step: int
    kept: list
    rejections: list[Rejection]

    @property
    def inputs(self) -> int:
        return len(self.kept) + len(self.rejections)

    def summary(self) -> dict:
        return {"kind": "step", "step": self.step, "inputs": self.inputs, "kept": len(self.kept), "rejected": len(self.rejections)}


def obj_key(o: RawObject) -> str:
    return f"{o.image_id}/{o.ann_id}"


def ask_all(vlm: VlmClient, jobs: Sequence[tuple], limit: int) -> list[str]:
    """Run ``(images, prompt, meta)`` jobs, at most ``limit`` at once, replies in job order."""
    workers = max(1, min(limit, getattr(vlm, "max_concurrency", 1), len(jobs)))
    if workers == 1:
        return [vlm.ask(*job) for job in jobs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda job: vlm.ask(*job), jobs))


# ---------------------------------------------------------------- stage 1
def instance_census(objects: Sequence[RawObject]) -> Counter:
    """Raw instance count per (image, category), before any filtering."""
    return Counter((o.image_id, o.category) for o in objects)


def step1_candidate_filter(obj: RawObject, census: Counter, config: PipelineConfig) -> str | None:
    """Reason code for rejecting one object on geometry alone, or None to keep it."""
    if census[(obj.image_id, obj.category)] > config.max_instances:
        return TOO_MANY
    area = obj.area_ratio
    if area < config.min_area:
        return TOO_SMALL
    if area > config.max_area:
        return TOO_LARGE
    if obj.fill_ratio <= config.min_fill:
        return SPARSE
    return None


def cap_by_source(objects: Sequence[RawObject], cap: int) -> tuple[list[RawObject], list[RawObject]]:
    """Keep ``cap`` objects taking one per source tag in turn; each source in (image, object) order."""
    queues = defaultdict(list)
    for o in sorted(objects, key=lambda o: (o.image_id, o.ann_id)):
        queues[o.source].append(o)
    order = [queues[s] for s in sorted(queues)]
    picked = []
    for rank in range(max((len(q) for q in order), default=0)):
        for q in order:
            if rank < len(q):
                picked.append(q[rank])
    kept = {id(o) for o in picked[:cap]}
    return [o for o in objects if id(o) in kept], [o for o in objects if id(o) not in kept]


def step1_filter(objects: Sequence[RawObject], config: PipelineConfig) -> StepResult:
    census = instance_census(objects)
    rejections = []
    survivors = []
    for o in objects:
        reason = step1_candidate_filter(o, census, config)
        if reason:
            rejections.append(Rejection(1, obj_key(o), reason))
        else:
            survivors.append(o)
    images = defaultdict(set)
    for o in survivors:
        images[o.category].add(o.image_id)
    kept = []
    by_cat = defaultdict(list)
    for o in survivors:
        if len(images[o.category]) < config.min_images:
            rejections.append(Rejection(1, obj_key(o), FEW_IMAGES))
        else:
            by_cat[o.category].append(o)
    for cat in sorted(by_cat):
        keep, drop = cap_by_source(by_cat[cat], config.category_cap)
        kept += keep
        rejections += [Rejection(1, obj_key(o), CAPPED) for o in drop]
    kept.sort(key=lambda o: (o.image_id, o.ann_id))
    return StepResult(1, kept, rejections)


def group_by_image(objects: Sequence[RawObject]) -> dict[tuple[int, str], list[RawObject]]:
    groups = defaultdict(list)
    for o in objects:
        groups[(o.image_id, o.category)].append(o)
    return dict(sorted(groups.items()))


def step2_quality_check(image: np.ndarray, objs: Sequence[RawObject], vlm: VlmClient) -> bool:
    """Ask whether the boxed instances of one category in one image are clean."""
    prompt = vlm.render(load_template(2), cat_name=objs[0].category, ins_len=len(objs))
    meta = {"step": 2, "key": f"{objs[0].image_id}:{objs[0].category}"}
    return parse_binary(vlm.ask([draw_boxes(image, red=[o.bbox for o in objs])], prompt, meta))


def step2_filter(objects: Sequence[RawObject], raw: RawDataset, vlm: VlmClient, config: PipelineConfig, images) -> StepResult:
    groups = list(group_by_image(objects).items())
    template = load_template(2)
    jobs = []
    for (image_id, cat), objs in groups:
        img = draw_boxes(images(image_id), red=[o.bbox for o in objs])
        jobs.append(([img], vlm.render(template, cat_name=cat, ins_len=len(objs)), {"step": 2, "key": f"{image_id}:{cat}"}))
    replies = ask_all(vlm, jobs, config.max_concurrency)
    kept, rejections = [], []
    for (_, objs), reply in zip(groups, replies):
        if parse_binary(reply):
            kept += objs
        else:
            rejections += [Rejection(2, obj_key(o), QUALITY) for o in objs]
    kept.sort(key=lambda o: (o.image_id, o.ann_id))
    return StepResult(2, kept, rejections)


# ---------------------------------------------------------------- stage 2
def half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def step3_category_split(categories: Sequence[str], seed: int, novel_fraction: float = 78 / 408, minimum: int = 5):
    """Seeded base/novel partition of category names; both lists come back sorted."""
    names = sorted(set(categories))
    if len(names) < minimum:
        raise InputError(f"need at least {minimum} categories to split, got {len(names)}")
    n_novel = half_up(len(names) * novel_fraction)
    perm = np.random.default_rng([seed, 3]).permutation(len(names))
    novel = sorted(names[i] for i in perm[:n_novel])
    base = sorted(names[i] for i in perm[n_novel:])
    return base, novel


def step4_train_test_split(image_ids: Sequence[int], seed: int, train_fraction: float = 0.75):
    """Seeded partition of base-category images into train and test."""
    ids = sorted(set(image_ids))
    n_train = half_up(len(ids) * train_fraction)
    perm = np.random.default_rng([seed, 4]).permutation(len(ids))
    train = sorted(ids[i] for i in perm[:n_train])
    test = sorted(ids[i] for i in perm[n_train:])
    return train, test


@dataclass
class SplitPlan:
    base: list[str]
    novel: list[str]
    train_images: list[int]
    test_images: list[int]

    def split_of(self, image_id: int, category: str) -> str:
        if category in self.novel:
            return "test_novel"
        return "train" if image_id in set(self.train_images) else "test_base"


def plan_splits(objects: Sequence[RawObject], raw_objects: Sequence[RawObject], config: PipelineConfig) -> SplitPlan:
    """Categories split over the filtered survivors; images over every raw image holding a base category.

    Splitting images over the unfiltered pool keeps an image's split fixed when
    a threshold change removes other images.
    """
    base, novel = step3_category_split([o.category for o in objects], config.seed, config.novel_fraction, config.min_categories)
    base_set = set(base)
    train, test = step4_train_test_split([o.image_id for o in raw_objects if o.category in base_set], config.seed, config.train_fraction)
    return SplitPlan(base, novel, train, test)


def step5_reference_select(objects: Sequence[RawObject], census: Counter, config: PipelineConfig) -> StepResult:
    kept, rejections = [], []
    for o in objects:
        if census[(o.image_id, o.category)] != 1:
            rejections.append(Rejection(5, obj_key(o), NOT_SINGLE))
        elif o.area_ratio < config.ref_min_area:
            rejections.append(Rejection(5, obj_key(o), REF_SMALL))
        else:
            kept.append(o)
    return StepResult(5, kept, rejections)


# ---------------------------------------------------------------- stage 3
@dataclass
class Target:
    image_id: int
    category: str
    positives: list[int]  # annotation ids
    negatives: list[int]

    @property
    def setting(self) -> str:
        return Setting(len(self.positives), len(self.negatives)).label

    @property
    def key(self) -> str:
        pos = "+".join(map(str, self.positives))
        neg = "+".join(map(str, self.negatives)) or "-"
        return f"{self.image_id}:{pos}:{neg}"


@dataclass
class Pair:
    target: Target
    reference: int  # annotation id

    @property
    def key(self) -> str:
        return f"{self.target.key}<{self.reference}"


@dataclass
class Triplet:
    pair: Pair
    text: str
    index: int

    @property
    def key(self) -> str:
        return f"{self.pair.key}#{self.index}"


def enumerate_targets(objs: Sequence[RawObject], allowed: Sequence[str]) -> list[Target]:
    """Every (positives, negatives) split of one image's same-category objects with an allowed setting."""
    ids = [o.ann_id for o in objs]
    out = []
    for label in allowed:
        s = Setting.parse(label)
        if s.positives + s.negatives != len(ids):
            continue
        for pos in itertools.combinations(ids, s.positives):
            neg = [i for i in ids if i not in pos]
            out.append(Target(objs[0].image_id, objs[0].category, list(pos), neg))
    return out


def step6_target_select(
    objects: Sequence[RawObject],
    embedder: Embedder,
    vlm: VlmClient,
    config: PipelineConfig,
    images: Callable[[int], np.ndarray],
    census: Counter | None = None,
) -> StepResult:
    """Enumerate target configurations per image and category.

    With a raw ``census``, groups that lost an instance to an earlier step are
    skipped: the missing object would be an unlabelled same-category distractor.
    """
    by_id = {o.ann_id: o for o in objects}
    embeddings: dict[int, np.ndarray] = {}

    def emb(ann: int) -> np.ndarray:
        if ann not in embeddings:
            o = by_id[ann]
            embeddings[ann] = embedder.embed(images(o.image_id), o.mask)
        return embeddings[ann]

    kept, rejections, pending = [], [], []
    for (image_id, cat), objs in group_by_image(objects).items():
        if census is not None and census[(image_id, cat)] != len(objs):
            rejections.append(Rejection(6, f"{image_id}:{cat}", INCOMPLETE, {"instances": census[(image_id, cat)], "kept": len(objs)}))
            continue
        targets = enumerate_targets(objs, config.allowed_settings)
        if not targets:
            rejections.append(Rejection(6, f"{image_id}:{cat}", NO_SETTING, {"instances": len(objs)}))
            continue
        for t in targets:
            if not t.negatives:
                kept.append(t)
                continue
            sim = max(cosine(emb(p), emb(n)) for p in t.positives for n in t.negatives)
            if sim > config.similarity_cutoff:
                rejections.append(Rejection(6, t.key, TOO_SIMILAR, {"similarity": round(sim, 6)}))
            else:
                pending.append(t)
    template = load_template(6)
    jobs = []
    for t in pending:
        img = draw_boxes(
            images(t.image_id), red=[by_id[i].bbox for i in t.positives], blue=[by_id[i].bbox for i in t.negatives]
        )
        jobs.append(([img], vlm.render(template, cat_name=t.category), {"step": 6, "key": t.key}))
    for t, reply in zip(pending, ask_all(vlm, jobs, config.max_concurrency)):
        if parse_binary(reply):
            kept.append(t)
        else:
            rejections.append(Rejection(6, t.key, INDISTINCT))
    kept.sort(key=lambda t: (t.image_id, t.category, len(t.negatives), t.positives))
    return StepResult(6, kept, rejections)


def _stable_rng(seed: int, step: int, key: str) -> np.random.Generator:
    return np.random.default_rng([seed, step, zlib.crc32(key.encode())])


def candidate_references(target: Target, references: Sequence[RawObject], split_of, config: PipelineConfig) -> list[RawObject]:
    """At most ``max_references`` same-split, same-category references, one per other image."""
    split = split_of(target.image_id, target.category)
    seen, pool = set(), []
    for r in references:
        if r.category != target.category or r.image_id == target.image_id or r.image_id in seen:
            continue
        if split_of(r.image_id, r.category) != split:
            continue
        seen.add(r.image_id)
        pool.append(r)
    if len(pool) > config.max_references:
        idx = _stable_rng(config.seed, 7, target.key).choice(len(pool), config.max_references, replace=False)
        pool = [pool[i] for i in sorted(idx)]
    return pool


def _pair_images(pair: Pair, by_id: dict, images) -> list[np.ndarray]:
    ref = by_id[pair.reference]
    return [
        draw_boxes(images(ref.image_id), red=[ref.bbox]),
        draw_boxes(images(pair.target.image_id), red=[by_id[i].bbox for i in pair.target.positives]),
    ]


def step7_pair_construct(
    targets: Sequence[Target],
    references: Sequence[RawObject],
    by_id: dict,
    split_of,
    vlm: VlmClient,
    config: PipelineConfig,
    images,
) -> StepResult:
    rejections, pairs = [], []
    for t in targets:
        refs = candidate_references(t, references, split_of, config)
        if not refs:
            rejections.append(Rejection(7, t.key, NO_REFERENCE))
        pairs += [Pair(t, r.ann_id) for r in refs]
    template = load_template(7)
    jobs = [
        (_pair_images(p, by_id, images), vlm.render(template, cat_name=p.target.category), {"step": 7, "key": p.key})
        for p in pairs
    ]
    kept = []
    for p, reply in zip(pairs, ask_all(vlm, jobs, config.max_concurrency)):
        if parse_binary(reply):
            kept.append(p)
        else:
            rejections.append(Rejection(7, p.key, PAIR_REJECTED))
    return StepResult(7, kept, rejections)


# ---------------------------------------------------------------- stage 4
def text_problem(text: str, category: str, config: PipelineConfig) -> str | None:
    words = text.split()
    if not words or len(words) > config.max_text_words:
        return TOO_LONG
    if mentions_category(text, category):
        return NAMES_CATEGORY
    lower = {w.strip(".,;:!?\"'").lower() for w in words}
    if lower & set(config.banned_words):
        return BANNED_WORD
    return None


def step8_text_generate(pairs: Sequence[Pair], by_id: dict, vlm: VlmClient, config: PipelineConfig, images) -> StepResult:
    template = load_template(8)
    jobs = [
        (_pair_images(p, by_id, images), vlm.render(template, cat_name=p.target.category), {"step": 8, "key": p.key})
        for p in pairs
    ]
    kept, rejections = [], []
    for p, reply in zip(pairs, ask_all(vlm, jobs, config.max_concurrency)):
        for i, text in enumerate(parse_changes(reply)):
            t = Triplet(p, text, i)
            reason = text_problem(text, p.target.category, config)
            if reason:
                rejections.append(Rejection(8, t.key, reason, {"text": text}))
            else:
                kept.append(t)
    return StepResult(8, kept, rejections)


def step9_positive_verify(triplets: Sequence[Triplet], by_id: dict, vlm: VlmClient, config: PipelineConfig, images) -> StepResult:
    template = load_template(9)
    jobs = [
        (
            _pair_images(t.pair, by_id, images),
            vlm.render(template, target_cat=t.pair.target.category, retrieval_text=t.text),
            {"step": 9, "key": t.key},
        )
        for t in triplets
    ]
    kept, rejections = [], []
    for t, reply in zip(triplets, ask_all(vlm, jobs, config.max_concurrency)):
        if parse_binary(reply):
            kept.append(t)
        else:
            rejections.append(Rejection(9, t.key, NOT_MATCHED))
    return StepResult(9, kept, rejections)


def step10_false_match_reject(triplets: Sequence[Triplet], by_id: dict, vlm: VlmClient, config: PipelineConfig, images) -> StepResult:
    template = load_template(10)
    jobs = []
    for t in triplets:
        ref = by_id[t.pair.reference]
        target = t.pair.target
        hidden = mask_out(images(target.image_id), [by_id[i].mask for i in target.positives])
        jobs.append(
            (
                [draw_boxes(images(ref.image_id), red=[ref.bbox]), hidden],
                vlm.render(template, target_cat=target.category, retrieval_text=t.text),
                {"step": 10, "key": t.key},
            )
        )
    kept, rejections = [], []
    for t, reply in zip(triplets, ask_all(vlm, jobs, config.max_concurrency)):
        if parse_binary(reply):
            kept.append(t)
        else:
            rejections.append(Rejection(10, t.key, FALSE_MATCH))
    return StepResult(10, kept, rejections)
