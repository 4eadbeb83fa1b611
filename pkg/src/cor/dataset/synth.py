"""Synthetic shape world: coloured shapes with exact masks and noun-free edit texts.

Categories are shape kinds. A sample's reference image holds one instance of
the category (plus optional clutter of other kinds); its target image holds
x positives, which carry the attribute named by the text, and y negatives,
which keep the reference's value for that attribute.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

from cor.dataset.io import save_manifest, write_image, write_mask
from cor.dataset.schema import OFFICIAL_SETTINGS, CorSample, Manifest, Setting, mentions_category

COLORS = {
    "light": (235, 225, 190),
    "dark": (45, 40, 35),
    "red": (205, 45, 45),
    "blue": (45, 75, 205),
}
SIZES = {"smaller": 6, "medium": 8, "bigger": 11}
POSITIONS = ("left", "right", "top", "bottom")
OPPOSITE = {"left": "right", "right": "left", "top": "bottom", "bottom": "top"}

# vertex count, start angle (deg), rotation that visibly changes the outline (deg)
SHAPES = {
    "circle": (0, 0.0, 0.0),
    "square": (4, 45.0, 45.0),
    "triangle": (3, -90.0, 60.0),
    "star": (10, -90.0, 36.0),
    "hexagon": (6, 0.0, 30.0),
    "cross": (12, 0.0, 45.0),
}

TEMPLATES = {
    "color": ("change the color to {v}", "make it {v}"),
    "size": ("make it {v}", "change the size to {v}"),
    "position": ("move it to the {v}", "place it on the {v}"),
    "orientation": ("rotate it", "turn it around"),
}


@dataclass
class SynthConfig:
    image_size: int = 64
    n_train: int = 300
    n_test: int = 60
    n_novel: int = 0
    base_shapes: tuple = ("circle", "square", "triangle", "star")
    novel_shapes: tuple = ("hexagon", "cross")
    settings: tuple = OFFICIAL_SETTINGS
    attributes: tuple = ("color", "size", "position", "orientation")
    ref_clutter: int = 1
    target_clutter: int = 0
    noise: int = 10
    background: tuple = (70, 150, 70)

    def __post_init__(self):
        for name in (*self.base_shapes, *self.novel_shapes):
            if name not in SHAPES:
                raise ValueError(f"unknown shape {name!r}")
        if set(self.base_shapes) & set(self.novel_shapes):
            raise ValueError("a shape cannot be both base and novel")
        if self.n_novel and not self.novel_shapes:
            raise ValueError("novel samples requested without novel shapes")
        for label in self.settings:
            Setting.parse(label)

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}


@dataclass
class Obj:
    shape: str
    color: str
    radius: int
    rotated: bool = False
    center: tuple = (0.0, 0.0)


@dataclass
class Scene:
    image: np.ndarray
    masks: list = field(default_factory=list)


def shape_outline(shape: str, cx: float, cy: float, r: float, rotated: bool) -> list[tuple[float, float]]:
    n, start, turn = SHAPES[shape]
    a0 = math.radians(start + (turn if rotated else 0.0))
    if shape == "star":
        radii = [r if k % 2 == 0 else 0.45 * r for k in range(n)]
        angles = [a0 + 2 * math.pi * k / n for k in range(n)]
    elif shape == "cross":
        arm = 0.38 * r
        base = [(arm, r), (arm, arm), (r, arm), (r, -arm), (arm, -arm), (arm, -r)]
        base += [(-x, -y) for x, y in base]
        c, s = math.cos(a0), math.sin(a0)
        return [(cx + x * c - y * s, cy + x * s + y * c) for x, y in base]
    else:
        radii = [r] * n
        angles = [a0 + 2 * math.pi * k / n for k in range(n)]
    return [(cx + rr * math.cos(a), cy + rr * math.sin(a)) for rr, a in zip(radii, angles)]


def draw_mask(obj: Obj, size: int) -> np.ndarray:
    im = Image.new("L", (size, size), 0)
    d = ImageDraw.Draw(im)
    cx, cy = obj.center
    r = obj.radius
    if obj.shape == "circle":
        d.ellipse([cx - r, cy - r, cx + r, cy + r], fill=1)
    else:
        d.polygon(shape_outline(obj.shape, cx, cy, r, obj.rotated), fill=1)
    return np.asarray(im, dtype=np.uint8)


def _region(where: str | None, size: int) -> tuple[float, float, float, float]:
    h = size / 2
    return {
        None: (0, 0, size, size),
        "left": (0, 0, h, size),
        "right": (h, 0, size, size),
        "top": (0, 0, size, h),
        "bottom": (0, h, size, size),
    }[where]


def place(objs: list[Obj], regions: list[str | None], size: int, rng: np.random.Generator, gap: float = 2.0) -> bool:
    """Assign non-overlapping centres inside each object's region; False if it did not fit."""
    placed: list[Obj] = []
    for obj, where in zip(objs, regions):
        x0, y0, x1, y1 = _region(where, size)
        r = obj.radius
        for _ in range(200):
            cx = rng.uniform(x0 + r + 1, x1 - r - 1)
            cy = rng.uniform(y0 + r + 1, y1 - r - 1)
            if all(math.hypot(cx - p.center[0], cy - p.center[1]) >= r + p.radius + gap for p in placed):
                obj.center = (round(cx, 2), round(cy, 2))
                placed.append(obj)
                break
        else:
            return False
    return True


def render(objs: list[Obj], config: SynthConfig, rng: np.random.Generator) -> Scene:
    size = config.image_size
    bg = np.asarray(config.background, dtype=np.int16)
    noise = rng.integers(-config.noise, config.noise + 1, size=(size, size, 3), dtype=np.int16)
    img = np.clip(bg + noise, 0, 255).astype(np.uint8)
    masks = []
    for obj in objs:
        m = draw_mask(obj, size)
        img[m > 0] = COLORS[obj.color]
        masks.append(m)
    # later objects never overlap earlier ones, so every mask stays exact
    return Scene(img, masks)


def _attribute_plan(shape: str, config: SynthConfig, rng: np.random.Generator):
    attrs = [a for a in config.attributes if not (a == "orientation" and SHAPES[shape][2] == 0.0)]
    attr = attrs[rng.integers(len(attrs))]
    ref = Obj(shape, list(COLORS)[rng.integers(len(COLORS))], SIZES["medium"])
    ref_where = None
    if attr == "color":
        value = [c for c in COLORS if c != ref.color][rng.integers(len(COLORS) - 1)]
        pos = Obj(shape, value, ref.radius)
        neg = Obj(shape, ref.color, ref.radius)
        pos_where = neg_where = None
    elif attr == "size":
        value = ("bigger", "smaller")[rng.integers(2)]
        ref.radius = SIZES["smaller"] if value == "bigger" else SIZES["bigger"]
        pos = Obj(shape, ref.color, SIZES[value])
        neg = Obj(shape, ref.color, ref.radius)
        pos_where = neg_where = None
    elif attr == "position":
        value = POSITIONS[rng.integers(len(POSITIONS))]
        pos = Obj(shape, ref.color, ref.radius)
        neg = Obj(shape, ref.color, ref.radius)
        pos_where, neg_where = value, OPPOSITE[value]
        ref_where = OPPOSITE[value]
    else:
        value = "rotated"
        pos = Obj(shape, ref.color, ref.radius, rotated=True)
        neg = Obj(shape, ref.color, ref.radius)
        pos_where = neg_where = None
    templates = TEMPLATES[attr]
    text = templates[rng.integers(len(templates))].format(v=value)
    return attr, value, text, ref, ref_where, pos, pos_where, neg, neg_where


def _clutter(shape: str, pool: tuple, n: int, rng: np.random.Generator) -> list[Obj]:
    others = [s for s in pool if s != shape]
    out = []
    for _ in range(n if others else 0):
        out.append(
            Obj(
                others[rng.integers(len(others))],
                list(COLORS)[rng.integers(len(COLORS))],
                SIZES["medium"],
            )
        )
    return out


def generate_sample(index: int, split: str, setting: str, shapes: tuple, config: SynthConfig, seed: int) -> dict:
    """Build one sample's arrays; deterministic in (seed, index)."""
    rng = np.random.default_rng([seed, index])
    s = Setting.parse(setting)
    size = config.image_size
    shape = shapes[rng.integers(len(shapes))]
    pool = (*config.base_shapes, *config.novel_shapes)
    while True:
        attr, value, text, ref, ref_where, pos, pos_where, neg, neg_where = _attribute_plan(shape, config, rng)
        ref_objs = [ref, *_clutter(shape, pool, config.ref_clutter, rng)]
        pos_objs = [Obj(pos.shape, pos.color, pos.radius, pos.rotated) for _ in range(s.positives)]
        neg_objs = [Obj(neg.shape, neg.color, neg.radius, neg.rotated) for _ in range(s.negatives)]
        tar_clutter = _clutter(shape, pool, config.target_clutter, rng)
        tar_objs = [*pos_objs, *neg_objs, *tar_clutter]
        tar_regions = [pos_where] * len(pos_objs) + [neg_where] * len(neg_objs) + [None] * len(tar_clutter)
        ok = place(ref_objs, [ref_where] + [None] * (len(ref_objs) - 1), size, rng)
        if ok and place(tar_objs, tar_regions, size, rng):
            break
    ref_scene = render(ref_objs, config, rng)
    tar_scene = render(tar_objs, config, rng)
    assert not mentions_category(text, shape)
    return {
        "category": shape,
        "attribute": attr,
        "value": value,
        "text": text,
        "ref_image": ref_scene.image,
        "ref_mask": ref_scene.masks[0],
        "target_image": tar_scene.image,
        "positive_masks": tar_scene.masks[: s.positives],
        "negative_masks": tar_scene.masks[s.positives : s.positives + s.negatives],
    }


def _plan(config: SynthConfig) -> list[tuple[str, str, tuple]]:
    plan = []
    for split, n, shapes in (
        ("train", config.n_train, config.base_shapes),
        ("test_base", config.n_test, config.base_shapes),
        ("test_novel", config.n_novel, config.novel_shapes),
    ):
        for i in range(n):
            plan.append((split, config.settings[i % len(config.settings)], shapes))
    return plan


def synth_generate(config: SynthConfig, seed: int, out_dir) -> Manifest:
    """Write images, masks and manifest.json under ``out_dir``; returns the manifest."""
    out = Path(out_dir)
    samples = []
    for index, (split, setting, shapes) in enumerate(_plan(config)):
        d = generate_sample(index, split, setting, shapes, config, seed)
        pid = f"{split}_{index:05d}"
        rel = lambda name: f"{split}/{pid}_{name}.png"
        write_image(out / rel("ref"), d["ref_image"])
        write_mask(out / rel("ref_mask"), d["ref_mask"])
        write_image(out / rel("target"), d["target_image"])
        pos = [rel(f"pos{k}") for k in range(len(d["positive_masks"]))]
        neg = [rel(f"neg{k}") for k in range(len(d["negative_masks"]))]
        for p, m in zip(pos, d["positive_masks"]):
            write_mask(out / p, m)
        for p, m in zip(neg, d["negative_masks"]):
            write_mask(out / p, m)
        samples.append(
            CorSample(
                pair_id=pid,
                split=split,
                category=d["category"],
                setting=setting,
                ref_image=rel("ref"),
                ref_mask=rel("ref_mask"),
                retrieval_text=d["text"],
                target_image=rel("target"),
                positive_masks=pos,
                negative_masks=neg,
                root=out.resolve(),
            )
        )
    manifest = Manifest(
        samples=samples,
        base_categories=list(config.base_shapes),
        novel_categories=list(config.novel_shapes),
        allowed_settings=list(config.settings),
    )
    manifest.validate()
    save_manifest(manifest, out / "manifest.json")
    return manifest
