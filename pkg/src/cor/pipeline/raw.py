"""Raw instance annotations in a COCO/LVIS-style JSON layout."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

from cor.dataset.io import read_image, read_mask
from cor.errors import InputError, ParseError


@dataclass
class RawImage:
    image_id: int
    file_name: str
    width: int
    height: int
    source: str
    root: Path | None = None

    @property
    def path(self) -> Path:
        p = Path(self.file_name)
        return p if p.is_absolute() or self.root is None else self.root / p

    def load(self) -> np.ndarray:
        return read_image(self.path)


@dataclass
class RawObject:
    ann_id: int
    image_id: int
    category: str
    bbox: tuple  # x, y, w, h in pixels
    mask: np.ndarray  # bool, image-sized
    width: int
    height: int
    source: str

    def __post_init__(self):
        x, y, w, h = self.bbox
        if w <= 0 or h <= 0 or x < 0 or y < 0 or x + w > self.width or y + h > self.height:
            raise InputError(f"object {self.ann_id}: box {self.bbox} outside a {self.width}x{self.height} image")
        if self.mask.shape != (self.height, self.width):
            raise InputError(f"object {self.ann_id}: mask shape {self.mask.shape}")
        inside = np.zeros_like(self.mask)
        inside[y : y + h, x : x + w] = True
        if not self.mask.any() or (self.mask & ~inside).any():
            raise InputError(f"object {self.ann_id}: mask is empty or leaves its box")

    @property
    def area_ratio(self) -> float:
        return float(self.mask.sum()) / (self.width * self.height)

    @property
    def fill_ratio(self) -> float:
        return float(self.mask.sum()) / (self.bbox[2] * self.bbox[3])


def rasterize(polygons: list, width: int, height: int) -> np.ndarray:
    im = Image.new("L", (width, height), 0)
    d = ImageDraw.Draw(im)
    for poly in polygons:
        pts = list(zip(poly[0::2], poly[1::2]))
        d.polygon(pts, fill=1)
    return np.asarray(im, dtype=bool)


def box_of(mask: np.ndarray) -> tuple:
    ys, xs = np.nonzero(mask)
    if len(xs) == 0:
        raise InputError("empty mask has no box")
    return (int(xs.min()), int(ys.min()), int(xs.max() - xs.min() + 1), int(ys.max() - ys.min() + 1))


@dataclass
class RawDataset:
    images: dict[int, RawImage]
    objects: list[RawObject]

    def objects_in(self, image_id: int, category: str | None = None) -> list[RawObject]:
        return [o for o in self.objects if o.image_id == image_id and (category is None or o.category == category)]


def load_raw(path) -> RawDataset:
    """Read ``images``/``annotations``/``categories``; masks come from polygons or ``mask_file`` PNGs."""
    path = Path(path)
    root = path.parent
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ParseError(f"annotations are not valid JSON: {e}") from e
    cats = {c["id"]: c["name"] for c in doc.get("categories", [])}
    images = {}
    for i, rec in enumerate(doc.get("images", [])):
        try:
            images[rec["id"]] = RawImage(
                rec["id"], rec["file_name"], rec["width"], rec["height"], rec.get("source", ""), root
            )
        except KeyError as e:
            raise ParseError(f"image missing {e}", i) from e
    objects = []
    for i, ann in enumerate(doc.get("annotations", [])):
        try:
            img = images[ann["image_id"]]
            if "mask_file" in ann:
                mask = read_mask(root / ann["mask_file"]).astype(bool)
            else:
                mask = rasterize(ann["segmentation"], img.width, img.height)
            bbox = tuple(int(v) for v in ann["bbox"]) if "bbox" in ann else box_of(mask)
            objects.append(
                RawObject(ann["id"], img.image_id, cats[ann["category_id"]], bbox, mask, img.width, img.height, img.source)
            )
        except (KeyError, InputError) as e:
            raise ParseError(f"bad annotation: {e}", i) from e
    objects.sort(key=lambda o: (o.image_id, o.ann_id))
    return RawDataset(images, objects)
