"""Detect, rank, segment: a modular single-candidate comparison method.

Each stage is pluggable. The toy defaults work on the synthetic shape world:
colour-cluster connected components as detections, a cosine ranker over
colour/shape descriptors with the reference and text embeddings summed, and a
segmenter that keeps the dominant foreground component inside the chosen box.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import ndimage

from cor.errors import EmptyPrediction

log = logging.getLogger(__name__)

MAX_CANDIDATES = 30
MIN_CONFIDENCE = 0.3
NMS_THRESHOLD = 0.8


@dataclass(frozen=True)
class Box:
    x0: int
    y0: int
    x1: int  # exclusive
    y1: int  # exclusive
    score: float = 1.0

    @property
    def area(self) -> int:
        return max(0, self.x1 - self.x0) * max(0, self.y1 - self.y0)

    def iou(self, other: "Box") -> float:
        ix = max(0, min(self.x1, other.x1) - max(self.x0, other.x0))
        iy = max(0, min(self.y1, other.y1) - max(self.y0, other.y0))
        inter = ix * iy
        union = self.area + other.area - inter
        return inter / union if union else 0.0


def background_color(image: np.ndarray) -> np.ndarray:
    return np.median(image.reshape(-1, 3).astype(np.float64), axis=0)


def foreground(image: np.ndarray, tol: float = 40.0) -> np.ndarray:
    diff = np.abs(image.astype(np.float64) - background_color(image)).max(axis=-1)
    return diff > tol


def suppress(boxes: Sequence[Box], threshold: float = NMS_THRESHOLD, limit: int = MAX_CANDIDATES) -> list[Box]:
    """Greedy overlap suppression in score order; keeps boxes whose IoU with every kept box is below threshold."""
    kept: list[Box] = []
    for b in sorted(boxes, key=lambda b: (-b.score, b.y0, b.x0, b.y1, b.x1)):
        if all(b.iou(k) < threshold for k in kept):
            kept.append(b)
        if len(kept) == limit:
            break
    return kept


def component_detector(image: np.ndarray, min_area: int = 12, quant: int = 64) -> list[Box]:
    """Connected components of each quantized foreground colour, scored by size."""
    fg = foreground(image)
    q = (image.astype(np.int64) // quant) * quant
    codes = (q[..., 0] << 16) | (q[..., 1] << 8) | q[..., 2]
    boxes = []
    for code in np.unique(codes[fg]):
        labels, n = ndimage.label(fg & (codes == code))
        for sl, idx in zip(ndimage.find_objects(labels), range(1, n + 1)):
            area = int(np.count_nonzero(labels[sl] == idx))
            score = min(1.0, area / (4.0 * min_area))
            boxes.append(Box(sl[1].start, sl[0].start, sl[1].stop, sl[0].stop, score))
    boxes = [b for b in boxes if b.score > MIN_CONFIDENCE]
    return suppress(boxes)


def _hash_vector(token: str, dim: int) -> np.ndarray:
    seed = int.from_bytes(hashlib.blake2b(token.encode(), digest_size=8).digest(), "little")
    return np.random.default_rng(seed).normal(size=dim)


def crop_embedding(image: np.ndarray, box: Box, bins: int = 4) -> np.ndarray:
    """Colour histogram of the foreground in the box plus fill ratio and log-area."""
    crop = image[box.y0 : box.y1, box.x0 : box.x1].astype(np.int64)
    fg = foreground(image)[box.y0 : box.y1, box.x0 : box.x1]
    pix = crop[fg] if fg.any() else crop.reshape(-1, 3)
    idx = (pix // (256 // bins)).clip(0, bins - 1)
    flat = idx[:, 0] * bins * bins + idx[:, 1] * bins + idx[:, 2]
    hist = np.bincount(flat, minlength=bins**3).astype(np.float64)
    hist /= max(hist.sum(), 1.0)
    fill = fg.mean() if fg.size else 0.0
    aspect = (box.x1 - box.x0) / max(box.y1 - box.y0, 1)
    v = np.concatenate([hist, [fill, np.log1p(box.area) / 8.0, np.tanh(aspect - 1.0)]])
    return v


def text_embedding(text: str, dim: int) -> np.ndarray:
    tokens = text.lower().split()
    if not tokens:
        return np.zeros(dim)
    return 0.1 * sum(_hash_vector(t, dim) for t in tokens) / len(tokens)


def _cos(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    return float(a @ b / (na * nb)) if na > 0 and nb > 0 else 0.0


def sum_ranker(ref_embedding: np.ndarray, text: str, crops: Sequence[np.ndarray]) -> np.ndarray:
    """Score candidates by cosine with (reference + text) embedding."""
    query = ref_embedding + text_embedding(text, len(ref_embedding))
    return np.array([_cos(query, c) for c in crops])


def component_segmenter(image: np.ndarray, box: Box) -> np.ndarray:
    """Largest foreground component that lies within the box."""
    mask = np.zeros(image.shape[:2], dtype=bool)
    fg = foreground(image)[box.y0 : box.y1, box.x0 : box.x1]
    labels, n = ndimage.label(fg)
    if n == 0:
        mask[box.y0 : box.y1, box.x0 : box.x1] = True
        return mask
    sizes = ndimage.sum_labels(np.ones_like(labels), labels, index=range(1, n + 1))
    mask[box.y0 : box.y1, box.x0 : box.x1] = labels == (int(np.argmax(sizes)) + 1)
    return mask


def box_fill_segmenter(image: np.ndarray, box: Box) -> np.ndarray:
    mask = np.zeros(image.shape[:2], dtype=bool)
    mask[box.y0 : box.y1, box.x0 : box.x1] = True
    return mask


@dataclass
class StagePipeline:
    detector: Callable[[np.ndarray], list[Box]] = component_detector
    ranker: Callable[[np.ndarray, str, Sequence[np.ndarray]], np.ndarray] = sum_ranker
    box_segmenter: Callable[[np.ndarray, Box], np.ndarray] = component_segmenter
    embed: Callable[[np.ndarray, Box], np.ndarray] = field(default=crop_embedding)


def mask_box(mask: np.ndarray) -> Box:
    ys, xs = np.nonzero(mask)
    return Box(int(xs.min()), int(ys.min()), int(xs.max()) + 1, int(ys.max()) + 1)


def run_baseline_arrays(
    ref_image: np.ndarray, ref_mask: np.ndarray, text: str, target_image: np.ndarray, pipeline: StagePipeline | None = None
) -> np.ndarray:
    """Predicted mask of the single best-ranked candidate; all zeros when nothing is detected."""
    pipe = pipeline or StagePipeline()
    try:
        boxes = pipe.detector(target_image)[:MAX_CANDIDATES]
        if not boxes:
            raise EmptyPrediction("detector returned no candidates")
    except EmptyPrediction as e:
        log.warning("baseline: %s", e)
        return np.zeros(target_image.shape[:2], dtype=bool)
    ref = pipe.embed(ref_image, mask_box(np.asarray(ref_mask) != 0))
    crops = [pipe.embed(target_image, b) for b in boxes]
    scores = pipe.ranker(ref, text, crops)
    best = boxes[int(np.argmax(scores))]
    return pipe.box_segmenter(target_image, best)


def run_baseline(sample, pipeline: StagePipeline | None = None) -> np.ndarray:
    return run_baseline_arrays(
        sample.load_ref_image(), sample.load_ref_mask(), sample.retrieval_text, sample.load_target_image(), pipeline
    )
