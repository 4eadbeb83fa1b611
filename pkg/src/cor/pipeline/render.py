"""Box overlays and mask-out fills for validator images."""

from __future__ import annotations

import numpy as np
from PIL import Image, ImageDraw

RED = (255, 0, 0)
BLUE = (0, 0, 255)


def draw_boxes(image: np.ndarray, red=(), blue=(), width: int = 2) -> np.ndarray:
    """Copy of ``image`` with (x, y, w, h) boxes outlined in red and blue."""
    im = Image.fromarray(np.asarray(image, dtype=np.uint8)).convert("RGB")
    d = ImageDraw.Draw(im)
    for boxes, colour in ((red, RED), (blue, BLUE)):
        for x, y, w, h in boxes:
            d.rectangle([x, y, x + w - 1, y + h - 1], outline=colour, width=width)
    return np.asarray(im, dtype=np.uint8)


def mask_out(image: np.ndarray, masks) -> np.ndarray:
    """Paint the union of ``masks`` with the image's mean colour."""
    img = np.asarray(image, dtype=np.uint8).copy()
    fill = np.round(img.reshape(-1, 3).mean(axis=0)).astype(np.uint8)
    for m in masks:
        img[np.asarray(m, dtype=bool)] = fill
    return img
