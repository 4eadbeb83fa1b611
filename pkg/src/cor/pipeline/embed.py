"""Object embedders for the negative-similarity check."""

from __future__ import annotations

from typing import Protocol

import numpy as np

from cor.errors import EmptyMask


class Embedder(Protocol):
    def embed(self, image: np.ndarray, mask: np.ndarray) -> np.ndarray: ...


class ColorHistogramEmbedder:
    """Unit-norm joint RGB histogram of the pixels under the mask."""

    def __init__(self, bins: int = 4):
        if bins < 1:
            raise ValueError("bins must be positive")
        self.bins = bins

    def embed(self, image: np.ndarray, mask: np.ndarray) -> np.ndarray:
        m = np.asarray(mask, dtype=bool)
        if not m.any():
            raise EmptyMask("cannot embed an empty mask")
        px = np.asarray(image, dtype=np.int64)[m] * self.bins // 256
        idx = (px[:, 0] * self.bins + px[:, 1]) * self.bins + px[:, 2]
        h = np.bincount(idx, minlength=self.bins**3).astype(np.float64)
        return h / np.linalg.norm(h)


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.dot(a, b) / (np.linalg.norm(a) * np.linalg.norm(b)))
