"""Toy encoders and the mask decoder.

The image and text encoders stand in for large pretrained backbones and are
frozen by default; the mask encoder and the decoder train. Every encoder is a
pure function of its weights and input.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass

import numpy as np

from cor.errors import DimensionError, EmptyText, InvalidMask
from cor.numerics import ops
from cor.numerics.nn import Conv2d, LayerNorm, Linear, Module, Parameter, rng_for
from cor.numerics.tensor import Tensor, concat

_TOKEN = re.compile(r"[a-z0-9]+")


def stride_pair(factor: int) -> tuple[int, int]:
    """Split a total downsampling factor over two convolutions."""
    first = 2 if factor % 2 == 0 and factor > 2 else 1
    return first, factor // first


@dataclass
class BackboneConfig:
    image_size: int = 64
    target_grid: int = 16
    ref_grid: int = 8
    channels: int = 32
    text_vocab: int = 4096
    frozen_target: bool = True
    frozen_reference: bool = True
    frozen_text: bool = True
    frozen_mask: bool = False
    frozen_decoder: bool = False
    fg_prior: float = 0.1  # initial foreground probability of the decoder output
    decoder_hidden: int = 512

    def __post_init__(self):
        for grid in (self.target_grid, self.ref_grid):
            if grid < 1 or self.image_size % grid:
                raise ValueError(f"grid {grid} does not divide image size {self.image_size}")
        if self.channels < 4 or self.channels % 2:
            raise ValueError("channel width must be even and at least 4")
        if self.decoder_hidden < 1:
            raise ValueError("decoder width must be positive")
        if not 0.0 < self.fg_prior < 1.0:
            raise ValueError("foreground prior must lie in (0, 1)")

    @property
    def target_strides(self) -> tuple[int, int]:
        return stride_pair(self.image_size // self.target_grid)

    @property
    def ref_strides(self) -> tuple[int, int]:
        return stride_pair(self.image_size // self.ref_grid)


def to_float_image(image) -> np.ndarray:
    a = np.asarray(image)
    if a.dtype == np.uint8:
        return a.astype(np.float64) / 255.0
    return a.astype(np.float64)


def tokenize(text: str) -> list[str]:
    return _TOKEN.findall(text.lower())


def token_row(token: str, vocab: int) -> int:
    # builtin hash() is salted per process, so use a real digest
    digest = hashlib.blake2b(token.encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little") % vocab


class ConvEncoder(Module):
    """Two strided 3x3 convolutions, each followed by GeLU."""

    def __init__(self, c_in: int, channels: int, strides: tuple[int, int], rng: np.random.Generator):
        super().__init__()
        self.conv1 = Conv2d(c_in, channels // 2, 3, rng, stride=strides[0], padding=1)
        self.conv2 = Conv2d(channels // 2, channels, 3, rng, stride=strides[1], padding=1)

    def forward(self, x):
        return ops.gelu(self.conv2(ops.gelu(self.conv1(x))))


class ImageEncoder(Module):
    def __init__(self, config: BackboneConfig, grid: int, strides: tuple[int, int], rng: np.random.Generator):
        super().__init__()
        self.image_size = config.image_size
        self.grid = grid
        self.body = ConvEncoder(3, config.channels, strides, rng)
        self.norm = LayerNorm(config.channels)

    def forward(self, image) -> Tensor:
        x = to_float_image(image)
        if x.shape != (self.image_size, self.image_size, 3):
            raise DimensionError(f"expected a {self.image_size}x{self.image_size} RGB image, got {x.shape}")
        return self.norm(self.body(Tensor(x)))


class TextEncoder(Module):
    """Hashed bag of tokens, one linear layer, then layer norm."""

    def __init__(self, vocab: int, dim: int, rng: np.random.Generator):
        super().__init__()
        self.vocab = vocab
        self.embedding = Parameter(rng.uniform(-1.0, 1.0, size=(vocab, dim)))
        self.proj = Linear(dim, dim, rng)
        self.norm = LayerNorm(dim)

    def forward(self, text: str) -> Tensor:
        tokens = tokenize(text or "")
        if not tokens:
            raise EmptyText("retrieval text is empty")
        rows = np.array([token_row(t, self.vocab) for t in tokens])
        bag = self.embedding[rows].sum(axis=0)
        return self.norm(self.proj(bag))


class MaskEncoder(Module):
    def __init__(self, config: BackboneConfig, rng: np.random.Generator):
        super().__init__()
        self.image_size = config.image_size
        self.body = ConvEncoder(1, config.channels, config.ref_strides, rng)

    def forward(self, mask) -> Tensor:
        m = np.asarray(mask)
        if m.shape != (self.image_size, self.image_size):
            raise DimensionError(f"expected a {self.image_size}x{self.image_size} mask, got {m.shape}")
        m = m.astype(np.float64)
        if not np.all((m == 0) | (m == 1)):
            raise InvalidMask("mask values must be 0 or 1")
        return self.body(Tensor(m[..., None]))


def fourier_positions(h: int, w: int, freqs: np.ndarray) -> np.ndarray:
    """Random Fourier features of normalized cell centres, shape (h, w, 2 * freqs.shape[1])."""
    ys = (np.arange(h) + 0.5) / h * 2 - 1
    xs = (np.arange(w) + 0.5) / w * 2 - 1
    grid = np.stack(np.meshgrid(xs, ys), axis=-1)  # (h, w, 2) as (x, y)
    proj = 2 * np.pi * grid @ freqs
    return np.concatenate([np.sin(proj), np.cos(proj)], axis=-1)


class MaskDecoder(Module):
    """Similarity map with the prompt, stacked on the target features, then two 1x1 convs.

    The similarity is taken against target features plus a fixed positional
    encoding, so a prompt can also select by location.
    """

    def __init__(self, config: BackboneConfig, rng: np.random.Generator):
        super().__init__()
        c = config.channels
        self.image_size = config.image_size
        self.channels = c
        self.freqs = rng.normal(size=(2, c // 2))  # fixed, not a parameter
        d = config.decoder_hidden
        self.hidden = d
        self.fuse = Conv2d(c + 1, d, 1, rng)
        self.head = Conv2d(d, 1, 1, rng)
        self.hyper = Linear(c, d, rng)
        # start from the foreground base rate instead of p = 0.5 everywhere
        self.head.bias.data[...] = np.log(config.fg_prior / (1.0 - config.fg_prior))

    def positions(self, h: int, w: int) -> np.ndarray:
        return fourier_positions(h, w, self.freqs)

    def forward(self, f_tar: Tensor, prompt: Tensor) -> Tensor:
        if f_tar.ndim != 3 or f_tar.shape[-1] != self.channels or prompt.shape != (self.channels,):
            raise DimensionError(f"decoder got features {f_tar.shape} and prompt {prompt.shape}")
        h, w, _ = f_tar.shape
        sim = ((f_tar + self.positions(h, w)) @ prompt).reshape(h, w, 1) * self.channels**-0.5
        x = ops.gelu(self.fuse(concat([sim, f_tar], axis=-1)))
        # fixed head plus prompt-generated per-channel weights
        logits = (self.head(x) + x @ self.hyper(prompt).reshape(self.hidden, 1)).reshape(h, w)
        return ops.upsample_bilinear(logits, self.image_size, self.image_size)


class Backbones(Module):
    """All encoders plus the decoder, with the configured freeze flags applied."""

    def __init__(self, config: BackboneConfig, seed: int = 0):
        super().__init__()
        self.config = config
        self.target = ImageEncoder(config, config.target_grid, config.target_strides, rng_for(seed, "target"))
        self.reference = ImageEncoder(config, config.ref_grid, config.ref_strides, rng_for(seed, "reference"))
        self.text = TextEncoder(config.text_vocab, config.channels, rng_for(seed, "text"))
        self.mask = MaskEncoder(config, rng_for(seed, "mask"))
        self.decoder = MaskDecoder(config, rng_for(seed, "decoder"))
        self.target.freeze(config.frozen_target)
        self.reference.freeze(config.frozen_reference)
        self.text.freeze(config.frozen_text)
        self.mask.freeze(config.frozen_mask)
        self.decoder.freeze(config.frozen_decoder)

    def encode_target(self, image) -> Tensor:
        return self.target(image)

    def encode_reference(self, image) -> Tensor:
        return self.reference(image)

    def encode_text(self, text: str) -> Tensor:
        return self.text(text)

    def encode_mask(self, mask) -> Tensor:
        return self.mask(mask)

    def decode_mask(self, f_tar: Tensor, prompt: Tensor) -> Tensor:
        return self.decoder(f_tar, prompt)
