"""Differentiable kernels used by the model.

Spatial tensors are channel-last: ``(h, w, c)``, optionally with leading batch
axes. Convolution weights are laid out ``(kh, kw, c_in // groups, c_out)``.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import ndimage, special

from cor.errors import DegenerateVector, DimensionError, EmptyMask
from cor.numerics.tensor import Tensor, as_tensor

_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def conv2d(
    x: Tensor,
    weight: Tensor,
    bias: Tensor | None = None,
    stride: int = 1,
    padding: int = 0,
    groups: int = 1,
) -> Tensor:
    """Cross-correlation of a channel-last map with a (grouped) kernel."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim < 3 or weight.ndim != 4:
        raise DimensionError(f"conv2d expects (..., h, w, c) input and 4-d weight, got {x.shape}, {weight.shape}")
    kh, kw, cg, cout = weight.shape
    cin = x.shape[-1]
    if groups < 1 or cin % groups or cout % groups or cin // groups != cg:
        raise DimensionError(f"conv2d channel mismatch: input {cin}, weight {weight.shape}, groups {groups}")
    if bias is not None and bias.shape != (cout,):
        raise DimensionError(f"conv2d bias shape {bias.shape} != ({cout},)")
    h, w = x.shape[-3], x.shape[-2]
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (w + 2 * padding - kw) // stride + 1
    if oh < 1 or ow < 1:
        raise DimensionError(f"conv2d output would be empty for input {x.shape}")
    lead = x.shape[:-3]
    pad = [(0, 0)] * len(lead) + [(padding, padding), (padding, padding), (0, 0)]
    xp = np.pad(x.data, pad) if padding else x.data
    og = cout // groups
    depthwise = cg == 1 and og == 1
    W = weight.data

    def window(u, v):
        return (
            Ellipsis,
            slice(u, u + stride * (oh - 1) + 1, stride),
            slice(v, v + stride * (ow - 1) + 1, stride),
            slice(None),
        )

    out = np.zeros(lead + (oh, ow, cout))
    for u in range(kh):
        for v in range(kw):
            patch = xp[window(u, v)]
            if groups == 1:
                out += patch @ W[u, v]
            elif depthwise:
                out += patch * W[u, v, 0]
            else:
                pg = patch.reshape(patch.shape[:-1] + (groups, cg))
                out += np.einsum("...gi,igo->...go", pg, W[u, v].reshape(cg, groups, og)).reshape(out.shape)
    if bias is not None:
        out += bias.data

    def back(g):
        gw = np.zeros_like(W)
        gxp = np.zeros_like(xp)
        for u in range(kh):
            for v in range(kw):
                sl = window(u, v)
                patch = xp[sl]
                if groups == 1:
                    gw[u, v] = patch.reshape(-1, cin).T @ g.reshape(-1, cout)
                    gxp[sl] += g @ W[u, v].T
                elif depthwise:
                    gw[u, v, 0] = (patch * g).reshape(-1, cout).sum(axis=0)
                    gxp[sl] += g * W[u, v, 0]
                else:
                    pg = patch.reshape(patch.shape[:-1] + (groups, cg))
                    gg = g.reshape(g.shape[:-1] + (groups, og))
                    wk = W[u, v].reshape(cg, groups, og)
                    gw[u, v] = np.einsum(
                        "ngi,ngo->igo", pg.reshape(-1, groups, cg), gg.reshape(-1, groups, og)
                    ).reshape(cg, cout)
                    gxp[sl] += np.einsum("...go,igo->...gi", gg, wk).reshape(patch.shape)
        if padding:
            gx = gxp[..., padding : padding + h, padding : padding + w, :]
        else:
            gx = gxp
        gb = g.reshape(-1, cout).sum(axis=0) if bias is not None else None
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor.from_op(out, parents, back)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight + bias`` with weight of shape (m, n)."""
    x, weight = as_tensor(x), as_tensor(weight)
    if weight.ndim != 2 or x.shape[-1] != weight.shape[0]:
        raise DimensionError(f"linear: input {x.shape} incompatible with weight {weight.shape}")
    if bias is not None and bias.shape != (weight.shape[1],):
        raise DimensionError(f"linear: bias {bias.shape} does not match weight {weight.shape}")
    out = x @ weight
    return out + bias if bias is not None else out


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-6) -> Tensor:
    """Normalize over the last (channel) axis, then apply the affine map."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    c = x.shape[-1] if x.ndim else 0
    if c < 1:
        raise DimensionError("layer_norm needs at least one channel")
    if gamma.shape != (c,) or beta.shape != (c,):
        raise DimensionError(f"layer_norm affine shapes {gamma.shape}, {beta.shape} != ({c},)")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    rstd = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * rstd
    out = xhat * gamma.data + beta.data

    def back(g):
        gxhat = g * gamma.data
        gx = rstd * (
            gxhat - gxhat.mean(axis=-1, keepdims=True) - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True)
        )
        return gx, (g * xhat).reshape(-1, c).sum(axis=0), g.reshape(-1, c).sum(axis=0)

    return Tensor.from_op(out, (x, gamma, beta), back)


def gelu(x: Tensor) -> Tensor:
    x = as_tensor(x)
    cdf = 0.5 * (1.0 + special.erf(x.data / _SQRT2))

    def back(g):
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * x.data * x.data)
        return (g * (cdf + x.data * pdf),)

    return Tensor.from_op(x.data * cdf, (x,), back)


def relu(x: Tensor) -> Tensor:
    x = as_tensor(x)

    def back(g):
        return (g * (x.data > 0),)

    return Tensor.from_op(np.maximum(x.data, 0.0), (x,), back)


def sigmoid(x: Tensor) -> Tensor:
    x = as_tensor(x)
    s = special.expit(x.data)

    def back(g):
        return (g * s * (1.0 - s),)

    return Tensor.from_op(s, (x,), back)


_ACTIVATIONS = {"gelu": gelu, "relu": relu, "sigmoid": sigmoid}


def activation(x: Tensor, kind: str) -> Tensor:
    try:
        fn = _ACTIVATIONS[kind]
    except KeyError:
        raise ValueError(f"unknown activation {kind!r}") from None
    return fn(x)


def softmax(x: Tensor, axis=-1) -> Tensor:
    x = as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return Tensor.from_op(y, (x,), back)


def softmax_over_positions(x: Tensor) -> Tensor:
    """Softmax over both spatial axes of an (h, w) map or of each (h, w, k) slice."""
    x = as_tensor(x)
    if x.ndim not in (2, 3):
        raise DimensionError(f"expected (h, w) or (h, w, k), got {x.shape}")
    return softmax(x, axis=(0, 1))


def cosine_similarity(a: Tensor, b: Tensor) -> Tensor:
    """Cosine of the angle between two vectors (last axis)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise DimensionError(f"cosine_similarity shapes differ: {a.shape} vs {b.shape}")
    na = np.linalg.norm(a.data, axis=-1, keepdims=True)
    nb = np.linalg.norm(b.data, axis=-1, keepdims=True)
    if np.any(na == 0) or np.any(nb == 0):
        raise DegenerateVector("cosine similarity of a zero-norm vector")
    dot = (a.data * b.data).sum(axis=-1, keepdims=True)
    c = dot / (na * nb)

    def back(g):
        g = g[..., None]
        ga = g * (b.data / (na * nb) - c * a.data / (na * na))
        gb = g * (a.data / (na * nb) - c * b.data / (nb * nb))
        return ga, gb

    return Tensor.from_op(c[..., 0], (a, b), back)


def masked_pool(feat: Tensor, mask) -> Tensor:
    """Average of ``feat[p]`` over positions where the binary mask is set."""
    feat = as_tensor(feat)
    m = np.asarray(mask.data if isinstance(mask, Tensor) else mask, dtype=np.float64)
    if feat.ndim != 3 or m.shape != feat.shape[:2]:
        raise DimensionError(f"masked_pool: mask {m.shape} does not match features {feat.shape}")
    n = m.sum()
    if n <= 0:
        raise EmptyMask("masked_pool over an empty mask")
    weights = m[..., None] / n
    out = (feat.data * weights).sum(axis=(0, 1))

    def back(g):
        return (weights * g,)

    return Tensor.from_op(out, (feat,), back)


def bce_with_logits(logits: Tensor, target) -> Tensor:
    """Elementwise binary cross-entropy of sigmoid(logits) against ``target``."""
    logits = as_tensor(logits)
    t = np.asarray(target, dtype=np.float64)
    if t.shape != logits.shape:
        raise DimensionError(f"bce: target {t.shape} vs logits {logits.shape}")
    z = logits.data
    out = np.maximum(z, 0.0) - z * t + np.log1p(np.exp(-np.abs(z)))

    def back(g):
        return (g * (special.expit(z) - t),)

    return Tensor.from_op(out, (logits,), back)


def interpolation_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Row-stochastic matrix for 1-d linear resampling with half-pixel centers."""
    m = np.zeros((n_out, n_in))
    scale = n_in / n_out
    for i in range(n_out):
        src = max((i + 0.5) * scale - 0.5, 0.0)
        i0 = min(int(math.floor(src)), n_in - 1)
        i1 = min(i0 + 1, n_in - 1)
        frac = src - i0
        m[i, i0] += 1.0 - frac
        m[i, i1] += frac
    return m


def upsample_bilinear(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """Bilinear resize of an (h, w) or (h, w, c) map."""
    x = as_tensor(x)
    if x.ndim not in (2, 3):
        raise DimensionError(f"upsample expects (h, w[, c]), got {x.shape}")
    mh = interpolation_matrix(x.shape[0], out_h)
    mw = interpolation_matrix(x.shape[1], out_w)
    out = np.einsum("oh,hw...,pw->op...", mh, x.data, mw)

    def back(g):
        return (np.einsum("oh,op...,pw->hw...", mh, g, mw),)

    return Tensor.from_op(out, (x,), back)


def avg_pool_same(arr: np.ndarray, window: int) -> np.ndarray:
    """Stride-1 box average with zero padding (the padding counts in the divisor)."""
    return ndimage.uniform_filter(np.asarray(arr, dtype=np.float64), size=window, mode="constant", cval=0.0)
