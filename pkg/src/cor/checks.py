"""Registry of finite-difference gradient checks.

Every differentiable primitive and every composite graph of the model has an
entry. A check builds small float64 inputs from a fixed seed, reduces the
output to a scalar with fixed random weights and compares analytic and
central-difference gradients.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from cor.avti import AVTI
from cor.backbones import BackboneConfig, MaskDecoder
from cor.losses import LossConfig, loss_cor, loss_total, loss_wbce, loss_wiou
from cor.model import CoreModel, ModelConfig
from cor.numerics import grad_check, ops, verification_mode
from cor.numerics import tensor as T
from cor.numerics.tensor import Tensor
from cor.rre import RRE, RreConfig, SFEBlock, aggregate, normalize_maps

# (scalar function, inputs to differentiate, coordinates sampled per input)
Case = tuple[Callable[..., Tensor], list[Tensor], int | None]


def _t(rng, *shape, low=None, high=None) -> Tensor:
    if low is None:
        data = rng.normal(size=shape)
    else:
        data = rng.uniform(low, high, size=shape)
    return Tensor(data, requires_grad=True)


def _away_from_zero(rng, *shape) -> Tensor:
    x = rng.uniform(0.2, 1.5, size=shape) * rng.choice([-1.0, 1.0], size=shape)
    return Tensor(x, requires_grad=True)


def _weighted(out: Tensor, rng) -> Tensor:
    """Scalar projection with fixed weights so every output element matters."""
    w = rng.normal(size=out.shape)
    return (out * w).sum()


def _elementwise(op, make) -> Callable[[np.random.Generator], Case]:
    def build(rng):
        x = make(rng)
        w = rng.normal(size=x.shape)
        return (lambda a: (op(a) * w).sum()), [x], None

    return build


def _binary(op, low=None, high=None) -> Callable[[np.random.Generator], Case]:
    def build(rng):
        a = _t(rng, 3, 4)
        # broadcasting second operand exercises gradient reduction
        b = _t(rng, 4, low=low, high=high)
        w = rng.normal(size=(3, 4))
        return (lambda x, y: (op(x, y) * w).sum()), [a, b], None

    return build


def _matmul(rng) -> Case:
    a, b = _t(rng, 3, 5), _t(rng, 5, 2)
    w = rng.normal(size=(3, 2))
    return (lambda x, y: (T.matmul(x, y) * w).sum()), [a, b], None


def _reduce(op) -> Callable[[np.random.Generator], Case]:
    def build(rng):
        x = _t(rng, 3, 4, 2)
        w = rng.normal(size=(3, 2))
        return (lambda a: (op(a, axis=1) * w).sum()), [x], None

    return build


def _reshape(rng) -> Case:
    x = _t(rng, 3, 4)
    w = rng.normal(size=(2, 6))
    return (lambda a: (T.reshape(a, (2, 6)) * w).sum()), [x], None


def _transpose(rng) -> Case:
    x = _t(rng, 2, 3, 4)
    w = rng.normal(size=(4, 2, 3))
    return (lambda a: (T.transpose(a, (2, 0, 1)) * w).sum()), [x], None


def _getitem(rng) -> Case:
    x = _t(rng, 4, 5)
    w = rng.normal(size=(2, 3))
    return (lambda a: (T.getitem(a, (slice(1, 3), slice(0, 5, 2))) * w).sum()), [x], None


def _concat(rng) -> Case:
    a, b = _t(rng, 3, 2), _t(rng, 3, 4)
    w = rng.normal(size=(3, 6))
    return (lambda x, y: (T.concat([x, y], axis=-1) * w).sum()), [a, b], None


def _conv(stride, padding, groups, c_in=4, c_out=4, k=3) -> Callable[[np.random.Generator], Case]:
    def build(rng):
        x = _t(rng, 6, 6, c_in)
        wt = _t(rng, k, k, c_in // groups, c_out)
        b = _t(rng, c_out)
        probe = ops.conv2d(x, wt, b, stride, padding, groups)
        w = rng.normal(size=probe.shape)
        return (lambda x_, w_, b_: (ops.conv2d(x_, w_, b_, stride, padding, groups) * w).sum()), [x, wt, b], None

    return build


def _linear(rng) -> Case:
    x, wt, b = _t(rng, 3, 5), _t(rng, 5, 4), _t(rng, 4)
    w = rng.normal(size=(3, 4))
    return (lambda a, m, c: (ops.linear(a, m, c) * w).sum()), [x, wt, b], None


def _layer_norm(rng) -> Case:
    x, g, b = _t(rng, 3, 3, 6), _t(rng, 6), _t(rng, 6)
    w = rng.normal(size=(3, 3, 6))
    return (lambda a, g_, b_: (ops.layer_norm(a, g_, b_) * w).sum()), [x, g, b], None


def _softmax(rng) -> Case:
    x = _t(rng, 3, 5)
    w = rng.normal(size=(3, 5))
    return (lambda a: (ops.softmax(a, axis=-1) * w).sum()), [x], None


def _softmax_positions(rng) -> Case:
    x = _t(rng, 4, 4, 2)
    w = rng.normal(size=(4, 4, 2))
    return (lambda a: (ops.softmax_over_positions(a) * w).sum()), [x], None


def _cosine(rng) -> Case:
    a, b = _t(rng, 3, 6), _t(rng, 3, 6)
    w = rng.normal(size=3)
    return (lambda x, y: (ops.cosine_similarity(x, y) * w).sum()), [a, b], None


def _masked_pool(rng) -> Case:
    x = _t(rng, 4, 4, 3)
    m = rng.random((4, 4)) < 0.5
    m[0, 0] = True
    w = rng.normal(size=3)
    return (lambda a: (ops.masked_pool(a, m) * w).sum()), [x], None


def _bce(rng) -> Case:
    z = _t(rng, 4, 4)
    gt = (rng.random((4, 4)) < 0.5).astype(np.float64)
    w = rng.normal(size=(4, 4))
    return (lambda a: (ops.bce_with_logits(a, gt) * w).sum()), [z], None


def _upsample(rng) -> Case:
    x = _t(rng, 3, 4)
    w = rng.normal(size=(6, 8))
    return (lambda a: (ops.upsample_bilinear(a, 6, 8) * w).sum()), [x], None


def _sfe3(rng) -> Case:
    c = 4
    blocks = [SFEBlock(c, rng) for _ in range(3)]
    x = _t(rng, 8, 8, c)
    params = [p for b in blocks for _, p in b.named_parameters()]
    w = rng.normal(size=(8, 8, c))

    def fn(*_):
        y = x
        for b in blocks:
            y = b(y)
        return (y * w).sum()

    return fn, [x, *params], 8


def _rre(rng) -> Case:
    c = 4
    rre = RRE(RreConfig(channels=c, num_maps=3), rng)
    f_ref, f_mask = _t(rng, 6, 6, c), _t(rng, 6, 6, c)
    w = rng.normal(size=c)

    def fn(*_):
        return (rre(f_ref, f_mask) * w).sum()

    return fn, [f_ref, f_mask, *[p for _, p in rre.named_parameters()]], 8


def _rre_aggregate(rng) -> Case:
    f_ref, a = _t(rng, 5, 5, 3), _t(rng, 5, 5, 2)
    w = rng.normal(size=3)
    return (lambda f, m: (aggregate(f, normalize_maps(m)) * w).sum()), [f_ref, a], None


def _avti(rng) -> Case:
    d = 6
    avti = AVTI(d, seed=int(rng.integers(1 << 30)))
    f_rre, f_txt = _t(rng, d), _t(rng, d)
    w = rng.normal(size=d)

    def fn(*_):
        return (avti(f_rre, f_txt) * w).sum()

    return fn, [f_rre, f_txt, *[p for _, p in avti.named_parameters()]], 8


def _decoder(rng) -> Case:
    cfg = BackboneConfig(image_size=16, target_grid=4, ref_grid=4, channels=4, decoder_hidden=6)
    dec = MaskDecoder(cfg, rng)
    f_tar, prompt = _t(rng, 4, 4, 4), _t(rng, 4)
    w = rng.normal(size=(16, 16))

    def fn(*_):
        return (dec(f_tar, prompt) * w).sum()

    return fn, [f_tar, prompt, *[p for _, p in dec.named_parameters()]], 6


def _grids(rng, n, g):
    grids = []
    for _ in range(n):
        m = (rng.random((g, g)) < 0.4).astype(np.float64)
        m[0, 0], m[-1, -1] = 1.0, 0.0
        grids.append(m)
    return grids


def _l_cor(rng) -> Case:
    feats = [_t(rng, 4, 4, 5) for _ in range(2)]
    prompts = [_t(rng, 5) for _ in range(2)]
    grids = _grids(rng, 2, 4)

    def fn(*_):
        return loss_cor(feats, grids, prompts)[2]

    return fn, [*feats, *prompts], None


def _l_seg(rng) -> Case:
    z = _t(rng, 8, 8)
    gt = np.zeros((8, 8))
    gt[2:6, 1:5] = 1.0
    return (lambda a: loss_wbce(a, gt) + loss_wiou(a, gt)), [z], None


def _l_total(rng) -> Case:
    cfg = BackboneConfig(image_size=16, target_grid=4, ref_grid=4, channels=8, decoder_hidden=8)
    model = CoreModel(ModelConfig(backbone=cfg, num_maps=2, seed=int(rng.integers(1 << 30))))
    img = rng.integers(0, 256, size=(16, 16, 3), dtype=np.uint8)
    ref_mask = np.zeros((16, 16))
    ref_mask[4:8, 4:8] = 1.0
    gt = np.zeros((16, 16))
    gt[6:14, 2:10] = 1.0
    grid = _grids(rng, 1, 4)[0]
    inputs = model.frozen_inputs(img, img, "change the color to red")
    loss_cfg = LossConfig()

    def fn(*_):
        pred = model.forward(inputs, ref_mask)
        return loss_total([pred.logits], [gt], loss_cfg, [pred.f_tar], [grid], [pred.f_avti]).l_total

    return fn, [p for _, p in model.trainable_parameters()], 4


def _positive(rng):
    return _t(rng, 3, 4, low=0.5, high=2.0)


REGISTRY: dict[str, Callable[[np.random.Generator], Case]] = {
    "add": _binary(T.add),
    "sub": _binary(T.sub),
    "mul": _binary(T.mul),
    "div": _binary(T.div, 0.5, 2.0),
    "pow": _elementwise(lambda a: T.power(a, 1.5), _positive),
    "matmul": _matmul,
    "sum": _reduce(T.reduce_sum),
    "mean": _reduce(T.reduce_mean),
    "reshape": _reshape,
    "transpose": _transpose,
    "getitem": _getitem,
    "concat": _concat,
    "exp": _elementwise(T.exp, lambda r: _t(r, 3, 4)),
    "log": _elementwise(T.log, _positive),
    "sqrt": _elementwise(T.sqrt, _positive),
    "abs": _elementwise(T.abs_, lambda r: _away_from_zero(r, 3, 4)),
    "conv2d": _conv(1, 1, 1),
    "conv2d_strided": _conv(2, 0, 1, c_out=3, k=2),
    "conv2d_depthwise": _conv(1, 3, 4, k=7),
    "linear": _linear,
    "layer_norm": _layer_norm,
    "gelu": _elementwise(ops.gelu, lambda r: _t(r, 3, 4)),
    "relu": _elementwise(ops.relu, lambda r: _away_from_zero(r, 3, 4)),
    "sigmoid": _elementwise(ops.sigmoid, lambda r: _t(r, 3, 4)),
    "softmax": _softmax,
    "softmax_over_positions": _softmax_positions,
    "cosine": _cosine,
    "masked_pool": _masked_pool,
    "bce": _bce,
    "upsample": _upsample,
    "SFE3": _sfe3,
    "RRE.aggregate": _rre_aggregate,
    "RRE": _rre,
    "AVTI": _avti,
    "MaskDecoder": _decoder,
    "L_cor": _l_cor,
    "L_seg": _l_seg,
    "L_total": _l_total,
}

COMPOSITES = ("SFE3", "RRE", "AVTI", "L_cor", "L_seg", "L_total")


def skew(t: Tensor, factor: float = 1.5) -> Tensor:
    """Identity in the forward pass with a scaled backward pass (test hook)."""
    return Tensor.from_op(t.data.copy(), (t,), lambda g: (g * factor,))


@dataclass
class CheckResult:
    name: str
    error: float
    tol: float
    seconds: float

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.error)) and self.error < self.tol


def run_check(name: str, tol: float = 1e-4, eps: float = 1e-4, corrupt: bool = False, seed: int = 0) -> CheckResult:
    rng = np.random.default_rng([seed, *name.encode()])
    fn, inputs, coords = REGISTRY[name](rng)
    target = (lambda *a: skew(fn(*a))) if corrupt else fn
    start = time.perf_counter()
    with verification_mode():
        err = grad_check(target, inputs, eps=eps, max_coords=coords, seed=seed)
    return CheckResult(name, err, tol, time.perf_counter() - start)


def run_checks(names=None, tol: float = 1e-4, eps: float = 1e-4, corrupt=(), seed: int = 0) -> list[CheckResult]:
    """Run the named checks (all by default); names in ``corrupt`` get a skewed backward pass."""
    names = list(REGISTRY) if names is None else list(names)
    unknown = [n for n in [*names, *corrupt] if n not in REGISTRY]
    if unknown:
        raise KeyError(f"unknown gradient checks: {unknown}")
    return [run_check(n, tol, eps, n in corrupt, seed) for n in names]


def format_results(results: list[CheckResult]) -> str:
    width = max(len(r.name) for r in results)
    lines = [f"{'check':<{width}}  {'max rel err':>11}  result"]
    for r in results:
        lines.append(f"{r.name:<{width}}  {r.error:11.3e}  {'pass' if r.passed else 'FAIL'}")
    return "\n".join(lines)
