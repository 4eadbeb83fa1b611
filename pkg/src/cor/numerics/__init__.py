from cor.numerics.tensor import Tensor, no_grad, verification_mode, concat, exp, log, sqrt
from cor.numerics.ops import (
    activation,
    avg_pool_same,
    bce_with_logits,
    conv2d,
    cosine_similarity,
    gelu,
    layer_norm,
    linear,
    masked_pool,
    relu,
    sigmoid,
    softmax,
    softmax_over_positions,
    upsample_bilinear,
)
from cor.numerics.nn import Conv2d, LayerNorm, Linear, Module, Parameter, rng_for
from cor.numerics.optim import AdamW, OptimState, adamw_step
from cor.numerics.gradcheck import grad_check
from cor.numerics.checkpoint import load_checkpoint, save_checkpoint
