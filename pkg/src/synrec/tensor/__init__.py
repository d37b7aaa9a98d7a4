from .core import (
    DTYPE,
    GradError,
    ShapeError,
    Tensor,
    add,
    as_tensor,
    backward,
    concat,
    cross_entropy,
    div,
    dropout,
    embedding,
    exp,
    gelu,
    getitem,
    is_grad_enabled,
    layer_norm,
    log,
    log_softmax,
    masked_fill,
    matmul,
    mean,
    mul,
    neg,
    no_grad,
    relu,
    reshape,
    softmax,
    softplus,
    sqrt,
    square,
    stack,
    sub,
    swapaxes,
    tanh,
    transpose,
    tsum,
    where,
)
from .nn import Embedding, LayerNorm, Linear, Module, Parameter
from .optim import AdamW, clip_grad_norm, warmup_constant
