"""Differentiable numeric kernel: tensors, transformer blocks, AdamW, checkpoints."""

from .blocks import (
    KL_FLOOR,
    cross_entropy,
    feed_forward,
    kl_divergence,
    multi_head_attention,
    transformer_step,
)
from .checkpoint import FORMAT_VERSION, load_checkpoint, save_checkpoint
from .optim import AdamW
from .params import AttentionBlockParams, LayerParams, ParamStore, attention_block, transformer_layer
from .tensor import (
    KernelError,
    Tensor,
    add,
    add_rowvec,
    concat_cols,
    concat_rows,
    exp,
    flatten,
    gather_rows,
    layer_norm,
    log,
    log_softmax_rows,
    masked_softmax_rows,
    matmul,
    maximum_const,
    mean_all,
    mul,
    neg,
    no_grad,
    relu,
    scale,
    scale_rows,
    slice_cols,
    slice_rows,
    softmax_rows,
    sub,
    sum_all,
    take_per_row,
    tensor,
    transpose,
)

__all__ = [
    "AdamW",
    "AttentionBlockParams",
    "FORMAT_VERSION",
    "KL_FLOOR",
    "KernelError",
    "LayerParams",
    "ParamStore",
    "Tensor",
    "add",
    "add_rowvec",
    "attention_block",
    "concat_cols",
    "concat_rows",
    "cross_entropy",
    "exp",
    "feed_forward",
    "flatten",
    "gather_rows",
    "kl_divergence",
    "layer_norm",
    "load_checkpoint",
    "log",
    "log_softmax_rows",
    "masked_softmax_rows",
    "matmul",
    "maximum_const",
    "mean_all",
    "mul",
    "multi_head_attention",
    "neg",
    "no_grad",
    "relu",
    "save_checkpoint",
    "scale",
    "scale_rows",
    "slice_cols",
    "slice_rows",
    "softmax_rows",
    "sub",
    "sum_all",
    "take_per_row",
    "tensor",
    "transformer_layer",
    "transformer_step",
    "transpose",
]
