"""Transformer building blocks composed from autodiff primitives.

Everything here is a pure function of parameter bundles and input tensors,
so gradient checks cover the whole surface via the primitives' backward
rules.  Attention takes an explicit boolean mask: queries only see keys
whose mask entry is true, and a fully-masked query row is either an error
or (for the duplication summary at the first decoding step) an exact zero
output row.
"""

from __future__ import annotations

import math

import numpy as np

from .params import AttentionBlockParams, LayerParams
from .tensor import (
    KernelError,
    Tensor,
    add,
    add_rowvec,
    concat_cols,
    log,
    log_softmax_rows,
    masked_softmax_rows,
    matmul,
    maximum_const,
    mul,
    neg,
    relu,
    scale,
    scale_rows,
    slice_cols,
    sub,
    sum_all,
    take_per_row,
    tensor,
    transpose,
)

KL_FLOOR = 1e-12


def multi_head_attention(
    block: AttentionBlockParams,
    queries: Tensor,
    keys_values: Tensor,
    mask: np.ndarray | None = None,
    zero_on_empty: bool = False,
) -> Tensor:
    """Scaled dot-product attention with h parallel heads.

    ``mask[i, j]`` false blocks query i from key j; position logits are set
    to -inf before the softmax.  With ``zero_on_empty``, a query row with no
    allowed keys yields the zero vector (used when no duplication context
    exists yet); otherwise such a row is a kernel error.
    """
    d, h = block.d_model, block.n_heads
    if queries.shape[1] != d or keys_values.shape[1] != d:
        raise KernelError(
            f"attention expects width {d}, got {queries.shape} / {keys_values.shape}"
        )
    d_head = d // h
    q = matmul(queries, block.w_q)
    k = matmul(keys_values, block.w_k)
    v = matmul(keys_values, block.w_v)
    heads = []
    inv_sqrt = 1.0 / math.sqrt(d_head)
    for i in range(h):
        lo, hi = i * d_head, (i + 1) * d_head
        logits = scale(matmul(slice_cols(q, lo, hi), transpose(slice_cols(k, lo, hi))), inv_sqrt)
        weights = masked_softmax_rows(logits, mask, zero_on_empty=zero_on_empty)
        heads.append(matmul(weights, slice_cols(v, lo, hi)))
    out = add_rowvec(matmul(concat_cols(heads), block.w_o), block.b_o)
    if zero_on_empty and mask is not None:
        alive = np.asarray(mask, dtype=bool).any(axis=1).astype(np.float64)
        if not alive.all():
            out = scale_rows(out, alive)
    return out


def feed_forward(layer: LayerParams, x: Tensor) -> Tensor:
    hidden = relu(add_rowvec(matmul(x, layer.ff_w1), layer.ff_b1))
    return add_rowvec(matmul(hidden, layer.ff_w2), layer.ff_b2)


def transformer_step(
    layer: LayerParams,
    x: Tensor,
    keys_values: Tensor,
    mask: np.ndarray | None = None,
) -> Tensor:
    """One residual layer: LN(x + attention) then LN(a + feed-forward)."""
    from .tensor import layer_norm

    a = layer_norm(
        add(x, multi_head_attention(layer.attn, x, keys_values, mask)),
        layer.ln1_gain,
        layer.ln1_bias,
    )
    return layer_norm(add(a, feed_forward(layer, a)), layer.ln2_gain, layer.ln2_bias)


def cross_entropy(logits: Tensor, target_ids) -> Tensor:
    """Summed negative log-likelihood of the target id in each row."""
    log_probs = log_softmax_rows(logits)
    return neg(sum_all(take_per_row(log_probs, target_ids)))


def kl_divergence(p, q, floor: float = KL_FLOOR) -> Tensor:
    """KL(p || q) between probability vectors, with q floored before the log.

    Terms with p_i = 0 contribute exactly zero.  Inputs must each sum to 1
    within 1e-6.  Differentiable through both arguments when they are graph
    tensors.
    """
    p = p if isinstance(p, Tensor) else tensor(p)
    q = q if isinstance(q, Tensor) else tensor(q)
    if p.shape != q.shape or p.data.ndim != 1:
        raise KernelError(f"kl_divergence expects equal-length vectors, got {p.shape} / {q.shape}")
    for name, t in (("p", p), ("q", q)):
        total = float(t.data.sum())
        if abs(total - 1.0) > 1e-6 or (t.data < 0).any():
            raise KernelError(f"kl_divergence: {name} is not a probability vector (sum={total})")
    log_p = log(maximum_const(p, floor))
    log_q = log(maximum_const(q, floor))
    return sum_all(mul(p, sub(log_p, log_q)))
