"""Axial multi-head self-attention and the standard pre-norm block.

Row attention mixes positions along a single spatial axis at a time, so cost
stays linear in the number of rows/columns instead of quadratic in pixels.
Inputs are [batch, rows, cols, width]; row attention attends over the cols
axis, column attention is the same computation on the transposed grid with
the same weights.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import DimensionError
from .tensor import Tensor

LN_EPS = 1e-6
MASK_FILL = -1e9

# Test hook: called with the attention-weight shape of every softmax. Lets the
# suite prove no op ever attends over the full pixel grid at once.
_score_shape_hook = None


def set_score_shape_hook(fn):
    global _score_shape_hook
    _score_shape_hook = fn


@dataclass
class LayerNormParams:
    beta: Tensor  # multiplies the normalized activations
    gamma: Tensor  # shifts them


@dataclass
class AttentionParams:
    """One pre-norm block: LN -> attention -> residual, LN -> MLP -> residual."""

    heads: int
    ln_attn: LayerNormParams
    qkv_w: Tensor  # [D, 3D], query/key/value fused
    out_w: Tensor  # [D, D], concatenated heads back to model width
    ln_mlp: LayerNormParams
    mlp_in_w: Tensor  # [D, F]
    mlp_in_b: Tensor  # [F]
    mlp_out_w: Tensor  # [F, D]
    mlp_out_b: Tensor  # [D]
    ln_final: LayerNormParams | None = field(default=None)


def init_layer_norm(d: int, dtype=np.float32) -> LayerNormParams:
    return LayerNormParams(beta=T.ones_param((d,), dtype), gamma=T.zeros_param((d,), dtype))


def init_attention_params(
    rng: np.random.Generator,
    d: int,
    heads: int,
    mlp_width: int,
    std: float = 0.02,
    final_ln: bool = False,
    dtype=np.float32,
) -> AttentionParams:
    if d % heads != 0:
        raise DimensionError(f"model width {d} not divisible by {heads} heads")
    return AttentionParams(
        heads=heads,
        ln_attn=init_layer_norm(d, dtype),
        qkv_w=T.randn_param(rng, (d, 3 * d), std, dtype),
        out_w=T.randn_param(rng, (d, d), std, dtype),
        ln_mlp=init_layer_norm(d, dtype),
        mlp_in_w=T.randn_param(rng, (d, mlp_width), std, dtype),
        mlp_in_b=T.zeros_param((mlp_width,), dtype),
        mlp_out_w=T.randn_param(rng, (mlp_width, d), std, dtype),
        mlp_out_b=T.zeros_param((d,), dtype),
        ln_final=init_layer_norm(d, dtype) if final_ln else None,
    )


_mask_cache: dict[tuple, np.ndarray] = {}


def causal_mask(n: int, dtype) -> np.ndarray:
    """[n, n] additive mask: 0 where key <= query position, -1e9 above the diagonal.

    exp(-1e9) underflows to exactly 0.0 in both float32 and float64, so masked
    positions contribute nothing, bit for bit.
    """
    key = (n, np.dtype(dtype).name)
    m = _mask_cache.get(key)
    if m is None:
        m = np.triu(np.full((n, n), MASK_FILL, dtype=dtype), k=1)
        _mask_cache[key] = m
    return m


def split_heads(x: Tensor, heads: int) -> Tensor:
    """[..., W, D] -> [..., heads, W, D/heads]."""
    *lead, w, d = x.shape
    if d % heads != 0:
        raise DimensionError(f"feature width {d} not divisible by {heads} heads")
    x = T.reshape(x, (*lead, w, heads, d // heads))
    return T.swap_axes(x, -3, -2)


def merge_heads(x: Tensor) -> Tensor:
    """[..., heads, W, Dh] -> [..., W, heads*Dh]."""
    *lead, h, w, dh = x.shape
    x = T.swap_axes(x, -3, -2)
    return T.reshape(x, (*lead, w, h * dh))


def multi_head_attention(q: Tensor, k: Tensor, v: Tensor, heads: int, mask: str) -> Tensor:
    """Scaled dot-product attention over the second-to-last axis.

    q, k, v: [..., W, D]. Returns [..., W, D] (heads re-concatenated, before the
    output projection). mask is "none" or "causal".
    """
    if mask not in ("none", "causal"):
        raise DimensionError(f"unknown mask kind {mask!r}")
    qh, kh, vh = split_heads(q, heads), split_heads(k, heads), split_heads(v, heads)
    dh = qh.shape[-1]
    scores = T.scale(T.matmul(qh, T.swap_axes(kh, -1, -2)), 1.0 / np.sqrt(dh))
    if mask == "causal":
        w = scores.shape[-1]
        scores = T.add(scores, Tensor(causal_mask(w, scores.dtype)))
    if _score_shape_hook is not None:
        _score_shape_hook(scores.shape)
    weights = T.softmax(scores, axis=-1)
    return merge_heads(T.matmul(weights, vh))


def qkv_project(x: Tensor, params: AttentionParams) -> tuple[Tensor, Tensor, Tensor]:
    d = x.shape[-1]
    qkv = T.matmul(x, params.qkv_w)
    return (
        T.slice_last(qkv, 0, d),
        T.slice_last(qkv, d, 2 * d),
        T.slice_last(qkv, 2 * d, 3 * d),
    )


def row_self_attention(x: Tensor, params: AttentionParams, mask: str = "none") -> Tensor:
    """Self-attention along the columns-within-a-row axis of [B, R, C, D].

    No normalization happens here; the block normalizes before calling in.
    """
    q, k, v = qkv_project(x, params)
    att = multi_head_attention(q, k, v, params.heads, mask)
    return T.matmul(att, params.out_w)


def column_self_attention(x: Tensor, params: AttentionParams, mask: str = "none") -> Tensor:
    """Row attention on the transposed grid, same weights: mixes within a column."""
    xt = T.swap_axes(x, 1, 2)
    return T.swap_axes(row_self_attention(xt, params, mask), 1, 2)


def mlp(x: Tensor, params: AttentionParams) -> Tensor:
    h = T.relu(T.add(T.matmul(x, params.mlp_in_w), params.mlp_in_b))
    return T.add(T.matmul(h, params.mlp_out_w), params.mlp_out_b)


def attention_block(x: Tensor, params: AttentionParams, axis: str = "row", mask: str = "none") -> Tensor:
    """Pre-norm residual block: x + Att(LN(x)), then + MLP(LN(.))."""
    if axis not in ("row", "column"):
        raise DimensionError(f"unknown attention axis {axis!r}")
    attend = row_self_attention if axis == "row" else column_self_attention
    h = T.layer_norm(x, params.ln_attn.beta, params.ln_attn.gamma, LN_EPS)
    x = T.add(attend(h, params, mask), x)
    h = T.layer_norm(x, params.ln_mlp.beta, params.ln_mlp.gamma, LN_EPS)
    x = T.add(mlp(h, params), x)
    if params.ln_final is not None:
        x = T.layer_norm(x, params.ln_final.beta, params.ln_final.gamma, LN_EPS)
    return x


@dataclass
class AxialBlockPair:
    """One unmasked encoder step: a row block followed by a column block."""

    row: AttentionParams
    col: AttentionParams


def axial_encode(x: Tensor, pairs: list[AxialBlockPair]) -> Tensor:
    for pair in pairs:
        x = attention_block(x, pair.row, axis="row", mask="none")
        x = attention_block(x, pair.col, axis="column", mask="none")
    return x
