"""Conditioning-aware variants of the attention block.

Instead of only adding context to the input, these layers let a context grid
modulate the block from inside: elementwise scale/shift of q, k, v, of the MLP
output, and of the layer-norm affine pair. Every modulation is an identity at
init (scales start at exactly 1, shifts at exactly 0), so a freshly built
conditional block computes bit for bit the same function as the plain block.

Ablation flags choose which modulations run; weights for all of them always
exist, so one checkpoint can be evaluated under any flag combination.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .attention import (
    LN_EPS,
    AttentionParams,
    LayerNormParams,
    column_self_attention,
    init_attention_params,
    init_layer_norm,
    mlp,
    multi_head_attention,
    qkv_project,
    row_self_attention,
)
from .errors import ConfigError, DimensionError
from .tensor import Tensor

COND_MODES = ("scale_and_shift", "scale_only", "shift_only")
CATT_TARGETS = ("qkv", "v_only")
CLN_POOLS = ("learnable", "fixed_mean")


@dataclass(frozen=True)
class AblationFlags:
    """Which conditional machinery is live. Immutable per model instance."""

    use_catt: bool = True
    use_cmlp: bool = True
    use_cln: bool = True
    cond_mode: str = "scale_and_shift"
    catt_targets: str = "qkv"
    cln_pool: str = "learnable"

    def __post_init__(self):
        if self.cond_mode not in COND_MODES:
            raise ConfigError(f"cond_mode must be one of {COND_MODES}, got {self.cond_mode!r}")
        if self.catt_targets not in CATT_TARGETS:
            raise ConfigError(f"catt_targets must be one of {CATT_TARGETS}, got {self.catt_targets!r}")
        if self.cln_pool not in CLN_POOLS:
            raise ConfigError(f"cln_pool must be one of {CLN_POOLS}, got {self.cln_pool!r}")


BASELINE_ADDITIVE = AblationFlags(use_catt=False, use_cmlp=False, use_cln=False)


@dataclass
class ScaleShiftParams:
    """Predicts an elementwise scale (1 + c @ scale_w) and shift (c @ shift_w)."""

    scale_w: Tensor  # [D, D], zero at init
    shift_w: Tensor  # [D, D], zero at init


@dataclass
class CondAttentionParams:
    q: ScaleShiftParams
    k: ScaleShiftParams
    v: ScaleShiftParams


@dataclass
class CondLayerNormParams:
    """Context-dependent affine for layer norm.

    The context grid is flattened to [B, S, D] and pooled over S with a
    learnable weight vector (init 1/S, i.e. exactly a mean); the pooled [B, D]
    vector predicts the scale offset and the shift.
    """

    pool: Tensor  # [S], S = rows*cols of the context grid
    scale_w: Tensor  # [D, D]
    shift_w: Tensor  # [D, D]


@dataclass
class ConditionalBlockParams:
    base: AttentionParams
    att_cond: CondAttentionParams
    mlp_cond: ScaleShiftParams
    ln_attn_cond: CondLayerNormParams
    ln_mlp_cond: CondLayerNormParams
    ln_final_cond: CondLayerNormParams | None = field(default=None)


def init_scale_shift(d: int, dtype=np.float32) -> ScaleShiftParams:
    return ScaleShiftParams(scale_w=T.zeros_param((d, d), dtype), shift_w=T.zeros_param((d, d), dtype))


def init_cond_layer_norm(d: int, context_size: int, dtype=np.float32) -> CondLayerNormParams:
    return CondLayerNormParams(
        pool=T.full_param((context_size,), 1.0 / context_size, dtype),
        scale_w=T.zeros_param((d, d), dtype),
        shift_w=T.zeros_param((d, d), dtype),
    )


def init_conditional_block(
    rng: np.random.Generator,
    d: int,
    heads: int,
    mlp_width: int,
    context_size: int,
    std: float = 0.02,
    final_ln: bool = False,
    dtype=np.float32,
) -> ConditionalBlockParams:
    return ConditionalBlockParams(
        base=init_attention_params(rng, d, heads, mlp_width, std, final_ln, dtype),
        att_cond=CondAttentionParams(
            q=init_scale_shift(d, dtype), k=init_scale_shift(d, dtype), v=init_scale_shift(d, dtype)
        ),
        mlp_cond=init_scale_shift(d, dtype),
        ln_attn_cond=init_cond_layer_norm(d, context_size, dtype),
        ln_mlp_cond=init_cond_layer_norm(d, context_size, dtype),
        ln_final_cond=init_cond_layer_norm(d, context_size, dtype) if final_ln else None,
    )


def modulate(z: Tensor, c: Tensor, params: ScaleShiftParams, cond_mode: str) -> Tensor:
    """(1 + c @ scale_w) * z + c @ shift_w, with terms dropped per cond_mode."""
    out = z
    if cond_mode != "shift_only":
        out = T.mul(T.shift_constant(T.matmul(c, params.scale_w), 1.0), out)
    if cond_mode != "scale_only":
        out = T.add(out, T.matmul(c, params.shift_w))
    return out


def cond_self_attention(
    x: Tensor,
    c: Tensor,
    base: AttentionParams,
    cond: CondAttentionParams,
    mask: str = "none",
    axis: str = "row",
    cond_mode: str = "scale_and_shift",
    catt_targets: str = "qkv",
) -> Tensor:
    """Self-attention whose q/k/v are scaled and shifted by the context grid.

    x and c share the [B, R, C, D] grid shape; modulation is positionwise on
    the full-width q/k/v, i.e. shared across heads. With catt_targets="v_only"
    queries and keys pass through unmodulated.
    """
    if c.shape != x.shape:
        raise DimensionError(f"context shape {c.shape} does not match input shape {x.shape}")
    if axis == "column":
        xt, ct = T.swap_axes(x, 1, 2), T.swap_axes(c, 1, 2)
        return T.swap_axes(
            cond_self_attention(xt, ct, base, cond, mask, "row", cond_mode, catt_targets), 1, 2
        )
    q, k, v = qkv_project(x, base)
    if catt_targets == "qkv":
        q = modulate(q, c, cond.q, cond_mode)
        k = modulate(k, c, cond.k, cond_mode)
    v = modulate(v, c, cond.v, cond_mode)
    att = multi_head_attention(q, k, v, base.heads, mask)
    return T.matmul(att, base.out_w)


def cond_mlp(x: Tensor, c: Tensor, base: AttentionParams, cond: ScaleShiftParams,
             cond_mode: str = "scale_and_shift") -> Tensor:
    """Plain two-layer MLP whose output is scaled/shifted by the context."""
    if c.shape != x.shape:
        raise DimensionError(f"context shape {c.shape} does not match input shape {x.shape}")
    return modulate(mlp(x, base), c, cond, cond_mode)


def cond_layer_norm(
    x: Tensor,
    c: Tensor,
    cond: CondLayerNormParams,
    cond_mode: str = "scale_and_shift",
    cln_pool: str = "learnable",
    eps: float = LN_EPS,
) -> Tensor:
    """Layer norm whose affine pair is predicted from spatially pooled context.

    The base beta/gamma are unused here: scale = 1 + pooled @ scale_w and
    shift = pooled @ shift_w take their place (identity at init).
    """
    if c.shape != x.shape:
        raise DimensionError(f"context shape {c.shape} does not match input shape {x.shape}")
    b, rows, cols, d = c.shape
    s = rows * cols
    if cond.pool.shape != (s,):
        raise DimensionError(
            f"pool vector has length {cond.pool.shape[0]} but context grid has {s} positions"
        )
    flat = T.reshape(c, (b, s, d))
    if cln_pool == "learnable":
        weights = T.reshape(cond.pool, (1, 1, s))
    else:
        weights = Tensor(np.full((1, 1, s), 1.0 / s, dtype=c.dtype))
    pooled = T.reshape(T.matmul(weights, flat), (b, 1, 1, d))
    out = T.normalize(x, eps)
    if cond_mode != "shift_only":
        out = T.mul(T.shift_constant(T.matmul(pooled, cond.scale_w), 1.0), out)
    if cond_mode != "scale_only":
        out = T.add(out, T.matmul(pooled, cond.shift_w))
    return out


def _norm(x: Tensor, c: Tensor, base_ln: LayerNormParams, cond_ln: CondLayerNormParams,
          flags: AblationFlags) -> Tensor:
    if flags.use_cln:
        return cond_layer_norm(x, c, cond_ln, flags.cond_mode, flags.cln_pool, LN_EPS)
    return T.layer_norm(x, base_ln.beta, base_ln.gamma, LN_EPS)


def cond_attention_block(
    x: Tensor,
    c: Tensor,
    params: ConditionalBlockParams,
    axis: str = "row",
    mask: str = "none",
    flags: AblationFlags = AblationFlags(),
) -> Tensor:
    """Pre-norm residual block with context-modulated internals.

    With all flags off this routes through exactly the same helpers as
    attention_block, so the "conditioning by addition only" baseline is the
    plain block applied to an input that already had the context added.
    """
    if axis not in ("row", "column"):
        raise DimensionError(f"unknown attention axis {axis!r}")
    base = params.base
    h = _norm(x, c, base.ln_attn, params.ln_attn_cond, flags)
    if flags.use_catt:
        att = cond_self_attention(h, c, base, params.att_cond, mask, axis,
                                  flags.cond_mode, flags.catt_targets)
    else:
        attend = row_self_attention if axis == "row" else column_self_attention
        att = attend(h, base, mask)
    x = T.add(att, x)
    h = _norm(x, c, base.ln_mlp, params.ln_mlp_cond, flags)
    if flags.use_cmlp:
        body = cond_mlp(h, c, base, params.mlp_cond, flags.cond_mode)
    else:
        body = mlp(h, base)
    x = T.add(body, x)
    if base.ln_final is not None:
        if flags.use_cln and params.ln_final_cond is not None:
            x = cond_layer_norm(x, c, params.ln_final_cond, flags.cond_mode, flags.cln_pool, LN_EPS)
        else:
            x = T.layer_norm(x, base.ln_final.beta, base.ln_final.gamma, LN_EPS)
    return x
