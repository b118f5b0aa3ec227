"""Autoregressive coarse colorizer.

Pipeline per forward pass, all grids [B, R, C, ...] at the coarse resolution:

  context  = encoder(grayscale)                       unmasked axial stack
  e        = embed(coarse colors) + positions
  outer    = shift_down( [row-att, masked-col-att] x N  applied to e+context )
  logits   = head( [masked-row-att] x N  applied to outer + context + shift_right(e) )

Row r of `outer` then only sees color rows < r, and masked row attention adds
columns < c within the current row, so logits at (r, c) depend on the colors
strictly before (r, c) in raster order plus the grayscale everywhere. The
conditional sub-layers are driven by the encoder output alone, which keeps the
pooled conditioning causal too.

A second head predicts every pixel's color from the context alone (no color
inputs); it trains as a small auxiliary term and is the regularizer for the
parallel upsamplers' teacher-free sampling story.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .attention import AttentionParams, AxialBlockPair, attention_block, axial_encode, init_attention_params
from .conditional import (
    AblationFlags,
    ConditionalBlockParams,
    cond_attention_block,
    init_conditional_block,
)
from .errors import ConfigError, DimensionError, ResolutionError, VocabularyError
from .tensor import Tensor

GRAY_LEVELS = 256


@dataclass
class ModelConfig:
    d: int = 512
    heads: int = 4
    blocks: int = 4
    rows: int = 64
    cols: int = 64
    height: int | None = None  # target output resolution; defaults to 4x the grid
    width: int | None = None
    vocab: int = 512
    mlp_width: int | None = None  # defaults to 4*d
    encoder_blocks: int | None = None  # defaults to blocks
    upsampler_blocks: int = 2
    use_positional: bool = True
    final_layer_norm: bool = False
    per_channel_trunk: bool = False
    init_std: float = 0.02
    ablation: AblationFlags = field(default_factory=AblationFlags)

    def __post_init__(self):
        if self.height is None:
            self.height = 4 * self.rows
        if self.width is None:
            self.width = 4 * self.cols
        if self.mlp_width is None:
            self.mlp_width = 4 * self.d
        if self.encoder_blocks is None:
            self.encoder_blocks = self.blocks
        if self.d < 1 or self.d % self.heads != 0:
            raise ConfigError(f"width {self.d} must be a positive multiple of heads {self.heads}")
        if min(self.blocks, self.encoder_blocks, self.upsampler_blocks) < 1:
            raise ConfigError("every attention stack needs at least one block")
        if self.rows < 1 or self.cols < 1:
            raise ConfigError(f"grid {self.rows}x{self.cols} must be at least 1x1")
        if self.vocab < 2:
            raise ConfigError(f"vocabulary size {self.vocab} must be at least 2")
        if self.height % self.rows or self.width % self.cols:
            raise ConfigError(
                f"output {self.height}x{self.width} not a multiple of grid {self.rows}x{self.cols}"
            )
        if not isinstance(self.ablation, AblationFlags):
            raise ConfigError("ablation must be an AblationFlags instance")


@dataclass
class OuterBlockParams:
    row: ConditionalBlockParams
    col: ConditionalBlockParams


@dataclass
class CoreParams:
    gray_embed: Tensor
    enc_row_pos: Tensor
    enc_col_pos: Tensor
    encoder: list[AxialBlockPair]
    coarse_embed: Tensor
    dec_row_pos: Tensor
    dec_col_pos: Tensor
    outer: list[OuterBlockParams]
    inner: list[ConditionalBlockParams]
    head_w: Tensor
    head_b: Tensor
    parallel_w: Tensor


def init_core_params(rng: np.random.Generator, cfg: ModelConfig, dtype=np.float32) -> CoreParams:
    d, s = cfg.d, cfg.init_std
    grid = cfg.rows * cfg.cols

    def cond_block():
        return init_conditional_block(
            rng, d, cfg.heads, cfg.mlp_width, grid, s, cfg.final_layer_norm, dtype
        )

    return CoreParams(
        gray_embed=T.randn_param(rng, (GRAY_LEVELS, d), s, dtype),
        enc_row_pos=T.randn_param(rng, (cfg.rows, d), s, dtype),
        enc_col_pos=T.randn_param(rng, (cfg.cols, d), s, dtype),
        encoder=[
            AxialBlockPair(
                row=init_attention_params(rng, d, cfg.heads, cfg.mlp_width, s, cfg.final_layer_norm, dtype),
                col=init_attention_params(rng, d, cfg.heads, cfg.mlp_width, s, cfg.final_layer_norm, dtype),
            )
            for _ in range(cfg.encoder_blocks)
        ],
        coarse_embed=T.randn_param(rng, (cfg.vocab, d), s, dtype),
        dec_row_pos=T.randn_param(rng, (cfg.rows, d), s, dtype),
        dec_col_pos=T.randn_param(rng, (cfg.cols, d), s, dtype),
        outer=[OuterBlockParams(row=cond_block(), col=cond_block()) for _ in range(cfg.blocks)],
        inner=[cond_block() for _ in range(cfg.blocks)],
        head_w=T.randn_param(rng, (d, cfg.vocab), s, dtype),
        head_b=T.zeros_param((cfg.vocab,), dtype),
        parallel_w=T.randn_param(rng, (d, cfg.vocab), s, dtype),
    )


def add_positional(x: Tensor, row_pos: Tensor, col_pos: Tensor) -> Tensor:
    rows, d = row_pos.shape
    return T.add(T.add(x, T.reshape(row_pos, (rows, 1, d))), col_pos)


def shift_down(x: Tensor) -> Tensor:
    """Grid rows move down one step; row 0 becomes zeros."""
    return T.shift_one(x, axis=1)


def shift_right(x: Tensor) -> Tensor:
    """Grid columns move right one step; column 0 becomes zeros."""
    return T.shift_one(x, axis=2)


def _check_grid(arr: np.ndarray, cfg: ModelConfig, what: str):
    if arr.ndim != 3:
        raise DimensionError(f"{what} must be [batch, rows, cols], got shape {arr.shape}")
    if arr.shape[1:] != (cfg.rows, cfg.cols):
        raise ResolutionError(
            f"{what} grid {arr.shape[1]}x{arr.shape[2]} does not match configured {cfg.rows}x{cfg.cols}"
        )


def grayscale_encoder(gray: np.ndarray, params: CoreParams, cfg: ModelConfig) -> Tensor:
    """Unmasked axial stack over embedded gray levels -> context grid [B,R,C,D]."""
    _check_grid(gray, cfg, "grayscale")
    x = T.embedding_lookup(params.gray_embed, gray)
    if cfg.use_positional:
        x = add_positional(x, params.enc_row_pos, params.enc_col_pos)
    return axial_encode(x, params.encoder)


def embed_coarse(coarse: np.ndarray, params: CoreParams, cfg: ModelConfig) -> Tensor:
    _check_grid(coarse, cfg, "coarse colors")
    x = T.embedding_lookup(params.coarse_embed, coarse)
    if cfg.use_positional:
        x = add_positional(x, params.dec_row_pos, params.dec_col_pos)
    return x


def outer_decoder(x: Tensor, context: Tensor, params: CoreParams, cfg: ModelConfig) -> Tensor:
    """N times (unmasked row attention, causal column attention), then shift down.

    The caller passes x = embedded colors + context. After the shift, output
    row r summarizes color rows strictly above r.
    """
    flags = cfg.ablation
    for blk in params.outer:
        x = cond_attention_block(x, context, blk.row, axis="row", mask="none", flags=flags)
        x = cond_attention_block(x, context, blk.col, axis="column", mask="causal", flags=flags)
    return shift_down(x)


def inner_decoder(outer: Tensor, embedded: Tensor, context: Tensor,
                  params: CoreParams, cfg: ModelConfig) -> Tensor:
    """Causal row attention over (row summary + context + colors left of here)."""
    flags = cfg.ablation
    x = T.add(T.add(outer, context), shift_right(embedded))
    for blk in params.inner:
        x = cond_attention_block(x, context, blk, axis="row", mask="causal", flags=flags)
    return T.add(T.matmul(x, params.head_w), params.head_b)


@dataclass
class CoreActivations:
    context: Tensor  # encoder output [B,R,C,D]
    embedded: Tensor  # embedded coarse colors + positions
    outer: Tensor  # shifted outer-decoder output
    logits_ar: Tensor  # [B,R,C,vocab], full autoregressive head
    logits_parallel: Tensor  # [B,R,C,vocab], grayscale-only head


def core_forward(gray: np.ndarray, coarse: np.ndarray, params: CoreParams, cfg: ModelConfig) -> CoreActivations:
    gray = np.asarray(gray)
    coarse = np.asarray(coarse)
    if gray.shape != coarse.shape:
        raise DimensionError(f"grayscale {gray.shape} and coarse {coarse.shape} shapes disagree")
    if coarse.size and (coarse.min() < 0 or coarse.max() >= cfg.vocab):
        bad = int(coarse.min()) if coarse.min() < 0 else int(coarse.max())
        raise VocabularyError(f"coarse color {bad} outside vocabulary of size {cfg.vocab}")
    context = grayscale_encoder(gray, params, cfg)
    embedded = embed_coarse(coarse, params, cfg)
    outer = outer_decoder(T.add(embedded, context), context, params, cfg)
    logits_ar = inner_decoder(outer, embedded, context, params, cfg)
    logits_parallel = T.matmul(context, params.parallel_w)
    return CoreActivations(context, embedded, outer, logits_ar, logits_parallel)


def core_nll(gray: np.ndarray, coarse: np.ndarray, params: CoreParams, cfg: ModelConfig) -> tuple[Tensor, Tensor]:
    """Mean nats/position for the autoregressive head and the parallel head."""
    acts = core_forward(gray, coarse, params, cfg)
    coarse = np.asarray(coarse)
    return T.gather_nll(acts.logits_ar, coarse), T.gather_nll(acts.logits_parallel, coarse)


# ---------------------------------------------------------------------------
# sampling


def draw_index(probs: np.ndarray, u: float, top_k: int | None = None) -> int:
    """Inverse-CDF draw from a categorical, optionally restricted to the top K.

    Ties at the K-th probability keep the lower color index (stable sort).
    The cumulative sum is taken in index order and searched for the first
    entry strictly above u.
    """
    p = np.asarray(probs, dtype=np.float64)
    if top_k is not None:
        if top_k < 1:
            raise ConfigError(f"top_k must be at least 1, got {top_k}")
        if top_k < p.size:
            keep = np.argsort(-p, kind="stable")[:top_k]
            restricted = np.zeros_like(p)
            restricted[keep] = p[keep]
            p = restricted
    p = p / p.sum()
    cdf = np.cumsum(p)
    return int(min(np.searchsorted(cdf, u, side="right"), p.size - 1))


def _pixel_probs(logits_row: np.ndarray) -> np.ndarray:
    z = logits_row.astype(np.float64)
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


def sample_core(gray: np.ndarray, params: CoreParams, cfg: ModelConfig, seed: int,
                top_k: int | None = None) -> np.ndarray:
    """Draw a coarse color grid per batch element, raster order.

    The encoder runs once, the outer decoder once per row, the inner decoder
    once per pixel. Each batch element owns an independent RNG stream seeded
    seed + its index and consumes exactly one uniform per pixel, so results do
    not depend on how elements are batched together.
    """
    gray = np.asarray(gray)
    _check_grid(gray, cfg, "grayscale")
    b = gray.shape[0]
    streams = [np.random.default_rng(seed + i) for i in range(b)]
    coarse = np.zeros((b, cfg.rows, cfg.cols), dtype=np.int64)
    with T.no_grad():
        context = grayscale_encoder(gray, params, cfg)
        for r in range(cfg.rows):
            outer = outer_decoder(
                T.add(embed_coarse(coarse, params, cfg), context), context, params, cfg
            )
            for c in range(cfg.cols):
                embedded = embed_coarse(coarse, params, cfg)
                logits = inner_decoder(outer, embedded, context, params, cfg)
                for i in range(b):
                    u = streams[i].random()
                    probs = _pixel_probs(logits.data[i, r, c])
                    coarse[i, r, c] = draw_index(probs, u, top_k)
    return coarse


def max_color_probability(gray: np.ndarray, coarse: np.ndarray, params: CoreParams,
                          cfg: ModelConfig) -> np.ndarray:
    """Per-pixel max softmax probability of the autoregressive head, [B,R,C] float64."""
    with T.no_grad():
        acts = core_forward(gray, coarse, params, cfg)
    z = acts.logits_ar.data.astype(np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e.max(axis=-1) / e.sum(axis=-1)
