"""Parallel color and spatial upsamplers.

Both share one shape: embed each channel's current value, add an embedded
grayscale grid, run a small unmasked axial stack, and read out 256 logits per
pixel per channel. Every pixel is predicted in parallel (no autoregression);
channels share trunk weights by default and always have their own embeddings.

  color upsampler:   3-bit channel levels at the coarse grid -> 256 levels
  spatial upsampler: naively upsampled low-res RGB at full res -> 256 levels
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .attention import AxialBlockPair, axial_encode, init_attention_params
from .core import GRAY_LEVELS, ModelConfig, add_positional
from .data import CHANNEL_LEVELS, coarse_to_levels
from .errors import DimensionError, ResolutionError, VocabularyError
from .tensor import Tensor

OUTPUT_LEVELS = 256


@dataclass
class ChannelDistribution:
    """Per-channel 256-way logits over one grid, [B, R, C, 256] each."""

    red: Tensor
    green: Tensor
    blue: Tensor

    def as_list(self) -> list[Tensor]:
        return [self.red, self.green, self.blue]


@dataclass
class UpsamplerParams:
    channel_embeds: list[Tensor]  # three [input_vocab, D] tables
    gray_embed: Tensor  # [256, D]
    row_pos: Tensor
    col_pos: Tensor
    trunks: list[list[AxialBlockPair]]  # one shared trunk, or three with per_channel_trunk
    head_w: Tensor  # [D, 256]
    head_b: Tensor  # [256]


def init_upsampler_params(
    rng: np.random.Generator,
    cfg: ModelConfig,
    input_vocab: int,
    rows: int,
    cols: int,
    dtype=np.float32,
) -> UpsamplerParams:
    d, s = cfg.d, cfg.init_std

    def trunk():
        return [
            AxialBlockPair(
                row=init_attention_params(rng, d, cfg.heads, cfg.mlp_width, s, cfg.final_layer_norm, dtype),
                col=init_attention_params(rng, d, cfg.heads, cfg.mlp_width, s, cfg.final_layer_norm, dtype),
            )
            for _ in range(cfg.upsampler_blocks)
        ]

    return UpsamplerParams(
        channel_embeds=[T.randn_param(rng, (input_vocab, d), s, dtype) for _ in range(3)],
        gray_embed=T.randn_param(rng, (GRAY_LEVELS, d), s, dtype),
        row_pos=T.randn_param(rng, (rows, d), s, dtype),
        col_pos=T.randn_param(rng, (cols, d), s, dtype),
        trunks=[trunk() for _ in range(3 if cfg.per_channel_trunk else 1)],
        head_w=T.randn_param(rng, (d, OUTPUT_LEVELS), s, dtype),
        head_b=T.zeros_param((OUTPUT_LEVELS,), dtype),
    )


def init_color_upsampler(rng: np.random.Generator, cfg: ModelConfig, dtype=np.float32) -> UpsamplerParams:
    return init_upsampler_params(rng, cfg, CHANNEL_LEVELS, cfg.rows, cfg.cols, dtype)


def init_spatial_upsampler(rng: np.random.Generator, cfg: ModelConfig, dtype=np.float32) -> UpsamplerParams:
    return init_upsampler_params(rng, cfg, OUTPUT_LEVELS, cfg.height, cfg.width, dtype)


def _channel_logits(channels: np.ndarray, gray: np.ndarray, params: UpsamplerParams,
                    cfg: ModelConfig) -> ChannelDistribution:
    channels = np.asarray(channels)
    gray = np.asarray(gray)
    if channels.ndim != 4 or channels.shape[-1] != 3:
        raise DimensionError(f"channel grid must be [B, R, C, 3], got {channels.shape}")
    if gray.shape != channels.shape[:-1]:
        raise DimensionError(f"grayscale {gray.shape} does not match channel grid {channels.shape[:-1]}")
    rows, cols = channels.shape[1:3]
    if params.row_pos.shape[0] != rows or params.col_pos.shape[0] != cols:
        raise ResolutionError(
            f"grid {rows}x{cols} does not match positional tables "
            f"{params.row_pos.shape[0]}x{params.col_pos.shape[0]}"
        )
    gray_emb = T.embedding_lookup(params.gray_embed, gray)
    out = []
    for k in range(3):
        x = T.add(T.embedding_lookup(params.channel_embeds[k], channels[..., k]), gray_emb)
        if cfg.use_positional:
            x = add_positional(x, params.row_pos, params.col_pos)
        trunk = params.trunks[k] if len(params.trunks) == 3 else params.trunks[0]
        h = axial_encode(x, trunk)
        out.append(T.add(T.matmul(h, params.head_w), params.head_b))
    return ChannelDistribution(*out)


def color_upsampler_forward(coarse: np.ndarray, gray_lo: np.ndarray, params: UpsamplerParams,
                            cfg: ModelConfig) -> ChannelDistribution:
    """Packed coarse indices + coarse grayscale -> per-channel 256-way logits."""
    levels = coarse_to_levels(coarse)
    return _channel_logits(levels, gray_lo, params, cfg)


def spatial_upsampler_forward(rgb_lo: np.ndarray, gray_hi: np.ndarray, params: UpsamplerParams,
                              cfg: ModelConfig) -> ChannelDistribution:
    """Low-res RGB is replicated up to the grayscale resolution, then refined."""
    rgb_lo = np.asarray(rgb_lo)
    gray_hi = np.asarray(gray_hi)
    if rgb_lo.ndim != 4 or rgb_lo.shape[-1] != 3:
        raise DimensionError(f"low-res RGB must be [B, R, C, 3], got {rgb_lo.shape}")
    if gray_hi.ndim != 3:
        raise DimensionError(f"grayscale must be [B, H, W], got {gray_hi.shape}")
    h, w = gray_hi.shape[1:]
    r, c = rgb_lo.shape[1:3]
    if h % r or w % c:
        raise ResolutionError(f"target {h}x{w} not a multiple of source grid {r}x{c}")
    up = np.repeat(np.repeat(rgb_lo, h // r, axis=1), w // c, axis=2)
    return _channel_logits(up, gray_hi, params, cfg)


def upsampler_nll(dist: ChannelDistribution, target_rgb: np.ndarray) -> Tensor:
    """Mean nats per channel-value of the target under the predicted logits."""
    target_rgb = np.asarray(target_rgb)
    if target_rgb.ndim != 4 or target_rgb.shape[-1] != 3:
        raise DimensionError(f"target must be [B, R, C, 3], got {target_rgb.shape}")
    if target_rgb.size and (target_rgb.min() < 0 or target_rgb.max() >= OUTPUT_LEVELS):
        bad = int(target_rgb.min()) if target_rgb.min() < 0 else int(target_rgb.max())
        raise VocabularyError(f"target value {bad} outside [0, {OUTPUT_LEVELS})")
    per = [T.gather_nll(lg, target_rgb[..., k]) for k, lg in enumerate(dist.as_list())]
    return T.scale(T.add(T.add(per[0], per[1]), per[2]), 1.0 / 3.0)


def argmax_decode(dist: ChannelDistribution) -> np.ndarray:
    """Most likely value per pixel per channel; ties resolve to the lower value."""
    return np.stack([np.argmax(lg.data, axis=-1) for lg in dist.as_list()], axis=-1)


def apply_upsamplers(
    coarse: np.ndarray,
    gray_lo: np.ndarray,
    gray_hi: np.ndarray,
    color_params: UpsamplerParams,
    spatial_params: UpsamplerParams,
    cfg: ModelConfig,
) -> np.ndarray:
    """Coarse sample -> full-color low-res -> full-res RGB, all by argmax."""
    with T.no_grad():
        rgb_lo = argmax_decode(color_upsampler_forward(coarse, gray_lo, color_params, cfg))
        rgb_hi = argmax_decode(spatial_upsampler_forward(rgb_lo, gray_hi, spatial_params, cfg))
    return rgb_hi
