"""Skeleton control branch and the motion-attention (MA) adapter.

The control encoder turns rasterised skeletons into one feature map per U-Net
level.  Each MA block reads those features, lets them query the U-Net tokens
and adds the result back through a zero-initialised projection, so a freshly
built adapter leaves the backbone output untouched.
"""
from __future__ import annotations

import numpy as np

from .attention import Attention, TemporalAttention, scaled_dot_attention, self_attention
from .layers import Conv2d, LayerNorm, Linear, Module, _param, init_uniform
from .tensor import ConfigurationError, DimensionError, Tensor, matmul, silu


def to_tokens(x: Tensor) -> Tensor:
    """``[F, C, H, W] -> [F, H*W, C]``."""
    f, c, h, w = x.shape
    return x.reshape(f, c, h * w).swapaxes(1, 2)


def from_tokens(x: Tensor, h: int, w: int) -> Tensor:
    f, n, c = x.shape
    return x.swapaxes(1, 2).reshape(f, c, h, w)


class ControlEncoder(Module):
    """Strided conv stack producing ``f_cn`` at every U-Net resolution."""

    def __init__(self, channels: list[int], cond_dim: int, d_context: int,
                 rng: np.random.Generator, in_channels: int = 3, input_stride: int = 2):
        self.input_stride = input_stride
        self.stem = Conv2d(in_channels, channels[0], 3, "control", rng, stride=input_stride)
        self.convs = []
        self.time_proj = []
        self.prompt_proj = []
        prev = channels[0]
        for level, c in enumerate(channels):
            stride = 1 if level == 0 else 2
            self.convs.append(Conv2d(prev, c, 3, "control", rng, stride=stride))
            self.time_proj.append(Linear(cond_dim, c, "control", rng))
            self.prompt_proj.append(Linear(d_context, c, "control", rng))
            prev = c

    def forward(self, raster: Tensor, temb: Tensor, context: Tensor) -> list[Tensor]:
        pooled = context.mean(axis=0, keepdims=True)
        h = silu(self.stem(raster))
        feats = []
        for conv, tp, pp in zip(self.convs, self.time_proj, self.prompt_proj):
            h = conv(h)
            cond = tp(temb) + pp(pooled)
            h = h + cond.reshape(1, -1, 1, 1)
            feats.append(h)
            h = silu(h)
        return feats


class MABlock(Module):
    """Self-attention over control tokens, control-to-U-Net attention, temporal attention.

    ``forward`` returns ``z_u + zero_proj(z3)``.
    """

    def __init__(self, channels: int, rng: np.random.Generator, heads: int = 4, max_frames: int = 16):
        g = "motion_adapter"
        self.heads = heads
        self.norm_control = LayerNorm(channels, g)
        self.norm_unet = LayerNorm(channels, g)
        self.self_attn = Attention(channels, g, rng, heads)
        self.query = Linear(channels, channels, g, rng)
        self.w_k = _param(init_uniform(rng, (channels, channels), channels), g)
        self.w_v = _param(init_uniform(rng, (channels, channels), channels), g)
        self.temporal = TemporalAttention(channels, g, rng, heads, max_frames)
        self.zero_proj = Linear(channels, channels, g, rng, zero=True)

    @staticmethod
    def parameter_count(channels: int, max_frames: int = 16) -> int:
        return 12 * channels * channels + (8 + max_frames) * channels

    def forward(self, f_cn: Tensor, z_u: Tensor) -> Tensor:
        if f_cn.shape != z_u.shape:
            raise DimensionError(f"control tokens {f_cn.shape} and U-Net tokens {z_u.shape} differ")
        z1 = self_attention(self.self_attn, self.norm_control(f_cn))
        zu = self.norm_unet(z_u)
        z2 = scaled_dot_attention(self.query(z1), matmul(zu, self.w_k), matmul(zu, self.w_v), self.heads)
        z3 = self.temporal(z2)
        return z_u + self.zero_proj(z3)


def ma_block(block: MABlock, f_cn: Tensor, z_u: Tensor) -> Tensor:
    return block(f_cn, z_u)


def inject_sites(blocks: dict, unet_tokens: dict, control_tokens: dict) -> dict:
    """Apply the MA block registered for each site; sites without a block pass through."""
    if set(unet_tokens) != set(control_tokens):
        raise ConfigurationError(
            f"site misalignment: U-Net sites {sorted(unet_tokens)} vs control sites {sorted(control_tokens)}"
        )
    out = dict(unet_tokens)
    for site, block in blocks.items():
        if site not in unet_tokens:
            raise ConfigurationError(f"no features for injection site {site}")
        out[site] = block(control_tokens[site], unet_tokens[site])
    return out
