"""Attention primitives over frame tokens ``[F, N, d_model]``.

``RecurrentCausalAttention`` gives each frame keys and values gathered from
its neighbours: frame ``i`` attends over ``[z[i-1], z[i+1]]``, the first frame
over ``[z[0], z[1]]``, the last over ``[z[F-2], z[F-1]]`` and a single-frame
clip over ``[z[0], z[0]]``.
"""
from __future__ import annotations

import math

import numpy as np

from .layers import Linear, Module, _param, init_uniform
from .tensor import (
    ConfigurationError,
    DimensionError,
    Tensor,
    concat,
    matmul,
    softmax_lastdim,
    take,
)


def split_heads(x: Tensor, heads: int) -> Tensor:
    """``[..., n, d] -> [..., heads, n, d // heads]``."""
    *lead, n, d = x.shape
    return x.reshape(*lead, n, heads, d // heads).swapaxes(-2, -3)


def merge_heads(x: Tensor) -> Tensor:
    *lead, h, n, dh = x.shape
    return x.swapaxes(-2, -3).reshape(*lead, n, h * dh)


def scaled_dot_attention(q: Tensor, k: Tensor, v: Tensor, heads: int = 1) -> Tensor:
    """``softmax(q k^T / sqrt(d_head)) v``, optionally split into ``heads``."""
    d = q.shape[-1]
    if k.shape[-1] != d or v.shape[-1] != d:
        raise DimensionError(f"attention width mismatch: q{q.shape} k{k.shape} v{v.shape}")
    if k.shape[-2] != v.shape[-2] or k.shape[-2] < 1:
        raise DimensionError(f"attention needs matching non-empty key/value sets: k{k.shape} v{v.shape}")
    if heads < 1 or d % heads:
        raise ConfigurationError(f"width {d} not divisible by {heads} heads")
    if heads > 1:
        q, k, v = split_heads(q, heads), split_heads(k, heads), split_heads(v, heads)
    scores = matmul(q, k.swapaxes(-1, -2)) * (1.0 / math.sqrt(d // heads))
    out = matmul(softmax_lastdim(scores), v)
    return merge_heads(out) if heads > 1 else out


class Attention(Module):
    """Q/K/V projections (no bias) plus an output projection."""

    def __init__(self, d_model: int, group: str, rng: np.random.Generator,
                 heads: int = 4, d_context: int | None = None):
        if d_model % heads:
            raise ConfigurationError(f"d_model={d_model} not divisible by heads={heads}")
        d_ctx = d_model if d_context is None else d_context
        self.heads = heads
        self.d_context = d_ctx
        self.w_q = _param(init_uniform(rng, (d_model, d_model), d_model), group)
        self.w_k = _param(init_uniform(rng, (d_ctx, d_model), d_ctx), group)
        self.w_v = _param(init_uniform(rng, (d_ctx, d_model), d_ctx), group)
        self.out = Linear(d_model, d_model, group, rng)

    def attend(self, x: Tensor, context: Tensor) -> Tensor:
        q = matmul(x, self.w_q)
        k = matmul(context, self.w_k)
        v = matmul(context, self.w_v)
        return self.out(scaled_dot_attention(q, k, v, self.heads))

    def forward(self, x: Tensor, context: Tensor | None = None) -> Tensor:
        return self.attend(x, x if context is None else context)


def self_attention(attn: Attention, x: Tensor) -> Tensor:
    """Per-frame attention among one frame's own tokens."""
    return attn.attend(x, x)


def cross_attention(attn: Attention, x: Tensor, context: Tensor) -> Tensor:
    """Queries from the frame tokens, keys/values from ``context [M, d_ctx]``."""
    if context.shape[-1] != attn.d_context:
        raise DimensionError(
            f"context width {context.shape[-1]} does not match projection width {attn.d_context}"
        )
    return attn.attend(x, context)


class TemporalAttention(Module):
    """Attention across frames at each spatial position.

    Learned frame-position embeddings are added to the query/key inputs only,
    so identical frames keep identical values.
    """

    def __init__(self, d_model: int, group: str, rng: np.random.Generator,
                 heads: int = 4, max_frames: int = 16):
        self.attn = Attention(d_model, group, rng, heads)
        self.pos = _param(rng.normal(0.0, 0.02, size=(max_frames, d_model)), group)

    def forward(self, x: Tensor) -> Tensor:
        f = x.shape[0]
        if f > self.pos.shape[0]:
            raise ConfigurationError(f"{f} frames exceed max_frames={self.pos.shape[0]}")
        cols = x.swapaxes(0, 1)  # [N, F, d]
        qk_in = cols + self.pos[:f]
        a = self.attn
        q = matmul(qk_in, a.w_q)
        k = matmul(qk_in, a.w_k)
        v = matmul(cols, a.w_v)
        out = a.out(scaled_dot_attention(q, k, v, a.heads))
        return out.swapaxes(0, 1)


def neighbour_indices(frames: int) -> tuple[np.ndarray, np.ndarray]:
    """Frame indices whose tokens form each frame's key/value context."""
    if frames < 1:
        raise ConfigurationError("need at least one frame")
    if frames == 1:
        return np.array([0]), np.array([0])
    prev = np.arange(frames) - 1
    nxt = np.arange(frames) + 1
    prev[0], nxt[0] = 0, 1
    prev[-1], nxt[-1] = frames - 2, frames - 1
    return prev, nxt


class RecurrentCausalAttention(Module):
    """Frame ``i`` queries its own tokens against its neighbours' tokens.

    ``asymmetric_values=True`` takes values from ``[z[i-1], z[i]]`` (previous frame
    clamped at 0) while keys keep the neighbour context.
    """

    def __init__(self, d_model: int, group: str, rng: np.random.Generator,
                 heads: int = 4, asymmetric_values: bool = False):
        self.attn = Attention(d_model, group, rng, heads)
        self.asymmetric_values = asymmetric_values

    def forward(self, x: Tensor) -> Tensor:
        f = x.shape[0]
        prev, nxt = neighbour_indices(f)
        a = self.attn
        q = matmul(x, a.w_q)
        k_all = matmul(x, a.w_k)
        v_all = matmul(x, a.w_v)
        k = concat([take(k_all, prev, 0), take(k_all, nxt, 0)], axis=1)
        if self.asymmetric_values:
            v = concat([take(v_all, np.maximum(np.arange(f) - 1, 0), 0), v_all], axis=1)
        else:
            v = concat([take(v_all, prev, 0), take(v_all, nxt, 0)], axis=1)
        return a.out(scaled_dot_attention(q, k, v, a.heads))


def recurrent_causal_attention(rca: RecurrentCausalAttention, x: Tensor) -> Tensor:
    return rca(x)


def temporal_attention(temporal: TemporalAttention, x: Tensor) -> Tensor:
    return temporal(x)
