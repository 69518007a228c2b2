"""Inflated spatio-temporal U-Net noise predictor with named parameter groups."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .adapter import ControlEncoder, MABlock, from_tokens, to_tokens
from .attention import Attention, RecurrentCausalAttention, TemporalAttention, cross_attention
from .layers import Conv2d, GroupNorm, LayerNorm, Linear, Module, _param, norm_groups
from .tensor import (
    GROUPS,
    ConfigurationError,
    DimensionError,
    Parameter,
    Tensor,
    concat,
    get_dtype,
    silu,
    take,
    upsample_nearest2d,
)

VOCAB = (
    "<unk>", "a", "the", "figure", "person", "stick", "man", "woman",
    "walking", "waving", "shifting", "dancing", "running", "standing", "jumping",
    "left", "right", "in", "place", "arms", "legs", "moving", "slowly", "quickly",
)


def tokenize(prompt: str, vocab=VOCAB) -> list[int]:
    """Whitespace split; unknown words map to row 0 (``<unk>``)."""
    index = {w: i for i, w in enumerate(vocab)}
    ids = [index.get(w, 0) for w in prompt.lower().split()]
    return ids or [0]


@dataclass
class UNetConfig:
    frames: int = 8
    latent_size: tuple = (16, 16)
    latent_channels: int = 3
    base_channels: int = 32
    channel_mult: tuple = (1, 2, 4)
    heads: int = 4
    d_context: int = 32
    vocab: tuple = VOCAB
    adapter: bool = True
    injection_sites: tuple | None = None  # level indices; None = every level
    control_stride: int = 2  # raster pixels per latent cell
    rca_asymmetric_values: bool = False
    max_frames: int = 16
    seed: int = 0

    def __post_init__(self):
        self.latent_size = tuple(int(v) for v in self.latent_size)
        self.channel_mult = tuple(int(v) for v in self.channel_mult)
        self.vocab = tuple(self.vocab)
        if self.injection_sites is not None:
            self.injection_sites = tuple(int(s) for s in self.injection_sites)
        levels = len(self.channel_mult)
        if levels < 2:
            raise ConfigurationError("need at least two resolution levels")
        if self.frames < 1 or self.frames > self.max_frames:
            raise ConfigurationError(f"frames must be in [1, {self.max_frames}]")
        div = 2 ** (levels - 1)
        if self.latent_size[0] % div or self.latent_size[1] % div:
            raise ConfigurationError(f"latent size {self.latent_size} not divisible by {div}")
        for c in self.channels:
            if c % self.heads:
                raise ConfigurationError(f"{c} channels not divisible by {self.heads} heads")
        for s in self.sites:
            if not 0 <= s < levels:
                raise ConfigurationError(f"injection site {s} outside levels 0..{levels - 1}")

    @property
    def channels(self) -> list[int]:
        return [self.base_channels * m for m in self.channel_mult]

    @property
    def sites(self) -> tuple:
        if self.injection_sites is None:
            return tuple(range(len(self.channel_mult)))
        return self.injection_sites

    @property
    def image_size(self) -> tuple:
        return (self.latent_size[0] * self.control_stride, self.latent_size[1] * self.control_stride)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["vocab"] = list(self.vocab)
        return d


def timestep_embedding(t: int, dim: int) -> Tensor:
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / half)
    args = float(t) * freqs
    emb = np.concatenate([np.sin(args), np.cos(args)])
    return Tensor(emb[None, :])


class ResBlock(Module):
    def __init__(self, c_in: int, c_out: int, temb_dim: int, rng):
        self.norm1 = GroupNorm(c_in, norm_groups(c_in), "conv")
        self.conv1 = Conv2d(c_in, c_out, 3, "conv", rng)
        self.time = Linear(temb_dim, c_out, "conv", rng)
        self.norm2 = GroupNorm(c_out, norm_groups(c_out), "conv")
        self.conv2 = Conv2d(c_out, c_out, 3, "conv", rng)
        self.skip = Conv2d(c_in, c_out, 1, "conv", rng) if c_in != c_out else None

    def forward(self, x: Tensor, temb: Tensor) -> Tensor:
        h = self.conv1(silu(self.norm1(x)))
        h = h + self.time(silu(temb)).reshape(1, -1, 1, 1)
        h = self.conv2(silu(self.norm2(h)))
        return (x if self.skip is None else self.skip(x)) + h


class TransformerBlock(Module):
    """RCA -> prompt cross-attention -> temporal attention -> feed-forward, pre-norm residuals."""

    def __init__(self, c: int, d_context: int, heads: int, rng, max_frames: int, asymmetric_values: bool):
        self.norm_rca = LayerNorm(c, "spatial_rca")
        self.rca = RecurrentCausalAttention(c, "spatial_rca", rng, heads, asymmetric_values)
        self.norm_cross = LayerNorm(c, "cross")
        self.cross = Attention(c, "cross", rng, heads, d_context=d_context)
        self.norm_temporal = LayerNorm(c, "temporal")
        self.temporal = TemporalAttention(c, "temporal", rng, heads, max_frames)
        self.norm_ff = LayerNorm(c, "conv")
        self.ff1 = Linear(c, 2 * c, "conv", rng)
        self.ff2 = Linear(2 * c, c, "conv", rng)

    def forward(self, x: Tensor, context: Tensor) -> Tensor:
        x = x + self.rca(self.norm_rca(x))
        x = x + cross_attention(self.cross, self.norm_cross(x), context)
        x = x + self.temporal(self.norm_temporal(x))
        return x + self.ff2(silu(self.ff1(self.norm_ff(x))))


class Backbone(Module):
    """Noise predictor ``eps(z_t, t, prompt, skeleton control)`` over ``[F, C, H, W]`` latents."""

    def __init__(self, config: UNetConfig | None = None):
        cfg = config or UNetConfig()
        self.config = cfg
        base_rng, adapter_rng = (np.random.Generator(np.random.Philox(s))
                                 for s in np.random.SeedSequence(cfg.seed).spawn(2))
        rng = base_rng
        ch = cfg.channels
        levels = len(ch)
        base = cfg.base_channels
        self._temb_in = base
        temb_dim = 4 * base

        self.time_1 = Linear(base, temb_dim, "embed", rng)
        self.time_2 = Linear(temb_dim, temb_dim, "embed", rng)
        self.prompt_table = _param(rng.normal(0.0, 1.0, size=(len(cfg.vocab), cfg.d_context)), "embed")

        tb = dict(d_context=cfg.d_context, heads=cfg.heads, rng=rng,
                  max_frames=cfg.max_frames, asymmetric_values=cfg.rca_asymmetric_values)
        self.conv_in = Conv2d(cfg.latent_channels, ch[0], 3, "conv", rng)
        self.down_res, self.down_attn, self.downsample = [], [], []
        prev = ch[0]
        for level in range(levels - 1):
            self.down_res.append(ResBlock(prev, ch[level], temb_dim, rng))
            self.down_attn.append(TransformerBlock(ch[level], **tb))
            self.downsample.append(Conv2d(ch[level], ch[level], 3, "conv", rng, stride=2))
            prev = ch[level]
        self.mid_res1 = ResBlock(prev, ch[-1], temb_dim, rng)
        self.mid_attn = TransformerBlock(ch[-1], **tb)
        self.mid_res2 = ResBlock(ch[-1], ch[-1], temb_dim, rng)
        self.upsample, self.up_res, self.up_attn = [], [], []
        for level in reversed(range(levels - 1)):
            self.upsample.append(Conv2d(ch[level + 1], ch[level + 1], 3, "conv", rng))
            self.up_res.append(ResBlock(ch[level + 1] + ch[level], ch[level], temb_dim, rng))
            self.up_attn.append(TransformerBlock(ch[level], **tb))
        self.norm_out = GroupNorm(ch[0], norm_groups(ch[0]), "conv")
        self.conv_out = Conv2d(ch[0], cfg.latent_channels, 3, "conv", rng)

        if cfg.adapter:
            self.control = ControlEncoder(ch, temb_dim, cfg.d_context, adapter_rng,
                                          input_stride=cfg.control_stride)
            self.adapters = [MABlock(ch[s], adapter_rng, cfg.heads, cfg.max_frames) for s in cfg.sites]
        else:
            self.control = None
            self.adapters = []
        self._site_index = {s: i for i, s in enumerate(cfg.sites)} if cfg.adapter else {}
        self.ma_calls = 0
        self.assign_names()
        self._audit()

    # -- registry -------------------------------------------------------------
    def _audit(self) -> None:
        groups = parameter_groups(self)
        total = sum(len(v) for v in groups.values())
        if total != len(self.parameters()):
            raise ConfigurationError("parameter registry audit failed: orphan parameters")

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict) -> None:
        params = dict(self.named_parameters())
        missing = set(params) - set(state)
        extra = set(state) - set(params)
        if missing or extra:
            raise ConfigurationError(f"state mismatch: missing {sorted(missing)[:3]}, unexpected {sorted(extra)[:3]}")
        for name, p in params.items():
            arr = np.asarray(state[name])
            if arr.shape != p.shape:
                raise DimensionError(f"{name}: checkpoint shape {arr.shape} != model {p.shape}")
            p.data = arr.astype(p.dtype, copy=True)

    # -- conditioning ---------------------------------------------------------
    def time_embedding(self, t: int) -> Tensor:
        return self.time_2(silu(self.time_1(timestep_embedding(t, self._temb_in))))

    def prompt_context(self, tokens) -> Tensor:
        ids = np.asarray(tokens, dtype=np.intp)
        if ids.ndim != 1 or len(ids) == 0 or ids.min() < 0 or ids.max() >= len(self.config.vocab):
            raise ConfigurationError(f"invalid prompt token ids {tokens!r}")
        return take(self.prompt_table, ids, axis=0)

    def encode_control(self, raster, t: int, tokens) -> list[Tensor]:
        """Skeleton raster ``[F, 3, H_img, W_img]`` -> features at each U-Net level."""
        if self.control is None:
            raise ConfigurationError("model was built without the control branch")
        raster = raster if isinstance(raster, Tensor) else Tensor(raster)
        expect = self.config.image_size
        if raster.ndim != 4 or raster.shape[1] != 3 or tuple(raster.shape[2:]) != expect:
            raise ConfigurationError(f"control raster {raster.shape} must be [F, 3, {expect[0]}, {expect[1]}]")
        return self.control(raster, self.time_embedding(t), self.prompt_context(tokens))

    # -- forward --------------------------------------------------------------
    def _transform(self, block: TransformerBlock, h: Tensor, context: Tensor, level: int,
                   control: list | None) -> Tensor:
        _, _, hh, ww = h.shape
        x = block(to_tokens(h), context)
        if control is not None and level in self._site_index:
            self.ma_calls += 1
            x = self.adapters[self._site_index[level]](to_tokens(control[level]), x)
        return from_tokens(x, hh, ww)

    def forward(self, z_t, t: int, tokens, control: list | None = None) -> Tensor:
        cfg = self.config
        z_t = z_t if isinstance(z_t, Tensor) else Tensor(z_t)
        expect = (cfg.latent_channels,) + cfg.latent_size
        if z_t.ndim != 4 or tuple(z_t.shape[1:]) != expect:
            raise DimensionError(f"latent {z_t.shape} must be [F, {expect[0]}, {expect[1]}, {expect[2]}]")
        if z_t.shape[0] > cfg.max_frames:
            raise ConfigurationError(f"{z_t.shape[0]} frames exceed max_frames={cfg.max_frames}")
        if control is not None and len(control) != len(cfg.channels):
            raise ConfigurationError("control features must cover every level")
        temb = self.time_embedding(t)
        context = self.prompt_context(tokens)
        levels = len(cfg.channels)

        h = self.conv_in(z_t)
        skips = []
        for level in range(levels - 1):
            h = self.down_res[level](h, temb)
            h = self._transform(self.down_attn[level], h, context, level, control)
            skips.append(h)
            h = self.downsample[level](h)
        h = self.mid_res1(h, temb)
        h = self._transform(self.mid_attn, h, context, levels - 1, control)
        h = self.mid_res2(h, temb)
        for i, level in enumerate(reversed(range(levels - 1))):
            h = self.upsample[i](upsample_nearest2d(h, 2))
            h = concat([h, skips[level]], axis=1)
            h = self.up_res[i](h, temb)
            h = self.up_attn[i](to_tokens(h), context)
            h = from_tokens(h, *skips[level].shape[2:])
        return self.conv_out(silu(self.norm_out(h)))

    def eps(self, z_t, t: int, tokens, raster=None) -> Tensor:
        """Noise prediction, encoding the skeleton raster first when one is given."""
        control = None
        if raster is not None and self.control is not None:
            control = self.encode_control(raster, t, tokens)
        return self.forward(z_t, t, tokens, control)


def unet_forward(model: Backbone, z_t, t: int, prompt_tokens, control=None) -> Tensor:
    return model.forward(z_t, t, prompt_tokens, control)


def parameter_groups(model: Module) -> dict[str, list[Parameter]]:
    """Disjoint partition of the model's parameters by group name."""
    out = {g: [] for g in sorted(GROUPS)}
    for _, p in model.named_parameters():
        out[p.group].append(p)
    return out


def group_census(model: Module) -> dict[str, int]:
    """Scalar parameter count per group."""
    return {g: int(sum(p.size for p in ps)) for g, ps in parameter_groups(model).items()}


def set_trainable(model: Module, groups) -> None:
    """Enable gradients exactly on the listed groups."""
    groups = set(groups)
    unknown = groups - GROUPS
    if unknown:
        raise ConfigurationError(f"unknown parameter group(s): {sorted(unknown)}")
    for p in model.parameters():
        p.requires_grad = p.group in groups


def trainable_groups(model: Module) -> set[str]:
    return {p.group for p in model.parameters() if p.requires_grad}
