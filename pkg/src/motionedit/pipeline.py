"""Inference: DDIM inversion of the source clip, then skeleton-controlled sampling."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .codec import LatentCodec
from .imageio import read_clip, write_clip
from .schedule import NoiseSchedule, invert_loop, make_plan, sample_loop
from .skeleton import (
    SkeletonError,
    SkeletonSequence,
    load_skeletons,
    offset_skeletons,
    rasterize_sequence,
    save_skeletons,
)
from .tensor import ConfigurationError, Tensor, no_grad
from .training import Checkpoint, TrainConfig, load_checkpoint, model_from_checkpoint
from .unet import Backbone, tokenize


def repeat_image_to_clip(image: np.ndarray, n: int) -> np.ndarray:
    """Stack ``n`` copies of a ``[3, H, W]`` image into a clip."""
    if n < 1:
        raise ConfigurationError(f"repeat count must be >= 1, got {n}")
    image = np.asarray(image)
    return np.repeat(image[None], n, axis=0)


def eps_model(model: Backbone, tokens, raster: np.ndarray | None = None):
    """Wrap the backbone as a gradient-free ``(z, t) -> eps`` callable."""
    def fn(z, t):
        with no_grad():
            return model.eps(Tensor(z), t, tokens, raster).data
    return fn


@dataclass
class EditResult:
    frames: np.ndarray
    skeletons: SkeletonSequence | None
    z_star: np.ndarray
    latent: np.ndarray


def invert_clip(model: Backbone, frames: np.ndarray, prompt: str, sched: NoiseSchedule,
                steps: int = 50, skeletons: SkeletonSequence | None = None,
                codec: LatentCodec | None = None) -> np.ndarray:
    codec = codec or LatentCodec()
    tokens = tokenize(prompt, model.config.vocab)
    raster = rasterize_sequence(skeletons, frames.shape[2:]) if skeletons is not None else None
    return invert_loop(codec.encode(frames), eps_model(model, tokens, raster), make_plan(sched, steps), sched)


def edit_clip(model: Backbone, frames: np.ndarray, reference: SkeletonSequence, prompt: str,
              sched: NoiseSchedule, steps: int = 50, source: SkeletonSequence | None = None,
              apply_offset: bool = True, codec: LatentCodec | None = None,
              inversion_prompt: str | None = None, per_frame_offset: bool = False) -> EditResult:
    """Invert ``frames`` and resample them under the (offset) reference skeletons.

    Inversion is conditioned on the source skeletons when they are given;
    sampling always uses the reference skeletons.
    """
    codec = codec or LatentCodec()
    frames = np.asarray(frames, dtype=np.float32)
    if frames.shape[0] == 1 and len(reference) > 1:
        frames = repeat_image_to_clip(frames[0], len(reference))
    if len(reference) != frames.shape[0]:
        raise ConfigurationError(
            f"reference has {len(reference)} frames but the source clip has {frames.shape[0]}")
    if apply_offset:
        if source is None:
            raise SkeletonError("apply_offset needs the source skeletons")
        target = offset_skeletons(source, reference, per_frame=per_frame_offset)
    else:
        target = reference
    tokens = tokenize(prompt, model.config.vocab)
    inv_tokens = tokenize(inversion_prompt or prompt, model.config.vocab)
    size = frames.shape[2:]
    plan = make_plan(sched, steps)
    inv_raster = rasterize_sequence(source, size) if source is not None else None
    z0 = codec.encode(frames)
    z_star = invert_loop(z0, eps_model(model, inv_tokens, inv_raster), plan, sched)
    z = sample_loop(z_star, eps_model(model, tokens, rasterize_sequence(target, size)), plan, sched)
    return EditResult(codec.decode(z), target, z_star, z)


def reconstruct(model: Backbone, frames: np.ndarray, skeletons: SkeletonSequence, prompt: str,
                sched: NoiseSchedule, steps: int = 50, codec: LatentCodec | None = None) -> np.ndarray:
    """Invert and resample under the source's own skeletons (self-edit)."""
    return edit_clip(model, frames, skeletons, prompt, sched, steps, source=skeletons,
                     apply_offset=False, codec=codec).frames


@dataclass
class EditRequest:
    source: str
    reference_skeletons: str
    checkpoint: str
    output_dir: str
    prompt: str | None = None
    source_skeletons: str | None = None
    steps: int = 50
    apply_offset: bool = True
    per_frame_offset: bool = False
    inversion_prompt: str | None = None
    extra: dict = field(default_factory=dict)

    def validate(self) -> None:
        for label, p in (("source", self.source), ("reference skeletons", self.reference_skeletons),
                         ("checkpoint", self.checkpoint)):
            if not Path(p).exists():
                raise FileNotFoundError(f"{label} not found: {p}")
        if self.source_skeletons is not None and not Path(self.source_skeletons).exists():
            raise FileNotFoundError(f"source skeletons not found: {self.source_skeletons}")
        if self.steps < 1:
            raise ConfigurationError("steps must be >= 1")


def edit(req: EditRequest) -> np.ndarray:
    """File-level edit: load, optionally offset, invert, sample, write frames."""
    req.validate()
    ck: Checkpoint = load_checkpoint(req.checkpoint)
    model = model_from_checkpoint(ck)
    tcfg = TrainConfig(**ck.train_config)
    frames = read_clip(req.source)
    reference = load_skeletons(req.reference_skeletons)
    source = load_skeletons(req.source_skeletons) if req.source_skeletons else None
    prompt = req.prompt or ck.notes.get("prompt", "figure")
    result = edit_clip(model, frames, reference, prompt, tcfg.schedule(), req.steps, source,
                       req.apply_offset, LatentCodec(tcfg.codec), req.inversion_prompt,
                       req.per_frame_offset)
    out = Path(req.output_dir)
    write_clip(out, result.frames)
    if result.skeletons is not None:
        save_skeletons(result.skeletons, out / "skeletons.json")
    (out / "request.json").write_text(json.dumps(
        {k: v for k, v in vars(req).items() if k != "extra"} | {"prompt": prompt}, indent=1, sort_keys=True) + "\n")
    return result.frames
