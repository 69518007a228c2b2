"""Two-stage spatio-temporal fine-tuning, Adam, and binary checkpoints.

Stage 1 trains temporal attention and the motion adapter on the
background-masked clip; stage 2 trains recurrent causal attention and the
motion adapter on the full clip.  The control encoder trains in both stages
unless disabled.
"""
from __future__ import annotations

import io
import json
import logging
import math
import struct
import zlib
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .codec import LatentCodec
from .layers import make_rng
from .schedule import NoiseSchedule, denoise_loss, make_linear_schedule
from .skeleton import PROGRAMS, SceneError, SceneSpec, SkeletonSequence, rasterize_sequence, scene_skeletons
from .tensor import GROUPS, ConfigurationError, DimensionError, NaNError, Parameter, backward
from .unet import Backbone, UNetConfig, set_trainable, tokenize

log = logging.getLogger(__name__)

STAGE1_GROUPS = frozenset({"temporal", "motion_adapter"})
STAGE2_GROUPS = frozenset({"spatial_rca", "motion_adapter"})


@dataclass
class TrainConfig:
    lr: float = 3e-5
    iters_stage1: int = 300
    iters_stage2: int = 300
    batch: int = 1
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    grad_clip: float = 1.0
    train_control_stage1: bool = True
    train_control_stage2: bool = True
    timesteps: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02
    codec: str = "pool2"

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigurationError("lr must be positive")
        if self.iters_stage1 < 0 or self.iters_stage2 < 0:
            raise ConfigurationError("iteration counts must be non-negative")
        if self.batch < 1:
            raise ConfigurationError("batch must be >= 1")
        if self.grad_clip is not None and self.grad_clip <= 0:
            raise ConfigurationError("grad_clip must be positive")

    def schedule(self) -> NoiseSchedule:
        return make_linear_schedule(self.timesteps, self.beta_start, self.beta_end)

    def stage_groups(self, stage: int) -> set[str]:
        if stage == 1:
            groups = set(STAGE1_GROUPS)
            if self.train_control_stage1:
                groups.add("control")
        else:
            groups = set(STAGE2_GROUPS)
            if self.train_control_stage2:
                groups.add("control")
        return groups


# -- optimiser ----------------------------------------------------------------

@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    steps: dict = field(default_factory=dict)


def adam_update(state: AdamState, params: list[Parameter], lr: float) -> None:
    """Bias-corrected Adam on every parameter that requires grad and has one.

    Step counts are per parameter, so groups unfrozen later start their own
    bias correction.
    """
    for p in params:
        if not p.requires_grad or p.grad is None:
            continue
        g = p.grad
        if not np.all(np.isfinite(g)):
            raise NaNError(f"non-finite gradient in parameter {p.name!r}")
        if p.name not in state.m:
            state.m[p.name] = np.zeros_like(p.data)
            state.v[p.name] = np.zeros_like(p.data)
            state.steps[p.name] = 0
        k = state.steps[p.name] + 1
        state.steps[p.name] = k
        m = state.m[p.name] = state.beta1 * state.m[p.name] + (1.0 - state.beta1) * g
        v = state.v[p.name] = state.beta2 * state.v[p.name] + (1.0 - state.beta2) * (g * g)
        m_hat = m / (1.0 - state.beta1**k)
        v_hat = v / (1.0 - state.beta2**k)
        p.data = (p.data - lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(p.dtype, copy=False)


def clip_grad_norm(params: list[Parameter], max_norm: float) -> float:
    """Scale gradients so their global L2 norm is at most ``max_norm``; return the pre-clip norm."""
    grads = [p.grad for p in params if p.requires_grad and p.grad is not None]
    if not grads:
        return 0.0
    total = float(np.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads)))
    if max_norm is not None and total > max_norm:
        scale = max_norm / (total + 1e-6)
        for p in params:
            if p.requires_grad and p.grad is not None:
                p.grad = (p.grad * scale).astype(p.grad.dtype, copy=False)
    return total


# -- data ---------------------------------------------------------------------

@dataclass
class TrainingClip:
    frames: np.ndarray  # [F, 3, H, W]
    masks: np.ndarray  # [F, 1, H, W]
    skeletons: SkeletonSequence
    prompt: str

    @classmethod
    def from_scene(cls, scene) -> "TrainingClip":
        return cls(scene.frames, scene.masks, scene.skeletons, scene.prompt)


def _raster(skeletons, size) -> np.ndarray:
    if isinstance(skeletons, SkeletonSequence):
        return rasterize_sequence(skeletons, size)
    return np.asarray(skeletons, dtype=np.float32)


def _loss_fn(model: Backbone):
    def fn(z_t, t, tokens, raster):
        return model.eps(z_t, t, tokens, raster)
    return fn


def _optimise(model: Backbone, z0: np.ndarray, raster: np.ndarray, tokens, sched: NoiseSchedule,
              opt: AdamState, rng: np.random.Generator, cfg: TrainConfig) -> float:
    model.zero_grad()
    loss = denoise_loss(_loss_fn(model), z0, tokens, raster, rng, sched)
    backward(loss)
    params = model.parameters()
    clip_grad_norm(params, cfg.grad_clip)
    adam_update(opt, params, cfg.lr)
    return float(loss.data)


def stage1_step(model: Backbone, clip: np.ndarray, mask: np.ndarray, skeletons, prompt: str,
                sched: NoiseSchedule, opt: AdamState, rng: np.random.Generator,
                cfg: TrainConfig, codec: LatentCodec | None = None) -> float:
    """One update on the background-masked clip; trainability must already be set."""
    clip, mask = np.asarray(clip), np.asarray(mask)
    if mask.shape != (clip.shape[0], 1) + clip.shape[2:]:
        raise DimensionError(f"mask {mask.shape} does not match clip {clip.shape}")
    codec = codec or LatentCodec(cfg.codec)
    z0 = codec.encode(clip * mask)
    raster = _raster(skeletons, clip.shape[2:])
    return _optimise(model, z0, raster, tokenize(prompt, model.config.vocab), sched, opt, rng, cfg)


def stage2_step(model: Backbone, clip: np.ndarray, skeletons, prompt: str, sched: NoiseSchedule,
                opt: AdamState, rng: np.random.Generator, cfg: TrainConfig,
                codec: LatentCodec | None = None) -> float:
    """One update on the full, unmasked clip."""
    clip = np.asarray(clip)
    codec = codec or LatentCodec(cfg.codec)
    z0 = codec.encode(clip)
    raster = _raster(skeletons, clip.shape[2:])
    return _optimise(model, z0, raster, tokenize(prompt, model.config.vocab), sched, opt, rng, cfg)


# -- checkpoints --------------------------------------------------------------

MAGIC = b"MEDITCKP"
SCHEMA_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    params: dict
    adam: AdamState
    rng_state: dict
    stage: int
    step: int
    model_config: dict
    train_config: dict
    loss_log: list = field(default_factory=list)
    notes: dict = field(default_factory=dict)

    def log_text(self) -> str:
        return format_loss_log(self.loss_log)


def format_loss_log(entries) -> str:
    return "".join(f"{stage},{step},{loss!r}\n" for stage, step, loss in entries)


def _jsonable_rng(state: dict) -> dict:
    def conv(v):
        if isinstance(v, np.ndarray):
            return {"__array__": [int(x) for x in v.reshape(-1)], "dtype": str(v.dtype), "shape": list(v.shape)}
        if isinstance(v, dict):
            return {k: conv(x) for k, x in v.items()}
        if isinstance(v, np.integer):
            return int(v)
        return v
    return conv(state)


def _rng_from_json(state: dict) -> dict:
    def conv(v):
        if isinstance(v, dict) and "__array__" in v:
            return np.array(v["__array__"], dtype=v["dtype"]).reshape(v["shape"])
        if isinstance(v, dict):
            return {k: conv(x) for k, x in v.items()}
        return v
    return conv(state)


def _write_record(buf: io.BytesIO, name: str, arr: np.ndarray) -> None:
    raw = name.encode("utf-8")
    arr = np.ascontiguousarray(arr, dtype="<f4")
    buf.write(struct.pack("<I", len(raw)))
    buf.write(raw)
    buf.write(struct.pack("<I", arr.ndim))
    buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    buf.write(arr.tobytes())


def checkpoint_bytes(ck: Checkpoint) -> bytes:
    records = [(f"param/{k}", v) for k, v in ck.params.items()]
    for k in sorted(ck.adam.m):
        records.append((f"adam.m/{k}", ck.adam.m[k]))
        records.append((f"adam.v/{k}", ck.adam.v[k]))
    meta = {
        "stage": ck.stage,
        "step": ck.step,
        "rng_state": _jsonable_rng(ck.rng_state),
        "adam": {"beta1": ck.adam.beta1, "beta2": ck.adam.beta2, "eps": ck.adam.eps,
                 "steps": dict(sorted(ck.adam.steps.items()))},
        "model_config": ck.model_config,
        "train_config": ck.train_config,
        "loss_log": [[s, i, repr(v)] for s, i, v in ck.loss_log],
        "notes": ck.notes,
    }
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<II", SCHEMA_VERSION, len(records)))
    for name, arr in records:
        _write_record(buf, name, arr)
    blob = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    buf.write(struct.pack("<I", len(blob)))
    buf.write(blob)
    body = buf.getvalue()
    return body + struct.pack("<I", zlib.crc32(body))


def save_checkpoint(ck: Checkpoint, path) -> None:
    Path(path).write_bytes(checkpoint_bytes(ck))


class _Reader:
    def __init__(self, data: bytes):
        self.data, self.pos = data, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError("checkpoint is truncated or corrupt")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self, count: int = 1):
        vals = struct.unpack(f"<{count}I", self.take(4 * count))
        return vals[0] if count == 1 else vals


def load_checkpoint(path) -> Checkpoint:
    data = Path(path).read_bytes()
    if len(data) < len(MAGIC) + 12 or data[:len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: bad magic bytes, not a checkpoint")
    r = _Reader(data)
    r.take(len(MAGIC))
    version = r.u32()
    if version != SCHEMA_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint schema version {version}")
    count = r.u32()
    records = {}
    for _ in range(count):
        name = r.take(r.u32()).decode("utf-8")
        rank = r.u32()
        shape = tuple(r.u32(rank)) if rank > 1 else ((r.u32(),) if rank == 1 else ())
        n = int(np.prod(shape)) if shape else 1
        records[name] = np.frombuffer(r.take(4 * n), dtype="<f4").reshape(shape).astype(np.float32)
    meta = json.loads(r.take(r.u32()).decode("utf-8"))
    body_end = r.pos
    (crc,) = struct.unpack("<I", r.take(4))
    if crc != zlib.crc32(data[:body_end]) or r.pos != len(data):
        raise CheckpointError(f"{path}: checksum mismatch, checkpoint is corrupt")
    params = {k[len("param/"):]: v for k, v in records.items() if k.startswith("param/")}
    a = meta["adam"]
    adam = AdamState(a["beta1"], a["beta2"], a["eps"],
                     {k[len("adam.m/"):]: v for k, v in records.items() if k.startswith("adam.m/")},
                     {k[len("adam.v/"):]: v for k, v in records.items() if k.startswith("adam.v/")},
                     {k: int(v) for k, v in a["steps"].items()})
    return Checkpoint(params, adam, _rng_from_json(meta["rng_state"]), meta["stage"], meta["step"],
                      meta["model_config"], meta["train_config"],
                      [(int(s), int(i), float(v)) for s, i, v in meta["loss_log"]],
                      meta.get("notes", {}))


# -- training loop ------------------------------------------------------------

def model_from_checkpoint(ck: Checkpoint) -> Backbone:
    model = Backbone(UNetConfig(**ck.model_config))
    model.load_state_dict(ck.params)
    return model


class Trainer:
    """Runs stage 1 then stage 2 and can snapshot/resume at any step boundary."""

    def __init__(self, model: Backbone, dataset, cfg: TrainConfig):
        if not dataset:
            raise ConfigurationError("training dataset is empty")
        self.model = model
        self.cfg = cfg
        self.dataset = [c if isinstance(c, TrainingClip) else TrainingClip.from_scene(c) for c in dataset]
        self.sched = cfg.schedule()
        self.codec = LatentCodec(cfg.codec)
        self.opt = AdamState(cfg.beta1, cfg.beta2, cfg.adam_eps)
        self.rng = make_rng(cfg.seed)
        self.stage, self.step = 1, 0
        self.loss_log: list[tuple[int, int, float]] = []
        size = self.dataset[0].frames.shape[2:]
        self._rasters = [rasterize_sequence(c.skeletons, size) for c in self.dataset]

    def _clip(self, i: int) -> int:
        return i % len(self.dataset)

    def run_step(self) -> float:
        cfg = self.cfg
        set_trainable(self.model, cfg.stage_groups(self.stage))
        k = self._clip(self.step)
        clip = self.dataset[k]
        if self.stage == 1:
            loss = stage1_step(self.model, clip.frames, clip.masks, self._rasters[k], clip.prompt,
                               self.sched, self.opt, self.rng, cfg, self.codec)
        else:
            loss = stage2_step(self.model, clip.frames, self._rasters[k], clip.prompt,
                               self.sched, self.opt, self.rng, cfg, self.codec)
        self.loss_log.append((self.stage, self.step, loss))
        self.step += 1
        limit = cfg.iters_stage1 if self.stage == 1 else cfg.iters_stage2
        if self.stage == 1 and self.step >= limit:
            self.stage, self.step = 2, 0
        return loss

    @property
    def finished(self) -> bool:
        if self.stage == 1:
            return self.cfg.iters_stage1 == 0 and self.cfg.iters_stage2 == 0
        return self.step >= self.cfg.iters_stage2

    def run(self, max_steps: int | None = None, log_every: int = 50) -> Checkpoint:
        if self.stage == 1 and self.cfg.iters_stage1 == 0:
            self.stage, self.step = 2, 0
        done = 0
        while not self.finished and (max_steps is None or done < max_steps):
            loss = self.run_step()
            done += 1
            if log_every and len(self.loss_log) % log_every == 0:
                log.info("stage %d step %d loss %.5f", *self.loss_log[-1][:2], loss)
        return self.checkpoint()

    def checkpoint(self) -> Checkpoint:
        return Checkpoint(
            params={k: v.copy() for k, v in self.model.state_dict().items()},
            adam=AdamState(self.opt.beta1, self.opt.beta2, self.opt.eps,
                           {k: v.copy() for k, v in self.opt.m.items()},
                           {k: v.copy() for k, v in self.opt.v.items()},
                           dict(self.opt.steps)),
            rng_state=self.rng.bit_generator.state,
            stage=self.stage,
            step=self.step,
            model_config=self.model.config.to_dict(),
            train_config=asdict(self.cfg),
            loss_log=list(self.loss_log),
            notes={"prompt": self.dataset[0].prompt},
        )

    @classmethod
    def resume(cls, ck: Checkpoint, dataset, cfg: TrainConfig | None = None) -> "Trainer":
        cfg = cfg or TrainConfig(**ck.train_config)
        trainer = cls(model_from_checkpoint(ck), dataset, cfg)
        trainer.opt = AdamState(ck.adam.beta1, ck.adam.beta2, ck.adam.eps,
                                {k: v.copy() for k, v in ck.adam.m.items()},
                                {k: v.copy() for k, v in ck.adam.v.items()},
                                dict(ck.adam.steps))
        trainer.rng.bit_generator.state = ck.rng_state
        trainer.stage, trainer.step = ck.stage, ck.step
        trainer.loss_log = list(ck.loss_log)
        return trainer


def train(model: Backbone, dataset, cfg: TrainConfig, max_steps: int | None = None) -> Checkpoint:
    """Stage 1 then stage 2 with their trainability masks; returns the final checkpoint."""
    return Trainer(model, dataset, cfg).run(max_steps)


@dataclass
class PretrainConfig:
    """Broad denoising pre-training that stands in for a pretrained base model."""

    steps: int = 1500
    lr: float = 1e-3
    lr_final: float = 1e-4
    scenes: int = 24
    seed: int = 1234
    grad_clip: float = 1.0


def random_scene_specs(count: int, seed: int, frames: int = 8, image_size=(32, 32)) -> list:
    """Varied stick-figure scenes (program, direction, colours, background, placement)."""
    rng = make_rng(seed)
    specs = []
    i = 0
    while len(specs) < count:
        program = PROGRAMS[i % len(PROGRAMS)]
        direction = 1 if rng.random() < 0.5 else -1
        height = float(rng.uniform(17.0, 21.0))
        speed = 0.0 if program == "wave" else float(rng.uniform(0.5, 1.25))
        span = speed * (frames - 1)
        lo, hi = 8.0 + span / 2, image_size[1] - 8.0 - span / 2
        center = float(rng.uniform(lo, hi)) if hi > lo else image_size[1] / 2
        figure = tuple(float(v) for v in rng.uniform(0.55, 1.0, size=3))
        head = tuple(float(v) for v in rng.uniform(0.5, 1.0, size=3))
        spec = SceneSpec(frames=frames, image_size=tuple(image_size), seed=int(rng.integers(1 << 31)),
                         figure_height=height, program=program, direction=direction, speed=speed,
                         start_x=center - direction * span / 2, figure_color=figure, head_color=head)
        try:
            scene_skeletons(spec)
        except SceneError:
            continue  # redraw the same program
        specs.append(spec)
        i += 1
    return specs


def pretrain(model: Backbone, dataset, cfg: PretrainConfig, codec: LatentCodec | None = None,
             sched: NoiseSchedule | None = None, log_every: int = 100) -> list[float]:
    """Train every group on full clips with a cosine-decayed learning rate."""
    clips = [c if isinstance(c, TrainingClip) else TrainingClip.from_scene(c) for c in dataset]
    if not clips:
        raise ConfigurationError("pre-training dataset is empty")
    codec = codec or LatentCodec()
    sched = sched or make_linear_schedule()
    rng = make_rng(cfg.seed)
    set_trainable(model, GROUPS)
    opt = AdamState()
    latents = [codec.encode(c.frames) for c in clips]
    rasters = [rasterize_sequence(c.skeletons, c.frames.shape[2:]) for c in clips]
    tokens = [tokenize(c.prompt, model.config.vocab) for c in clips]
    losses = []
    for step in range(cfg.steps):
        k = int(rng.integers(len(clips)))
        frac = step / max(cfg.steps - 1, 1)
        lr = cfg.lr_final + 0.5 * (cfg.lr - cfg.lr_final) * (1 + math.cos(math.pi * frac))
        model.zero_grad()
        loss = denoise_loss(_loss_fn(model), latents[k], tokens[k], rasters[k], rng, sched)
        backward(loss)
        params = model.parameters()
        clip_grad_norm(params, cfg.grad_clip)
        adam_update(opt, params, lr)
        losses.append(float(loss.data))
        if log_every and (step + 1) % log_every == 0:
            log.info("pretrain step %d loss %.5f", step + 1, float(np.mean(losses[-log_every:])))
    return losses


def train_config_fields() -> list[str]:
    return [f.name for f in fields(TrainConfig)]
