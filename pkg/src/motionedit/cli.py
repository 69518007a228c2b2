"""``motionedit`` command line.

Every subcommand accepts ``--config FILE|default`` and repeated
``--set section.key=value`` overrides.  Failures print a single JSON line on
stderr (``{"error": kind, "code": n, "message": ...}``) and exit with the
code for that kind of failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from .codec import LatentCodec
from .config import ConfigSchemaError, RunConfig, load_config
from .imageio import ImageFormatError, read_clip, read_pnm, write_clip, write_masks, write_pgm, write_ppm
from .metrics import compare_clips
from .pipeline import EditRequest, edit, invert_clip
from .skeleton import (
    SceneError,
    SkeletonError,
    gen_scene,
    load_skeletons,
    make_mask,
    offset_skeletons,
    rasterize_sequence,
    save_skeletons,
)
from .tensor import ConfigurationError, ContractError, DimensionError, NaNError
from .training import (
    AdamState,
    Checkpoint,
    CheckpointError,
    TrainConfig,
    Trainer,
    TrainingClip,
    format_loss_log,
    load_checkpoint,
    model_from_checkpoint,
    pretrain,
    random_scene_specs,
    save_checkpoint,
)
from .unet import Backbone

log = logging.getLogger("motionedit")

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_USAGE = 2
EXIT_MISSING_FILE = 3
EXIT_SCHEMA = 4
EXIT_INVALID = 5
EXIT_NUMERIC = 6

_ERROR_KINDS = (
    (FileNotFoundError, "missing_file", EXIT_MISSING_FILE),
    ((SkeletonError, CheckpointError, ImageFormatError, ConfigSchemaError), "schema_violation", EXIT_SCHEMA),
    ((ConfigurationError, SceneError, DimensionError, ContractError), "invalid_input", EXIT_INVALID),
    (NaNError, "numeric", EXIT_NUMERIC),
)


class CliUsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliUsageError(message)


def _emit_error(kind: str, code: int, message: str) -> int:
    print(json.dumps({"error": kind, "code": code, "message": " ".join(str(message).split())}), file=sys.stderr)
    return code


# -- scene directories ---------------------------------------------------------

def _write_scene(scene, out: Path) -> None:
    write_clip(out, scene.frames)
    write_masks(out, scene.masks)
    write_ppm(out / "background.ppm", scene.background)
    save_skeletons(scene.skeletons, out / "skeletons.json")
    (out / "scene.json").write_text(json.dumps({"prompt": scene.prompt, "spec": asdict(scene.spec)},
                                               indent=1, sort_keys=True) + "\n")


def _read_scene(directory: Path) -> TrainingClip:
    if not directory.is_dir():
        raise FileNotFoundError(f"scene directory not found: {directory}")
    frames = read_clip(directory)
    masks = sorted(directory.glob("mask_*.pgm"))
    if len(masks) != len(frames):
        raise FileNotFoundError(f"{directory}: expected {len(frames)} mask_*.pgm files, found {len(masks)}")
    mask = np.stack([read_pnm(m) for m in masks])
    skel = load_skeletons(directory / "skeletons.json")
    meta = directory / "scene.json"
    prompt = json.loads(meta.read_text()).get("prompt", "figure") if meta.is_file() else "figure"
    return TrainingClip(frames, mask, skel, prompt)


# -- subcommands ---------------------------------------------------------------

def cmd_gen_scene(args, cfg: RunConfig) -> None:
    spec = cfg.scene
    for key in ("seed", "frames", "program"):
        if getattr(args, key) is not None:
            spec = replace(spec, **{key: getattr(args, key)})
    cfg.scene = spec
    out = Path(args.out)
    _write_scene(gen_scene(spec), out)
    cfg.write(out / "config.ini")
    print(out)


def _base_model(args, cfg: RunConfig, out: Path) -> Backbone:
    if args.base:
        return model_from_checkpoint(load_checkpoint(args.base))
    model = Backbone(cfg.model)
    pc = cfg.pretrain
    if pc.steps > 0:
        specs = random_scene_specs(pc.scenes, pc.seed, cfg.model.frames, cfg.model.image_size)
        losses = pretrain(model, [gen_scene(s) for s in specs], pc, LatentCodec(cfg.train.codec),
                          cfg.train.schedule())
        save_checkpoint(Checkpoint(model.state_dict(), AdamState(), {}, 0, pc.steps, cfg.model.to_dict(),
                                   asdict(cfg.train), [(0, i, v) for i, v in enumerate(losses)]),
                        out / "base.ckpt")
    return model


def cmd_train(args, cfg: RunConfig) -> None:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.scene:
        clip = _read_scene(Path(args.scene))
    else:
        clip = TrainingClip.from_scene(gen_scene(cfg.scene))
    cfg.write(out / "config.ini")
    if args.resume:
        explicit = args.config != "default" or bool(args.set)
        trainer = Trainer.resume(load_checkpoint(args.resume), [clip], cfg.train if explicit else None)
    else:
        trainer = Trainer(_base_model(args, cfg, out), [clip], cfg.train)
    ck = trainer.run(max_steps=args.max_steps)
    save_checkpoint(ck, out / "model.ckpt")
    (out / "loss_log.csv").write_text("stage,step,loss\n" + format_loss_log(ck.loss_log))
    print(out / "model.ckpt")


def cmd_invert(args, cfg: RunConfig) -> None:
    ck = load_checkpoint(args.checkpoint)
    model = model_from_checkpoint(ck)
    frames = read_clip(args.source)
    skel = load_skeletons(args.skeletons) if args.skeletons else None
    prompt = args.prompt or cfg.edit.inversion_prompt or ck.notes.get("prompt", "figure")
    steps = args.steps or cfg.edit.steps
    tcfg = TrainConfig(**ck.train_config)
    z = invert_clip(model, frames, prompt, tcfg.schedule(), steps, skel, LatentCodec(tcfg.codec))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    np.save(out / "z_star.npy", z)
    cfg.write(out / "config.ini")
    print(out / "z_star.npy")


def cmd_edit(args, cfg: RunConfig) -> None:
    e = cfg.edit
    req = EditRequest(
        source=args.source, reference_skeletons=args.reference, checkpoint=args.checkpoint,
        output_dir=args.out, prompt=args.prompt or e.prompt or None,
        source_skeletons=args.source_skeletons, steps=args.steps or e.steps,
        apply_offset=e.apply_offset and not args.no_offset,
        per_frame_offset=e.per_frame_offset or args.per_frame,
        inversion_prompt=args.inversion_prompt or e.inversion_prompt or None,
    )
    if req.apply_offset and req.source_skeletons is None:
        raise ConfigurationError("--source-skeletons is required unless --no-offset is given")
    edit(req)
    cfg.write(Path(args.out) / "config.ini")
    print(args.out)


def cmd_offset_skel(args, cfg: RunConfig) -> None:
    out = offset_skeletons(load_skeletons(args.source), load_skeletons(args.reference),
                           per_frame=args.per_frame or cfg.edit.per_frame_offset)
    save_skeletons(out, args.out)
    print(args.out)


def cmd_render_skel(args, cfg: RunConfig) -> None:
    seq = load_skeletons(args.skeletons)
    size = tuple(args.size) if args.size else seq.image_size
    out = Path(args.out)
    write_clip(out, rasterize_sequence(seq, size), prefix="skeleton")
    if args.masks:
        for i in range(len(seq)):
            write_pgm(out / f"mask_{i:03d}.pgm", make_mask(seq[i], size))
    print(out)


def cmd_metrics(args, cfg: RunConfig) -> None:
    report = compare_clips(read_clip(args.a), read_clip(args.b))
    text = report.to_text()
    if args.out:
        Path(args.out).write_text(text)
    sys.stdout.write(text)


def cmd_dump_schedule(args, cfg: RunConfig) -> None:
    text = cfg.train.schedule().table()
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="motionedit", description="Skeleton-driven one-shot video motion editing.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, fn, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", default="default", help="config file, or 'default'")
        p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE")
        p.set_defaults(func=fn)
        return p

    p = add("gen-scene", cmd_gen_scene, "render a synthetic stick-figure clip")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--frames", type=int)
    p.add_argument("--program", choices=("walk", "wave", "shift"))

    p = add("train", cmd_train, "two-stage fine-tuning on one clip")
    p.add_argument("--scene", help="scene directory from gen-scene (default: generate from [scene])")
    p.add_argument("--out", required=True)
    p.add_argument("--base", help="base checkpoint; skips pre-training")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--max-steps", type=int)

    p = add("invert", cmd_invert, "DDIM-invert a clip to its noise latent")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--source", required=True)
    p.add_argument("--skeletons")
    p.add_argument("--prompt")
    p.add_argument("--steps", type=int)
    p.add_argument("--out", required=True)

    p = add("edit", cmd_edit, "re-render a clip or image under reference skeletons")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--source", required=True, help="frame directory or single image")
    p.add_argument("--reference", required=True, help="reference skeleton file")
    p.add_argument("--source-skeletons")
    p.add_argument("--prompt")
    p.add_argument("--inversion-prompt")
    p.add_argument("--steps", type=int)
    p.add_argument("--no-offset", action="store_true")
    p.add_argument("--per-frame", action="store_true")
    p.add_argument("--out", required=True)

    p = add("offset-skel", cmd_offset_skel, "map reference skeletons onto the source subject")
    p.add_argument("--source", required=True)
    p.add_argument("--reference", required=True)
    p.add_argument("--per-frame", action="store_true")
    p.add_argument("--out", required=True)

    p = add("render-skel", cmd_render_skel, "rasterise a skeleton file to control frames")
    p.add_argument("--skeletons", required=True)
    p.add_argument("--size", type=int, nargs=2, metavar=("H", "W"))
    p.add_argument("--masks", action="store_true")
    p.add_argument("--out", required=True)

    p = add("metrics", cmd_metrics, "L1 / PSNR / SSIM between two clips")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--out")

    p = add("dump-schedule", cmd_dump_schedule, "print the noise schedule as CSV")
    p.add_argument("--out")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except CliUsageError as exc:
        return _emit_error("usage", EXIT_USAGE, exc)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, args.set)
        args.func(args, cfg)
    except Exception as exc:  # noqa: BLE001 - mapped to exit codes below
        for types, kind, code in _ERROR_KINDS:
            if isinstance(exc, types):
                return _emit_error(kind, code, exc)
        log.debug("internal error", exc_info=True)
        return _emit_error("internal", EXIT_INTERNAL, f"{type(exc).__name__}: {exc}")
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
