"""Stick-figure skeletons: geometry, skeleton offset, rasterisation and synthetic scenes."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import jsonschema
import numpy as np

from .layers import make_rng

JOINT_NAMES = (
    "head", "neck",
    "l_shoulder", "r_shoulder", "l_elbow", "r_elbow", "l_wrist", "r_wrist",
    "l_hip", "r_hip", "l_knee", "r_knee", "l_ankle", "r_ankle",
)
BONES = (
    (0, 1),
    (1, 2), (2, 4), (4, 6),
    (1, 3), (3, 5), (5, 7),
    (1, 8), (8, 10), (10, 12),
    (1, 9), (9, 11), (11, 13),
)
# One RGB colour per bone, in BONES order.
BONE_PALETTE = np.array([
    [255, 255, 255],
    [255, 0, 0], [255, 128, 0], [255, 255, 0],
    [0, 255, 0], [0, 255, 128], [0, 255, 255],
    [0, 128, 255], [0, 0, 255], [128, 0, 255],
    [255, 0, 255], [255, 0, 128], [128, 128, 128],
], dtype=np.float32) / 255.0
JOINT_COLOR = np.array([1.0, 1.0, 1.0], dtype=np.float32)
BONE_HALF_WIDTH = 1  # 3 px wide strokes
JOINT_RADIUS = 2
BODY_RADIUS = 2.5
HEAD_RADIUS = 3.5


class SkeletonError(ValueError):
    pass


class DegenerateExtentError(SkeletonError):
    pass


class SceneError(ValueError):
    pass


@dataclass
class Skeleton:
    """Joint coordinates ``[J, 2]`` as (x, y) pixels plus visibility flags."""

    joints: np.ndarray
    visible: np.ndarray
    bones: tuple = BONES

    def __post_init__(self):
        self.joints = np.asarray(self.joints, dtype=np.float64).reshape(-1, 2)
        self.visible = np.asarray(self.visible, dtype=bool).reshape(-1)
        if not np.isfinite(self.joints).all():
            raise SkeletonError("joint coordinates must be finite")
        if len(self.visible) != len(self.joints):
            raise SkeletonError("one visibility flag per joint")

    def translated(self, dx: float, dy: float = 0.0) -> "Skeleton":
        return replace(self, joints=self.joints + [dx, dy])


@dataclass
class SkeletonSequence:
    coords: np.ndarray  # [F, J, 2]
    visible: np.ndarray  # [F, J]
    image_size: tuple  # (H, W)
    joint_names: tuple = JOINT_NAMES
    bones: tuple = BONES

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=np.float64)
        self.visible = np.asarray(self.visible, dtype=bool)
        if self.coords.ndim != 3 or self.coords.shape[2] != 2:
            raise SkeletonError(f"coords must be [F, J, 2], got {self.coords.shape}")
        if self.visible.shape != self.coords.shape[:2]:
            raise SkeletonError("visibility must be [F, J]")
        if len(self.joint_names) != self.coords.shape[1]:
            raise SkeletonError("joint_names length must equal J")
        if not np.isfinite(self.coords).all():
            raise SkeletonError("joint coordinates must be finite")
        self.image_size = tuple(int(v) for v in self.image_size)
        self.joint_names = tuple(self.joint_names)
        self.bones = tuple(tuple(int(i) for i in b) for b in self.bones)

    def __len__(self) -> int:
        return self.coords.shape[0]

    def __getitem__(self, i: int) -> Skeleton:
        return Skeleton(self.coords[i], self.visible[i], self.bones)

    @classmethod
    def from_frames(cls, frames, image_size, **kw) -> "SkeletonSequence":
        return cls(np.stack([f.joints for f in frames]), np.stack([f.visible for f in frames]),
                   image_size, **kw)

    def translated(self, dx: float, dy: float = 0.0) -> "SkeletonSequence":
        return replace(self, coords=self.coords + [dx, dy])

    def centroids(self) -> np.ndarray:
        """Mean visible joint position per frame, ``[F, 2]``."""
        out = np.full((len(self), 2), np.nan)
        for i in range(len(self)):
            vis = self.visible[i]
            if vis.any():
                out[i] = self.coords[i][vis].mean(axis=0)
        return out


# -- skeleton offset ----------------------------------------------------------

def _visible_points(seq: SkeletonSequence, frame: int | None = None) -> np.ndarray:
    if frame is None:
        pts = seq.coords[seq.visible]
    else:
        pts = seq.coords[frame][seq.visible[frame]]
    if len(pts) < 2:
        raise SkeletonError("at least two visible joints are required")
    return pts


def _bbox(seq, frame=None):
    pts = _visible_points(seq, frame)
    return pts.min(axis=0), pts.max(axis=0)


def get_center(seq: SkeletonSequence, frame: int | None = None) -> tuple[float, float]:
    """Midpoint of the bounding box of all visible joints (one frame if given)."""
    lo, hi = _bbox(seq, frame)
    c = (lo + hi) / 2.0
    return float(c[0]), float(c[1])


def get_hw(seq: SkeletonSequence, frame: int | None = None) -> tuple[float, float]:
    """Bounding-box extents ``(h, w)`` of the visible joints."""
    lo, hi = _bbox(seq, frame)
    return float(hi[1] - lo[1]), float(hi[0] - lo[0])


def _offset_params(source, reference, frame):
    xs, ys = get_center(source, frame)
    xr, yr = get_center(reference, frame)
    hs, ws = get_hw(source, frame)
    hr, wr = get_hw(reference, frame)
    if hr == 0.0 or wr == 0.0:
        raise DegenerateExtentError(f"reference skeleton has degenerate extent h={hr}, w={wr}")
    return (xr, yr), (xr - xs, yr - ys), (hs / hr, ws / wr)


def offset_skeletons(source: SkeletonSequence, reference: SkeletonSequence,
                     per_frame: bool = False) -> SkeletonSequence:
    """Re-centre and re-scale the reference joints onto the source subject.

    Uses the sequence-global bounding box by default; ``per_frame`` matches
    each frame independently (requires equal lengths).
    """
    out = reference.coords.copy()
    if per_frame:
        if len(source) != len(reference):
            raise SkeletonError("per-frame offset needs sequences of equal length")
        frames = [(i, _offset_params(source, reference, i)) for i in range(len(reference))]
    else:
        params = _offset_params(source, reference, None)
        frames = [(slice(None), params)]
    for sel, ((xr, yr), (xd, yd), (sh, sw)) in frames:
        x = reference.coords[sel, ..., 0]
        y = reference.coords[sel, ..., 1]
        # x_r + (x - x_r) * s_w - x_d, rearranged so the identity case is bit-exact
        out[sel, ..., 0] = x + (x - xr) * (sw - 1.0) - xd
        out[sel, ..., 1] = y + (y - yr) * (sh - 1.0) - yd
    return replace(reference, coords=out)


# -- rasterisation ------------------------------------------------------------

def _pixel(p, size) -> tuple[int, int]:
    h, w = size
    x = min(max(int(math.floor(p[0] + 0.5)), 0), w - 1)
    y = min(max(int(math.floor(p[1] + 0.5)), 0), h - 1)
    return x, y


def line_pixels(x0: int, y0: int, x1: int, y1: int) -> list[tuple[int, int]]:
    """Integer Bresenham/midpoint line, endpoints included."""
    pts = []
    dx, dy = abs(x1 - x0), -abs(y1 - y0)
    sx = 1 if x0 < x1 else -1
    sy = 1 if y0 < y1 else -1
    err = dx + dy
    while True:
        pts.append((x0, y0))
        if x0 == x1 and y0 == y1:
            return pts
        e2 = 2 * err
        if e2 >= dy:
            err += dy
            x0 += sx
        if e2 <= dx:
            err += dx
            y0 += sy


def _stamp(canvas, x, y, color, half):
    _, h, w = canvas.shape
    canvas[:, max(y - half, 0):min(y + half + 1, h), max(x - half, 0):min(x + half + 1, w)] = color[:, None, None]


def _disc(canvas, x, y, color, radius):
    _, h, w = canvas.shape
    yy, xx = np.mgrid[0:h, 0:w]
    sel = (xx - x) ** 2 + (yy - y) ** 2 <= radius * radius
    canvas[:, sel] = color[:, None]


def rasterize(skel: Skeleton, size: tuple[int, int]) -> np.ndarray:
    """Render a skeleton control map ``[3, H, W]`` in [0, 1] on black."""
    h, w = size
    canvas = np.zeros((3, h, w), dtype=np.float32)
    vis = skel.visible
    for b, (i, j) in enumerate(skel.bones):
        if not (vis[i] and vis[j]):
            continue
        x0, y0 = _pixel(skel.joints[i], size)
        x1, y1 = _pixel(skel.joints[j], size)
        color = BONE_PALETTE[b % len(BONE_PALETTE)]
        for x, y in line_pixels(x0, y0, x1, y1):
            _stamp(canvas, x, y, color, BONE_HALF_WIDTH)
    for k in range(len(skel.joints)):
        if vis[k]:
            x, y = _pixel(skel.joints[k], size)
            _disc(canvas, x, y, JOINT_COLOR, JOINT_RADIUS)
    return canvas


def rasterize_sequence(seq: SkeletonSequence, size: tuple[int, int] | None = None) -> np.ndarray:
    size = seq.image_size if size is None else size
    return np.stack([rasterize(seq[i], size) for i in range(len(seq))])


def _segment_distance(px, py, a, b):
    ab = b - a
    denom = float(ab @ ab)
    if denom == 0.0:
        return np.hypot(px - a[0], py - a[1])
    t = ((px - a[0]) * ab[0] + (py - a[1]) * ab[1]) / denom
    t = np.clip(t, 0.0, 1.0)
    return np.hypot(px - (a[0] + t * ab[0]), py - (a[1] + t * ab[1]))


def make_mask(skel: Skeleton, size: tuple[int, int], body_radius: float = BODY_RADIUS,
              head_radius: float = HEAD_RADIUS, head_joint: int = 0) -> np.ndarray:
    """Binary figure mask ``[1, H, W]``: dilated bones plus a head disc.

    Geometry is taken at the same rounded, clamped pixel positions the
    rasteriser uses, so the mask covers every rasterised skeleton pixel.
    """
    h, w = size
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    mask = np.zeros((h, w), dtype=bool)
    vis = skel.visible
    pix = {k: np.array(_pixel(skel.joints[k], size), dtype=np.float64)
           for k in range(len(skel.joints)) if vis[k]}
    for i, j in skel.bones:
        if i in pix and j in pix:
            mask |= _segment_distance(xx, yy, pix[i], pix[j]) <= body_radius
    for k, p in pix.items():
        r = head_radius if k == head_joint else body_radius
        mask |= np.hypot(xx - p[0], yy - p[1]) <= r
    return mask[None].astype(np.float32)


# -- synthetic scenes ---------------------------------------------------------

PROGRAMS = ("walk", "wave", "shift")


@dataclass
class SceneSpec:
    frames: int = 8
    image_size: tuple = (32, 32)
    seed: int = 0
    figure_height: float = 20.0
    program: str = "walk"
    direction: int = 1
    speed: float = 1.0
    start_x: float | None = None
    figure_color: tuple = (0.95, 0.85, 0.15)
    head_color: tuple = (0.95, 0.55, 0.45)

    def prompt(self) -> str:
        verb = {"walk": "walking", "wave": "waving", "shift": "shifting"}[self.program]
        side = "right" if self.direction > 0 else "left"
        return f"figure {verb} {side}"


@dataclass
class Scene:
    frames: np.ndarray  # [F, 3, H, W] in [0, 1]
    masks: np.ndarray  # [F, 1, H, W] in {0, 1}
    skeletons: SkeletonSequence
    prompt: str
    background: np.ndarray  # [3, H, W]
    spec: SceneSpec = field(repr=False)


def _pose(cx: float, cy: float, s: float, swing: float, arm_raise: float) -> np.ndarray:
    """Joint positions for a figure whose hip centre is ``(cx, cy)``, height ``s``."""
    j = np.zeros((len(JOINT_NAMES), 2))
    hip = np.array([cx, cy])
    neck = hip + [0.0, -0.32 * s]
    j[1] = neck
    j[0] = neck + [0.0, -0.14 * s]
    j[2], j[3] = neck + [-0.1 * s, 0.02 * s], neck + [0.1 * s, 0.02 * s]
    limb = 0.14 * s

    def seg(start, angle, length):
        return start + length * np.array([math.sin(angle), math.cos(angle)])

    # arms swing against the legs; arm_raise lifts the right arm (waving)
    j[4] = seg(j[2], -0.25 - swing, limb)
    j[6] = seg(j[4], -0.1 - swing, limb)
    j[5] = seg(j[3], 0.25 + swing + arm_raise, limb)
    j[7] = seg(j[5], 0.1 + swing + 1.3 * arm_raise, limb)
    j[8], j[9] = hip + [-0.06 * s, 0.0], hip + [0.06 * s, 0.0]
    leg = 0.2 * s
    j[10] = seg(j[8], swing, leg)
    j[12] = seg(j[10], 0.5 * swing, leg)
    j[11] = seg(j[9], -swing, leg)
    j[13] = seg(j[11], -0.5 * swing, leg)
    return j


def scene_skeletons(spec: SceneSpec) -> SkeletonSequence:
    if spec.program not in PROGRAMS:
        raise SceneError(f"unknown motion program {spec.program!r}; choose from {PROGRAMS}")
    h, w = spec.image_size
    s = spec.figure_height
    cy = h / 2.0 + 0.12 * s
    travel = 0.0 if spec.program == "wave" else spec.speed * spec.direction
    span = travel * (spec.frames - 1)
    x0 = spec.start_x if spec.start_x is not None else w / 2.0 - span / 2.0
    coords = []
    for f in range(spec.frames):
        phase = 2 * math.pi * f / max(spec.frames, 1)
        swing = 0.45 * math.sin(phase) if spec.program == "walk" else 0.0
        arm_raise = 1.6 + 0.5 * math.sin(2 * phase) if spec.program == "wave" else 0.0
        coords.append(_pose(x0 + travel * f, cy, s, swing, arm_raise))
    coords = np.stack(coords)
    margin = HEAD_RADIUS
    if (coords[..., 0].min() < margin or coords[..., 0].max() > w - 1 - margin
            or coords[..., 1].min() < margin or coords[..., 1].max() > h - 1 - margin):
        raise SceneError("figure leaves the frame; reduce speed, height or frame count")
    return SkeletonSequence(coords, np.ones(coords.shape[:2], dtype=bool), (h, w))


def make_background(size: tuple[int, int], seed: int) -> np.ndarray:
    """Smooth seeded texture: a few low-frequency colour waves plus faint grain."""
    h, w = size
    rng = make_rng(seed)
    yy, xx = np.mgrid[0:h, 0:w] / np.array([h, w])[:, None, None]
    bg = np.empty((3, h, w))
    for c in range(3):
        base = rng.uniform(0.15, 0.45)
        acc = np.full((h, w), base)
        for _ in range(3):
            fx, fy = rng.uniform(0.5, 2.0, size=2)
            ph = rng.uniform(0, 2 * math.pi)
            acc += rng.uniform(0.03, 0.08) * np.sin(2 * math.pi * (fx * xx + fy * yy) + ph)
        bg[c] = acc
    bg += rng.normal(0.0, 0.01, size=bg.shape)
    return np.clip(bg, 0.0, 1.0).astype(np.float32)


def render_figure(background: np.ndarray, skel: Skeleton, figure_color, head_color) -> tuple[np.ndarray, np.ndarray]:
    size = background.shape[1:]
    body = make_mask(skel, size, head_radius=0.0)
    mask = make_mask(skel, size)
    frame = background.copy()
    head_only = (mask[0] > 0) & (body[0] == 0)
    frame[:, body[0] > 0] = np.asarray(figure_color, dtype=np.float32)[:, None]
    frame[:, head_only] = np.asarray(head_color, dtype=np.float32)[:, None]
    return frame, mask


def gen_scene(spec: SceneSpec) -> Scene:
    """Render a seeded stick-figure clip with aligned masks and skeletons."""
    if spec.frames < 1:
        raise SceneError("frames must be >= 1")
    skel = scene_skeletons(spec)
    bg = make_background(spec.image_size, spec.seed)
    frames, masks = [], []
    for f in range(spec.frames):
        frame, mask = render_figure(bg, skel[f], spec.figure_color, spec.head_color)
        frames.append(frame)
        masks.append(mask)
    return Scene(np.stack(frames), np.stack(masks), skel, spec.prompt(), bg, spec)


# -- skeleton files -----------------------------------------------------------

SKELETON_SCHEMA = {
    "type": "object",
    "required": ["format", "version", "image_size", "joint_names", "bones", "frames"],
    "properties": {
        "format": {"const": "motionedit-skeleton"},
        "version": {"const": 1},
        "image_size": {"type": "array", "items": {"type": "integer", "minimum": 1},
                       "minItems": 2, "maxItems": 2},
        "joint_names": {"type": "array", "items": {"type": "string"}, "minItems": 1},
        "bones": {"type": "array", "items": {
            "type": "array", "items": {"type": "integer", "minimum": 0},
            "minItems": 2, "maxItems": 2}},
        "frames": {"type": "array", "minItems": 1, "items": {
            "type": "array", "items": {
                "type": "array", "prefixItems": [{"type": "number"}, {"type": "number"},
                                                 {"type": "boolean"}],
                "minItems": 3, "maxItems": 3}}}},
}


def skeleton_to_dict(seq: SkeletonSequence) -> dict:
    return {
        "format": "motionedit-skeleton",
        "version": 1,
        "image_size": list(seq.image_size),
        "joint_names": list(seq.joint_names),
        "bones": [list(b) for b in seq.bones],
        "frames": [[[float(x), float(y), bool(v)] for (x, y), v in zip(c, vis)]
                   for c, vis in zip(seq.coords, seq.visible)],
    }


def skeleton_from_dict(doc: dict) -> SkeletonSequence:
    try:
        jsonschema.validate(doc, SKELETON_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise SkeletonError(f"invalid skeleton file: {exc.message}") from None
    names = doc["joint_names"]
    j = len(names)
    if any(len(f) != j for f in doc["frames"]):
        raise SkeletonError("every frame must list one entry per joint")
    if any(max(b) >= j for b in doc["bones"]):
        raise SkeletonError("bone refers to an unknown joint index")
    arr = np.array([[[p[0], p[1]] for p in f] for f in doc["frames"]], dtype=np.float64)
    vis = np.array([[p[2] for p in f] for f in doc["frames"]], dtype=bool)
    return SkeletonSequence(arr, vis, tuple(doc["image_size"]), tuple(names),
                            tuple(tuple(b) for b in doc["bones"]))


def save_skeletons(seq: SkeletonSequence, path) -> None:
    Path(path).write_text(json.dumps(skeleton_to_dict(seq), indent=1) + "\n")


def load_skeletons(path) -> SkeletonSequence:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SkeletonError(f"invalid skeleton file: {exc}") from None
    return skeleton_from_dict(doc)
