"""Input checks shared by the estimator facade and the pipeline."""
from __future__ import annotations

import numpy as np

from .skeleton import SkeletonError, SkeletonSequence
from .tensor import DimensionError


def check_clip(frames, name: str = "X", channels: int = 3) -> np.ndarray:
    """Return ``frames`` as float32 ``[F, C, H, W]`` in [0, 1].

    A single ``[C, H, W]`` image is promoted to a one-frame clip.
    """
    arr = np.asarray(frames)
    if arr.ndim == 3:
        arr = arr[None]
    if arr.ndim != 4 or arr.shape[1] != channels:
        raise DimensionError(f"{name} must be [F, {channels}, H, W], got {np.shape(frames)}")
    if arr.shape[0] < 1:
        raise DimensionError(f"{name} has no frames")
    if not np.issubdtype(arr.dtype, np.number):
        raise TypeError(f"{name} must be numeric, got {arr.dtype}")
    arr = arr.astype(np.float32, copy=False)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains NaN or inf")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise ValueError(f"{name} values must lie in [0, 1]")
    return arr


def check_masks(masks, frames: np.ndarray) -> np.ndarray:
    arr = np.asarray(masks, dtype=np.float32)
    expect = (frames.shape[0], 1) + frames.shape[2:]
    if arr.shape != expect:
        raise DimensionError(f"masks must be {expect}, got {arr.shape}")
    return arr


def check_skeletons(seq, frames: int | None = None, name: str = "skeletons") -> SkeletonSequence:
    if not isinstance(seq, SkeletonSequence):
        raise TypeError(f"{name} must be a SkeletonSequence, got {type(seq).__name__}")
    if frames is not None and len(seq) != frames:
        raise SkeletonError(f"{name} has {len(seq)} frames, clip has {frames}")
    return seq
