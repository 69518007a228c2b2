"""Fixed, parameter-free latent codec standing in for a VAE.

``pool2`` averages 2x2 pixel blocks (after mapping [0, 1] to [-1, 1]) and
decodes by nearest-neighbour repetition; ``identity`` only rescales.
"""
from __future__ import annotations

import numpy as np

from .tensor import ConfigurationError

CODECS = ("pool2", "identity")


class LatentCodec:
    def __init__(self, kind: str = "pool2"):
        if kind not in CODECS:
            raise ConfigurationError(f"unknown codec {kind!r}; choose from {CODECS}")
        self.kind = kind

    @property
    def factor(self) -> int:
        return 2 if self.kind == "pool2" else 1

    def encode(self, frames: np.ndarray) -> np.ndarray:
        """``[F, 3, H, W]`` in [0, 1] -> latent ``[F, 3, H/f, W/f]`` in [-1, 1]."""
        x = np.asarray(frames, dtype=np.float32) * 2.0 - 1.0
        if self.kind == "identity":
            return x
        f, c, h, w = x.shape
        if h % 2 or w % 2:
            raise ConfigurationError(f"frame size {h}x{w} must be even for the pool2 codec")
        return x.reshape(f, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5), dtype=np.float32)

    def decode(self, latent: np.ndarray) -> np.ndarray:
        x = np.asarray(latent, dtype=np.float32)
        if self.kind == "pool2":
            x = x.repeat(2, axis=2).repeat(2, axis=3)
        return np.clip((x + 1.0) * 0.5, 0.0, 1.0)

    def roundtrip(self, frames: np.ndarray) -> np.ndarray:
        return self.decode(self.encode(frames))
