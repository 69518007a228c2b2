"""Binary PPM (P6) / PGM (P5) frame I/O, 8-bit."""
from __future__ import annotations

from pathlib import Path

import numpy as np


class ImageFormatError(ValueError):
    pass


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.clip(np.floor(np.asarray(img, dtype=np.float64) * 255.0 + 0.5), 0, 255).astype(np.uint8)


def _header(kind: bytes, w: int, h: int) -> bytes:
    return kind + b"\n%d %d\n255\n" % (w, h)


def write_ppm(path, img: np.ndarray) -> None:
    """Write ``[3, H, W]`` floats in [0, 1] as P6."""
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[0] != 3:
        raise ImageFormatError(f"PPM needs [3, H, W], got {img.shape}")
    data = to_uint8(img).transpose(1, 2, 0)
    Path(path).write_bytes(_header(b"P6", img.shape[2], img.shape[1]) + data.tobytes())


def write_pgm(path, img: np.ndarray) -> None:
    """Write ``[H, W]`` or ``[1, H, W]`` floats in [0, 1] as P5."""
    img = np.asarray(img)
    if img.ndim == 3:
        img = img[0]
    if img.ndim != 2:
        raise ImageFormatError(f"PGM needs [H, W], got {img.shape}")
    Path(path).write_bytes(_header(b"P5", img.shape[1], img.shape[0]) + to_uint8(img).tobytes())


def _tokens(buf: bytes, count: int):
    out, pos = [], 2
    while len(out) < count:
        while pos < len(buf) and buf[pos:pos + 1].isspace():
            pos += 1
        if buf[pos:pos + 1] == b"#":
            while pos < len(buf) and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(buf) and not buf[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ImageFormatError("truncated header")
        out.append(int(buf[start:pos]))
    return out, pos + 1


def read_pnm(path) -> np.ndarray:
    """Read P6 as ``[3, H, W]`` or P5 as ``[1, H, W]``, floats in [0, 1]."""
    buf = Path(path).read_bytes()
    magic = buf[:2]
    if magic not in (b"P5", b"P6"):
        raise ImageFormatError(f"{path}: not a binary PGM/PPM file")
    (w, h, maxval), pos = _tokens(buf, 3)
    if maxval != 255:
        raise ImageFormatError(f"{path}: only 8-bit files are supported")
    c = 3 if magic == b"P6" else 1
    raw = np.frombuffer(buf, dtype=np.uint8, count=w * h * c, offset=pos) if len(buf) - pos >= w * h * c else None
    if raw is None:
        raise ImageFormatError(f"{path}: truncated pixel data")
    return (raw.reshape(h, w, c).transpose(2, 0, 1).astype(np.float32) / 255.0)


def read_image(path) -> np.ndarray:
    """PPM/PGM natively; PNG through Pillow when it is installed."""
    path = Path(path)
    if path.suffix.lower() == ".png":
        try:
            from PIL import Image
        except ImportError:  # pragma: no cover
            raise ImageFormatError("PNG input needs Pillow") from None
        arr = np.asarray(Image.open(path).convert("RGB"), dtype=np.float32) / 255.0
        return arr.transpose(2, 0, 1)
    img = read_pnm(path)
    return np.repeat(img, 3, axis=0) if img.shape[0] == 1 else img


def write_clip(directory, frames: np.ndarray, prefix: str = "frame") -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, f in enumerate(frames):
        p = directory / f"{prefix}_{i:03d}.ppm"
        write_ppm(p, f)
        paths.append(p)
    return paths


def write_masks(directory, masks: np.ndarray, prefix: str = "mask") -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, m in enumerate(masks):
        p = directory / f"{prefix}_{i:03d}.pgm"
        write_pgm(p, m)
        paths.append(p)
    return paths


def read_clip(source, prefix: str = "frame") -> np.ndarray:
    """Frames ``[F, 3, H, W]`` from a directory of ``prefix_*.ppm`` (or .png) or one image."""
    source = Path(source)
    if source.is_file():
        return read_image(source)[None]
    files = sorted(source.glob(f"{prefix}_*.ppm")) or sorted(source.glob(f"{prefix}_*.png"))
    if not files:
        raise FileNotFoundError(f"no {prefix}_*.ppm frames in {source}")
    return np.stack([read_image(f) for f in files])
