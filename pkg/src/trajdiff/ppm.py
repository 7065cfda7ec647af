"""Lossless 8-bit RGB frame I/O.

Frames are stored as binary PPM (P6) with a single header line, which keeps
the on-disk format viewable by standard tools while avoiding any codec
dependency. Videos are directories of numbered frames.
"""

import os
import re
from pathlib import Path

import numpy as np


def write_ppm(path, image: np.ndarray) -> None:
    """Write an (H, W, 3) uint8 array as a binary PPM file."""
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"expected (H, W, 3) image, got shape {image.shape}")
    if image.dtype != np.uint8:
        raise ValueError(f"expected uint8 image, got {image.dtype}")
    h, w = image.shape[:2]
    with open(path, "wb") as f:
        f.write(f"P6 {w} {h} 255\n".encode("ascii"))
        f.write(image.tobytes())


def read_ppm(path) -> np.ndarray:
    """Read a binary PPM file written by :func:`write_ppm` (or any P6 file)."""
    with open(path, "rb") as f:
        data = f.read()
    m = re.match(rb"P6\s+(\d+)\s+(\d+)\s+(\d+)\s", data)
    if not m:
        raise ValueError(f"{path}: not a binary PPM (P6) file")
    w, h, maxval = (int(g) for g in m.groups())
    if maxval != 255:
        raise ValueError(f"{path}: only maxval 255 supported, got {maxval}")
    pixels = np.frombuffer(data, dtype=np.uint8, count=h * w * 3, offset=m.end())
    return pixels.reshape(h, w, 3).copy()


def frame_name(index: int) -> str:
    return f"frame_{index:05d}.ppm"


def write_video_frames(directory, video: np.ndarray, prefix: str = "") -> list:
    """Write a (T, H, W, 3) uint8 video as numbered PPM frames; returns paths."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for t in range(video.shape[0]):
        path = directory / (prefix + frame_name(t))
        write_ppm(path, video[t])
        paths.append(path)
    return paths


def read_video_frames(directory, prefix: str = "") -> np.ndarray:
    """Read numbered PPM frames back into a (T, H, W, 3) uint8 video."""
    directory = Path(directory)
    names = sorted(
        n for n in os.listdir(directory)
        if n.startswith(prefix) and n.endswith(".ppm")
    )
    if not names:
        raise FileNotFoundError(f"no .ppm frames under {directory}")
    frames = [read_ppm(directory / n) for n in names]
    return np.stack(frames, axis=0)
