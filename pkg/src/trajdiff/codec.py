"""Deterministic spatiotemporal video tokenizer.

Stands in for a pretrained video VAE: frame 0 is patched alone, the
remaining frames in temporal groups of f_t, and every f_t x f_s x f_s x 3
patch is linearly projected to d channels. The projection is fixed and
seeded: its leading rows are per-channel means over 2x2 spatial sub-blocks
(so decoded videos keep coarse color layout, which the blob-tracking metrics
rely on) and the remaining rows are a seeded random orthogonal completion.
Decoding uses the pseudo-inverse, so encode -> decode -> encode is exact up
to float error and the whole map is linear.
"""

from dataclasses import dataclass
from pathlib import Path
from typing import Tuple

import numpy as np

from .seeding import rng_for


class CodecShapeError(ValueError):
    """Raised when a video's shape is incompatible with the codec factors."""


@dataclass(frozen=True)
class LatentGrid:
    """Token grid (T_l, H_l, W_l, d) plus the geometry that produced it."""

    tokens: np.ndarray
    factors: Tuple[int, int]  # (f_t, f_s)
    source_shape: Tuple[int, int, int]  # (T, H, W)

    def __post_init__(self):
        self.tokens.setflags(write=False)

    @property
    def grid_shape(self):
        return self.tokens.shape[:3]

    @property
    def channels(self) -> int:
        return self.tokens.shape[3]

    @property
    def tokens_flat(self) -> np.ndarray:
        """Tokens flattened to (T_l * H_l * W_l, d) in frame-major order."""
        return self.tokens.reshape(-1, self.tokens.shape[3])


def _structured_rows(f_t: int, f_s: int) -> np.ndarray:
    """Sub-block mean features: 2x2 spatial blocks x 3 channels, 12 rows."""
    half = f_s // 2
    rows = []
    for br in range(2):
        for bc in range(2):
            for ch in range(3):
                basis = np.zeros((f_t, f_s, f_s, 3), dtype=np.float64)
                r0, c0 = br * half, bc * half
                r1 = f_s if br == 1 else half
                c1 = f_s if bc == 1 else half
                basis[:, r0:r1, c0:c1, ch] = 1.0
                basis /= basis.sum()
                rows.append(basis.ravel())
    return np.stack(rows, axis=0)


def _projection(f_t: int, f_s: int, channels: int, rng) -> np.ndarray:
    """Build the (patch_dim, channels) projection matrix."""
    structured = _structured_rows(f_t, f_s)
    dim = structured.shape[1]
    n_struct = min(channels, structured.shape[0])
    rows = [structured[i] for i in range(n_struct)]
    # Seeded random completion, orthogonalized against the mean rows so the
    # extra channels add information instead of rescaling it.
    while len(rows) < channels:
        candidate = rng.standard_normal(dim)
        for row in rows:
            candidate -= (candidate @ row) / (row @ row) * row
        norm = np.linalg.norm(candidate)
        if norm > 1e-8:
            rows.append(candidate / norm)
    return np.stack(rows, axis=0).T.copy()  # (dim, channels)


class VideoCodec:
    """Fixed seeded linear patch tokenizer with a least-squares decoder."""

    def __init__(self, f_t: int = 4, f_s: int = 8, channels: int = 16, seed: int = 0):
        if f_t < 1 or f_s < 2 or f_s % 2 != 0:
            raise ValueError(f"need f_t >= 1 and even f_s >= 2, got ({f_t}, {f_s})")
        if channels < 1:
            raise ValueError(f"channels must be >= 1, got {channels}")
        self.f_t = f_t
        self.f_s = f_s
        self.channels = channels
        self.seed = seed
        rng = rng_for(seed, "codec-projection")
        self._proj_first = _projection(1, f_s, channels, rng)
        self._proj_rest = _projection(f_t, f_s, channels, rng)
        self._pinv_first = np.linalg.pinv(self._proj_first)
        self._pinv_rest = np.linalg.pinv(self._proj_rest)

    @property
    def factors(self):
        return (self.f_t, self.f_s)

    def latent_frames(self, frame_count: int) -> int:
        return (frame_count - 1) // self.f_t + 1

    def _check_shape(self, shape):
        t_count, height, width = shape[0], shape[1], shape[2]
        if (t_count - 1) % self.f_t != 0:
            raise CodecShapeError(
                f"frame count {t_count} must satisfy T = 1 (mod {self.f_t})"
            )
        if height % self.f_s != 0 or width % self.f_s != 0:
            raise CodecShapeError(
                f"frame size {height}x{width} must be divisible by f_s={self.f_s}"
            )

    def _patches(self, frames: np.ndarray, f_t: int) -> np.ndarray:
        """(f_t * k, H, W, 3) frames -> (k, H_l, W_l, patch_dim)."""
        k = frames.shape[0] // f_t
        height, width = frames.shape[1], frames.shape[2]
        h_l, w_l = height // self.f_s, width // self.f_s
        view = frames.reshape(k, f_t, h_l, self.f_s, w_l, self.f_s, 3)
        view = view.transpose(0, 2, 4, 1, 3, 5, 6)
        return view.reshape(k, h_l, w_l, f_t * self.f_s * self.f_s * 3)

    def _unpatch(self, patches: np.ndarray, f_t: int) -> np.ndarray:
        k, h_l, w_l = patches.shape[:3]
        view = patches.reshape(k, h_l, w_l, f_t, self.f_s, self.f_s, 3)
        view = view.transpose(0, 3, 1, 4, 2, 5, 6)
        return view.reshape(k * f_t, h_l * self.f_s, w_l * self.f_s, 3)

    def encode(self, video: np.ndarray) -> LatentGrid:
        """Tokenize a (T, H, W, 3) float video into a LatentGrid."""
        video = np.asarray(video, dtype=np.float64)
        if video.ndim != 4 or video.shape[3] != 3:
            raise CodecShapeError(f"expected (T, H, W, 3) video, got {video.shape}")
        self._check_shape(video.shape)
        t_count, height, width = video.shape[:3]
        first = self._patches(video[:1], 1) @ self._proj_first  # (1, H_l, W_l, d)
        if t_count > 1:
            rest = self._patches(video[1:], self.f_t) @ self._proj_rest
            tokens = np.concatenate([first, rest], axis=0)
        else:
            tokens = first
        return LatentGrid(
            tokens=tokens,
            factors=self.factors,
            source_shape=(t_count, height, width),
        )

    def decode(self, grid: LatentGrid) -> np.ndarray:
        """Least-squares reconstruction back to a (T, H, W, 3) float video."""
        if grid.factors != self.factors:
            raise CodecShapeError(
                f"grid factors {grid.factors} do not match codec {self.factors}"
            )
        t_count, height, width = grid.source_shape
        t_l, h_l, w_l = grid.grid_shape
        if grid.channels != self.channels:
            raise CodecShapeError(
                f"grid has {grid.channels} channels, codec expects {self.channels}"
            )
        if (
            t_l != self.latent_frames(t_count)
            or h_l != height // self.f_s
            or w_l != width // self.f_s
        ):
            raise CodecShapeError(
                f"grid shape {grid.grid_shape} inconsistent with source {grid.source_shape}"
            )
        first = self._unpatch(grid.tokens[:1] @ self._pinv_first, 1)
        if t_l > 1:
            rest = self._unpatch(grid.tokens[1:] @ self._pinv_rest, self.f_t)
            return np.concatenate([first, rest], axis=0)
        return first

    def grid_from_flat(self, tokens_flat: np.ndarray, source_shape) -> LatentGrid:
        """Rebuild a LatentGrid from flattened model tokens."""
        t_count, height, width = source_shape
        shape = (
            self.latent_frames(t_count),
            height // self.f_s,
            width // self.f_s,
            self.channels,
        )
        return LatentGrid(
            tokens=np.ascontiguousarray(tokens_flat, dtype=np.float64).reshape(shape),
            factors=self.factors,
            source_shape=tuple(source_shape),
        )


GRID_FORMAT_VERSION = 1


def save_latent_grid(path, grid: LatentGrid) -> None:
    """Flat binary tensor file with an ASCII shape header."""
    t_l, h_l, w_l = grid.grid_shape
    header = (
        f"latent-grid v{GRID_FORMAT_VERSION} {t_l} {h_l} {w_l} {grid.channels} "
        f"{grid.factors[0]} {grid.factors[1]} "
        f"{grid.source_shape[0]} {grid.source_shape[1]} {grid.source_shape[2]}\n"
    )
    with open(path, "wb") as f:
        f.write(header.encode("ascii"))
        f.write(np.ascontiguousarray(grid.tokens, dtype="<f8").tobytes())


def load_latent_grid(path) -> LatentGrid:
    with open(path, "rb") as f:
        header = f.readline().decode("ascii").split()
        if header[:2] != ["latent-grid", f"v{GRID_FORMAT_VERSION}"]:
            raise ValueError(f"{path}: not a latent-grid v{GRID_FORMAT_VERSION} file")
        t_l, h_l, w_l, d, f_t, f_s, t, height, width = (int(x) for x in header[2:])
        tokens = np.frombuffer(f.read(), dtype="<f8").reshape(t_l, h_l, w_l, d)
    return LatentGrid(
        tokens=tokens.copy(), factors=(f_t, f_s), source_shape=(t, height, width)
    )
