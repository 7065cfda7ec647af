"""Spatial/temporal sparsification and unaligned-shift operators.

These build the incomplete and misaligned supervision regimes: dropping
trajectories (randomly or by whole segments), dropping frames (uniformly or
randomly, frame 0 always kept), and jittering positions so the condition no
longer lines up with the input frame. All operators are pure and seeded.
"""

from dataclasses import dataclass
from typing import Tuple, Union

import numpy as np

from .seeding import rng_for
from .trajectory import TrajectorySet


@dataclass(frozen=True)
class SparsitySpec:
    """How much of the trajectory set survives, and how it is chosen."""

    p_s: float = 1.0
    spatial_mode: str = "random"  # random | segment
    p_t: float = 1.0
    temporal_mode: str = "uniform"  # uniform | random
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.p_s <= 1.0 or not 0.0 <= self.p_t <= 1.0:
            raise ValueError(f"retention fractions must be in [0, 1], got p_s={self.p_s}, p_t={self.p_t}")
        if self.spatial_mode not in ("random", "segment"):
            raise ValueError(f"unknown spatial_mode {self.spatial_mode!r}")
        if self.temporal_mode not in ("uniform", "random"):
            raise ValueError(f"unknown temporal_mode {self.temporal_mode!r}")


@dataclass(frozen=True)
class JitterSpec:
    """Misalignment transform: plain shift or resize-then-crop."""

    mode: str = "shift"  # shift | resize_crop
    shift: Tuple[float, float] = (0.0, 0.0)  # (dx, dy) pixels
    scale: float = 1.25
    crop_offset: Union[Tuple[float, float], str] = "random"  # (ox, oy) or "random"
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("shift", "resize_crop"):
            raise ValueError(f"unknown jitter mode {self.mode!r}")
        if self.mode == "resize_crop" and not self.scale > 1.0:
            raise ValueError(f"resize_crop requires scale > 1, got {self.scale}")


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def spatial_sparsify(trajectory_set: TrajectorySet, spec: SparsitySpec) -> TrajectorySet:
    """Retain a p_s fraction of trajectories.

    Random mode keeps exactly floor(p_s * N) tracks, chosen by ranking a
    single seeded permutation so smaller retention fractions always keep a
    subset of larger ones. Segment mode removes whole seg_id groups, largest
    group first (ties by smaller seg_id), until at most ceil(p_s * N) remain.
    """
    n = len(trajectory_set)
    if spec.p_s >= 1.0 or n == 0:
        return trajectory_set
    if spec.spatial_mode == "random":
        k = int(np.floor(spec.p_s * n))
        perm = rng_for(spec.seed, "spatial").permutation(n)
        keep = np.sort(perm[:k])
        retained = [trajectory_set.trajectories[i] for i in keep]
    else:
        target = int(np.ceil(spec.p_s * n))
        groups = {}
        for traj in trajectory_set.trajectories:
            groups.setdefault(traj.seg_id, []).append(traj)
        drop_order = sorted(groups, key=lambda sid: (-len(groups[sid]), sid))
        dropped = set()
        remaining = n
        for sid in drop_order:
            if remaining <= target:
                break
            dropped.add(sid)
            remaining -= len(groups[sid])
        retained = [
            traj for traj in trajectory_set.trajectories if traj.seg_id not in dropped
        ]
    return trajectory_set.replace_trajectories(retained)


def kept_frame_indices(frame_count: int, spec: SparsitySpec) -> np.ndarray:
    """Frame indices surviving temporal sparsification (sorted, unique)."""
    k = max(1, _round_half_up(spec.p_t * frame_count))
    k = min(k, frame_count)
    if spec.temporal_mode == "uniform":
        idx = np.floor(np.linspace(0, frame_count - 1, k) + 0.5).astype(int)
    else:
        rng = rng_for(spec.seed, "temporal")
        rest = rng.choice(np.arange(1, frame_count), size=k - 1, replace=False)
        idx = np.concatenate([[0], np.sort(rest)]).astype(int)
    return idx


def temporal_sparsify(trajectory_set: TrajectorySet, spec: SparsitySpec):
    """Keep a p_t fraction of frames; returns (sparsified set, kept mask).

    Keep count is max(1, round(p_t * T)). Uniform mode keeps evenly spaced
    frames including both endpoints; random mode keeps a seeded sample that
    always contains frame 0 (the generation anchor). Points on dropped
    frames are marked invisible so their condition frames render black while
    the tensor keeps its full frame count.
    """
    t_count = trajectory_set.frame_count
    kept = np.zeros(t_count, dtype=bool)
    kept[kept_frame_indices(t_count, spec)] = True
    if kept.all():
        return trajectory_set, kept
    sparsified = trajectory_set.replace_trajectories(
        [traj.with_positions(traj.positions, traj.visible & kept) for traj in trajectory_set.trajectories]
    )
    return sparsified, kept


def unaligned_jitter(trajectory_set: TrajectorySet, spec: JitterSpec) -> TrajectorySet:
    """Shift or resize-crop all pixel positions; depth is untouched.

    Points transformed outside the frame become invisible. resize_crop maps
    (u, v) -> (u * scale - ox, v * scale - oy); a "random" crop offset is
    drawn uniformly from the valid crop window.
    """
    height, width = trajectory_set.frame_size
    if spec.mode == "shift":
        dx, dy = spec.shift
        matrix = (1.0, float(dx), float(dy))
    else:
        if spec.crop_offset == "random":
            rng = rng_for(spec.seed, "crop")
            ox = rng.uniform(0.0, width * (spec.scale - 1.0))
            oy = rng.uniform(0.0, height * (spec.scale - 1.0))
        else:
            ox, oy = spec.crop_offset
        matrix = (float(spec.scale), -float(ox), -float(oy))
    scale, dx, dy = matrix

    jittered = []
    for traj in trajectory_set.trajectories:
        positions = traj.positions.copy()
        positions[:, 0] = positions[:, 0] * scale + dx
        positions[:, 1] = positions[:, 1] * scale + dy
        inside = (
            (positions[:, 0] >= 0)
            & (positions[:, 0] < width)
            & (positions[:, 1] >= 0)
            & (positions[:, 1] < height)
        )
        jittered.append(traj.with_positions(positions, traj.visible & inside))
    return trajectory_set.replace_trajectories(jittered)


def synthesize_unaligned_pair(scene_spec, offset=(0.0, 0.0), shape_swap=False):
    """Build a training pair whose condition disagrees with the input frame.

    The same motion field drives a displaced (or differently shaped) object
    than the one rendered in the input frame. Thin wrapper over the scene
    generator; see :func:`trajdiff.scenes.make_unaligned_pair`.
    """
    from .scenes import make_unaligned_pair

    return make_unaligned_pair(scene_spec, offset=offset, shape_swap=shape_swap)
