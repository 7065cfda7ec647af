"""Rasterization of annotated trajectories into condition videos.

Two videos are rendered from a trajectory set: an id-coded video whose pixels
encode (seg_id, track_id) via the reserved-black channel bijection, and an
optional color-cue video carrying per-point appearance. Every visible point
paints a small rectangle whose size adapts to the sampling density; where
rectangles overlap, the nearest point (smallest z) wins every contested
pixel, with ties broken by smaller track_id then seg_id so output is
independent of trajectory order.
"""

from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from .trajectory import Trajectory, TrajectorySet, encode_ids_to_rgb


class Footprint(NamedTuple):
    h: int
    w: int
    scale: float


@dataclass(frozen=True)
class ConditionVideoPair:
    """Rendered condition videos: (T, H, W, 3) uint8 tensors."""

    id_video: np.ndarray
    color_video: Optional[np.ndarray]
    footprint: tuple  # (h, w) pixels

    def __post_init__(self):
        self.id_video.setflags(write=False)
        if self.color_video is not None:
            self.color_video.setflags(write=False)


def point_footprint(frame_height: int, grid_size: int) -> Footprint:
    """Dynamic point footprint for a given frame height and sampling grid.

    scale s = min(sqrt(H / x / 1.7), 4), footprint h = floor(2s), w = floor(3s).
    Denser grids (larger x) shrink the footprint; the clamp caps it at 8x12.
    """
    if frame_height < 1:
        raise ValueError(f"frame_height must be >= 1, got {frame_height}")
    if grid_size < 1:
        raise ValueError(f"grid_size must be >= 1, got {grid_size}")
    s = min(np.sqrt(frame_height / grid_size / 1.7), 4.0)
    return Footprint(int(np.floor(2 * s)), int(np.floor(3 * s)), float(s))


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def rasterize_frame(trajectory_set: TrajectorySet, t: int, footprint):
    """Render one frame of the id video (and color video when colors exist).

    Points are painted back-to-front after sorting by (z, track_id, seg_id)
    descending, so the nearest point overwrites all others on contested
    pixels and ties resolve deterministically.
    """
    if not 0 <= t < trajectory_set.frame_count:
        raise IndexError(
            f"frame {t} outside [0, {trajectory_set.frame_count})"
        )
    height, width = trajectory_set.frame_size
    fh, fw = int(footprint[0]), int(footprint[1])
    id_frame = np.zeros((height, width, 3), dtype=np.uint8)
    with_color = trajectory_set.has_color
    color_frame = np.zeros((height, width, 3), dtype=np.uint8) if with_color else None

    visible = [traj for traj in trajectory_set.trajectories if traj.visible[t]]
    order = sorted(
        visible,
        key=lambda traj: (traj.positions[t, 2], traj.track_id, traj.seg_id),
        reverse=True,
    )
    for traj in order:
        u, v = traj.positions[t, 0], traj.positions[t, 1]
        top = _round_half_up(v) - fh // 2
        left = _round_half_up(u) - fw // 2
        r0, r1 = max(top, 0), min(top + fh, height)
        c0, c1 = max(left, 0), min(left + fw, width)
        if r0 >= r1 or c0 >= c1:
            continue
        id_frame[r0:r1, c0:c1] = encode_ids_to_rgb(traj.seg_id, traj.track_id)
        if with_color:
            rgb = (
                np.round(np.asarray(traj.color) * 255.0).astype(np.uint8)
                if traj.color is not None
                else np.zeros(3, dtype=np.uint8)
            )
            color_frame[r0:r1, c0:c1] = rgb
    return id_frame, color_frame


def encode_set(
    trajectory_set: TrajectorySet,
    grid_size: int,
    include_color: bool = True,
) -> ConditionVideoPair:
    """Rasterize a whole trajectory set into its condition video pair.

    ``include_color=False`` omits the color-cue video even when the set has
    color annotations (used by the color-dropping curriculum stages).
    """
    height, width = trajectory_set.frame_size
    fp = point_footprint(height, grid_size)
    working_set = trajectory_set
    if not include_color and trajectory_set.has_color:
        working_set = trajectory_set.replace_trajectories(
            [
                Trajectory(
                    track_id=traj.track_id,
                    seg_id=traj.seg_id,
                    positions=traj.positions,
                    visible=traj.visible,
                    color=None,
                )
                for traj in trajectory_set.trajectories
            ]
        )
    t_count = trajectory_set.frame_count
    id_video = np.zeros((t_count, height, width, 3), dtype=np.uint8)
    color_video = (
        np.zeros((t_count, height, width, 3), dtype=np.uint8)
        if working_set.has_color
        else None
    )
    for t in range(t_count):
        id_frame, color_frame = rasterize_frame(working_set, t, (fp.h, fp.w))
        id_video[t] = id_frame
        if color_video is not None:
            color_video[t] = color_frame
    return ConditionVideoPair(
        id_video=id_video, color_video=color_video, footprint=(fp.h, fp.w)
    )
