"""Annotated point-trajectory data model.

A trajectory set holds N tracks over T frames. Each track carries a
segmentation id (which object instance the point belongs to), a track id
(temporal correspondence of the same physical point), an optional RGB
appearance cue, and per-frame 3D positions (x, y in pixels, z an ordering
depth) with a visibility flag. Types are immutable after construction and
safe to share across workers.
"""

from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Optional

import numpy as np

MAX_SEG_ID = 254
MAX_TRACK_ID = 65534


class ProjectionError(ValueError):
    """Raised when projecting a point with nonpositive depth."""


class IdEncodingError(ValueError):
    """Raised for seg/track ids outside the 8-bit channel capacity."""


class TrajectoryFormatError(ValueError):
    """Raised when a trajectory file cannot be parsed."""


class PointSample(NamedTuple):
    """One point at one frame: (x, y, z) position and visibility."""

    position: np.ndarray
    visible: bool


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics for projecting CG-scene points to pixels."""

    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError(f"focal lengths must be positive, got ({self.fx}, {self.fy})")


@dataclass(frozen=True)
class Trajectory:
    """One annotated track: ids, optional color cue, and per-frame samples.

    ``positions`` is (T, 3) float64 and ``visible`` is (T,) bool; both are
    frozen (non-writeable) after construction.
    """

    track_id: int
    seg_id: int
    positions: np.ndarray
    visible: np.ndarray
    color: Optional[np.ndarray] = None

    def __post_init__(self):
        positions = np.ascontiguousarray(self.positions, dtype=np.float64)
        visible = np.ascontiguousarray(self.visible, dtype=bool)
        if positions.ndim != 2 or positions.shape[1] != 3:
            raise ValueError(f"positions must be (T, 3), got {positions.shape}")
        if visible.shape != (positions.shape[0],):
            raise ValueError(
                f"visible must be (T,)={positions.shape[0]}, got {visible.shape}"
            )
        color = self.color
        if color is not None:
            color = np.ascontiguousarray(color, dtype=np.float64)
            if color.shape != (3,):
                raise ValueError(f"color must be a 3-vector, got shape {color.shape}")
            color.setflags(write=False)
        positions.setflags(write=False)
        visible.setflags(write=False)
        object.__setattr__(self, "positions", positions)
        object.__setattr__(self, "visible", visible)
        object.__setattr__(self, "color", color)

    def __len__(self) -> int:
        return self.positions.shape[0]

    def sample(self, t: int) -> PointSample:
        return PointSample(self.positions[t], bool(self.visible[t]))

    def with_positions(self, positions, visible=None) -> "Trajectory":
        """Copy with new positions (and optionally a new visibility mask)."""
        return Trajectory(
            track_id=self.track_id,
            seg_id=self.seg_id,
            positions=positions,
            visible=self.visible if visible is None else visible,
            color=self.color,
        )


@dataclass(frozen=True)
class TrajectorySet:
    """All annotated trajectories of one scene plus the frame geometry."""

    trajectories: tuple
    frame_count: int
    frame_size: tuple  # (H, W) pixels

    def __post_init__(self):
        object.__setattr__(self, "trajectories", tuple(self.trajectories))
        object.__setattr__(self, "frame_size", tuple(self.frame_size))

    def __len__(self) -> int:
        return len(self.trajectories)

    @property
    def has_color(self) -> bool:
        return any(traj.color is not None for traj in self.trajectories)

    def replace_trajectories(self, trajectories) -> "TrajectorySet":
        return TrajectorySet(
            trajectories=tuple(trajectories),
            frame_count=self.frame_count,
            frame_size=self.frame_size,
        )


def validate_set(trajectory_set: TrajectorySet) -> list:
    """Check all invariants of a trajectory set; returns human-readable findings.

    An empty list means the set is valid. Pure: the same set always yields the
    same findings in the same order.
    """
    violations = []
    h, w = trajectory_set.frame_size
    if trajectory_set.frame_count < 0:
        violations.append(f"frame_count {trajectory_set.frame_count} is negative")
    if h < 1 or w < 1:
        violations.append(f"frame_size {trajectory_set.frame_size} must be at least 1x1")
    seen = {}
    for i, traj in enumerate(trajectory_set.trajectories):
        if len(traj) != trajectory_set.frame_count:
            violations.append(
                f"trajectory {i}: length mismatch, has {len(traj)} samples "
                f"but scene has T={trajectory_set.frame_count}"
            )
        if traj.track_id < 0:
            violations.append(f"trajectory {i}: negative track_id {traj.track_id}")
        if traj.seg_id < 0:
            violations.append(f"trajectory {i}: negative seg_id {traj.seg_id}")
        if traj.track_id in seen:
            violations.append(
                f"trajectory {i}: duplicate track_id {traj.track_id} "
                f"(first used by trajectory {seen[traj.track_id]})"
            )
        else:
            seen[traj.track_id] = i
        if traj.color is not None and (np.any(traj.color < 0) or np.any(traj.color > 1)):
            violations.append(f"trajectory {i}: color outside [0, 1]")
        bad_depth = traj.visible & (traj.positions[:, 2] <= 0)
        if np.any(bad_depth):
            frames = np.nonzero(bad_depth)[0].tolist()
            violations.append(
                f"trajectory {i}: nonpositive depth on visible frames {frames}"
            )
    return violations


def project_point(camera_space_point, intrinsics: CameraIntrinsics):
    """Pinhole projection of a camera-space 3D point to (u, v, z).

    The depth z is preserved so the rasterizer can resolve occlusion. The
    result is scale-covariant: (aX, aY, aZ) projects to the same (u, v).
    """
    x, y, z = (float(c) for c in camera_space_point)
    if z <= 0:
        raise ProjectionError(f"cannot project point with depth z={z} <= 0")
    u = intrinsics.fx * x / z + intrinsics.cx
    v = intrinsics.fy * y / z + intrinsics.cy
    return u, v, z


def encode_ids_to_rgb(seg_id: int, track_id: int):
    """Map (seg_id, track_id) to an 8-bit RGB triple, reserving black.

    Red carries seg_id + 1; green/blue carry (track_id + 1) split as
    div/mod 256, so (0, 0, 0) never encodes a point and the mapping is
    injective over seg_id in [0, 254], track_id in [0, 65534].
    """
    if not 0 <= seg_id <= MAX_SEG_ID:
        raise IdEncodingError(f"seg_id {seg_id} outside [0, {MAX_SEG_ID}]")
    if not 0 <= track_id <= MAX_TRACK_ID:
        raise IdEncodingError(f"track_id {track_id} outside [0, {MAX_TRACK_ID}]")
    code = track_id + 1
    return (seg_id + 1, code // 256, code % 256)


def decode_rgb_to_ids(rgb):
    """Inverse of :func:`encode_ids_to_rgb`; background (0,0,0) gives None."""
    r, g, b = (int(c) for c in rgb)
    if (r, g, b) == (0, 0, 0):
        return None
    if r == 0 or (g == 0 and b == 0):
        raise IdEncodingError(f"rgb {(r, g, b)} is not a valid id encoding")
    return (r - 1, g * 256 + b - 1)


def encode_ids_array(seg_ids: np.ndarray, track_ids: np.ndarray) -> np.ndarray:
    """Vectorized id encoding; returns (..., 3) uint8."""
    seg_ids = np.asarray(seg_ids)
    track_ids = np.asarray(track_ids)
    if np.any(seg_ids < 0) or np.any(seg_ids > MAX_SEG_ID):
        raise IdEncodingError(f"seg_id outside [0, {MAX_SEG_ID}]")
    if np.any(track_ids < 0) or np.any(track_ids > MAX_TRACK_ID):
        raise IdEncodingError(f"track_id outside [0, {MAX_TRACK_ID}]")
    code = track_ids.astype(np.int64) + 1
    out = np.stack(
        [seg_ids + 1, code // 256, code % 256], axis=-1
    )
    return out.astype(np.uint8)


FORMAT_MAGIC = "trajectory-set"
FORMAT_VERSION = 1


def save_trajectory_set(path, trajectory_set: TrajectorySet) -> None:
    """Write the versioned text container for a trajectory set.

    Integer fields round-trip bit-exactly; positions are written with
    ``repr`` so floats round-trip exactly as well (beyond the required six
    significant digits).
    """
    h, w = trajectory_set.frame_size
    lines = [
        f"{FORMAT_MAGIC} v{FORMAT_VERSION} "
        f"N {len(trajectory_set)} T {trajectory_set.frame_count} H {h} W {w}"
    ]
    for traj in trajectory_set.trajectories:
        header = f"trajectory track_id {traj.track_id} seg_id {traj.seg_id}"
        if traj.color is not None:
            header += " color " + " ".join(repr(float(c)) for c in traj.color)
        lines.append(header)
        for t in range(len(traj)):
            x, y, z = traj.positions[t]
            lines.append(
                f"{t} {x!r} {y!r} {z!r} {1 if traj.visible[t] else 0}"
            )
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")


def load_trajectory_set(path) -> TrajectorySet:
    """Parse a file written by :func:`save_trajectory_set`."""
    lines = Path(path).read_text(encoding="ascii").splitlines()
    if not lines:
        raise TrajectoryFormatError(f"{path}: empty file")
    head = lines[0].split()
    if len(head) != 10 or head[0] != FORMAT_MAGIC or head[1] != f"v{FORMAT_VERSION}":
        raise TrajectoryFormatError(f"{path}: bad header {lines[0]!r}")
    try:
        fields = {head[i]: int(head[i + 1]) for i in range(2, 10, 2)}
        n, t_count = fields["N"], fields["T"]
        frame_size = (fields["H"], fields["W"])
    except (KeyError, ValueError) as exc:
        raise TrajectoryFormatError(f"{path}: bad header {lines[0]!r}") from exc

    trajectories = []
    idx = 1
    for _ in range(n):
        if idx >= len(lines):
            raise TrajectoryFormatError(f"{path}: truncated, expected {n} trajectories")
        parts = lines[idx].split()
        if parts[:1] != ["trajectory"]:
            raise TrajectoryFormatError(f"{path}: expected trajectory header at line {idx + 1}")
        idx += 1
        kv = parts[1:]
        header = {}
        i = 0
        while i < len(kv):
            key = kv[i]
            if key == "color":
                header["color"] = [float(c) for c in kv[i + 1:i + 4]]
                i += 4
            else:
                header[key] = int(kv[i + 1])
                i += 2
        positions = np.empty((t_count, 3), dtype=np.float64)
        visible = np.empty(t_count, dtype=bool)
        for t in range(t_count):
            row = lines[idx].split()
            if len(row) != 5 or int(row[0]) != t:
                raise TrajectoryFormatError(
                    f"{path}: bad sample line {idx + 1}: {lines[idx]!r}"
                )
            positions[t] = [float(row[1]), float(row[2]), float(row[3])]
            visible[t] = row[4] == "1"
            idx += 1
        trajectories.append(
            Trajectory(
                track_id=header["track_id"],
                seg_id=header["seg_id"],
                positions=positions,
                visible=visible,
                color=np.array(header["color"]) if "color" in header else None,
            )
        )
    return TrajectorySet(
        trajectories=tuple(trajectories), frame_count=t_count, frame_size=frame_size
    )
