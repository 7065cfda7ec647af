"""Deterministic toy scenes with exact ground-truth trajectories.

Scenes are moving colored shapes (rectangles and circles) with depth
ordering, optional late appearance, and parametric paths. Rendering and the
emitted trajectory annotations come from the same closed-form paths, so
every video ships with exact ground truth for training and evaluation,
including occlusion-aware visibility.
"""

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Tuple

import numpy as np

from .seeding import rng_for
from .trajectory import Trajectory, TrajectorySet

PALETTE = {
    "red": (0.9, 0.15, 0.15),
    "green": (0.15, 0.85, 0.2),
    "blue": (0.2, 0.3, 0.9),
    "yellow": (0.9, 0.85, 0.15),
    "magenta": (0.85, 0.2, 0.8),
    "cyan": (0.2, 0.85, 0.85),
    "white": (0.95, 0.95, 0.95),
    "orange": (0.95, 0.55, 0.1),
}


class SceneSpecError(ValueError):
    """Raised when a scene spec fails validation."""


@dataclass(frozen=True)
class PathSpec:
    """Parametric object-center path over the scene's frames.

    kind "linear": start -> end at constant speed.
    kind "circular": circle around center with given radius, turns full
    revolutions over the video, starting at phase (radians).
    kind "keyframed": piecewise-linear through (frame, x, y) keyframes.
    """

    kind: str = "linear"
    start: Tuple[float, float] = (0.0, 0.0)
    end: Tuple[float, float] = (0.0, 0.0)
    center: Tuple[float, float] = (0.0, 0.0)
    radius: float = 0.0
    turns: float = 1.0
    phase: float = 0.0
    keyframes: tuple = ()

    def __post_init__(self):
        if self.kind not in ("linear", "circular", "keyframed"):
            raise SceneSpecError(f"unknown path kind {self.kind!r}")
        if self.kind == "keyframed":
            if len(self.keyframes) < 2:
                raise SceneSpecError("keyframed path needs at least 2 keyframes")
            frames = [k[0] for k in self.keyframes]
            if frames != sorted(frames):
                raise SceneSpecError("keyframes must be sorted by frame")

    def position(self, t: int, frame_count: int) -> np.ndarray:
        progress = t / (frame_count - 1) if frame_count > 1 else 0.0
        if self.kind == "linear":
            start = np.asarray(self.start, dtype=np.float64)
            end = np.asarray(self.end, dtype=np.float64)
            return start + (end - start) * progress
        if self.kind == "circular":
            angle = self.phase + 2.0 * np.pi * self.turns * progress
            return np.asarray(self.center, dtype=np.float64) + self.radius * np.array(
                [np.cos(angle), np.sin(angle)]
            )
        keys = self.keyframes
        if t <= keys[0][0]:
            return np.asarray(keys[0][1:], dtype=np.float64)
        if t >= keys[-1][0]:
            return np.asarray(keys[-1][1:], dtype=np.float64)
        for (t0, x0, y0), (t1, x1, y1) in zip(keys[:-1], keys[1:]):
            if t0 <= t <= t1:
                w = (t - t0) / (t1 - t0)
                return np.array([x0 + (x1 - x0) * w, y0 + (y1 - y0) * w])
        raise AssertionError("unreachable")

    def translated(self, dx: float, dy: float) -> "PathSpec":
        if self.kind == "linear":
            return PathSpec(
                kind="linear",
                start=(self.start[0] + dx, self.start[1] + dy),
                end=(self.end[0] + dx, self.end[1] + dy),
            )
        if self.kind == "circular":
            return PathSpec(
                kind="circular",
                center=(self.center[0] + dx, self.center[1] + dy),
                radius=self.radius,
                turns=self.turns,
                phase=self.phase,
            )
        return PathSpec(
            kind="keyframed",
            keyframes=tuple((t, x + dx, y + dy) for t, x, y in self.keyframes),
        )


@dataclass(frozen=True)
class ObjectSpec:
    shape: str  # rect | circle
    size: float  # side length / diameter in pixels
    color: Tuple[float, float, float]
    depth: float
    path: PathSpec
    seg_id: int
    appear_frame: int = 0

    def __post_init__(self):
        if self.shape not in ("rect", "circle"):
            raise SceneSpecError(f"unknown shape {self.shape!r}")
        if self.size <= 0:
            raise SceneSpecError(f"object size must be positive, got {self.size}")


@dataclass(frozen=True)
class SceneSpec:
    frame_size: Tuple[int, int]  # (H, W)
    frame_count: int
    objects: tuple
    background: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    points_per_axis: int = 5
    annotate_color: bool = True
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "objects", tuple(self.objects))
        if self.frame_count < 2:
            raise SceneSpecError(f"frame_count must be >= 2, got {self.frame_count}")
        h, w = self.frame_size
        for i, obj in enumerate(self.objects):
            if obj.size > min(h, w):
                raise SceneSpecError(
                    f"object {i} size {obj.size} exceeds frame {self.frame_size}"
                )
            if not 0 <= obj.appear_frame < self.frame_count:
                raise SceneSpecError(
                    f"object {i} appear_frame {obj.appear_frame} outside [0, {self.frame_count})"
                )


@dataclass(frozen=True)
class SceneSample:
    """Rendered scene: float video in [0, 1], ground truth, and caption."""

    video: np.ndarray  # (T, H, W, 3) float64
    trajectories: TrajectorySet
    caption: str


@dataclass(frozen=True)
class UnalignedPair:
    """Condition motion and an input frame that disagree structurally.

    ``condition`` carries the original motion; ``target_video`` and
    ``intended`` describe what the displaced/swapped object should do under
    that same per-frame motion. ``input_frame`` is frame 0 of the target.
    """

    input_frame: np.ndarray
    condition: TrajectorySet
    target_video: np.ndarray
    intended: TrajectorySet
    caption: str


def _coverage(obj: ObjectSpec, center: np.ndarray, px: np.ndarray, py: np.ndarray):
    half = obj.size / 2.0
    if obj.shape == "rect":
        return (np.abs(px - center[0]) <= half) & (np.abs(py - center[1]) <= half)
    return (px - center[0]) ** 2 + (py - center[1]) ** 2 <= half * half


def _covers_point(obj: ObjectSpec, center: np.ndarray, u: float, v: float) -> bool:
    half = obj.size / 2.0
    if obj.shape == "rect":
        return abs(u - center[0]) <= half and abs(v - center[1]) <= half
    return (u - center[0]) ** 2 + (v - center[1]) ** 2 <= half * half


def _interior_offsets(obj: ObjectSpec, points_per_axis: int) -> np.ndarray:
    half = obj.size / 2.0
    margin = obj.size / (2.0 * points_per_axis)
    axis = np.linspace(-half + margin, half - margin, points_per_axis)
    gx, gy = np.meshgrid(axis, axis)
    offsets = np.stack([gx.ravel(), gy.ravel()], axis=1)
    if obj.shape == "circle":
        offsets = offsets[np.linalg.norm(offsets, axis=1) <= half - margin / 2.0]
    return offsets


def _color_name(color) -> str:
    arr = np.asarray(color, dtype=np.float64)
    return min(PALETTE, key=lambda name: np.sum((np.asarray(PALETTE[name]) - arr) ** 2))


def _direction_word(path: PathSpec, frame_count: int) -> str:
    if path.kind == "circular":
        return "around"
    start = path.position(0, frame_count)
    end = path.position(frame_count - 1, frame_count)
    delta = end - start
    if np.linalg.norm(delta) < 1.0:
        return "nowhere"
    if abs(delta[0]) >= abs(delta[1]):
        return "right" if delta[0] > 0 else "left"
    return "down" if delta[1] > 0 else "up"


def scene_caption(spec: SceneSpec) -> str:
    parts = [
        f"a {_color_name(obj.color)} {obj.shape} moving "
        f"{_direction_word(obj.path, spec.frame_count)}"
        for obj in spec.objects
    ]
    return " and ".join(parts) if parts else "an empty scene"


def generate_scene(spec: SceneSpec) -> SceneSample:
    """Render a scene and emit its exact ground-truth trajectories.

    Objects are drawn back-to-front by (depth, object index) so every pixel
    shows the nearest covering object. Each object contributes a grid of
    interior tracking points that move rigidly with it; points are invisible
    before the object appears, outside the frame, or when a nearer object
    covers them.
    """
    height, width = spec.frame_size
    t_count = spec.frame_count
    video = np.empty((t_count, height, width, 3), dtype=np.float64)
    video[:] = np.asarray(spec.background, dtype=np.float64)

    px, py = np.meshgrid(
        np.arange(width, dtype=np.float64) + 0.5,
        np.arange(height, dtype=np.float64) + 0.5,
    )
    centers = np.array(
        [
            [obj.path.position(t, t_count) for t in range(t_count)]
            for obj in spec.objects
        ]
    ) if spec.objects else np.zeros((0, t_count, 2))

    order = sorted(
        range(len(spec.objects)),
        key=lambda i: (spec.objects[i].depth, i),
        reverse=True,
    )
    for t in range(t_count):
        for i in order:
            obj = spec.objects[i]
            if t < obj.appear_frame:
                continue
            mask = _coverage(obj, centers[i, t], px, py)
            video[t][mask] = obj.color

    trajectories = []
    track_id = 0
    for i, obj in enumerate(spec.objects):
        occluders = [
            j
            for j in range(len(spec.objects))
            if (spec.objects[j].depth, j) < (obj.depth, i)
        ]
        for offset in _interior_offsets(obj, spec.points_per_axis):
            positions = np.empty((t_count, 3), dtype=np.float64)
            visible = np.zeros(t_count, dtype=bool)
            for t in range(t_count):
                u, v = centers[i, t] + offset
                positions[t] = (u, v, obj.depth)
                if t < obj.appear_frame:
                    continue
                if not (0 <= u < width and 0 <= v < height):
                    continue
                hidden = any(
                    t >= spec.objects[j].appear_frame
                    and _covers_point(spec.objects[j], centers[j, t], u, v)
                    for j in occluders
                )
                visible[t] = not hidden
            trajectories.append(
                Trajectory(
                    track_id=track_id,
                    seg_id=obj.seg_id,
                    positions=positions,
                    visible=visible,
                    color=np.asarray(obj.color) if spec.annotate_color else None,
                )
            )
            track_id += 1
    return SceneSample(
        video=video,
        trajectories=TrajectorySet(
            trajectories=tuple(trajectories),
            frame_count=t_count,
            frame_size=spec.frame_size,
        ),
        caption=scene_caption(spec),
    )


def make_unaligned_pair(spec: SceneSpec, offset=(0.0, 0.0), shape_swap=False) -> UnalignedPair:
    """Same motion, different placement or silhouette.

    The condition trajectories come from the spec as given; the target video
    (whose frame 0 is the input frame) renders objects displaced by
    ``offset`` and optionally with rect/circle swapped, following the same
    per-frame displacements. Per-step displacement vectors of condition and
    intended motion are identical by construction.
    """
    dx, dy = offset
    swapped = {"rect": "circle", "circle": "rect"}
    target_objects = [
        ObjectSpec(
            shape=swapped[obj.shape] if shape_swap else obj.shape,
            size=obj.size,
            color=obj.color,
            depth=obj.depth,
            path=obj.path.translated(dx, dy),
            seg_id=obj.seg_id,
            appear_frame=obj.appear_frame,
        )
        for obj in spec.objects
    ]
    target_spec = SceneSpec(
        frame_size=spec.frame_size,
        frame_count=spec.frame_count,
        objects=tuple(target_objects),
        background=spec.background,
        points_per_axis=spec.points_per_axis,
        annotate_color=spec.annotate_color,
        seed=spec.seed,
    )
    condition = generate_scene(spec)
    target = generate_scene(target_spec)
    return UnalignedPair(
        input_frame=target.video[0],
        condition=condition.trajectories,
        target_video=target.video,
        intended=target.trajectories,
        caption=target.caption,
    )


def sample_scene_spec(
    seed: int,
    frame_size=(48, 64),
    frame_count: int = 17,
    n_objects=(1, 1),
    size_range=(10.0, 16.0),
    min_travel: float = 18.0,
) -> SceneSpec:
    """Draw a random scene spec: moving shapes with distinct palette colors.

    Paths are linear with a direction drawn uniformly on the circle and a
    travel distance of at least ``min_travel`` pixels, so motion cannot be
    inferred from the first frame alone.
    """
    rng = rng_for(seed, "scene-spec")
    height, width = frame_size
    count = int(rng.integers(n_objects[0], n_objects[1] + 1))
    names = rng.choice(list(PALETTE), size=count, replace=False)
    objects = []
    for i in range(count):
        size = float(rng.uniform(*size_range))
        margin = size / 2.0 + 1.0
        start = np.array(
            [rng.uniform(margin, width - margin), rng.uniform(margin, height - margin)]
        )
        for _ in range(64):
            angle = rng.uniform(0.0, 2.0 * np.pi)
            travel = rng.uniform(min_travel, min_travel * 1.8)
            end = start + travel * np.array([np.cos(angle), np.sin(angle)])
            if margin <= end[0] <= width - margin and margin <= end[1] <= height - margin:
                break
        else:
            end = np.array([width - start[0], height - start[1]])
        objects.append(
            ObjectSpec(
                shape=str(rng.choice(["rect", "circle"])),
                size=size,
                color=PALETTE[str(names[i])],
                depth=float(1.0 + i),
                path=PathSpec(kind="linear", start=tuple(start), end=tuple(end)),
                seg_id=i,
            )
        )
    return SceneSpec(
        frame_size=tuple(frame_size),
        frame_count=frame_count,
        objects=tuple(objects),
        seed=seed,
    )


SCENE_FORMAT_VERSION = 1


def save_scene_spec(path, spec: SceneSpec) -> None:
    doc = {
        "version": SCENE_FORMAT_VERSION,
        "frame_size": list(spec.frame_size),
        "frame_count": spec.frame_count,
        "background": list(spec.background),
        "points_per_axis": spec.points_per_axis,
        "annotate_color": spec.annotate_color,
        "seed": spec.seed,
        "objects": [
            {
                "shape": obj.shape,
                "size": obj.size,
                "color": list(obj.color),
                "depth": obj.depth,
                "seg_id": obj.seg_id,
                "appear_frame": obj.appear_frame,
                "path": _path_to_doc(obj.path),
            }
            for obj in spec.objects
        ],
    }
    Path(path).write_text(json.dumps(doc, indent=2) + "\n", encoding="ascii")


def load_scene_spec(path) -> SceneSpec:
    try:
        doc = json.loads(Path(path).read_text(encoding="ascii"))
    except json.JSONDecodeError as exc:
        raise SceneSpecError(f"{path}: invalid JSON: {exc}") from exc
    if doc.get("version") != SCENE_FORMAT_VERSION:
        raise SceneSpecError(f"{path}: unsupported version {doc.get('version')!r}")
    try:
        objects = [
            ObjectSpec(
                shape=o["shape"],
                size=float(o["size"]),
                color=tuple(o["color"]),
                depth=float(o["depth"]),
                seg_id=int(o["seg_id"]),
                appear_frame=int(o.get("appear_frame", 0)),
                path=_path_from_doc(o["path"]),
            )
            for o in doc["objects"]
        ]
        return SceneSpec(
            frame_size=tuple(doc["frame_size"]),
            frame_count=int(doc["frame_count"]),
            objects=tuple(objects),
            background=tuple(doc.get("background", (0.0, 0.0, 0.0))),
            points_per_axis=int(doc.get("points_per_axis", 5)),
            annotate_color=bool(doc.get("annotate_color", True)),
            seed=int(doc.get("seed", 0)),
        )
    except (KeyError, TypeError) as exc:
        raise SceneSpecError(f"{path}: missing or malformed field: {exc}") from exc


def _path_to_doc(path: PathSpec) -> dict:
    if path.kind == "linear":
        return {"kind": "linear", "start": list(path.start), "end": list(path.end)}
    if path.kind == "circular":
        return {
            "kind": "circular",
            "center": list(path.center),
            "radius": path.radius,
            "turns": path.turns,
            "phase": path.phase,
        }
    return {"kind": "keyframed", "keyframes": [list(k) for k in path.keyframes]}


def _path_from_doc(doc: dict) -> PathSpec:
    kind = doc["kind"]
    if kind == "linear":
        return PathSpec(kind="linear", start=tuple(doc["start"]), end=tuple(doc["end"]))
    if kind == "circular":
        return PathSpec(
            kind="circular",
            center=tuple(doc["center"]),
            radius=float(doc["radius"]),
            turns=float(doc.get("turns", 1.0)),
            phase=float(doc.get("phase", 0.0)),
        )
    return PathSpec(kind="keyframed", keyframes=tuple(tuple(k) for k in doc["keyframes"]))
