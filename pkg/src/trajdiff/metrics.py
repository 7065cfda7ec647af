"""Trajectory-control metrics and toy trajectory extraction.

Trajectory error is the diagonal-normalized mean Euclidean distance between
matched generated/source trajectories; trajectory similarity is the mean
cosine similarity of per-step displacement directions against each generated
trajectory's closest source counterpart. A latent-space cosine proxy stands
in for learned frame-consistency scores (and is never comparable to them
numerically). Blob-centroid extraction recovers object paths from
color-separable toy videos in place of a point tracker.
"""

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .codec import VideoCodec
from .trajectory import TrajectorySet

_DEGENERATE_STEP = 1e-6


class UndefinedMetricError(ValueError):
    """Raised when a metric has no matchable or nondegenerate support."""


@dataclass
class ExtractedTrajectory:
    """A 2D path with a per-frame validity mask."""

    positions: np.ndarray  # (T, 2) float64 (u, v)
    valid: np.ndarray      # (T,) bool
    source: str = "ground_truth"  # ground_truth | blob_extracted
    traj_id: int = -1

    def __post_init__(self):
        self.positions = np.ascontiguousarray(self.positions, dtype=np.float64)
        self.valid = np.ascontiguousarray(self.valid, dtype=bool)
        if self.positions.ndim != 2 or self.positions.shape[1] != 2:
            raise ValueError(f"positions must be (T, 2), got {self.positions.shape}")
        if self.valid.shape != (self.positions.shape[0],):
            raise ValueError("valid mask length must equal frame count")

    @property
    def frames(self) -> int:
        return self.positions.shape[0]


def match_trajectories(generated: List[ExtractedTrajectory], source: List[ExtractedTrajectory], matching: str = "by_id"):
    """Pair generated trajectories with source ones.

    by_id pairs equal traj_id; nearest_start pairs each generated trajectory
    with the source whose first valid position is closest (ties by source
    order). Returns a list of (generated_index, source_index).
    """
    if matching not in ("by_id", "nearest_start"):
        raise ValueError(f"unknown matching {matching!r}")
    pairs = []
    if matching == "by_id":
        by_id = {}
        for j, s in enumerate(source):
            by_id.setdefault(s.traj_id, j)
        for i, g in enumerate(generated):
            if g.traj_id in by_id:
                pairs.append((i, by_id[g.traj_id]))
        return pairs
    starts = []
    for s in source:
        idx = np.nonzero(s.valid)[0]
        starts.append(s.positions[idx[0]] if idx.size else None)
    for i, g in enumerate(generated):
        idx = np.nonzero(g.valid)[0]
        if not idx.size:
            continue
        g_start = g.positions[idx[0]]
        best, best_dist = None, np.inf
        for j, s_start in enumerate(starts):
            if s_start is None:
                continue
            dist = float(np.linalg.norm(g_start - s_start))
            if dist < best_dist:
                best, best_dist = j, dist
        if best is not None:
            pairs.append((i, best))
    return pairs


def traj_err(
    generated: List[ExtractedTrajectory],
    source: List[ExtractedTrajectory],
    matching: str = "by_id",
    frame_size=None,
) -> float:
    """Diagonal-normalized mean distance between matched trajectories.

    Per matched pair: mean Euclidean distance over frames where both are
    valid; the result is the mean over pairs, divided by sqrt(H^2 + W^2).
    Pairs without any common valid frame are skipped; no usable pair at all
    raises UndefinedMetricError.
    """
    if frame_size is None:
        raise ValueError("frame_size (H, W) is required for normalization")
    pairs = match_trajectories(generated, source, matching)
    if not pairs:
        raise UndefinedMetricError("no matchable pairs")
    height, width = frame_size
    diagonal = float(np.sqrt(height * height + width * width))
    per_pair = []
    for gi, si in pairs:
        g, s = generated[gi], source[si]
        both = g.valid & s.valid
        if not both.any():
            continue
        dists = np.linalg.norm(g.positions[both] - s.positions[both], axis=1)
        per_pair.append(float(dists.mean()))
    if not per_pair:
        raise UndefinedMetricError("matched pairs share no valid frames")
    return float(np.mean(per_pair)) / diagonal


def _closest_counterpart(g: ExtractedTrajectory, source: List[ExtractedTrajectory]) -> Optional[int]:
    """Source trajectory with minimal mean positional distance to g."""
    best, best_dist = None, np.inf
    for j, s in enumerate(source):
        both = g.valid & s.valid
        if not both.any():
            continue
        dist = float(np.linalg.norm(g.positions[both] - s.positions[both], axis=1).mean())
        if dist < best_dist:
            best, best_dist = j, dist
    return best


def traj_sim(generated: List[ExtractedTrajectory], source: List[ExtractedTrajectory]) -> float:
    """Mean cosine similarity of displacement directions.

    Each generated trajectory is compared against its closest source
    counterpart. Displacements are taken over consecutive frames where both
    trajectories are valid at both ends; steps where either displacement is
    shorter than 1e-6 px are skipped. Invariant to global translation and to
    uniform positive scaling of displacement magnitudes.
    """
    per_traj = []
    for g in generated:
        if int(g.valid.sum()) < 2:
            continue
        j = _closest_counterpart(g, source)
        if j is None:
            continue
        s = source[j]
        both = g.valid & s.valid
        sims = []
        for t in range(g.frames - 1):
            if not (both[t] and both[t + 1]):
                continue
            dg = g.positions[t + 1] - g.positions[t]
            ds = s.positions[t + 1] - s.positions[t]
            ng, ns = np.linalg.norm(dg), np.linalg.norm(ds)
            if ng < _DEGENERATE_STEP or ns < _DEGENERATE_STEP:
                continue
            sims.append(float(dg @ ds / (ng * ns)))
        if sims:
            per_traj.append(float(np.mean(sims)))
    if not per_traj:
        raise UndefinedMetricError("all displacement steps degenerate or unmatched")
    return float(np.mean(per_traj))


def frame_consistency_proxy(video: np.ndarray, codec: Optional[VideoCodec] = None) -> float:
    """Mean cosine similarity of consecutive frames' latent encodings.

    A stand-in for learned frame-consistency metrics; values are comparable
    only within this codebase, never against published numbers.
    """
    video = np.asarray(video, dtype=np.float64)
    if video.ndim != 4 or video.shape[0] < 2:
        raise ValueError("need a (T>=2, H, W, 3) video")
    if codec is None:
        f_s = next(
            (f for f in (8, 4, 2) if video.shape[1] % f == 0 and video.shape[2] % f == 0),
            None,
        )
        if f_s is None:
            raise ValueError(f"frame size {video.shape[1:3]} not divisible by 2")
        codec = VideoCodec(f_t=1, f_s=f_s, channels=16, seed=0)
    encodings = [codec.encode(video[t:t + 1]).tokens_flat.ravel() for t in range(video.shape[0])]
    sims = []
    for a, b in zip(encodings[:-1], encodings[1:]):
        na, nb = np.linalg.norm(a), np.linalg.norm(b)
        if na < 1e-12 and nb < 1e-12:
            sims.append(1.0)
        elif na < 1e-12 or nb < 1e-12:
            sims.append(0.0)
        else:
            sims.append(float(a @ b / (na * nb)))
    return float(np.mean(sims))


def extract_blob_trajectories(
    video: np.ndarray,
    color_keys,
    tolerance: float = 0.25,
) -> List[ExtractedTrajectory]:
    """Centroid of pixels near each color key, per frame.

    Pixel centers are (col + 0.5, row + 0.5); a frame with no pixel within
    ``tolerance`` (Euclidean RGB distance, values in [0, 1]) is invalid for
    that key. One trajectory per key, traj_id = key index.
    """
    video = np.asarray(video)
    if video.dtype == np.uint8:
        video = video.astype(np.float64) / 255.0
    t_count, height, width = video.shape[:3]
    cols = np.arange(width, dtype=np.float64) + 0.5
    rows = np.arange(height, dtype=np.float64) + 0.5
    out = []
    for key_index, key in enumerate(color_keys):
        key = np.asarray(key, dtype=np.float64)
        positions = np.zeros((t_count, 2), dtype=np.float64)
        valid = np.zeros(t_count, dtype=bool)
        for t in range(t_count):
            dist2 = ((video[t] - key) ** 2).sum(axis=2)
            mask = dist2 <= tolerance * tolerance
            if mask.any():
                ys, xs = np.nonzero(mask)
                positions[t] = (cols[xs].mean(), rows[ys].mean())
                valid[t] = True
        out.append(
            ExtractedTrajectory(
                positions=positions, valid=valid, source="blob_extracted", traj_id=key_index
            )
        )
    return out


def tracks_to_extracted(trajectory_set: TrajectorySet) -> List[ExtractedTrajectory]:
    """Ground-truth trajectories as 2D extracted paths, one per track."""
    return [
        ExtractedTrajectory(
            positions=traj.positions[:, :2],
            valid=traj.visible,
            source="ground_truth",
            traj_id=traj.track_id,
        )
        for traj in trajectory_set.trajectories
    ]


def segment_center_trajectories(trajectory_set: TrajectorySet) -> List[ExtractedTrajectory]:
    """Per-segment center paths: mean of member point positions per frame.

    Frames where no member is visible are invalid. traj_id is the seg_id, so
    blob trajectories keyed by object color can be matched by_id against
    these.
    """
    by_seg = {}
    for traj in trajectory_set.trajectories:
        by_seg.setdefault(traj.seg_id, []).append(traj)
    out = []
    t_count = trajectory_set.frame_count
    for seg_id in sorted(by_seg):
        members = by_seg[seg_id]
        positions = np.zeros((t_count, 2), dtype=np.float64)
        valid = np.zeros(t_count, dtype=bool)
        for t in range(t_count):
            pts = np.array([m.positions[t, :2] for m in members])
            positions[t] = pts.mean(axis=0)
            valid[t] = any(m.visible[t] for m in members)
        out.append(
            ExtractedTrajectory(
                positions=positions, valid=valid, source="ground_truth", traj_id=seg_id
            )
        )
    return out
