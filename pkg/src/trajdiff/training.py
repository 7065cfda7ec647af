"""Density/alignment annealing curriculum and the training loop.

Four stages with decreasing condition determinism: complete (all conditions
always), dense (color cue randomly dropped), sparse (spatial/temporal
sparsification drawn per step), unaligned (jitter on top, at a reduced
learning rate to protect what the aligned stages learned). Stage order can
be replaced by uniform random mixing or reversed for ablations. The base
transformer stays frozen throughout; only adapters, the fusion projection,
and declared heads receive updates.
"""

import json
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Optional, Tuple

import numpy as np

from . import model as model_lib
from .autodiff import zero_grads
from .codec import VideoCodec
from .model import ConditionedDiT, add_noise, diffusion_loss, grid_positions, hash_text
from .rasterize import encode_set
from .seeding import derive_seed, rng_for
from .sparsify import JitterSpec, SparsitySpec, spatial_sparsify, temporal_sparsify, unaligned_jitter


class Stage(Enum):
    COMPLETE = 0
    DENSE = 1
    SPARSE = 2
    UNALIGNED = 3


MODES = ("annealing", "randommix", "sparse2dense")


@dataclass(frozen=True)
class CurriculumConfig:
    """Stage budget and per-stage sampling knobs.

    The default stage lengths are the reference schedule 1200/2400/14000/4000
    scaled down 20x; the ratio is what matters at desk scale.
    """

    stage_steps: Tuple[int, int, int, int] = (60, 120, 700, 200)
    p_c: float = 0.5
    p_s_range: Tuple[float, float] = (0.0, 1.0)
    p_t_range: Tuple[float, float] = (0.0, 1.0)
    lr_aligned: float = 1e-4
    lr_unaligned: float = 1e-5
    mode: str = "annealing"
    seed: int = 0
    jitter_shift_max: Tuple[float, float] = (16.0, 12.0)  # (dx, dy) pixels
    jitter_scale_max: float = 1.5

    def __post_init__(self):
        if any(s <= 0 for s in self.stage_steps):
            raise ValueError(f"stage_steps must be positive, got {self.stage_steps}")
        if not 0.0 <= self.p_c <= 1.0:
            raise ValueError(f"p_c must be in [0, 1], got {self.p_c}")
        if self.lr_unaligned > self.lr_aligned:
            raise ValueError("unaligned learning rate must not exceed the aligned one")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")

    @property
    def total_steps(self) -> int:
        return sum(self.stage_steps)

    @property
    def boundaries(self) -> Tuple[int, int, int]:
        c = np.cumsum(self.stage_steps)
        return (int(c[0]), int(c[1]), int(c[2]))


@dataclass(frozen=True)
class StageDirective:
    """One step's sampled augmentation plan and learning rate."""

    stage: Stage
    drop_color: bool
    sparsity: Optional[SparsitySpec]
    jitter: Optional[JitterSpec]
    lr: float


def stage_for_step(step: int, config: CurriculumConfig) -> Optional[Stage]:
    """Which stage a global step belongs to; None once training is complete."""
    if step < 0:
        raise ValueError(f"step must be >= 0, got {step}")
    if step >= config.total_steps:
        return None
    if config.mode == "randommix":
        rng = rng_for(config.seed, "stage", step)
        return Stage(int(rng.integers(4)))
    order = list(zip(Stage, config.stage_steps))
    if config.mode == "sparse2dense":
        order = order[::-1]
    for stage, length in order:
        if step < length:
            return stage
        step -= length
    raise AssertionError("unreachable")


def sample_directive(stage: Stage, config: CurriculumConfig, rng) -> StageDirective:
    """Draw the augmentations for one step of the given stage.

    Later stages build on earlier ones: dense adds the color drop, sparse
    additionally draws retention fractions and modes, unaligned additionally
    draws a jitter and switches to the reduced learning rate.
    """
    drop_color = False
    sparsity = None
    jitter = None
    lr = config.lr_aligned
    if stage in (Stage.DENSE, Stage.SPARSE, Stage.UNALIGNED):
        drop_color = bool(rng.random() < config.p_c)
    if stage in (Stage.SPARSE, Stage.UNALIGNED):
        sparsity = SparsitySpec(
            p_s=float(rng.uniform(*config.p_s_range)),
            spatial_mode=("random", "segment")[int(rng.integers(2))],
            p_t=float(rng.uniform(*config.p_t_range)),
            temporal_mode=("uniform", "random")[int(rng.integers(2))],
            seed=int(rng.integers(2**62)),
        )
    if stage is Stage.UNALIGNED:
        lr = config.lr_unaligned
        if int(rng.integers(2)) == 0:
            jitter = JitterSpec(
                mode="shift",
                shift=(
                    float(rng.uniform(-config.jitter_shift_max[0], config.jitter_shift_max[0])),
                    float(rng.uniform(-config.jitter_shift_max[1], config.jitter_shift_max[1])),
                ),
                seed=int(rng.integers(2**62)),
            )
        else:
            jitter = JitterSpec(
                mode="resize_crop",
                scale=float(rng.uniform(1.0 + 1e-6, config.jitter_scale_max)),
                crop_offset="random",
                seed=int(rng.integers(2**62)),
            )
    return StageDirective(
        stage=stage, drop_color=drop_color, sparsity=sparsity, jitter=jitter, lr=lr
    )


class AdamW:
    """Decoupled-weight-decay adaptive moment estimation over named tensors."""

    def __init__(self, params: dict, lr=1e-4, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0):
        self.params = dict(params)
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def zero_grad(self) -> None:
        zero_grads(self.params.values())

    def step(self, lr: Optional[float] = None) -> None:
        lr = self.lr if lr is None else lr
        b1, b2 = self.betas
        self.t += 1
        bias1 = 1.0 - b1 ** self.t
        bias2 = 1.0 - b2 ** self.t
        for name, p in self.params.items():
            grad = p.grad if p.grad is not None else np.zeros_like(p.data)
            m = self.m[name] = b1 * self.m[name] + (1.0 - b1) * grad
            v = self.v[name] = b2 * self.v[name] + (1.0 - b2) * grad * grad
            update = (m / bias1) / (np.sqrt(v / bias2) + self.eps)
            if self.weight_decay:
                update = update + self.weight_decay * p.data
            p.data = p.data - lr * update

    def state_arrays(self) -> dict:
        out = {"__t__": np.array([self.t], dtype=np.int64)}
        for name in self.params:
            out[f"m::{name}"] = self.m[name]
            out[f"v::{name}"] = self.v[name]
        return out

    def load_state_arrays(self, arrays) -> None:
        self.t = int(arrays["__t__"][0])
        for name in self.params:
            self.m[name] = np.ascontiguousarray(arrays[f"m::{name}"])
            self.v[name] = np.ascontiguousarray(arrays[f"v::{name}"])


@dataclass
class TrainerContext:
    """Shared plumbing for training steps: codec, rasterization density."""

    codec: VideoCodec
    grid_size: int = 5
    conditioned: bool = True


def prepare_condition_tokens(trajectory_set, directive: StageDirective, ctx: TrainerContext):
    """Apply the directive's augmentations and tokenize the condition videos."""
    tset = trajectory_set
    if directive.sparsity is not None:
        tset = spatial_sparsify(tset, directive.sparsity)
        tset, _ = temporal_sparsify(tset, directive.sparsity)
    if directive.jitter is not None:
        tset = unaligned_jitter(tset, directive.jitter)
    pair = encode_set(tset, ctx.grid_size, include_color=not directive.drop_color)
    z_id = ctx.codec.encode(pair.id_video.astype(np.float64) / 255.0).tokens_flat
    z_color = None
    if pair.color_video is not None:
        z_color = ctx.codec.encode(pair.color_video.astype(np.float64) / 255.0).tokens_flat
    return z_id, z_color


def train_step(
    model: ConditionedDiT,
    batch,
    directive: StageDirective,
    optimizer: AdamW,
    ctx: TrainerContext,
    rng,
    z0_tokens: Optional[np.ndarray] = None,
) -> float:
    """One optimization step; returns the diffusion loss value.

    ``batch`` provides .video (T, H, W, 3) float in [0, 1], .trajectories,
    and .caption. The target latent can be passed precomputed (it does not
    depend on the directive).
    """
    cfg = model.config
    if z0_tokens is None:
        z0_tokens = ctx.codec.encode(batch.video).tokens_flat
    z0 = z0_tokens.astype(cfg.np_dtype)
    cond = None
    if ctx.conditioned:
        z_id, z_color = prepare_condition_tokens(batch.trajectories, directive, ctx)
        cond = (z_id, z_color)
    text_ids = hash_text(batch.caption, cfg.vocab_size, cfg.max_text_len)

    t = int(rng.integers(1, model.schedule.steps + 1))
    eps = rng.standard_normal(z0.shape).astype(cfg.np_dtype)
    x_t = add_noise(z0, eps, t, model.schedule)

    t_l = ctx.codec.latent_frames(batch.video.shape[0])
    h_l = batch.video.shape[1] // ctx.codec.f_s
    w_l = batch.video.shape[2] // ctx.codec.f_s
    positions = grid_positions(t_l, h_l, w_l)

    optimizer.zero_grad()
    pred = model.forward(x_t, t, text_ids, cond, positions)
    loss = diffusion_loss(eps, pred)
    loss.backward()
    optimizer.step(lr=directive.lr)
    return loss.item()


@dataclass
class TrainingResult:
    model: ConditionedDiT
    log: list
    checkpoints: list = field(default_factory=list)


def _checkpoint(model, optimizer, workdir, step, log) -> Path:
    path = Path(workdir) / f"checkpoint_step{step:06d}"
    model_lib.save_checkpoint(model, path, extra={"step": step})
    np.savez(path / "optimizer.npz", **optimizer.state_arrays())
    (path / "log.jsonl").write_text(
        "".join(json.dumps(rec) + "\n" for rec in log), encoding="ascii"
    )
    return path


def latest_checkpoint(workdir) -> Optional[Path]:
    workdir = Path(workdir)
    if not workdir.exists():
        return None
    candidates = sorted(workdir.glob("checkpoint_step*"))
    return candidates[-1] if candidates else None


def run_curriculum(
    model: ConditionedDiT,
    dataset,
    config: CurriculumConfig,
    ctx: TrainerContext,
    workdir=None,
    resume: bool = False,
) -> TrainingResult:
    """Run the full curriculum; logs one record per step.

    Checkpoints (weights + optimizer + log) are written at every stage
    boundary and at the end when ``workdir`` is given. With ``resume`` the
    latest checkpoint under ``workdir`` is loaded and training continues to
    the configured total; the per-step seeding makes the directive stream
    identical to an uninterrupted run.
    """
    optimizer = AdamW(model.trainable_parameters(), lr=config.lr_aligned)
    log = []
    checkpoints = []
    start = 0
    if resume and workdir is not None:
        previous = latest_checkpoint(workdir)
        if previous is not None:
            restored, extra = model_lib.load_checkpoint(previous)
            for name, tensor in model.params.items():
                tensor.data = restored.params[name].data
            with np.load(previous / "optimizer.npz") as arrays:
                optimizer.load_state_arrays(arrays)
            log = [
                json.loads(line)
                for line in (previous / "log.jsonl").read_text().splitlines()
            ]
            start = int(extra["step"])

    # Target latents and captions never depend on the directive; cache them.
    z0_cache = {}
    boundaries = set(np.cumsum(config.stage_steps).tolist())
    for step in range(start, config.total_steps):
        stage = stage_for_step(step, config)
        directive = sample_directive(stage, config, rng_for(config.seed, "directive", step))
        scene_idx = int(rng_for(config.seed, "scene", step).integers(len(dataset)))
        batch = dataset[scene_idx]
        if scene_idx not in z0_cache:
            z0_cache[scene_idx] = ctx.codec.encode(batch.video).tokens_flat
        loss = train_step(
            model,
            batch,
            directive,
            optimizer,
            ctx,
            rng_for(config.seed, "noise", step),
            z0_tokens=z0_cache[scene_idx],
        )
        if not np.isfinite(loss):
            raise RuntimeError(
                f"non-finite loss {loss} at step {step} with directive {directive}"
            )
        log.append(
            {
                "step": step,
                "stage": stage.name,
                "lr": directive.lr,
                "loss": loss,
                "scene": scene_idx,
            }
        )
        if workdir is not None and (step + 1) in boundaries:
            checkpoints.append(_checkpoint(model, optimizer, workdir, step + 1, log))
    if workdir is not None and config.total_steps not in boundaries:
        checkpoints.append(_checkpoint(model, optimizer, workdir, config.total_steps, log))
    return TrainingResult(model=model, log=log, checkpoints=checkpoints)


CONFIG_VERSION = 1


def curriculum_to_doc(config: CurriculumConfig) -> dict:
    return {
        "version": CONFIG_VERSION,
        "stage_steps": list(config.stage_steps),
        "p_c": config.p_c,
        "p_s_range": list(config.p_s_range),
        "p_t_range": list(config.p_t_range),
        "lr_aligned": config.lr_aligned,
        "lr_unaligned": config.lr_unaligned,
        "mode": config.mode,
        "seed": config.seed,
        "jitter_shift_max": list(config.jitter_shift_max),
        "jitter_scale_max": config.jitter_scale_max,
    }


def curriculum_from_doc(doc: dict) -> CurriculumConfig:
    if doc.get("version") != CONFIG_VERSION:
        raise ValueError(f"unsupported curriculum config version {doc.get('version')!r}")
    return CurriculumConfig(
        stage_steps=tuple(doc["stage_steps"]),
        p_c=float(doc.get("p_c", 0.5)),
        p_s_range=tuple(doc.get("p_s_range", (0.0, 1.0))),
        p_t_range=tuple(doc.get("p_t_range", (0.0, 1.0))),
        lr_aligned=float(doc.get("lr_aligned", 1e-4)),
        lr_unaligned=float(doc.get("lr_unaligned", 1e-5)),
        mode=doc.get("mode", "annealing"),
        seed=int(doc.get("seed", 0)),
        jitter_shift_max=tuple(doc.get("jitter_shift_max", (16.0, 12.0))),
        jitter_scale_max=float(doc.get("jitter_scale_max", 1.5)),
    )
