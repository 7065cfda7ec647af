"""Toy conditioned diffusion transformer.

A small frozen transformer denoiser plus the conditioning machinery under
test: condition-token fusion through a zero-initialized projection, sequence
concatenation with positions shared between condition and noise tokens,
low-rank adapters applied only on condition tokens, an additive attention
mask that keeps condition tokens from reading noise or text, and a per-layer
condition KV cache that is valid across all diffusion timesteps because
condition states never depend on the rest of the sequence (timestep
modulation touches noise tokens only).
"""

import hashlib
import json
import re
from dataclasses import dataclass, asdict
from pathlib import Path
from typing import Optional, Tuple

import numpy as np

from .autodiff import Tensor, as_tensor, concat, no_grad, parameter
from .seeding import rng_for

SEG_NOISE, SEG_TEXT, SEG_COND = 0, 1, 2
_LN_EPS = 1e-5


class SequenceError(ValueError):
    """Raised when token counts or shapes violate the sequence contract."""


# --------------------------------------------------------------------------
# Diffusion schedule
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class DiffusionSchedule:
    """Cumulative signal coefficients alpha_bar[t], t = 0..steps.

    alpha_bar[0] = 1 at the clean end; values are nonincreasing in t. The
    terminal value may be 0 (pure noise endpoint).
    """

    alpha_bar: np.ndarray

    def __post_init__(self):
        arr = np.ascontiguousarray(self.alpha_bar, dtype=np.float64)
        if arr.ndim != 1 or arr.shape[0] < 1:
            raise ValueError("alpha_bar must be a nonempty 1-D array")
        if arr[0] != 1.0:
            raise ValueError(f"alpha_bar[0] must be 1 at the clean end, got {arr[0]}")
        if np.any(np.diff(arr) > 0):
            raise ValueError("alpha_bar must be nonincreasing")
        if np.any(arr < 0) or np.any(arr > 1):
            raise ValueError("alpha_bar values must lie in [0, 1]")
        arr.setflags(write=False)
        object.__setattr__(self, "alpha_bar", arr)

    @property
    def steps(self) -> int:
        return self.alpha_bar.shape[0] - 1

    @classmethod
    def linear(cls, steps: int = 50, beta_start: float = 1e-4, beta_end: float = 0.02):
        """Linear per-step variance compounded into cumulative coefficients."""
        betas = np.linspace(beta_start, beta_end, steps)
        return cls(alpha_bar=np.concatenate([[1.0], np.cumprod(1.0 - betas)]))


def add_noise(x0: np.ndarray, eps: np.ndarray, t: int, schedule: DiffusionSchedule):
    """x_t = sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps."""
    if not 0 <= t <= schedule.steps:
        raise ValueError(f"timestep {t} outside [0, {schedule.steps}]")
    a = float(schedule.alpha_bar[t])
    return np.sqrt(a) * x0 + np.sqrt(1.0 - a) * eps


def diffusion_loss(eps: np.ndarray, eps_prediction) -> Tensor:
    """Mean squared error over all elements."""
    pred = eps_prediction if isinstance(eps_prediction, Tensor) else as_tensor(eps_prediction)
    target = as_tensor(np.asarray(eps, dtype=pred.dtype))
    if target.shape != pred.shape:
        raise SequenceError(f"loss shapes differ: {target.shape} vs {pred.shape}")
    diff = pred - target
    return (diff * diff).mean()


# --------------------------------------------------------------------------
# Token sequence and mask
# --------------------------------------------------------------------------

@dataclass
class TokenSequence:
    """Concatenated [noise; text; cond] tokens with segment/position labels."""

    tokens: Tensor
    segments: np.ndarray        # (n,) int8 of SEG_* labels
    video_positions: np.ndarray  # (n, 3) int; (-1,-1,-1) on text rows
    text_positions: np.ndarray   # (n,) int; -1 on video rows
    counts: Tuple[int, int, int]

    @property
    def total(self) -> int:
        return int(self.tokens.shape[0])


def build_sequence(noise_tokens, text_tokens, cond_tokens, noise_positions, text_positions=None) -> TokenSequence:
    """Concatenate noise, text, and condition tokens in that order.

    Condition tokens receive the same positional tuples as the noise tokens,
    so their count must equal the noise count (or be zero).
    """
    parts = [as_tensor(noise_tokens)]
    n_n = int(parts[0].shape[0])
    n_t = 0
    if text_tokens is not None:
        text = as_tensor(text_tokens)
        n_t = int(text.shape[0])
        if n_t:
            parts.append(text)
    n_c = 0
    if cond_tokens is not None:
        cond = as_tensor(cond_tokens)
        n_c = int(cond.shape[0])
        if n_c:
            if n_c != n_n:
                raise SequenceError(
                    f"condition token count {n_c} must equal noise count {n_n} (or 0)"
                )
            parts.append(cond)
    tokens = concat(parts, axis=0) if len(parts) > 1 else parts[0]

    noise_positions = np.asarray(noise_positions, dtype=np.int64)
    if noise_positions.shape != (n_n, 3):
        raise SequenceError(
            f"noise positions must be ({n_n}, 3), got {noise_positions.shape}"
        )
    if text_positions is None:
        text_positions = np.arange(n_t, dtype=np.int64)
    total = n_n + n_t + n_c
    video_pos = np.full((total, 3), -1, dtype=np.int64)
    video_pos[:n_n] = noise_positions
    if n_c:
        video_pos[n_n + n_t:] = noise_positions
    text_pos = np.full(total, -1, dtype=np.int64)
    text_pos[n_n:n_n + n_t] = text_positions
    segments = np.concatenate(
        [
            np.full(n_n, SEG_NOISE, dtype=np.int8),
            np.full(n_t, SEG_TEXT, dtype=np.int8),
            np.full(n_c, SEG_COND, dtype=np.int8),
        ]
    )
    return TokenSequence(
        tokens=tokens,
        segments=segments,
        video_positions=video_pos,
        text_positions=text_pos,
        counts=(n_n, n_t, n_c),
    )


def causal_mask(counts, dtype=np.float64) -> np.ndarray:
    """Additive mask: -inf where a condition row attends a noise/text column.

    Noise and text tokens may attend everywhere (including conditions);
    condition tokens attend only among themselves.
    """
    n_n, n_t, n_c = counts
    total = n_n + n_t + n_c
    mask = np.zeros((total, total), dtype=dtype)
    if n_c and (n_n + n_t):
        mask[n_n + n_t:, : n_n + n_t] = -np.inf
    return mask


def masked_attention(q, k, v, mask, heads: int):
    """Multi-head scaled dot-product attention with an additive mask.

    q: (n_q, d), k/v: (n_kv, d); mask: (n_q, n_kv) additive or None. -inf
    entries get exactly zero attention weight.
    """
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    n_q, d = q.shape
    n_kv = k.shape[0]
    if d % heads != 0:
        raise SequenceError(f"model dim {d} not divisible by {heads} heads")
    dh = d // heads
    qh = q.reshape(n_q, heads, dh).transpose(1, 0, 2)
    kh = k.reshape(n_kv, heads, dh).transpose(1, 2, 0)
    vh = v.reshape(n_kv, heads, dh).transpose(1, 0, 2)
    scores = (qh @ kh) * (1.0 / np.sqrt(dh))
    if mask is not None:
        scores = scores + as_tensor(np.asarray(mask, dtype=q.dtype))
    weights = scores.softmax(axis=-1)
    out = weights @ vh
    return out.transpose(1, 0, 2).reshape(n_q, d)


def project_qkv(tokens, weights, adapters, cond_start: int):
    """Base Q/K/V projections plus low-rank deltas on condition rows.

    ``weights`` maps "q"/"k"/"v" to (d, d) tensors; ``adapters`` maps the
    same keys to (A, B) pairs. Rows at index >= cond_start are condition
    tokens; only they receive (tokens @ A) @ B.
    """
    tokens = as_tensor(tokens)
    n = int(tokens.shape[0])
    outs = []
    for name in ("q", "k", "v"):
        base = tokens @ weights[name]
        if adapters is not None and name in adapters and cond_start < n:
            a, b = adapters[name]
            delta = (tokens[cond_start:] @ a) @ b
            base = concat([base[:cond_start], base[cond_start:] + delta], axis=0)
        outs.append(base)
    return tuple(outs)


# --------------------------------------------------------------------------
# Positional and timestep features
# --------------------------------------------------------------------------

def _sincos(values: np.ndarray, dim: int, max_period: float = 200.0) -> np.ndarray:
    half = dim // 2
    freqs = np.exp(-np.log(max_period) * np.arange(half) / max(half, 1))
    angles = np.asarray(values, dtype=np.float64)[:, None] * freqs[None, :]
    return np.concatenate([np.sin(angles), np.cos(angles)], axis=1)


def grid_positions(t_l: int, h_l: int, w_l: int) -> np.ndarray:
    """(frame, row, col) tuples in frame-major order, matching tokens_flat."""
    t, r, c = np.meshgrid(
        np.arange(t_l), np.arange(h_l), np.arange(w_l), indexing="ij"
    )
    return np.stack([t.ravel(), r.ravel(), c.ravel()], axis=1).astype(np.int64)


def video_positional_encoding(positions: np.ndarray, d_model: int) -> np.ndarray:
    """Factorized sinusoidal encoding over (frame, row, col)."""
    d_axis = 2 * (d_model // 6)
    d_frame = d_model - 2 * d_axis
    positions = np.asarray(positions)
    return np.concatenate(
        [
            _sincos(positions[:, 0], d_frame),
            _sincos(positions[:, 1], d_axis),
            _sincos(positions[:, 2], d_axis),
        ],
        axis=1,
    )


def text_positional_encoding(positions: np.ndarray, d_model: int) -> np.ndarray:
    return _sincos(np.asarray(positions), d_model)


def timestep_features(t: int, d_time: int) -> np.ndarray:
    return _sincos(np.array([t], dtype=np.float64), d_time)[0]


def hash_text(text: str, vocab_size: int, max_len: int) -> np.ndarray:
    """Stable hashing tokenizer: lowercase words to table indices."""
    words = re.findall(r"[a-z0-9]+", text.lower())[:max_len]
    ids = [
        int.from_bytes(hashlib.sha256(w.encode("utf-8")).digest()[:8], "little")
        % vocab_size
        for w in words
    ]
    return np.asarray(ids, dtype=np.int64)


# --------------------------------------------------------------------------
# Model
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ModelConfig:
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 4
    d_latent: int = 16
    adapter_rank: int = 8
    d_ff: int = 0  # 0 -> 4 * d_model
    d_time: int = 32
    vocab_size: int = 4096
    max_text_len: int = 16
    trainable_heads: Tuple[str, ...] = ("output", "modulation")
    dtype: str = "float64"
    seed: int = 0
    schedule_steps: int = 50
    beta_start: float = 1e-4
    beta_end: float = 0.02

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise ValueError(
                f"d_model {self.d_model} must be divisible by n_heads {self.n_heads}"
            )
        if self.adapter_rank > self.d_model:
            raise ValueError("adapter rank cannot exceed d_model")
        if self.d_time % 2 != 0:
            raise ValueError("d_time must be even")
        unknown = set(self.trainable_heads) - {"output", "modulation"}
        if unknown:
            raise ValueError(f"unknown trainable heads {sorted(unknown)}")

    @property
    def ff_dim(self) -> int:
        return self.d_ff if self.d_ff else 4 * self.d_model

    @property
    def np_dtype(self):
        return np.float64 if self.dtype == "float64" else np.float32


class ConditionedDiT:
    """Frozen base denoiser with a trainable condition pathway.

    Trainable parameters are the fusion projection, per-layer low-rank
    adapters on Q/K/V (condition rows only), and the declared heads (output
    projection and timestep-modulation heads by default). Everything else is
    frozen at initialization.
    """

    def __init__(self, config: ModelConfig):
        self.config = config
        self.schedule = DiffusionSchedule.linear(
            config.schedule_steps, config.beta_start, config.beta_end
        )
        self.params = {}
        self._init_params()

    # -- parameters --------------------------------------------------------
    def _add(self, name: str, array: np.ndarray, trainable: bool) -> None:
        tensor = parameter(array, dtype=self.config.np_dtype)
        tensor.requires_grad = trainable
        self.params[name] = tensor

    def _init_params(self) -> None:
        cfg = self.config
        rng = rng_for(cfg.seed, "model-init")
        d, dl, dt, dff = cfg.d_model, cfg.d_latent, cfg.d_time, cfg.ff_dim
        mod_trainable = "modulation" in cfg.trainable_heads
        out_trainable = "output" in cfg.trainable_heads

        self._add("embed.video.W", rng.normal(0, 1 / np.sqrt(dl), (dl, d)), False)
        self._add(
            "embed.text.table",
            rng.normal(0, 1 / np.sqrt(dl), (cfg.vocab_size, d)),
            False,
        )
        for i in range(cfg.n_layers):
            p = f"layer{i}"
            self._add(f"{p}.ln1.g", np.ones(d), False)
            self._add(f"{p}.ln1.b", np.zeros(d), False)
            for proj in ("q", "k", "v", "o"):
                self._add(
                    f"{p}.attn.W{proj}", rng.normal(0, 1 / np.sqrt(d), (d, d)), False
                )
            self._add(f"{p}.ln2.g", np.ones(d), False)
            self._add(f"{p}.ln2.b", np.zeros(d), False)
            self._add(f"{p}.ffn.W1", rng.normal(0, 1 / np.sqrt(d), (d, dff)), False)
            self._add(f"{p}.ffn.b1", np.zeros(dff), False)
            self._add(f"{p}.ffn.W2", rng.normal(0, 1 / np.sqrt(dff), (dff, d)), False)
            self._add(f"{p}.ffn.b2", np.zeros(d), False)
            for proj in ("q", "k", "v"):
                self._add(
                    f"{p}.lora.{proj}.A",
                    rng.normal(0, 1 / np.sqrt(d), (d, cfg.adapter_rank)),
                    True,
                )
                self._add(f"{p}.lora.{proj}.B", np.zeros((cfg.adapter_rank, d)), True)
            for sub in ("attn", "ffn"):
                init = (
                    np.zeros((dt, 2 * d))
                    if mod_trainable
                    else rng.normal(0, 0.02, (dt, 2 * d))
                )
                self._add(f"{p}.mod.{sub}.W", init, mod_trainable)
        self._add("final.ln.g", np.ones(d), False)
        self._add("final.ln.b", np.zeros(d), False)
        init = np.zeros((dt, 2 * d)) if mod_trainable else rng.normal(0, 0.02, (dt, 2 * d))
        self._add("head.mod_final.W", init, mod_trainable)
        self._add("head.out.W", np.zeros((d, dl)), out_trainable)
        self._add("head.out.b", np.zeros(dl), out_trainable)
        self._add("fusion.W", np.zeros((dl, dl)), True)

    def trainable_parameters(self) -> dict:
        return {k: v for k, v in self.params.items() if v.requires_grad}

    def base_parameters(self) -> dict:
        return {k: v for k, v in self.params.items() if not v.requires_grad}

    # -- building blocks ----------------------------------------------------
    def _const(self, array) -> Tensor:
        return as_tensor(np.asarray(array, dtype=self.config.np_dtype))

    def _layernorm(self, x: Tensor, gamma: Tensor, beta: Tensor) -> Tensor:
        mu = x.mean(axis=-1, keepdims=True)
        centered = x - mu
        var = (centered * centered).mean(axis=-1, keepdims=True)
        return centered * (var + _LN_EPS).pow(-0.5) * gamma + beta

    def _modulate(self, x: Tensor, mod_w: Tensor, t_feat: Tensor, n_rows: int) -> Tensor:
        """Scale/shift the first ``n_rows`` rows (the noise tokens) by t."""
        if n_rows == 0:
            return x
        d = self.config.d_model
        mod = t_feat @ mod_w  # t_feat is (1, d_time) -> (1, 2d)
        scale, shift = mod[:, :d], mod[:, d:]
        head = x[:n_rows] * (1.0 + scale) + shift
        if n_rows == int(x.shape[0]):
            return head
        return concat([head, x[n_rows:]], axis=0)

    def fuse_conditions(self, z_id, z_color=None) -> Tensor:
        """Z_c = Z_ID + Z_Color W with the zero-initialized fusion projection."""
        z_id = as_tensor(np.asarray(z_id, dtype=self.config.np_dtype)) if not isinstance(z_id, Tensor) else z_id
        if z_color is None:
            return z_id
        z_color = as_tensor(np.asarray(z_color, dtype=self.config.np_dtype)) if not isinstance(z_color, Tensor) else z_color
        if z_color.shape != z_id.shape:
            raise SequenceError(
                f"condition grids differ in shape: {z_id.shape} vs {z_color.shape}"
            )
        return z_id + z_color @ self.params["fusion.W"]

    def embed_video(self, latent_tokens, positions) -> Tensor:
        tokens = latent_tokens if isinstance(latent_tokens, Tensor) else self._const(latent_tokens)
        pos = video_positional_encoding(positions, self.config.d_model)
        return tokens @ self.params["embed.video.W"] + self._const(pos)

    def embed_text(self, text_ids) -> Tensor:
        text_ids = np.asarray(text_ids, dtype=np.int64)
        if text_ids.size == 0:
            return self._const(np.zeros((0, self.config.d_model)))
        # Table is frozen, so fancy-indexing without duplicate-safe backward
        # is fine here.
        rows = self.params["embed.text.table"][text_ids]
        pos = text_positional_encoding(np.arange(text_ids.size), self.config.d_model)
        return rows + self._const(pos)

    def _layer_weights(self, i: int) -> dict:
        return {name: self.params[f"layer{i}.attn.W{name}"] for name in ("q", "k", "v")}

    def _layer_adapters(self, i: int) -> dict:
        return {
            name: (
                self.params[f"layer{i}.lora.{name}.A"],
                self.params[f"layer{i}.lora.{name}.B"],
            )
            for name in ("q", "k", "v")
        }

    # -- forward ------------------------------------------------------------
    def _assemble(self, x_tokens, text_ids, cond, video_positions):
        if video_positions is None:
            raise SequenceError("video_positions (n_n, 3) required")
        noise = self.embed_video(x_tokens, video_positions)
        text = self.embed_text(text_ids)
        cond_embedded = None
        if cond is not None:
            z_id, z_color = cond if isinstance(cond, tuple) else (cond, None)
            fused = self.fuse_conditions(
                self._const(z_id), None if z_color is None else self._const(z_color)
            )
            cond_embedded = self.embed_video(fused, video_positions)
        return build_sequence(noise, text, cond_embedded, video_positions)

    def forward(
        self,
        x_tokens,
        t: int,
        text_ids,
        cond=None,
        video_positions=None,
        return_hidden: bool = False,
    ):
        """Predict noise from noisy latent tokens, text, and conditions.

        ``cond`` is None or a tuple (z_id_tokens, z_color_tokens_or_None) of
        flattened latent tokens matching the noise token count. Returns the
        (n_n, d_latent) prediction tensor, plus per-layer hidden states when
        ``return_hidden`` is set.
        """
        cfg = self.config
        seq = self._assemble(x_tokens, text_ids, cond, video_positions)
        n_n, n_t, n_c = seq.counts
        mask = causal_mask(seq.counts, dtype=cfg.np_dtype) if n_c else None
        t_feat = self._const(timestep_features(t, cfg.d_time).reshape(1, -1))

        h = seq.tokens
        hidden = []
        for i in range(cfg.n_layers):
            p = f"layer{i}"
            u = self._layernorm(h, self.params[f"{p}.ln1.g"], self.params[f"{p}.ln1.b"])
            u = self._modulate(u, self.params[f"{p}.mod.attn.W"], t_feat, n_n)
            q, k, v = project_qkv(
                u,
                self._layer_weights(i),
                self._layer_adapters(i) if n_c else None,
                n_n + n_t,
            )
            attn = masked_attention(q, k, v, mask, cfg.n_heads)
            h = h + attn @ self.params[f"{p}.attn.Wo"]
            w = self._layernorm(h, self.params[f"{p}.ln2.g"], self.params[f"{p}.ln2.b"])
            w = self._modulate(w, self.params[f"{p}.mod.ffn.W"], t_feat, n_n)
            ff = (w @ self.params[f"{p}.ffn.W1"] + self.params[f"{p}.ffn.b1"]).gelu()
            h = h + ff @ self.params[f"{p}.ffn.W2"] + self.params[f"{p}.ffn.b2"]
            if return_hidden:
                hidden.append(h.data.copy())
        out = self._layernorm(h, self.params["final.ln.g"], self.params["final.ln.b"])
        noise_rows = out[:n_n]
        noise_rows = self._modulate(
            noise_rows, self.params["head.mod_final.W"], t_feat, n_n
        )
        eps = noise_rows @ self.params["head.out.W"] + self.params["head.out.b"]
        if return_hidden:
            return eps, hidden
        return eps

    # -- condition KV cache ---------------------------------------------------
    def precompute_kv_cache(self, cond, video_positions):
        """Run the condition-only sub-network once; cache per-layer (K_c, V_c).

        Condition tokens attend only among themselves and receive no timestep
        modulation, so these keys/values equal the ones materialized inside a
        full forward at any timestep.
        """
        cfg = self.config
        if cond is None:
            return []
        z_id, z_color = cond if isinstance(cond, tuple) else (cond, None)
        with no_grad():
            fused = self.fuse_conditions(
                self._const(z_id), None if z_color is None else self._const(z_color)
            )
            h = self.embed_video(fused, video_positions)
            cache = []
            for i in range(cfg.n_layers):
                p = f"layer{i}"
                u = self._layernorm(
                    h, self.params[f"{p}.ln1.g"], self.params[f"{p}.ln1.b"]
                )
                q, k, v = project_qkv(
                    u, self._layer_weights(i), self._layer_adapters(i), 0
                )
                cache.append((k.data.copy(), v.data.copy()))
                attn = masked_attention(q, k, v, None, cfg.n_heads)
                h = h + attn @ self.params[f"{p}.attn.Wo"]
                w = self._layernorm(
                    h, self.params[f"{p}.ln2.g"], self.params[f"{p}.ln2.b"]
                )
                ff = (w @ self.params[f"{p}.ffn.W1"] + self.params[f"{p}.ffn.b1"]).gelu()
                h = h + ff @ self.params[f"{p}.ffn.W2"] + self.params[f"{p}.ffn.b2"]
        return cache

    def forward_with_cache(self, x_tokens, t: int, text_ids, cache, video_positions):
        """Forward pass over noise+text rows only, reusing cached (K_c, V_c)."""
        cfg = self.config
        if not cache:
            return self.forward(x_tokens, t, text_ids, None, video_positions)
        noise = self.embed_video(x_tokens, video_positions)
        text = self.embed_text(text_ids)
        n_n = int(noise.shape[0])
        n_t = int(text.shape[0])
        h = concat([noise, text], axis=0) if n_t else noise
        t_feat = self._const(timestep_features(t, cfg.d_time).reshape(1, -1))
        for i in range(cfg.n_layers):
            p = f"layer{i}"
            u = self._layernorm(h, self.params[f"{p}.ln1.g"], self.params[f"{p}.ln1.b"])
            u = self._modulate(u, self.params[f"{p}.mod.attn.W"], t_feat, n_n)
            q, k, v = project_qkv(u, self._layer_weights(i), None, n_n + n_t)
            k_c, v_c = cache[i]
            k_full = concat([k, self._const(k_c)], axis=0)
            v_full = concat([v, self._const(v_c)], axis=0)
            attn = masked_attention(q, k_full, v_full, None, cfg.n_heads)
            h = h + attn @ self.params[f"{p}.attn.Wo"]
            w = self._layernorm(h, self.params[f"{p}.ln2.g"], self.params[f"{p}.ln2.b"])
            w = self._modulate(w, self.params[f"{p}.mod.ffn.W"], t_feat, n_n)
            ff = (w @ self.params[f"{p}.ffn.W1"] + self.params[f"{p}.ffn.b1"]).gelu()
            h = h + ff @ self.params[f"{p}.ffn.W2"] + self.params[f"{p}.ffn.b2"]
        out = self._layernorm(h, self.params["final.ln.g"], self.params["final.ln.b"])
        noise_rows = out[:n_n]
        noise_rows = self._modulate(
            noise_rows, self.params["head.mod_final.W"], t_feat, n_n
        )
        return noise_rows @ self.params["head.out.W"] + self.params["head.out.b"]

    def predict_noise(self, x_tokens, t, text_ids, cond=None, cache=None, video_positions=None):
        """Inference-mode noise prediction as a plain numpy array."""
        with no_grad():
            if cache is not None:
                return self.forward_with_cache(
                    x_tokens, t, text_ids, cache, video_positions
                ).data
            return self.forward(x_tokens, t, text_ids, cond, video_positions).data


# --------------------------------------------------------------------------
# Sampling
# --------------------------------------------------------------------------

def sampling_timesteps(schedule_steps: int, steps: int) -> np.ndarray:
    """Descending timestep subset from the terminal step down to 1."""
    if steps < 1:
        raise ValueError("need at least one sampling step")
    ts = np.unique(np.round(np.linspace(schedule_steps, 1, steps)).astype(int))
    return ts[::-1]


def sample(
    model: ConditionedDiT,
    first_frame_tokens: np.ndarray,
    text_ids,
    cond,
    steps: int,
    seed: int,
    latent_grid_shape,
    use_cache: bool = True,
) -> np.ndarray:
    """Deterministic DDIM-style ancestral sampling of a latent video.

    Frame-0 token slots are pinned to the input image's encoding along its
    own forward-noising path each step (and exactly at the clean end), so
    generation is anchored to the given first frame. Returns flattened
    (n_n, d_latent) clean tokens.
    """
    cfg = model.config
    t_l, h_l, w_l = latent_grid_shape
    n_frame0 = h_l * w_l
    n_n = t_l * n_frame0
    first = np.asarray(first_frame_tokens, dtype=cfg.np_dtype).reshape(n_frame0, cfg.d_latent)
    positions = grid_positions(t_l, h_l, w_l)
    rng = rng_for(seed, "sampler")
    x = rng.standard_normal((n_n, cfg.d_latent)).astype(cfg.np_dtype)
    anchor_eps = x[:n_frame0].copy()

    cache = model.precompute_kv_cache(cond, positions) if (use_cache and cond is not None) else None
    alpha = model.schedule.alpha_bar
    ts = sampling_timesteps(model.schedule.steps, steps)
    x0_hat = x
    for idx, t in enumerate(ts):
        a_t = float(alpha[t])
        x[:n_frame0] = np.sqrt(a_t) * first + np.sqrt(1.0 - a_t) * anchor_eps
        if cache is not None:
            eps_hat = model.predict_noise(
                x, int(t), text_ids, cache=cache, video_positions=positions
            )
        else:
            eps_hat = model.predict_noise(
                x, int(t), text_ids, cond=cond, video_positions=positions
            )
        x0_hat = (x - np.sqrt(1.0 - a_t) * eps_hat) / np.sqrt(a_t)
        t_next = int(ts[idx + 1]) if idx + 1 < len(ts) else 0
        a_next = float(alpha[t_next])
        x = np.sqrt(a_next) * x0_hat + np.sqrt(1.0 - a_next) * eps_hat
    x = x0_hat
    x[:n_frame0] = first
    return x


# --------------------------------------------------------------------------
# Checkpoints
# --------------------------------------------------------------------------

CHECKPOINT_VERSION = 1


def save_checkpoint(model: ConditionedDiT, directory, extra: Optional[dict] = None) -> None:
    """Exact round-trip checkpoint: manifest.json + weights.npz."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = {
        "version": CHECKPOINT_VERSION,
        "config": asdict(model.config),
        "parameters": {
            name: {"shape": list(p.shape), "trainable": p.requires_grad}
            for name, p in model.params.items()
        },
        "extra": extra or {},
    }
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    np.savez(directory / "weights.npz", **{k: v.data for k, v in model.params.items()})


def load_checkpoint(directory) -> Tuple[ConditionedDiT, dict]:
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    if manifest.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {manifest.get('version')!r}")
    config_doc = dict(manifest["config"])
    config_doc["trainable_heads"] = tuple(config_doc["trainable_heads"])
    config = ModelConfig(**config_doc)
    model = ConditionedDiT(config)
    with np.load(directory / "weights.npz") as archive:
        for name, tensor in model.params.items():
            tensor.data = np.ascontiguousarray(archive[name])
    return model, manifest.get("extra", {})
